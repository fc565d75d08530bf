//! Wasserstein distances between empirical measures.

use crate::error::{Error, Result};
use crate::metrics::assignment::solve_assignment;
use crate::metrics::AsMeasure;
use crate::real::{from_usize, lit, to_f64, Real};
use crate::state::Domain;

/// Default size cap of the exact assignment solver.
pub const DEFAULT_ASSIGNMENT_CAP: usize = 4096;

/// Ground distance between atoms.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Ground {
    /// Distance of the single-particle domain.
    Domain(Domain),
    /// Normalised product distance `(1/k) Σ_l d(x_l, y_l)` on atoms made of
    /// `k` consecutive blocks of the single-particle dimension.
    Blocks { k: usize, domain: Domain },
}

impl Ground {
    #[inline]
    pub fn distance<T: Real>(&self, a: &[T], b: &[T]) -> T {
        match *self {
            Ground::Domain(dom) => dom.distance(a, b),
            Ground::Blocks { k, domain } => {
                let d = a.len() / k;
                let mut s = T::zero();
                for l in 0..k {
                    s += domain.distance(&a[l * d..(l + 1) * d], &b[l * d..(l + 1) * d]);
                }
                s / from_usize(k)
            }
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct WpOptions {
    pub cap: usize,
    pub ground: Ground,
}

impl Default for WpOptions {
    fn default() -> Self {
        WpOptions {
            cap: DEFAULT_ASSIGNMENT_CAP,
            ground: Ground::Domain(Domain::Euclidean),
        }
    }
}

fn sorted_scalars<T: Real>(atoms: &[T]) -> Vec<T> {
    let mut v = atoms.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).expect("finite atoms"));
    v
}

/// Exact W₁ between one-dimensional empirical measures.
///
/// Integrates `|F_μ⁻¹ − F_ν⁻¹|` over the merged quantile grid; for equal sizes
/// this is the mean absolute difference of order statistics.
pub fn w1_exact_1d<T: Real>(mu: &impl AsMeasure<T>, nu: &impl AsMeasure<T>) -> Result<T> {
    let (a, b) = (mu.as_view(), nu.as_view());
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptyMeasure);
    }
    if a.dim != 1 || b.dim != 1 {
        return Err(Error::InvalidInput("w1_exact_1d needs one-dimensional measures".into()));
    }
    let x = sorted_scalars(a.atoms);
    let y = sorted_scalars(b.atoms);
    let (n, m) = (x.len(), y.len());
    if n == m {
        let s: T = x.iter().zip(&y).map(|(&p, &q)| (p - q).abs()).sum();
        return Ok(s / from_usize(n));
    }
    // Quantile levels measured in units of 1/(n m).
    let (mut i, mut j, mut pos) = (0usize, 0usize, 0usize);
    let mut total = T::zero();
    while i < n && j < m {
        let next_a = (i + 1) * m;
        let next_b = (j + 1) * n;
        let next = next_a.min(next_b);
        total += from_usize::<T>(next - pos) * (x[i] - y[j]).abs();
        pos = next;
        if next_a == next {
            i += 1;
        }
        if next_b == next {
            j += 1;
        }
    }
    Ok(total / (from_usize::<T>(n) * from_usize::<T>(m)))
}

/// Exact W₁ on the circle [0, 2π) with the arc-length distance.
///
/// With D = F_μ − F_ν piecewise constant between merged atoms, the distance is
/// `min_α ∫ |D − α|`, attained at a weighted median of D.
pub fn w1_exact_circle<T: Real>(mu: &impl AsMeasure<T>, nu: &impl AsMeasure<T>) -> Result<T> {
    let (a, b) = (mu.as_view(), nu.as_view());
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptyMeasure);
    }
    if a.dim != 1 || b.dim != 1 {
        return Err(Error::InvalidInput("w1_exact_circle needs one-dimensional measures".into()));
    }
    let (wa, wb) = (1.0 / a.len() as f64, 1.0 / b.len() as f64);
    let mut pts: Vec<(f64, f64)> = a
        .atoms
        .iter()
        .map(|&x| (to_f64(crate::state::wrap_angle(x)), wa))
        .chain(b.atoms.iter().map(|&y| (to_f64(crate::state::wrap_angle(y)), -wb)))
        .collect();
    pts.sort_by(|p, q| p.0.total_cmp(&q.0));
    let tau = std::f64::consts::TAU;
    // (length, value of D) for each arc between consecutive points; the arc
    // through 2π ≡ 0 carries D = 0.
    let mut arcs = Vec::with_capacity(pts.len());
    let mut level = 0.0;
    for k in 0..pts.len() {
        level += pts[k].1;
        let end = if k + 1 < pts.len() { pts[k + 1].0 } else { tau + pts[0].0 };
        arcs.push((end - pts[k].0, level));
    }
    let mut by_value = arcs.clone();
    by_value.sort_by(|p, q| p.1.total_cmp(&q.1));
    let half = 0.5 * tau;
    let mut acc = 0.0;
    let mut alpha = by_value.last().map(|p| p.1).unwrap_or(0.0);
    for &(len, v) in &by_value {
        acc += len;
        if acc >= half {
            alpha = v;
            break;
        }
    }
    let total: f64 = arcs.iter().map(|&(len, v)| len * (v - alpha).abs()).sum();
    Ok(lit(total.max(0.0)))
}

/// Exact W₁ between empirical measures on `domain`.
///
/// One-dimensional Euclidean and circle cases are solved by sorting; anything
/// else goes through the assignment solver with the cap raised to the atom
/// count.
pub fn w1_empirical<T: Real>(mu: &impl AsMeasure<T>, nu: &impl AsMeasure<T>, domain: Domain) -> Result<T> {
    let (a, b) = (mu.as_view(), nu.as_view());
    match (a.dim, domain) {
        (1, Domain::Euclidean) => w1_exact_1d(&a, &b),
        (1, Domain::Torus) => w1_exact_circle(&a, &b),
        _ => {
            let opts = WpOptions {
                cap: a.len().max(DEFAULT_ASSIGNMENT_CAP),
                ground: Ground::Domain(domain),
            };
            wp_assignment_with(&a, &b, 1, &opts)
        }
    }
}

/// Exact W_p (p ∈ {1, 2}) between equal-size empirical measures by optimal
/// assignment under the Euclidean (or wrapped torus) ground metric.
pub fn wp_assignment<T: Real>(mu: &impl AsMeasure<T>, nu: &impl AsMeasure<T>, p: u32) -> Result<T> {
    wp_assignment_with(mu, nu, p, &WpOptions::default())
}

pub fn wp_assignment_with<T: Real>(
    mu: &impl AsMeasure<T>,
    nu: &impl AsMeasure<T>,
    p: u32,
    opts: &WpOptions,
) -> Result<T> {
    let (a, b) = (mu.as_view(), nu.as_view());
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptyMeasure);
    }
    if p != 1 && p != 2 {
        return Err(Error::InvalidInput(format!("p = {p} is not supported; use 1 or 2")));
    }
    if a.dim != b.dim {
        return Err(Error::SizeMismatch(format!("dimensions {} and {}", a.dim, b.dim)));
    }
    if let Ground::Blocks { k, .. } = opts.ground {
        if k == 0 || a.dim % k != 0 {
            return Err(Error::InvalidInput(format!(
                "atom dimension {} is not a multiple of {k} blocks",
                a.dim
            )));
        }
    }
    let n = a.len();
    if n != b.len() {
        return Err(Error::SizeMismatch(format!(
            "assignment needs equal atom counts, got {n} and {}",
            b.len()
        )));
    }
    if n > opts.cap {
        return Err(Error::CapExceeded {
            what: "assignment",
            size: n,
            cap: opts.cap,
        });
    }
    let ground = opts.ground;
    let (total, _) = solve_assignment(n, |i, j| {
        let d = ground.distance(a.atom(i), b.atom(j));
        if p == 1 {
            d
        } else {
            d * d
        }
    });
    let mean = (total / from_usize(n)).max(T::zero());
    Ok(if p == 1 { mean } else { mean.sqrt() })
}
