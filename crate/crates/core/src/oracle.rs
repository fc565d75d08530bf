//! Exact computations on finite state spaces.
//!
//! A configuration `(x¹, …, x^N) ∈ E^N` with `E = {0, …, m−1}` is indexed by
//! the mixed-radix little-endian code `Σ_i x^i m^i`, so slot 0 is the fastest
//! varying digit. Distributions over `E^N` are plain `Vec<f64>` in that order.

use std::collections::BTreeMap;
use std::io::Write;
use std::sync::Arc;

use crate::error::{invalid, Error, Result};
use crate::metrics::{relative_entropy_discrete, transport_cost};
use crate::model::{CollisionModel, Conservation, JumpModel};
use crate::real::{lit, to_f64, Real};
use crate::rng::StreamRng;
use crate::state::{fmt_f64, MeasureView};

/// Default cap on `m^N`.
pub const DEFAULT_STATE_CAP: usize = 2_000_000;

/// λ(e, h): jump rate of a particle in state `e` when the histogram is `h`.
pub type RateFn = Arc<dyn Fn(usize, &[f64]) -> f64 + Send + Sync>;
/// Writes P_h(e, ·) into the output row.
pub type KernelFn = Arc<dyn Fn(usize, &[f64], &mut [f64]) + Send + Sync>;
/// Collision rate λ(e₁, e₂).
pub type PairRateFn = Arc<dyn Fn(usize, usize) -> f64 + Send + Sync>;
/// Post-collision law Γ⁽²⁾(e₁, e₂; ·) as weighted pairs.
pub type PostFn = Arc<dyn Fn(usize, usize) -> Vec<(usize, usize, f64)> + Send + Sync>;

#[derive(Clone)]
pub enum Mechanism {
    MeanField { rate: RateFn, kernel: KernelFn },
    Collision { rate: PairRateFn, post: PostFn },
}

/// N exchangeable particles on `{0, …, m−1}`.
#[derive(Clone)]
pub struct FiniteModel {
    m: usize,
    n: usize,
    cap: usize,
    mechanism: Mechanism,
}

impl std::fmt::Debug for FiniteModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let kind = match self.mechanism {
            Mechanism::MeanField { .. } => "mean-field",
            Mechanism::Collision { .. } => "collision",
        };
        write!(f, "FiniteModel({kind}, m={}, N={})", self.m, self.n)
    }
}

impl FiniteModel {
    pub fn new(m: usize, n: usize, mechanism: Mechanism) -> Result<Self> {
        if m == 0 || n == 0 {
            return invalid("finite model needs m ≥ 1 and N ≥ 1");
        }
        Ok(FiniteModel {
            m,
            n,
            cap: DEFAULT_STATE_CAP,
            mechanism,
        })
    }

    pub fn mean_field(m: usize, n: usize, rate: RateFn, kernel: KernelFn) -> Result<Self> {
        Self::new(m, n, Mechanism::MeanField { rate, kernel })
    }

    pub fn collision(m: usize, n: usize, rate: PairRateFn, post: PostFn) -> Result<Self> {
        Self::new(m, n, Mechanism::Collision { rate, post })
    }

    /// Choose-the-leader: λ ≡ 1 and P_h(e, ·) = Σ_z h(z) K(z, ·), with `kernel`
    /// the row-stochastic m × m matrix K in row-major order.
    pub fn choose_leader(kernel: Vec<f64>, n: usize) -> Result<Self> {
        let m = (kernel.len() as f64).sqrt().round() as usize;
        if m * m != kernel.len() || m == 0 {
            return invalid("choose-the-leader kernel must be a square matrix");
        }
        check_stochastic(&kernel, m)?;
        let k = Arc::new(kernel);
        Self::mean_field(
            m,
            n,
            Arc::new(|_, _| 1.0),
            Arc::new(move |_, h, out| {
                out.iter_mut().for_each(|o| *o = 0.0);
                for (z, &hz) in h.iter().enumerate() {
                    if hz > 0.0 {
                        for (o, &kz) in out.iter_mut().zip(&k[z * m..(z + 1) * m]) {
                            *o += hz * kz;
                        }
                    }
                }
            }),
        )
    }

    /// Kac-like exchange on `{0, …, m−1}`: λ ≡ 1 and the pair sum `e₁ + e₂` is
    /// redistributed uniformly over admissible pairs.
    pub fn kac_like(m: usize, n: usize) -> Result<Self> {
        Self::collision(
            m,
            n,
            Arc::new(|_, _| 1.0),
            Arc::new(move |a, b| {
                let s = a + b;
                let lo = s.saturating_sub(m - 1);
                let hi = s.min(m - 1);
                let w = 1.0 / (hi - lo + 1) as f64;
                (lo..=hi).map(|c| (c, s - c, w)).collect()
            }),
        )
    }

    pub fn with_cap(mut self, cap: usize) -> Self {
        self.cap = cap;
        self
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn mechanism(&self) -> &Mechanism {
        &self.mechanism
    }

    /// Same mechanism with a different particle count.
    pub fn with_particles(&self, n: usize) -> Result<Self> {
        let mut m = self.clone();
        if n == 0 {
            return invalid("N must be positive");
        }
        m.n = n;
        Ok(m)
    }

    /// `m^N`, checked against the cap.
    pub fn state_count(&self) -> Result<usize> {
        state_count(self.m, self.n, self.cap)
    }
}

fn check_stochastic(k: &[f64], m: usize) -> Result<()> {
    for r in 0..m {
        let row = &k[r * m..(r + 1) * m];
        if row.iter().any(|&p| !(p >= 0.0)) || (row.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
            return invalid(format!("kernel row {r} is not a probability vector"));
        }
    }
    Ok(())
}

fn state_count(m: usize, n: usize, cap: usize) -> Result<usize> {
    let mut s: usize = 1;
    for _ in 0..n {
        s = match s.checked_mul(m) {
            Some(v) if v <= cap => v,
            _ => {
                return Err(Error::CapExceeded {
                    what: "finite state space",
                    size: m.saturating_pow(n as u32),
                    cap,
                })
            }
        };
    }
    Ok(s)
}

/// Mixed-radix little-endian code of a configuration.
pub fn encode(xs: &[usize], m: usize) -> usize {
    xs.iter().rev().fold(0, |acc, &x| acc * m + x)
}

pub fn decode(mut idx: usize, m: usize, n: usize) -> Vec<usize> {
    let mut xs = vec![0; n];
    decode_into(&mut idx, m, &mut xs);
    xs
}

fn decode_into(idx: &mut usize, m: usize, xs: &mut [usize]) {
    for x in xs.iter_mut() {
        *x = *idx % m;
        *idx /= m;
    }
}

fn histogram(xs: &[usize], h: &mut [f64]) {
    h.iter_mut().for_each(|v| *v = 0.0);
    let w = 1.0 / xs.len() as f64;
    for &x in xs {
        h[x] += w;
    }
}

/// Sparse rate matrix over `E^N`.
#[derive(Clone, Debug)]
pub struct GeneratorMatrix {
    m: usize,
    n: usize,
    /// Off-diagonal rates per row, sorted by column.
    rows: Vec<Vec<(usize, f64)>>,
    diag: Vec<f64>,
}

impl GeneratorMatrix {
    pub fn size(&self) -> usize {
        self.diag.len()
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Q(s, t).
    pub fn entry(&self, s: usize, t: usize) -> f64 {
        if s == t {
            return self.diag[s];
        }
        self.rows[s]
            .binary_search_by_key(&t, |e| e.0)
            .map(|k| self.rows[s][k].1)
            .unwrap_or(0.0)
    }

    pub fn row(&self, s: usize) -> &[(usize, f64)] {
        &self.rows[s]
    }

    /// Largest |row sum|.
    pub fn row_sum_defect(&self) -> f64 {
        (0..self.size())
            .map(|s| (self.diag[s] + self.rows[s].iter().map(|e| e.1).sum::<f64>()).abs())
            .fold(0.0, f64::max)
    }

    pub fn max_exit_rate(&self) -> f64 {
        self.diag.iter().map(|d| -d).fold(0.0, f64::max)
    }

    /// `out = f Q` for a row vector `f`.
    pub fn apply_left(&self, f: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        for (s, &fs) in f.iter().enumerate() {
            if fs == 0.0 {
                continue;
            }
            out[s] += fs * self.diag[s];
            for &(t, r) in &self.rows[s] {
                out[t] += fs * r;
            }
        }
    }

    /// Whether Q commutes with the transposition of slots `a` and `b`.
    pub fn commutes_with_transposition(&self, a: usize, b: usize, tol: f64) -> bool {
        let swap = |s: usize| {
            let mut xs = decode(s, self.m, self.n);
            xs.swap(a, b);
            encode(&xs, self.m)
        };
        (0..self.size()).all(|s| {
            let ps = swap(s);
            (self.diag[s] - self.diag[ps]).abs() <= tol
                && self.rows[s]
                    .iter()
                    .all(|&(t, r)| (self.entry(ps, swap(t)) - r).abs() <= tol)
        })
    }
}

/// Generator `L_N` of the N-particle chain.
pub fn build_generator(model: &FiniteModel) -> Result<GeneratorMatrix> {
    let size = model.state_count()?;
    let (m, n) = (model.m, model.n);
    let mut rows = Vec::with_capacity(size);
    let mut diag = Vec::with_capacity(size);
    let mut xs = vec![0usize; n];
    let mut h = vec![0.0; m];
    let mut p = vec![0.0; m];
    let mut entries: BTreeMap<usize, f64> = BTreeMap::new();
    for s in 0..size {
        let mut idx = s;
        decode_into(&mut idx, m, &mut xs);
        entries.clear();
        match &model.mechanism {
            Mechanism::MeanField { rate, kernel } => {
                histogram(&xs, &mut h);
                for i in 0..n {
                    let e = xs[i];
                    let lam = rate(e, &h);
                    if !(lam >= 0.0) || !lam.is_finite() {
                        return invalid(format!("rate {lam} at state {e} is not a nonnegative number"));
                    }
                    kernel(e, &h, &mut p);
                    if p.iter().any(|&v| !(v >= 0.0)) || (p.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
                        return invalid(format!("kernel row at state {e} is not a probability vector"));
                    }
                    let base = s - e * m.pow(i as u32);
                    for (e2, &pe) in p.iter().enumerate() {
                        if e2 != e && pe > 0.0 && lam > 0.0 {
                            *entries.entry(base + e2 * m.pow(i as u32)).or_insert(0.0) += lam * pe;
                        }
                    }
                }
            }
            Mechanism::Collision { rate, post } => {
                for i in 0..n {
                    for j in (i + 1)..n {
                        let (a, b) = (xs[i], xs[j]);
                        let lam = rate(a, b);
                        if !(lam >= 0.0) || !lam.is_finite() {
                            return invalid(format!("collision rate {lam} at ({a}, {b}) is invalid"));
                        }
                        if lam == 0.0 {
                            continue;
                        }
                        let law = post(a, b);
                        let total: f64 = law.iter().map(|e| e.2).sum();
                        if law.iter().any(|e| !(e.2 >= 0.0) || e.0 >= m || e.1 >= m) || (total - 1.0).abs() > 1e-12 {
                            return invalid(format!("post-collision law at ({a}, {b}) is not a probability"));
                        }
                        let (wi, wj) = (m.pow(i as u32), m.pow(j as u32));
                        let base = s - a * wi - b * wj;
                        for &(a2, b2, w) in &law {
                            let t = base + a2 * wi + b2 * wj;
                            if t != s && w > 0.0 {
                                *entries.entry(t).or_insert(0.0) += lam / n as f64 * w;
                            }
                        }
                    }
                }
            }
        }
        let row: Vec<(usize, f64)> = entries.iter().map(|(&t, &r)| (t, r)).collect();
        diag.push(-row.iter().map(|e| e.1).sum::<f64>());
        rows.push(row);
    }
    Ok(GeneratorMatrix { m, n, rows, diag })
}

/// Transient law `f₀ e^{tQ}` by uniformization.
pub fn exact_evolve(q: &GeneratorMatrix, f0: &[f64], t: f64) -> Result<Vec<f64>> {
    if f0.len() != q.size() {
        return Err(Error::SizeMismatch(format!(
            "initial law has {} entries, generator {}",
            f0.len(),
            q.size()
        )));
    }
    if !(t >= 0.0) || !t.is_finite() {
        return invalid("evolution time must be finite and nonnegative");
    }
    let eta = q.max_exit_rate();
    if t == 0.0 || eta == 0.0 {
        return Ok(f0.to_vec());
    }
    let chunks = (eta * t / 50.0).ceil().max(1.0) as usize;
    let tau = t / chunks as f64;
    let mut f = f0.to_vec();
    let mut v = vec![0.0; f.len()];
    let mut qv = vec![0.0; f.len()];
    for _ in 0..chunks {
        let lt = eta * tau;
        let mut w = (-lt).exp();
        let mut cumulative = w;
        v.copy_from_slice(&f);
        let mut out: Vec<f64> = v.iter().map(|x| w * x).collect();
        let mut k = 0.0;
        while 1.0 - cumulative > 1e-12 || k < lt {
            k += 1.0;
            q.apply_left(&v, &mut qv);
            for (vi, qi) in v.iter_mut().zip(&qv) {
                *vi += qi / eta;
            }
            w *= lt / k;
            cumulative += w;
            for (o, vi) in out.iter_mut().zip(&v) {
                *o += w * vi;
            }
            if k > 10.0 * lt + 200.0 {
                break;
            }
        }
        for o in out.iter_mut() {
            *o = o.max(0.0);
        }
        f = out;
    }
    Ok(f)
}

/// Law of the first `k` slots.
pub fn exact_marginal(f: &[f64], m: usize, n: usize, k: usize) -> Result<Vec<f64>> {
    let size = state_count(m, n, usize::MAX)?;
    if f.len() != size {
        return Err(Error::SizeMismatch(format!("distribution has {} entries, expected {size}", f.len())));
    }
    if k == 0 || k > n {
        return invalid(format!("marginal order k = {k} must lie in 1..={n}"));
    }
    let mk = m.pow(k as u32);
    let mut out = vec![0.0; mk];
    for (s, &p) in f.iter().enumerate() {
        out[s % mk] += p;
    }
    Ok(out)
}

/// Moment measure F^{k,N} = Σ_x f(x) μ_x^{⊗k}.
pub fn exact_moment_measure(f: &[f64], m: usize, n: usize, k: usize) -> Result<Vec<f64>> {
    let size = state_count(m, n, usize::MAX)?;
    if f.len() != size {
        return Err(Error::SizeMismatch(format!("distribution has {} entries, expected {size}", f.len())));
    }
    if k == 0 {
        return invalid("moment order must be positive");
    }
    let mk = state_count(m, k, DEFAULT_STATE_CAP)?;
    let mut out = vec![0.0; mk];
    let mut xs = vec![0usize; n];
    let mut h = vec![0.0; m];
    let mut ys = vec![0usize; k];
    for (s, &p) in f.iter().enumerate() {
        if p == 0.0 {
            continue;
        }
        let mut idx = s;
        decode_into(&mut idx, m, &mut xs);
        histogram(&xs, &mut h);
        for (t, o) in out.iter_mut().enumerate() {
            let mut idx = t;
            decode_into(&mut idx, m, &mut ys);
            let w: f64 = ys.iter().map(|&y| h[y]).product();
            *o += p * w;
        }
    }
    Ok(out)
}

/// `f^{⊗k}` in little-endian order.
pub fn tensor_power(f: &[f64], k: usize) -> Vec<f64> {
    let m = f.len();
    let mut out = vec![1.0];
    for _ in 0..k {
        let mut next = Vec::with_capacity(out.len() * m);
        for &a in f {
            for &b in &out {
                next.push(b * a);
            }
        }
        out = next;
    }
    out
}

fn orbit_key(s: usize, m: usize, n: usize) -> Vec<usize> {
    let mut xs = decode(s, m, n);
    xs.sort_unstable();
    xs
}

/// Average of `f` over permutations of slots.
pub fn symmetrize(f: &[f64], m: usize, n: usize) -> Vec<f64> {
    let mut groups: BTreeMap<Vec<usize>, (f64, usize)> = BTreeMap::new();
    for (s, &p) in f.iter().enumerate() {
        let e = groups.entry(orbit_key(s, m, n)).or_insert((0.0, 0));
        e.0 += p;
        e.1 += 1;
    }
    (0..f.len())
        .map(|s| {
            let (sum, count) = groups[&orbit_key(s, m, n)];
            sum / count as f64
        })
        .collect()
}

pub fn is_symmetric(f: &[f64], m: usize, n: usize, tol: f64) -> bool {
    symmetrize(f, m, n).iter().zip(f).all(|(a, b)| (a - b).abs() <= tol)
}

/// Random exchangeable law on `E^N`: exponential weights averaged over orbits.
pub fn random_symmetric(m: usize, n: usize, rng: &mut StreamRng) -> Result<Vec<f64>> {
    let size = state_count(m, n, DEFAULT_STATE_CAP)?;
    let raw: Vec<f64> = (0..size).map(|_| rng.exponential(1.0)).collect();
    let total: f64 = raw.iter().sum();
    let f: Vec<f64> = raw.iter().map(|x| x / total).collect();
    Ok(symmetrize(&f, m, n))
}

/// Outcome of a theorem-bound check.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoundCheck {
    pub lhs: f64,
    pub bound: f64,
    pub pass: bool,
}

fn require_symmetric(f: &[f64], m: usize, n: usize) -> Result<()> {
    if !is_symmetric(f, m, n, 1e-12) {
        return invalid("distribution is not symmetric under slot permutations");
    }
    Ok(())
}

/// Σ|f^{k,N} − F^{k,N}| against 2k(k−1)/N.
pub fn check_grunbaum(f: &[f64], m: usize, n: usize, k: usize) -> Result<BoundCheck> {
    require_symmetric(f, m, n)?;
    let marginal = exact_marginal(f, m, n, k)?;
    let moment = exact_moment_measure(f, m, n, k)?;
    let tv: f64 = marginal.iter().zip(&moment).map(|(a, b)| (a - b).abs()).sum();
    let bound = grunbaum_bound(k, n);
    Ok(BoundCheck {
        lhs: tv,
        bound,
        pass: tv <= bound + 1e-12,
    })
}

/// 2k(k−1)/N.
pub fn grunbaum_bound(k: usize, n: usize) -> f64 {
    2.0 * (k * (k.saturating_sub(1))) as f64 / n as f64
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IsometryCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub gap: f64,
}

const ISOMETRY_CAP: usize = 1000;

/// W₁(f^N, g^N) under the normalised product distance against W₁ of the
/// laws of the empirical measures under W₁ on P(E). `ground` is the m × m
/// distance matrix of E.
pub fn check_w1_isometry(f: &[f64], g: &[f64], m: usize, n: usize, ground: &[f64]) -> Result<IsometryCheck> {
    let size = state_count(m, n, ISOMETRY_CAP)?;
    if f.len() != size || g.len() != size || ground.len() != m * m {
        return Err(Error::SizeMismatch("isometry inputs have inconsistent sizes".into()));
    }
    let support = |v: &[f64]| -> Vec<usize> { (0..size).filter(|&s| v[s] > 0.0).collect() };
    let (sf, sg) = (support(f), support(g));
    if sf.is_empty() || sg.is_empty() {
        return Err(Error::EmptyMeasure);
    }
    let configs: Vec<Vec<usize>> = (0..size).map(|s| decode(s, m, n)).collect();
    let lhs = transport_cost(
        &sf.iter().map(|&s| f[s]).collect::<Vec<_>>(),
        &sg.iter().map(|&s| g[s]).collect::<Vec<_>>(),
        |a, b| {
            let (x, y) = (&configs[sf[a]], &configs[sg[b]]);
            x.iter().zip(y).map(|(&p, &q)| ground[p * m + q]).sum::<f64>() / n as f64
        },
    )?;
    // Push forward to laws on empirical measures, keyed by integer counts.
    let push = |v: &[f64], supp: &[usize]| -> Vec<(Vec<usize>, f64)> {
        let mut acc: BTreeMap<Vec<usize>, f64> = BTreeMap::new();
        for &s in supp {
            let mut counts = vec![0usize; m];
            for &x in &configs[s] {
                counts[x] += 1;
            }
            *acc.entry(counts).or_insert(0.0) += v[s];
        }
        acc.into_iter().collect()
    };
    let (pf, pg) = (push(f, &sf), push(g, &sg));
    let mut inner = vec![0.0; pf.len() * pg.len()];
    for (a, (ca, _)) in pf.iter().enumerate() {
        for (b, (cb, _)) in pg.iter().enumerate() {
            let ha: Vec<f64> = ca.iter().map(|&c| c as f64 / n as f64).collect();
            let hb: Vec<f64> = cb.iter().map(|&c| c as f64 / n as f64).collect();
            inner[a * pg.len() + b] = transport_cost(&ha, &hb, |i, j| ground[i * m + j])?;
        }
    }
    let rhs = transport_cost(
        &pf.iter().map(|e| e.1).collect::<Vec<_>>(),
        &pg.iter().map(|e| e.1).collect::<Vec<_>>(),
        |a, b| inner[a * pg.len() + b],
    )?;
    Ok(IsometryCheck {
        lhs,
        rhs,
        gap: (lhs - rhs).abs(),
    })
}

/// H(f^{k,N} | f^{⊗k}) against (k/N) H(f^N | f^{⊗N}).
pub fn check_csiszar(f_n: &[f64], f: &[f64], m: usize, n: usize, k: usize) -> Result<BoundCheck> {
    if f.len() != m {
        return Err(Error::SizeMismatch("one-particle law has the wrong length".into()));
    }
    require_symmetric(f_n, m, n)?;
    let marginal = exact_marginal(f_n, m, n, k)?;
    let lhs = relative_entropy_discrete(&marginal, &tensor_power(f, k))?;
    let full = relative_entropy_discrete(f_n, &tensor_power(f, n))?;
    let bound = k as f64 / n as f64 * full;
    Ok(BoundCheck {
        lhs,
        bound,
        pass: lhs <= bound + 1e-12 || (lhs.is_infinite() && bound.is_infinite()),
    })
}

/// Right-hand side of the limit equation: (f L_f)(e') for the mean-field mechanism.
fn limit_drift(rate: &RateFn, kernel: &KernelFn, f: &[f64], out: &mut [f64], row: &mut [f64]) {
    out.iter_mut().for_each(|o| *o = 0.0);
    for (e, &fe) in f.iter().enumerate() {
        if fe == 0.0 {
            continue;
        }
        let lam = rate(e, f);
        kernel(e, f, row);
        for (o, &p) in out.iter_mut().zip(row.iter()) {
            *o += fe * lam * p;
        }
        out[e] -= fe * lam;
    }
}

/// RK4 solution at time `t` of the nonlinear equation d/dt f = f L_f.
pub fn nonlinear_finite_ode(model: &FiniteModel, f0: &[f64], t: f64) -> Result<Vec<f64>> {
    nonlinear_finite_ode_steps(model, f0, t, ((t / 1e-3).ceil() as usize).max(1))
}

pub fn nonlinear_finite_ode_steps(model: &FiniteModel, f0: &[f64], t: f64, steps: usize) -> Result<Vec<f64>> {
    let Mechanism::MeanField { rate, kernel } = &model.mechanism else {
        return invalid("the nonlinear ODE needs a mean-field mechanism");
    };
    let m = model.m;
    if f0.len() != m {
        return Err(Error::SizeMismatch("initial law has the wrong length".into()));
    }
    if !(t >= 0.0) || steps == 0 {
        return invalid("time must be nonnegative and steps positive");
    }
    let h = t / steps as f64;
    let mut f = f0.to_vec();
    let mut row = vec![0.0; m];
    let (mut k1, mut k2, mut k3, mut k4) = (vec![0.0; m], vec![0.0; m], vec![0.0; m], vec![0.0; m]);
    let mut tmp = vec![0.0; m];
    for _ in 0..steps {
        limit_drift(rate, kernel, &f, &mut k1, &mut row);
        for i in 0..m {
            tmp[i] = f[i] + 0.5 * h * k1[i];
        }
        limit_drift(rate, kernel, &tmp, &mut k2, &mut row);
        for i in 0..m {
            tmp[i] = f[i] + 0.5 * h * k2[i];
        }
        limit_drift(rate, kernel, &tmp, &mut k3, &mut row);
        for i in 0..m {
            tmp[i] = f[i] + h * k3[i];
        }
        limit_drift(rate, kernel, &tmp, &mut k4, &mut row);
        for i in 0..m {
            f[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
    }
    Ok(f)
}

/// `state,probability` rows.
pub fn write_distribution_csv<W: Write>(f: &[f64], w: &mut W) -> Result<()> {
    writeln!(w, "state,probability")?;
    for (s, &p) in f.iter().enumerate() {
        writeln!(w, "{s},{}", fmt_f64(p))?;
    }
    Ok(())
}

fn state_of<T: Real>(x: T, m: usize) -> usize {
    (to_f64(x).round().max(0.0) as usize).min(m - 1)
}

fn inverse_cdf(p: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (k, &pk) in p.iter().enumerate() {
        acc += pk;
        if u < acc {
            return k;
        }
    }
    p.iter().rposition(|&pk| pk > 0.0).unwrap_or(p.len() - 1)
}

/// A finite mean-field model seen as a one-dimensional jump model whose
/// states are the reals `0, 1, …, m−1`.
#[derive(Clone, Debug)]
pub struct FiniteJump {
    model: FiniteModel,
    bound: f64,
}

impl FiniteJump {
    pub fn new(model: FiniteModel) -> Result<Self> {
        let Mechanism::MeanField { rate, .. } = &model.mechanism else {
            return invalid("FiniteJump needs a mean-field mechanism");
        };
        // Λ = max of λ over every state and every N-atom histogram.
        let size = model.state_count()?;
        let mut bound: f64 = 0.0;
        let mut h = vec![0.0; model.m];
        for s in 0..size {
            let xs = decode(s, model.m, model.n);
            histogram(&xs, &mut h);
            for e in 0..model.m {
                bound = bound.max(rate(e, &h));
            }
        }
        Ok(FiniteJump { model, bound })
    }

    fn hist<T: Real>(&self, mu: MeasureView<'_, T>) -> Vec<f64> {
        let mut h = vec![0.0; self.model.m];
        let w = 1.0 / mu.len() as f64;
        for a in mu.iter() {
            h[state_of(a[0], self.model.m)] += w;
        }
        h
    }
}

impl<T: Real> JumpModel<T> for FiniteJump {
    fn name(&self) -> &str {
        "finite-mean-field"
    }
    fn dim(&self) -> usize {
        1
    }
    fn rate_bound(&self) -> T {
        lit(self.bound)
    }
    fn rate(&self, x: &[T], mu: MeasureView<'_, T>) -> T {
        let Mechanism::MeanField { rate, .. } = &self.model.mechanism else {
            unreachable!()
        };
        lit(rate(state_of(x[0], self.model.m), &self.hist(mu)))
    }
    fn sample_theta(&self, rng: &mut StreamRng, out: &mut Vec<T>) {
        out.push(rng.uniform());
    }
    fn jump(&self, x: &[T], mu: MeasureView<'_, T>, theta: &[T], out: &mut [T]) {
        let Mechanism::MeanField { kernel, .. } = &self.model.mechanism else {
            unreachable!()
        };
        let mut p = vec![0.0; self.model.m];
        kernel(state_of(x[0], self.model.m), &self.hist(mu), &mut p);
        out[0] = lit(inverse_cdf(&p, to_f64(theta[0])) as f64);
    }
}

/// A finite collision model seen as a one-dimensional collision model.
#[derive(Clone, Debug)]
pub struct FiniteCollision {
    model: FiniteModel,
    bound: f64,
}

impl FiniteCollision {
    pub fn new(model: FiniteModel) -> Result<Self> {
        let Mechanism::Collision { rate, .. } = &model.mechanism else {
            return invalid("FiniteCollision needs a collision mechanism");
        };
        let m = model.m;
        let mut bound: f64 = 0.0;
        for a in 0..m {
            for b in 0..m {
                let (l1, l2) = (rate(a, b), rate(b, a));
                if (l1 - l2).abs() > 1e-12 {
                    return invalid("collision rate must be symmetric");
                }
                bound = bound.max(l1);
            }
        }
        Ok(FiniteCollision { model, bound })
    }
}

impl<T: Real> CollisionModel<T> for FiniteCollision {
    fn name(&self) -> &str {
        "finite-collision"
    }
    fn dim(&self) -> usize {
        1
    }
    fn rate_bound(&self) -> T {
        lit(self.bound)
    }
    fn rate(&self, z1: &[T], z2: &[T]) -> T {
        let Mechanism::Collision { rate, .. } = &self.model.mechanism else {
            unreachable!()
        };
        lit(rate(state_of(z1[0], self.model.m), state_of(z2[0], self.model.m)))
    }
    fn sample_theta(&self, rng: &mut StreamRng, out: &mut Vec<T>) {
        out.push(rng.uniform());
    }
    fn collide(&self, z1: &[T], z2: &[T], theta: &[T], out1: &mut [T], out2: &mut [T]) {
        let Mechanism::Collision { post, .. } = &self.model.mechanism else {
            unreachable!()
        };
        let law = post(state_of(z1[0], self.model.m), state_of(z2[0], self.model.m));
        let weights: Vec<f64> = law.iter().map(|e| e.2).collect();
        let k = inverse_cdf(&weights, to_f64(theta[0]));
        out1[0] = lit(law[k].0 as f64);
        out2[0] = lit(law[k].1 as f64);
    }
    fn conservation(&self) -> Conservation {
        Conservation::None
    }
}
