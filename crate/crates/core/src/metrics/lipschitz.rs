//! Weighted families of bounded Lipschitz test functions.

use crate::error::{Error, Result};
use crate::metrics::AsMeasure;
use crate::real::{to_f64, Real};

/// Tent `h · max(0, 1 − |x − c|/w)` with `h = min(1, w)`, so that both the
/// sup norm and the Lipschitz constant are at most 1.
#[derive(Clone, Debug, PartialEq)]
pub struct Tent {
    pub center: Vec<f64>,
    pub width: f64,
}

impl Tent {
    pub fn new(center: Vec<f64>, width: f64) -> Result<Self> {
        if center.is_empty() || !(width > 0.0) || !width.is_finite() {
            return Err(Error::InvalidInput("tent needs a center and positive width".into()));
        }
        Ok(Tent { center, width })
    }

    pub fn height(&self) -> f64 {
        self.width.min(1.0)
    }

    pub fn eval<T: Real>(&self, x: &[T]) -> f64 {
        let mut s = 0.0;
        for (&xi, &ci) in x.iter().zip(&self.center) {
            let d = to_f64(xi) - ci;
            s += d * d;
        }
        self.height() * (1.0 - s.sqrt() / self.width).max(0.0)
    }
}

/// Ordered list φ_1, φ_2, … weighted by 2^{−k}.
#[derive(Clone, Debug, PartialEq)]
pub struct LipschitzFamily {
    dim: usize,
    tents: Vec<Tent>,
}

impl LipschitzFamily {
    pub fn new(tents: Vec<Tent>) -> Result<Self> {
        let Some(first) = tents.first() else {
            return Err(Error::InvalidInput("family needs at least one function".into()));
        };
        let dim = first.center.len();
        if tents.iter().any(|t| t.center.len() != dim) {
            return Err(Error::SizeMismatch("tent centers differ in dimension".into()));
        }
        Ok(LipschitzFamily { dim, tents })
    }

    /// Tents on dyadic grids of `[lo, hi]^dim`: level ℓ has `2^ℓ` cells per
    /// axis, centers at cell midpoints and width equal to the cell side.
    pub fn dyadic(dim: usize, lo: f64, hi: f64, levels: usize) -> Result<Self> {
        if dim == 0 || !(hi > lo) || levels == 0 {
            return Err(Error::InvalidInput("dyadic family needs dim > 0, lo < hi, levels > 0".into()));
        }
        let mut tents = Vec::new();
        for level in 0..levels {
            let cells = 1usize << level;
            let side = (hi - lo) / cells as f64;
            let total = cells.pow(dim as u32);
            for flat in 0..total {
                let mut rem = flat;
                let center = (0..dim)
                    .map(|_| {
                        let c = rem % cells;
                        rem /= cells;
                        lo + (c as f64 + 0.5) * side
                    })
                    .collect();
                tents.push(Tent {
                    center,
                    width: side,
                });
            }
        }
        Self::new(tents)
    }

    pub fn len(&self) -> usize {
        self.tents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tents.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn tents(&self) -> &[Tent] {
        &self.tents
    }

    /// 2^{−K}: bound on the omitted tail.
    pub fn truncation_tail(&self) -> f64 {
        0.5f64.powi(self.tents.len() as i32)
    }

    /// ⟨μ, φ_k⟩ for every k.
    pub fn integrals<T: Real>(&self, mu: &impl AsMeasure<T>) -> Vec<f64> {
        let v = mu.as_view();
        let n = v.len() as f64;
        self.tents
            .iter()
            .map(|t| v.iter().map(|a| t.eval(a)).sum::<f64>() / n)
            .collect()
    }
}

/// `Σ_k 2^{−k} |⟨μ − ν, φ_k⟩|`.
pub fn d1_dist<T: Real>(mu: &impl AsMeasure<T>, nu: &impl AsMeasure<T>, family: &LipschitzFamily) -> Result<T> {
    let (a, b) = (mu.as_view(), nu.as_view());
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptyMeasure);
    }
    if a.dim != family.dim || b.dim != family.dim {
        return Err(Error::SizeMismatch("family and measures differ in dimension".into()));
    }
    let (ia, ib) = (family.integrals(&a), family.integrals(&b));
    let mut w = 1.0;
    let mut s = 0.0;
    for (x, y) in ia.iter().zip(&ib) {
        w *= 0.5;
        s += w * (x - y).abs();
    }
    Ok(T::from(s).unwrap())
}
