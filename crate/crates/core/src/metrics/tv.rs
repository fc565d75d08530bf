//! Histogram total variation.

use crate::error::{Error, Result};
use crate::metrics::AsMeasure;
use crate::real::{from_usize, to_f64, Real};
use crate::state::MeasureView;

/// Axis-aligned box split into equal bins along each coordinate.
#[derive(Clone, Debug, PartialEq)]
pub struct HistogramGrid {
    lo: Vec<f64>,
    hi: Vec<f64>,
    bins: Vec<usize>,
}

impl HistogramGrid {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>, bins: Vec<usize>) -> Result<Self> {
        if lo.is_empty() || lo.len() != hi.len() || lo.len() != bins.len() {
            return Err(Error::SizeMismatch("grid bounds and bin counts must share a dimension".into()));
        }
        if lo.iter().zip(&hi).any(|(a, b)| !(a < b) || !a.is_finite() || !b.is_finite()) {
            return Err(Error::InvalidInput("grid needs finite lo < hi on every axis".into()));
        }
        if bins.contains(&0) {
            return Err(Error::InvalidInput("bin counts must be positive".into()));
        }
        Ok(HistogramGrid { lo, hi, bins })
    }

    /// Unit-style grid on one axis: `bins` equal cells covering `[lo, hi]`.
    pub fn uniform_1d(lo: f64, hi: f64, bins: usize) -> Result<Self> {
        Self::new(vec![lo], vec![hi], vec![bins])
    }

    /// Common bounding box of both measures with bin width `range · N^{-1/(d+2)}`,
    /// N the larger atom count.
    pub fn default_for<T: Real>(mu: MeasureView<'_, T>, nu: MeasureView<'_, T>) -> Result<Self> {
        if mu.is_empty() || nu.is_empty() {
            return Err(Error::EmptyMeasure);
        }
        let d = mu.dim;
        let n = mu.len().max(nu.len()) as f64;
        let cells = n.powf(1.0 / (d as f64 + 2.0)).ceil().max(1.0) as usize;
        let mut lo = vec![f64::INFINITY; d];
        let mut hi = vec![f64::NEG_INFINITY; d];
        for a in mu.iter().chain(nu.iter()) {
            for k in 0..d {
                let v = to_f64(a[k]);
                lo[k] = lo[k].min(v);
                hi[k] = hi[k].max(v);
            }
        }
        for k in 0..d {
            if hi[k] <= lo[k] {
                hi[k] = lo[k] + 1.0;
            }
        }
        Self::new(lo, hi, vec![cells; d])
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn cell_count(&self) -> usize {
        self.bins.iter().product()
    }

    /// Flat cell index; points outside the box are clamped into the edge cells.
    pub fn cell<T: Real>(&self, x: &[T]) -> usize {
        let mut idx = 0;
        let mut stride = 1;
        for k in 0..self.dim() {
            let frac = (to_f64(x[k]) - self.lo[k]) / (self.hi[k] - self.lo[k]);
            let b = ((frac * self.bins[k] as f64).floor().max(0.0) as usize).min(self.bins[k] - 1);
            idx += b * stride;
            stride *= self.bins[k];
        }
        idx
    }

    fn histogram<T: Real>(&self, m: MeasureView<'_, T>) -> Vec<f64> {
        let mut h = vec![0.0; self.cell_count()];
        let w = 1.0 / m.len() as f64;
        for a in m.iter() {
            h[self.cell(a)] += w;
        }
        h
    }
}

/// `Σ_b |μ(b) − ν(b)|`, in [0, 2].
pub fn tv_hist<T: Real>(mu: &impl AsMeasure<T>, nu: &impl AsMeasure<T>, grid: &HistogramGrid) -> Result<T> {
    let (a, b) = (mu.as_view(), nu.as_view());
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptyMeasure);
    }
    if a.dim != grid.dim() || b.dim != grid.dim() {
        return Err(Error::SizeMismatch("grid and measures differ in dimension".into()));
    }
    let (ha, hb) = (grid.histogram(a), grid.histogram(b));
    let s: f64 = ha.iter().zip(&hb).map(|(x, y)| (x - y).abs()).sum();
    Ok(T::from(s.min(2.0)).unwrap_or_else(|| from_usize(2)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::state::EmpiricalMeasure;

    fn m1(v: &[f64]) -> EmpiricalMeasure<f64> {
        EmpiricalMeasure::from_scalars(v.to_vec()).unwrap()
    }

    #[test]
    fn examples() {
        let g = HistogramGrid::uniform_1d(0.0, 3.0, 3).unwrap();
        let a = m1(&[0.0, 0.0, 1.0, 1.0]);
        let b = m1(&[1.0, 1.0, 2.0, 2.0]);
        assert_eq!(tv_hist(&a, &b, &g).unwrap(), 1.0);
        assert_eq!(tv_hist(&a, &a, &g).unwrap(), 0.0);
        let g2 = HistogramGrid::uniform_1d(0.0, 2.0, 2).unwrap();
        assert_eq!(tv_hist(&m1(&[0.1, 0.2]), &m1(&[1.5]), &g2).unwrap(), 2.0);
    }

    #[test]
    fn default_grid_covers_both() {
        let a = m1(&[0.0, 1.0, 2.0]);
        let b = m1(&[5.0]);
        let g = HistogramGrid::default_for(a.view(), b.view()).unwrap();
        assert_eq!(g.cell(&[5.0]), g.cell_count() - 1);
        assert_eq!(g.cell(&[0.0]), 0);
    }
}
