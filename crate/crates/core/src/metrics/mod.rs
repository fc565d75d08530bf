//! Distances and divergences between empirical measures and discrete laws.

pub mod assignment;
pub mod entropy;
pub mod lipschitz;
pub mod sobolev;
pub mod tv;
pub mod wasserstein;

pub use assignment::{solve_assignment, transport_cost};
pub use entropy::relative_entropy_discrete;
pub use lipschitz::{d1_dist, LipschitzFamily, Tent};
pub use sobolev::{hs_sq, phi_s, SobolevKernel};
pub use tv::{tv_hist, HistogramGrid};
pub use wasserstein::{w1_empirical, w1_exact_1d, w1_exact_circle, wp_assignment, wp_assignment_with, Ground, WpOptions, DEFAULT_ASSIGNMENT_CAP};

use crate::real::Real;
use crate::state::{EmpiricalMeasure, MeasureView, ParticleState};

/// Anything that can be read as a uniform-weight atomic measure.
pub trait AsMeasure<T: Real> {
    fn as_view(&self) -> MeasureView<'_, T>;
}

impl<T: Real> AsMeasure<T> for EmpiricalMeasure<T> {
    fn as_view(&self) -> MeasureView<'_, T> {
        self.view()
    }
}

impl<T: Real> AsMeasure<T> for ParticleState<T> {
    fn as_view(&self) -> MeasureView<'_, T> {
        self.view()
    }
}

impl<'a, T: Real> AsMeasure<T> for MeasureView<'a, T> {
    fn as_view(&self) -> MeasureView<'_, T> {
        *self
    }
}
