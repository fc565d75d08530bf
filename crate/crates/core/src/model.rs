//! Model descriptions shared by the simulators.
//!
//! A model is a trait object describing one interaction mechanism. The three
//! families are gathered in [`ModelSpec`].

use std::sync::Arc;

use crate::real::Real;
use crate::rng::StreamRng;
use crate::state::{Domain, EmpiricalMeasure, MeasureView};

/// Measure argument of diffusion coefficients, reduced to what the model needs.
///
/// Models with a closed-form mean field (Kuramoto, linear drifts) summarise
/// the empirical measure into a few moments so a step costs O(N).
#[derive(Clone, Debug, PartialEq)]
pub enum MeasureSummary<T> {
    Atoms(EmpiricalMeasure<T>),
    Moments(Vec<T>),
}

impl<T: Real> MeasureSummary<T> {
    pub fn moments(&self) -> &[T] {
        match self {
            MeasureSummary::Moments(m) => m,
            MeasureSummary::Atoms(_) => panic!("model expected a moment summary"),
        }
    }

    pub fn atoms(&self) -> MeasureView<'_, T> {
        match self {
            MeasureSummary::Atoms(m) => m.view(),
            MeasureSummary::Moments(_) => panic!("model expected an atomic summary"),
        }
    }
}

/// Diffusion coefficient σ(x, μ).
#[derive(Clone, Debug, PartialEq)]
pub enum Noise<T> {
    Zero,
    /// σ = s·I
    Scalar(T),
    /// σ = diag(v)
    Diagonal(Vec<T>),
    /// σ as a row-major dim × dim matrix.
    Full(Vec<T>),
}

impl<T: Real> Noise<T> {
    /// Adds `σ·scale·ξ` to `out`.
    pub fn apply(&self, xi: &[T], scale: T, out: &mut [T]) {
        match self {
            Noise::Zero => {}
            Noise::Scalar(s) => {
                for (o, &z) in out.iter_mut().zip(xi) {
                    *o += *s * scale * z;
                }
            }
            Noise::Diagonal(v) => {
                for ((o, &z), &s) in out.iter_mut().zip(xi).zip(v) {
                    *o += s * scale * z;
                }
            }
            Noise::Full(m) => {
                let d = xi.len();
                for (r, o) in out.iter_mut().enumerate() {
                    let mut acc = T::zero();
                    for c in 0..d {
                        acc += m[r * d + c] * xi[c];
                    }
                    *o += acc * scale;
                }
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        match self {
            Noise::Zero => true,
            Noise::Scalar(s) => s.is_finite(),
            Noise::Diagonal(v) | Noise::Full(v) => v.iter().all(|x| x.is_finite()),
        }
    }

    /// True when σ is the identity.
    pub fn is_identity(&self, dim: usize) -> bool {
        match self {
            Noise::Zero => false,
            Noise::Scalar(s) => *s == T::one(),
            Noise::Diagonal(v) => v.len() == dim && v.iter().all(|&x| x == T::one()),
            Noise::Full(m) => (0..dim).all(|r| {
                (0..dim).all(|c| m[r * dim + c] == if r == c { T::one() } else { T::zero() })
            }),
        }
    }
}

/// McKean–Vlasov diffusion `dX = b(X, μ)dt + σ(X, μ)dB`.
pub trait DiffusionModel<T: Real>: Send + Sync {
    fn name(&self) -> &str;
    fn dim(&self) -> usize;
    fn domain(&self) -> Domain {
        Domain::Euclidean
    }
    /// Reduces the measure argument; evaluated once per time step.
    fn summarize(&self, mu: MeasureView<'_, T>) -> MeasureSummary<T> {
        MeasureSummary::Atoms(mu.to_owned())
    }
    fn drift(&self, x: &[T], field: &MeasureSummary<T>, out: &mut [T]);
    fn noise(&self, x: &[T], field: &MeasureSummary<T>) -> Noise<T>;
    /// False when b and σ ignore the measure argument.
    fn measure_dependent(&self) -> bool {
        true
    }
    /// Declared Lipschitz constants of (b, σ), if known.
    fn lipschitz(&self) -> Option<(f64, f64)> {
        None
    }
}

/// Mean-field jump process / PDMP with parametric jump law `ψ(x, μ, ·)#ν`.
pub trait JumpModel<T: Real>: Send + Sync {
    fn name(&self) -> &str;
    fn dim(&self) -> usize;
    fn domain(&self) -> Domain {
        Domain::Euclidean
    }
    /// Λ, an upper bound on the jump rate.
    fn rate_bound(&self) -> T;
    fn rate(&self, x: &[T], mu: MeasureView<'_, T>) -> T;
    /// Draws θ ~ ν into `out` (cleared by the caller).
    fn sample_theta(&self, rng: &mut StreamRng, out: &mut Vec<T>);
    /// Post-jump state ψ(x, μ, θ).
    fn jump(&self, x: &[T], mu: MeasureView<'_, T>, theta: &[T], out: &mut [T]);
    /// Deterministic flow a(x) between jumps.
    fn flow(&self, _x: &[T], out: &mut [T]) {
        out.iter_mut().for_each(|o| *o = T::zero());
    }
    fn has_flow(&self) -> bool {
        false
    }
    /// Collateral amplitude α̃(x_j, x_i, μ, θ_j, θ_i); `None` when the model has none.
    fn collateral(
        &self,
        _xj: &[T],
        _xi: &[T],
        _mu: MeasureView<'_, T>,
        _theta_j: &[T],
        _theta_i: &[T],
        _out: &mut [T],
    ) -> Option<()> {
        None
    }
    fn has_collateral(&self) -> bool {
        false
    }
    /// ‖α̃‖_∞, used by the collateral displacement check.
    fn collateral_bound(&self) -> T {
        T::zero()
    }
    fn measure_dependent(&self) -> bool {
        true
    }
}

/// Invariant preserved by every accepted collision.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Conservation {
    None,
    /// Σ|v|² over the pair.
    SquaredNorm,
    /// Σv and Σ|v|² over the velocity block.
    MomentumEnergy,
    /// Σz over the pair.
    Sum,
}

/// Binary collision model with unordered pairs and per-pair rate λ/N.
pub trait CollisionModel<T: Real>: Send + Sync {
    fn name(&self) -> &str;
    fn dim(&self) -> usize;
    fn domain(&self) -> Domain {
        Domain::Euclidean
    }
    /// Λ ≥ sup λ.
    fn rate_bound(&self) -> T;
    /// Symmetric collision rate λ(z1, z2).
    fn rate(&self, z1: &[T], z2: &[T]) -> T;
    fn sample_theta(&self, rng: &mut StreamRng, out: &mut Vec<T>);
    /// (z1', z2') = (ψ1, ψ2)(z1, z2, θ).
    fn collide(&self, z1: &[T], z2: &[T], theta: &[T], out1: &mut [T], out2: &mut [T]);
    /// One-sided update drawn from the first marginal of the post-collision law.
    fn nanbu_update(&self, z1: &[T], z2: &[T], theta: &[T], out1: &mut [T]) {
        let mut scratch = vec![T::zero(); z2.len()];
        self.collide(z1, z2, theta, out1, &mut scratch);
    }
    /// Checked before every accepted collision; semi-parametric models reject
    /// parameters outside their envelope here.
    fn validate_event(&self, _z1: &[T], _z2: &[T], _theta: &[T]) -> crate::error::Result<()> {
        Ok(())
    }
    /// Free transport `x += v dt` between collisions (kinetic models only).
    fn free_flight(&self) -> bool {
        false
    }
    fn conservation(&self) -> Conservation {
        Conservation::None
    }
}

/// Tagged union over the three model families.
#[derive(Clone)]
pub enum ModelSpec<T: Real> {
    Diffusion(Arc<dyn DiffusionModel<T>>),
    MeanFieldJump(Arc<dyn JumpModel<T>>),
    Collision(Arc<dyn CollisionModel<T>>),
}

impl<T: Real> ModelSpec<T> {
    pub fn name(&self) -> &str {
        match self {
            ModelSpec::Diffusion(m) => m.name(),
            ModelSpec::MeanFieldJump(m) => m.name(),
            ModelSpec::Collision(m) => m.name(),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            ModelSpec::Diffusion(m) => m.dim(),
            ModelSpec::MeanFieldJump(m) => m.dim(),
            ModelSpec::Collision(m) => m.dim(),
        }
    }

    pub fn domain(&self) -> Domain {
        match self {
            ModelSpec::Diffusion(m) => m.domain(),
            ModelSpec::MeanFieldJump(m) => m.domain(),
            ModelSpec::Collision(m) => m.domain(),
        }
    }

    pub fn family(&self) -> &'static str {
        match self {
            ModelSpec::Diffusion(_) => "diffusion",
            ModelSpec::MeanFieldJump(_) => "mean-field-jump",
            ModelSpec::Collision(_) => "collision",
        }
    }
}

impl<T: Real> std::fmt::Debug for ModelSpec<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "ModelSpec::{}({})", self.family(), self.name())
    }
}
