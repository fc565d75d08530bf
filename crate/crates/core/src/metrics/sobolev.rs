//! Negative Sobolev (H⁻ˢ) distances through the radial kernel Φ_s.
//!
//! Φ_s(z) = ∫ e^{−i z·ξ} (1+|ξ|²)^{−s} dξ is evaluated from the subordination
//! form `π^{d/2}/Γ(s) ∫₀^∞ t^{ν−1} e^{−t − r²/(4t)} dt` with ν = s − d/2,
//! integrated by the trapezoid rule in `u = ln t`.

use rayon::prelude::*;
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::metrics::AsMeasure;
use crate::real::{to_f64, Real};

const TABLE_POINTS: usize = 10_000;
const TABLE_MIN: f64 = 1e-6;
const TABLE_MAX: f64 = 1e3;

/// `ln ∫_R exp(ν u − e^u − (r²/4) e^{−u}) du`.
fn log_subordination_integral(nu: f64, r: f64) -> f64 {
    let q = 0.25 * r * r;
    let g = |u: f64| nu * u - u.exp() - q * (-u).exp();
    let root = (nu * nu + r * r).sqrt();
    let peak = if r == 0.0 {
        nu.ln()
    } else if nu >= 0.0 {
        (0.5 * (nu + root)).ln()
    } else {
        (r * r / (2.0 * (root - nu))).ln()
    };
    let curvature = peak.exp() + q * (-peak).exp();
    let h = (0.5 / curvature.sqrt()).min(0.25);
    let g0 = g(peak);
    let mut sum = 1.0;
    for dir in [-1.0, 1.0] {
        let mut k = 1.0;
        loop {
            let e = g(peak + dir * k * h) - g0;
            if !(e > -50.0) {
                break;
            }
            sum += e.exp();
            k += 1.0;
        }
    }
    g0 + h.ln() + sum.ln()
}

fn check_order(d: usize, s: f64) -> Result<f64> {
    if d == 0 {
        return Err(Error::InvalidInput("dimension must be positive".into()));
    }
    let nu = s - 0.5 * d as f64;
    if !(nu > 0.0) || !s.is_finite() {
        return Err(Error::InvalidInput(format!(
            "Sobolev order s = {s} must exceed d/2 = {}",
            0.5 * d as f64
        )));
    }
    Ok(nu)
}

fn log_prefactor(d: usize, s: f64) -> f64 {
    0.5 * d as f64 * std::f64::consts::PI.ln() - ln_gamma(s)
}

/// Φ_s(r) by direct quadrature.
pub fn phi_s(r: f64, d: usize, s: f64) -> Result<f64> {
    let nu = check_order(d, s)?;
    if !(r >= 0.0) || !r.is_finite() {
        return Err(Error::InvalidInput(format!("radius {r} must be finite and nonnegative")));
    }
    if r == 0.0 {
        return Ok(phi_at_zero(d, s));
    }
    Ok((log_prefactor(d, s) + log_subordination_integral(nu, r)).exp())
}

/// Φ_s(0) = π^{d/2} Γ(s − d/2) / Γ(s).
fn phi_at_zero(d: usize, s: f64) -> f64 {
    (log_prefactor(d, s) + ln_gamma(s - 0.5 * d as f64)).exp()
}

/// (ln Φ, d ln Φ / d ln r) at r > 0.
fn log_phi_and_slope(r: f64, d: usize, nu: f64, s: f64) -> (f64, f64) {
    let li = log_subordination_integral(nu, r);
    let ld = log_subordination_integral(nu - 1.0, r);
    let slope = -0.5 * r * r * (ld - li).exp();
    (log_prefactor(d, s) + li, slope)
}

/// Tabulated Φ_s for one (d, s).
///
/// ln Φ is stored against ln r on log-spaced radii together with its exact
/// slope, and evaluated by cubic Hermite interpolation.
#[derive(Clone, Debug)]
pub struct SobolevKernel {
    d: usize,
    s: f64,
    nu: f64,
    phi0: f64,
    x0: f64,
    dx: f64,
    r_min: f64,
    r_max: f64,
    log_phi: Vec<f64>,
    slope: Vec<f64>,
}

impl SobolevKernel {
    pub fn new(d: usize, s: f64) -> Result<Self> {
        Self::with_scale(d, s, 1.0)
    }

    /// Table spanning `[1e-6, 1e3] · scale`.
    pub fn with_scale(d: usize, s: f64, scale: f64) -> Result<Self> {
        let nu = check_order(d, s)?;
        if !(scale > 0.0) || !scale.is_finite() {
            return Err(Error::InvalidInput("kernel scale must be positive".into()));
        }
        let (r_min, r_max) = (TABLE_MIN * scale, TABLE_MAX * scale);
        let x0 = r_min.ln();
        let dx = (r_max.ln() - x0) / (TABLE_POINTS - 1) as f64;
        let rows: Vec<(f64, f64)> = (0..TABLE_POINTS)
            .into_par_iter()
            .map(|i| log_phi_and_slope((x0 + dx * i as f64).exp(), d, nu, s))
            .collect();
        let (log_phi, slope): (Vec<f64>, Vec<f64>) = rows.into_iter().unzip();
        let phi0 = phi_at_zero(d, s);
        if log_phi.windows(2).any(|w| w[1] > w[0]) || log_phi[0] > phi0.ln() + 1e-12 {
            return Err(Error::InvalidInput("tabulated kernel is not monotone".into()));
        }
        Ok(SobolevKernel {
            d,
            s,
            nu,
            phi0,
            x0,
            dx,
            r_min,
            r_max,
            log_phi,
            slope,
        })
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn order(&self) -> f64 {
        self.s
    }

    /// ‖Φ_s‖_∞ = Φ_s(0).
    pub fn at_zero(&self) -> f64 {
        self.phi0
    }

    pub fn eval(&self, r: f64) -> f64 {
        if r <= 0.0 {
            return self.phi0;
        }
        if r < self.r_min || r >= self.r_max {
            return (log_prefactor(self.d, self.s) + log_subordination_integral(self.nu, r)).exp();
        }
        let x = (r.ln() - self.x0) / self.dx;
        let i = (x.floor() as usize).min(TABLE_POINTS - 2);
        let t = x - i as f64;
        let (y0, y1) = (self.log_phi[i], self.log_phi[i + 1]);
        let (m0, m1) = (self.slope[i] * self.dx, self.slope[i + 1] * self.dx);
        let t2 = t * t;
        let t3 = t2 * t;
        let y = (2.0 * t3 - 3.0 * t2 + 1.0) * y0
            + (t3 - 2.0 * t2 + t) * m0
            + (-2.0 * t3 + 3.0 * t2) * y1
            + (t3 - t2) * m1;
        y.exp()
    }

    /// Φ_s evaluated at the Euclidean distance between two points.
    #[inline]
    pub fn between<T: Real>(&self, a: &[T], b: &[T]) -> f64 {
        let mut s = 0.0;
        for (&x, &y) in a.iter().zip(b) {
            let d = to_f64(x) - to_f64(y);
            s += d * d;
        }
        self.eval(s.sqrt())
    }
}

fn self_energy<T: Real>(k: &SobolevKernel, m: crate::state::MeasureView<'_, T>) -> f64 {
    let n = m.len();
    let mut off = 0.0;
    for i in 0..n {
        let a = m.atom(i);
        for j in (i + 1)..n {
            off += k.between(a, m.atom(j));
        }
    }
    (n as f64 * k.phi0 + 2.0 * off) / (n as f64 * n as f64)
}

/// ‖μ − ν‖²_{H⁻ˢ} = ∫∫ Φ_s(x − y) (μ − ν)^{⊗2}(dx, dy), with Euclidean
/// differences of the stored coordinates.
pub fn hs_sq<T: Real>(mu: &impl AsMeasure<T>, nu: &impl AsMeasure<T>, kernel: &SobolevKernel) -> Result<T> {
    let (a, b) = (mu.as_view(), nu.as_view());
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptyMeasure);
    }
    if a.dim != kernel.d || b.dim != kernel.d {
        return Err(Error::SizeMismatch(format!(
            "kernel dimension {} but measures of dimension {} and {}",
            kernel.d, a.dim, b.dim
        )));
    }
    let (n, m) = (a.len(), b.len());
    let mut cross = 0.0;
    for i in 0..n {
        let x = a.atom(i);
        for j in 0..m {
            cross += kernel.between(x, b.atom(j));
        }
    }
    let v = self_energy(kernel, a) + self_energy(kernel, b) - 2.0 * cross / (n as f64 * m as f64);
    Ok(T::from(v.max(0.0)).unwrap())
}
