//! Coupling error reports shared by the diffusion and jump couplings.

use std::io::Write;

use crate::error::{Error, Result};
use crate::real::{to_f64, Real};
use crate::rng::RngStream;
use crate::state::{fmt_f64, Domain, TrajectoryBundle};
use crate::stats::{bootstrap_mean_ci, mean, percentile_interval, BOOTSTRAP_RESAMPLES};

/// Picard settings shared by the nonlinear references.
#[derive(Clone, Copy, Debug)]
pub struct PicardConfig {
    pub iterations: usize,
    /// Largest final increment (W₁ at T) still flagged as converged.
    pub tol: f64,
}

impl Default for PicardConfig {
    fn default() -> Self {
        PicardConfig {
            iterations: 2,
            tol: 0.05,
        }
    }
}

/// Coupling errors of one replica, averaged over the N coupled pairs.
#[derive(Clone, Debug, PartialEq)]
pub struct ReplicaErrors {
    /// mean over i of sup_t |Xⁱ_t − X̄ⁱ_t|^p
    pub sup: f64,
    /// mean over i of |Xⁱ_t − X̄ⁱ_t|^p at each grid time
    pub curve: Vec<f64>,
}

impl ReplicaErrors {
    /// Compares slot i of `particles` with slot i of `copies` on every grid time.
    ///
    /// `copies` may hold more particles than `particles`; only the first N are used.
    pub fn from_bundles<T: Real>(
        particles: &TrajectoryBundle<T>,
        copies: &TrajectoryBundle<T>,
        p: f64,
        domain: Domain,
    ) -> Result<Self> {
        if particles.times.len() != copies.times.len()
            || particles
                .times
                .iter()
                .zip(&copies.times)
                .any(|(a, b)| (to_f64(*a) - to_f64(*b)).abs() > 1e-9 * to_f64(*b).abs().max(1.0))
        {
            return Err(Error::GridMismatch("particle and reference grids differ".into()));
        }
        let n = particles.n();
        if copies.n() < n || copies.dim() != particles.dim() {
            return Err(Error::SizeMismatch(format!(
                "{} reference copies for {n} particles",
                copies.n()
            )));
        }
        let mut sup = vec![0.0f64; n];
        let mut curve = Vec::with_capacity(particles.times.len());
        for (a, b) in particles.states.iter().zip(&copies.states) {
            let mut acc = 0.0;
            for (i, s) in sup.iter_mut().enumerate() {
                let e = to_f64(domain.distance(a.particle(i), b.particle(i))).powf(p);
                acc += e;
                *s = s.max(e);
            }
            curve.push(acc / n as f64);
        }
        Ok(ReplicaErrors {
            sup: mean(&sup),
            curve,
        })
    }
}

/// Aggregated pathwise and pointwise coupling errors ε(N, T).
#[derive(Clone, Debug, PartialEq)]
pub struct CouplingReport {
    pub n: usize,
    pub t_end: f64,
    pub dt: f64,
    pub p: f64,
    pub seed: u64,
    pub times: Vec<f64>,
    /// Per-replica pathwise errors.
    pub pathwise: Vec<f64>,
    /// E|Xⁱ_t − X̄ⁱ_t|^p at each grid time.
    pub pointwise_curve: Vec<f64>,
    /// Per-replica errors at the time where the pointwise curve peaks.
    pub pointwise: Vec<f64>,
    pub pathwise_eps: f64,
    pub pointwise_eps: f64,
    /// Bootstrap interval of `pathwise_eps`.
    pub ci_lo: f64,
    pub ci_hi: f64,
    /// Bootstrap interval of `pointwise_eps`.
    pub pointwise_ci_lo: f64,
    pub pointwise_ci_hi: f64,
    /// Mean per-event transport cost of the optimal-jump coupling.
    pub transport_cost: Option<f64>,
}

/// Identification of a coupling experiment, copied into the report.
#[derive(Clone, Copy, Debug)]
pub struct ReportMeta {
    pub n: usize,
    pub t_end: f64,
    pub dt: f64,
    pub p: f64,
    pub seed: u64,
}

impl CouplingReport {
    pub fn from_replicas(
        meta: ReportMeta,
        times: Vec<f64>,
        replicas: &[ReplicaErrors],
        rng: &RngStream,
    ) -> Result<Self> {
        if replicas.is_empty() {
            return Err(Error::InvalidInput("coupling report needs at least one replica".into()));
        }
        let k = times.len();
        if replicas.iter().any(|r| r.curve.len() != k) {
            return Err(Error::GridMismatch("replica curves have different lengths".into()));
        }
        let pathwise: Vec<f64> = replicas.iter().map(|r| r.sup).collect();
        let pointwise_curve: Vec<f64> = (0..k)
            .map(|t| replicas.iter().map(|r| r.curve[t]).sum::<f64>() / replicas.len() as f64)
            .collect();
        let peak = (0..k).fold(0, |best, t| if pointwise_curve[t] > pointwise_curve[best] { t } else { best });
        let pointwise_eps = pointwise_curve.get(peak).copied().unwrap_or(0.0);
        let pointwise: Vec<f64> = replicas.iter().map(|r| r.curve.get(peak).copied().unwrap_or(0.0)).collect();
        let pathwise_eps = mean(&pathwise);
        let mut boot = rng.rng();
        let (ci_lo, ci_hi) = bootstrap_mean_ci(&pathwise, &mut boot);
        let (pointwise_ci_lo, pointwise_ci_hi) = peak_ci(replicas, &mut boot);
        Ok(CouplingReport {
            n: meta.n,
            t_end: meta.t_end,
            dt: meta.dt,
            p: meta.p,
            seed: meta.seed,
            times,
            pathwise,
            pointwise_curve,
            pointwise,
            pathwise_eps,
            pointwise_eps,
            ci_lo: ci_lo.min(pathwise_eps),
            ci_hi: ci_hi.max(pathwise_eps),
            pointwise_ci_lo: pointwise_ci_lo.min(pointwise_eps),
            pointwise_ci_hi: pointwise_ci_hi.max(pointwise_eps),
            transport_cost: None,
        })
    }

}

/// Bootstrap interval of max_t of the replica-averaged curve.
fn peak_ci(replicas: &[ReplicaErrors], rng: &mut crate::rng::StreamRng) -> (f64, f64) {
    let (r, k) = (replicas.len(), replicas[0].curve.len());
    let stats = (0..BOOTSTRAP_RESAMPLES)
        .map(|_| {
            let mut acc = vec![0.0; k];
            for _ in 0..r {
                for (a, v) in acc.iter_mut().zip(&replicas[rng.index(r)].curve) {
                    *a += v;
                }
            }
            acc.iter().fold(0.0f64, |m, &v| m.max(v / r as f64))
        })
        .collect();
    percentile_interval(stats)
}

impl CouplingReport {
    pub const CSV_HEADER: &'static str = "N,T,dt,p,pathwise_eps,pointwise_eps,ci_lo,ci_hi,seed";

    pub fn write_csv_row<W: Write>(&self, w: &mut W) -> Result<()> {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{}",
            self.n,
            fmt_f64(self.t_end),
            fmt_f64(self.dt),
            fmt_f64(self.p),
            fmt_f64(self.pathwise_eps),
            fmt_f64(self.pointwise_eps),
            fmt_f64(self.ci_lo),
            fmt_f64(self.ci_hi),
            self.seed
        )?;
        Ok(())
    }

    /// Header plus one row per report.
    pub fn write_csv<W: Write>(reports: &[CouplingReport], w: &mut W) -> Result<()> {
        writeln!(w, "{}", Self::CSV_HEADER)?;
        for r in reports {
            r.write_csv_row(w)?;
        }
        Ok(())
    }
}
