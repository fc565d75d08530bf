//! Chaos estimators, theorem-bound monitors and N-sweeps.
//!
//! Laws on P(P(E)) are never stored. Every quantity at that level is a Monte
//! Carlo average over replicas against a Dirac target δ_f, with f represented
//! by a large sample or an exact finite-state vector.

use std::io::Write;

use rayon::prelude::*;

use crate::error::{invalid, Error, Result};
use crate::jumps::{choose_leader_model, pdmp_simulate, JumpRun, LeaderKernel};
use crate::mckean::{
    drift_mismatch_replica, kuramoto_model, linear_drift_model, nonlinear_reference, simulate_particles,
    synchronous_coupling, wrapped_normal_init, DiffusionReference, DiffusionRun, ReferenceConfig, SyncConfig,
};
use crate::metrics::{
    hs_sq, w1_exact_circle, wp_assignment_with, AsMeasure, Ground, LipschitzFamily, SobolevKernel,
    WpOptions, DEFAULT_ASSIGNMENT_CAP,
};
use crate::model::DiffusionModel;
use crate::oracle::{nonlinear_finite_ode, FiniteModel};
use crate::rng::{purpose, run_replicas, RngStream, StreamRng};
use crate::state::{fmt_f64, Domain, EmpiricalMeasure, MeasureView, ParticleState};
use crate::stats::{bootstrap_mean_ci, fit_loglog, mean, percentile_interval, SlopeFit, BOOTSTRAP_RESAMPLES};

/// A point estimate with a 95% interval.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Estimate {
    pub value: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
}

impl Estimate {
    pub fn exact(value: f64) -> Self {
        Estimate {
            value,
            ci_lo: value,
            ci_hi: value,
        }
    }

    /// Mean of `xs` with a bootstrap interval.
    pub fn of_mean(xs: &[f64], rng: &mut StreamRng) -> Self {
        let value = mean(xs);
        let (lo, hi) = bootstrap_mean_ci(xs, rng);
        Estimate {
            value,
            ci_lo: lo.min(value),
            ci_hi: hi.max(value),
        }
    }

    pub fn width(&self) -> f64 {
        self.ci_hi - self.ci_lo
    }
}

/// Smallest replica count accepted by [`omega_estimates`].
pub const MIN_OMEGA_REPLICAS: usize = 30;

/// Independent split-half draws averaged into each noise floor.
const FLOOR_DRAWS: u64 = 4;

/// Ω_k, Ω_N and Ω_∞ with their split-half noise floors.
#[derive(Clone, Debug)]
pub struct OmegaEstimates {
    pub k: usize,
    pub p: u32,
    pub omega_k: Estimate,
    pub omega_n: Estimate,
    pub omega_inf: Estimate,
    pub floor_k: f64,
    pub floor_n: f64,
    pub floor_inf: f64,
}

/// W_p between the empirical measures `a` and `b`, sizes arbitrary.
///
/// Scalars on the line use the quantile coupling; W₁ on the circle is exact.
/// Otherwise the smaller measure's atoms are replicated against a subsample
/// of the larger one whose size is a multiple of the smaller, and the
/// assignment is solved exactly.
pub fn wp_between(a: MeasureView<'_, f64>, b: MeasureView<'_, f64>, p: u32, domain: Domain, rng: &mut StreamRng) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptyMeasure);
    }
    if p != 1 && p != 2 {
        return invalid(format!("p = {p} is not supported; use 1 or 2"));
    }
    if a.dim != b.dim {
        return Err(Error::SizeMismatch(format!("dimensions {} and {}", a.dim, b.dim)));
    }
    match (a.dim, domain) {
        (1, Domain::Euclidean) => {
            let mut xs: Vec<f64> = a.iter().map(|x| x[0]).collect();
            let mut ys: Vec<f64> = b.iter().map(|x| x[0]).collect();
            xs.sort_by(f64::total_cmp);
            ys.sort_by(f64::total_cmp);
            Ok(wp_sorted_1d(&xs, &ys, p))
        }
        (1, Domain::Torus) if p == 1 => w1_exact_circle(&a, &b),
        _ => {
            let (small, large) = if a.len() <= b.len() { (a, b) } else { (b, a) };
            let q = large.len() / small.len();
            let size = q * small.len();
            let keep = rand::seq::index::sample(rng, large.len(), size);
            let d = a.dim;
            let mut xs = Vec::with_capacity(size * d);
            let mut ys = Vec::with_capacity(size * d);
            for (slot, idx) in keep.iter().enumerate() {
                xs.extend_from_slice(small.atom(slot / q));
                ys.extend_from_slice(large.atom(idx));
            }
            let opts = WpOptions {
                cap: size.max(DEFAULT_ASSIGNMENT_CAP),
                ground: Ground::Domain(domain),
            };
            wp_assignment_with(&MeasureView::new(d, &xs), &MeasureView::new(d, &ys), p, &opts)
        }
    }
}

/// W_p between sorted samples through their quantile functions.
fn wp_sorted_1d(xs: &[f64], ys: &[f64], p: u32) -> f64 {
    let (n, m) = (xs.len(), ys.len());
    let (mut i, mut j, mut u) = (0usize, 0usize, 0.0f64);
    let mut acc = 0.0;
    while i < n && j < m {
        // breakpoints (i+1)/n and (j+1)/m compared in integers
        let (li, lj) = ((i + 1) * m, (j + 1) * n);
        let next = if li <= lj { (i + 1) as f64 / n as f64 } else { (j + 1) as f64 / m as f64 };
        acc += (next - u) * (xs[i] - ys[j]).abs().powi(p as i32);
        u = next;
        if li <= lj {
            i += 1;
        }
        if lj <= li {
            j += 1;
        }
    }
    acc.max(0.0).powf(1.0 / p as f64)
}

/// Cloud of `count` tuples of `k` atoms drawn with replacement from `pool`.
fn tuple_cloud(pool: MeasureView<'_, f64>, k: usize, count: usize, rng: &mut StreamRng) -> Vec<f64> {
    let d = pool.dim;
    let mut out = Vec::with_capacity(count * k * d);
    for _ in 0..count * k {
        out.extend_from_slice(pool.atom(rng.index(pool.len())));
    }
    out
}

fn block_wp(a: &[f64], b: &[f64], k: usize, d: usize, p: u32, domain: Domain) -> Result<f64> {
    let opts = WpOptions {
        cap: (a.len() / (k * d)).max(DEFAULT_ASSIGNMENT_CAP),
        ground: Ground::Blocks { k, domain },
    };
    wp_assignment_with(&MeasureView::new(k * d, a), &MeasureView::new(k * d, b), p, &opts)
}

/// Ω_k and its bootstrap interval: the first k particles of each run against
/// `count` reference k-tuples, normalised product distance.
fn omega_block(
    runs: &[ParticleState<f64>],
    pool: MeasureView<'_, f64>,
    k: usize,
    p: u32,
    rng: &RngStream,
) -> Result<(Estimate, f64)> {
    let (r, d, domain) = (runs.len(), runs[0].dim(), runs[0].domain());
    let cloud: Vec<f64> = runs.iter().flat_map(|s| s.coords()[..k * d].iter().copied()).collect();
    let target = tuple_cloud(pool, k, r, &mut rng.split(0).rng());
    let value = block_wp(&cloud, &target, k, d, p, domain)?;
    let boot = run_replicas(&rng.split(purpose::BOOTSTRAP), BOOTSTRAP_RESAMPLES, |_, s| {
        let mut g = s.rng();
        let resampled: Vec<f64> = (0..r).flat_map(|_| cloud[g.index(r) * k * d..][..k * d].to_vec()).collect();
        block_wp(&resampled, &target, k, d, p, domain)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let (lo, hi) = percentile_interval(boot);
    // split-half floor: two clouds of r/2 tuples, one from each half of the pool
    let half = pool.len() / 2;
    let (a, b) = (
        MeasureView::new(d, &pool.atoms[..half * d]),
        MeasureView::new(d, &pool.atoms[half * d..2 * half * d]),
    );
    let mut floor = 0.0;
    for draw in 0..FLOOR_DRAWS {
        let mut g = rng.split(purpose::SUBSAMPLE).split(draw).rng();
        let ca = tuple_cloud(a, k, r / 2, &mut g);
        let cb = tuple_cloud(b, k, r / 2, &mut g);
        floor += block_wp(&ca, &cb, k, d, p, domain)? / FLOOR_DRAWS as f64;
    }
    Ok((
        Estimate {
            value,
            ci_lo: lo.min(value),
            ci_hi: hi.max(value),
        },
        floor,
    ))
}

/// Ω_k, Ω_N and Ω_∞ from `runs` (R replicas of the N-particle system at one
/// time) against `reference` (M samples of the nonlinear law).
///
/// Ω_k and Ω_N compare the R-point cloud of the first k (resp. all N)
/// particles with R independent tuples drawn from the reference, under the
/// normalised product distance. Ω_∞ averages W_p(μ_{X^N}, reference) over
/// replicas. Floors are split-half self-distances of the reference at half
/// the sample size: clouds of R/2 tuples from disjoint halves for Ω_k and
/// Ω_N, ⌈N/2⌉ atoms of one half against the other half for Ω_∞.
pub fn omega_estimates(
    runs: &[ParticleState<f64>],
    reference: &impl AsMeasure<f64>,
    k: usize,
    p: u32,
    rng: &RngStream,
) -> Result<OmegaEstimates> {
    if runs.len() < MIN_OMEGA_REPLICAS {
        return invalid(format!(
            "Ω estimates need at least {MIN_OMEGA_REPLICAS} replicas, got {}",
            runs.len()
        ));
    }
    if p != 1 && p != 2 {
        return invalid(format!("p = {p} is not supported; use 1 or 2"));
    }
    let (n, d, domain) = (runs[0].n(), runs[0].dim(), runs[0].domain());
    if runs.iter().any(|s| s.n() != n || s.dim() != d || s.domain() != domain) {
        return Err(Error::SizeMismatch("replicas differ in size, dimension or domain".into()));
    }
    if k == 0 || k > n {
        return invalid(format!("k = {k} must lie in 1..={n}"));
    }
    let pool = reference.as_view();
    if pool.dim != d {
        return Err(Error::SizeMismatch(format!("reference dimension {} but particles of dimension {d}", pool.dim)));
    }
    if pool.len() < 2 * n {
        return invalid(format!("reference of {} samples is too small for N = {n}", pool.len()));
    }
    let (omega_k, floor_k) = omega_block(runs, pool, k, p, &rng.split(1))?;
    let (omega_n, floor_n) = omega_block(runs, pool, n, p, &rng.split(2))?;

    let inf_root = rng.split(3);
    let per_run = runs
        .par_iter()
        .enumerate()
        .map(|(r, s)| wp_between(s.view(), pool, p, domain, &mut inf_root.split(r as u64).rng()))
        .collect::<Result<Vec<_>>>()?;
    let omega_inf = Estimate::of_mean(&per_run, &mut inf_root.split(purpose::BOOTSTRAP).rng());
    let half = pool.len() / 2;
    let (a, b) = (
        MeasureView::new(d, &pool.atoms[..half * d]),
        MeasureView::new(d, &pool.atoms[half * d..2 * half * d]),
    );
    let floor_root = inf_root.split(purpose::SUBSAMPLE);
    let floors = (0..runs.len())
        .into_par_iter()
        .map(|r| {
            let mut g = floor_root.split(r as u64).rng();
            let draw = tuple_cloud(a, n.div_ceil(2), 1, &mut g);
            wp_between(MeasureView::new(d, &draw), b, p, domain, &mut g)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(OmegaEstimates {
        k,
        p,
        omega_k,
        omega_n,
        omega_inf,
        floor_k,
        floor_n,
        floor_inf: mean(&floors),
    })
}

/// Reference curve β_d(N) for E W_p^p(μ_N, f), with C(p, q) = 1.
///
/// q is the order of the available moment. The case split follows the sign
/// of p − d/2; the values of q where the rate changes form are excluded.
pub fn fournier_guillin_beta(n: usize, d: usize, p: f64, q: f64) -> Result<f64> {
    if n == 0 || d == 0 {
        return invalid("β_d(N) needs N ≥ 1 and d ≥ 1");
    }
    if !(p > 0.0) || !(q > p) || !q.is_finite() {
        return invalid(format!("β_d(N) needs 0 < p < q < ∞, got p = {p}, q = {q}"));
    }
    let nf = n as f64;
    let half = d as f64 / 2.0;
    let tail = nf.powf(-(q - p) / q);
    let close = |a: f64, b: f64| (a - b).abs() <= 1e-12 * b.abs().max(1.0);
    if close(p, half) {
        if close(q, 2.0 * p) {
            return Err(Error::ExcludedCase(format!("p = d/2 = {p} with q = 2p")));
        }
        Ok(nf.powf(-0.5) * (1.0 + nf).ln() + tail)
    } else if p > half {
        if close(q, 2.0 * p) {
            return Err(Error::ExcludedCase(format!("p = {p} > d/2 with q = 2p")));
        }
        Ok(nf.powf(-0.5) + tail)
    } else {
        let critical = d as f64 / (d as f64 - p);
        if close(q, critical) {
            return Err(Error::ExcludedCase(format!("p = {p} < d/2 with q = d/(d−p) = {critical}")));
        }
        Ok(nf.powf(-p / d as f64) + tail)
    }
}

/// Size of the reference sample in [`iid_wasserstein_rate_check`].
pub const IID_REFERENCE_SIZE: usize = 100_000;

/// E W_p(μ_N, f̂) per N for i.i.d. samples, and its log-log fit.
#[derive(Clone, Debug)]
pub struct IidRateCheck {
    pub ns: Vec<usize>,
    /// Per-replica distances for each N.
    pub samples: Vec<Vec<f64>>,
    pub means: Vec<f64>,
    /// None when some mean distance is zero.
    pub fit: Option<SlopeFit>,
}

/// Samples i.i.d. clouds of size N and measures their W_p distance to a
/// reference of [`IID_REFERENCE_SIZE`] draws.
///
/// On the line the full reference is used through quantiles. In higher
/// dimension each cloud is matched against N reference atoms drawn without
/// replacement, by exact assignment.
pub fn iid_wasserstein_rate_check<F>(
    sampler: F,
    d: usize,
    p: u32,
    ns: &[usize],
    reps: usize,
    rng: &RngStream,
) -> Result<IidRateCheck>
where
    F: Fn(&mut StreamRng, &mut [f64]) + Sync,
{
    if ns.is_empty() || reps == 0 || d == 0 {
        return invalid("rate check needs sweep points, replicas and d ≥ 1");
    }
    if p != 1 && p != 2 {
        return invalid(format!("p = {p} is not supported; use 1 or 2"));
    }
    if let Some(&big) = ns.iter().find(|&&n| n == 0 || n > IID_REFERENCE_SIZE) {
        return invalid(format!("N = {big} must lie in 1..={IID_REFERENCE_SIZE}"));
    }
    let mut g = rng.split(purpose::REFERENCE).rng();
    let mut reference = vec![0.0; IID_REFERENCE_SIZE * d];
    for x in reference.chunks_exact_mut(d) {
        sampler(&mut g, x);
    }
    if d == 1 {
        reference.sort_by(f64::total_cmp);
    }
    let mut samples = Vec::with_capacity(ns.len());
    for &n in ns {
        let row = run_replicas(&rng.split(n as u64), reps, |_, s| {
            let mut g = s.split(purpose::INIT).rng();
            let mut xs = vec![0.0; n * d];
            for x in xs.chunks_exact_mut(d) {
                sampler(&mut g, x);
            }
            if d == 1 {
                xs.sort_by(f64::total_cmp);
                return Ok(wp_sorted_1d(&xs, &reference, p));
            }
            let mut sub = s.split(purpose::SUBSAMPLE).rng();
            let keep = rand::seq::index::sample(&mut sub, IID_REFERENCE_SIZE, n);
            let ys: Vec<f64> = keep.iter().flat_map(|i| reference[i * d..(i + 1) * d].iter().copied()).collect();
            let opts = WpOptions {
                cap: n.max(DEFAULT_ASSIGNMENT_CAP),
                ground: Ground::Domain(Domain::Euclidean),
            };
            wp_assignment_with(&MeasureView::new(d, &xs), &MeasureView::new(d, &ys), p, &opts)
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
        samples.push(row);
    }
    let means: Vec<f64> = samples.iter().map(|s| mean(s)).collect();
    let fit = if ns.len() >= 2 && means.iter().all(|&m| m > 0.0) {
        let xs: Vec<f64> = ns.iter().map(|&n| n as f64).collect();
        Some(fit_loglog(&xs, &samples, &mut rng.split(purpose::BOOTSTRAP).rng())?)
    } else {
        None
    };
    Ok(IidRateCheck {
        ns: ns.to_vec(),
        samples,
        means,
        fit,
    })
}

/// Monte Carlo value of the pathwise entropy bound, with its replicas.
#[derive(Clone, Debug)]
pub struct GirsanovEstimate {
    pub estimate: Estimate,
    pub replicas: Vec<f64>,
}

/// Estimates ½ E ∫₀ᵀ |b(X¹_t, μ_{X^N_t}) − b(X¹_t, f_t)|² dt, the upper bound
/// on the relative entropy of the one-particle path law (σ = I).
///
/// This is a bound on the entropy, not the entropy. Replica r runs with
/// `rng.split(r)`; the interval is a replica bootstrap.
pub fn girsanov_entropy_rhs<M, F>(
    model: &M,
    n: usize,
    reference: &DiffusionReference<f64>,
    run: &DiffusionRun<f64>,
    init: F,
    reps: usize,
    rng: &RngStream,
) -> Result<GirsanovEstimate>
where
    M: DiffusionModel<f64> + ?Sized,
    F: Fn(&mut StreamRng, &mut [f64]) + Sync,
{
    if reps == 0 {
        return invalid("entropy bound needs at least one replica");
    }
    let replicas = run_replicas(rng, reps, |_, s| drift_mismatch_replica(model, n, reference, run, &init, &s))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let estimate = Estimate::of_mean(&replicas, &mut rng.split(purpose::BOOTSTRAP).rng());
    Ok(GirsanovEstimate { estimate, replicas })
}

/// Outcome of [`hs_block_bound_check`].
#[derive(Clone, Debug)]
pub struct BlockBoundCheck {
    /// E‖μ_{X^{M,N}} − μ_{X^N}‖²_{H⁻ˢ}
    pub lhs: Estimate,
    /// 2 Φ_s(0) (1/M − 1/N)
    pub rhs: f64,
    pub pass: bool,
}

/// Compares the block empirical measure of the first M particles with the
/// full empirical measure, averaged over exchangeable clouds.
///
/// Passes when the mean lies below the bound plus two interval widths.
pub fn hs_block_bound_check(
    samples: &[ParticleState<f64>],
    m: usize,
    kernel: &SobolevKernel,
    rng: &RngStream,
) -> Result<BlockBoundCheck> {
    let Some(first) = samples.first() else {
        return invalid("block bound needs at least one cloud");
    };
    let (n, d) = (first.n(), first.dim());
    if samples.iter().any(|s| s.n() != n || s.dim() != d) {
        return Err(Error::SizeMismatch("clouds differ in size or dimension".into()));
    }
    if m == 0 || m > n {
        return invalid(format!("block size M = {m} must lie in 1..={n}"));
    }
    let values = if m == n {
        vec![0.0; samples.len()]
    } else {
        samples
            .par_iter()
            .map(|s| hs_sq(&MeasureView::new(d, &s.coords()[..m * d]), s, kernel))
            .collect::<Result<Vec<f64>>>()?
    };
    let lhs = Estimate::of_mean(&values, &mut rng.rng());
    let rhs = 2.0 * kernel.at_zero() * (1.0 / m as f64 - 1.0 / n as f64);
    Ok(BlockBoundCheck {
        lhs,
        rhs,
        pass: lhs.value <= rhs + 2.0 * lhs.width(),
    })
}

/// One sweep point of [`toy_linear_d2_check`].
#[derive(Clone, Debug)]
pub struct ToyLinearRow {
    pub n: usize,
    /// g_N(t) = max_φ E⟨μ_t − f_t, φ⟩².
    pub raw: f64,
    /// E⟨μ₀ − f₀, P_t φ*⟩², the initial fluctuation carried to time t.
    pub residual: f64,
    /// max_φ E[⟨μ_t − f_t, φ⟩² − ⟨μ₀ − f₀, P_t φ⟩²], attained at φ*.
    pub excess: f64,
    /// Per-replica excess at φ*.
    pub samples: Vec<f64>,
}

/// Outcome of [`toy_linear_d2_check`].
#[derive(Clone, Debug)]
pub struct ToyLinearCheck {
    pub f_t: Vec<f64>,
    pub rows: Vec<ToyLinearRow>,
    /// Fit of the excess against N; None when an excess is not positive.
    pub fit: Option<SlopeFit>,
}

/// `e^{t(K−I)} φ` on `{0, …, m−1}` by uniformization.
pub fn leader_semigroup(kernel: &[f64], m: usize, t: f64, phi: &[f64]) -> Vec<f64> {
    let mut term = phi.to_vec();
    let mut weight = (-t).exp();
    let mut out: Vec<f64> = term.iter().map(|v| v * weight).collect();
    let mut mass = weight;
    let mut k = 0usize;
    while 1.0 - mass > 1e-17 && k < 10_000 {
        k += 1;
        term = (0..m).map(|x| (0..m).map(|y| kernel[x * m + y] * term[y]).sum()).collect();
        weight *= t / k as f64;
        mass += weight;
        for (o, v) in out.iter_mut().zip(&term) {
            *o += weight * v;
        }
    }
    out
}

fn categorical(p: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (k, &pk) in p.iter().enumerate() {
        acc += pk;
        if u < acc {
            return k;
        }
    }
    p.iter().rposition(|&pk| pk > 0.0).unwrap_or(p.len() - 1)
}

/// Squared D₂-type statistic of the choose-the-leader model on a finite set.
///
/// Particles start i.i.d. from `f0` and the model has no flow. For a test
/// function φ, ⟨μ_t − f_t, φ⟩ splits into the initial fluctuation
/// ⟨μ₀ − f₀, P_t φ⟩ and a mean-zero martingale part, with P_t = e^{t(K−I)}.
/// Subtracting the first from the same replicas leaves the O(1/N) dynamic
/// part. The family's tents are evaluated at the states 0, …, m−1.
pub fn toy_linear_d2_check(
    kernel: &[f64],
    f0: &[f64],
    ns: &[usize],
    t: f64,
    family: &LipschitzFamily,
    reps: usize,
    rng: &RngStream,
) -> Result<ToyLinearCheck> {
    let m = f0.len();
    if m == 0 || kernel.len() != m * m {
        return invalid("kernel must be m × m with m = len(f0)");
    }
    if f0.iter().any(|&p| !(p >= 0.0)) || (f0.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
        return invalid("f0 must be a probability vector");
    }
    if ns.is_empty() || ns.contains(&0) || reps == 0 {
        return invalid("toy check needs positive N values and replicas");
    }
    if family.dim() != 1 || family.is_empty() {
        return invalid("toy check needs a nonempty one-dimensional test family");
    }
    if !(t > 0.0) {
        return invalid("horizon must be positive");
    }
    let f_t = nonlinear_finite_ode(&FiniteModel::choose_leader(kernel.to_vec(), 1)?, f0, t)?;
    let phis: Vec<Vec<f64>> = family
        .tents()
        .iter()
        .map(|tent| (0..m).map(|e| tent.eval(&[e as f64])).collect())
        .collect();
    let pushed: Vec<Vec<f64>> = phis.iter().map(|phi| leader_semigroup(kernel, m, t, phi)).collect();
    let model = choose_leader_model(LeaderKernel::Finite {
        m,
        rows: kernel.to_vec(),
    })?;
    let run = JumpRun::new(t, 1).without_log();
    let mut rows = Vec::with_capacity(ns.len());
    for &n in ns {
        // (⟨μ_t − f_t, φ⟩, ⟨μ₀ − f₀, P_t φ⟩) for every φ, per replica
        let pairs = run_replicas(&rng.split(n as u64), reps, |_, s| -> Result<Vec<(f64, f64)>> {
            let mut g = s.split(purpose::INIT).rng();
            let xs: Vec<f64> = (0..n).map(|_| categorical(f0, g.uniform()) as f64).collect();
            let out = pdmp_simulate(&model, &ParticleState::from_scalars(0.0, xs)?, &run, &s, None)?;
            let hist = |st: &ParticleState<f64>| {
                let mut h = vec![0.0; m];
                for &x in st.coords() {
                    h[(x.round() as usize).min(m - 1)] += 1.0 / n as f64;
                }
                h
            };
            let (h0, ht) = (hist(&out.bundle.states[0]), hist(out.bundle.last()));
            Ok(phis
                .iter()
                .zip(&pushed)
                .map(|(phi, pphi)| {
                    let a: f64 = (0..m).map(|e| (ht[e] - f_t[e]) * phi[e]).sum();
                    let b: f64 = (0..m).map(|e| (h0[e] - f0[e]) * pphi[e]).sum();
                    (a, b)
                })
                .collect())
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
        let per_phi = |j: usize, f: &dyn Fn(f64, f64) -> f64| pairs.iter().map(|r| f(r[j].0, r[j].1)).sum::<f64>() / reps as f64;
        let raw = (0..phis.len()).map(|j| per_phi(j, &|a, _| a * a)).fold(0.0, f64::max);
        let excess_of = |j: usize| per_phi(j, &|a, b| a * a - b * b);
        let best = (0..phis.len()).fold(0, |b, j| if excess_of(j) > excess_of(b) { j } else { b });
        rows.push(ToyLinearRow {
            n,
            raw,
            residual: per_phi(best, &|_, b| b * b),
            excess: excess_of(best),
            samples: pairs.iter().map(|r| r[best].0 * r[best].0 - r[best].1 * r[best].1).collect(),
        });
    }
    let fit = if rows.len() >= 2 && rows.iter().all(|r| r.excess > 0.0) {
        let xs: Vec<f64> = rows.iter().map(|r| r.n as f64).collect();
        let samples: Vec<Vec<f64>> = rows.iter().map(|r| r.samples.clone()).collect();
        Some(fit_loglog(&xs, &samples, &mut rng.split(purpose::BOOTSTRAP).rng())?)
    } else {
        None
    };
    Ok(ToyLinearCheck { f_t, rows, fit })
}

pub const MODEL_TAGS: &[&str] = &["kuramoto", "linear-drift", "choose-leader"];
pub const METRIC_TAGS: &[&str] = &["coupling", "omega", "girsanov", "d2"];

/// Parameters of [`sweep`].
#[derive(Clone, Debug, PartialEq)]
pub struct SweepConfig {
    pub model: String,
    pub metric: String,
    pub ns: Vec<usize>,
    pub reps: usize,
    pub seed: u64,
    pub t_end: f64,
    pub dt: f64,
    /// Kuramoto coupling strength.
    pub k0: f64,
    pub sigma: f64,
    pub init_mean: f64,
    pub init_sd: f64,
    /// Exponent of the coupling errors and of W_p.
    pub p: f64,
    /// Moment order used for the β_d(N) reference row.
    pub q: f64,
    /// Block size of Ω_k.
    pub k: usize,
    /// Reference copies; default 16 · max N.
    pub reference_size: Option<usize>,
    /// Row-major leader kernel of the finite model.
    pub kernel: Vec<f64>,
    pub f0: Vec<f64>,
    /// Dyadic levels of the D₂ test family.
    pub levels: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            model: "kuramoto".into(),
            metric: "coupling".into(),
            ns: Vec::new(),
            reps: 32,
            seed: 0,
            t_end: 1.0,
            dt: 1e-2,
            k0: 1.0,
            sigma: 0.5,
            init_mean: 0.0,
            init_sd: 1.0,
            p: 2.0,
            q: 6.0,
            k: 2,
            reference_size: None,
            kernel: vec![0.6, 0.3, 0.1, 0.2, 0.6, 0.2, 0.1, 0.3, 0.6],
            f0: vec![0.7, 0.2, 0.1],
            levels: 3,
        }
    }
}

/// One CSV row of a [`ChaosReport`].
#[derive(Clone, Debug, PartialEq)]
pub struct ChaosRow {
    pub n: usize,
    pub estimator: String,
    pub value: Estimate,
}

/// Per-N estimates of a sweep and the log-log fit of each estimator.
#[derive(Clone, Debug)]
pub struct ChaosReport {
    pub config: SweepConfig,
    pub rows: Vec<ChaosRow>,
    /// (estimator, fit); NaN slopes when an estimate is zero.
    pub fits: Vec<(String, SlopeFit)>,
}

impl ChaosReport {
    pub const CSV_HEADER: &'static str =
        "model,N,T,dt,reps,metric,estimator,value,ci_lo,ci_hi,slope,slope_ci_lo,slope_ci_hi,seed";

    pub fn fit(&self, estimator: &str) -> Option<&SlopeFit> {
        self.fits.iter().find(|(e, _)| e == estimator).map(|(_, f)| f)
    }

    pub fn rows_of<'a>(&'a self, estimator: &'a str) -> impl Iterator<Item = &'a ChaosRow> + 'a {
        self.rows.iter().filter(move |r| r.estimator == estimator)
    }

    pub fn write_csv<W: Write>(&self, w: &mut W) -> Result<()> {
        writeln!(w, "{}", Self::CSV_HEADER)?;
        let c = &self.config;
        for row in &self.rows {
            let fit = self.fit(&row.estimator).copied().unwrap_or(SlopeFit {
                slope: f64::NAN,
                intercept: f64::NAN,
                ci_lo: f64::NAN,
                ci_hi: f64::NAN,
            });
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                c.model,
                row.n,
                fmt_f64(c.t_end),
                fmt_f64(c.dt),
                c.reps,
                c.metric,
                row.estimator,
                fmt_f64(row.value.value),
                fmt_f64(row.value.ci_lo),
                fmt_f64(row.value.ci_hi),
                fmt_f64(fit.slope),
                fmt_f64(fit.ci_lo),
                fmt_f64(fit.ci_hi),
                c.seed
            )?;
        }
        Ok(())
    }
}

fn check_tag(kind: &'static str, tag: &str, valid: &[&str]) -> Result<()> {
    if valid.contains(&tag) {
        Ok(())
    } else {
        Err(Error::UnknownTag {
            kind,
            tag: tag.to_string(),
            valid: valid.join(", "),
        })
    }
}

/// Collects rows and the per-replica samples behind them.
struct Collector {
    rows: Vec<ChaosRow>,
    samples: Vec<(String, Vec<f64>, Vec<Vec<f64>>)>,
}

impl Collector {
    fn push(&mut self, n: usize, estimator: &str, value: Estimate, samples: Vec<f64>) {
        self.rows.push(ChaosRow {
            n,
            estimator: estimator.to_string(),
            value,
        });
        match self.samples.iter_mut().find(|(e, _, _)| e == estimator) {
            Some((_, ns, s)) => {
                ns.push(n as f64);
                s.push(samples);
            }
            None => self.samples.push((estimator.to_string(), vec![n as f64], vec![samples])),
        }
    }

    fn push_omega(&mut self, n: usize, o: &OmegaEstimates) {
        self.push(n, "omega_k", o.omega_k, vec![o.omega_k.value]);
        self.push(n, "omega_n", o.omega_n, vec![o.omega_n.value]);
        self.push(n, "omega_inf", o.omega_inf, vec![o.omega_inf.value]);
    }

    fn finish(self, config: SweepConfig, rng: &RngStream) -> ChaosReport {
        let nan = SlopeFit {
            slope: f64::NAN,
            intercept: f64::NAN,
            ci_lo: f64::NAN,
            ci_hi: f64::NAN,
        };
        let fits = self
            .samples
            .iter()
            .enumerate()
            .map(|(j, (e, ns, s))| {
                let fit = fit_loglog(ns, s, &mut rng.split(j as u64).rng()).unwrap_or(nan);
                (e.clone(), fit)
            })
            .collect();
        ChaosReport {
            config,
            rows: self.rows,
            fits,
        }
    }
}

/// Runs the simulators over `config.ns` and computes the requested
/// estimator at each N.
///
/// Everything derives from `config.seed`: the reference from
/// `split(REFERENCE)`, sweep point N from `split(N)`, the fits from
/// `split(BOOTSTRAP)`.
pub fn sweep(config: &SweepConfig) -> Result<ChaosReport> {
    check_tag("model", &config.model, MODEL_TAGS)?;
    check_tag("metric", &config.metric, METRIC_TAGS)?;
    if config.ns.is_empty() {
        return invalid("sweep needs at least one N");
    }
    if config.ns.contains(&0) || config.reps == 0 {
        return invalid("N values and replica count must be positive");
    }
    let root = RngStream::new(config.seed);
    let mut out = Collector {
        rows: Vec::new(),
        samples: Vec::new(),
    };
    let n_max = *config.ns.iter().max().expect("nonempty");
    let m_ref = config.reference_size.unwrap_or(16 * n_max);
    if config.model == "choose-leader" {
        sweep_finite(config, m_ref, &root, &mut out)?;
    } else {
        sweep_diffusion(config, m_ref, &root, &mut out)?;
    }
    Ok(out.finish(config.clone(), &root.split(purpose::BOOTSTRAP)))
}

fn omega_p(p: f64) -> Result<u32> {
    if p == 1.0 || p == 2.0 {
        Ok(p as u32)
    } else {
        invalid(format!("Ω estimates need p ∈ {{1, 2}}, got {p}"))
    }
}

fn sweep_diffusion(config: &SweepConfig, m_ref: usize, root: &RngStream, out: &mut Collector) -> Result<()> {
    if config.metric == "d2" {
        return invalid("metric `d2` applies to the choose-leader model only");
    }
    let kuramoto;
    let linear;
    let model: &dyn DiffusionModel<f64> = if config.model == "kuramoto" {
        kuramoto = kuramoto_model(config.k0, config.sigma)?;
        &kuramoto
    } else {
        linear = linear_drift_model(1, config.sigma)?;
        &linear
    };
    let (mu, sd) = (config.init_mean, config.init_sd);
    let init = wrapped_normal_init(mu, sd);
    let run = DiffusionRun::new(config.t_end, config.dt, 1);
    let steps = run.steps()?;
    let run = DiffusionRun::new(config.t_end, config.dt, (steps / 10).max(1));
    let reference = nonlinear_reference(model, init, m_ref, &run, &ReferenceConfig::default(), &root.split(purpose::REFERENCE))?;
    for &n in &config.ns {
        let sn = root.split(n as u64);
        match config.metric.as_str() {
            "coupling" => {
                let sync = SyncConfig {
                    replicas: config.reps,
                    p: config.p,
                };
                let rep = synchronous_coupling(model, n, &reference, &run, init, &sync, &sn)?;
                let path = Estimate {
                    value: rep.pathwise_eps,
                    ci_lo: rep.ci_lo,
                    ci_hi: rep.ci_hi,
                };
                let point = Estimate {
                    value: rep.pointwise_eps,
                    ci_lo: rep.pointwise_ci_lo,
                    ci_hi: rep.pointwise_ci_hi,
                };
                out.push(n, "eps_pathwise", path, rep.pathwise.clone());
                out.push(n, "eps_pointwise", point, rep.pointwise.clone());
                let beta = fournier_guillin_beta(n, model.dim(), config.p, config.q)?;
                out.push(n, "beta", Estimate::exact(beta), vec![beta]);
            }
            "omega" => {
                let p = omega_p(config.p)?;
                let runs = run_replicas(&sn, config.reps, |_, s| {
                    let mut xs = vec![0.0; n];
                    for (i, x) in xs.chunks_exact_mut(1).enumerate() {
                        init(&mut s.split(i as u64).split(purpose::INIT).rng(), x);
                    }
                    let start = ParticleState::new(0.0, 1, model.domain(), xs)?;
                    Ok(simulate_particles(model, &start, &run, &s, None)?.last().clone())
                })
                .into_iter()
                .collect::<Result<Vec<_>>>()?;
                let o = omega_estimates(&runs, reference.bundle.last(), config.k.min(n), p, &sn.split(purpose::BOOTSTRAP))?;
                out.push_omega(n, &o);
            }
            _ => {
                let g = girsanov_entropy_rhs(model, n, &reference, &run, init, config.reps, &sn)?;
                out.push(n, "girsanov", g.estimate, g.replicas);
            }
        }
    }
    Ok(())
}

fn sweep_finite(config: &SweepConfig, m_ref: usize, root: &RngStream, out: &mut Collector) -> Result<()> {
    let m = config.f0.len();
    match config.metric.as_str() {
        "d2" => {
            let family = LipschitzFamily::dyadic(1, -0.5, m as f64 - 0.5, config.levels)?;
            let check = toy_linear_d2_check(&config.kernel, &config.f0, &config.ns, config.t_end, &family, config.reps, root)?;
            for row in check.rows {
                let mut g = root.split(row.n as u64).split(purpose::BOOTSTRAP).rng();
                let excess = Estimate::of_mean(&row.samples, &mut g);
                out.push(row.n, "d2_excess", excess, row.samples);
                out.push(row.n, "d2_raw", Estimate::exact(row.raw), vec![row.raw]);
            }
            Ok(())
        }
        "omega" => {
            let p = omega_p(config.p)?;
            let model = choose_leader_model(LeaderKernel::Finite {
                m,
                rows: config.kernel.clone(),
            })?;
            let f_t = nonlinear_finite_ode(&FiniteModel::choose_leader(config.kernel.clone(), 1)?, &config.f0, config.t_end)?;
            let mut g = root.split(purpose::REFERENCE).rng();
            let pool: Vec<f64> = (0..m_ref).map(|_| categorical(&f_t, g.uniform()) as f64).collect();
            let reference = EmpiricalMeasure::from_scalars(pool)?;
            let run = JumpRun::new(config.t_end, 1).without_log();
            for &n in &config.ns {
                let sn = root.split(n as u64);
                let runs = run_replicas(&sn, config.reps, |_, s| {
                    let mut g = s.split(purpose::INIT).rng();
                    let xs: Vec<f64> = (0..n).map(|_| categorical(&config.f0, g.uniform()) as f64).collect();
                    let o = pdmp_simulate(&model, &ParticleState::from_scalars(0.0, xs)?, &run, &s, None)?;
                    Ok(o.bundle.last().clone())
                })
                .into_iter()
                .collect::<Result<Vec<_>>>()?;
                let o = omega_estimates(&runs, &reference, config.k.min(n), p, &sn.split(purpose::BOOTSTRAP))?;
                out.push_omega(n, &o);
            }
            Ok(())
        }
        other => invalid(format!("metric `{other}` applies to the diffusion models only")),
    }
}
