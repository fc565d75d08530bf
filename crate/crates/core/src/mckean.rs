//! McKean–Vlasov diffusions: Euler–Maruyama particle systems, a frozen-flow
//! Picard reference for the nonlinear process, and synchronous and reflection
//! couplings.

use std::sync::Arc;

pub use crate::coupling::{CouplingReport, PicardConfig};
use crate::coupling::{ReplicaErrors, ReportMeta};
use crate::error::{invalid, Error, Result};
use crate::metrics::w1_empirical;
use crate::model::{DiffusionModel, MeasureSummary, Noise};
use crate::real::{from_usize, lit, to_f64, Real};
use crate::rng::{purpose, run_replicas, RngStream, StreamRng};
use crate::state::{step_count, Canonical, Domain, MeasureView, ParticleState, TrajectoryBundle};
use crate::stats::{mean, ols};

/// Time discretization of a diffusion run.
#[derive(Clone, Copy, Debug)]
pub struct DiffusionRun<T> {
    pub t_end: T,
    pub dt: T,
    /// States are recorded every `stride` steps (and at T).
    pub stride: usize,
}

impl<T: Real> DiffusionRun<T> {
    pub fn new(t_end: T, dt: T, stride: usize) -> Self {
        DiffusionRun { t_end, dt, stride }
    }

    pub fn steps(&self) -> Result<usize> {
        if self.stride == 0 {
            return invalid("output stride must be positive");
        }
        step_count(self.t_end, self.dt)
    }

    fn recorded(&self, k: usize, steps: usize) -> bool {
        k.is_multiple_of(self.stride) || k == steps
    }

    fn time(&self, k: usize) -> T {
        self.dt * from_usize::<T>(k)
    }
}

fn check_model<T: Real, M: DiffusionModel<T> + ?Sized>(model: &M, state: &ParticleState<T>) -> Result<()> {
    if state.dim() != model.dim() {
        return Err(Error::SizeMismatch(format!(
            "state dimension {} but model `{}` has dimension {}",
            state.dim(),
            model.name(),
            model.dim()
        )));
    }
    if state.domain() != model.domain() {
        return invalid(format!(
            "state domain `{}` but model `{}` lives on `{}`",
            state.domain().tag(),
            model.name(),
            model.domain().tag()
        ));
    }
    Ok(())
}

/// Scratch buffers for one explicit step.
struct Stepper<T> {
    drift: Vec<T>,
    next: Vec<T>,
}

impl<T: Real> Stepper<T> {
    fn new(d: usize) -> Self {
        Stepper {
            drift: vec![T::zero(); d],
            next: vec![T::zero(); d],
        }
    }

    /// `xᵢ ← xᵢ + b dt + σ √dt ξᵢ` for every particle, with `field` frozen.
    #[allow(clippy::too_many_arguments)]
    fn step<M: DiffusionModel<T> + ?Sized>(
        &mut self,
        model: &M,
        xs: &mut [T],
        d: usize,
        domain: Domain,
        field: &MeasureSummary<T>,
        dt: T,
        normals: &[T],
    ) -> Result<()> {
        let sq = dt.sqrt();
        for (i, x) in xs.chunks_exact_mut(d).enumerate() {
            model.drift(x, field, &mut self.drift);
            if self.drift.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite { what: "drift", index: i });
            }
            let sigma = model.noise(x, field);
            if !sigma.is_finite() {
                return Err(Error::NonFinite {
                    what: "diffusion coefficient",
                    index: i,
                });
            }
            for k in 0..d {
                self.next[k] = x[k] + self.drift[k] * dt;
            }
            sigma.apply(&normals[i * d..(i + 1) * d], sq, &mut self.next);
            if self.next.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite { what: "state", index: i });
            }
            domain.wrap(&mut self.next);
            x.copy_from_slice(&self.next);
        }
        Ok(())
    }
}

/// One Euler–Maruyama step with the measure argument taken from `state`.
///
/// `noise` holds N×d standard normals, particle-major.
pub fn em_step<T: Real, M: DiffusionModel<T> + ?Sized>(
    state: &ParticleState<T>,
    model: &M,
    dt: T,
    noise: &[T],
) -> Result<ParticleState<T>> {
    check_model(model, state)?;
    if !(dt > T::zero()) || !dt.is_finite() {
        return invalid("dt must be positive");
    }
    let (n, d) = (state.n(), state.dim());
    if noise.len() != n * d {
        return Err(Error::SizeMismatch(format!("{} normals for {n}×{d} coordinates", noise.len())));
    }
    let field = model.summarize(state.view());
    let mut xs = state.coords().to_vec();
    Stepper::new(d).step(model, &mut xs, d, state.domain(), &field, dt, noise)?;
    ParticleState::new(state.t + dt, d, state.domain(), xs)
}

/// Per-particle noise streams `rng.split(label).split(NOISE)`, consumed d normals per step.
struct NoiseSource {
    rngs: Vec<StreamRng>,
    d: usize,
}

impl NoiseSource {
    fn new(rng: &RngStream, labels: impl Iterator<Item = u64>, d: usize) -> Self {
        NoiseSource {
            rngs: labels.map(|l| rng.split(l).split(purpose::NOISE).rng()).collect(),
            d,
        }
    }

    fn fill<T: Real>(&mut self, out: &mut [T]) {
        for (r, chunk) in self.rngs.iter_mut().zip(out.chunks_exact_mut(self.d)) {
            r.fill_normal(chunk);
        }
    }
}

fn record<T: Real>(xs: &[T], t: T, d: usize, domain: Domain) -> Result<ParticleState<T>> {
    ParticleState::new(t, d, domain, xs.to_vec())
}

/// Euler–Maruyama particle system.
///
/// Particle k draws its normals from `rng.split(labels[k]).split(NOISE)`
/// (default label k), one block of d per step. The system is stepped in the
/// canonical label order, so permuting `init` with `labels` permutes the
/// output bit for bit.
pub fn simulate_particles<T: Real, M: DiffusionModel<T> + ?Sized>(
    model: &M,
    init: &ParticleState<T>,
    run: &DiffusionRun<T>,
    rng: &RngStream,
    labels: Option<&[u64]>,
) -> Result<TrajectoryBundle<T>> {
    check_model(model, init)?;
    let steps = run.steps()?;
    let canon = Canonical::from_option(labels, init.n())?;
    let start = canon.to_canonical(init);
    let (d, domain) = (start.dim(), start.domain());
    let mut xs = start.coords().to_vec();
    let mut noise = NoiseSource::new(rng, canon.labels().iter().copied(), d);
    let mut normals = vec![T::zero(); xs.len()];
    let mut stepper = Stepper::new(d);
    let mut states = vec![record(&xs, T::zero(), d, domain)?];
    for k in 1..=steps {
        let field = model.summarize(MeasureView::new(d, &xs));
        noise.fill(&mut normals);
        stepper.step(model, &mut xs, d, domain, &field, run.dt, &normals)?;
        if run.recorded(k, steps) {
            states.push(record(&xs, run.time(k), d, domain)?);
        }
    }
    Ok(canon.bundle_from_canonical(TrajectoryBundle::new(states)?))
}

/// Frozen-flow approximation of the nonlinear McKean–Vlasov process.
#[derive(Clone, Debug)]
pub struct DiffusionReference<T> {
    pub dt: T,
    pub steps: usize,
    /// The measure argument is held constant over blocks of this many steps.
    pub freeze_stride: usize,
    /// Summary of the last iterate at steps 0, s, 2s, ... with s = `freeze_stride`.
    pub flow: Vec<MeasureSummary<T>>,
    /// Last iterate on the run's output grid.
    pub bundle: TrajectoryBundle<T>,
    /// W₁ at T between successive iterates.
    pub increments: Vec<f64>,
    pub converged: bool,
}

impl<T: Real> DiffusionReference<T> {
    /// Frozen measure argument used at step k (k ≥ 1 advances from step k−1).
    pub fn field_at(&self, k: usize) -> &MeasureSummary<T> {
        &self.flow[(k - 1) / self.freeze_stride]
    }

    pub fn copies(&self) -> usize {
        self.bundle.n()
    }
}

/// Settings of [`nonlinear_reference`].
#[derive(Clone, Copy, Debug)]
pub struct ReferenceConfig {
    pub picard: PicardConfig,
    /// Steps per frozen block of the measure argument.
    pub freeze_stride: usize,
}

impl Default for ReferenceConfig {
    fn default() -> Self {
        ReferenceConfig {
            picard: PicardConfig::default(),
            freeze_stride: 1,
        }
    }
}

struct Iterate<T> {
    flow: Vec<MeasureSummary<T>>,
    states: Vec<ParticleState<T>>,
    last: Vec<T>,
}

/// Runs M copies; with `frozen = None` they interact (iteration 0), otherwise
/// their measure argument is the frozen flow.
#[allow(clippy::too_many_arguments)]
fn run_copies<T: Real, M: DiffusionModel<T> + ?Sized>(
    model: &M,
    init: &[T],
    d: usize,
    domain: Domain,
    run: &DiffusionRun<T>,
    steps: usize,
    freeze: usize,
    frozen: Option<&[MeasureSummary<T>]>,
    rng: &RngStream,
) -> Result<Iterate<T>> {
    let m = init.len() / d;
    let mut xs = init.to_vec();
    let mut noise = NoiseSource::new(rng, 0..m as u64, d);
    let mut normals = vec![T::zero(); xs.len()];
    let mut stepper = Stepper::new(d);
    let mut flow = Vec::with_capacity(steps / freeze + 1);
    let mut states = vec![record(&xs, T::zero(), d, domain)?];
    for k in 1..=steps {
        let block = (k - 1) % freeze == 0;
        let own;
        let field = match frozen {
            Some(f) => {
                if block {
                    flow.push(model.summarize(MeasureView::new(d, &xs)));
                }
                &f[(k - 1) / freeze]
            }
            None => {
                own = model.summarize(MeasureView::new(d, &xs));
                if block {
                    flow.push(own.clone());
                }
                &own
            }
        };
        noise.fill(&mut normals);
        stepper.step(model, &mut xs, d, domain, field, run.dt, &normals)?;
        if run.recorded(k, steps) {
            states.push(record(&xs, run.time(k), d, domain)?);
        }
    }
    Ok(Iterate { flow, states, last: xs })
}

/// Frozen-flow Picard ensemble of M copies.
///
/// Iteration 0 is the interacting M-particle system. Iteration k+1 re-runs
/// the M copies with the same initial values and noise, their measure
/// argument being the empirical flow of iteration k held constant over blocks
/// of `freeze_stride` steps. Copy m draws from `rng.split(REFERENCE).split(m)`.
///
/// At `freeze_stride = 1` the M-particle system is itself a fixed point, so
/// the increments vanish; coarser freezing gives positive, contracting
/// increments.
pub fn nonlinear_reference<T, M, F>(
    model: &M,
    init: F,
    m: usize,
    run: &DiffusionRun<T>,
    config: &ReferenceConfig,
    rng: &RngStream,
) -> Result<DiffusionReference<T>>
where
    T: Real,
    M: DiffusionModel<T> + ?Sized,
    F: Fn(&mut StreamRng, &mut [T]),
{
    if m < 2 {
        return invalid("nonlinear reference needs at least two copies");
    }
    if config.picard.iterations == 0 {
        return invalid("at least one Picard iteration is required");
    }
    if config.freeze_stride == 0 {
        return invalid("freeze stride must be positive");
    }
    let steps = run.steps()?;
    let (d, domain) = (model.dim(), model.domain());
    let root = rng.split(purpose::REFERENCE);
    let mut x0 = vec![T::zero(); m * d];
    for (k, x) in x0.chunks_exact_mut(d).enumerate() {
        init(&mut root.split(k as u64).split(purpose::INIT).rng(), x);
        domain.wrap(x);
    }
    let freeze = config.freeze_stride;
    let mut current = run_copies(model, &x0, d, domain, run, steps, freeze, None, &root)?;
    let mut increments = Vec::with_capacity(config.picard.iterations);
    for _ in 0..config.picard.iterations {
        let next = run_copies(model, &x0, d, domain, run, steps, freeze, Some(&current.flow), &root)?;
        let a = crate::state::EmpiricalMeasure::new(d, current.last.clone())?;
        let b = crate::state::EmpiricalMeasure::new(d, next.last.clone())?;
        increments.push(to_f64(w1_empirical(&a, &b, domain)?));
        current = next;
    }
    let converged = increments.last().is_some_and(|&v| v <= config.picard.tol);
    Ok(DiffusionReference {
        dt: run.dt,
        steps,
        freeze_stride: freeze,
        flow: current.flow,
        bundle: TrajectoryBundle::new(current.states)?,
        increments,
        converged,
    })
}

/// Settings of [`synchronous_coupling`].
#[derive(Clone, Copy, Debug)]
pub struct SyncConfig {
    pub replicas: usize,
    /// Exponent p of |Xⁱ − X̄ⁱ|^p.
    pub p: f64,
}

impl Default for SyncConfig {
    fn default() -> Self {
        SyncConfig { replicas: 32, p: 2.0 }
    }
}

/// Errors of one synchronously coupled replica.
///
/// Particles and copies share initial values and normals; the copies see the
/// reference flow, the particles their own empirical measure. The supremum
/// runs over every time step, the curve is kept on the output grid.
pub fn synchronous_coupling_replica<T, M, F>(
    model: &M,
    n: usize,
    reference: &DiffusionReference<T>,
    run: &DiffusionRun<T>,
    init: &F,
    p: f64,
    rng: &RngStream,
) -> Result<ReplicaErrors>
where
    T: Real,
    M: DiffusionModel<T> + ?Sized,
    F: Fn(&mut StreamRng, &mut [T]),
{
    let steps = run.steps()?;
    if steps != reference.steps || (to_f64(run.dt) - to_f64(reference.dt)).abs() > 1e-12 * to_f64(run.dt) {
        return Err(Error::GridMismatch(format!(
            "coupling uses {steps} steps of {} but the reference has {} steps of {}",
            to_f64(run.dt),
            reference.steps,
            to_f64(reference.dt)
        )));
    }
    if n == 0 {
        return invalid("coupling needs at least one particle");
    }
    let (d, domain) = (model.dim(), model.domain());
    let mut xs = vec![T::zero(); n * d];
    for (k, x) in xs.chunks_exact_mut(d).enumerate() {
        init(&mut rng.split(k as u64).split(purpose::INIT).rng(), x);
        domain.wrap(x);
    }
    let mut ys = xs.clone();
    let mut noise = NoiseSource::new(rng, 0..n as u64, d);
    let mut normals = vec![T::zero(); n * d];
    let (mut sx, mut sy) = (Stepper::new(d), Stepper::new(d));
    let mut sup = vec![0.0f64; n];
    let mut curve = vec![0.0];
    for k in 1..=steps {
        let field = model.summarize(MeasureView::new(d, &xs));
        noise.fill(&mut normals);
        sx.step(model, &mut xs, d, domain, &field, run.dt, &normals)?;
        sy.step(model, &mut ys, d, domain, reference.field_at(k), run.dt, &normals)?;
        let mut acc = 0.0;
        for (i, s) in sup.iter_mut().enumerate() {
            let e = to_f64(domain.distance(&xs[i * d..(i + 1) * d], &ys[i * d..(i + 1) * d])).powf(p);
            *s = s.max(e);
            acc += e;
        }
        if run.recorded(k, steps) {
            curve.push(acc / n as f64);
        }
    }
    Ok(ReplicaErrors { sup: mean(&sup), curve })
}

/// Synchronous coupling between N particles and N reference-driven copies.
///
/// Replica r uses `rng.split(r)`; particle i and its copy share the init
/// stream `split(i).split(INIT)` and the noise stream `split(i).split(NOISE)`.
pub fn synchronous_coupling<T, M, F>(
    model: &M,
    n: usize,
    reference: &DiffusionReference<T>,
    run: &DiffusionRun<T>,
    init: F,
    config: &SyncConfig,
    rng: &RngStream,
) -> Result<CouplingReport>
where
    T: Real,
    M: DiffusionModel<T> + ?Sized,
    F: Fn(&mut StreamRng, &mut [T]) + Sync,
{
    if config.replicas == 0 {
        return invalid("coupling needs at least one replica");
    }
    let steps = run.steps()?;
    let results = run_replicas(rng, config.replicas, |_, rs| {
        synchronous_coupling_replica(model, n, reference, run, &init, config.p, &rs)
    });
    let replicas = results.into_iter().collect::<Result<Vec<_>>>()?;
    let times: Vec<f64> = (0..=steps)
        .filter(|&k| run.recorded(k, steps))
        .map(|k| to_f64(run.time(k)))
        .collect();
    let meta = ReportMeta {
        n,
        t_end: to_f64(run.t_end),
        dt: to_f64(run.dt),
        p: config.p,
        seed: rng.seed(),
    };
    CouplingReport::from_replicas(meta, times, &replicas, &rng.split(purpose::BOOTSTRAP))
}

/// ½ Σ_k dt · (1/N) Σ_i |b(Xⁱ, μ_N) − b(Xⁱ, f)|² along one particle run,
/// left-point rule, with f the reference flow.
///
/// Averaging over i estimates the single-particle functional with less
/// variance; the particles are exchangeable. Init and noise streams are as in
/// [`synchronous_coupling_replica`].
pub fn drift_mismatch_replica<T, M, F>(
    model: &M,
    n: usize,
    reference: &DiffusionReference<T>,
    run: &DiffusionRun<T>,
    init: &F,
    rng: &RngStream,
) -> Result<f64>
where
    T: Real,
    M: DiffusionModel<T> + ?Sized,
    F: Fn(&mut StreamRng, &mut [T]),
{
    let steps = run.steps()?;
    if steps != reference.steps || (to_f64(run.dt) - to_f64(reference.dt)).abs() > 1e-12 * to_f64(run.dt) {
        return Err(Error::GridMismatch(format!(
            "run has {steps} steps of {} but the reference has {} steps of {}",
            to_f64(run.dt),
            reference.steps,
            to_f64(reference.dt)
        )));
    }
    if n == 0 {
        return invalid("drift mismatch needs at least one particle");
    }
    let (d, domain) = (model.dim(), model.domain());
    let mut xs = vec![T::zero(); n * d];
    for (k, x) in xs.chunks_exact_mut(d).enumerate() {
        init(&mut rng.split(k as u64).split(purpose::INIT).rng(), x);
        domain.wrap(x);
    }
    let mut noise = NoiseSource::new(rng, 0..n as u64, d);
    let mut normals = vec![T::zero(); n * d];
    let mut stepper = Stepper::new(d);
    let (mut own, mut limit) = (vec![T::zero(); d], vec![T::zero(); d]);
    let dt = to_f64(run.dt);
    let mut total = 0.0;
    for k in 1..=steps {
        let field = model.summarize(MeasureView::new(d, &xs));
        let target = reference.field_at(k);
        let mut acc = 0.0;
        for x in xs.chunks_exact(d) {
            if !model.noise(x, &field).is_identity(d) {
                return invalid("the entropy bound needs an identity diffusion matrix");
            }
            model.drift(x, &field, &mut own);
            model.drift(x, target, &mut limit);
            acc += own.iter().zip(&limit).map(|(a, b)| to_f64(*a - *b).powi(2)).sum::<f64>();
        }
        total += acc / n as f64 * dt;
        noise.fill(&mut normals);
        stepper.step(model, &mut xs, d, domain, &field, run.dt, &normals)?;
    }
    Ok(0.5 * total)
}

pub type Profile = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Reflection-coupling settings.
#[derive(Clone)]
pub struct ReflectionConfig {
    /// One-sided Lipschitz profile κ(r) of the drift, kept for reporting.
    pub kappa: Option<Profile>,
    /// Concave increasing distance warp with f(0) = 0.
    pub f: Profile,
    /// Claimed contraction rate.
    pub c: f64,
    /// Pairs closer than this merge; `None` means 2σ√dt.
    pub delta_couple: Option<f64>,
}

impl ReflectionConfig {
    /// f(r) = 1 − e^{−a r}.
    pub fn exponential(a: f64, c: f64) -> Result<Self> {
        if !(a > 0.0) {
            return invalid("warp scale a must be positive");
        }
        let cfg = ReflectionConfig {
            kappa: None,
            f: Arc::new(move |r: f64| 1.0 - (-a * r).exp()),
            c,
            delta_couple: None,
        };
        cfg.validate(10.0 / a)?;
        Ok(cfg)
    }

    /// Checks f(0) = 0, monotonicity and concavity on a grid of [0, r_max].
    pub fn validate(&self, r_max: f64) -> Result<()> {
        if !(self.c > 0.0) {
            return invalid("claimed rate c must be positive");
        }
        if let Some(dc) = self.delta_couple {
            if !(dc > 0.0) {
                return invalid("merge threshold must be positive");
            }
        }
        if (self.f)(0.0).abs() > 1e-12 {
            return invalid("distance warp must satisfy f(0) = 0");
        }
        let k = 256;
        let vals: Vec<f64> = (0..=k).map(|i| (self.f)(r_max * i as f64 / k as f64)).collect();
        let tol = 1e-12 * vals.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        if vals.windows(2).any(|w| w[1] < w[0] - tol) {
            return invalid("distance warp must be increasing");
        }
        if vals.windows(3).any(|w| w[2] - 2.0 * w[1] + w[0] > tol) {
            return invalid("distance warp must be concave");
        }
        Ok(())
    }
}

/// Decay curve of a reflection coupling.
#[derive(Clone, Debug, PartialEq)]
pub struct ReflectionOutput {
    pub times: Vec<f64>,
    /// Mean of f(|Xᵏ_t − Yᵏ_t|) over pairs.
    pub mean_f: Vec<f64>,
    /// Fraction of merged pairs.
    pub coupled_fraction: Vec<f64>,
}

impl ReflectionOutput {
    /// Least-squares slope of ln mean f against t over t ≥ `burn_in`, with a
    /// normal-approximation 95% interval. Points with mean f = 0 are dropped.
    pub fn log_decay_fit(&self, burn_in: f64) -> Result<(f64, f64, f64)> {
        let (xs, ys): (Vec<f64>, Vec<f64>) = self
            .times
            .iter()
            .zip(&self.mean_f)
            .filter(|(t, v)| **t >= burn_in && **v > 0.0)
            .map(|(t, v)| (*t, v.ln()))
            .unzip();
        let (slope, icpt) = ols(&xs, &ys)?;
        if xs.len() < 3 {
            return Ok((slope, f64::NEG_INFINITY, f64::INFINITY));
        }
        let mx = mean(&xs);
        let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
        let rss: f64 = xs.iter().zip(&ys).map(|(x, y)| (y - icpt - slope * x).powi(2)).sum();
        let se = (rss / (xs.len() - 2) as f64 / sxx).sqrt();
        Ok((slope, slope - 1.96 * se, slope + 1.96 * se))
    }
}

/// Couples two N-particle systems pair by pair through reflected noise.
///
/// Y receives (I − 2eeᵀ)ξ with e the unit vector along Xᵏ − Yᵏ before the
/// step. Pairs closer than the merge threshold are glued (Yᵏ := Xᵏ) and use
/// the same noise from then on. Both systems use their own empirical
/// measure; particle k of both systems reads `rng.split(k).split(NOISE)`.
pub fn reflection_coupling<M: DiffusionModel<f64> + ?Sized>(
    model: &M,
    x0: &ParticleState<f64>,
    y0: &ParticleState<f64>,
    run: &DiffusionRun<f64>,
    config: &ReflectionConfig,
    rng: &RngStream,
) -> Result<ReflectionOutput> {
    check_model(model, x0)?;
    check_model(model, y0)?;
    if x0.n() != y0.n() {
        return Err(Error::SizeMismatch("coupled systems differ in size".into()));
    }
    if model.domain() != Domain::Euclidean {
        return invalid("reflection coupling is implemented on R^d only");
    }
    let steps = run.steps()?;
    let (n, d) = (x0.n(), x0.dim());
    let probe = model.summarize(x0.view());
    let sigma = match model.noise(x0.particle(0), &probe) {
        Noise::Scalar(s) if s > 0.0 => s,
        _ => return invalid("reflection coupling needs a constant positive scalar σ"),
    };
    let delta = config.delta_couple.unwrap_or(2.0 * sigma * run.dt.sqrt());
    let mut xs = x0.coords().to_vec();
    let mut ys = y0.coords().to_vec();
    let mut merged = vec![false; n];
    let mut noise = NoiseSource::new(rng, 0..n as u64, d);
    let mut nx = vec![0.0; n * d];
    let mut ny = vec![0.0; n * d];
    let (mut sx, mut sy) = (Stepper::new(d), Stepper::new(d));
    let mut out = ReflectionOutput {
        times: Vec::new(),
        mean_f: Vec::new(),
        coupled_fraction: Vec::new(),
    };
    let mut observe = |k: usize, xs: &[f64], ys: &mut [f64], merged: &mut [bool]| {
        let mut acc = 0.0;
        for i in 0..n {
            let (a, b) = (&xs[i * d..(i + 1) * d], &mut ys[i * d..(i + 1) * d]);
            let r = Domain::Euclidean.distance(a, b);
            if !merged[i] && r < delta {
                merged[i] = true;
                b.copy_from_slice(a);
            }
            if !merged[i] {
                acc += (config.f)(r);
            }
        }
        out.times.push(run.time(k));
        out.mean_f.push(acc / n as f64);
        out.coupled_fraction.push(merged.iter().filter(|&&m| m).count() as f64 / n as f64);
    };
    observe(0, &xs, &mut ys, &mut merged);
    for k in 1..=steps {
        let fx = model.summarize(MeasureView::new(d, &xs));
        let fy = model.summarize(MeasureView::new(d, &ys));
        noise.fill(&mut nx);
        ny.copy_from_slice(&nx);
        for i in 0..n {
            if merged[i] {
                continue;
            }
            let a = &xs[i * d..(i + 1) * d];
            let b = &ys[i * d..(i + 1) * d];
            let r = Domain::Euclidean.distance(a, b);
            if r > 0.0 {
                let xi = &mut ny[i * d..(i + 1) * d];
                let dot: f64 = (0..d).map(|c| (a[c] - b[c]) / r * xi[c]).sum();
                for c in 0..d {
                    xi[c] -= 2.0 * dot * (a[c] - b[c]) / r;
                }
            }
        }
        sx.step(model, &mut xs, d, Domain::Euclidean, &fx, run.dt, &nx)?;
        sy.step(model, &mut ys, d, Domain::Euclidean, &fy, run.dt, &ny)?;
        if run.recorded(k, steps) {
            observe(k, &xs, &mut ys, &mut merged);
        } else {
            for i in 0..n {
                if !merged[i]
                    && Domain::Euclidean.distance(&xs[i * d..(i + 1) * d], &ys[i * d..(i + 1) * d]) < delta
                {
                    merged[i] = true;
                    let (src, dst) = (i * d, (i + 1) * d);
                    ys[src..dst].copy_from_slice(&xs[src..dst]);
                }
            }
        }
    }
    Ok(out)
}

pub type GradFn = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;

/// Granular-media type model b(x, μ) = −∇V(x) − ∫∇W(x − y)μ(dy), σ = s·I.
#[derive(Clone)]
pub struct GradientModel {
    dim: usize,
    grad_v: GradFn,
    grad_w: Option<GradFn>,
    sigma: f64,
}

pub fn gradient_model(dim: usize, grad_v: GradFn, grad_w: Option<GradFn>, sigma: f64) -> Result<GradientModel> {
    if dim == 0 {
        return invalid("dimension must be positive");
    }
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return invalid("σ must be finite and nonnegative");
    }
    Ok(GradientModel {
        dim,
        grad_v,
        grad_w,
        sigma,
    })
}

impl DiffusionModel<f64> for GradientModel {
    fn name(&self) -> &str {
        "gradient"
    }
    fn dim(&self) -> usize {
        self.dim
    }
    fn summarize(&self, mu: MeasureView<'_, f64>) -> MeasureSummary<f64> {
        if self.grad_w.is_some() {
            MeasureSummary::Atoms(mu.to_owned())
        } else {
            MeasureSummary::Moments(Vec::new())
        }
    }
    fn drift(&self, x: &[f64], field: &MeasureSummary<f64>, out: &mut [f64]) {
        (self.grad_v)(x, out);
        out.iter_mut().for_each(|o| *o = -*o);
        if let Some(gw) = &self.grad_w {
            let atoms = field.atoms();
            let d = self.dim;
            let mut diff = vec![0.0; d];
            let mut g = vec![0.0; d];
            let inv = 1.0 / atoms.len() as f64;
            for y in atoms.iter() {
                for k in 0..d {
                    diff[k] = x[k] - y[k];
                }
                gw(&diff, &mut g);
                for k in 0..d {
                    out[k] -= g[k] * inv;
                }
            }
        }
    }
    fn noise(&self, _x: &[f64], _field: &MeasureSummary<f64>) -> Noise<f64> {
        if self.sigma == 0.0 {
            Noise::Zero
        } else {
            Noise::Scalar(self.sigma)
        }
    }
    fn measure_dependent(&self) -> bool {
        self.grad_w.is_some()
    }
}

/// Kuramoto oscillators on the circle: b(θ, μ) = −K₀ ∫ sin(θ − φ) μ(dφ).
#[derive(Clone, Debug)]
pub struct Kuramoto<T> {
    pub k0: T,
    pub sigma: T,
}

pub fn kuramoto_model<T: Real>(k0: T, sigma: T) -> Result<Kuramoto<T>> {
    if !k0.is_finite() || !(sigma >= T::zero()) || !sigma.is_finite() {
        return invalid("Kuramoto coupling and σ must be finite, σ ≥ 0");
    }
    Ok(Kuramoto { k0, sigma })
}

impl<T: Real> DiffusionModel<T> for Kuramoto<T> {
    fn name(&self) -> &str {
        "kuramoto"
    }
    fn dim(&self) -> usize {
        1
    }
    fn domain(&self) -> Domain {
        Domain::Torus
    }
    /// (mean cos φ, mean sin φ).
    fn summarize(&self, mu: MeasureView<'_, T>) -> MeasureSummary<T> {
        let (mut c, mut s) = (T::zero(), T::zero());
        for a in mu.iter() {
            let (si, co) = a[0].sin_cos();
            c += co;
            s += si;
        }
        let n = from_usize::<T>(mu.len());
        MeasureSummary::Moments(vec![c / n, s / n])
    }
    fn drift(&self, x: &[T], field: &MeasureSummary<T>, out: &mut [T]) {
        let m = field.moments();
        let (s, c) = x[0].sin_cos();
        out[0] = -self.k0 * (s * m[0] - c * m[1]);
    }
    fn noise(&self, _x: &[T], _field: &MeasureSummary<T>) -> Noise<T> {
        Noise::Scalar(self.sigma)
    }
    fn measure_dependent(&self) -> bool {
        self.k0 != T::zero()
    }
    fn lipschitz(&self) -> Option<(f64, f64)> {
        Some((2.0 * to_f64(self.k0).abs(), 0.0))
    }
}

pub type KernelFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Cucker–Smale flocking in R^d × R^d: dX = V dt,
/// dV = (1/N) Σⱼ K(|Xʲ − X|)(Vʲ − V) dt + σ dB.
#[derive(Clone)]
pub struct CuckerSmale {
    d: usize,
    kernel: KernelFn,
    sigma: f64,
}

pub fn cucker_smale_model(d: usize, kernel: KernelFn, sigma: f64) -> Result<CuckerSmale> {
    if d == 0 {
        return invalid("dimension must be positive");
    }
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return invalid("σ must be finite and nonnegative");
    }
    Ok(CuckerSmale { d, kernel, sigma })
}

impl DiffusionModel<f64> for CuckerSmale {
    fn name(&self) -> &str {
        "cucker_smale"
    }
    fn dim(&self) -> usize {
        2 * self.d
    }
    fn domain(&self) -> Domain {
        Domain::Kinetic
    }
    fn drift(&self, z: &[f64], field: &MeasureSummary<f64>, out: &mut [f64]) {
        let d = self.d;
        let atoms = field.atoms();
        out[..d].copy_from_slice(&z[d..]);
        out[d..].iter_mut().for_each(|o| *o = 0.0);
        for w in atoms.iter() {
            let r = (0..d).map(|k| (w[k] - z[k]).powi(2)).sum::<f64>().sqrt();
            let k = (self.kernel)(r);
            for c in 0..d {
                out[d + c] += k * (w[d + c] - z[d + c]);
            }
        }
        let inv = 1.0 / atoms.len() as f64;
        out[d..].iter_mut().for_each(|o| *o *= inv);
    }
    fn noise(&self, _z: &[f64], _field: &MeasureSummary<f64>) -> Noise<f64> {
        if self.sigma == 0.0 {
            return Noise::Zero;
        }
        let mut v = vec![0.0; 2 * self.d];
        v[self.d..].iter_mut().for_each(|s| *s = self.sigma);
        Noise::Diagonal(v)
    }
}

/// b(x, μ) = mean(μ) − x with σ = s·I.
#[derive(Clone, Debug)]
pub struct LinearDrift<T> {
    pub dim: usize,
    pub sigma: T,
}

pub fn linear_drift_model<T: Real>(dim: usize, sigma: T) -> Result<LinearDrift<T>> {
    if dim == 0 {
        return invalid("dimension must be positive");
    }
    if !(sigma >= T::zero()) || !sigma.is_finite() {
        return invalid("σ must be finite and nonnegative");
    }
    Ok(LinearDrift { dim, sigma })
}

impl<T: Real> DiffusionModel<T> for LinearDrift<T> {
    fn name(&self) -> &str {
        "linear"
    }
    fn dim(&self) -> usize {
        self.dim
    }
    fn summarize(&self, mu: MeasureView<'_, T>) -> MeasureSummary<T> {
        MeasureSummary::Moments(mu.mean())
    }
    fn drift(&self, x: &[T], field: &MeasureSummary<T>, out: &mut [T]) {
        for ((o, &xi), &m) in out.iter_mut().zip(x).zip(field.moments()) {
            *o = m - xi;
        }
    }
    fn noise(&self, _x: &[T], _field: &MeasureSummary<T>) -> Noise<T> {
        Noise::Scalar(self.sigma)
    }
    fn lipschitz(&self) -> Option<(f64, f64)> {
        Some((2.0, 0.0))
    }
}

/// Wrapped normal on the circle with the given mean and standard deviation.
pub fn wrapped_normal_init(mean: f64, sd: f64) -> impl Fn(&mut StreamRng, &mut [f64]) + Sync + Send + Copy {
    move |r: &mut StreamRng, x: &mut [f64]| {
        for v in x.iter_mut() {
            *v = mean + sd * r.normal::<f64>();
        }
    }
}

/// Standard normal initial law scaled by `sd`.
pub fn normal_init<T: Real>(sd: f64) -> impl Fn(&mut StreamRng, &mut [T]) + Sync + Send + Copy {
    move |r: &mut StreamRng, x: &mut [T]| {
        for v in x.iter_mut() {
            *v = lit(sd * r.normal::<f64>());
        }
    }
}
