//! Mean-field jump processes and PDMPs.
//!
//! Every simulator here runs one system clock of rate NΛ. A candidate time is
//! drawn, the deterministic flow is integrated up to it, a particle is picked
//! uniformly and the candidate is accepted with probability λ/Λ evaluated on
//! the flowed state.

use std::io::Write;

pub use crate::coupling::PicardConfig;
use crate::coupling::{CouplingReport, ReplicaErrors, ReportMeta};
use crate::error::{invalid, Error, Result};
use crate::metrics::w1_empirical;
use crate::model::JumpModel;
use crate::real::{from_usize, lit, to_f64, Real};
use crate::rng::{digest, purpose, run_replicas, RngStream, StreamRng};
use crate::recorder::Recorder;
use crate::state::{fmt_real, uniform_grid, Canonical, Domain, JumpRecord, MeasureView, ParticleState, TrajectoryBundle};

/// Default number of jump samples per event in the optimal-jump coupling.
pub const DEFAULT_QUANTILE_SAMPLES: usize = 256;

/// Horizon and output grid of a jump simulation.
#[derive(Clone, Copy, Debug)]
pub struct JumpRun<T> {
    pub t_end: T,
    /// Number of output intervals; states are recorded at `grid_points + 1` times.
    pub grid_points: usize,
    /// Largest RK4 sub-step used for the deterministic flow.
    pub max_flow_step: T,
    pub log_events: bool,
}

impl<T: Real> JumpRun<T> {
    pub fn new(t_end: T, grid_points: usize) -> Self {
        JumpRun {
            t_end,
            grid_points,
            max_flow_step: lit(1e-2),
            log_events: true,
        }
    }

    pub fn without_log(mut self) -> Self {
        self.log_events = false;
        self
    }

    fn validate(&self) -> Result<()> {
        if !(self.t_end > T::zero()) || !self.t_end.is_finite() {
            return invalid("horizon T must be positive");
        }
        if self.grid_points == 0 {
            return invalid("output grid needs at least one interval");
        }
        if !(self.max_flow_step > T::zero()) {
            return invalid("flow step must be positive");
        }
        Ok(())
    }

    fn grid(&self, t0: T) -> Vec<T> {
        uniform_grid(self.t_end, self.grid_points)
            .into_iter()
            .map(|t| t0 + t)
            .collect()
    }
}

/// One candidate of the system clock.
#[derive(Clone, Debug, PartialEq)]
pub struct JumpEvent<T> {
    pub time: T,
    pub index: usize,
    /// θ of the main jump; empty for rejected candidates.
    pub theta: Vec<T>,
    pub accepted: bool,
    pub collateral: bool,
}

impl<T: Real> JumpEvent<T> {
    pub const CSV_HEADER: &'static str = "time,replica,index,accepted,collateral_flag,theta_digest";

    pub fn write_csv_row<W: Write>(&self, replica: usize, w: &mut W) -> Result<()> {
        writeln!(
            w,
            "{},{replica},{},{},{},{:016x}",
            fmt_real(self.time),
            self.index,
            self.accepted as u8,
            self.collateral as u8,
            digest(&self.theta)
        )?;
        Ok(())
    }
}

/// Header plus the event logs of several replicas, in replica order.
pub fn write_event_log_csv<T: Real, W: Write>(logs: &[Vec<JumpEvent<T>>], w: &mut W) -> Result<()> {
    writeln!(w, "{}", JumpEvent::<T>::CSV_HEADER)?;
    for (r, log) in logs.iter().enumerate() {
        for e in log {
            e.write_csv_row(r, w)?;
        }
    }
    Ok(())
}

#[derive(Clone, Debug)]
pub struct JumpOutput<T> {
    pub bundle: TrajectoryBundle<T>,
    pub events: Vec<JumpEvent<T>>,
}

impl<T: Real> JumpOutput<T> {
    pub fn accepted(&self) -> usize {
        self.events.iter().filter(|e| e.accepted).count()
    }
}

/// Result of [`thinning_next_event`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Candidate<T> {
    pub dt: T,
    pub index: usize,
    pub accepted: bool,
    pub rate: T,
}

struct Draw<T> {
    time: T,
    index: usize,
    u: T,
}

fn draw_candidate<T: Real>(clock: &mut StreamRng, n: usize, bound: T, now: T, horizon: T) -> Option<Draw<T>> {
    if !(bound > T::zero()) {
        return None;
    }
    let time = now + clock.exponential(bound * from_usize::<T>(n));
    if time > horizon {
        return None;
    }
    let index = clock.index(n);
    let u = clock.uniform();
    Some(Draw { time, index, u })
}

pub(crate) fn check_rate<T: Real>(rate: T, bound: T, x: &[T]) -> Result<()> {
    let slack = bound * lit(1e-12);
    if !(rate >= T::zero()) || rate > bound + slack {
        return Err(Error::RateBoundExceeded {
            rate: to_f64(rate),
            bound: to_f64(bound),
            state: x.iter().map(|&v| to_f64(v)).collect(),
        });
    }
    Ok(())
}

/// Classical RK4 with sub-steps no longer than `max_step`.
struct Rk4<T> {
    k: [Vec<T>; 4],
    tmp: Vec<T>,
}

impl<T: Real> Rk4<T> {
    fn new(d: usize) -> Self {
        Rk4 {
            k: std::array::from_fn(|_| vec![T::zero(); d]),
            tmp: vec![T::zero(); d],
        }
    }

    fn integrate(&mut self, x: &mut [T], dt: T, max_step: T, field: &dyn Fn(&[T], &mut [T])) {
        if !(dt > T::zero()) {
            return;
        }
        let steps = (to_f64(dt) / to_f64(max_step)).ceil().max(1.0) as usize;
        let h = dt / from_usize(steps);
        let half = h * lit(0.5);
        let sixth = h / lit(6.0);
        let two: T = lit(2.0);
        let [k1, k2, k3, k4] = &mut self.k;
        let tmp = &mut self.tmp;
        for _ in 0..steps {
            field(x, k1);
            for ((t, &xi), &a) in tmp.iter_mut().zip(x.iter()).zip(k1.iter()) {
                *t = xi + half * a;
            }
            field(tmp, k2);
            for ((t, &xi), &a) in tmp.iter_mut().zip(x.iter()).zip(k2.iter()) {
                *t = xi + half * a;
            }
            field(tmp, k3);
            for ((t, &xi), &a) in tmp.iter_mut().zip(x.iter()).zip(k3.iter()) {
                *t = xi + h * a;
            }
            field(tmp, k4);
            for (i, xi) in x.iter_mut().enumerate() {
                *xi += sixth * (k1[i] + two * k2[i] + two * k3[i] + k4[i]);
            }
        }
    }
}

/// Integrates `dx = a(x) dt` for one particle; exposed for flow checks.
pub fn flow_particle<T: Real, M: JumpModel<T> + ?Sized>(model: &M, x: &mut [T], dt: T, max_step: T) {
    if model.has_flow() {
        Rk4::new(x.len()).integrate(x, dt, max_step, &|y, out| model.flow(y, out));
        model.domain().wrap(x);
    }
}

/// Draws the next candidate of the system clock and flows `state` to it.
///
/// Returns `None` (after flowing to `horizon`) when the candidate falls past
/// the horizon. The rate is evaluated on the flowed state against the
/// state's own empirical measure.
pub fn thinning_next_event<T: Real, M: JumpModel<T> + ?Sized>(
    state: &mut ParticleState<T>,
    model: &M,
    clock: &mut StreamRng,
    horizon: T,
    max_flow_step: T,
) -> Result<Option<Candidate<T>>> {
    let start = state.t;
    let bound = model.rate_bound();
    let draw = draw_candidate(clock, state.n(), bound, start, horizon);
    let target = draw.as_ref().map_or(horizon, |c| c.time);
    let mut rk = Rk4::new(state.dim());
    flow_segment(model, None, state, target - start, 0, max_flow_step, &mut rk);
    state.t = target;
    let Some(c) = draw else {
        return Ok(None);
    };
    let rate = model.rate(state.particle(c.index), state.view());
    check_rate(rate, bound, state.particle(c.index))?;
    Ok(Some(Candidate {
        dt: c.time - start,
        index: c.index,
        accepted: c.u * bound < rate,
        rate,
    }))
}

/// (θ of the moved particle, θ of the jumper).
type ThetaPair<T> = (Vec<T>, Vec<T>);

/// Frozen measure flow of a Picard iterate, piecewise constant on the grid.
struct Frozen<'a, T> {
    flow: &'a [ParticleState<T>],
    /// Per grid interval, one pair per collateral event.
    drift_thetas: Option<&'a [Vec<ThetaPair<T>>]>,
}

fn measure_at<'s, 'f: 's, T: Real>(
    frozen: Option<&Frozen<'f, T>>,
    state: &'s ParticleState<T>,
    seg: usize,
) -> MeasureView<'s, T> {
    match frozen {
        Some(f) => f.flow[seg.min(f.flow.len() - 1)].view(),
        None => state.view(),
    }
}

fn flow_segment<T: Real, M: JumpModel<T> + ?Sized>(
    model: &M,
    frozen: Option<&Frozen<'_, T>>,
    state: &mut ParticleState<T>,
    dt: T,
    seg: usize,
    max_step: T,
    rk: &mut Rk4<T>,
) {
    let drift = frozen.and_then(|f| f.drift_thetas.map(|th| (f.flow[seg.min(f.flow.len() - 1)].view(), &th[seg.min(th.len() - 1)])));
    if !(dt > T::zero()) || (!model.has_flow() && drift.is_none()) {
        return;
    }
    let d = state.dim();
    let domain = state.domain();
    let mut extra = vec![T::zero(); d];
    let extra = std::cell::RefCell::new(&mut extra);
    let field = |y: &[T], out: &mut [T]| {
        model.flow(y, out);
        if let Some((mu, thetas)) = drift {
            let mut e = extra.borrow_mut();
            collateral_drift(model, y, mu, thetas, &mut e[..]);
            for (o, &v) in out.iter_mut().zip(e.iter()) {
                *o += v;
            }
        }
    };
    for x in state.coords_mut().chunks_exact_mut(d) {
        rk.integrate(x, dt, max_step, &field);
        domain.wrap(x);
    }
}

/// Mean-field drift of the collateral jumps, `∫ λ(z, μ) α̃(x, z, μ, θ', θ) μ(dz)`.
///
/// Atom k of `mu` is paired with `thetas[k % thetas.len()]`.
pub fn collateral_drift<T: Real, M: JumpModel<T> + ?Sized>(
    model: &M,
    x: &[T],
    mu: MeasureView<'_, T>,
    thetas: &[(Vec<T>, Vec<T>)],
    out: &mut [T],
) {
    out.iter_mut().for_each(|o| *o = T::zero());
    if thetas.is_empty() || mu.is_empty() {
        return;
    }
    let mut a = vec![T::zero(); x.len()];
    for (k, z) in mu.iter().enumerate() {
        let (tx, tz) = &thetas[k % thetas.len()];
        let rate = model.rate(z, mu);
        if model.collateral(x, z, mu, tx, tz, &mut a).is_some() {
            for (o, &v) in out.iter_mut().zip(&a) {
                *o += rate * v;
            }
        }
    }
    let n: T = from_usize(mu.len());
    out.iter_mut().for_each(|o| *o /= n);
}

struct ParticleStreams {
    theta: Vec<StreamRng>,
    collateral: Vec<StreamRng>,
}

impl ParticleStreams {
    fn new(rng: &RngStream, labels: &[u64], collateral: bool) -> Self {
        let theta = labels
            .iter()
            .map(|&l| rng.split(l).split(purpose::THETA).rng())
            .collect();
        let collateral = if collateral {
            labels
                .iter()
                .map(|&l| rng.split(l).split(purpose::COLLATERAL).rng())
                .collect()
        } else {
            Vec::new()
        };
        ParticleStreams { theta, collateral }
    }
}

struct EngineOutput<T> {
    states: Vec<ParticleState<T>>,
    events: Vec<JumpEvent<T>>,
    touched: Vec<JumpRecord<T>>,
}

/// Thinning loop on a canonically ordered state.
fn run_engine<T: Real, M: JumpModel<T> + ?Sized>(
    model: &M,
    mut state: ParticleState<T>,
    run: &JumpRun<T>,
    rng: &RngStream,
    labels: &[u64],
    frozen: Option<&Frozen<'_, T>>,
    collateral: bool,
) -> Result<EngineOutput<T>> {
    let n = state.n();
    let d = state.dim();
    let bound = model.rate_bound();
    let mut clock = rng.split(purpose::CLOCK).rng();
    let mut streams = ParticleStreams::new(rng, labels, collateral);
    let mut rec = Recorder::new(run.grid(state.t), &[&state]);
    let horizon = rec.horizon();
    let mut rk = Rk4::new(d);
    let max_step = run.max_flow_step;
    let mut flow = |s: &mut ParticleState<T>, dt: T, seg: usize| flow_segment(model, frozen, s, dt, seg, max_step, &mut rk);

    let mut events = Vec::new();
    let mut touched = Vec::new();
    let mut theta = Vec::new();
    let mut theta_j = Vec::new();
    let mut new_x = vec![T::zero(); d];
    let mut alpha = vec![T::zero(); d];
    let mut shift = if collateral { vec![T::zero(); n * d] } else { Vec::new() };
    let inv_n = T::one() / from_usize(n);
    let domain = state.domain();

    loop {
        let Some(c) = draw_candidate(&mut clock, n, bound, state.t, horizon) else {
            rec.advance(&mut [&mut state], horizon, &mut flow);
            break;
        };
        rec.advance(&mut [&mut state], c.time, &mut flow);
        let seg = rec.segment();
        let i = c.index;
        let accepted = {
            let mu = measure_at(frozen, &state, seg);
            let rate = model.rate(state.particle(i), mu);
            check_rate(rate, bound, state.particle(i))?;
            c.u * bound < rate
        };
        if !accepted {
            if run.log_events {
                events.push(JumpEvent {
                    time: c.time,
                    index: i,
                    theta: Vec::new(),
                    accepted: false,
                    collateral: false,
                });
            }
            continue;
        }
        theta.clear();
        model.sample_theta(&mut streams.theta[i], &mut theta);
        {
            let mu = measure_at(frozen, &state, seg);
            model.jump(state.particle(i), mu, &theta, &mut new_x);
            if collateral {
                for j in 0..n {
                    let out = &mut shift[j * d..(j + 1) * d];
                    out.iter_mut().for_each(|o| *o = T::zero());
                    if j == i {
                        continue;
                    }
                    theta_j.clear();
                    model.sample_theta(&mut streams.collateral[j], &mut theta_j);
                    if model
                        .collateral(state.particle(j), state.particle(i), mu, &theta_j, &theta, &mut alpha)
                        .is_some()
                    {
                        for (o, &a) in out.iter_mut().zip(&alpha) {
                            *o = a * inv_n;
                        }
                    }
                }
            }
        }
        let xs = state.coords_mut();
        if collateral {
            for (x, &s) in xs.iter_mut().zip(&shift) {
                *x += s;
            }
        }
        xs[i * d..(i + 1) * d].copy_from_slice(&new_x);
        if collateral {
            for x in xs.chunks_exact_mut(d) {
                domain.wrap(x);
            }
        } else {
            domain.wrap(&mut xs[i * d..(i + 1) * d]);
        }
        if let Some(k) = xs.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: "post-jump state",
                index: k / d,
            });
        }
        if run.log_events {
            touched.push(JumpRecord {
                time: c.time,
                indices: if collateral { (0..n).collect() } else { vec![i] },
            });
            events.push(JumpEvent {
                time: c.time,
                index: i,
                theta: theta.clone(),
                accepted: true,
                collateral,
            });
        }
    }
    let states = rec.tracks.pop().expect("one track");
    Ok(EngineOutput {
        states,
        events,
        touched,
    })
}

fn check_jump_input<T: Real, M: JumpModel<T> + ?Sized>(model: &M, init: &ParticleState<T>, run: &JumpRun<T>) -> Result<()> {
    run.validate()?;
    if init.dim() != model.dim() {
        return Err(Error::SizeMismatch(format!(
            "state dimension {} but model dimension {}",
            init.dim(),
            model.dim()
        )));
    }
    if init.domain() != model.domain() {
        return invalid(format!(
            "state domain {} but model domain {}",
            init.domain().tag(),
            model.domain().tag()
        ));
    }
    let bound = model.rate_bound();
    if !(bound >= T::zero()) || !bound.is_finite() {
        return invalid("rate bound must be finite and nonnegative");
    }
    Ok(())
}

fn simulate<T: Real, M: JumpModel<T> + ?Sized>(
    model: &M,
    init: &ParticleState<T>,
    run: &JumpRun<T>,
    rng: &RngStream,
    labels: Option<&[u64]>,
    collateral: bool,
) -> Result<JumpOutput<T>> {
    check_jump_input(model, init, run)?;
    let canon = Canonical::from_option(labels, init.n())?;
    let out = run_engine(model, canon.to_canonical(init), run, rng, canon.labels(), None, collateral)?;
    let mut bundle = TrajectoryBundle::new(out.states)?;
    if run.log_events {
        bundle = bundle.with_jumps(out.touched);
    }
    let bundle = canon.bundle_from_canonical(bundle);
    let events = out
        .events
        .into_iter()
        .map(|mut e| {
            e.index = canon.slot(e.index);
            e
        })
        .collect();
    Ok(JumpOutput { bundle, events })
}

/// PDMP: RK4 flow between events, `xⁱ ← ψ(xⁱ, μ, θ)` at accepted events.
///
/// `rng` is the replica stream; particle k draws its jump parameters from the
/// stream of its label (`labels[k]`, default k), so permuting `init` together
/// with `labels` permutes the output.
pub fn pdmp_simulate<T: Real, M: JumpModel<T> + ?Sized>(
    model: &M,
    init: &ParticleState<T>,
    run: &JumpRun<T>,
    rng: &RngStream,
    labels: Option<&[u64]>,
) -> Result<JumpOutput<T>> {
    simulate(model, init, run, rng, labels, false)
}

/// Same process as [`pdmp_simulate`], named after its Poisson random measure form.
pub fn parametric_jump_simulate<T: Real, M: JumpModel<T> + ?Sized>(
    model: &M,
    init: &ParticleState<T>,
    run: &JumpRun<T>,
    rng: &RngStream,
    labels: Option<&[u64]>,
) -> Result<JumpOutput<T>> {
    pdmp_simulate(model, init, run, rng, labels)
}

/// Jumps with collateral moves: every j ≠ i shifts by α̃(xʲ, xⁱ, μ, θⱼ, θᵢ)/N.
pub fn simultaneous_jump_simulate<T: Real, M: JumpModel<T> + ?Sized>(
    model: &M,
    init: &ParticleState<T>,
    run: &JumpRun<T>,
    rng: &RngStream,
    labels: Option<&[u64]>,
) -> Result<JumpOutput<T>> {
    if !model.has_collateral() {
        return invalid(format!("model `{}` declares no collateral jumps", model.name()));
    }
    simulate(model, init, run, rng, labels, true)
}

/// Last Picard iterate of the nonlinear jump process.
#[derive(Clone, Debug)]
pub struct JumpReference<T> {
    pub bundle: TrajectoryBundle<T>,
    /// W₁ between successive iterates at T, one entry per iteration.
    pub increments: Vec<f64>,
    pub converged: bool,
}

impl<T: Real> JumpReference<T> {
    pub fn copies(&self) -> usize {
        self.bundle.n()
    }
}

/// Frozen-flow Picard ensemble of M copies of the nonlinear jump process.
///
/// Iteration 0 is the M-particle system (with collateral jumps when the model
/// has them). Iteration k+1 reruns the same clock and parameter streams with
/// λ and ψ evaluated on iterate k at the last grid time, and replaces
/// collateral jumps by their mean-field drift on that ensemble.
pub fn nonlinear_jump_reference<T: Real, M: JumpModel<T> + ?Sized>(
    model: &M,
    init: &ParticleState<T>,
    run: &JumpRun<T>,
    picard: &PicardConfig,
    rng: &RngStream,
) -> Result<JumpReference<T>> {
    check_jump_input(model, init, run)?;
    if init.n() < 2 {
        return invalid("nonlinear reference needs at least two copies");
    }
    if picard.iterations == 0 {
        return invalid("at least one Picard iteration is required");
    }
    let m = init.n();
    let labels: Vec<u64> = (0..m as u64).collect();
    let collateral = model.has_collateral();
    let mut prev = run_engine(model, init.clone(), &run.without_log(), rng, &labels, None, collateral)?.states;
    let drift_thetas: Option<Vec<Vec<ThetaPair<T>>>> = collateral.then(|| {
        (0..run.grid_points)
            .map(|seg| {
                let mut r = rng.split(purpose::REFERENCE).split(seg as u64).rng();
                (0..m)
                    .map(|_| {
                        let (mut a, mut b) = (Vec::new(), Vec::new());
                        model.sample_theta(&mut r, &mut a);
                        model.sample_theta(&mut r, &mut b);
                        (a, b)
                    })
                    .collect()
            })
            .collect()
    });
    let mut increments = Vec::with_capacity(picard.iterations);
    for _ in 0..picard.iterations {
        let frozen = Frozen {
            flow: &prev,
            drift_thetas: drift_thetas.as_deref(),
        };
        let next = run_engine(model, init.clone(), &run.without_log(), rng, &labels, Some(&frozen), false)?.states;
        let (a, b) = (prev.last().expect("grid"), next.last().expect("grid"));
        increments.push(to_f64(w1_empirical(a, b, model.domain())?));
        prev = next;
    }
    let converged = increments.last().is_some_and(|&x| x <= picard.tol);
    Ok(JumpReference {
        bundle: TrajectoryBundle::new(prev)?,
        increments,
        converged,
    })
}

/// Couples one jump through the empirical monotone map between two clouds.
///
/// The copy lands on `reference[pick]`; the particle lands on the order
/// statistic of `particle` with the same rank, ties in `reference` being
/// broken by `tie ∈ [0, 1)`. Returns (copy value, particle value, W₁ between
/// the clouds).
pub fn quantile_coupled_jump<T: Real>(reference: &[T], particle: &[T], pick: usize, tie: f64) -> Result<(T, T, f64)> {
    if reference.is_empty() || reference.len() != particle.len() || pick >= reference.len() {
        return invalid("quantile coupling needs two clouds of equal positive size");
    }
    let target = reference[pick];
    let below = reference.iter().filter(|&&r| r < target).count();
    let equal = reference.iter().filter(|&&r| r == target).count();
    let rank = below + ((tie * equal as f64) as usize).min(equal - 1);
    let sort = |v: &[T]| {
        let mut s: Vec<f64> = v.iter().map(|&x| to_f64(x)).collect();
        s.sort_by(f64::total_cmp);
        s
    };
    let (sr, sp) = (sort(reference), sort(particle));
    let cost = sr.iter().zip(&sp).map(|(a, b)| (a - b).abs()).sum::<f64>() / sr.len() as f64;
    Ok((target, lit(sp[rank]), cost))
}

/// Shared-clock event of the optimal-jump coupling.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CoupledEvent<T> {
    pub time: T,
    pub index: usize,
    pub particle_jumped: bool,
    pub copy_jumped: bool,
}

/// One replica of the optimal-jump coupling.
#[derive(Clone, Debug)]
pub struct CoupledJumpRun<T> {
    pub particles: TrajectoryBundle<T>,
    pub copies: TrajectoryBundle<T>,
    pub events: Vec<CoupledEvent<T>>,
    /// W₁ between the two jump clouds at each doubly-accepted event.
    pub transport_costs: Vec<f64>,
}

/// Runs N particles and N nonlinear copies driven by the reference flow with
/// shared clocks.
///
/// A candidate (i, U₁, U₂) is shared when U₁Λ < max(λ_particle, λ_copy);
/// each side then jumps when U₂·max < its own rate, so its marginal rate is
/// exact. When both jump, Q parameters are drawn and the two jumps are coupled
/// by [`quantile_coupled_jump`].
pub fn optimal_jump_coupling_replica<T: Real, M: JumpModel<T> + ?Sized>(
    model: &M,
    reference: &JumpReference<T>,
    init: &ParticleState<T>,
    run: &JumpRun<T>,
    quantile_samples: usize,
    rng: &RngStream,
) -> Result<CoupledJumpRun<T>> {
    check_jump_input(model, init, run)?;
    if model.dim() != 1 {
        return invalid("optimal-jump coupling is one-dimensional");
    }
    if model.has_collateral() {
        return invalid("optimal-jump coupling does not handle collateral jumps");
    }
    if quantile_samples == 0 {
        return invalid("quantile map needs at least one sample");
    }
    let grid = run.grid(init.t);
    let ref_times = &reference.bundle.times;
    if ref_times.len() != grid.len()
        || ref_times
            .iter()
            .zip(&grid)
            .any(|(a, b)| (to_f64(*a) - to_f64(*b)).abs() > 1e-9 * to_f64(*b).abs().max(1.0))
    {
        return Err(Error::GridMismatch("coupling grid differs from the reference grid".into()));
    }
    let n = init.n();
    let bound = model.rate_bound();
    let flow_ref = &reference.bundle.states;
    let frozen = Frozen {
        flow: flow_ref,
        drift_thetas: None,
    };
    let mut particles = init.clone();
    let mut copies = init.clone();
    let mut clock = rng.split(purpose::CLOCK).rng();
    let mut theta_p: Vec<StreamRng> = (0..n as u64).map(|l| rng.split(l).split(purpose::THETA).rng()).collect();
    let mut theta_c: Vec<StreamRng> = (0..n as u64)
        .map(|l| rng.split(l).split(purpose::REFERENCE).rng())
        .collect();
    let mut quant: Vec<StreamRng> = (0..n as u64).map(|l| rng.split(l).split(purpose::QUANTILE).rng()).collect();
    let mut rec = Recorder::new(grid, &[&particles, &copies]);
    let horizon = rec.horizon();
    let mut rk = Rk4::new(1);
    let max_step = run.max_flow_step;
    let mut flow = |s: &mut ParticleState<T>, dt: T, seg: usize| flow_segment(model, None, s, dt, seg, max_step, &mut rk);

    let mut events = Vec::new();
    let mut costs = Vec::new();
    let mut theta = Vec::new();
    let mut cloud_r = vec![T::zero(); quantile_samples];
    let mut cloud_p = vec![T::zero(); quantile_samples];
    let mut out = [T::zero()];
    loop {
        let Some(c) = draw_candidate(&mut clock, n, bound, particles.t, horizon) else {
            rec.advance(&mut [&mut particles, &mut copies], horizon, &mut flow);
            break;
        };
        rec.advance(&mut [&mut particles, &mut copies], c.time, &mut flow);
        let u2: T = clock.uniform();
        let seg = rec.segment();
        let i = c.index;
        let f = measure_at(Some(&frozen), &copies, seg);
        let lp = model.rate(particles.particle(i), particles.view());
        check_rate(lp, bound, particles.particle(i))?;
        let lr = model.rate(copies.particle(i), f);
        check_rate(lr, bound, copies.particle(i))?;
        let top = lp.max(lr);
        if !(c.u * bound < top) {
            continue;
        }
        let jp = u2 * top < lp;
        let jr = u2 * top < lr;
        events.push(CoupledEvent {
            time: c.time,
            index: i,
            particle_jumped: jp,
            copy_jumped: jr,
        });
        let (new_p, new_c) = match (jp, jr) {
            (true, true) => {
                let q = &mut quant[i];
                for k in 0..quantile_samples {
                    theta.clear();
                    model.sample_theta(q, &mut theta);
                    model.jump(copies.particle(i), f, &theta, &mut out);
                    cloud_r[k] = out[0];
                    model.jump(particles.particle(i), particles.view(), &theta, &mut out);
                    cloud_p[k] = out[0];
                }
                let pick = q.index(quantile_samples);
                let tie: f64 = q.uniform();
                let (rc, pp, cost) = quantile_coupled_jump(&cloud_r, &cloud_p, pick, tie)?;
                costs.push(cost);
                (Some(pp), Some(rc))
            }
            (true, false) => {
                theta.clear();
                model.sample_theta(&mut theta_p[i], &mut theta);
                model.jump(particles.particle(i), particles.view(), &theta, &mut out);
                (Some(out[0]), None)
            }
            (false, true) => {
                theta.clear();
                model.sample_theta(&mut theta_c[i], &mut theta);
                model.jump(copies.particle(i), f, &theta, &mut out);
                (None, Some(out[0]))
            }
            (false, false) => (None, None),
        };
        let domain = model.domain();
        for (state, value) in [(&mut particles, new_p), (&mut copies, new_c)] {
            if let Some(v) = value {
                if !v.is_finite() {
                    return Err(Error::NonFinite {
                        what: "post-jump state",
                        index: i,
                    });
                }
                let xs = state.coords_mut();
                xs[i] = v;
                domain.wrap(&mut xs[i..i + 1]);
            }
        }
    }
    let copies_track = rec.tracks.pop().expect("copy track");
    let particle_track = rec.tracks.pop().expect("particle track");
    Ok(CoupledJumpRun {
        particles: TrajectoryBundle::new(particle_track)?,
        copies: TrajectoryBundle::new(copies_track)?,
        events,
        transport_costs: costs,
    })
}

/// Settings of [`optimal_jump_coupling_1d`].
#[derive(Clone, Copy, Debug)]
pub struct JumpCouplingConfig {
    pub replicas: usize,
    pub quantile_samples: usize,
    /// Exponent p of the reported errors |Xⁱ − X̄ⁱ|^p.
    pub p: f64,
}

impl Default for JumpCouplingConfig {
    fn default() -> Self {
        JumpCouplingConfig {
            replicas: 32,
            quantile_samples: DEFAULT_QUANTILE_SAMPLES,
            p: 1.0,
        }
    }
}

/// ε(N, T) of the optimal-jump coupling, over replicas run in parallel.
///
/// Particle i of replica r starts from `init(rng)` with its own stream; the
/// nonlinear copy starts at the same point.
pub fn optimal_jump_coupling_1d<T, M, F>(
    model: &M,
    n: usize,
    reference: &JumpReference<T>,
    run: &JumpRun<T>,
    init: F,
    config: &JumpCouplingConfig,
    rng: &RngStream,
) -> Result<CouplingReport>
where
    T: Real,
    M: JumpModel<T> + ?Sized,
    F: Fn(&mut StreamRng) -> T + Sync + Send,
{
    if n == 0 || config.replicas == 0 {
        return invalid("coupling needs N ≥ 1 and at least one replica");
    }
    let runs = run_replicas(rng, config.replicas, |_, rs| -> Result<(ReplicaErrors, Vec<f64>)> {
        let xs: Vec<T> = (0..n as u64)
            .map(|l| init(&mut rs.split(l).split(purpose::INIT).rng()))
            .collect();
        let state = ParticleState::new(T::zero(), 1, model.domain(), xs)?;
        let out = optimal_jump_coupling_replica(model, reference, &state, run, config.quantile_samples, &rs)?;
        let errs = ReplicaErrors::from_bundles(&out.particles, &out.copies, config.p, model.domain())?;
        Ok((errs, out.transport_costs))
    });
    let mut replicas = Vec::with_capacity(runs.len());
    let mut costs = Vec::new();
    for r in runs {
        let (e, c) = r?;
        replicas.push(e);
        costs.extend(c);
    }
    let meta = ReportMeta {
        n,
        t_end: to_f64(run.t_end),
        dt: to_f64(run.t_end) / run.grid_points as f64,
        p: config.p,
        seed: rng.seed(),
    };
    let times = run.grid(T::zero()).into_iter().map(to_f64).collect();
    let mut report = CouplingReport::from_replicas(meta, times, &replicas, &rng.split(purpose::BOOTSTRAP))?;
    report.transport_cost = Some(if costs.is_empty() {
        0.0
    } else {
        costs.iter().sum::<f64>() / costs.len() as f64
    });
    Ok(report)
}

/// Leader kernel K of the choose-the-leader model.
#[derive(Clone, Debug, PartialEq)]
pub enum LeaderKernel {
    /// Row-stochastic m × m matrix on E = {0, …, m−1}.
    Finite { m: usize, rows: Vec<f64> },
    /// z ↦ N(z, τ²) on R.
    Gaussian { tau: f64 },
}

/// λ ≡ 1; a jumping particle copies a uniformly chosen atom of μ (itself
/// included) and moves it through K.
#[derive(Clone, Debug)]
pub struct ChooseLeader {
    kernel: LeaderKernel,
    cumulative: Vec<f64>,
}

pub fn choose_leader_model(kernel: LeaderKernel) -> Result<ChooseLeader> {
    let cumulative = match &kernel {
        LeaderKernel::Finite { m, rows } => {
            if *m == 0 || rows.len() != m * m {
                return invalid("finite leader kernel must be m × m");
            }
            let mut cum = Vec::with_capacity(rows.len());
            for r in rows.chunks_exact(*m) {
                if r.iter().any(|&p| !(p >= 0.0)) || (r.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
                    return invalid("finite leader kernel rows must be probability vectors");
                }
                let mut acc = 0.0;
                for &p in r {
                    acc += p;
                    cum.push(acc);
                }
            }
            cum
        }
        LeaderKernel::Gaussian { tau } => {
            if !(*tau >= 0.0) || !tau.is_finite() {
                return invalid("leader kernel width must be finite and nonnegative");
            }
            Vec::new()
        }
    };
    Ok(ChooseLeader { kernel, cumulative })
}

impl ChooseLeader {
    pub fn kernel(&self) -> &LeaderKernel {
        &self.kernel
    }
}

impl<T: Real> JumpModel<T> for ChooseLeader {
    fn name(&self) -> &str {
        "choose-leader"
    }
    fn dim(&self) -> usize {
        1
    }
    fn rate_bound(&self) -> T {
        T::one()
    }
    fn rate(&self, _x: &[T], _mu: MeasureView<'_, T>) -> T {
        T::one()
    }
    fn sample_theta(&self, rng: &mut StreamRng, out: &mut Vec<T>) {
        out.push(rng.uniform());
        match self.kernel {
            LeaderKernel::Finite { .. } => out.push(rng.uniform()),
            LeaderKernel::Gaussian { .. } => out.push(rng.normal()),
        }
    }
    fn jump(&self, _x: &[T], mu: MeasureView<'_, T>, theta: &[T], out: &mut [T]) {
        let n = mu.len();
        let k = ((to_f64(theta[0]) * n as f64) as usize).min(n - 1);
        let z = mu.atom(k)[0];
        out[0] = match self.kernel {
            LeaderKernel::Finite { m, .. } => {
                let row = (to_f64(z).round().max(0.0) as usize).min(m - 1);
                let cum = &self.cumulative[row * m..(row + 1) * m];
                let u = to_f64(theta[1]);
                let e = cum.iter().position(|&c| u < c).unwrap_or(m - 1);
                from_usize(e)
            }
            LeaderKernel::Gaussian { tau } => z + lit::<T>(tau) * theta[1],
        };
    }
}

/// BGK relaxation on a periodic box: state (x, v), flow (v, 0), velocity
/// resampled from the local Maxwellian at rate λ.
#[derive(Clone, Debug)]
pub struct Bgk {
    lambda: f64,
    box_len: f64,
    radius: f64,
}

/// `radius = None` uses box/8.
pub fn bgk_model(lambda: f64, box_len: f64, radius: Option<f64>) -> Result<Bgk> {
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return invalid("BGK rate must be finite and nonnegative");
    }
    if !(box_len > 0.0) || !box_len.is_finite() {
        return invalid("BGK box length must be positive");
    }
    let radius = radius.unwrap_or(box_len / 8.0);
    if !(radius > 0.0) {
        return invalid("BGK locality radius must be positive");
    }
    Ok(Bgk {
        lambda,
        box_len,
        radius,
    })
}

impl Bgk {
    pub fn box_len(&self) -> f64 {
        self.box_len
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }
}

/// Mean and variance of the velocities of atoms within periodic distance
/// `radius` of position `x`.
pub fn local_moments<T: Real>(x: T, mu: MeasureView<'_, T>, box_len: f64, radius: f64) -> (f64, f64) {
    let x = to_f64(x);
    let (mut n, mut s, mut s2) = (0usize, 0.0, 0.0);
    for a in mu.iter() {
        let mut dx = (to_f64(a[0]) - x).rem_euclid(box_len);
        dx = dx.min(box_len - dx);
        if dx <= radius {
            let v = to_f64(a[1]);
            n += 1;
            s += v;
            s2 += v * v;
        }
    }
    if n == 0 {
        return (0.0, 0.0);
    }
    let u = s / n as f64;
    (u, (s2 / n as f64 - u * u).max(0.0))
}

impl<T: Real> JumpModel<T> for Bgk {
    fn name(&self) -> &str {
        "bgk"
    }
    fn dim(&self) -> usize {
        2
    }
    fn domain(&self) -> Domain {
        Domain::Kinetic
    }
    fn rate_bound(&self) -> T {
        lit(self.lambda)
    }
    fn rate(&self, _x: &[T], _mu: MeasureView<'_, T>) -> T {
        lit(self.lambda)
    }
    fn sample_theta(&self, rng: &mut StreamRng, out: &mut Vec<T>) {
        out.push(rng.normal());
    }
    fn jump(&self, x: &[T], mu: MeasureView<'_, T>, theta: &[T], out: &mut [T]) {
        let (u, temp) = local_moments(x[0], mu, self.box_len, self.radius);
        out[0] = x[0];
        out[1] = lit::<T>(u) + lit::<T>(temp.sqrt()) * theta[0];
    }
    fn flow(&self, x: &[T], out: &mut [T]) {
        out[0] = x[1];
        out[1] = T::zero();
    }
    fn has_flow(&self) -> bool {
        true
    }
}

/// Integrate-and-fire toy: leak −γx, firing rate Λx/(1+x), reset to 0 and a
/// collateral kick α̃ ≡ `kick` to every other neuron.
#[derive(Clone, Debug)]
pub struct IntegrateAndFire {
    rate_max: f64,
    leak: f64,
    kick: f64,
}

pub fn neuron_model(rate_max: f64, leak: f64, kick: f64) -> Result<IntegrateAndFire> {
    if !(rate_max >= 0.0) || !(leak >= 0.0) || !(kick >= 0.0) || !(rate_max + leak + kick).is_finite() {
        return invalid("neuron parameters must be finite and nonnegative");
    }
    Ok(IntegrateAndFire { rate_max, leak, kick })
}

impl<T: Real> JumpModel<T> for IntegrateAndFire {
    fn name(&self) -> &str {
        "integrate-and-fire"
    }
    fn dim(&self) -> usize {
        1
    }
    fn rate_bound(&self) -> T {
        lit(self.rate_max)
    }
    fn rate(&self, x: &[T], _mu: MeasureView<'_, T>) -> T {
        let v = x[0].max(T::zero());
        lit::<T>(self.rate_max) * v / (T::one() + v)
    }
    fn sample_theta(&self, _rng: &mut StreamRng, _out: &mut Vec<T>) {}
    fn jump(&self, _x: &[T], _mu: MeasureView<'_, T>, _theta: &[T], out: &mut [T]) {
        out[0] = T::zero();
    }
    fn flow(&self, x: &[T], out: &mut [T]) {
        out[0] = -lit::<T>(self.leak) * x[0];
    }
    fn has_flow(&self) -> bool {
        self.leak != 0.0
    }
    fn collateral(&self, _xj: &[T], _xi: &[T], _mu: MeasureView<'_, T>, _tj: &[T], _ti: &[T], out: &mut [T]) -> Option<()> {
        out[0] = lit(self.kick);
        Some(())
    }
    fn has_collateral(&self) -> bool {
        true
    }
    fn collateral_bound(&self) -> T {
        lit(self.kick)
    }
    fn measure_dependent(&self) -> bool {
        false
    }
}
