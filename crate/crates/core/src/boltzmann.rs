//! Binary collision processes of Boltzmann and Kac type.
//!
//! Pairs are unordered and collide at rate λ(zⁱ, zʲ)/N. Three schedulers are
//! provided: a single uniform clock with fictitious collisions, one clock per
//! pair, and the Nanbu variant where only one member of the pair moves.
//! Interaction graphs trace the collision history of one particle backward in
//! time.

use std::collections::HashSet;
use std::f64::consts::TAU;
use std::io::Write;
use std::sync::Arc;

use crate::error::{invalid, Error, Result};
use crate::jumps::check_rate;
use crate::model::{CollisionModel, Conservation};
use crate::real::{from_usize, lit, to_f64, Real};
use crate::recorder::Recorder;
use crate::rng::{digest, purpose, RngStream, StreamRng};
use crate::state::{fmt_f64, fmt_real, uniform_grid, Canonical, Domain, JumpRecord, ParticleState, TrajectoryBundle};

/// Largest system handled by [`pair_clock_simulate`].
pub const PAIR_CLOCK_MAX_N: usize = 64;

/// Horizon and output grid of a collision simulation.
#[derive(Clone, Copy, Debug)]
pub struct CollisionRun<T> {
    pub t_end: T,
    /// Number of output intervals.
    pub grid_points: usize,
    /// Rate-freezing sub-step of the pair clocks under free flight; `None` means T/10⁴.
    pub dt_rate: Option<T>,
    pub log_events: bool,
}

impl<T: Real> CollisionRun<T> {
    pub fn new(t_end: T, grid_points: usize) -> Self {
        CollisionRun {
            t_end,
            grid_points,
            dt_rate: None,
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
        if let Some(h) = self.dt_rate {
            if !(h > T::zero()) {
                return invalid("dt_rate must be positive");
            }
        }
        Ok(())
    }

    fn rate_step(&self) -> T {
        self.dt_rate.unwrap_or(self.t_end / lit(1e4))
    }
}

/// One clock ring of a collision scheduler.
#[derive(Clone, Debug, PartialEq)]
pub struct CollisionEvent<T> {
    pub time: T,
    /// Pair with `i < j` (caller slots).
    pub i: usize,
    pub j: usize,
    /// Rejected candidate of the uniform clock.
    pub fictitious: bool,
    /// Collision parameter; empty for fictitious events.
    pub theta: Vec<T>,
}

impl<T: Real> CollisionEvent<T> {
    pub const CSV_HEADER: &'static str = "time,i,j,fictitious,theta_digest";

    pub fn write_csv_row<W: Write>(&self, w: &mut W) -> Result<()> {
        writeln!(
            w,
            "{},{},{},{},{:016x}",
            fmt_real(self.time),
            self.i,
            self.j,
            u8::from(self.fictitious),
            digest(&self.theta)
        )?;
        Ok(())
    }
}

pub fn write_collision_log_csv<T: Real, W: Write>(events: &[CollisionEvent<T>], w: &mut W) -> Result<()> {
    writeln!(w, "{}", CollisionEvent::<T>::CSV_HEADER)?;
    for e in events {
        e.write_csv_row(w)?;
    }
    Ok(())
}

#[derive(Clone, Debug)]
pub struct CollisionOutput<T> {
    pub bundle: TrajectoryBundle<T>,
    pub events: Vec<CollisionEvent<T>>,
}

impl<T> CollisionOutput<T> {
    pub fn accepted(&self) -> usize {
        self.events.iter().filter(|e| !e.fictitious).count()
    }
}

fn free_flight<T: Real>(s: &mut ParticleState<T>, dt: T) {
    let d = s.dim() / 2;
    let dim = s.dim();
    for z in s.coords_mut().chunks_exact_mut(dim) {
        for k in 0..d {
            z[k] += z[d + k] * dt;
        }
    }
}

fn flow_for<T: Real, M: CollisionModel<T> + ?Sized>(model: &M) -> impl FnMut(&mut ParticleState<T>, T, usize) {
    let moving = model.free_flight();
    move |s: &mut ParticleState<T>, dt: T, _| {
        if moving && dt > T::zero() {
            free_flight(s, dt);
        }
    }
}

/// Conserved quantity of a pair, as a short vector.
fn invariant<T: Real>(kind: Conservation, kinetic: bool, z1: &[T], z2: &[T]) -> Vec<f64> {
    let v = |z: &[T]| -> Vec<f64> {
        let from = if kinetic { z.len() / 2 } else { 0 };
        z[from..].iter().map(|&x| to_f64(x)).collect()
    };
    let (a, b) = (v(z1), v(z2));
    let sq = |x: &[f64]| x.iter().map(|c| c * c).sum::<f64>();
    match kind {
        Conservation::None => Vec::new(),
        Conservation::SquaredNorm => vec![sq(&a) + sq(&b)],
        Conservation::Sum => a.iter().zip(&b).map(|(x, y)| x + y).collect(),
        Conservation::MomentumEnergy => {
            let mut out: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + y).collect();
            out.push(sq(&a) + sq(&b));
            out
        }
    }
}

fn conserved(before: &[f64], after: &[f64], scale: f64, eps: f64) -> bool {
    before.iter().zip(after).all(|(x, y)| (x - y).abs() <= 1e3 * eps * scale.max(1e-300))
}

fn pair_scale<T: Real>(z1: &[T], z2: &[T]) -> f64 {
    z1.iter().chain(z2).map(|&x| to_f64(x) * to_f64(x)).sum::<f64>().max(1.0)
}

struct Pair<T> {
    a: Vec<T>,
    b: Vec<T>,
    out_a: Vec<T>,
    out_b: Vec<T>,
    theta: Vec<T>,
}

impl<T: Real> Pair<T> {
    fn new(d: usize) -> Self {
        Pair {
            a: vec![T::zero(); d],
            b: vec![T::zero(); d],
            out_a: vec![T::zero(); d],
            out_b: vec![T::zero(); d],
            theta: Vec::new(),
        }
    }

    fn load(&mut self, s: &ParticleState<T>, i: usize, j: usize) {
        self.a.copy_from_slice(s.particle(i));
        self.b.copy_from_slice(s.particle(j));
    }

    fn concat(&self) -> Vec<T> {
        self.a.iter().chain(&self.b).copied().collect()
    }
}

fn write_particle<T: Real>(s: &mut ParticleState<T>, i: usize, z: &[T]) {
    let d = s.dim();
    s.coords_mut()[i * d..(i + 1) * d].copy_from_slice(z);
}

/// Applies Γ⁽²⁾ (or its Nanbu marginal) to the loaded pair and writes it back.
fn apply_collision<T: Real, M: CollisionModel<T> + ?Sized>(
    model: &M,
    s: &mut ParticleState<T>,
    pair: &mut Pair<T>,
    (i, j): (usize, usize),
    nanbu_first: Option<bool>,
) -> Result<Vec<usize>> {
    model.validate_event(&pair.a, &pair.b, &pair.theta)?;
    let domain = s.domain();
    match nanbu_first {
        None => {
            model.collide(&pair.a, &pair.b, &pair.theta, &mut pair.out_a, &mut pair.out_b);
            debug_assert!(
                {
                    let kinetic = model.free_flight();
                    let kind = model.conservation();
                    conserved(
                        &invariant(kind, kinetic, &pair.a, &pair.b),
                        &invariant(kind, kinetic, &pair.out_a, &pair.out_b),
                        pair_scale(&pair.a, &pair.b),
                        to_f64(T::epsilon()),
                    )
                },
                "collision of `{}` broke its conservation law",
                model.name()
            );
            domain.wrap(&mut pair.out_a);
            domain.wrap(&mut pair.out_b);
            write_particle(s, i, &pair.out_a);
            write_particle(s, j, &pair.out_b);
            Ok(vec![i, j])
        }
        Some(first) => {
            let (k, z, other) = if first { (i, &pair.a, &pair.b) } else { (j, &pair.b, &pair.a) };
            model.nanbu_update(z, other, &pair.theta, &mut pair.out_a);
            domain.wrap(&mut pair.out_a);
            write_particle(s, k, &pair.out_a);
            Ok(vec![k])
        }
    }
}

fn check_collision_input<T: Real, M: CollisionModel<T> + ?Sized>(
    model: &M,
    init: &ParticleState<T>,
    run: &CollisionRun<T>,
) -> Result<()> {
    run.validate()?;
    if init.dim() != model.dim() {
        return Err(Error::SizeMismatch(format!(
            "state dimension {} but model `{}` has dimension {}",
            init.dim(),
            model.name(),
            model.dim()
        )));
    }
    if init.n() < 2 {
        return invalid("collision processes need at least two particles");
    }
    let bound = model.rate_bound();
    if !(bound >= T::zero()) || !bound.is_finite() {
        return invalid("rate bound Λ must be finite and nonnegative");
    }
    Ok(())
}

struct EngineOut<T> {
    states: Vec<ParticleState<T>>,
    touched: Vec<JumpRecord<T>>,
    events: Vec<CollisionEvent<T>>,
}

fn finish<T: Real>(
    out: EngineOut<T>,
    canon: &Canonical,
    log: bool,
) -> Result<CollisionOutput<T>> {
    let mut bundle = TrajectoryBundle::new(out.states)?;
    if log {
        let touched = out
            .touched
            .into_iter()
            .map(|mut r| {
                r.indices.iter_mut().for_each(|k| *k = canon.slot(*k));
                r
            })
            .collect();
        bundle = bundle.with_jumps(touched);
    }
    let bundle = canon.bundle_from_canonical(bundle);
    let events = out
        .events
        .into_iter()
        .map(|mut e| {
            let (a, b) = (canon.slot(e.i), canon.slot(e.j));
            e.i = a.min(b);
            e.j = a.max(b);
            e
        })
        .collect();
    Ok(CollisionOutput { bundle, events })
}

fn uniform_clock_engine<T: Real, M: CollisionModel<T> + ?Sized>(
    model: &M,
    mut state: ParticleState<T>,
    run: &CollisionRun<T>,
    rng: &RngStream,
    nanbu: bool,
) -> Result<EngineOut<T>> {
    let n = state.n();
    let bound = model.rate_bound();
    let master = bound * from_usize::<T>(n - 1) / lit(2.0);
    let mut clock = rng.split(purpose::CLOCK).rng();
    let mut rec = Recorder::new(uniform_grid(run.t_end, run.grid_points), &[&state]);
    let horizon = rec.horizon();
    let mut flow = flow_for(model);
    let mut pair = Pair::new(state.dim());
    let mut touched = Vec::new();
    let mut events = Vec::new();
    let mut t = T::zero();
    while master > T::zero() {
        let tn = t + clock.exponential(master);
        if tn > horizon {
            break;
        }
        rec.advance(&mut [&mut state], tn, &mut flow);
        t = tn;
        let x = clock.index(n);
        let mut y = clock.index(n - 1);
        if y >= x {
            y += 1;
        }
        let (i, j) = (x.min(y), x.max(y));
        let u: T = clock.uniform();
        pair.load(&state, i, j);
        let rate = model.rate(&pair.a, &pair.b);
        check_rate(rate, bound, &pair.concat())?;
        if u * bound < rate {
            pair.theta.clear();
            model.sample_theta(&mut clock, &mut pair.theta);
            let first = if nanbu { Some(clock.uniform::<f64>() < 0.5) } else { None };
            let moved = apply_collision(model, &mut state, &mut pair, (i, j), first)?;
            if run.log_events {
                touched.push(JumpRecord { time: t, indices: moved });
                events.push(CollisionEvent {
                    time: t,
                    i,
                    j,
                    fictitious: false,
                    theta: pair.theta.clone(),
                });
            }
        } else if run.log_events {
            events.push(CollisionEvent {
                time: t,
                i,
                j,
                fictitious: true,
                theta: Vec::new(),
            });
        }
    }
    rec.advance(&mut [&mut state], horizon, &mut flow);
    Ok(EngineOut {
        states: rec.tracks.pop().expect("one track"),
        touched,
        events,
    })
}

/// Uniform-clock scheduler with fictitious collisions.
///
/// A master clock of rate Λ(N−1)/2 picks an unordered pair uniformly; the
/// collision is accepted with probability λ/Λ. All draws come from the
/// replica stream `rng`, indexed in the canonical (label-sorted) order.
pub fn uniform_clock_simulate<T: Real, M: CollisionModel<T> + ?Sized>(
    model: &M,
    init: &ParticleState<T>,
    run: &CollisionRun<T>,
    rng: &RngStream,
    labels: Option<&[u64]>,
) -> Result<CollisionOutput<T>> {
    check_collision_input(model, init, run)?;
    let canon = Canonical::from_option(labels, init.n())?;
    let out = uniform_clock_engine(model, canon.to_canonical(init), run, rng, false)?;
    finish(out, &canon, run.log_events)
}

/// Nanbu scheduler: same clock, but only one uniformly chosen member of an
/// accepted pair moves, following the first marginal of Γ⁽²⁾.
///
/// Compared with the pair model at rate λ, the Nanbu system at rate 2λ has
/// the same one-particle limit.
pub fn nanbu_simulate<T: Real, M: CollisionModel<T> + ?Sized>(
    model: &M,
    init: &ParticleState<T>,
    run: &CollisionRun<T>,
    rng: &RngStream,
    labels: Option<&[u64]>,
) -> Result<CollisionOutput<T>> {
    check_collision_input(model, init, run)?;
    let canon = Canonical::from_option(labels, init.n())?;
    let out = uniform_clock_engine(model, canon.to_canonical(init), run, rng, true)?;
    finish(out, &canon, run.log_events)
}

/// One clock per unordered pair, by time-change of unit exponentials.
///
/// Pair (a, b) fires when ∫ λ(Zᵃ, Zᵇ)/N dt reaches its current threshold.
/// Without free flight the rates are constant between collisions and the
/// next firing time is exact; with free flight the rates are frozen on
/// sub-steps of `run.dt_rate`.
pub fn pair_clock_simulate<T: Real, M: CollisionModel<T> + ?Sized>(
    model: &M,
    init: &ParticleState<T>,
    run: &CollisionRun<T>,
    rng: &RngStream,
    labels: Option<&[u64]>,
) -> Result<CollisionOutput<T>> {
    check_collision_input(model, init, run)?;
    let n = init.n();
    if n > PAIR_CLOCK_MAX_N {
        return Err(Error::CapExceeded {
            what: "pair-clock system",
            size: n,
            cap: PAIR_CLOCK_MAX_N,
        });
    }
    let canon = Canonical::from_option(labels, n)?;
    let mut state = canon.to_canonical(init);
    let lbl = canon.labels();
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|a| (a + 1..n).map(move |b| (a, b))).collect();
    let mut streams: Vec<StreamRng> = pairs
        .iter()
        .map(|&(a, b)| rng.split(purpose::PARTNER).split(lbl[a]).split(lbl[b]).rng())
        .collect();
    let mut thresholds: Vec<T> = streams.iter_mut().map(|s| s.exponential(T::one())).collect();
    let mut integrated = vec![T::zero(); pairs.len()];
    let mut rates = vec![T::zero(); pairs.len()];
    let nn = from_usize::<T>(n);
    let mut pair = Pair::new(state.dim());
    let mut refresh = |state: &ParticleState<T>, rates: &mut [T], which: &dyn Fn(usize, usize) -> bool| -> Result<()> {
        for (p, &(a, b)) in pairs.iter().enumerate() {
            if which(a, b) {
                pair.load(state, a, b);
                let r = model.rate(&pair.a, &pair.b);
                if !(r >= T::zero()) || !r.is_finite() {
                    check_rate(r, T::infinity(), &pair.concat())?;
                }
                rates[p] = r / nn;
            }
        }
        Ok(())
    };
    refresh(&state, &mut rates, &|_, _| true)?;

    let mut rec = Recorder::new(uniform_grid(run.t_end, run.grid_points), &[&state]);
    let horizon = rec.horizon();
    let mut flow = flow_for(model);
    let h = run.rate_step();
    let mut substep = 1usize;
    let mut touched = Vec::new();
    let mut events = Vec::new();
    let mut pair = Pair::new(state.dim());
    let mut t = T::zero();
    loop {
        let limit = if model.free_flight() {
            (h * from_usize::<T>(substep)).min(horizon)
        } else {
            horizon
        };
        let mut best: Option<(usize, T)> = None;
        for p in 0..pairs.len() {
            if rates[p] > T::zero() {
                let tau = (thresholds[p] - integrated[p]).max(T::zero()) / rates[p];
                if best.is_none_or(|(_, b)| tau < b) {
                    best = Some((p, tau));
                }
            }
        }
        match best {
            Some((p, tau)) if t + tau <= limit => {
                for q in 0..pairs.len() {
                    integrated[q] += rates[q] * tau;
                }
                let tn = t + tau;
                rec.advance(&mut [&mut state], tn, &mut flow);
                t = tn;
                let (a, b) = pairs[p];
                pair.load(&state, a, b);
                pair.theta.clear();
                model.sample_theta(&mut streams[p], &mut pair.theta);
                let moved = apply_collision(model, &mut state, &mut pair, (a, b), None)?;
                integrated[p] = T::zero();
                thresholds[p] = streams[p].exponential(T::one());
                refresh(&state, &mut rates, &|x, y| x == a || x == b || y == a || y == b)?;
                if run.log_events {
                    touched.push(JumpRecord { time: t, indices: moved });
                    events.push(CollisionEvent {
                        time: t,
                        i: a,
                        j: b,
                        fictitious: false,
                        theta: pair.theta.clone(),
                    });
                }
            }
            _ => {
                for q in 0..pairs.len() {
                    integrated[q] += rates[q] * (limit - t);
                }
                rec.advance(&mut [&mut state], limit, &mut flow);
                t = limit;
                if t >= horizon {
                    break;
                }
                substep += 1;
                refresh(&state, &mut rates, &|_, _| true)?;
            }
        }
    }
    let out = EngineOut {
        states: rec.tracks.pop().expect("one track"),
        touched,
        events,
    };
    finish(out, &canon, run.log_events)
}

/// Kac rotation (v₁cosθ + v₂sinθ, −v₁sinθ + v₂cosθ).
pub fn kac_collision<T: Real>(v1: T, v2: T, theta: T) -> (T, T) {
    let (s, c) = theta.sin_cos();
    (v1 * c + v2 * s, -v1 * s + v2 * c)
}

/// Kac's one-dimensional caricature of a gas: constant rate, uniform angle.
#[derive(Clone, Debug)]
pub struct KacModel<T> {
    pub lambda: T,
}

pub fn kac_model<T: Real>(lambda: T) -> KacModel<T> {
    KacModel { lambda }
}

impl<T: Real> CollisionModel<T> for KacModel<T> {
    fn name(&self) -> &str {
        "kac"
    }
    fn dim(&self) -> usize {
        1
    }
    fn rate_bound(&self) -> T {
        self.lambda
    }
    fn rate(&self, _z1: &[T], _z2: &[T]) -> T {
        self.lambda
    }
    fn sample_theta(&self, rng: &mut StreamRng, out: &mut Vec<T>) {
        out.push(lit::<T>(TAU) * rng.uniform::<T>());
    }
    fn collide(&self, z1: &[T], z2: &[T], theta: &[T], out1: &mut [T], out2: &mut [T]) {
        let (a, b) = kac_collision(z1[0], z2[0], theta[0]);
        out1[0] = a;
        out2[0] = b;
    }
    fn conservation(&self) -> Conservation {
        Conservation::SquaredNorm
    }
}

fn norm<T: Real>(x: &[T]) -> T {
    x.iter().fold(T::zero(), |acc, &c| acc + c * c).sqrt()
}

fn maxwell_into<T: Real>(v: &[T], vs: &[T], sigma: &[T], out1: &mut [T], out2: &mut [T]) {
    let mut rel = T::zero();
    for (a, b) in v.iter().zip(vs) {
        rel += (*a - *b) * (*a - *b);
    }
    let half = rel.sqrt() / lit(2.0);
    for k in 0..v.len() {
        let m = (v[k] + vs[k]) / lit(2.0);
        out1[k] = m + half * sigma[k];
        out2[k] = m - half * sigma[k];
    }
}

/// σ-representation of an elastic collision.
///
/// Errors unless |σ| = 1 within 1e−12.
pub fn maxwell_collision<T: Real>(v: &[T], vstar: &[T], sigma: &[T]) -> Result<(Vec<T>, Vec<T>)> {
    if v.len() != vstar.len() || v.len() != sigma.len() {
        return Err(Error::SizeMismatch("velocity and scattering dimensions differ".into()));
    }
    let s = to_f64(norm(sigma));
    if (s - 1.0).abs() > 1e-12 {
        return invalid(format!("scattering vector has norm {s}, expected 1"));
    }
    let mut a = vec![T::zero(); v.len()];
    let mut b = vec![T::zero(); v.len()];
    maxwell_into(v, vstar, sigma, &mut a, &mut b);
    Ok((a, b))
}

/// Collision cross sections with Σ ≡ 1 (isotropic scattering).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CrossSection {
    /// Φ(|u|) = |u|.
    HardSphere,
    /// Φ ≡ 1 with Grad's cutoff.
    MaxwellCutoff,
}

impl CrossSection {
    pub fn tag(&self) -> &'static str {
        match self {
            CrossSection::HardSphere => "hard_sphere",
            CrossSection::MaxwellCutoff => "maxwell_cutoff",
        }
    }

    pub fn from_tag(tag: &str) -> Result<Self> {
        match tag {
            "hard_sphere" => Ok(CrossSection::HardSphere),
            "maxwell_cutoff" => Ok(CrossSection::MaxwellCutoff),
            _ => Err(Error::UnknownTag {
                kind: "cross section",
                tag: tag.into(),
                valid: "hard_sphere, maxwell_cutoff".into(),
            }),
        }
    }
}

/// Φ(|v − v*|) times the angular mass ∫Σ.
pub fn cross_section_rate<T: Real>(kind: CrossSection, v: &[T], vstar: &[T], angular_mass: T) -> T {
    match kind {
        CrossSection::MaxwellCutoff => angular_mass,
        CrossSection::HardSphere => {
            let mut r = T::zero();
            for (a, b) in v.iter().zip(vstar) {
                r += (*a - *b) * (*a - *b);
            }
            r.sqrt() * angular_mass
        }
    }
}

fn sample_sphere<T: Real>(d: usize, rng: &mut StreamRng, out: &mut Vec<T>) {
    loop {
        let start = out.len();
        let mut s = 0.0f64;
        for _ in 0..d {
            let g: f64 = rng.normal();
            s += g * g;
            out.push(lit(g));
        }
        if s > 1e-24 {
            let r = s.sqrt();
            for c in &mut out[start..] {
                *c = lit(to_f64(*c) / r);
            }
            return;
        }
        out.truncate(start);
    }
}

fn velocity_bound<T: Real>(kind: CrossSection, d: usize, angular_mass: T, vmax: T) -> T {
    match kind {
        CrossSection::MaxwellCutoff => angular_mass,
        CrossSection::HardSphere => lit::<T>(2.0) * vmax * from_usize::<T>(d).sqrt() * angular_mass,
    }
}

/// Spatially homogeneous gas in R^d with isotropic scattering.
#[derive(Clone, Debug)]
pub struct VelocityModel<T> {
    name: String,
    d: usize,
    kind: CrossSection,
    angular_mass: T,
    bound: T,
}

/// Maxwell molecules with cutoff: constant rate `angular_mass`.
pub fn maxwell_model<T: Real>(d: usize, angular_mass: T) -> Result<VelocityModel<T>> {
    velocity_model(d, CrossSection::MaxwellCutoff, angular_mass, T::zero())
}

/// Hard spheres on the velocity box [−vmax, vmax]^d, so Λ = 2·vmax·√d·mass.
pub fn hard_sphere_model<T: Real>(d: usize, angular_mass: T, vmax: T) -> Result<VelocityModel<T>> {
    velocity_model(d, CrossSection::HardSphere, angular_mass, vmax)
}

fn velocity_model<T: Real>(d: usize, kind: CrossSection, angular_mass: T, vmax: T) -> Result<VelocityModel<T>> {
    if d == 0 {
        return invalid("velocity dimension must be positive");
    }
    if !(angular_mass >= T::zero()) || !angular_mass.is_finite() {
        return invalid("angular mass must be finite and nonnegative");
    }
    if kind == CrossSection::HardSphere && !(vmax > T::zero() && vmax.is_finite()) {
        return invalid("hard-sphere models need a finite velocity box vmax > 0");
    }
    Ok(VelocityModel {
        name: kind.tag().to_string(),
        d,
        kind,
        angular_mass,
        bound: velocity_bound(kind, d, angular_mass, vmax),
    })
}

impl<T: Real> CollisionModel<T> for VelocityModel<T> {
    fn name(&self) -> &str {
        &self.name
    }
    fn dim(&self) -> usize {
        self.d
    }
    fn rate_bound(&self) -> T {
        self.bound
    }
    fn rate(&self, z1: &[T], z2: &[T]) -> T {
        cross_section_rate(self.kind, z1, z2, self.angular_mass)
    }
    fn sample_theta(&self, rng: &mut StreamRng, out: &mut Vec<T>) {
        sample_sphere(self.d, rng, out);
    }
    fn collide(&self, z1: &[T], z2: &[T], theta: &[T], out1: &mut [T], out2: &mut [T]) {
        maxwell_into(z1, z2, theta, out1, out2);
    }
    fn conservation(&self) -> Conservation {
        Conservation::MomentumEnergy
    }
}

/// Smooth bump `(1 − r²)²` on [0, 1), zero beyond.
pub fn bump<T: Real>(r: T) -> T {
    if r >= T::one() {
        T::zero()
    } else {
        let s = T::one() - r * r;
        s * s
    }
}

/// Kinetic gas in R^d × R^d with mollified collisions.
///
/// λ = K(|x₁ − x₂|/radius)·Φ(|v₁ − v₂|) with K a compactly supported bump of
/// height 1, and free transport between collisions.
#[derive(Clone, Debug)]
pub struct MollifiedModel<T> {
    name: String,
    d: usize,
    radius: T,
    velocity: VelocityModel<T>,
}

pub fn mollified_model<T: Real>(
    d: usize,
    radius: T,
    kind: CrossSection,
    angular_mass: T,
    vmax: T,
) -> Result<MollifiedModel<T>> {
    if !(radius > T::zero()) || !radius.is_finite() {
        return invalid("mollifier radius must be positive; purely local collisions are not supported");
    }
    let velocity = velocity_model(d, kind, angular_mass, vmax)?;
    Ok(MollifiedModel {
        name: format!("mollified_{}", kind.tag()),
        d,
        radius,
        velocity,
    })
}

impl<T: Real> CollisionModel<T> for MollifiedModel<T> {
    fn name(&self) -> &str {
        &self.name
    }
    fn dim(&self) -> usize {
        2 * self.d
    }
    fn domain(&self) -> Domain {
        Domain::Kinetic
    }
    fn rate_bound(&self) -> T {
        self.velocity.bound
    }
    fn rate(&self, z1: &[T], z2: &[T]) -> T {
        let d = self.d;
        let mut r = T::zero();
        for k in 0..d {
            r += (z1[k] - z2[k]) * (z1[k] - z2[k]);
        }
        let k = bump(r.sqrt() / self.radius);
        if k == T::zero() {
            return k;
        }
        k * self.velocity.rate(&z1[d..], &z2[d..])
    }
    fn sample_theta(&self, rng: &mut StreamRng, out: &mut Vec<T>) {
        sample_sphere(self.d, rng, out);
    }
    fn collide(&self, z1: &[T], z2: &[T], theta: &[T], out1: &mut [T], out2: &mut [T]) {
        let d = self.d;
        out1[..d].copy_from_slice(&z1[..d]);
        out2[..d].copy_from_slice(&z2[..d]);
        maxwell_into(&z1[d..], &z2[d..], theta, &mut out1[d..], &mut out2[d..]);
    }
    fn free_flight(&self) -> bool {
        true
    }
    fn conservation(&self) -> Conservation {
        Conservation::MomentumEnergy
    }
}

pub type RateFn = Arc<dyn Fn(&[f64], &[f64]) -> f64 + Send + Sync>;
pub type MapFn = Arc<dyn Fn(&[f64], &[f64], &[f64], &mut [f64]) + Send + Sync>;
pub type ThetaFn = Arc<dyn Fn(&mut StreamRng, &mut Vec<f64>) + Send + Sync>;

/// Parametric collision model `(λ, ψ₁, ψ₂, ν)` built from closures.
///
/// The same type describes Wagner's ordered-pair models before
/// [`wagner_symmetrize`]; those are not symmetric and should not be fed to the
/// simulators directly.
#[derive(Clone)]
pub struct ParametricCollision {
    pub name: String,
    pub dim: usize,
    pub rate_bound: f64,
    pub rate: RateFn,
    pub psi1: MapFn,
    pub psi2: MapFn,
    pub theta: ThetaFn,
    pub conservation: Conservation,
}

impl std::fmt::Debug for ParametricCollision {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "ParametricCollision({}, dim {})", self.name, self.dim)
    }
}

impl CollisionModel<f64> for ParametricCollision {
    fn name(&self) -> &str {
        &self.name
    }
    fn dim(&self) -> usize {
        self.dim
    }
    fn rate_bound(&self) -> f64 {
        self.rate_bound
    }
    fn rate(&self, z1: &[f64], z2: &[f64]) -> f64 {
        (self.rate)(z1, z2)
    }
    fn sample_theta(&self, rng: &mut StreamRng, out: &mut Vec<f64>) {
        (self.theta)(rng, out)
    }
    fn collide(&self, z1: &[f64], z2: &[f64], theta: &[f64], out1: &mut [f64], out2: &mut [f64]) {
        (self.psi1)(z1, z2, theta, out1);
        (self.psi2)(z1, z2, theta, out2);
    }
    fn nanbu_update(&self, z1: &[f64], z2: &[f64], theta: &[f64], out1: &mut [f64]) {
        (self.psi1)(z1, z2, theta, out1);
    }
    fn conservation(&self) -> Conservation {
        self.conservation
    }
}

/// Turns an ordered-pair model `(λ̃, ψ̃₁, ψ̃₂, ν̃)` into a symmetric one.
///
/// λ = (λ̃(z₁,z₂) + λ̃(z₂,z₁))/2 and θ = (θ̃, σ) with σ uniform on [0, 1]. When
/// σ ≤ λ̃(z₁,z₂)/(2λ) the pair moves to (ψ̃₁(z₁,z₂,θ̃), ψ̃₂(z₁,z₂,θ̃)), otherwise
/// to (ψ̃₂(z₂,z₁,θ̃), ψ̃₁(z₂,z₁,θ̃)).
pub fn wagner_symmetrize(tilde: &ParametricCollision) -> ParametricCollision {
    let lt = tilde.rate.clone();
    let rate: RateFn = {
        let lt = lt.clone();
        Arc::new(move |a: &[f64], b: &[f64]| 0.5 * (lt(a, b) + lt(b, a)))
    };
    let theta: ThetaFn = {
        let inner = tilde.theta.clone();
        Arc::new(move |rng: &mut StreamRng, out: &mut Vec<f64>| {
            inner(rng, out);
            out.push(rng.uniform());
        })
    };
    let forward = move |a: &[f64], b: &[f64], theta: &[f64]| -> bool {
        let (l12, l21) = (lt(a, b), lt(b, a));
        let lambda = 0.5 * (l12 + l21);
        assert!(
            lambda > 0.0 || l12 == 0.0,
            "symmetrized rate vanishes while λ̃ = {l12}"
        );
        let sigma = theta[theta.len() - 1];
        lambda > 0.0 && sigma <= l12 / (2.0 * lambda)
    };
    let forward = Arc::new(forward);
    let (p1, p2) = (tilde.psi1.clone(), tilde.psi2.clone());
    let psi1: MapFn = {
        let (f, p1, p2) = (forward.clone(), p1.clone(), p2.clone());
        Arc::new(move |a: &[f64], b: &[f64], theta: &[f64], out: &mut [f64]| {
            let th = &theta[..theta.len() - 1];
            if f(a, b, theta) {
                p1(a, b, th, out)
            } else {
                p2(b, a, th, out)
            }
        })
    };
    let psi2: MapFn = {
        let f = forward;
        Arc::new(move |a: &[f64], b: &[f64], theta: &[f64], out: &mut [f64]| {
            let th = &theta[..theta.len() - 1];
            if f(a, b, theta) {
                p2(a, b, th, out)
            } else {
                p1(b, a, th, out)
            }
        })
    };
    ParametricCollision {
        name: format!("{}_symmetrized", tilde.name),
        dim: tilde.dim,
        rate_bound: tilde.rate_bound,
        rate,
        psi1,
        psi2,
        theta,
        conservation: tilde.conservation,
    }
}

/// Ordered-pair wealth exchange: ψ̃₁ = L z₁ + R z₂, ψ̃₂ = L̃ z₂ + R̃ z₁.
///
/// θ̃ = (L, R, L̃, R̃) is deterministic here. Total wealth of the pair is
/// conserved when L + R̃ = 1 and R + L̃ = 1.
pub fn wealth_exchange(lambda: f64, l: f64, r: f64, lt: f64, rt: f64) -> ParametricCollision {
    let conserving = (l + rt - 1.0).abs() < 1e-12 && (r + lt - 1.0).abs() < 1e-12;
    ParametricCollision {
        name: "wealth_exchange".into(),
        dim: 1,
        rate_bound: lambda,
        rate: Arc::new(move |_: &[f64], _: &[f64]| lambda),
        psi1: Arc::new(|a: &[f64], b: &[f64], th: &[f64], out: &mut [f64]| out[0] = th[0] * a[0] + th[1] * b[0]),
        psi2: Arc::new(|a: &[f64], b: &[f64], th: &[f64], out: &mut [f64]| out[0] = th[2] * b[0] + th[3] * a[0]),
        theta: Arc::new(move |_: &mut StreamRng, out: &mut Vec<f64>| out.extend_from_slice(&[l, r, lt, rt])),
        conservation: if conserving { Conservation::Sum } else { Conservation::None },
    }
}

pub type DensityFn = Arc<dyn Fn(&[f64], &[f64], &[f64]) -> f64 + Send + Sync>;
pub type EnvelopeFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// Parametric reduction of a semi-parametric model by accept-reject.
///
/// θ is drawn from q₀ν and η uniformly; the base collision applies when
/// η ≤ q(z₁,z₂,θ)/(M q₀(θ)) and the pair is unchanged otherwise. The reduced
/// process at time tM has the law of the semi-parametric one at time t.
#[derive(Clone)]
pub struct SemiParametric {
    base: ParametricCollision,
    q: DensityFn,
    q0: EnvelopeFn,
    m: f64,
}

impl SemiParametric {
    /// Time-rescaling factor M.
    pub fn time_rescale(&self) -> f64 {
        self.m
    }

    /// Acceptance ratio q/(M q₀); errors when it exceeds 1.
    pub fn acceptance(&self, z1: &[f64], z2: &[f64], theta: &[f64]) -> Result<f64> {
        let q = (self.q)(z1, z2, theta);
        let bound = self.m * (self.q0)(theta);
        if !(q >= 0.0) || q > bound * (1.0 + 1e-12) {
            return Err(Error::EnvelopeViolated { q, bound });
        }
        Ok(if bound > 0.0 { q / bound } else { 0.0 })
    }

    fn split<'a>(&self, theta: &'a [f64]) -> (&'a [f64], f64) {
        (&theta[..theta.len() - 1], theta[theta.len() - 1])
    }
}

/// Builds the reduced model. `base.theta` must sample from q₀ν; `q` is a
/// density with respect to ν and `q0` the envelope density.
pub fn semiparametric_reduce(base: ParametricCollision, q: DensityFn, m: f64, q0: EnvelopeFn) -> Result<SemiParametric> {
    if !(m > 0.0) || !m.is_finite() {
        return invalid("envelope constant M must be positive and finite");
    }
    Ok(SemiParametric { base, q, q0, m })
}

impl CollisionModel<f64> for SemiParametric {
    fn name(&self) -> &str {
        &self.base.name
    }
    fn dim(&self) -> usize {
        self.base.dim
    }
    fn rate_bound(&self) -> f64 {
        self.base.rate_bound
    }
    fn rate(&self, z1: &[f64], z2: &[f64]) -> f64 {
        (self.base.rate)(z1, z2)
    }
    fn sample_theta(&self, rng: &mut StreamRng, out: &mut Vec<f64>) {
        (self.base.theta)(rng, out);
        out.push(rng.uniform());
    }
    fn validate_event(&self, z1: &[f64], z2: &[f64], theta: &[f64]) -> Result<()> {
        self.acceptance(z1, z2, self.split(theta).0).map(|_| ())
    }
    fn collide(&self, z1: &[f64], z2: &[f64], theta: &[f64], out1: &mut [f64], out2: &mut [f64]) {
        let (th, eta) = self.split(theta);
        let ratio = self.acceptance(z1, z2, th).unwrap_or(0.0);
        if eta <= ratio {
            (self.base.psi1)(z1, z2, th, out1);
            (self.base.psi2)(z1, z2, th, out2);
        } else {
            out1.copy_from_slice(z1);
            out2.copy_from_slice(z2);
        }
    }
    fn conservation(&self) -> Conservation {
        self.base.conservation
    }
}

/// One route of an interaction graph: at `time`, particle `i` meets the
/// already collected particle `j`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Route {
    pub time: f64,
    pub i: usize,
    pub j: usize,
}

/// Backward collision history of `root` on [0, t].
#[derive(Clone, Debug, PartialEq)]
pub struct InteractionGraph {
    pub n: usize,
    pub root: usize,
    pub t: f64,
    /// Per-pair clock rate times N.
    pub lambda: f64,
    /// Routes with strictly decreasing times in (0, t).
    pub routes: Vec<Route>,
}

impl InteractionGraph {
    /// Validates time monotonicity and the route membership rule.
    pub fn new(n: usize, root: usize, t: f64, lambda: f64, routes: Vec<Route>) -> Result<Self> {
        if root >= n {
            return invalid("root index out of range");
        }
        if !(t > 0.0) {
            return invalid("graph horizon must be positive");
        }
        let mut seen = HashSet::from([root]);
        let mut last = t;
        for r in &routes {
            if !(r.time < last && r.time > 0.0) {
                return invalid("route times must decrease strictly within (0, t)");
            }
            if r.i == r.j || r.i >= n || r.j >= n {
                return invalid("route endpoints must be distinct particles");
            }
            if !seen.contains(&r.j) {
                return invalid("route partner j must already be collected");
            }
            seen.insert(r.i);
            last = r.time;
        }
        Ok(InteractionGraph {
            n,
            root,
            t,
            lambda,
            routes,
        })
    }

    /// Collected indices in order of first appearance, root first.
    pub fn collected(&self) -> Vec<usize> {
        let mut seen = HashSet::from([self.root]);
        let mut out = vec![self.root];
        for r in &self.routes {
            if seen.insert(r.i) {
                out.push(r.i);
            }
        }
        out
    }

    /// Per-route flag: both endpoints were already collected.
    pub fn recollision_flags(&self) -> Vec<bool> {
        let mut seen = HashSet::from([self.root]);
        self.routes.iter().map(|r| !seen.insert(r.i)).collect()
    }

    pub const CSV_HEADER: &'static str = "time,i,j,recollision_flag";

    pub fn write_csv<W: Write>(&self, w: &mut W) -> Result<()> {
        writeln!(w, "{}", Self::CSV_HEADER)?;
        for (r, flag) in self.routes.iter().zip(self.recollision_flags()) {
            writeln!(w, "{},{},{},{}", fmt_f64(r.time), r.i, r.j, u8::from(flag))?;
        }
        Ok(())
    }
}

/// Number of routes whose endpoints were both present before the route.
pub fn count_recollisions(graph: &InteractionGraph) -> usize {
    graph.recollision_flags().into_iter().filter(|&f| f).count()
}

/// Routes beyond this count abort the sampler.
pub const MAX_GRAPH_ROUTES: usize = 10_000_000;

/// Samples the random interaction graph of `root` with pair rate Λ/N.
///
/// With collected set S, the next route back in time comes after an
/// exponential time of rate (Λ/N)·#{pairs touching S}, on a pair chosen
/// uniformly among them.
pub fn sample_interaction_graph(n: usize, lambda: f64, t: f64, root: usize, rng: &RngStream) -> Result<InteractionGraph> {
    if n < 2 || root >= n {
        return invalid("interaction graphs need N ≥ 2 and a root index below N");
    }
    if !(t > 0.0) || !t.is_finite() {
        return invalid("graph horizon must be positive");
    }
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return invalid("graph rate Λ must be finite and nonnegative");
    }
    let mut g = rng.split(purpose::GRAPH).rng();
    let mut set = vec![root];
    let mut sorted = vec![root];
    let mut member = HashSet::from([root]);
    let mut routes = Vec::new();
    let mut time = t;
    let per_pair = lambda / n as f64;
    while lambda > 0.0 && time > 0.0 {
        let s = set.len();
        let outer = s * (n - s);
        let inner = s * (s - 1) / 2;
        let total = outer + inner;
        time -= g.exponential(per_pair * total as f64);
        if time <= 0.0 {
            break;
        }
        let pick = (g.uniform::<f64>() * total as f64) as usize;
        let route = if pick < outer {
            let j = set[pick / (n - s)];
            let mut i = pick % (n - s);
            for &c in &sorted {
                if c > i {
                    break;
                }
                i += 1;
            }
            Route { time, i, j }
        } else {
            let a = g.index(s);
            let mut b = g.index(s - 1);
            if b >= a {
                b += 1;
            }
            Route { time, i: set[b], j: set[a] }
        };
        if member.insert(route.i) {
            set.push(route.i);
            let at = sorted.partition_point(|&c| c < route.i);
            sorted.insert(at, route.i);
        }
        routes.push(route);
        if routes.len() > MAX_GRAPH_ROUTES {
            return Err(Error::CapExceeded {
                what: "interaction graph",
                size: routes.len(),
                cap: MAX_GRAPH_ROUTES,
            });
        }
    }
    Ok(InteractionGraph {
        n,
        root,
        t,
        lambda,
        routes,
    })
}

/// Root trajectory produced by [`graph_forward_realize`].
#[derive(Clone, Debug, PartialEq)]
pub struct RootPath<T> {
    /// 0, then every route time in increasing order, then t.
    pub times: Vec<f64>,
    pub states: Vec<Vec<T>>,
}

impl<T: Clone> RootPath<T> {
    pub fn last(&self) -> &[T] {
        self.states.last().expect("non-empty path")
    }
}

/// Realizes the collected particles forward along `graph`.
///
/// Collected particles start i.i.d. from `init` (particle k reads the stream
/// `rng.split(INIT).split(k)`), follow the free flow between route times and
/// at each route collide with probability λ/Λ.
pub fn graph_forward_realize<T, M, F>(graph: &InteractionGraph, model: &M, init: F, rng: &RngStream) -> Result<RootPath<T>>
where
    T: Real,
    M: CollisionModel<T> + ?Sized,
    F: Fn(&mut StreamRng, &mut [T]),
{
    let bound = to_f64(model.rate_bound());
    if bound > graph.lambda * (1.0 + 1e-12) {
        return invalid(format!(
            "model rate bound {bound} exceeds the graph rate {}",
            graph.lambda
        ));
    }
    let lam: T = lit(graph.lambda);
    let d = model.dim();
    let domain = model.domain();
    let ids = graph.collected();
    let slot = |k: usize| ids.iter().position(|&c| c == k).expect("collected index");
    let mut zs: Vec<Vec<T>> = ids
        .iter()
        .map(|&k| {
            let mut z = vec![T::zero(); d];
            init(&mut rng.split(purpose::INIT).split(k as u64).rng(), &mut z);
            domain.wrap(&mut z);
            z
        })
        .collect();
    let flow = |zs: &mut [Vec<T>], dt: f64| {
        if model.free_flight() && dt > 0.0 {
            let dt: T = lit(dt);
            let h = d / 2;
            for z in zs.iter_mut() {
                for k in 0..h {
                    let v = z[h + k];
                    z[k] += v * dt;
                }
            }
        }
    };
    let mut u = rng.split(purpose::GRAPH).rng();
    let mut path = RootPath {
        times: vec![0.0],
        states: vec![zs[0].clone()],
    };
    let mut now = 0.0;
    let mut theta = Vec::new();
    let (mut o1, mut o2) = (vec![T::zero(); d], vec![T::zero(); d]);
    for r in graph.routes.iter().rev() {
        flow(&mut zs, r.time - now);
        now = r.time;
        let (a, b) = (slot(r.i.min(r.j)), slot(r.i.max(r.j)));
        let rate = model.rate(&zs[a], &zs[b]);
        let both: Vec<T> = zs[a].iter().chain(&zs[b]).copied().collect();
        check_rate(rate, lam, &both)?;
        if u.uniform::<T>() * lam < rate {
            theta.clear();
            model.sample_theta(&mut u, &mut theta);
            model.validate_event(&zs[a], &zs[b], &theta)?;
            model.collide(&zs[a], &zs[b], &theta, &mut o1, &mut o2);
            domain.wrap(&mut o1);
            domain.wrap(&mut o2);
            zs[a].copy_from_slice(&o1);
            zs[b].copy_from_slice(&o2);
        }
        path.times.push(now);
        path.states.push(zs[0].clone());
    }
    flow(&mut zs, graph.t - now);
    path.times.push(graph.t);
    path.states.push(zs[0].clone());
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn complement_indexing_skips_collected() {
        let rng = RngStream::new(3);
        for seed in 0..50u64 {
            let g = sample_interaction_graph(6, 3.0, 2.0, 2, &rng.split(seed)).unwrap();
            let rebuilt = InteractionGraph::new(g.n, g.root, g.t, g.lambda, g.routes.clone());
            assert!(rebuilt.is_ok());
        }
    }

    #[test]
    fn bump_support_and_height() {
        assert_eq!(bump(0.0), 1.0);
        assert_eq!(bump(1.0), 0.0);
        assert!(bump(0.5) > 0.0 && bump(0.5) < 1.0);
    }
}
