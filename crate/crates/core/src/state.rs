//! Particle configurations, trajectory bundles and empirical measures.

use std::io::Write;

use crate::error::{invalid, Error, Result};
use crate::real::{from_usize, to_f64, Real};

/// Geometry of the single-particle state space.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Domain {
    /// R^d with the Euclidean distance.
    Euclidean,
    /// Angles on (S^1)^d, stored in [0, 2π).
    Torus,
    /// Position-velocity pairs flattened into R^{2d}: first half positions.
    Kinetic,
}

impl Domain {
    pub fn tag(&self) -> &'static str {
        match self {
            Domain::Euclidean => "euclidean",
            Domain::Torus => "torus",
            Domain::Kinetic => "kinetic",
        }
    }

    /// Brings coordinates back into the canonical chart.
    #[inline]
    pub fn wrap<T: Real>(&self, x: &mut [T]) {
        if *self == Domain::Torus {
            for v in x {
                *v = wrap_angle(*v);
            }
        }
    }

    /// Coordinate-wise difference `a - b`, wrapped into (-π, π] on the torus.
    #[inline]
    pub fn difference<T: Real>(&self, a: &[T], b: &[T], out: &mut [T]) {
        for ((o, &x), &y) in out.iter_mut().zip(a).zip(b) {
            *o = x - y;
            if *self == Domain::Torus {
                *o = wrap_centered(*o);
            }
        }
    }

    /// Ground distance between two points.
    #[inline]
    pub fn distance<T: Real>(&self, a: &[T], b: &[T]) -> T {
        let mut s = T::zero();
        for (&x, &y) in a.iter().zip(b) {
            let mut d = x - y;
            if *self == Domain::Torus {
                d = wrap_centered(d);
            }
            s += d * d;
        }
        s.sqrt()
    }
}

/// Reduces an angle into [0, 2π).
#[inline]
pub fn wrap_angle<T: Real>(x: T) -> T {
    let two_pi = T::TAU();
    let mut r = x % two_pi;
    if r < T::zero() {
        r += two_pi;
    }
    if r >= two_pi {
        r = T::zero();
    }
    r
}

/// Reduces an angle difference into (-π, π].
#[inline]
pub fn wrap_centered<T: Real>(x: T) -> T {
    let pi = T::PI();
    let r = wrap_angle(x);
    if r > pi {
        r - T::TAU()
    } else {
        r
    }
}

/// N particles in a d-dimensional chart at time `t`.
#[derive(Clone, Debug, PartialEq)]
pub struct ParticleState<T> {
    pub t: T,
    dim: usize,
    domain: Domain,
    xs: Vec<T>,
}

impl<T: Real> ParticleState<T> {
    /// `xs` is the flat row-major `N × dim` coordinate array.
    pub fn new(t: T, dim: usize, domain: Domain, mut xs: Vec<T>) -> Result<Self> {
        if dim == 0 {
            return invalid("dimension must be positive");
        }
        if xs.is_empty() || !xs.len().is_multiple_of(dim) {
            return invalid(format!(
                "coordinate array of length {} is not a positive multiple of dim {dim}",
                xs.len()
            ));
        }
        if domain == Domain::Kinetic && !dim.is_multiple_of(2) {
            return invalid("kinetic states need an even dimension");
        }
        if let Some(k) = xs.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: "coordinate",
                index: k / dim,
            });
        }
        domain.wrap(&mut xs);
        Ok(ParticleState { t, dim, domain, xs })
    }

    /// One-dimensional Euclidean configuration.
    pub fn from_scalars(t: T, xs: Vec<T>) -> Result<Self> {
        Self::new(t, 1, Domain::Euclidean, xs)
    }

    pub(crate) fn from_raw(t: T, dim: usize, domain: Domain, xs: Vec<T>) -> Self {
        debug_assert!(xs.len().is_multiple_of(dim) && !xs.is_empty());
        ParticleState { t, dim, domain, xs }
    }

    pub fn n(&self) -> usize {
        self.xs.len() / self.dim
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    pub fn coords(&self) -> &[T] {
        &self.xs
    }

    pub(crate) fn coords_mut(&mut self) -> &mut [T] {
        &mut self.xs
    }

    pub fn particle(&self, i: usize) -> &[T] {
        &self.xs[i * self.dim..(i + 1) * self.dim]
    }

    pub fn into_coords(self) -> Vec<T> {
        self.xs
    }

    /// Slot `k` of the result holds particle `perm[k]` of `self`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let d = self.dim;
        let mut xs = Vec::with_capacity(self.xs.len());
        for &p in perm {
            xs.extend_from_slice(&self.xs[p * d..(p + 1) * d]);
        }
        ParticleState::from_raw(self.t, d, self.domain, xs)
    }

    pub fn empirical(&self) -> EmpiricalMeasure<T> {
        empirical_of(self)
    }

    pub fn view(&self) -> MeasureView<'_, T> {
        MeasureView {
            dim: self.dim,
            atoms: &self.xs,
        }
    }
}

/// Uniform-weight atomic measure `(1/N) Σ δ_{x_i}`.
#[derive(Clone, Debug, PartialEq)]
pub struct EmpiricalMeasure<T> {
    dim: usize,
    atoms: Vec<T>,
}

impl<T: Real> EmpiricalMeasure<T> {
    pub fn new(dim: usize, atoms: Vec<T>) -> Result<Self> {
        if dim == 0 || atoms.is_empty() || !atoms.len().is_multiple_of(dim) {
            return Err(Error::EmptyMeasure);
        }
        Ok(EmpiricalMeasure { dim, atoms })
    }

    pub fn from_scalars(atoms: Vec<T>) -> Result<Self> {
        Self::new(1, atoms)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.atoms.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn weight(&self) -> T {
        T::one() / from_usize(self.len())
    }

    pub fn atoms(&self) -> &[T] {
        &self.atoms
    }

    pub fn atom(&self, i: usize) -> &[T] {
        &self.atoms[i * self.dim..(i + 1) * self.dim]
    }

    pub fn view(&self) -> MeasureView<'_, T> {
        MeasureView {
            dim: self.dim,
            atoms: &self.atoms,
        }
    }
}

/// `empirical_of`: atoms in slot order, weight 1/N.
pub fn empirical_of<T: Real>(state: &ParticleState<T>) -> EmpiricalMeasure<T> {
    EmpiricalMeasure {
        dim: state.dim,
        atoms: state.xs.clone(),
    }
}

/// Borrowed empirical measure, handed to model coefficients.
#[derive(Clone, Copy, Debug)]
pub struct MeasureView<'a, T> {
    pub dim: usize,
    pub atoms: &'a [T],
}

impl<'a, T: Real> MeasureView<'a, T> {
    pub fn new(dim: usize, atoms: &'a [T]) -> Self {
        MeasureView { dim, atoms }
    }

    pub fn len(&self) -> usize {
        self.atoms.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn atom(&self, i: usize) -> &'a [T] {
        &self.atoms[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter(&self) -> impl Iterator<Item = &'a [T]> + 'a {
        self.atoms.chunks_exact(self.dim)
    }

    pub fn mean(&self) -> Vec<T> {
        let mut m = vec![T::zero(); self.dim];
        for a in self.iter() {
            for (mi, &ai) in m.iter_mut().zip(a) {
                *mi += ai;
            }
        }
        let n: T = from_usize(self.len());
        m.iter_mut().for_each(|v| *v /= n);
        m
    }

    pub fn to_owned(&self) -> EmpiricalMeasure<T> {
        EmpiricalMeasure {
            dim: self.dim,
            atoms: self.atoms.to_vec(),
        }
    }
}

/// Touched indices of one event, for bundles that log jumps.
#[derive(Clone, Debug, PartialEq)]
pub struct JumpRecord<T> {
    pub time: T,
    pub indices: Vec<usize>,
}

/// Time-gridded path ensemble of one N-particle system.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryBundle<T> {
    pub times: Vec<T>,
    pub states: Vec<ParticleState<T>>,
    pub jumps: Option<Vec<JumpRecord<T>>>,
}

impl<T: Real> TrajectoryBundle<T> {
    pub fn new(states: Vec<ParticleState<T>>) -> Result<Self> {
        let Some(first) = states.first() else {
            return invalid("trajectory needs at least one state");
        };
        let (n, d) = (first.n(), first.dim());
        for w in states.windows(2) {
            if w[1].t <= w[0].t {
                return Err(Error::GridMismatch("times must be strictly increasing".into()));
            }
        }
        if states.iter().any(|s| s.n() != n || s.dim() != d) {
            return Err(Error::SizeMismatch(
                "particle count and dimension must be constant along a bundle".into(),
            ));
        }
        Ok(TrajectoryBundle {
            times: states.iter().map(|s| s.t).collect(),
            states,
            jumps: None,
        })
    }

    pub fn with_jumps(mut self, jumps: Vec<JumpRecord<T>>) -> Self {
        self.jumps = Some(jumps);
        self
    }

    pub fn n(&self) -> usize {
        self.states[0].n()
    }

    pub fn dim(&self) -> usize {
        self.states[0].dim()
    }

    pub fn last(&self) -> &ParticleState<T> {
        self.states.last().expect("non-empty bundle")
    }

    /// Slot `k` of every state holds particle `perm[k]`; jump indices are relabelled.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let mut inverse = vec![0; perm.len()];
        for (k, &p) in perm.iter().enumerate() {
            inverse[p] = k;
        }
        TrajectoryBundle {
            times: self.times.clone(),
            states: self.states.iter().map(|s| s.permuted(perm)).collect(),
            jumps: self.jumps.as_ref().map(|js| {
                js.iter()
                    .map(|j| JumpRecord {
                        time: j.time,
                        indices: j.indices.iter().map(|&i| inverse[i]).collect(),
                    })
                    .collect()
            }),
        }
    }

    /// CSV rows `replica,t,particle,x0,..` (no header).
    pub fn write_csv_rows<W: Write>(&self, replica: usize, w: &mut W) -> Result<()> {
        for s in &self.states {
            for i in 0..s.n() {
                write!(w, "{replica},{},{i}", fmt_real(s.t))?;
                for &x in s.particle(i) {
                    write!(w, ",{}", fmt_real(x))?;
                }
                writeln!(w)?;
            }
        }
        Ok(())
    }
}

/// CSV header for trajectory dumps of dimension `dim`.
pub fn trajectory_csv_header(dim: usize) -> String {
    let mut h = String::from("replica,t,particle");
    for k in 0..dim {
        h.push_str(&format!(",x{k}"));
    }
    h
}

/// Writes replicas in index order with a header row.
pub fn write_trajectories_csv<T: Real, W: Write>(
    bundles: &[TrajectoryBundle<T>],
    w: &mut W,
) -> Result<()> {
    let dim = bundles.first().map(|b| b.dim()).unwrap_or(1);
    writeln!(w, "{}", trajectory_csv_header(dim))?;
    for (r, b) in bundles.iter().enumerate() {
        b.write_csv_rows(r, w)?;
    }
    Ok(())
}

/// 17 significant digits, round-trippable.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn fmt_real<T: Real>(x: T) -> String {
    fmt_f64(to_f64(x))
}

/// Internal canonical ordering of particles by their RNG label.
///
/// Simulators run on particles sorted by label and map the result back, so
/// permuting the initial particles together with their labels permutes the
/// output bit for bit.
#[derive(Clone, Debug)]
pub struct Canonical {
    order: Vec<usize>,
    labels: Vec<u64>,
}

impl Canonical {
    pub fn new(labels: &[u64]) -> Result<Self> {
        let mut order: Vec<usize> = (0..labels.len()).collect();
        order.sort_by_key(|&i| labels[i]);
        if order.windows(2).any(|w| labels[w[0]] == labels[w[1]]) {
            return invalid("particle labels must be distinct");
        }
        let sorted = order.iter().map(|&i| labels[i]).collect();
        Ok(Canonical {
            order,
            labels: sorted,
        })
    }

    /// Default labels `0..n`.
    pub fn identity(n: usize) -> Self {
        Canonical {
            order: (0..n).collect(),
            labels: (0..n as u64).collect(),
        }
    }

    pub fn from_option(labels: Option<&[u64]>, n: usize) -> Result<Self> {
        match labels {
            Some(l) if l.len() != n => Err(Error::SizeMismatch(format!(
                "{} labels for {n} particles",
                l.len()
            ))),
            Some(l) => Canonical::new(l),
            None => Ok(Canonical::identity(n)),
        }
    }

    /// Labels in canonical order.
    pub fn labels(&self) -> &[u64] {
        &self.labels
    }

    pub fn to_canonical<T: Real>(&self, s: &ParticleState<T>) -> ParticleState<T> {
        s.permuted(&self.order)
    }

    pub fn bundle_from_canonical<T: Real>(&self, b: TrajectoryBundle<T>) -> TrajectoryBundle<T> {
        let mut inverse = vec![0; self.order.len()];
        for (k, &p) in self.order.iter().enumerate() {
            inverse[p] = k;
        }
        b.permuted(&inverse)
    }

    /// Caller slot of canonical slot `k`.
    pub fn slot(&self, k: usize) -> usize {
        self.order[k]
    }
}

/// Equally spaced output grid `0, stride·dt, ...` ending exactly at `t_end`.
pub fn uniform_grid<T: Real>(t_end: T, points: usize) -> Vec<T> {
    let k = points.max(1);
    (0..=k)
        .map(|i| t_end * from_usize::<T>(i) / from_usize::<T>(k))
        .collect()
}

/// Checks `t_end / dt` is an integer within 1e-9 and returns it.
pub fn step_count<T: Real>(t_end: T, dt: T) -> Result<usize> {
    if !(dt > T::zero()) || !dt.is_finite() {
        return invalid("dt must be positive");
    }
    if t_end < T::zero() {
        return invalid("horizon must be nonnegative");
    }
    let ratio = to_f64(t_end) / to_f64(dt);
    let k = ratio.round();
    if (ratio - k).abs() > 1e-9 * ratio.max(1.0) {
        return invalid(format!("T/dt = {ratio} is not integral"));
    }
    Ok(k as usize)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn torus_is_wrapped_on_construction() {
        let s = ParticleState::new(0.0, 1, Domain::Torus, vec![-0.5, 7.0]).unwrap();
        assert!((s.coords()[0] - (std::f64::consts::TAU - 0.5)).abs() < 1e-15);
        assert!((s.coords()[1] - (7.0 - std::f64::consts::TAU)).abs() < 1e-15);
        let d = Domain::Torus.distance(&[0.1], &[std::f64::consts::TAU - 0.1]);
        assert!((d - 0.2).abs() < 1e-12);
    }

    #[test]
    fn rejects_non_finite_and_empty() {
        assert!(ParticleState::<f64>::from_scalars(0.0, vec![]).is_err());
        assert!(matches!(
            ParticleState::from_scalars(0.0, vec![0.0, f64::NAN]),
            Err(Error::NonFinite { index: 1, .. })
        ));
        assert!(EmpiricalMeasure::<f64>::from_scalars(vec![]).is_err());
    }

    #[test]
    fn empirical_keeps_order() {
        let s = ParticleState::from_scalars(0.0, vec![0.0, 1.0]).unwrap();
        let m = empirical_of(&s);
        assert_eq!(m.atoms(), &[0.0, 1.0]);
        assert_eq!(m.weight(), 0.5);
        let single = empirical_of(&ParticleState::from_scalars(0.0, vec![0.0]).unwrap());
        assert_eq!(single.len(), 1);
        assert_eq!(single.weight(), 1.0);
    }

    #[test]
    fn bundle_rejects_bad_grid() {
        let a = ParticleState::from_scalars(0.0, vec![0.0]).unwrap();
        let b = ParticleState::from_scalars(0.0, vec![0.0]).unwrap();
        assert!(TrajectoryBundle::new(vec![a.clone(), b]).is_err());
        let c = ParticleState::from_scalars(1.0, vec![0.0, 1.0]).unwrap();
        assert!(TrajectoryBundle::new(vec![a, c]).is_err());
    }

    #[test]
    fn canonical_round_trip() {
        let labels = [5u64, 1, 9];
        let c = Canonical::new(&labels).unwrap();
        assert_eq!(c.labels(), &[1, 5, 9]);
        let s = ParticleState::from_scalars(0.0, vec![10.0, 20.0, 30.0]).unwrap();
        let cs = c.to_canonical(&s);
        assert_eq!(cs.coords(), &[20.0, 10.0, 30.0]);
        let b = c.bundle_from_canonical(TrajectoryBundle::new(vec![cs]).unwrap());
        assert_eq!(b.states[0].coords(), s.coords());
        assert!(Canonical::new(&[1, 1]).is_err());
    }

    #[test]
    fn csv_rows_use_17_digits() {
        let s = ParticleState::from_scalars(0.5, vec![1.0 / 3.0]).unwrap();
        let b = TrajectoryBundle::new(vec![s]).unwrap();
        let mut out = Vec::new();
        write_trajectories_csv(&[b], &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert_eq!(
            text,
            "replica,t,particle,x0\n0,5.0000000000000000e-1,0,3.3333333333333331e-1\n"
        );
    }

    #[test]
    fn step_count_checks_integrality() {
        assert_eq!(step_count(1.0, 1e-3).unwrap(), 1000);
        assert!(step_count(1.0, 0.3).is_err());
        assert!(step_count(1.0, 0.0).is_err());
    }
}
