//! Output-grid bookkeeping shared by the event-driven simulators.

use crate::real::Real;
use crate::state::ParticleState;

/// Advances one or more systems through the output grid, recording states.
pub(crate) struct Recorder<T> {
    grid: Vec<T>,
    next: usize,
    pub(crate) tracks: Vec<Vec<ParticleState<T>>>,
}

impl<T: Real> Recorder<T> {
    pub(crate) fn new(grid: Vec<T>, states: &[&ParticleState<T>]) -> Self {
        let tracks = states
            .iter()
            .map(|s| {
                let mut s0 = (*s).clone();
                s0.t = grid[0];
                vec![s0]
            })
            .collect();
        Recorder { grid, next: 1, tracks }
    }

    pub(crate) fn horizon(&self) -> T {
        *self.grid.last().expect("non-empty grid")
    }

    /// Index of the grid interval containing the current time.
    pub(crate) fn segment(&self) -> usize {
        self.next - 1
    }

    pub(crate) fn advance(
        &mut self,
        states: &mut [&mut ParticleState<T>],
        target: T,
        flow: &mut dyn FnMut(&mut ParticleState<T>, T, usize),
    ) {
        while self.next < self.grid.len() && self.grid[self.next] <= target {
            let g = self.grid[self.next];
            for (k, s) in states.iter_mut().enumerate() {
                flow(s, g - s.t, self.next - 1);
                s.t = g;
                self.tracks[k].push((**s).clone());
            }
            self.next += 1;
        }
        for s in states.iter_mut() {
            if target > s.t {
                flow(s, target - s.t, self.next - 1);
                s.t = target;
            }
        }
    }
}

