//! Exact linear assignment and discrete transport solvers.

use crate::error::{Error, Result};
use rayon::prelude::*;

use crate::real::Real;

/// Minimum-cost perfect matching on an `n × n` cost given by `cost(i, j)`.
///
/// Shortest augmenting paths on a sparse candidate graph (mutual nearest
/// columns by cost), followed by a full dual-feasibility check over all
/// `n²` pairs; violating pairs are added and the affected rows re-augmented
/// until the dual certificate holds, so the result is an exact optimum.
/// Memory is O(n·k). Returns the total cost and `assign[i] = j`.
pub fn solve_assignment<T, F>(n: usize, cost: F) -> (T, Vec<usize>)
where
    T: Real,
    F: Fn(usize, usize) -> T + Sync,
{
    if n == 0 {
        return (T::zero(), Vec::new());
    }
    let mut lap = SparseLap::new(n, &cost);
    let mut free: Vec<usize> = (0..n).collect();
    loop {
        for &i in &free {
            lap.augment_from(i);
        }
        free = lap.certify();
        if free.is_empty() {
            break;
        }
    }
    let assign = lap.x;
    let total = assign
        .iter()
        .enumerate()
        .map(|(i, &j)| cost(i, j))
        .fold(T::zero(), |a, c| a + c);
    (total, assign)
}

const NONE: usize = usize::MAX;
const CANDIDATES: usize = 24;

#[derive(Clone, Copy)]
struct Key<T>(T, usize);

impl<T: PartialOrd> PartialEq for Key<T> {
    fn eq(&self, o: &Self) -> bool {
        self.cmp(o) == std::cmp::Ordering::Equal
    }
}
impl<T: PartialOrd> Eq for Key<T> {}
impl<T: PartialOrd> PartialOrd for Key<T> {
    fn partial_cmp(&self, o: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(o))
    }
}
impl<T: PartialOrd> Ord for Key<T> {
    // Reversed so that BinaryHeap pops the smallest distance.
    fn cmp(&self, o: &Self) -> std::cmp::Ordering {
        o.0.partial_cmp(&self.0)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(o.1.cmp(&self.1))
    }
}

struct SparseLap<'a, T, F> {
    n: usize,
    cost: &'a F,
    /// Candidate edges per row with their costs.
    edges: Vec<Vec<(usize, T)>>,
    full: Vec<bool>,
    x: Vec<usize>,
    y: Vec<usize>,
    v: Vec<T>,
    d: Vec<T>,
    pred: Vec<usize>,
    scanned: Vec<bool>,
    touched: Vec<usize>,
}

impl<'a, T, F> SparseLap<'a, T, F>
where
    T: Real,
    F: Fn(usize, usize) -> T + Sync,
{
    fn new(n: usize, cost: &'a F) -> Self {
        let k = CANDIDATES.min(n);
        let nearest = |row: Vec<(usize, T)>| -> Vec<(usize, T)> {
            let mut row = row;
            if k < row.len() {
                row.select_nth_unstable_by(k - 1, |a, b| a.1.partial_cmp(&b.1).unwrap_or(std::cmp::Ordering::Equal));
                row.truncate(k);
            }
            row
        };
        let mut edges: Vec<Vec<(usize, T)>> = (0..n)
            .into_par_iter()
            .map(|i| nearest((0..n).map(|j| (j, cost(i, j))).collect()))
            .collect();
        if k < n {
            let by_column: Vec<Vec<(usize, T)>> = (0..n)
                .into_par_iter()
                .map(|j| nearest((0..n).map(|i| (i, cost(i, j))).collect()))
                .collect();
            for (j, rows) in by_column.into_iter().enumerate() {
                for (i, c) in rows {
                    edges[i].push((j, c));
                }
            }
            for row in edges.iter_mut() {
                row.sort_unstable_by_key(|e| e.0);
                row.dedup_by_key(|e| e.0);
            }
        }
        SparseLap {
            n,
            cost,
            full: vec![k == n; n],
            edges,
            x: vec![NONE; n],
            y: vec![NONE; n],
            v: vec![T::zero(); n],
            d: vec![T::infinity(); n],
            pred: vec![NONE; n],
            scanned: vec![false; n],
            touched: Vec::new(),
        }
    }

    /// Row dual implied by the current assignment.
    fn row_dual(&self, i: usize) -> T {
        let j = self.x[i];
        (self.cost)(i, j) - self.v[j]
    }

    fn unassign(&mut self, i: usize) {
        let j = self.x[i];
        if j != NONE {
            self.y[j] = NONE;
            self.x[i] = NONE;
        }
    }

    /// Gives `rows` every column; rows whose dual becomes infeasible are freed.
    fn densify(&mut self, rows: &[usize], freed: &mut Vec<usize>) {
        for &i in rows {
            if self.full[i] {
                continue;
            }
            self.full[i] = true;
            self.edges[i] = (0..self.n).map(|j| (j, (self.cost)(i, j))).collect();
            if self.x[i] != NONE {
                let u = self.row_dual(i);
                if self.edges[i].iter().any(|&(j, c)| c - self.v[j] < u) {
                    self.unassign(i);
                    freed.push(i);
                }
            }
        }
    }

    fn augment_from(&mut self, start: usize) {
        if self.x[start] != NONE {
            return;
        }
        loop {
            match self.shortest_path(start) {
                Ok(()) => return,
                Err(rows) => {
                    let mut freed = Vec::new();
                    self.densify(&rows, &mut freed);
                    for i in freed {
                        self.augment_from(i);
                    }
                }
            }
        }
    }

    /// Dijkstra from a free row over reduced costs. On failure returns the
    /// rows of the explored tree.
    fn shortest_path(&mut self, start: usize) -> std::result::Result<(), Vec<usize>> {
        for &j in &self.touched {
            self.d[j] = T::infinity();
            self.scanned[j] = false;
        }
        self.touched.clear();
        let mut heap = std::collections::BinaryHeap::new();
        for &(j, c) in &self.edges[start] {
            let nd = c - self.v[j];
            if nd < self.d[j] {
                if self.d[j] == T::infinity() {
                    self.touched.push(j);
                }
                self.d[j] = nd;
                self.pred[j] = start;
                heap.push(Key(nd, j));
            }
        }
        let mut order = Vec::new();
        let final_j = loop {
            let Some(Key(dj, j)) = heap.pop() else {
                let mut rows = vec![start];
                rows.extend(order.iter().map(|&j: &usize| self.y[j]));
                return Err(rows);
            };
            if self.scanned[j] || dj > self.d[j] {
                continue;
            }
            if self.y[j] == NONE {
                break j;
            }
            self.scanned[j] = true;
            order.push(j);
            let i = self.y[j];
            let h = (self.cost)(i, j) - self.v[j];
            for &(k, c) in &self.edges[i] {
                if self.scanned[k] {
                    continue;
                }
                let nd = dj + (c - self.v[k] - h);
                if nd < self.d[k] {
                    if self.d[k] == T::infinity() {
                        self.touched.push(k);
                    }
                    self.d[k] = nd;
                    self.pred[k] = i;
                    heap.push(Key(nd, k));
                }
            }
        };
        let dist = self.d[final_j];
        for &j in &order {
            self.v[j] += self.d[j] - dist;
        }
        let mut j = final_j;
        loop {
            let i = self.pred[j];
            self.y[j] = i;
            j = std::mem::replace(&mut self.x[i], j);
            if i == start {
                break;
            }
        }
        Ok(())
    }

    /// Checks reduced costs over all pairs; adds violating edges and frees
    /// their rows. Returns the freed rows (empty when optimal).
    fn certify(&mut self) -> Vec<usize> {
        let scale = (0..self.n)
            .map(|i| self.row_dual(i).abs() + self.v[self.x[i]].abs())
            .fold(T::one(), |a, b| a.max(b));
        let tol = scale * T::epsilon() * T::from(64.0).unwrap();
        let me = &*self;
        let violations: Vec<(usize, Vec<(usize, T)>)> = (0..self.n)
            .into_par_iter()
            .filter(|&i| !me.full[i])
            .filter_map(|i| {
                let u = me.row_dual(i);
                let bad: Vec<(usize, T)> = (0..me.n)
                    .filter_map(|j| {
                        let c = (me.cost)(i, j);
                        (c - me.v[j] - u < -tol).then_some((j, c))
                    })
                    .collect();
                (!bad.is_empty()).then_some((i, bad))
            })
            .collect();
        let mut freed = Vec::new();
        for (i, bad) in violations {
            for e in bad {
                if !self.edges[i].iter().any(|f| f.0 == e.0) {
                    self.edges[i].push(e);
                }
            }
            self.unassign(i);
            freed.push(i);
        }
        freed
    }
}

/// Optimal transport between discrete distributions `a` (rows) and `b`
/// (columns) with nonnegative ground cost; returns the optimal total cost.
///
/// Successive shortest paths with Dijkstra on reduced costs. Each augmentation
/// exhausts a supply, a demand or a reverse arc, so the number of rounds is
/// bounded by a small multiple of `a.len() + b.len()` in practice.
pub fn transport_cost<T: Real, F: Fn(usize, usize) -> T>(a: &[T], b: &[T], cost: F) -> Result<T> {
    let (n1, n2) = (a.len(), b.len());
    if n1 == 0 || n2 == 0 {
        return Err(Error::EmptyMeasure);
    }
    let sa: T = a.iter().copied().sum();
    let sb: T = b.iter().copied().sum();
    let scale = sa.max(sb);
    let tol = scale * T::epsilon() * T::from(64.0).unwrap();
    if (sa - sb).abs() > T::from(1e-9).unwrap() * scale.max(T::one()) {
        return Err(Error::SizeMismatch(format!(
            "transport marginals have different masses {sa} and {sb}"
        )));
    }
    let c: Vec<T> = (0..n1 * n2).map(|k| cost(k / n2, k % n2)).collect();
    if c.iter().any(|&x| x < T::zero() || !x.is_finite()) {
        return Err(Error::InvalidInput("transport costs must be finite and nonnegative".into()));
    }
    let mut supply = a.to_vec();
    let mut demand = b.to_vec();
    let mut flow = vec![T::zero(); n1 * n2];
    let n = n1 + n2;
    let mut pot = vec![T::zero(); n];
    let inf = T::infinity();
    let mut dist = vec![inf; n];
    let mut prev = vec![usize::MAX; n];
    let mut done = vec![false; n];
    let mut rounds = 0usize;
    let max_rounds = 64 * (n1 + n2) * (n1 + n2) + 1000;
    loop {
        let remaining: T = supply.iter().copied().filter(|&s| s > tol).sum();
        if remaining <= tol || demand.iter().all(|&d| d <= tol) {
            break;
        }
        rounds += 1;
        if rounds > max_rounds {
            return Err(Error::InvalidInput("transport solver did not converge".into()));
        }
        dist.iter_mut().for_each(|d| *d = inf);
        prev.iter_mut().for_each(|p| *p = usize::MAX);
        done.iter_mut().for_each(|f| *f = false);
        for i in 0..n1 {
            if supply[i] > tol {
                dist[i] = T::zero();
            }
        }
        loop {
            let mut best = usize::MAX;
            let mut bd = inf;
            for k in 0..n {
                if !done[k] && dist[k] < bd {
                    bd = dist[k];
                    best = k;
                }
            }
            if best == usize::MAX {
                break;
            }
            done[best] = true;
            if best < n1 {
                let i = best;
                for j in 0..n2 {
                    let node = n1 + j;
                    if done[node] {
                        continue;
                    }
                    let rc = c[i * n2 + j] + pot[i] - pot[node];
                    let nd = bd + rc.max(T::zero());
                    if nd < dist[node] {
                        dist[node] = nd;
                        prev[node] = i;
                    }
                }
            } else {
                let j = best - n1;
                for i in 0..n1 {
                    if done[i] || flow[i * n2 + j] <= tol {
                        continue;
                    }
                    let rc = -c[i * n2 + j] + pot[best] - pot[i];
                    let nd = bd + rc.max(T::zero());
                    if nd < dist[i] {
                        dist[i] = nd;
                        prev[i] = best;
                    }
                }
            }
        }
        let mut target = usize::MAX;
        let mut td = inf;
        for j in 0..n2 {
            if demand[j] > tol && dist[n1 + j] < td {
                td = dist[n1 + j];
                target = n1 + j;
            }
        }
        if target == usize::MAX {
            return Err(Error::InvalidInput("transport problem infeasible".into()));
        }
        for k in 0..n {
            pot[k] += if dist[k] < td { dist[k] } else { td };
        }
        // Bottleneck along the path.
        let mut bottleneck = demand[target - n1];
        let mut node = target;
        while prev[node] != usize::MAX {
            let pn = prev[node];
            if node < n1 {
                // reverse arc column pn -> row node
                bottleneck = bottleneck.min(flow[node * n2 + (pn - n1)]);
            }
            node = pn;
        }
        bottleneck = bottleneck.min(supply[node]);
        let source = node;
        let mut node = target;
        while prev[node] != usize::MAX {
            let pn = prev[node];
            if node >= n1 {
                flow[pn * n2 + (node - n1)] += bottleneck;
            } else {
                flow[node * n2 + (pn - n1)] -= bottleneck;
            }
            node = pn;
        }
        supply[source] -= bottleneck;
        demand[target - n1] -= bottleneck;
    }
    Ok(flow
        .iter()
        .zip(&c)
        .map(|(&f, &cc)| f.max(T::zero()) * cc)
        .fold(T::zero(), |acc, x| acc + x))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;

    fn brute_force(n: usize, c: &[f64]) -> f64 {
        fn rec(k: usize, n: usize, used: &mut Vec<bool>, acc: f64, c: &[f64], best: &mut f64) {
            if k == n {
                *best = best.min(acc);
                return;
            }
            for j in 0..n {
                if !used[j] {
                    used[j] = true;
                    rec(k + 1, n, used, acc + c[k * n + j], c, best);
                    used[j] = false;
                }
            }
        }
        let mut best = f64::INFINITY;
        rec(0, n, &mut vec![false; n], 0.0, c, &mut best);
        best
    }


    /// Textbook Hungarian method, kept as an independent oracle.
    fn hungarian(n: usize, c: &[f64]) -> f64 {
        let inf = f64::INFINITY;
        let (mut u, mut v) = (vec![0.0; n + 1], vec![0.0; n + 1]);
        let (mut p, mut way) = (vec![0usize; n + 1], vec![0usize; n + 1]);
        for i in 1..=n {
            p[0] = i;
            let mut j0 = 0;
            let mut minv = vec![inf; n + 1];
            let mut used = vec![false; n + 1];
            loop {
                used[j0] = true;
                let (i0, mut delta, mut j1) = (p[j0], inf, 0);
                for j in 1..=n {
                    if !used[j] {
                        let cur = c[(i0 - 1) * n + j - 1] - u[i0] - v[j];
                        if cur < minv[j] {
                            minv[j] = cur;
                            way[j] = j0;
                        }
                        if minv[j] < delta {
                            delta = minv[j];
                            j1 = j;
                        }
                    }
                }
                for j in 0..=n {
                    if used[j] {
                        u[p[j]] += delta;
                        v[j] -= delta;
                    } else {
                        minv[j] -= delta;
                    }
                }
                j0 = j1;
                if p[j0] == 0 {
                    break;
                }
            }
            loop {
                let j1 = way[j0];
                p[j0] = p[j1];
                j0 = j1;
                if j0 == 0 {
                    break;
                }
            }
        }
        (1..=n).map(|j| c[(p[j] - 1) * n + j - 1]).sum()
    }

    #[test]
    fn assignment_matches_hungarian_on_larger_instances() {
        let mut rng = RngStream::new(14).rng();
        for &n in &[7usize, 20, 64, 150] {
            for rep in 0..4 {
                let c: Vec<f64> = if rep % 2 == 0 {
                    (0..n * n).map(|_| rng.uniform::<f64>()).collect()
                } else {
                    // Many ties.
                    (0..n * n).map(|_| rng.index(4) as f64).collect()
                };
                let (total, assign) = solve_assignment(n, |i, j| c[i * n + j]);
                let mut seen = assign.clone();
                seen.sort_unstable();
                assert_eq!(seen, (0..n).collect::<Vec<_>>());
                let h = hungarian(n, &c);
                assert!((total - h).abs() < 1e-9, "n={n} rep={rep}: {total} vs {h}");
            }
        }
    }

    #[test]
    fn assignment_matches_enumeration() {
        let mut rng = RngStream::new(11).rng();
        for n in 1..=6 {
            for _ in 0..20 {
                let c: Vec<f64> = (0..n * n).map(|_| rng.uniform::<f64>()).collect();
                let (total, assign) = solve_assignment(n, |i, j| c[i * n + j]);
                let mut seen = assign.clone();
                seen.sort_unstable();
                assert_eq!(seen, (0..n).collect::<Vec<_>>());
                assert!((total - brute_force(n, &c)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn transport_reduces_to_assignment_on_uniform_weights() {
        let mut rng = RngStream::new(12).rng();
        for n in 1..=5 {
            let c: Vec<f64> = (0..n * n).map(|_| rng.uniform::<f64>()).collect();
            let w = vec![1.0 / n as f64; n];
            let t = transport_cost(&w, &w, |i, j| c[i * n + j]).unwrap();
            let (a, _) = solve_assignment(n, |i, j| c[i * n + j]);
            assert!((t - a / n as f64).abs() < 1e-12, "{t} vs {}", a / n as f64);
        }
    }

    #[test]
    fn transport_on_line_matches_cdf_formula() {
        // W1 on {0,1,2,3} equals Σ|F_a - F_b|.
        let mut rng = RngStream::new(13).rng();
        for _ in 0..50 {
            let mut a: Vec<f64> = (0..4).map(|_| rng.uniform::<f64>()).collect();
            let mut b: Vec<f64> = (0..4).map(|_| rng.uniform::<f64>()).collect();
            let (sa, sb): (f64, f64) = (a.iter().sum(), b.iter().sum());
            a.iter_mut().for_each(|x| *x /= sa);
            b.iter_mut().for_each(|x| *x /= sb);
            let t = transport_cost(&a, &b, |i, j| (i as f64 - j as f64).abs()).unwrap();
            let (mut fa, mut fb, mut cdf) = (0.0, 0.0, 0.0);
            for k in 0..3 {
                fa += a[k];
                fb += b[k];
                cdf += (fa - fb).abs();
            }
            assert!((t - cdf).abs() < 1e-12, "{t} vs {cdf}");
        }
    }

    #[test]
    fn transport_rejects_mass_mismatch() {
        assert!(transport_cost(&[1.0], &[0.5], |_, _| 0.0).is_err());
        assert!(transport_cost::<f64, _>(&[], &[], |_, _| 0.0).is_err());
    }
}
