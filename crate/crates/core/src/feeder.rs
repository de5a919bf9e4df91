//! Electrical model of a radial feeder.
//!
//! Buses are indexed `0..=N` with the substation at 0 and `v_0 = 1` pu. All
//! `N`-dimensional vectors and matrices (voltages, injections, `R`, `X`, the
//! reduced Laplacian) are indexed by bus `1..=N` at position `bus - 1`.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{Complex, DMatrix, DVector};

use crate::error::{bail, Result};
use crate::graph::{build_index, enumerate_spanning_trees, LevelSetIndex, TreeGraph, UnionFind};
use crate::math;

/// A candidate line. Orientation only fixes the incidence sign (+1 at `from`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Line {
    pub from: usize,
    pub to: usize,
    /// Resistance in pu.
    pub r: f64,
    /// Reactance in pu.
    pub x: f64,
    pub switchable: bool,
}

impl Line {
    pub fn new(from: usize, to: usize, r: f64, x: f64) -> Self {
        Self {
            from,
            to,
            r,
            x,
            switchable: false,
        }
    }

    pub fn switchable(mut self) -> Self {
        self.switchable = true;
        self
    }
}

/// Nominal consumption at a bus, in pu. Positive values are withdrawn.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Load {
    pub p: f64,
    pub q: f64,
}

/// A radial feeder: candidate lines `L_e`, their statuses `b`, and bus loads.
#[derive(Debug, Clone)]
pub struct Feeder {
    bus_count: usize,
    lines: Vec<Line>,
    status: Vec<bool>,
    loads: Vec<Load>,
    graph: TreeGraph,
    // Energized line feeding each bus (None for the substation).
    feeding_line: Vec<Option<usize>>,
}

impl Feeder {
    /// `loads` has one entry per bus (the substation entry is ignored) or is
    /// empty for an unloaded feeder.
    pub fn new(bus_count: usize, lines: Vec<Line>, status: Vec<bool>, loads: Vec<Load>) -> Result<Self> {
        if bus_count < 2 {
            bail!(Argument, "a feeder needs the substation and at least one bus");
        }
        if status.len() != lines.len() {
            bail!(Dimension, "{} statuses for {} lines", status.len(), lines.len());
        }
        let loads = if loads.is_empty() {
            vec![Load::default(); bus_count]
        } else if loads.len() == bus_count {
            loads
        } else {
            bail!(Dimension, "{} loads for {} buses", loads.len(), bus_count);
        };
        for (i, l) in lines.iter().enumerate() {
            if l.from >= bus_count || l.to >= bus_count || l.from == l.to {
                bail!(Argument, "line {i} has invalid endpoints ({}, {})", l.from, l.to);
            }
            if !(l.r > 0.0 && l.r.is_finite()) || !(l.x > 0.0 && l.x.is_finite()) {
                bail!(Argument, "line {i} must have positive finite r and x");
            }
        }
        if loads.iter().any(|l| !l.p.is_finite() || !l.q.is_finite()) {
            bail!(Argument, "loads must be finite");
        }
        let (graph, feeding_line) = energized_tree(bus_count, &lines, &status)?;
        Ok(Self {
            bus_count,
            lines,
            status,
            loads,
            graph,
            feeding_line,
        })
    }

    /// Same infrastructure and loads under another line-status vector.
    pub fn with_status(&self, status: Vec<bool>) -> Result<Self> {
        Self::new(self.bus_count, self.lines.clone(), status, self.loads.clone())
    }

    pub fn with_loads(&self, loads: Vec<Load>) -> Result<Self> {
        Self::new(self.bus_count, self.lines.clone(), self.status.clone(), loads)
    }

    pub fn bus_count(&self) -> usize {
        self.bus_count
    }

    /// `N`, the number of non-substation buses.
    pub fn n(&self) -> usize {
        self.bus_count - 1
    }

    pub fn lines(&self) -> &[Line] {
        &self.lines
    }

    pub fn status(&self) -> &[bool] {
        &self.status
    }

    pub fn status_f64(&self) -> Vec<f64> {
        self.status.iter().map(|&s| if s { 1.0 } else { 0.0 }).collect()
    }

    pub fn loads(&self) -> &[Load] {
        &self.loads
    }

    /// Energized topology rooted at the substation.
    pub fn graph(&self) -> &TreeGraph {
        &self.graph
    }

    pub fn index(&self) -> LevelSetIndex {
        build_index(&self.graph)
    }

    /// Energized line feeding `bus`.
    pub fn feeding_line(&self, bus: usize) -> Option<usize> {
        self.feeding_line[bus]
    }

    /// Whether the candidate lines (regardless of status) connect all buses.
    pub fn candidate_graph_connected(&self) -> bool {
        let mut uf = UnionFind::new(self.bus_count);
        let mut joined = 0;
        for l in &self.lines {
            if uf.union(l.from, l.to) {
                joined += 1;
            }
        }
        joined + 1 == self.bus_count
    }

    /// Every radial configuration of the candidate lines that keeps all
    /// non-switchable lines energized.
    pub fn radial_configurations(&self, budget: usize) -> Result<Vec<Vec<bool>>> {
        let edges: Vec<_> = self.lines.iter().map(|l| (l.from, l.to)).collect();
        let forced: Vec<_> = self.lines.iter().map(|l| !l.switchable).collect();
        enumerate_spanning_trees(self.bus_count, &edges, &forced, budget)
    }

    /// Branch-bus incidence over all candidate lines, split into the
    /// substation column `a0` and the reduced matrix `A` (`L_e × N`).
    pub fn incidence(&self) -> Incidence {
        let n = self.n();
        let mut a = DMatrix::zeros(self.lines.len(), n);
        let mut a0 = DVector::zeros(self.lines.len());
        for (i, l) in self.lines.iter().enumerate() {
            for (bus, sign) in [(l.from, 1.0), (l.to, -1.0)] {
                if bus == 0 {
                    a0[i] = sign;
                } else {
                    a[(i, bus - 1)] = sign;
                }
            }
        }
        Incidence { a, a0 }
    }

    /// `Θ(b) = Aᵀ diag(b) diag⁻¹(r) A` for a real-valued status vector.
    /// Singular whenever `b`'s support does not span the buses.
    pub fn reduced_laplacian(&self, b: &[f64]) -> DMatrix<f64> {
        assert_eq!(b.len(), self.lines.len(), "one status per candidate line");
        let n = self.n();
        let mut theta = DMatrix::zeros(n, n);
        for (l, &bl) in self.lines.iter().zip(b) {
            if bl == 0.0 {
                continue;
            }
            let g = bl / l.r;
            let (f, t) = (l.from, l.to);
            if f > 0 {
                theta[(f - 1, f - 1)] += g;
            }
            if t > 0 {
                theta[(t - 1, t - 1)] += g;
            }
            if f > 0 && t > 0 {
                theta[(f - 1, t - 1)] -= g;
                theta[(t - 1, f - 1)] -= g;
            }
        }
        theta
    }

    /// `Θ_o`, the reduced Laplacian of the energized lines.
    pub fn energized_laplacian(&self) -> DMatrix<f64> {
        self.reduced_laplacian(&self.status_f64())
    }

    /// `R_o` from root-path sums: `[R]_{mn}` is the resistance shared by the
    /// root paths of `m` and `n`.
    pub fn resistance_matrix(&self) -> DMatrix<f64> {
        self.path_sum_matrix(|l| l.r)
    }

    /// `X_o`, the reactance counterpart of [`Self::resistance_matrix`].
    pub fn reactance_matrix(&self) -> DMatrix<f64> {
        self.path_sum_matrix(|l| l.x)
    }

    /// `R_o = Θ_o⁻¹` through a Cholesky factorization.
    pub fn resistance_matrix_by_inverse(&self) -> Result<DMatrix<f64>> {
        match math::spd_inverse(&self.energized_laplacian()) {
            Some(r) => Ok(r),
            None => bail!(Infeasible, "reduced Laplacian is singular"),
        }
    }

    fn path_sum_matrix(&self, value: impl Fn(&Line) -> f64) -> DMatrix<f64> {
        let n = self.n();
        let idx = self.index();
        // Cumulative root-path value per bus.
        let mut acc = vec![0.0; self.bus_count];
        for m in self.graph.bfs_order().into_iter().skip(1) {
            let p = self.graph.parent(m).expect("bus has a parent");
            let line = &self.lines[self.feeding_line[m].expect("bus is fed")];
            acc[m] = acc[p] + value(line);
        }
        let mut out = DMatrix::zeros(n, n);
        for m in 1..=n {
            let am = idx.ancestors(m);
            for k in m..=n {
                let an = idx.ancestors(k);
                let shared = am.iter().zip(an).take_while(|(a, b)| a == b).count();
                let v = acc[am[shared - 1]];
                out[(m - 1, k - 1)] = v;
                out[(k - 1, m - 1)] = v;
            }
        }
        out
    }

    pub fn sensitivity(&self) -> Result<SensitivityModel> {
        let theta = self.energized_laplacian();
        if math::spd_log_det(&theta).is_none() {
            bail!(Infeasible, "reduced Laplacian is not positive definite");
        }
        let Incidence { a, a0 } = self.incidence();
        Ok(SensitivityModel {
            r: self.resistance_matrix(),
            x: self.reactance_matrix(),
            theta,
            a,
            a0,
        })
    }

    /// Linearized voltages `v = R p + X q + 1` for bus injections `p`, `q`
    /// (length `N`, positive = injected).
    pub fn lindistflow_voltage(&self, p: &DVector<f64>, q: &DVector<f64>) -> DVector<f64> {
        let r = self.resistance_matrix();
        let x = self.reactance_matrix();
        &r * p + &x * q + DVector::from_element(self.n(), 1.0)
    }

    /// Voltage magnitudes from a backward/forward sweep of the full AC
    /// power flow on the energized tree, from a flat start.
    pub fn ac_voltage(&self, p: &DVector<f64>, q: &DVector<f64>, opts: &AcOptions) -> Result<AcSolution> {
        let n = self.n();
        if p.len() != n || q.len() != n {
            bail!(Dimension, "injections must have length {n}");
        }
        let order = self.graph.bfs_order();
        let z: Vec<Complex<f64>> = (0..self.bus_count)
            .map(|m| match self.feeding_line[m] {
                Some(i) => Complex::new(self.lines[i].r, self.lines[i].x),
                None => Complex::new(0.0, 0.0),
            })
            .collect();
        let mut v = vec![Complex::new(1.0, 0.0); self.bus_count];
        let mut branch = vec![Complex::new(0.0, 0.0); self.bus_count];
        for iter in 1..=opts.max_iter {
            // Backward: current drawn through the line feeding each bus.
            for &m in order.iter().rev() {
                if m == 0 {
                    continue;
                }
                let s = Complex::new(p[m - 1], q[m - 1]);
                let injected = (s / v[m]).conj();
                let mut j = -injected;
                for &c in self.graph.children(m) {
                    j += branch[c];
                }
                branch[m] = j;
            }
            // Forward: voltage drops from the substation outwards.
            let mut delta: f64 = 0.0;
            for &m in order.iter().skip(1) {
                let parent = self.graph.parent(m).expect("bus has a parent");
                let next = v[parent] - z[m] * branch[m];
                let d = next - v[m];
                delta = delta.max(math::hypot(d.re, d.im));
                v[m] = next;
            }
            if !delta.is_finite() {
                bail!(Solver, "AC sweep diverged at iteration {iter}");
            }
            if delta < opts.tol {
                let magnitudes = DVector::from_iterator(n, v[1..].iter().map(|c| math::hypot(c.re, c.im)));
                return Ok(AcSolution {
                    magnitudes,
                    iterations: iter,
                });
            }
        }
        bail!(Solver, "AC sweep did not converge in {} iterations", opts.max_iter)
    }
}

fn energized_tree(bus_count: usize, lines: &[Line], status: &[bool]) -> Result<(TreeGraph, Vec<Option<usize>>)> {
    let on: Vec<usize> = (0..lines.len()).filter(|&i| status[i]).collect();
    if on.len() + 1 != bus_count {
        bail!(
            Infeasible,
            "{} energized lines cannot form a radial feeder over {} buses",
            on.len(),
            bus_count
        );
    }
    let edges: Vec<_> = on.iter().map(|&i| (lines[i].from, lines[i].to)).collect();
    let graph = match TreeGraph::from_edges(bus_count, &edges) {
        Ok(g) => g,
        Err(_) => bail!(Infeasible, "energized lines do not form a spanning tree"),
    };
    let mut feeding = vec![None; bus_count];
    for &i in &on {
        let l = &lines[i];
        if graph.parent(l.to) == Some(l.from) {
            feeding[l.to] = Some(i);
        } else {
            feeding[l.from] = Some(i);
        }
    }
    Ok((graph, feeding))
}

/// Reduced incidence `A` (`L_e × N`) and substation column `a0 = −A·1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Incidence {
    pub a: DMatrix<f64>,
    pub a0: DVector<f64>,
}

/// Sensitivities of the energized feeder.
#[derive(Debug, Clone)]
pub struct SensitivityModel {
    pub r: DMatrix<f64>,
    pub x: DMatrix<f64>,
    /// `Θ_o = R⁻¹`.
    pub theta: DMatrix<f64>,
    pub a: DMatrix<f64>,
    pub a0: DVector<f64>,
}

/// Full Laplacian from a reduced one:
/// `Φ(Θ) = [[1ᵀΘ1, −1ᵀΘ], [−Θ1, Θ]]`.
pub fn lift_phi(theta: &DMatrix<f64>) -> DMatrix<f64> {
    let n = theta.nrows();
    assert_eq!(theta.ncols(), n, "Θ must be square");
    let row_sums: DVector<f64> = theta.column_sum();
    let col_sums = theta.row_sum();
    let mut out = DMatrix::zeros(n + 1, n + 1);
    out[(0, 0)] = row_sums.sum();
    for i in 0..n {
        out[(0, i + 1)] = -col_sums[i];
        out[(i + 1, 0)] = -row_sums[i];
    }
    out.view_mut((1, 1), (n, n)).copy_from(theta);
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AcOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for AcOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 100,
        }
    }
}

#[derive(Debug, Clone)]
pub struct AcSolution {
    pub magnitudes: DVector<f64>,
    pub iterations: usize,
}
