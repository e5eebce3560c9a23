//! MV optimal power flow: branch-flow model in squared magnitudes with the
//! second-order-cone relaxation, hinge penalties for voltage and ampacity
//! violations, a slack-exchange deviation cost, and per-transformer
//! flexibility polygons.

use clarabel::algebra::CscMatrix;
use clarabel::solver::{
    DefaultSettingsBuilder, DefaultSolver, IPSolver, NonnegativeConeT, SecondOrderConeT, SolverStatus, SupportedConeT,
    ZeroConeT,
};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::RadialGrid;
use crate::lvflex::{Degeneracy, FlexArea};
use crate::powerflow::PfSolution;

/// Cost of one pu (or pu²) of limit violation.
pub const CHF_PER_PU: f64 = 100.0;
/// Relative SOC gap above which a solution is not treated as physical.
pub const SOC_GAP_LIMIT: f64 = 1e-5;
const SOC_GAP_GUARD: f64 = 1e-9;
/// Branches whose `v l` is below this fraction of the instance's largest are
/// measured against that floor; their absolute gap is at solver tolerance.
const SOC_GAP_FLOOR: f64 = 1e-3;
/// Upper bound on the objective rescaling applied before solving.
const MAX_COST_SCALE: f64 = 1e3;

#[derive(Debug, Error)]
pub enum OpfError {
    #[error("invalid weights: {0}")]
    Weights(String),
    #[error("invalid slack voltage range [{0}, {1}]")]
    SlackRange(f64, f64),
    #[error("problem data: {0}")]
    Shape(String),
    #[error("MV OPF is infeasible ({0})")]
    Infeasible(String),
    #[error("MV OPF solver stopped with status {status} after {iterations} iterations")]
    Solver { status: String, iterations: u32 },
}

/// Objective weights, per pu of the corresponding term.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WeightConfig {
    pub w_l: f64,
    pub w_v: f64,
    pub w_lim: f64,
    pub w_p: f64,
    pub w_q: f64,
}

impl Default for WeightConfig {
    fn default() -> Self {
        Self {
            w_l: 0.1,
            w_v: CHF_PER_PU,
            w_lim: CHF_PER_PU,
            w_p: 0.0,
            w_q: 0.0,
        }
    }
}

impl WeightConfig {
    /// All weights finite and nonnegative, and violation weights at least
    /// 100 times the loss weight so that violations dominate.
    pub fn validate(&self) -> Result<(), OpfError> {
        for (name, w) in [("w_l", self.w_l), ("w_v", self.w_v), ("w_lim", self.w_lim), ("w_p", self.w_p), ("w_q", self.w_q)] {
            if !(w.is_finite() && w >= 0.0) {
                return Err(OpfError::Weights(format!("{name} = {w} must be finite and >= 0")));
            }
        }
        if self.w_v < 100.0 * self.w_l || self.w_lim < 100.0 * self.w_l {
            return Err(OpfError::Weights(format!(
                "w_v ({}) and w_lim ({}) must be at least 100 * w_l ({})",
                self.w_v, self.w_lim, self.w_l
            )));
        }
        Ok(())
    }
}

/// Range of the slack voltage magnitude, pu.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlackRange {
    pub v_min: f64,
    pub v_max: f64,
}

impl Default for SlackRange {
    fn default() -> Self {
        Self { v_min: 0.95, v_max: 1.05 }
    }
}

/// A transformer bus whose exchange may move inside `area` (kW, kvar).
#[derive(Clone, Debug)]
pub struct ControlledBus {
    pub bus: String,
    pub area: FlexArea,
}

/// One MV OPF instance.
#[derive(Clone, Debug)]
pub struct OpfProblem<'a> {
    pub grid: &'a RadialGrid,
    pub s_base_kva: f64,
    /// Fixed net injection per bus, pu, generation positive.
    pub injections: Vec<Complex64>,
    pub controls: Vec<ControlledBus>,
    pub weights: WeightConfig,
    pub slack_range: SlackRange,
    /// Scheduled slack exchange the `w_p`, `w_q` terms measure deviation from, pu.
    pub baseline: Complex64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct ObjectiveBreakdown {
    pub loss: f64,
    pub v_penalty: f64,
    pub i_penalty: f64,
    pub slack: f64,
    pub total: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ControlAction {
    pub bus: String,
    pub dp_kw: f64,
    pub dq_kvar: f64,
}

/// Optimum of an [`OpfProblem`]. Squared quantities are in pu².
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OpfSolution {
    pub bus_ids: Vec<String>,
    pub branch_ids: Vec<String>,
    pub v: Vec<f64>,
    pub p: Vec<f64>,
    pub q: Vec<f64>,
    pub l: Vec<f64>,
    pub v_dev: Vec<f64>,
    pub l_dev: Vec<f64>,
    pub controls: Vec<ControlAction>,
    pub p_sl: f64,
    pub q_sl: f64,
    pub objective: ObjectiveBreakdown,
    /// `v_i l_ij - P_ij² - Q_ij²` per branch.
    pub soc_gap: Vec<f64>,
    pub status: String,
    pub iterations: u32,
    root: usize,
    sending_bus: Vec<usize>,
}

impl OpfSolution {
    pub fn slack_voltage(&self) -> f64 {
        self.v[self.root].sqrt()
    }

    pub fn v_mag(&self) -> Vec<f64> {
        self.v.iter().map(|v| v.max(0.0).sqrt()).collect()
    }

    pub fn to_json(&self) -> serde_json::Value {
        let buses: Vec<_> = self
            .bus_ids
            .iter()
            .zip(self.v_mag())
            .map(|(id, v)| serde_json::json!({"id": id, "v_pu": v}))
            .collect();
        let branches: Vec<_> = (0..self.branch_ids.len())
            .map(|e| {
                serde_json::json!({
                    "id": self.branch_ids[e],
                    "p": self.p[e],
                    "q": self.q[e],
                    "i_pu": self.l[e].max(0.0).sqrt(),
                    "soc_gap": self.soc_gap[e],
                })
            })
            .collect();
        let controls: Vec<_> = self
            .controls
            .iter()
            .map(|c| serde_json::json!({"bus": c.bus, "dp": c.dp_kw, "dq": c.dq_kvar}))
            .collect();
        serde_json::json!({
            "objective": {
                "loss": self.objective.loss,
                "v_penalty": self.objective.v_penalty,
                "i_penalty": self.objective.i_penalty,
                "slack": self.objective.slack,
            },
            "buses": buses,
            "branches": branches,
            "controls": controls,
            "slack": {"p": self.p_sl, "q": self.q_sl, "v": self.slack_voltage()},
            "status": self.status,
            "iterations": self.iterations,
        })
    }
}

/// Largest relative SOC gap `(v l - P² - Q²) / max(v l, eps)` over branches,
/// with `eps` tied to the largest `v l` of the instance.
pub fn check_soc_exactness(solution: &OpfSolution) -> f64 {
    let vl: Vec<f64> = (0..solution.l.len())
        .map(|e| solution.v[solution.sending_bus[e]] * solution.l[e])
        .collect();
    let eps = (SOC_GAP_FLOOR * vl.iter().cloned().fold(0.0, f64::max)).max(SOC_GAP_GUARD);
    vl.iter()
        .zip(&solution.soc_gap)
        .map(|(vl, gap)| gap / vl.max(eps))
        .fold(0.0, f64::max)
}

/// Hinge violations and their cost.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct PenaltyReport {
    /// `max(0, v - v_max², v_min² - v)` per bus, pu².
    pub v_dev: Vec<f64>,
    /// `max(0, l - i_max²)` per branch, pu².
    pub l_dev: Vec<f64>,
    pub v_chf: f64,
    pub i_chf: f64,
    pub total_chf: f64,
}

/// Closed-form hinges on squared voltages `v` and squared currents `l`.
pub fn evaluate_penalties(grid: &RadialGrid, v: &[f64], l: &[f64]) -> PenaltyReport {
    let v_dev: Vec<f64> = grid
        .buses()
        .iter()
        .zip(v)
        .map(|(b, &v)| voltage_hinge(v, b.v_min, b.v_max))
        .collect();
    let l_dev: Vec<f64> = grid
        .branches()
        .iter()
        .zip(l)
        .map(|(b, &l)| current_hinge(l, b.i_max))
        .collect();
    let v_chf = CHF_PER_PU * v_dev.iter().sum::<f64>();
    let i_chf = CHF_PER_PU * l_dev.iter().sum::<f64>();
    PenaltyReport {
        v_dev,
        l_dev,
        v_chf,
        i_chf,
        total_chf: v_chf + i_chf,
    }
}

pub fn voltage_hinge(v_sq: f64, v_min: f64, v_max: f64) -> f64 {
    0.0f64.max(v_sq - v_max * v_max).max(v_min * v_min - v_sq)
}

pub fn current_hinge(l_sq: f64, i_max: f64) -> f64 {
    0.0f64.max(l_sq - i_max * i_max)
}

/// Penalties of an exact power-flow state.
pub fn evaluate_pf_penalties(grid: &RadialGrid, pf: &PfSolution) -> PenaltyReport {
    evaluate_penalties(grid, &pf.v_sq(), &pf.l_sq())
}

/// Largest absolute residual of the balance and voltage-drop equalities for
/// a state `(v, P, Q, l)` with slack exchange `s_sl` and net injections
/// `injections` (controls already added).
pub fn equality_residual(
    grid: &RadialGrid,
    injections: &[Complex64],
    v: &[f64],
    p: &[f64],
    q: &[f64],
    l: &[f64],
    s_sl: Complex64,
) -> f64 {
    let root = grid.root();
    let mut worst: f64 = 0.0;
    for j in 0..grid.n_buses() {
        let (mut bp, mut bq) = (0.0, 0.0);
        for e in grid.child_branches(j) {
            bp += p[e];
            bq += q[e];
        }
        if let Some(e) = grid.parent_branch(j) {
            let br = &grid.branches()[e];
            bp -= p[e] - br.r * l[e];
            bq -= q[e] - br.x * l[e];
        }
        if j == root {
            bp -= s_sl.re;
            bq -= s_sl.im;
        }
        worst = worst.max((bp - injections[j].re).abs()).max((bq - injections[j].im).abs());
    }
    for (e, br) in grid.branches().iter().enumerate() {
        let z2 = br.r * br.r + br.x * br.x;
        let res = v[br.to] - v[br.from] + 2.0 * (br.r * p[e] + br.x * q[e]) - z2 * l[e];
        worst = worst.max(res.abs());
    }
    worst
}

/// Variable layout of the conic program.
struct Layout {
    n: usize,
    m: usize,
    n_ctrl: usize,
}

impl Layout {
    fn v(&self, i: usize) -> usize {
        i
    }
    fn p(&self, e: usize) -> usize {
        self.n + e
    }
    fn q(&self, e: usize) -> usize {
        self.n + self.m + e
    }
    fn l(&self, e: usize) -> usize {
        self.n + 2 * self.m + e
    }
    fn dp(&self, c: usize) -> usize {
        self.n + 3 * self.m + 2 * c
    }
    fn dq(&self, c: usize) -> usize {
        self.dp(c) + 1
    }
    fn p_sl(&self) -> usize {
        self.n + 3 * self.m + 2 * self.n_ctrl
    }
    fn q_sl(&self) -> usize {
        self.p_sl() + 1
    }
    fn vdev(&self, i: usize) -> usize {
        self.p_sl() + 2 + i
    }
    fn ldev(&self, e: usize) -> usize {
        self.p_sl() + 2 + self.n + e
    }
    fn dev_p(&self) -> usize {
        self.p_sl() + 2 + self.n + self.m
    }
    fn dev_q(&self) -> usize {
        self.dev_p() + 1
    }
    /// Segment parameters follow the fixed block, one per segment control.
    fn fixed_len(&self) -> usize {
        self.dev_q() + 1
    }
}

/// Rows of `A x + s = b` grouped by cone.
#[derive(Default)]
struct Block {
    triplets: Vec<(usize, usize, f64)>,
    b: Vec<f64>,
}

impl Block {
    fn row(&mut self, terms: &[(usize, f64)], rhs: f64) {
        let r = self.b.len();
        for &(c, v) in terms {
            if v != 0.0 {
                self.triplets.push((r, c, v));
            }
        }
        self.b.push(rhs);
    }
}

/// Solves the SOC-relaxed MV OPF.
///
/// Branches are oriented parent to child and `P, Q` are sending-end flows.
/// A control bus contributes `(dp, dq)` on top of its fixed injection: a
/// polygon through its half-planes, a segment through a parameter in
/// `[0, 1]`, and a point as fixed values.
fn power_scale(problem: &OpfProblem) -> f64 {
    let kw = 1.0 / problem.s_base_kva;
    let reach = problem
        .controls
        .iter()
        .flat_map(|c| c.area.corners())
        .map(|[p, q]| p.hypot(q) * kw);
    let largest = problem
        .injections
        .iter()
        .map(|s| s.norm())
        .chain(reach)
        .fold(0.0, f64::max);
    if largest > 0.0 && largest.is_finite() {
        largest
    } else {
        1.0
    }
}

pub fn solve_mv_opf(problem: &OpfProblem) -> Result<OpfSolution, OpfError> {
    let grid = problem.grid;
    problem.weights.validate()?;
    let sr = problem.slack_range;
    if !(sr.v_min > 0.0 && sr.v_min <= sr.v_max && sr.v_max.is_finite()) {
        return Err(OpfError::SlackRange(sr.v_min, sr.v_max));
    }
    let n = grid.n_buses();
    let m = grid.n_branches();
    if problem.injections.len() != n {
        return Err(OpfError::Shape(format!("{} injections for {n} buses", problem.injections.len())));
    }
    if !(problem.s_base_kva > 0.0) {
        return Err(OpfError::Shape("s_base_kva must be positive".into()));
    }
    let root = grid.root();
    let mut ctrl_bus = Vec::with_capacity(problem.controls.len());
    for c in &problem.controls {
        let i = grid
            .bus_index(&c.bus)
            .ok_or_else(|| OpfError::Shape(format!("control bus '{}' is not in the grid", c.bus)))?;
        if i == root {
            return Err(OpfError::Shape(format!("control bus '{}' is the slack bus", c.bus)));
        }
        ctrl_bus.push(i);
    }
    let lay = Layout {
        n,
        m,
        n_ctrl: problem.controls.len(),
    };
    let segments: Vec<usize> = (0..problem.controls.len())
        .filter(|&c| problem.controls[c].area.degeneracy == Degeneracy::Segment)
        .collect();
    let n_var = lay.fixed_len() + segments.len();
    let w = problem.weights;
    let branches = grid.branches();
    // Internal power base in which the largest injection is about one unit.
    // Voltages are unaffected; powers scale by 1/k and squared currents by 1/k².
    let k = power_scale(problem);
    let kw = 1.0 / (problem.s_base_kva * k);
    let r: Vec<f64> = branches.iter().map(|b| b.r * k).collect();
    let xl: Vec<f64> = branches.iter().map(|b| b.x * k).collect();
    let inj: Vec<Complex64> = problem.injections.iter().map(|s| s / k).collect();

    // Equalities.
    let mut eq = Block::default();
    let mut ctrl_at = vec![None; n];
    for (c, &i) in ctrl_bus.iter().enumerate() {
        ctrl_at[i] = Some(c);
    }
    for j in 0..n {
        for (is_q, fixed) in [(false, inj[j].re), (true, inj[j].im)] {
            let mut terms = Vec::new();
            for e in grid.child_branches(j) {
                terms.push((if is_q { lay.q(e) } else { lay.p(e) }, 1.0));
            }
            if let Some(e) = grid.parent_branch(j) {
                let loss = if is_q { xl[e] } else { r[e] };
                terms.push((if is_q { lay.q(e) } else { lay.p(e) }, -1.0));
                terms.push((lay.l(e), loss));
            }
            if j == root {
                terms.push((if is_q { lay.q_sl() } else { lay.p_sl() }, -1.0));
            }
            // Controls may sit on a bus that shares several areas; sum them all.
            for (c, &i) in ctrl_bus.iter().enumerate() {
                if i == j {
                    terms.push((if is_q { lay.dq(c) } else { lay.dp(c) }, -1.0));
                }
            }
            eq.row(&terms, fixed);
        }
    }
    for (e, br) in branches.iter().enumerate() {
        let z2 = r[e] * r[e] + xl[e] * xl[e];
        eq.row(
            &[
                (lay.v(br.to), 1.0),
                (lay.v(br.from), -1.0),
                (lay.p(e), 2.0 * r[e]),
                (lay.q(e), 2.0 * xl[e]),
                (lay.l(e), -z2),
            ],
            0.0,
        );
    }
    for (c, ctl) in problem.controls.iter().enumerate() {
        let corners = ctl.area.corners();
        match ctl.area.degeneracy {
            Degeneracy::Point => {
                let [x, y] = corners.first().copied().unwrap_or([0.0, 0.0]);
                eq.row(&[(lay.dp(c), 1.0)], x * kw);
                eq.row(&[(lay.dq(c), 1.0)], y * kw);
            }
            Degeneracy::Segment => {
                let t = lay.fixed_len() + segments.iter().position(|&s| s == c).expect("segment index");
                let (a, b) = (corners[0], corners[1]);
                eq.row(&[(lay.dp(c), 1.0), (t, -(b[0] - a[0]) * kw)], a[0] * kw);
                eq.row(&[(lay.dq(c), 1.0), (t, -(b[1] - a[1]) * kw)], a[1] * kw);
            }
            Degeneracy::None => {}
        }
    }

    // Inequalities `A x <= b`.
    let mut ineq = Block::default();
    ineq.row(&[(lay.v(root), 1.0)], sr.v_max * sr.v_max);
    ineq.row(&[(lay.v(root), -1.0)], -sr.v_min * sr.v_min);
    for (i, bus) in grid.buses().iter().enumerate() {
        ineq.row(&[(lay.v(i), 1.0), (lay.vdev(i), -1.0)], bus.v_max * bus.v_max);
        ineq.row(&[(lay.v(i), -1.0), (lay.vdev(i), -1.0)], -bus.v_min * bus.v_min);
        ineq.row(&[(lay.vdev(i), -1.0)], 0.0);
    }
    for (e, br) in branches.iter().enumerate() {
        ineq.row(&[(lay.l(e), 1.0), (lay.ldev(e), -1.0)], (br.i_max / k).powi(2));
        ineq.row(&[(lay.ldev(e), -1.0)], 0.0);
        ineq.row(&[(lay.l(e), -1.0)], 0.0);
    }
    for (c, ctl) in problem.controls.iter().enumerate() {
        match ctl.area.degeneracy {
            Degeneracy::None => {
                for h in &ctl.area.halfplanes {
                    ineq.row(&[(lay.dp(c), h[0]), (lay.dq(c), h[1])], h[2] * kw);
                }
            }
            Degeneracy::Segment => {
                let t = lay.fixed_len() + segments.iter().position(|&s| s == c).expect("segment index");
                ineq.row(&[(t, 1.0)], 1.0);
                ineq.row(&[(t, -1.0)], 0.0);
            }
            Degeneracy::Point => {}
        }
    }
    let base = problem.baseline / k;
    ineq.row(&[(lay.p_sl(), 1.0), (lay.dev_p(), -1.0)], base.re);
    ineq.row(&[(lay.p_sl(), -1.0), (lay.dev_p(), -1.0)], -base.re);
    ineq.row(&[(lay.q_sl(), 1.0), (lay.dev_q(), -1.0)], base.im);
    ineq.row(&[(lay.q_sl(), -1.0), (lay.dev_q(), -1.0)], -base.im);

    // Rotated cones as standard ones: ||(2P, 2Q, v_i - l)|| <= v_i + l.
    let mut soc = Block::default();
    for (e, br) in branches.iter().enumerate() {
        soc.row(&[(lay.v(br.from), -1.0), (lay.l(e), -1.0)], 0.0);
        soc.row(&[(lay.p(e), -2.0)], 0.0);
        soc.row(&[(lay.q(e), -2.0)], 0.0);
        soc.row(&[(lay.v(br.from), -1.0), (lay.l(e), 1.0)], 0.0);
    }

    let mut cost = vec![0.0; n_var];
    for (e, br) in branches.iter().enumerate() {
        cost[lay.l(e)] = w.w_l * br.r * k * k;
        cost[lay.ldev(e)] = w.w_lim * k * k;
    }
    for i in 0..n {
        cost[lay.vdev(i)] = w.w_v;
    }
    cost[lay.dev_p()] = w.w_p * k;
    cost[lay.dev_q()] = w.w_q * k;
    // Loss terms are tiny next to the penalty weights; scaling keeps the
    // interior point's complementarity well below the SOC gap it leaves.
    // Beyond MAX_COST_SCALE the penalty columns dominate and the solver stalls.
    let scale = (1.0 / cost.iter().cloned().filter(|c| *c > 0.0).fold(f64::INFINITY, f64::min).min(1.0)).min(MAX_COST_SCALE);
    let scaled_cost: Vec<f64> = cost.iter().map(|c| c * scale).collect();

    let (n_eq, n_in, n_soc) = (eq.b.len(), ineq.b.len(), soc.b.len());
    let mut rows = Vec::new();
    let mut cols = Vec::new();
    let mut vals = Vec::new();
    for (offset, block) in [(0, &eq), (n_eq, &ineq), (n_eq + n_in, &soc)] {
        for &(r, c, v) in &block.triplets {
            rows.push(r + offset);
            cols.push(c);
            vals.push(v);
        }
    }
    let a = CscMatrix::new_from_triplets(n_eq + n_in + n_soc, n_var, rows, cols, vals);
    let b: Vec<f64> = eq.b.iter().chain(&ineq.b).chain(&soc.b).cloned().collect();
    let mut cones: Vec<SupportedConeT<f64>> = vec![ZeroConeT(n_eq), NonnegativeConeT(n_in)];
    cones.extend((0..m).map(|_| SecondOrderConeT(4)));
    let p_mat = CscMatrix::zeros((n_var, n_var));
    let settings = DefaultSettingsBuilder::default()
        .verbose(false)
        .max_iter(200)
        .tol_gap_abs(1e-11)
        .tol_gap_rel(1e-11)
        .tol_feas(1e-10)
        .tol_ktratio(1e-9)
        .build()
        .expect("static solver settings are valid");
    let mut solver = DefaultSolver::new(&p_mat, &scaled_cost, &a, &b, &cones, settings)
        .map_err(|e| OpfError::Shape(format!("{e:?}")))?;
    solver.solve();
    let sol = &solver.solution;
    match sol.status {
        SolverStatus::Solved | SolverStatus::AlmostSolved => {}
        SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => {
            return Err(OpfError::Infeasible(format!(
                "{} flex constraints over {} controlled buses",
                problem.controls.iter().map(|c| c.area.halfplanes.len()).sum::<usize>(),
                problem.controls.len()
            )))
        }
        status => {
            return Err(OpfError::Solver {
                status: format!("{status:?}"),
                iterations: sol.iterations,
            })
        }
    }
    let x = &sol.x;

    let v: Vec<f64> = (0..n).map(|i| x[lay.v(i)]).collect();
    let p: Vec<f64> = (0..m).map(|e| x[lay.p(e)] * k).collect();
    let q: Vec<f64> = (0..m).map(|e| x[lay.q(e)] * k).collect();
    let l: Vec<f64> = (0..m).map(|e| x[lay.l(e)] * k * k).collect();
    let sending_bus: Vec<usize> = branches.iter().map(|b| b.from).collect();
    let soc_gap: Vec<f64> = (0..m).map(|e| v[sending_bus[e]] * l[e] - p[e] * p[e] - q[e] * q[e]).collect();
    // Report the hinges of the returned state rather than the epigraph values.
    let pen = evaluate_penalties(grid, &v, &l);
    let dev_p = (x[lay.p_sl()] * k - problem.baseline.re).abs();
    let dev_q = (x[lay.q_sl()] * k - problem.baseline.im).abs();
    let loss = w.w_l * branches.iter().zip(&l).map(|(br, l)| br.r * l).sum::<f64>();
    let v_penalty = w.w_v * pen.v_dev.iter().sum::<f64>();
    let i_penalty = w.w_lim * pen.l_dev.iter().sum::<f64>();
    let slack = w.w_p * dev_p + w.w_q * dev_q;

    Ok(OpfSolution {
        bus_ids: grid.bus_ids(),
        branch_ids: branches.iter().map(|b| b.id.clone()).collect(),
        v,
        p,
        q,
        l,
        v_dev: pen.v_dev,
        l_dev: pen.l_dev,
        controls: problem
            .controls
            .iter()
            .enumerate()
            .map(|(c, ctl)| ControlAction {
                bus: ctl.bus.clone(),
                dp_kw: x[lay.dp(c)] / kw,
                dq_kvar: x[lay.dq(c)] / kw,
            })
            .collect(),
        p_sl: x[lay.p_sl()] * k,
        q_sl: x[lay.q_sl()] * k,
        objective: ObjectiveBreakdown {
            loss,
            v_penalty,
            i_penalty,
            slack,
            total: loss + v_penalty + i_penalty + slack,
        },
        soc_gap,
        status: format!("{:?}", sol.status),
        iterations: sol.iterations,
        root,
        sending_bus,
    })
}
