//! Linear LV optimal power flow on sensitivity coefficients and the
//! directional sweep that turns it into a P-Q flexibility polygon per
//! transformer.

pub mod hull;

use microlp::{ComparisonOp, OptimizationDirection, Problem};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{Der, DerKind, RadialGrid};
use crate::sensitivity::SensitivityMatrix;
use hull::HalfPlane;

/// Tolerance for membership tests and for treating hull points as equal.
pub const CONTAINS_TOL: f64 = 1e-9;
/// Relative slack on the primary objective when the tie-break solve runs.
const LEXICOGRAPHIC_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum LvFlexError {
    #[error("operating point already violates {constraint} (by {excess:.3e} pu)")]
    InfeasibleOperatingPoint { constraint: String, excess: f64 },
    #[error("LV OPF solver failed: {0}")]
    Solver(String),
    #[error("direction ({alpha}, {beta}) is not a valid search direction")]
    BadDirection { alpha: f64, beta: f64 },
    #[error("DER '{der}' has a range that excludes zero")]
    BadLimits { der: String },
    #[error("operating point does not match the sensitivity matrix: {0}")]
    Shape(String),
}

/// Objective weights `(alpha, beta)` of `max alpha dP + beta dQ`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlexDirection {
    pub alpha: f64,
    pub beta: f64,
}

impl FlexDirection {
    pub fn new(alpha: f64, beta: f64) -> Result<Self, LvFlexError> {
        if !(alpha.is_finite() && beta.is_finite()) || (alpha == 0.0 && beta == 0.0) {
            return Err(LvFlexError::BadDirection { alpha, beta });
        }
        Ok(Self { alpha, beta })
    }

    /// The eight sign combinations of `alpha, beta` in `{-1, 0, 1}`,
    /// counterclockwise from `(1, 0)`.
    pub fn eight() -> Vec<Self> {
        [(1, 0), (1, 1), (0, 1), (-1, 1), (-1, 0), (-1, -1), (0, -1), (1, -1)]
            .iter()
            .map(|&(a, b)| Self {
                alpha: a as f64,
                beta: b as f64,
            })
            .collect()
    }

    /// `n` evenly spaced directions; `n = 8` gives the same rays as [`eight`](Self::eight).
    pub fn angular(n: usize) -> Vec<Self> {
        if n == 8 {
            return Self::eight();
        }
        (0..n)
            .map(|k| {
                let th = 2.0 * std::f64::consts::PI * k as f64 / n as f64;
                let (s, c) = th.sin_cos();
                // Snap the axis-aligned rays so they are exact.
                let snap = |x: f64| if x.abs() < 1e-15 { 0.0 } else { x };
                Self { alpha: snap(c), beta: snap(s) }
            })
            .collect()
    }
}

/// Box limits of one DER's deltas, kW and kvar.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DerLimit {
    pub der_id: String,
    pub bus: String,
    pub dp_min: f64,
    pub dp_max: f64,
    pub dq_min: f64,
    pub dq_max: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct DerFlexLimits {
    pub ders: Vec<DerLimit>,
}

impl DerFlexLimits {
    /// Limits at the current output of each DER (`output_kw[k]` for `ders[k]`,
    /// generation or consumption as a positive number).
    ///
    /// PV may curtail `curtailment_fraction` of its output and move reactive
    /// power within the `pf_min` cone of that output. Flexible loads may shed
    /// the same fraction; storage may move that fraction of its rating either
    /// way. Non-controllable DERs are left out.
    pub fn from_ders(ders: &[Der], output_kw: &[f64]) -> Self {
        let mut out = Vec::new();
        for (der, &p) in ders.iter().zip(output_kw) {
            if !der.controllable {
                continue;
            }
            let p = p.max(0.0);
            let f = der.curtailment_fraction;
            let q_reach = p * der.pf_min.acos().tan();
            let (dp_min, dp_max, dq) = match der.kind {
                DerKind::Pv => (-f * p, 0.0, q_reach),
                DerKind::Load => (0.0, f * p, 0.0),
                DerKind::Storage => (-f * der.p_rating_kw, f * der.p_rating_kw, 0.0),
            };
            out.push(DerLimit {
                der_id: der.id.clone(),
                bus: der.bus.clone(),
                dp_min,
                dp_max,
                dq_min: -dq,
                dq_max: dq,
            });
        }
        Self { ders: out }
    }

    /// Every range multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            ders: self
                .ders
                .iter()
                .map(|d| DerLimit {
                    dp_min: d.dp_min * factor,
                    dp_max: d.dp_max * factor,
                    dq_min: d.dq_min * factor,
                    dq_max: d.dq_max * factor,
                    ..d.clone()
                })
                .collect(),
        }
    }

    pub fn validate(&self) -> Result<(), LvFlexError> {
        for d in &self.ders {
            let ok = d.dp_min <= 0.0 && d.dp_max >= 0.0 && d.dq_min <= 0.0 && d.dq_max >= 0.0;
            if !ok || ![d.dp_min, d.dp_max, d.dq_min, d.dq_max].iter().all(|x| x.is_finite()) {
                return Err(LvFlexError::BadLimits { der: d.der_id.clone() });
            }
        }
        Ok(())
    }
}

/// Linearisation point and limits of one LV grid. Voltage rows follow the
/// sensitivity matrix's `bus_ids`, current rows its `branch_ids`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OperatingPoint {
    pub v0: Vec<f64>,
    pub i0: Vec<f64>,
    pub v_min: Vec<f64>,
    pub v_max: Vec<f64>,
    pub i_max: Vec<f64>,
    pub s_base_kva: f64,
}

impl OperatingPoint {
    pub fn new(grid: &RadialGrid, matrix: &SensitivityMatrix, s_base_kva: f64) -> Result<Self, LvFlexError> {
        if matrix.bus_ids.len() != grid.n_buses() || matrix.branch_ids.len() != grid.n_branches() {
            return Err(LvFlexError::Shape("grid and matrix sizes differ".into()));
        }
        Ok(Self {
            v0: matrix.v0.clone(),
            i0: matrix.i0.clone(),
            v_min: grid.buses().iter().map(|b| b.v_min).collect(),
            v_max: grid.buses().iter().map(|b| b.v_max).collect(),
            i_max: grid.branches().iter().map(|b| b.i_max).collect(),
            s_base_kva,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DerSetpoint {
    pub der_id: String,
    pub dp_kw: f64,
    pub dq_kvar: f64,
}

/// One point of the polygon with the DER deltas that realise it.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FlexVertex {
    pub dp_kw: f64,
    pub dq_kvar: f64,
    pub setpoints: Vec<DerSetpoint>,
}

impl FlexVertex {
    fn origin(limits: &DerFlexLimits) -> Self {
        Self {
            dp_kw: 0.0,
            dq_kvar: 0.0,
            setpoints: limits
                .ders
                .iter()
                .map(|d| DerSetpoint {
                    der_id: d.der_id.clone(),
                    dp_kw: 0.0,
                    dq_kvar: 0.0,
                })
                .collect(),
        }
    }
}

struct Row {
    coeffs: Vec<f64>,
    rhs: f64,
    name: String,
}

/// Linear rows `coeffs . [dp; dq] <= rhs` (kW, kvar) for the voltage and
/// current limits.
fn network_rows(matrix: &SensitivityMatrix, op: &OperatingPoint, limits: &DerFlexLimits) -> Result<Vec<Row>, LvFlexError> {
    let m = limits.ders.len();
    let cols: Vec<Option<usize>> = limits.ders.iter().map(|d| matrix.column_of(&d.bus)).collect();
    let kw = 1.0 / op.s_base_kva;
    let mut rows = Vec::new();
    let mut push = |kp: &dyn Fn(usize) -> f64, kq: &dyn Fn(usize) -> f64, sign: f64, rhs: f64, name: String| {
        let mut coeffs = vec![0.0; 2 * m];
        for (k, col) in cols.iter().enumerate() {
            if let Some(c) = *col {
                coeffs[k] = sign * kp(c) * kw;
                coeffs[m + k] = sign * kq(c) * kw;
            }
        }
        rows.push(Row { coeffs, rhs, name });
    };
    if op.v0.len() != matrix.k_vp.nrows() || op.i0.len() != matrix.k_ip.nrows() {
        return Err(LvFlexError::Shape("operating point length".into()));
    }
    for (i, id) in matrix.bus_ids.iter().enumerate() {
        let kp = |c: usize| matrix.k_vp[(i, c)];
        let kq = |c: usize| matrix.k_vq[(i, c)];
        push(&kp, &kq, 1.0, op.v_max[i] - op.v0[i], format!("v_max at bus '{id}'"));
        push(&kp, &kq, -1.0, op.v0[i] - op.v_min[i], format!("v_min at bus '{id}'"));
    }
    for (e, id) in matrix.branch_ids.iter().enumerate() {
        let kp = |c: usize| matrix.k_ip[(e, c)];
        let kq = |c: usize| matrix.k_iq[(e, c)];
        push(&kp, &kq, 1.0, op.i_max[e] - op.i0[e], format!("i_max on branch '{id}'"));
    }
    // Rows with no DER influence only matter through the operating point check.
    Ok(rows)
}

fn check_operating_point(rows: &[Row]) -> Result<(), LvFlexError> {
    for r in rows {
        if r.rhs < -CONTAINS_TOL {
            return Err(LvFlexError::InfeasibleOperatingPoint {
                constraint: r.name.clone(),
                excess: -r.rhs,
            });
        }
    }
    Ok(())
}

fn solve_lp(
    rows: &[Row],
    limits: &DerFlexLimits,
    objective: (f64, f64),
    floor: Option<((f64, f64), f64)>,
) -> Result<(Vec<f64>, f64), LvFlexError> {
    let m = limits.ders.len();
    let mut lp = Problem::new(OptimizationDirection::Maximize);
    let mut vars = Vec::with_capacity(2 * m);
    for d in &limits.ders {
        vars.push(lp.add_var(objective.0, (d.dp_min, d.dp_max)));
    }
    for d in &limits.ders {
        vars.push(lp.add_var(objective.1, (d.dq_min, d.dq_max)));
    }
    for r in rows {
        let scale = r.coeffs.iter().fold(0.0f64, |a, c| a.max(c.abs()));
        if scale == 0.0 {
            continue;
        }
        let terms: Vec<_> = vars
            .iter()
            .zip(&r.coeffs)
            .filter(|(_, c)| **c != 0.0)
            .map(|(v, c)| (*v, c / scale))
            .collect();
        lp.add_constraint(terms, ComparisonOp::Le, r.rhs.max(0.0) / scale);
    }
    if let Some(((a, b), value)) = floor {
        let terms: Vec<_> = (0..m).map(|k| (vars[k], a)).chain((0..m).map(|k| (vars[m + k], b))).collect();
        lp.add_constraint(terms, ComparisonOp::Ge, value);
    }
    let sol = lp
        .solve()
        .map_err(|e| LvFlexError::Solver(e.to_string()))?
        .into_solution()
        .map_err(|_| LvFlexError::Solver("interrupted".into()))?;
    let x: Vec<f64> = vars.iter().map(|v| sol.var_value(*v)).collect();
    Ok((x, sol.objective()))
}

/// One directional solve of the linear LV OPF.
///
/// Maximises `alpha dP + beta dQ` where `dP, dQ` are the sums of DER deltas,
/// subject to the DER boxes and the linearised voltage and current limits. A
/// second solve holds the first objective at its optimum and pushes along the
/// direction rotated a quarter turn counterclockwise, so the point returned is
/// a vertex of the feasible polygon rather than an arbitrary point of an edge.
pub fn lv_opf(
    matrix: &SensitivityMatrix,
    op: &OperatingPoint,
    limits: &DerFlexLimits,
    direction: FlexDirection,
) -> Result<FlexVertex, LvFlexError> {
    limits.validate()?;
    let rows = network_rows(matrix, op, limits)?;
    check_operating_point(&rows)?;
    vertex_from_rows(&rows, limits, direction)
}

fn vertex_from_rows(rows: &[Row], limits: &DerFlexLimits, direction: FlexDirection) -> Result<FlexVertex, LvFlexError> {
    let m = limits.ders.len();
    if m == 0 {
        return Ok(FlexVertex::origin(limits));
    }
    let d = (direction.alpha, direction.beta);
    let (_, best) = solve_lp(rows, limits, d, None)?;
    let floor = best - LEXICOGRAPHIC_TOL * best.abs().max(1.0);
    let (x, _) = solve_lp(rows, limits, (-d.1, d.0), Some((d, floor)))?;
    let setpoints: Vec<DerSetpoint> = limits
        .ders
        .iter()
        .enumerate()
        .map(|(k, der)| DerSetpoint {
            der_id: der.der_id.clone(),
            dp_kw: x[k],
            dq_kvar: x[m + k],
        })
        .collect();
    Ok(FlexVertex {
        dp_kw: setpoints.iter().map(|s| s.dp_kw).sum(),
        dq_kvar: setpoints.iter().map(|s| s.dq_kvar).sum(),
        setpoints,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Degeneracy {
    /// Proper two-dimensional polygon.
    None,
    Point,
    Segment,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlexStatus {
    Ok,
    /// The operating point already breaks an LV limit; no flexibility offered.
    PreexistingViolation,
}

/// Result of a membership test.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Containment {
    Inside,
    /// Index into `halfplanes` of the most violated cut and by how much.
    Outside { halfplane: usize, excess: f64 },
}

impl Containment {
    pub fn is_inside(&self) -> bool {
        matches!(self, Containment::Inside)
    }
}

/// Convex aggregate flexibility at one transformer, kW and kvar.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FlexArea {
    pub transformer_id: String,
    /// Counterclockwise hull vertices.
    pub vertices: Vec<FlexVertex>,
    /// `a dp + b dq <= c`, one per hull edge; degenerate areas get the cuts
    /// that pin them to their point or segment.
    pub halfplanes: Vec<HalfPlane>,
    pub degeneracy: Degeneracy,
    pub status: FlexStatus,
    /// Voltage and current magnitudes the polygon was linearised around.
    pub v0: Vec<f64>,
    pub i0: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct FlexAreaJson {
    transformer_id: String,
    vertices: Vec<[f64; 2]>,
    halfplanes: Vec<[f64; 3]>,
    degeneracy: Degeneracy,
    status: FlexStatus,
    setpoints: Vec<Vec<DerSetpoint>>,
}

impl FlexArea {
    /// The single point `(0, 0)`.
    pub fn no_flexibility(transformer_id: &str, status: FlexStatus, limits: &DerFlexLimits) -> Self {
        Self::from_points(transformer_id, vec![FlexVertex::origin(limits)], status, Vec::new(), Vec::new())
    }

    fn from_points(
        transformer_id: &str,
        points: Vec<FlexVertex>,
        status: FlexStatus,
        v0: Vec<f64>,
        i0: Vec<f64>,
    ) -> Self {
        let xy: Vec<[f64; 2]> = points.iter().map(|v| [v.dp_kw, v.dq_kvar]).collect();
        let idx = hull::convex_hull(&xy, CONTAINS_TOL);
        let vertices: Vec<FlexVertex> = idx.iter().map(|&i| points[i].clone()).collect();
        let corners: Vec<[f64; 2]> = idx.iter().map(|&i| xy[i]).collect();
        let (degeneracy, halfplanes) = match corners.len() {
            1 => {
                let [x, y] = corners[0];
                (Degeneracy::Point, vec![[1.0, 0.0, x], [-1.0, 0.0, -x], [0.0, 1.0, y], [0.0, -1.0, -y]])
            }
            2 => {
                let (p, q) = (corners[0], corners[1]);
                let (dx, dy) = (q[0] - p[0], q[1] - p[1]);
                let len = (dx * dx + dy * dy).sqrt();
                let (tx, ty) = (dx / len, dy / len);
                let (nx, ny) = (ty, -tx);
                let side = nx * p[0] + ny * p[1];
                let planes = vec![
                    [nx, ny, side],
                    [-nx, -ny, -side],
                    [tx, ty, tx * q[0] + ty * q[1]],
                    [-tx, -ty, -(tx * p[0] + ty * p[1])],
                ];
                (Degeneracy::Segment, planes)
            }
            _ => (Degeneracy::None, hull::polygon_halfplanes(&corners)),
        };
        Self {
            transformer_id: transformer_id.to_string(),
            vertices,
            halfplanes,
            degeneracy,
            status,
            v0,
            i0,
        }
    }

    pub fn corners(&self) -> Vec<[f64; 2]> {
        self.vertices.iter().map(|v| [v.dp_kw, v.dq_kvar]).collect()
    }

    pub fn contains(&self, dp_kw: f64, dq_kvar: f64) -> Containment {
        let mut worst: Option<(usize, f64)> = None;
        for (k, h) in self.halfplanes.iter().enumerate() {
            let excess = h[0] * dp_kw + h[1] * dq_kvar - h[2];
            if excess > CONTAINS_TOL && worst.is_none_or(|(_, w)| excess > w) {
                worst = Some((k, excess));
            }
        }
        match worst {
            None => Containment::Inside,
            Some((halfplane, excess)) => Containment::Outside { halfplane, excess },
        }
    }

    pub fn area(&self) -> f64 {
        hull::polygon_area(&self.corners())
    }

    /// Largest active-power delta, in either direction, the area offers.
    pub fn p_reach_kw(&self) -> f64 {
        self.vertices.iter().map(|v| v.dp_kw.abs()).fold(0.0, f64::max)
    }

    /// DER deltas realising an aggregate point of the area.
    ///
    /// The point is written as a convex combination of `(0, 0)` and two
    /// consecutive vertices (a triangle fan from the origin) and the stored
    /// setpoints are blended with the same weights. Points marginally outside
    /// are projected onto the nearest fan triangle.
    pub fn setpoints_for(&self, dp_kw: f64, dq_kvar: f64) -> Vec<DerSetpoint> {
        let zero = || -> Vec<DerSetpoint> {
            self.vertices
                .first()
                .map(|v| {
                    v.setpoints
                        .iter()
                        .map(|s| DerSetpoint {
                            der_id: s.der_id.clone(),
                            dp_kw: 0.0,
                            dq_kvar: 0.0,
                        })
                        .collect()
                })
                .unwrap_or_default()
        };
        let blend = |weights: &[(usize, f64)]| -> Vec<DerSetpoint> {
            let mut out = zero();
            for &(k, w) in weights {
                for (o, s) in out.iter_mut().zip(&self.vertices[k].setpoints) {
                    o.dp_kw += w * s.dp_kw;
                    o.dq_kvar += w * s.dq_kvar;
                }
            }
            out
        };
        let n = self.vertices.len();
        let c = self.corners();
        let p = [dp_kw, dq_kvar];
        match n {
            0 => Vec::new(),
            1 => blend(&[(0, 1.0)]),
            2 => {
                // Segment endpoints carry their own setpoints; interpolate between them.
                let (a, b) = (c[0], c[1]);
                let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
                let t = (((p[0] - a[0]) * dx + (p[1] - a[1]) * dy) / (dx * dx + dy * dy)).clamp(0.0, 1.0);
                blend(&[(0, 1.0 - t), (1, t)])
            }
            _ => {
                let mut best: Option<(f64, [(usize, f64); 2])> = None;
                for k in 0..n {
                    let (a, b) = (c[k], c[(k + 1) % n]);
                    let det = a[0] * b[1] - a[1] * b[0];
                    if det.abs() <= CONTAINS_TOL * (1.0 + a[0].abs() + a[1].abs()) * (1.0 + b[0].abs() + b[1].abs()) {
                        continue;
                    }
                    let la = (p[0] * b[1] - p[1] * b[0]) / det;
                    let lb = (a[0] * p[1] - a[1] * p[0]) / det;
                    let score = la.min(lb).min(1.0 - la - lb);
                    if best.is_none_or(|(s, _)| score > s) {
                        best = Some((score, [(k, la), ((k + 1) % n, lb)]));
                    }
                }
                match best {
                    Some((_, [(ka, la), (kb, lb)])) => {
                        let (mut la, mut lb) = (la.max(0.0), lb.max(0.0));
                        if la + lb > 1.0 {
                            let s = la + lb;
                            la /= s;
                            lb /= s;
                        }
                        blend(&[(ka, la), (kb, lb)])
                    }
                    None => zero(),
                }
            }
        }
    }

    pub fn to_json(&self) -> serde_json::Value {
        let doc = FlexAreaJson {
            transformer_id: self.transformer_id.clone(),
            vertices: self.corners(),
            halfplanes: self.halfplanes.clone(),
            degeneracy: self.degeneracy,
            status: self.status,
            setpoints: self.vertices.iter().map(|v| v.setpoints.clone()).collect(),
        };
        serde_json::to_value(doc).expect("flex area is always serialisable")
    }
}

/// Sweeps `directions` through [`lv_opf`] and takes the convex hull of the
/// optima together with `(0, 0)`.
///
/// An operating point that already violates a limit yields the single point
/// `(0, 0)` flagged [`FlexStatus::PreexistingViolation`] so the MV stage can
/// still run.
pub fn build_flex_area(
    transformer_id: &str,
    matrix: &SensitivityMatrix,
    op: &OperatingPoint,
    limits: &DerFlexLimits,
    directions: &[FlexDirection],
) -> Result<FlexArea, LvFlexError> {
    limits.validate()?;
    let rows = network_rows(matrix, op, limits)?;
    if check_operating_point(&rows).is_err() {
        return Ok(FlexArea::no_flexibility(transformer_id, FlexStatus::PreexistingViolation, limits));
    }
    let mut points = vec![FlexVertex::origin(limits)];
    for &d in directions {
        points.push(vertex_from_rows(&rows, limits, d)?);
    }
    Ok(FlexArea::from_points(
        transformer_id,
        points,
        FlexStatus::Ok,
        op.v0.clone(),
        op.i0.clone(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{Bus, EdgeKind, VoltageLevel};
    use crate::sensitivity::analytical_sensitivities;
    use num_complex::Complex64;

    fn bus(id: &str) -> Bus {
        Bus {
            id: id.into(),
            level: VoltageLevel::Lv,
            v_min: 0.9,
            v_max: 1.1,
            transformer: None,
        }
    }

    fn pv(id: &str, bus: &str, rating: f64, pf_min: f64) -> Der {
        Der {
            id: id.into(),
            bus: bus.into(),
            kind: DerKind::Pv,
            p_rating_kw: rating,
            controllable: true,
            curtailment_fraction: 0.1,
            pf_min,
        }
    }

    fn two_bus(r: f64) -> RadialGrid {
        RadialGrid::new(
            vec![bus("r"), bus("a")],
            vec![("ra".into(), "r".into(), "a".into(), r, r / 2.0, 1.0, EdgeKind::LvLine)],
            "r",
        )
        .unwrap()
    }

    fn setup(grid: &RadialGrid, inj: &[Complex64]) -> (SensitivityMatrix, OperatingPoint) {
        let k = analytical_sensitivities(grid, inj, 1.0).unwrap();
        let op = OperatingPoint::new(grid, &k, 1000.0).unwrap();
        (k, op)
    }

    #[test]
    fn no_ders_gives_origin_everywhere() {
        let grid = two_bus(0.01);
        let (k, op) = setup(&grid, &[Complex64::default(); 2]);
        let limits = DerFlexLimits::default();
        for d in FlexDirection::eight() {
            let v = lv_opf(&k, &op, &limits, d).unwrap();
            assert_eq!((v.dp_kw, v.dq_kvar), (0.0, 0.0));
        }
        let area = build_flex_area("T", &k, &op, &limits, &FlexDirection::eight()).unwrap();
        assert_eq!(area.degeneracy, Degeneracy::Point);
        assert_eq!(area.corners(), vec![[0.0, 0.0]]);
    }

    #[test]
    fn single_pv_curtails_ten_percent() {
        let grid = two_bus(0.01);
        let (k, op) = setup(&grid, &[Complex64::default(), Complex64::new(0.1, 0.0)]);
        let limits = DerFlexLimits::from_ders(&[pv("pv", "a", 100.0, 1.0)], &[100.0]);
        let v = lv_opf(&k, &op, &limits, FlexDirection::new(-1.0, 0.0).unwrap()).unwrap();
        assert!((v.dp_kw + 10.0).abs() < 1e-9);
        let area = build_flex_area("T", &k, &op, &limits, &FlexDirection::eight()).unwrap();
        assert_eq!(area.degeneracy, Degeneracy::Segment);
        let mut xs: Vec<f64> = area.corners().iter().map(|c| c[0]).collect();
        xs.sort_by(f64::total_cmp);
        assert!((xs[0] + 10.0).abs() < 1e-9 && xs[1].abs() < 1e-12);
        assert!(area.contains(-5.0, 0.0).is_inside());
        assert!(!area.contains(-5.0, 0.1).is_inside());
        assert!(!area.contains(-10.1, 0.0).is_inside());
    }

    #[test]
    fn preexisting_violation_is_flagged() {
        let grid = two_bus(0.5);
        // Heavy load pulls bus a below 0.9.
        let (k, op) = setup(&grid, &[Complex64::default(), Complex64::new(-0.3, 0.0)]);
        assert!(op.v0[1] < 0.9);
        let limits = DerFlexLimits::from_ders(&[pv("pv", "a", 100.0, 0.9)], &[50.0]);
        let err = lv_opf(&k, &op, &limits, FlexDirection::new(1.0, 0.0).unwrap()).unwrap_err();
        assert!(matches!(err, LvFlexError::InfeasibleOperatingPoint { .. }));
        let area = build_flex_area("T", &k, &op, &limits, &FlexDirection::eight()).unwrap();
        assert_eq!(area.status, FlexStatus::PreexistingViolation);
        assert_eq!(area.degeneracy, Degeneracy::Point);
    }

    #[test]
    fn binding_voltage_limit_cuts_the_box() {
        // PV export close to v_max: absorbing Q is free, injecting Q is capped.
        let grid = two_bus(0.4);
        let (k, op) = setup(&grid, &[Complex64::default(), Complex64::new(0.2, 0.0)]);
        let limits = DerFlexLimits::from_ders(&[pv("pv", "a", 200.0, 0.6)], &[200.0]);
        let area = build_flex_area("T", &k, &op, &limits, &FlexDirection::eight()).unwrap();
        assert_eq!(area.degeneracy, Degeneracy::None);
        let q_max = area.corners().iter().map(|c| c[1]).fold(f64::MIN, f64::max);
        let q_min = area.corners().iter().map(|c| c[1]).fold(f64::MAX, f64::min);
        let reach = 200.0 * 0.6f64.acos().tan();
        assert!((q_min + reach).abs() < 1e-6, "{:?}", area.corners());
        assert!(q_max < reach - 1.0);
        for c in area.corners() {
            assert!(area.contains(c[0], c[1]).is_inside());
        }
        assert!(area.contains(0.0, 0.0).is_inside());
    }

    #[test]
    fn setpoints_reproduce_aggregate_point() {
        let grid = RadialGrid::new(
            vec![bus("r"), bus("a"), bus("b")],
            vec![
                ("ra".into(), "r".into(), "a".into(), 0.05, 0.02, 1.0, EdgeKind::LvLine),
                ("ab".into(), "a".into(), "b".into(), 0.05, 0.02, 1.0, EdgeKind::LvLine),
            ],
            "r",
        )
        .unwrap();
        let inj = [Complex64::default(), Complex64::new(0.02, 0.0), Complex64::new(0.03, 0.0)];
        let (k, op) = setup(&grid, &inj);
        let limits = DerFlexLimits::from_ders(&[pv("p1", "a", 20.0, 0.9), pv("p2", "b", 30.0, 0.9)], &[20.0, 30.0]);
        let area = build_flex_area("T", &k, &op, &limits, &FlexDirection::eight()).unwrap();
        let target = hull::centroid(&area.corners());
        let sp = area.setpoints_for(target[0], target[1]);
        let (sp_p, sp_q): (f64, f64) = sp.iter().fold((0.0, 0.0), |(p, q), s| (p + s.dp_kw, q + s.dq_kvar));
        assert!((sp_p - target[0]).abs() < 1e-9 && (sp_q - target[1]).abs() < 1e-9);
    }

    #[test]
    fn json_contract_fields() {
        let grid = two_bus(0.01);
        let (k, op) = setup(&grid, &[Complex64::default(), Complex64::new(0.1, 0.0)]);
        let limits = DerFlexLimits::from_ders(&[pv("pv", "a", 100.0, 0.9)], &[100.0]);
        let area = build_flex_area("T7", &k, &op, &limits, &FlexDirection::eight()).unwrap();
        let json = area.to_json();
        assert_eq!(json["transformer_id"], "T7");
        assert_eq!(json["vertices"].as_array().unwrap().len(), area.vertices.len());
        assert_eq!(json["halfplanes"][0].as_array().unwrap().len(), 3);
    }

    #[test]
    fn angular_eight_matches_sign_set() {
        assert_eq!(FlexDirection::angular(8), FlexDirection::eight());
        let four = FlexDirection::angular(4);
        assert_eq!((four[1].alpha, four[1].beta), (0.0, 1.0));
        assert!(FlexDirection::new(0.0, 0.0).is_err());
    }
}
