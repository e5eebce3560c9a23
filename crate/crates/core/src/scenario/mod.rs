//! Base / Monitoring / Control evaluation over a day of 10-minute steps,
//! for the current loading and a future one with extra load per LV grid.
//!
//! Every case decides its slack voltage (and, for Control, LV flexibility
//! use) from what it believes about the grid, and is then scored by an exact
//! power flow of the true injections under those decisions. Losses and
//! violations are counted on the MV grid, the part the DSO's OPF models.

mod config;

use std::collections::BTreeMap;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Serialize, Serializer};
use thiserror::Error;

use crate::grid::{DerKind, EdgeKind, GridError, InjectionProfile, Network};
use crate::lvflex::{build_flex_area, DerFlexLimits, FlexArea, FlexDirection, FlexStatus, LvFlexError, OperatingPoint};
use crate::mvopf::{evaluate_penalties, solve_mv_opf, ControlledBus, OpfError, OpfProblem, OpfSolution};
use crate::powerflow::{solve_pf, PfError, PfSolution};
use crate::sensitivity::{estimate_sensitivities, excitation_window, ExcitationSpec, SensitivityError};

pub use config::{CaseKind, LoadingScenario, ScenarioConfig};

/// Violation cost below which a hosting-capacity probe counts as secure, CHF.
/// Absorbs solver round-off at limits the OPF drives exactly to the bound.
pub const HOSTING_CHF_TOL: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("invalid scenario configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error("profiles cover {available} steps, the horizon needs {required}")]
    ShortProfiles { available: usize, required: usize },
    #[error("feeder '{0}' has zero total transformer rating")]
    ZeroFeederRating(String),
    #[error("{case} case at {timestamp}")]
    AtTimestep {
        case: &'static str,
        timestamp: String,
        source: StageError,
    },
}

#[derive(Debug, Error)]
pub enum StageError {
    #[error("power flow")]
    PowerFlow(#[from] PfError),
    #[error("sensitivity estimation for '{grid}'")]
    Sensitivity { grid: String, source: SensitivityError },
    #[error("LV flexibility for '{grid}'")]
    LvFlex { grid: String, source: LvFlexError },
    #[error("MV stage")]
    Opf(#[from] OpfError),
}

/// A KPI that only some cases define.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Kpi {
    Undefined,
    Value(f64),
}

impl Kpi {
    pub fn value(self) -> Option<f64> {
        match self {
            Kpi::Undefined => None,
            Kpi::Value(v) => Some(v),
        }
    }
}

impl Serialize for Kpi {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Kpi::Undefined => s.serialize_str("undefined"),
            Kpi::Value(v) => s.serialize_f64(*v),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FlexSummary {
    pub transformer: String,
    pub area_kw2: f64,
    pub p_reach_kw: f64,
    pub status: FlexStatus,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TimestepRecord {
    pub timestamp: String,
    pub losses_kwh: f64,
    pub violation_chf: f64,
    /// Exchange with the upstream grid in the scored state, kW and kvar.
    pub slack_p_kw: f64,
    pub slack_q_kvar: f64,
    pub slack_v: f64,
    pub opf_objective: f64,
    pub max_soc_gap: f64,
    pub min_v_mv: f64,
    pub max_v_mv: f64,
    /// Control only.
    pub flex: Vec<FlexSummary>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Totals {
    pub losses_kwh: f64,
    pub violation_chf: f64,
    pub flex_mv_lv_kw: Kpi,
    pub hosting_capacity_kwp: Kpi,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScenarioReport {
    pub case: CaseKind,
    pub scenario: LoadingScenario,
    pub seed: u64,
    pub step_minutes: f64,
    pub totals: Totals,
    pub timesteps: Vec<TimestepRecord>,
}

impl ScenarioReport {
    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("report is always serialisable")
    }

    /// Per-step table: `timestamp,case,losses_kwh,violation_chf,slack_p,slack_q`.
    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["timestamp", "case", "losses_kwh", "violation_chf", "slack_p", "slack_q"])?;
        for r in &self.timesteps {
            w.write_record([
                r.timestamp.clone(),
                self.case.name().to_string(),
                r.losses_kwh.to_string(),
                r.violation_chf.to_string(),
                r.slack_p_kw.to_string(),
                r.slack_q_kvar.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Id of the slack child heading the feeder that supplies each transformer.
/// A transformer on the slack bus itself forms a feeder of its own.
pub fn feeder_of(network: &Network) -> BTreeMap<String, String> {
    let mv = &network.mv;
    let topo = mv.topology();
    network
        .transformers()
        .map(|t| {
            let bus = mv.bus_index(&t.mv_bus).expect("transformer bus checked at load");
            let path = topo.path_from_root(bus);
            let head = path.get(1).copied().unwrap_or(bus);
            (t.id.clone(), mv.buses()[head].id.clone())
        })
        .collect()
}

/// Splits each feeder's series over its transformers in proportion to their
/// kVA ratings. Series are complex kW + j kvar, one entry per step.
pub fn allocate_loads_by_rating(
    network: &Network,
    feeder_profiles: &BTreeMap<String, Vec<Complex64>>,
) -> Result<BTreeMap<String, Vec<Complex64>>, ScenarioError> {
    let feeders = feeder_of(network);
    let mut total_kva: BTreeMap<&str, f64> = BTreeMap::new();
    for t in network.transformers() {
        *total_kva.entry(feeders[&t.id].as_str()).or_default() += t.kva_rating;
    }
    let mut out = BTreeMap::new();
    for t in network.transformers() {
        let f = feeders[&t.id].as_str();
        let series = feeder_profiles
            .get(f)
            .ok_or_else(|| ScenarioError::Config(format!("no profile for feeder '{f}' (transformer '{}')", t.id)))?;
        let total = total_kva[f];
        if !(total > 0.0) {
            return Err(ScenarioError::ZeroFeederRating(f.to_string()));
        }
        let share = t.kva_rating / total;
        out.insert(t.id.clone(), series.iter().map(|s| s * share).collect());
    }
    Ok(out)
}

/// Constant extra load per LV bus for the future scenario: `future_load_kw`
/// per LV grid, spread over buses in proportion to their mean load.
pub fn future_load_adders(network: &Network, profiles: &InjectionProfile, steps: usize, per_grid_kw: f64) -> BTreeMap<String, f64> {
    let mut out = BTreeMap::new();
    for lv in &network.lv_grids {
        let means: Vec<(String, f64)> = lv
            .grid
            .buses()
            .iter()
            .map(|b| {
                let mean = (0..steps).map(|t| profiles.get(t, &b.id).p_load_kw).sum::<f64>() / steps as f64;
                (b.id.clone(), mean)
            })
            .filter(|(_, m)| *m > 0.0)
            .collect();
        let total: f64 = means.iter().map(|(_, m)| m).sum();
        if total > 0.0 {
            for (bus, m) in means {
                out.insert(bus, per_grid_kw * m / total);
            }
        } else {
            // No existing load: put it all on the secondary bus.
            out.insert(lv.transformer.lv_bus.clone(), per_grid_kw);
        }
    }
    out
}

/// Shared inputs of every step of one run. Also the entry point for
/// inspecting single steps.
pub struct Evaluator<'a> {
    network: &'a Network,
    profiles: &'a InjectionProfile,
    config: &'a ScenarioConfig,
    adders: BTreeMap<String, f64>,
    /// Base case belief per transformer, kW + j kvar per step.
    allocation: BTreeMap<String, Vec<Complex64>>,
    directions: Vec<FlexDirection>,
}

/// Outcome of one decided and scored step.
pub struct StepOutcome {
    pub record: TimestepRecord,
    pub opf: OpfSolution,
    /// MV injections the OPF was given, pu.
    pub belief: Vec<Complex64>,
    pub areas: Vec<FlexArea>,
}

impl<'a> Evaluator<'a> {
    pub fn new(network: &'a Network, profiles: &'a InjectionProfile, config: &'a ScenarioConfig) -> Result<Self, ScenarioError> {
        let steps = config.steps();
        if profiles.len() < steps {
            return Err(ScenarioError::ShortProfiles {
                available: profiles.len(),
                required: steps,
            });
        }
        let adders = match config.scenario {
            LoadingScenario::Current => BTreeMap::new(),
            LoadingScenario::Future => future_load_adders(network, profiles, steps, config.future_load_kw),
        };
        let mut ctx = Self {
            network,
            profiles,
            config,
            adders,
            allocation: BTreeMap::new(),
            directions: FlexDirection::angular(config.flex_directions),
        };
        if config.case == CaseKind::Base {
            let feeders = ctx.feeder_profiles()?;
            ctx.allocation = allocate_loads_by_rating(network, &feeders)?;
        }
        Ok(ctx)
    }

    fn timestamp(&self, t: usize) -> String {
        self.profiles.timestamps[t].to_rfc3339()
    }

    fn at(&self, t: usize, source: impl Into<StageError>) -> ScenarioError {
        ScenarioError::AtTimestep {
            case: self.config.case.name(),
            timestamp: self.timestamp(t),
            source: source.into(),
        }
    }

    /// True injections of the merged grid, pu, with PV generation scaled.
    fn truth(&self, t: usize, future: bool, pv_scale: f64) -> Vec<Complex64> {
        let s_base = self.network.s_base_kva;
        let pv_buses = self.pv_buses();
        self.network
            .merged()
            .buses()
            .iter()
            .map(|b| {
                let mut v = self.profiles.get(t, &b.id);
                if pv_buses.contains(&b.id.as_str()) {
                    v.p_gen_kw *= pv_scale;
                }
                if future {
                    v.p_load_kw += self.adders.get(&b.id).copied().unwrap_or(0.0);
                }
                Complex64::new(v.net_kw() / s_base, v.net_kvar() / s_base)
            })
            .collect()
    }

    fn pv_buses(&self) -> Vec<&str> {
        self.network
            .ders()
            .filter(|d| d.kind == DerKind::Pv)
            .map(|d| d.bus.as_str())
            .collect()
    }

    /// Historical per-feeder exchange: the as-found transformer loading of the
    /// current scenario summed per feeder. The Base case keeps using these
    /// even when the grid's real loading has moved on.
    fn feeder_profiles(&self) -> Result<BTreeMap<String, Vec<Complex64>>, ScenarioError> {
        let feeders = feeder_of(self.network);
        let steps = self.config.steps();
        let per_step: Vec<BTreeMap<String, Complex64>> = (0..steps)
            .map(|t| {
                let truth = self.truth(t, false, 1.0);
                let pf = solve_pf(self.network.merged(), &truth, self.config.measured_slack_v).map_err(|e| self.at(t, e))?;
                let mut sums: BTreeMap<String, Complex64> = BTreeMap::new();
                for (tr, s) in self.transformer_exchange(&pf) {
                    *sums.entry(feeders[&tr].clone()).or_default() += s * self.network.s_base_kva;
                }
                Ok(sums)
            })
            .collect::<Result<_, ScenarioError>>()?;
        let mut out: BTreeMap<String, Vec<Complex64>> = BTreeMap::new();
        for f in feeders.values() {
            out.insert(f.clone(), per_step.iter().map(|m| m.get(f).copied().unwrap_or_default()).collect());
        }
        Ok(out)
    }

    /// Net injection each transformer presents to its MV bus, pu.
    fn transformer_exchange(&self, pf: &PfSolution) -> Vec<(String, Complex64)> {
        let merged = self.network.merged();
        merged
            .branches()
            .iter()
            .enumerate()
            .filter(|(_, b)| b.kind == EdgeKind::Transformer)
            .map(|(e, b)| (b.id.clone(), -Complex64::new(pf.p_send[e], pf.q_send[e])))
            .collect()
    }

    fn der_outputs(&self, t: usize, lv: &crate::grid::LvGrid, pv_scale: f64) -> Vec<f64> {
        lv.ders
            .iter()
            .map(|d| {
                let peers: f64 = lv
                    .ders
                    .iter()
                    .filter(|o| o.bus == d.bus && o.kind == d.kind)
                    .map(|o| o.p_rating_kw)
                    .sum();
                let share = if peers > 0.0 { d.p_rating_kw / peers } else { 0.0 };
                let inj = self.profiles.get(t, &d.bus);
                match d.kind {
                    DerKind::Pv => inj.p_gen_kw * pv_scale * share,
                    DerKind::Load => inj.p_load_kw * share,
                    DerKind::Storage => d.p_rating_kw,
                }
            })
            .collect()
    }

    /// Flexibility area of LV grid `grid_id` at step `t` as the control case builds it.
    pub fn flex_area_at(&self, t: usize, grid_id: &str) -> Result<FlexArea, ScenarioError> {
        let g = self
            .network
            .lv_grids
            .iter()
            .position(|g| g.id == grid_id)
            .ok_or_else(|| ScenarioError::Config(format!("unknown LV grid '{grid_id}'")))?;
        if t >= self.config.steps() {
            return Err(ScenarioError::Config(format!("timestep {t} outside the horizon")));
        }
        let truth = self.truth(t, self.config.scenario == LoadingScenario::Future, 1.0);
        let as_found = solve_pf(self.network.merged(), &truth, self.config.measured_slack_v).map_err(|e| self.at(t, e))?;
        self.flex_area(t, g, &truth, &as_found, 1.0).map_err(|e| self.at(t, e))
    }

    /// As-found injections (pu) of LV grid `grid_id` at step `t` and the
    /// voltage magnitude at its transformer secondary.
    pub fn lv_operating_point(&self, t: usize, grid_id: &str) -> Result<(Vec<Complex64>, f64), ScenarioError> {
        let lv = self
            .network
            .lv_grid(grid_id)
            .ok_or_else(|| ScenarioError::Config(format!("unknown LV grid '{grid_id}'")))?;
        let merged = self.network.merged();
        let truth = self.true_injections(t);
        let pf = solve_pf(merged, &truth, self.config.measured_slack_v).map_err(|e| self.at(t, e))?;
        let operating = lv
            .grid
            .buses()
            .iter()
            .map(|b| truth[merged.bus_index(&b.id).expect("LV bus in merged grid")])
            .collect();
        let root_v = pf.voltage[merged.bus_index(&lv.transformer.lv_bus).expect("LV root in merged grid")].norm();
        Ok((operating, root_v))
    }

    /// Available active power of each DER of `grid_id` at step `t`, kW.
    pub fn der_outputs_at(&self, t: usize, grid_id: &str) -> Option<Vec<f64>> {
        self.network.lv_grid(grid_id).map(|lv| self.der_outputs(t, lv, 1.0))
    }

    /// True merged-grid injections of step `t`, pu.
    pub fn true_injections(&self, t: usize) -> Vec<Complex64> {
        self.truth(t, self.config.scenario == LoadingScenario::Future, 1.0)
    }

    fn flex_area(
        &self,
        t: usize,
        g: usize,
        truth: &[Complex64],
        as_found: &PfSolution,
        pv_scale: f64,
    ) -> Result<FlexArea, StageError> {
        let lv = &self.network.lv_grids[g];
        let merged = self.network.merged();
        let operating: Vec<Complex64> = lv
            .grid
            .buses()
            .iter()
            .map(|b| truth[merged.bus_index(&b.id).expect("LV bus in merged grid")])
            .collect();
        let root_v = as_found.voltage[merged.bus_index(&lv.transformer.lv_bus).expect("LV root in merged grid")].norm();
        let spec = ExcitationSpec {
            samples: self.config.window_samples,
            amplitude: self.config.excitation_pu,
            noise_sigma: self.config.noise_sigma,
            seed: mix_seed(self.config.seed, t as u64, g as u64),
        };
        let wrap = |source| StageError::Sensitivity {
            grid: lv.id.clone(),
            source,
        };
        let window = excitation_window(&lv.grid, &operating, root_v, spec).map_err(wrap)?;
        let estimate = estimate_sensitivities(&lv.grid, &window).map_err(wrap)?;
        let flex_err = |source| StageError::LvFlex {
            grid: lv.id.clone(),
            source,
        };
        let op = OperatingPoint::new(&lv.grid, &estimate.matrix, self.network.s_base_kva).map_err(flex_err)?;
        let limits = DerFlexLimits::from_ders(&lv.ders, &self.der_outputs(t, lv, pv_scale));
        build_flex_area(&lv.id, &estimate.matrix, &op, &limits, &self.directions).map_err(flex_err)
    }

    /// Decides and scores step `t` with PV generation scaled by `pv_scale`.
    pub fn step(&self, t: usize, pv_scale: f64) -> Result<StepOutcome, ScenarioError> {
        self.step_inner(t, pv_scale).map_err(|e| self.at(t, e))
    }

    fn step_inner(&self, t: usize, pv_scale: f64) -> Result<StepOutcome, StageError> {
        let network = self.network;
        let merged = network.merged();
        let mv = &network.mv;
        let s_base = network.s_base_kva;
        let future = self.config.scenario == LoadingScenario::Future;
        let truth = self.truth(t, future, pv_scale);
        let as_found = solve_pf(merged, &truth, self.config.measured_slack_v)?;

        // What the DSO believes each MV bus injects.
        let mut belief: Vec<Complex64> = mv
            .buses()
            .iter()
            .map(|b| truth[merged.bus_index(&b.id).expect("MV bus in merged grid")])
            .collect();
        let exchange = self.transformer_exchange(&as_found);
        for t_link in network.transformers() {
            let i = mv.bus_index(&t_link.mv_bus).expect("transformer bus checked at load");
            belief[i] += match self.config.case {
                CaseKind::Base => self.allocation[&t_link.id][t] / s_base,
                CaseKind::Monitoring | CaseKind::Control => {
                    exchange.iter().find(|(id, _)| *id == t_link.id).expect("transformer edge").1
                }
            };
        }

        let mut controls = Vec::new();
        let mut flex = Vec::new();
        let mut areas = Vec::new();
        if self.config.case == CaseKind::Control {
            for g in 0..network.lv_grids.len() {
                let area = self.flex_area(t, g, &truth, &as_found, pv_scale)?;
                flex.push(FlexSummary {
                    transformer: area.transformer_id.clone(),
                    area_kw2: area.area(),
                    p_reach_kw: area.p_reach_kw(),
                    status: area.status,
                });
                let idle = area.vertices.len() == 1 && area.corners()[0] == [0.0, 0.0];
                areas.push(area.clone());
                if !idle {
                    controls.push(ControlledBus {
                        bus: network.lv_grids[g].transformer.mv_bus.clone(),
                        area,
                    });
                }
            }
        }

        let problem = OpfProblem {
            grid: mv,
            s_base_kva: s_base,
            injections: belief,
            controls,
            weights: self.config.weights(),
            slack_range: self.config.slack_range(),
            baseline: as_found.slack_injection,
        };
        let opf = solve_mv_opf(&problem)?;

        // Score the decision against the true grid.
        let mut scored = truth;
        for (ctl, action) in problem.controls.iter().zip(&opf.controls) {
            let lv = network.lv_grid(&ctl.area.transformer_id).expect("area names its grid");
            for sp in ctl.area.setpoints_for(action.dp_kw, action.dq_kvar) {
                let der = lv.ders.iter().find(|d| d.id == sp.der_id).expect("setpoint names a DER");
                let i = merged.bus_index(&der.bus).expect("DER bus in merged grid");
                scored[i] += Complex64::new(sp.dp_kw, sp.dq_kvar) / s_base;
            }
        }
        let pf = solve_pf(merged, &scored, opf.slack_voltage())?;

        let v_sq = pf.v_sq();
        let l_sq = pf.l_sq();
        let v_mv: Vec<f64> = mv.buses().iter().map(|b| v_sq[merged.bus_index(&b.id).expect("MV bus")]).collect();
        let l_mv: Vec<f64> = mv
            .branches()
            .iter()
            .map(|b| {
                let e = merged.branches().iter().position(|m| m.id == b.id).expect("MV branch in merged grid");
                l_sq[e]
            })
            .collect();
        let penalties = evaluate_penalties(mv, &v_mv, &l_mv);
        let losses_kwh = pf.losses_pu_of(merged, &[EdgeKind::MvLine]) * s_base * self.config.step_minutes / 60.0;
        let v_mag: Vec<f64> = v_mv.iter().map(|v| v.sqrt()).collect();

        Ok(StepOutcome {
            record: TimestepRecord {
                timestamp: self.timestamp(t),
                losses_kwh,
                violation_chf: penalties.total_chf,
                slack_p_kw: pf.slack_injection.re * s_base,
                slack_q_kvar: pf.slack_injection.im * s_base,
                slack_v: opf.slack_voltage(),
                opf_objective: opf.objective.total,
                max_soc_gap: crate::mvopf::check_soc_exactness(&opf),
                min_v_mv: v_mag.iter().cloned().fold(f64::INFINITY, f64::min),
                max_v_mv: v_mag.iter().cloned().fold(0.0, f64::max),
                flex,
            },
            opf,
            belief: problem.injections,
            areas,
        })
    }

    /// Step with the largest total PV generation.
    pub fn worst_pv_step(&self) -> usize {
        let pv = self.pv_buses();
        (0..self.config.steps())
            .map(|t| (t, pv.iter().map(|b| self.profiles.get(t, b).p_gen_kw).sum::<f64>()))
            .fold((0, f64::MIN), |best, cur| if cur.1 > best.1 { cur } else { best })
            .0
    }

    fn secure_at(&self, t: usize, pv_scale: f64) -> bool {
        matches!(self.step(t, pv_scale), Ok(o) if o.record.violation_chf <= HOSTING_CHF_TOL)
    }

    fn hosting_capacity(&self) -> Kpi {
        if self.config.case != CaseKind::Control {
            return Kpi::Undefined;
        }
        let installed = self.network.installed_pv_kwp();
        if installed <= 0.0 {
            return Kpi::Undefined;
        }
        let t = self.worst_pv_step();
        let secure = |kwp: f64| self.secure_at(t, kwp / installed);
        let (mut lo, mut hi) = if secure(installed) {
            let mut hi = 2.0 * installed;
            while secure(hi) {
                if hi > 64.0 * installed {
                    return Kpi::Value(hi);
                }
                hi *= 2.0;
            }
            (hi / 2.0, hi)
        } else {
            (0.0, installed)
        };
        while hi - lo > 1.0 {
            let mid = 0.5 * (lo + hi);
            if secure(mid) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Kpi::Value(lo.floor())
    }
}

fn mix_seed(seed: u64, t: u64, g: u64) -> u64 {
    // splitmix64 finaliser over the packed inputs.
    let mut z = seed ^ t.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ g.wrapping_mul(0xD1B5_4A32_D192_ED03);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Aggregates of a complete horizon.
pub fn compute_kpis(records: &[TimestepRecord], case: CaseKind, hosting: Kpi) -> Totals {
    let flex = if case == CaseKind::Control {
        Kpi::Value(
            records
                .iter()
                .map(|r| r.flex.iter().map(|f| f.p_reach_kw).sum::<f64>())
                .fold(0.0, f64::max),
        )
    } else {
        Kpi::Undefined
    };
    Totals {
        losses_kwh: records.iter().map(|r| r.losses_kwh).sum(),
        violation_chf: records.iter().map(|r| r.violation_chf).sum(),
        flex_mv_lv_kw: flex,
        hosting_capacity_kwp: hosting,
    }
}

/// Runs one case over the configured horizon using `jobs` worker threads.
/// The report does not depend on `jobs`.
pub fn run_case(
    config: &ScenarioConfig,
    network: &Network,
    profiles: &InjectionProfile,
    jobs: usize,
) -> Result<ScenarioReport, ScenarioError> {
    config.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| ScenarioError::Config(format!("worker pool: {e}")))?;
    pool.install(|| {
        let ctx = Evaluator::new(network, profiles, config)?;
        let records: Vec<TimestepRecord> = (0..config.steps())
            .into_par_iter()
            .map(|t| ctx.step(t, 1.0).map(|o| o.record))
            .collect::<Result<_, _>>()?;
        let hosting = if config.hosting_capacity {
            ctx.hosting_capacity()
        } else {
            Kpi::Undefined
        };
        Ok(ScenarioReport {
            case: config.case,
            scenario: config.scenario,
            seed: config.seed,
            step_minutes: config.step_minutes,
            totals: compute_kpis(&records, config.case, hosting),
            timesteps: records,
        })
    })
}

/// Violation cost of the control pipeline at the worst PV step with PV
/// scaled to `kwp` in total; used to check the hosting-capacity bracket.
pub fn control_violation_at(
    config: &ScenarioConfig,
    network: &Network,
    profiles: &InjectionProfile,
    kwp: f64,
) -> Result<f64, ScenarioError> {
    let mut cfg = config.clone();
    cfg.case = CaseKind::Control;
    let ctx = Evaluator::new(network, profiles, &cfg)?;
    let t = ctx.worst_pv_step();
    Ok(ctx.step(t, kwp / network.installed_pv_kwp())?.record.violation_chf)
}
