//! Network data model shared by every stage of the pipeline.
//!
//! A [`Network`] holds the modelled MV grid and one independent sub-network per
//! MV/LV transformer. All electrical quantities are stored in per-unit on the
//! system power base `s_base_kva` and the voltage base of their level.
//!
//! Sign convention used throughout the crate: generation is a positive
//! injection, consumption a positive withdrawal, and the net injection of a bus
//! is `p_gen - p_load`.

mod io;
mod per_unit;
mod profile;
mod topology;

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use io::{
    BranchFile, BusFile, DerFile, LvGridFile, MvFile, NetworkFile, TransformerFile,
    DEFAULT_V_MAX, DEFAULT_V_MIN,
};
pub use per_unit::PerUnitBase;
pub use profile::{BusInjection, InjectionProfile, PROFILE_STEP_MINUTES};
pub use topology::{validate_radial, Topology, TopologyReport};

#[derive(Debug, Error)]
pub enum GridError {
    #[error("cannot read {path}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}:{column}: {message}")]
    Parse {
        path: String,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("invalid {element} '{id}': {reason}")]
    Invariant {
        element: &'static str,
        id: String,
        reason: String,
    },
    #[error("branch '{edge}' closes a cycle; the grid is not radial")]
    Cycle { edge: String },
    #[error("buses not reachable from the slack: {}", unreachable.join(", "))]
    Disconnected { unreachable: Vec<String> },
    #[error("per-unit base must be positive and finite, got {0}")]
    InvalidBase(f64),
}

impl GridError {
    pub(crate) fn invariant(element: &'static str, id: &str, reason: impl Into<String>) -> Self {
        Self::Invariant {
            element,
            id: id.to_string(),
            reason: reason.into(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VoltageLevel {
    Mv,
    Lv,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Bus {
    pub id: String,
    pub level: VoltageLevel,
    /// Per-unit magnitude bounds.
    pub v_min: f64,
    pub v_max: f64,
    /// Id of the transformer (LV grid) attached at this bus, if any.
    pub transformer: Option<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EdgeKind {
    MvLine,
    Transformer,
    LvLine,
}

/// A series element between two buses, oriented parent to child once placed
/// in a [`RadialGrid`].
#[derive(Clone, Debug, PartialEq)]
pub struct Branch {
    pub id: String,
    pub from: usize,
    pub to: usize,
    pub r: f64,
    pub x: f64,
    pub i_max: f64,
    pub kind: EdgeKind,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TransformerLink {
    /// Same as the id of the LV grid it feeds.
    pub id: String,
    pub mv_bus: String,
    pub lv_bus: String,
    pub kva_rating: f64,
    /// Series impedance on the system base.
    pub r: f64,
    pub x: f64,
    /// Rated current on the system base.
    pub i_max: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DerKind {
    Pv,
    Load,
    Storage,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Der {
    pub id: String,
    pub bus: String,
    pub kind: DerKind,
    pub p_rating_kw: f64,
    pub controllable: bool,
    /// Fraction of the current output (PV, load) or rating (storage) that may
    /// be shifted.
    pub curtailment_fraction: f64,
    /// Lowest admissible power factor, leading or lagging. 1.0 means unity only.
    pub pf_min: f64,
}

/// A radial grid in per-unit, with branches re-oriented along the tree.
#[derive(Clone, Debug)]
pub struct RadialGrid {
    buses: Vec<Bus>,
    branches: Vec<Branch>,
    topology: Topology,
    index: HashMap<String, usize>,
}

impl RadialGrid {
    /// `branches` carry `(id, from id, to id, r, x, i_max, kind)`.
    pub fn new(
        buses: Vec<Bus>,
        branches: Vec<(String, String, String, f64, f64, f64, EdgeKind)>,
        root: &str,
    ) -> Result<Self, GridError> {
        let mut index = HashMap::with_capacity(buses.len());
        for (i, bus) in buses.iter().enumerate() {
            if index.insert(bus.id.clone(), i).is_some() {
                return Err(GridError::invariant("bus", &bus.id, "duplicate id"));
            }
            if !(bus.v_min > 0.0 && bus.v_min < bus.v_max && bus.v_max.is_finite()) {
                return Err(GridError::invariant(
                    "bus",
                    &bus.id,
                    format!("voltage bounds must satisfy 0 < v_min < v_max, got [{}, {}]", bus.v_min, bus.v_max),
                ));
            }
        }
        let root_idx = *index
            .get(root)
            .ok_or_else(|| GridError::invariant("slack", root, "unknown bus"))?;

        let mut edges = Vec::with_capacity(branches.len());
        for (id, from, to, r, x, i_max, _) in &branches {
            let lookup = |bus: &str| {
                index
                    .get(bus)
                    .copied()
                    .ok_or_else(|| GridError::invariant("branch", id, format!("unknown bus '{bus}'")))
            };
            let (a, b) = (lookup(from)?, lookup(to)?);
            if a == b {
                return Err(GridError::invariant("branch", id, "from_bus equals to_bus"));
            }
            if !(r.is_finite() && x.is_finite() && *r >= 0.0) {
                return Err(GridError::invariant("branch", id, format!("impedance must be finite with r >= 0, got r={r}, x={x}")));
            }
            if r * r + x * x <= 0.0 {
                return Err(GridError::invariant("branch", id, "zero impedance (r = x = 0)"));
            }
            if !(i_max.is_finite() && *i_max > 0.0) {
                return Err(GridError::invariant("branch", id, format!("ampacity must be positive, got {i_max}")));
            }
            edges.push((id.clone(), a, b));
        }

        let bus_ids: Vec<String> = buses.iter().map(|b| b.id.clone()).collect();
        let topology = validate_radial(&bus_ids, &edges, root_idx)?;

        let mut oriented = Vec::with_capacity(branches.len());
        for (k, (id, _, _, r, x, i_max, kind)) in branches.into_iter().enumerate() {
            let (_, a, b) = edges[k];
            let (from, to) = if topology.parent[b] == Some(a) && topology.parent_edge[b] == Some(k) {
                (a, b)
            } else {
                (b, a)
            };
            oriented.push(Branch {
                id,
                from,
                to,
                r,
                x,
                i_max,
                kind,
            });
        }

        Ok(Self {
            buses,
            branches: oriented,
            topology,
            index,
        })
    }

    pub fn buses(&self) -> &[Bus] {
        &self.buses
    }

    pub fn branches(&self) -> &[Branch] {
        &self.branches
    }

    pub fn topology(&self) -> &Topology {
        &self.topology
    }

    pub fn root(&self) -> usize {
        self.topology.root()
    }

    pub fn n_buses(&self) -> usize {
        self.buses.len()
    }

    pub fn n_branches(&self) -> usize {
        self.branches.len()
    }

    pub fn bus_index(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn bus_ids(&self) -> Vec<String> {
        self.buses.iter().map(|b| b.id.clone()).collect()
    }

    /// Branch feeding `bus` from its parent.
    pub fn parent_branch(&self, bus: usize) -> Option<usize> {
        self.topology.parent_edge[bus]
    }

    /// Branches leaving `bus` towards its children.
    pub fn child_branches(&self, bus: usize) -> impl Iterator<Item = usize> + '_ {
        self.topology.children[bus]
            .iter()
            .filter_map(move |&c| self.topology.parent_edge[c])
    }

    pub fn report(&self) -> TopologyReport {
        TopologyReport::new(&self.bus_ids(), &self.topology)
    }
}

/// One LV sub-network below an MV/LV transformer. The transformer secondary is
/// the root (slack) of `grid`.
#[derive(Clone, Debug)]
pub struct LvGrid {
    pub id: String,
    pub base: PerUnitBase,
    pub transformer: TransformerLink,
    pub grid: RadialGrid,
    pub ders: Vec<Der>,
}

#[derive(Clone, Debug)]
pub struct Network {
    pub s_base_kva: f64,
    pub mv_base: PerUnitBase,
    pub mv: RadialGrid,
    pub lv_grids: Vec<LvGrid>,
    merged: RadialGrid,
}

impl Network {
    pub fn new(s_base_kva: f64, mv_base: PerUnitBase, mv: RadialGrid, lv_grids: Vec<LvGrid>) -> Result<Self, GridError> {
        let mut buses: Vec<Bus> = mv.buses().to_vec();
        let mut edges = Vec::new();
        let push_grid = |grid: &RadialGrid, edges: &mut Vec<_>| {
            for br in grid.branches() {
                edges.push((
                    br.id.clone(),
                    grid.buses()[br.from].id.clone(),
                    grid.buses()[br.to].id.clone(),
                    br.r,
                    br.x,
                    br.i_max,
                    br.kind,
                ));
            }
        };
        push_grid(&mv, &mut edges);
        for lv in &lv_grids {
            let t = &lv.transformer;
            let mv_idx = mv
                .bus_index(&t.mv_bus)
                .ok_or_else(|| GridError::invariant("transformer", &t.id, format!("unknown MV bus '{}'", t.mv_bus)))?;
            buses[mv_idx].transformer = Some(t.id.clone());
            buses.extend(lv.grid.buses().iter().cloned());
            edges.push((t.id.clone(), t.mv_bus.clone(), t.lv_bus.clone(), t.r, t.x, t.i_max, EdgeKind::Transformer));
            push_grid(&lv.grid, &mut edges);
        }
        let slack = mv.buses()[mv.root()].id.clone();
        let merged = RadialGrid::new(buses, edges, &slack)?;
        Ok(Self {
            s_base_kva,
            mv_base,
            mv,
            lv_grids,
            merged,
        })
    }

    /// MV and every LV grid joined through their transformers, rooted at the slack.
    pub fn merged(&self) -> &RadialGrid {
        &self.merged
    }

    pub fn slack_bus(&self) -> &str {
        &self.mv.buses()[self.mv.root()].id
    }

    pub fn n_buses(&self) -> usize {
        self.merged.n_buses()
    }

    /// Lines only; transformers are counted separately.
    pub fn n_branches(&self) -> usize {
        self.merged.n_branches() - self.lv_grids.len()
    }

    pub fn transformers(&self) -> impl Iterator<Item = &TransformerLink> {
        self.lv_grids.iter().map(|lv| &lv.transformer)
    }

    pub fn ders(&self) -> impl Iterator<Item = &Der> {
        self.lv_grids.iter().flat_map(|lv| lv.ders.iter())
    }

    pub fn lv_grid(&self, id: &str) -> Option<&LvGrid> {
        self.lv_grids.iter().find(|lv| lv.id == id)
    }

    pub fn validate_radial(&self) -> TopologyReport {
        self.merged.report()
    }

    /// Sum of PV ratings across all LV grids.
    pub fn installed_pv_kwp(&self) -> f64 {
        self.ders()
            .filter(|d| d.kind == DerKind::Pv)
            .map(|d| d.p_rating_kw)
            .sum()
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self, GridError> {
        io::load_network(path.as_ref())
    }

    pub fn from_json_str(json: &str) -> Result<Self, GridError> {
        io::parse_network(json, "<inline>")
    }
}

pub fn load_network(path: impl AsRef<std::path::Path>) -> Result<Network, GridError> {
    Network::load(path)
}
