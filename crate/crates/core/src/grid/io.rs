use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{
    Bus, Der, DerKind, EdgeKind, GridError, LvGrid, Network, PerUnitBase, RadialGrid, TransformerLink,
    VoltageLevel,
};

pub const DEFAULT_V_MIN: f64 = 0.95;
pub const DEFAULT_V_MAX: f64 = 1.05;

fn default_v_min() -> f64 {
    DEFAULT_V_MIN
}

fn default_v_max() -> f64 {
    DEFAULT_V_MAX
}

fn default_true() -> bool {
    true
}

fn default_pf() -> f64 {
    1.0
}

fn default_tr_r() -> f64 {
    0.01
}

fn default_tr_x() -> f64 {
    0.04
}

/// On-disk network document. Impedances are in ohms and ampacities in amperes
/// at the voltage base of their level.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkFile {
    pub s_base_kva: f64,
    pub mv: MvFile,
    #[serde(default)]
    pub lv_grids: Vec<LvGridFile>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MvFile {
    pub v_base_v: f64,
    pub slack: String,
    pub buses: Vec<BusFile>,
    pub branches: Vec<BranchFile>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BusFile {
    pub id: String,
    #[serde(default = "default_v_min")]
    pub v_min: f64,
    #[serde(default = "default_v_max")]
    pub v_max: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BranchFile {
    pub id: String,
    pub from: String,
    pub to: String,
    pub r_ohm: f64,
    pub x_ohm: f64,
    pub i_max_a: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransformerFile {
    pub mv_bus: String,
    pub kva_rating: f64,
    /// Series resistance in pu of the transformer's own rating.
    #[serde(default = "default_tr_r")]
    pub r_pu: f64,
    #[serde(default = "default_tr_x")]
    pub x_pu: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DerFile {
    pub id: String,
    pub bus: String,
    pub kind: DerKind,
    pub p_rating_kw: f64,
    #[serde(default = "default_true")]
    pub controllable: bool,
    #[serde(default)]
    pub curtailment_fraction: f64,
    #[serde(default = "default_pf")]
    pub pf_min: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LvGridFile {
    pub id: String,
    pub v_base_v: f64,
    pub transformer: TransformerFile,
    /// Secondary bus of the transformer; defaults to the first listed bus.
    #[serde(default)]
    pub root: Option<String>,
    pub buses: Vec<BusFile>,
    pub branches: Vec<BranchFile>,
    #[serde(default)]
    pub ders: Vec<DerFile>,
}

pub(super) fn load_network(path: &Path) -> Result<Network, GridError> {
    let text = std::fs::read_to_string(path).map_err(|source| GridError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_network(&text, &path.display().to_string())
}

pub(super) fn parse_network(text: &str, origin: &str) -> Result<Network, GridError> {
    let file: NetworkFile = serde_json::from_str(text).map_err(|e| GridError::Parse {
        path: origin.to_string(),
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    file.into_network()
}

fn convert_buses(buses: &[BusFile], level: VoltageLevel) -> Vec<Bus> {
    buses
        .iter()
        .map(|b| Bus {
            id: b.id.clone(),
            level,
            v_min: b.v_min,
            v_max: b.v_max,
            transformer: None,
        })
        .collect()
}

fn convert_branches(
    branches: &[BranchFile],
    base: &PerUnitBase,
    kind: EdgeKind,
) -> Vec<(String, String, String, f64, f64, f64, EdgeKind)> {
    branches
        .iter()
        .map(|b| {
            (
                b.id.clone(),
                b.from.clone(),
                b.to.clone(),
                base.impedance_to_pu(b.r_ohm),
                base.impedance_to_pu(b.x_ohm),
                base.current_to_pu(b.i_max_a),
                kind,
            )
        })
        .collect()
}

impl NetworkFile {
    pub fn into_network(self) -> Result<Network, GridError> {
        let mv_base = PerUnitBase::new(self.s_base_kva, self.mv.v_base_v)?;
        let mv = RadialGrid::new(
            convert_buses(&self.mv.buses, VoltageLevel::Mv),
            convert_branches(&self.mv.branches, &mv_base, EdgeKind::MvLine),
            &self.mv.slack,
        )?;

        let mut lv_grids = Vec::with_capacity(self.lv_grids.len());
        for lv in &self.lv_grids {
            let base = PerUnitBase::new(self.s_base_kva, lv.v_base_v)?;
            let tr = &lv.transformer;
            if !(tr.kva_rating.is_finite() && tr.kva_rating > 0.0) {
                return Err(GridError::invariant("transformer", &lv.id, format!("kva_rating must be positive, got {}", tr.kva_rating)));
            }
            let root = match &lv.root {
                Some(r) => r.clone(),
                None => lv
                    .buses
                    .first()
                    .map(|b| b.id.clone())
                    .ok_or_else(|| GridError::invariant("lv grid", &lv.id, "no buses"))?,
            };
            let mut buses = convert_buses(&lv.buses, VoltageLevel::Lv);
            for b in buses.iter_mut().filter(|b| b.id == root) {
                b.transformer = Some(lv.id.clone());
            }
            let grid = RadialGrid::new(buses, convert_branches(&lv.branches, &base, EdgeKind::LvLine), &root)?;

            let scale = self.s_base_kva / tr.kva_rating;
            let transformer = TransformerLink {
                id: lv.id.clone(),
                mv_bus: tr.mv_bus.clone(),
                lv_bus: root,
                kva_rating: tr.kva_rating,
                r: tr.r_pu * scale,
                x: tr.x_pu * scale,
                i_max: tr.kva_rating / self.s_base_kva,
            };

            let mut ders = Vec::with_capacity(lv.ders.len());
            for d in &lv.ders {
                if grid.bus_index(&d.bus).is_none() {
                    return Err(GridError::invariant("der", &d.id, format!("bus '{}' is not in LV grid '{}'", d.bus, lv.id)));
                }
                if !(d.p_rating_kw.is_finite() && d.p_rating_kw >= 0.0) {
                    return Err(GridError::invariant("der", &d.id, "p_rating_kw must be >= 0"));
                }
                if !(0.0..=1.0).contains(&d.curtailment_fraction) {
                    return Err(GridError::invariant("der", &d.id, "curtailment_fraction must lie in [0, 1]"));
                }
                if !(d.pf_min > 0.0 && d.pf_min <= 1.0) {
                    return Err(GridError::invariant("der", &d.id, "pf_min must lie in (0, 1]"));
                }
                ders.push(Der {
                    id: d.id.clone(),
                    bus: d.bus.clone(),
                    kind: d.kind,
                    p_rating_kw: d.p_rating_kw,
                    controllable: d.controllable,
                    curtailment_fraction: d.curtailment_fraction,
                    pf_min: d.pf_min,
                });
            }

            lv_grids.push(LvGrid {
                id: lv.id.clone(),
                base,
                transformer,
                grid,
                ders,
            });
        }

        Network::new(self.s_base_kva, mv_base, mv, lv_grids)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const TWO_BUS: &str = r#"{
        "s_base_kva": 1000,
        "mv": {
            "v_base_v": 20000, "slack": "S",
            "buses": [{"id": "S"}, {"id": "A"}],
            "branches": [{"id": "L1", "from": "S", "to": "A", "r_ohm": 4, "x_ohm": 4, "i_max_a": 100}]
        }
    }"#;

    #[test]
    fn converts_to_per_unit() {
        let net = parse_network(TWO_BUS, "t").unwrap();
        let br = &net.mv.branches()[0];
        assert!((br.r - 0.01).abs() < 1e-15);
        let i_base = 1e6 / (3f64.sqrt() * 20000.0);
        assert!((br.i_max - 100.0 / i_base).abs() < 1e-15);
        assert_eq!(net.n_buses(), 2);
        assert_eq!(net.mv.buses()[1].v_min, DEFAULT_V_MIN);
    }

    #[test]
    fn zero_ampacity_names_branch() {
        let text = TWO_BUS.replace("\"i_max_a\": 100", "\"i_max_a\": 0");
        let err = parse_network(&text, "t").unwrap_err();
        assert!(matches!(err, GridError::Invariant { element: "branch", ref id, .. } if id == "L1"), "{err}");
    }

    #[test]
    fn zero_impedance_rejected() {
        let text = TWO_BUS.replace("\"r_ohm\": 4, \"x_ohm\": 4", "\"r_ohm\": 0, \"x_ohm\": 0");
        assert!(matches!(parse_network(&text, "t"), Err(GridError::Invariant { .. })));
    }

    #[test]
    fn negative_resistance_rejected() {
        let text = TWO_BUS.replace("\"r_ohm\": 4", "\"r_ohm\": -1");
        assert!(parse_network(&text, "t").is_err());
    }

    #[test]
    fn parse_error_carries_position() {
        let err = parse_network("{\n  \"s_base_kva\": ,\n}", "bad.json").unwrap_err();
        match err {
            GridError::Parse { path, line, .. } => {
                assert_eq!(path, "bad.json");
                assert_eq!(line, 2);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn inverted_voltage_bounds_rejected() {
        let text = TWO_BUS.replace("{\"id\": \"A\"}", "{\"id\": \"A\", \"v_min\": 1.1, \"v_max\": 1.0}");
        assert!(matches!(parse_network(&text, "t"), Err(GridError::Invariant { element: "bus", .. })));
    }
}
