use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::ScenarioError;
use crate::mvopf::{SlackRange, WeightConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CaseKind {
    /// No LV monitoring: transformer loads are allocated from feeder profiles.
    Base,
    /// Measured transformer exchanges, slack voltage as the only control.
    Monitoring,
    /// Measured exchanges plus LV flexibility from estimated sensitivities.
    Control,
}

impl CaseKind {
    pub const ALL: [CaseKind; 3] = [CaseKind::Base, CaseKind::Monitoring, CaseKind::Control];

    pub fn name(self) -> &'static str {
        match self {
            CaseKind::Base => "base",
            CaseKind::Monitoring => "monitoring",
            CaseKind::Control => "control",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LoadingScenario {
    Current,
    /// Current loading plus `future_load_kw` at every LV grid.
    Future,
}

impl LoadingScenario {
    pub fn name(self) -> &'static str {
        match self {
            LoadingScenario::Current => "current",
            LoadingScenario::Future => "future",
        }
    }
}

/// Flat `scenario.toml` document. Relative paths resolve against the
/// directory of the file they were read from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub network: Option<PathBuf>,
    pub profiles: Option<PathBuf>,
    pub case: CaseKind,
    pub scenario: LoadingScenario,
    /// Constant unity-power-factor load added per LV grid in the future scenario, kW.
    pub future_load_kw: f64,
    pub horizon_hours: f64,
    pub step_minutes: f64,
    /// Slack voltage at which the as-found state is measured, pu.
    pub measured_slack_v: f64,
    pub slack_v_min: f64,
    pub slack_v_max: f64,
    pub w_l: f64,
    pub w_v: f64,
    pub w_lim: f64,
    pub w_p: f64,
    pub w_q: f64,
    pub flex_directions: usize,
    /// Relative noise on synthetic LV measurements.
    pub noise_sigma: f64,
    /// Samples per sensitivity-estimation window.
    pub window_samples: usize,
    /// Bound on the per-bus probing deltas, pu.
    pub excitation_pu: f64,
    pub seed: u64,
    /// Run the hosting-capacity bisection for the control case.
    pub hosting_capacity: bool,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        let w = WeightConfig::default();
        let s = SlackRange::default();
        Self {
            network: None,
            profiles: None,
            case: CaseKind::Control,
            scenario: LoadingScenario::Current,
            future_load_kw: 500.0,
            horizon_hours: 24.0,
            step_minutes: 10.0,
            measured_slack_v: 1.0,
            slack_v_min: s.v_min,
            slack_v_max: s.v_max,
            w_l: w.w_l,
            w_v: w.w_v,
            w_lim: w.w_lim,
            w_p: w.w_p,
            w_q: w.w_q,
            flex_directions: 8,
            noise_sigma: 0.001,
            window_samples: 288,
            excitation_pu: 0.01,
            seed: 42,
            hosting_capacity: true,
        }
    }
}

impl ScenarioConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ScenarioError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| ScenarioError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_toml_str(&text).map_err(|e| match e {
            ScenarioError::Config(msg) => ScenarioError::Config(format!("{}: {msg}", path.display())),
            other => other,
        })?;
        let dir = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.network, &mut cfg.profiles].into_iter().flatten() {
            if p.is_relative() {
                *p = dir.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn from_toml_str(text: &str) -> Result<Self, ScenarioError> {
        let cfg: Self = toml::from_str(text).map_err(|e| ScenarioError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let bad = |msg: String| Err(ScenarioError::Config(msg));
        if !(self.future_load_kw.is_finite() && self.future_load_kw >= 0.0) {
            return bad(format!("future_load_kw must be >= 0, got {}", self.future_load_kw));
        }
        if self.step_minutes != crate::grid::PROFILE_STEP_MINUTES as f64 {
            return bad(format!("step_minutes must be {}, got {}", crate::grid::PROFILE_STEP_MINUTES, self.step_minutes));
        }
        let steps = self.horizon_hours * 60.0 / self.step_minutes;
        if !(steps >= 1.0 && (steps - steps.round()).abs() < 1e-9) {
            return bad(format!(
                "horizon_hours ({}) must be a positive multiple of the step ({} min)",
                self.horizon_hours, self.step_minutes
            ));
        }
        if !(self.slack_v_min > 0.0 && self.slack_v_min <= self.slack_v_max) {
            return bad(format!("slack range [{}, {}] is empty", self.slack_v_min, self.slack_v_max));
        }
        if !(self.measured_slack_v > 0.0) {
            return bad("measured_slack_v must be positive".into());
        }
        if self.flex_directions < 3 {
            return bad("flex_directions must be at least 3".into());
        }
        if !(self.noise_sigma >= 0.0 && self.excitation_pu > 0.0) {
            return bad("noise_sigma must be >= 0 and excitation_pu > 0".into());
        }
        self.weights()
            .validate()
            .map_err(|e| ScenarioError::Config(e.to_string()))
    }

    pub fn steps(&self) -> usize {
        (self.horizon_hours * 60.0 / self.step_minutes).round() as usize
    }

    pub fn weights(&self) -> WeightConfig {
        WeightConfig {
            w_l: self.w_l,
            w_v: self.w_v,
            w_lim: self.w_lim,
            w_p: self.w_p,
            w_q: self.w_q,
        }
    }

    pub fn slack_range(&self) -> SlackRange {
        SlackRange {
            v_min: self.slack_v_min,
            v_max: self.slack_v_max,
        }
    }
}
