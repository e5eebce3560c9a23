#![allow(dead_code)]

use std::path::PathBuf;

use gridflex::grid::{InjectionProfile, Network};
use gridflex::scenario::ScenarioConfig;

/// Step at 13:00, the PV peak of the fixture profiles.
pub const NOON: usize = 78;
/// Step at 19:00, the evening load peak.
pub const EVENING: usize = 114;

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

pub struct Fixture {
    pub config: ScenarioConfig,
    pub network: Network,
    pub profiles: InjectionProfile,
}

pub fn load() -> Fixture {
    let config = ScenarioConfig::load(fixture("scenario.toml")).unwrap();
    let network = Network::load(config.network.as_ref().unwrap()).unwrap();
    let profiles = InjectionProfile::load(config.profiles.as_ref().unwrap()).unwrap();
    Fixture {
        config,
        network,
        profiles,
    }
}
