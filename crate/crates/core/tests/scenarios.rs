use gpsmimic::scenario::ScenarioConfig;
use std::path::Path;

fn load(name: &str) -> ScenarioConfig {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios").join(name);
    ScenarioConfig::load(&path).unwrap_or_else(|e| panic!("{name}: {e}"))
}

#[test]
fn bundled_scenarios_parse_and_validate() {
    for name in ["table1.scenario", "reference.scenario"] {
        let cfg = load(name);
        cfg.validate().unwrap();
    }
}

#[test]
fn reference_matches_defaults() {
    let cfg = load("reference.scenario");
    let def = ScenarioConfig::default();
    assert_eq!(cfg.to_toml(), def.to_toml());
}
