use std::io::Write;

use tendon_core::reflex::ReflexMode;
use tendon_harness::config::{ScenarioConfig, ScenarioId};
use tendon_harness::{run_scenario, Error};

fn file(text: &str) -> tempfile::NamedTempFile {
    let mut f = tempfile::NamedTempFile::new().unwrap();
    f.write_all(text.as_bytes()).unwrap();
    f
}

#[test]
fn minimal_config_parses_with_defaults() {
    let cfg = ScenarioConfig::from_json(r#"{"scenario":"teach_demo","seed":7}"#).unwrap();
    assert_eq!(cfg, ScenarioConfig::new(ScenarioId::TeachDemo, 7));
    let round = serde_json::to_string(&cfg).unwrap();
    assert_eq!(ScenarioConfig::from_json(&round).unwrap(), cfg);
}

#[test]
fn unknown_keys_are_rejected() {
    for text in [
        r#"{"scenario":"teach_demo","seed":1,"sead":2}"#,
        r#"{"scenario":"teach_demo","seed":1,"teach_demo":{"speed":1}}"#,
        r#"{"scenario":"teach_demo","seed":1,"reflex":{"mode":"relaxation","gain":2}}"#,
        r#"{"scenario":"table_setting","seed":1,"table_setting":{"compare":{"horizon":5,"x":0}}}"#,
        r#"{"scenario":"muscle_addition","seed":1,"muscle_addition":{"control":{"bogus":true}}}"#,
        r#"{"scenario":"teach_demo","seed":1,"plant":{"mass":2}}"#,
    ] {
        assert!(matches!(ScenarioConfig::from_json(text), Err(Error::Config(_))), "{text}");
    }
}

#[test]
fn seed_is_mandatory() {
    let err = ScenarioConfig::from_json(r#"{"scenario":"teach_demo"}"#).unwrap_err();
    assert!(err.to_string().contains("seed"), "{err}");
    let f = file(r#"{"scenario":"teach_demo"}"#);
    assert!(ScenarioConfig::load(Some(f.path()), None, None, None).is_err());
    let cfg = ScenarioConfig::load(Some(f.path()), None, Some(3), None).unwrap();
    assert_eq!(cfg.seed, 3);
    assert!(ScenarioConfig::load(None, Some(ScenarioId::TeachDemo), None, None).is_err());
}

#[test]
fn command_line_overrides() {
    let f = file(r#"{"scenario":"muscle_addition","seed":1,"out_dir":"a"}"#);
    let cfg =
        ScenarioConfig::load(Some(f.path()), Some(ScenarioId::MuscleAddition), Some(9), Some("b".into())).unwrap();
    assert_eq!(cfg.seed, 9);
    assert_eq!(cfg.out_dir.as_deref(), Some(std::path::Path::new("b")));
    let err = ScenarioConfig::load(Some(f.path()), Some(ScenarioId::TableSetting), None, None);
    assert!(matches!(err, Err(Error::Config(_))));
}

#[test]
fn stiffness_target_is_refused_under_relaxation() {
    let text = r#"{"scenario":"teach_demo","seed":1,"reflex":{"mode":"relaxation","k_ref":3.0}}"#;
    assert!(matches!(ScenarioConfig::from_json(text), Err(Error::Config(_))));
    let mut cfg = ScenarioConfig::new(ScenarioId::TeachDemo, 1);
    cfg.reflex.k_ref = Some(3.0);
    assert!(run_scenario(&cfg).is_err());
    cfg.reflex.mode = ReflexMode::VariableStiffness;
    cfg.validate().unwrap();
    cfg.reflex.k_ref = Some(-1.0);
    assert!(cfg.validate().is_err());
}

#[test]
fn invalid_values_are_rejected() {
    for text in [
        r#"{"scenario":"teach_demo","seed":1,"plant":{"elastic_k_scale":-1}}"#,
        r#"{"scenario":"teach_demo","seed":1,"plant":{"link_masses":[1.0]}}"#,
        r#"{"scenario":"muscle_addition","seed":1,"muscle_addition":{"payload_mass":-2}}"#,
        r#"{"scenario":"table_setting","seed":1,"table_setting":{"lengths":[0.3]}}"#,
        r#"{"scenario":"table_setting","seed":1,"table_setting":{"waypoints":[]}}"#,
        r#"{"scenario":"teach_demo","seed":1,"teach_demo":{"stroke_time":0}}"#,
        r#"{"scenario":"nope","seed":1}"#,
        r#"[1,2]"#,
    ] {
        assert!(ScenarioConfig::from_json(text).is_err(), "{text}");
    }
}
