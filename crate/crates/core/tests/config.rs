use load_core::config::{Config, ConfigError};

#[test]
fn round_trip() {
    let mut c = Config::default();
    c.seed = 42;
    c.task = "salad".into();
    c.train.lr = 3e-4;
    let back = Config::from_json(&c.to_json()).unwrap();
    assert_eq!(back, c);
    assert_eq!(Config::from_json("{}").unwrap(), Config::default());
}

#[test]
fn unknown_keys_rejected_at_every_level() {
    for text in [
        r#"{"tsk": "salad"}"#,
        r#"{"net": {"d_obj": 8}}"#,
        r#"{"train": {"learning_rate": 0.1}}"#,
        r#"{"model": {"temperature": 1.0}}"#,
    ] {
        match Config::from_json(text) {
            Err(ConfigError::Parse(e)) => assert!(e.to_string().contains("unknown field"), "{e}"),
            other => panic!("{text}: {other:?}"),
        }
    }
}

#[test]
fn every_invalid_group_reported() {
    let text = r#"{"task": "bake_cake", "net": {"d_o": 0}, "model": {"k": 0}, "train": {"gamma": 1.5}}"#;
    let Err(ConfigError::Invalid(msgs)) = Config::from_json(text) else {
        panic!("expected validation failure");
    };
    let groups: Vec<&str> = msgs.iter().map(|m| m.split(':').next().unwrap()).collect();
    assert_eq!(groups, ["task", "net", "model", "train"]);
    assert!(msgs[0].contains("toast_bread"), "registered tasks listed: {}", msgs[0]);
}
