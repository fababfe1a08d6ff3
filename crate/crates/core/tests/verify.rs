use fisherflow::verify::{run, run_many, Experiment, ExperimentConfig, Lab, Report};
use serde_json::{json, Value};

fn report(exp: Experiment, patch: Value) -> Report {
    let cfg = ExperimentConfig::default_for(exp).overlay(&patch).unwrap();
    cfg.validate(exp).unwrap();
    run(exp, &cfg, &Lab::new()).unwrap()
}

fn numeric_fields(r: &Report) -> Value {
    let mut v = serde_json::to_value(r).unwrap();
    v.as_object_mut().unwrap().remove("wall_time_s");
    v
}

#[test]
fn chain_rule_report_rejects_negated_momenta() {
    let r = report(Experiment::ExactChainRule, json!({}));
    assert!(r.passed(), "{:?}", r.verdicts);
    let flipped = r.verdict("negated_momenta_rejected").unwrap();
    // the reversed balance is off by roughly twice the dissipation
    assert!((flipped.measured - 2.0).abs() < 0.05);
    assert!(!r.mesh_checksum.is_empty());
}

#[test]
fn reports_write_json_and_csv() {
    let r = report(Experiment::PorousFisher, json!({"m_values": [1.25]}));
    let dir = tempfile::tempdir().unwrap();
    r.write(dir.path()).unwrap();
    let doc: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("porous_fisher.json")).unwrap()).unwrap();
    assert_eq!(doc["experiment"], "porous_fisher");
    assert_eq!(doc["verdicts"].as_array().unwrap().len(), r.verdicts.len());
    let csv = std::fs::read_to_string(dir.path().join("porous_fisher.csv")).unwrap();
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(&header[..3], ["series", "mesh_checksum", "t"]);
    for line in lines {
        let cells: Vec<&str> = line.split(',').collect();
        assert_eq!(cells.len(), header.len());
        assert_eq!(cells[1], r.mesh_checksum);
    }
}

#[test]
fn porous_exponents_outside_the_window_are_rejected() {
    for m in [1.0, 1.5, 1.7] {
        let cfg = ExperimentConfig::default_for(Experiment::PorousFisher).overlay(&json!({"m_values": [m]})).unwrap();
        assert!(cfg.validate(Experiment::PorousFisher).unwrap_err().is_usage());
    }
    let bad = ExperimentConfig::default_for(Experiment::Edi).overlay(&json!({"no_such_key": 1}));
    assert!(bad.unwrap_err().is_usage());
}

#[test]
fn runs_are_deterministic_and_independent_of_threads() {
    let items: Vec<_> = [Experiment::PorousFisher, Experiment::ExactChainRule]
        .into_iter()
        .map(|e| (e, ExperimentConfig::default_for(e)))
        .collect();
    let one = run_many(&items, &Lab::new(), 1);
    let two = run_many(&items, &Lab::new(), 2);
    for ((ea, a), (eb, b)) in one.iter().zip(&two) {
        assert_eq!(ea, eb);
        assert_eq!(numeric_fields(a.as_ref().unwrap()), numeric_fields(b.as_ref().unwrap()));
    }
}

#[test]
fn convex_fisher_is_monotone_on_a_coarse_square() {
    let r = report(Experiment::FisherConvex, json!({"domain": {"kind": "rectangle", "width": 1.0, "height": 1.0, "h": 0.04}}));
    assert!(r.passed(), "{:?}", r.verdicts);
    assert_eq!(r.meshes.len(), 2);
}

#[test]
fn every_experiment_has_a_claim() {
    for e in Experiment::ALL {
        assert!(e.claim().len() > 20, "{}", e.name());
        ExperimentConfig::default_for(e).validate(e).unwrap();
    }
}
