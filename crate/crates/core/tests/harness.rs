use std::fs;

use fdhmm::harness::{
    emit_to_path, fit_rate, run_convergence, run_expansion, sweep_with, ConvergenceConfig,
    Execution, ExpansionConfig, ExpansionExperiment, ExperimentConfig, SweepVar,
};

fn small() -> ConvergenceConfig {
    ConvergenceConfig {
        eta: 0.05,
        k_range: Some([1, 4]),
        ..ConvergenceConfig::default()
    }
}

#[test]
fn config_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cfg.toml");
    let cfg = ExperimentConfig {
        convergence: Some(ConvergenceConfig {
            sweep_var: SweepVar::Eps,
            ..small()
        }),
        ..ExperimentConfig::default()
    };
    fs::write(&path, cfg.to_toml().unwrap()).unwrap();
    assert_eq!(ExperimentConfig::load(&path).unwrap(), cfg);
}

#[test]
fn sweeps_are_deterministic_and_thread_independent() {
    for label in ["periodic-1d", "locally-periodic-1d"] {
        let par = sweep_with(&small(), label, Execution::Parallel).unwrap();
        let ser = sweep_with(&small(), label, Execution::Serial).unwrap();
        assert_eq!(par, ser);
    }
}

#[test]
fn emitted_csv_is_byte_identical_and_parses_back() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    let cfg = ConvergenceConfig {
        coefficients: vec!["periodic-1d".into(), "locally-periodic-1d".into()],
        ..small()
    };
    let first = run_convergence(&cfg).unwrap();
    let second = run_convergence(&cfg).unwrap();
    assert_eq!(first.len(), 2);
    emit_to_path(&first[0].records, first[0].fit.as_ref(), &a).unwrap();
    emit_to_path(&second[0].records, second[0].fit.as_ref(), &b).unwrap();
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());

    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(&a)
        .unwrap();
    let headers = rdr.headers().unwrap().clone();
    assert_eq!(&headers[0], "sweep_var");
    assert_eq!(&headers[1], "error");
    let rows: Vec<csv::StringRecord> = rdr.records().map(|r| r.unwrap()).collect();
    assert_eq!(rows.len(), first[0].records.len());
    for (row, rec) in rows.iter().zip(&first[0].records) {
        let x: f64 = row[0].parse().unwrap();
        let e: f64 = row[1].parse().unwrap();
        assert!((x - rec.sweep_var).abs() <= 1e-12 * rec.sweep_var);
        assert!((e - rec.error).abs() <= 1e-12 * rec.error.max(1e-300));
    }
}

#[test]
fn constant_medium_fit_is_rejected_at_the_floor() {
    let cfg = ConvergenceConfig {
        coefficients: vec!["constant".into()],
        ..small()
    };
    let s = run_convergence(&cfg).unwrap().remove(0);
    assert!(s.errors().iter().all(|e| *e < 1e-9));
    assert!(fit_rate(&s.records, 1e-9).is_err());
}

#[test]
fn coupled_schedule_rate_in_1d() {
    let cfg = ConvergenceConfig {
        coefficients: vec!["locally-periodic-1d".into()],
        beta: Some(0.2),
        eps: Some(vec![0.004, 0.002, 0.001, 0.0005, 0.00025]),
        sweep_var: SweepVar::Eps,
        ..ConvergenceConfig::default()
    };
    let s = run_convergence(&cfg).unwrap().remove(0);
    let beta: f64 = 0.2;
    let bound = (beta * 5.0).min(2.0) - 0.4;
    assert!(s.fit.unwrap().slope >= bound, "{:?}", s.fit);
}

#[test]
fn cell_term_stays_bounded() {
    let out = run_expansion(&ExpansionConfig::default(), ExpansionExperiment::Fig3).unwrap();
    let max = out.value("v00_h1_max").unwrap();
    let mean = out.value("v00_h1_mean").unwrap();
    assert!(max <= 3.0 * mean, "{max} vs {mean}");
    assert!(out.value("periodicity_defect").unwrap() < 1e-10);
    assert!(out.value("max_cell_mean").unwrap() < 1e-10);
}
