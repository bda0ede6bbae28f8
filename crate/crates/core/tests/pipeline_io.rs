use dpselft::accountant::{split_budget, LedgerReport, PrivacyLedger, Stage};
use dpselft::data::{read_dataset, save_dataset};
use dpselft::nn::{build_model, checkpoint, LayerSpec};
use dpselft::pipeline::{
    generator_for, make_task, run_pipeline, run_suite, write_results_csv, Arm, ExperimentConfig,
    TaskSpec, RESULT_COLUMNS,
};
use dpselft::rng;
use dpselft::synth::{
    build_synthetic_dataset, generate_candidates, Encoder, SynthConfig, SynthNoise, SynthSidecar,
};

fn small(arm: Arm, seed: u64) -> ExperimentConfig {
    let mut cfg = ExperimentConfig {
        task: TaskSpec {
            n_private: 256,
            n_test: 256,
            ..TaskSpec::default()
        },
        arm,
        seed,
        ..ExperimentConfig::default()
    };
    cfg.train.steps = 40;
    cfg.train.batch_size = 32;
    cfg.selection.steps = 5;
    cfg
}

#[test]
fn every_arm_runs_within_budget() {
    for arm in [
        Arm::DpSelft,
        Arm::DpSelftAdapter,
        Arm::CleanSelection,
        Arm::RandomSelection,
        Arm::FullParameter,
        Arm::Heuristic,
    ] {
        let r = run_pipeline(&small(arm.clone(), 3)).unwrap();
        assert!(
            r.ledger.total_epsilon <= 5.0 + 1e-9,
            "{arm}: {}",
            r.ledger.total_epsilon
        );
        assert!(r.eps_syn() <= 0.3 + 1e-9);
        assert_eq!(r.ledger.stage(Stage::Selection).epsilon, 0.0);
        assert!((0.0..=1.0).contains(&r.accuracy));
        assert!(r.sigma > 0.0);
        match arm {
            Arm::FullParameter => assert_eq!(r.selected.len(), 4),
            Arm::Heuristic => assert_eq!(r.selected.to_vec(), vec![3, 5]),
            _ => assert_eq!(r.selected.len(), 2),
        }
        assert_eq!(r.selection.is_some(), arm.uses_selection(), "{arm}");
    }
}

#[test]
fn runs_are_reproducible() {
    let a = run_pipeline(&small(Arm::DpSelft, 11)).unwrap();
    let b = run_pipeline(&small(Arm::DpSelft, 11)).unwrap();
    assert_eq!(a.accuracy.to_bits(), b.accuracy.to_bits());
    assert_eq!(a.selected, b.selected);
    assert_eq!(a.ledger, b.ledger);
}

#[test]
fn non_private_mode_records_nothing() {
    let mut cfg = small(Arm::DpSelft, 1);
    cfg.privacy.non_private = true;
    cfg.train.clip_norm = f64::INFINITY;
    let r = run_pipeline(&cfg).unwrap();
    assert_eq!(r.sigma, 0.0);
    assert_eq!(r.ledger.total_epsilon, 0.0);
    assert!(r.ledger.stages.iter().all(|s| s.events.is_empty()));
}

#[test]
fn config_json_round_trips_and_validates() {
    let mut cfg = small(Arm::Heuristic, 9);
    cfg.train.clip_norm = 0.5;
    let back = ExperimentConfig::from_json(&cfg.to_json().unwrap()).unwrap();
    assert_eq!(back, cfg);

    let partial = ExperimentConfig::from_json(r#"{"arm": "random-selection", "seed": 4}"#).unwrap();
    assert_eq!(partial.arm, Arm::RandomSelection);
    assert_eq!(partial.seed, 4);
    assert_eq!(partial.task, TaskSpec::default());

    for bad in [
        r#"{"privacy": {"epsilon": 0.2, "epsilon_syn": 0.3}}"#,
        r#"{"train": {"clip_norm": null}}"#,
        r#"{"selection": {"top_k": 0}}"#,
        r#"{"task": {"dim": 8}, "model": [{"kind": "dense", "input": 4, "output": 3}]}"#,
        r#"{"arm": "nope"}"#,
        "not json",
    ] {
        assert!(ExperimentConfig::from_json(bad).is_err(), "accepted {bad}");
    }

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cfg.json");
    std::fs::write(&path, cfg.to_json().unwrap()).unwrap();
    assert_eq!(ExperimentConfig::load(&path).unwrap(), cfg);
}

#[test]
fn checkpoint_file_round_trips() {
    let model = build_model(
        &[
            LayerSpec::dense(4, 6),
            LayerSpec::tanh(6),
            LayerSpec::dense(6, 2),
        ],
        5,
    )
    .unwrap()
    .attach_adapter(3, 2, 6)
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    checkpoint::save(&path, &model).unwrap();
    let back = checkpoint::load(&path).unwrap();
    assert_eq!(back, model);
    assert_eq!(checkpoint::encode(&back), checkpoint::encode(&model));
    assert!(checkpoint::load(dir.path().join("missing.ckpt")).is_err());
}

#[test]
fn synthetic_dataset_saves_and_reads_back() {
    let cfg = small(Arm::DpSelft, 2);
    let task = make_task(&cfg.task, cfg.seed).unwrap();
    let generator = generator_for(&task, &cfg.synth.generator, cfg.seed);
    let pool = generate_candidates(
        &generator,
        &mut rng::stream(cfg.seed, &[rng::tag::CANDIDATES]),
    )
    .unwrap();
    let spec = split_budget(5.0, 1e-5, 0.3).unwrap();
    let mut ledger = PrivacyLedger::new();
    let synth_cfg = SynthConfig {
        k_syn: 40,
        ..SynthConfig::default()
    };
    let synthetic = build_synthetic_dataset(
        &task.private,
        &pool,
        &Encoder::identity(pool.dim()),
        SynthNoise::Budget {
            epsilon: spec.epsilon_syn,
            delta: spec.delta_syn,
        },
        &synth_cfg,
        &mut ledger,
    )
    .unwrap();
    assert_eq!(synthetic.records(), 40);
    assert_eq!(synthetic.train.len(), 28);
    assert_eq!(synthetic.val.len(), 12);
    let report = ledger.report(&spec).unwrap();
    assert!(report.stage(Stage::Synthetic).epsilon <= 0.3 + 1e-9);

    let dir = tempfile::tempdir().unwrap();
    synthetic.save(dir.path()).unwrap();
    assert_eq!(
        read_dataset(dir.path().join("train.csv"), Some(3)).unwrap(),
        synthetic.train
    );
    assert_eq!(
        read_dataset(dir.path().join("val.csv"), Some(3)).unwrap(),
        synthetic.val
    );
    let sidecar: SynthSidecar =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("synthetic.json")).unwrap())
            .unwrap();
    assert_eq!(sidecar, synthetic.sidecar());
    for (pos, e) in synthetic
        .train_positions
        .iter()
        .zip(&synthetic.train.examples)
    {
        assert_eq!(e.features, pool.get(synthetic.selected[*pos]));
        assert_eq!(e.label, synthetic.labels[*pos]);
    }
}

#[test]
fn dataset_files_round_trip() {
    let task = make_task(
        &TaskSpec {
            n_private: 50,
            n_test: 10,
            ..TaskSpec::default()
        },
        0,
    )
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("private.csv");
    save_dataset(&path, &task.private).unwrap();
    assert_eq!(read_dataset(&path, Some(3)).unwrap(), task.private);
    assert!(read_dataset(&path, Some(2)).is_err());
}

#[test]
fn ledger_report_serializes() {
    let r = run_pipeline(&small(Arm::DpSelft, 4)).unwrap();
    let json = serde_json::to_string(&r.ledger).unwrap();
    let back: LedgerReport = serde_json::from_str(&json).unwrap();
    assert_eq!(back, r.ledger);
    assert!(back.rdp_total_epsilon <= back.total_epsilon + 1e-12);
    back.check_budget().unwrap();
}

#[test]
fn result_csv_has_one_row_per_run() {
    let runs: Vec<_> = [Arm::FullParameter, Arm::Heuristic]
        .into_iter()
        .map(|a| run_pipeline(&small(a, 0)).unwrap())
        .collect();
    let mut buf = Vec::new();
    write_results_csv(&mut buf, &runs).unwrap();
    let mut rd = csv::Reader::from_reader(&buf[..]);
    assert_eq!(
        rd.headers().unwrap().iter().collect::<Vec<_>>(),
        RESULT_COLUMNS
    );
    let rows: Vec<csv::StringRecord> = rd.records().map(|r| r.unwrap()).collect();
    assert_eq!(rows.len(), 2);
    assert_eq!(&rows[0][0], "full-parameter");
    assert_eq!(&rows[1][8], runs[1].selected.to_string());
}

#[test]
fn suite_is_independent_of_thread_count() {
    let configs = [small(Arm::Heuristic, 0), small(Arm::RandomSelection, 0)];
    let one = run_suite(&configs, &[0, 1, 2], 1).unwrap();
    let many = run_suite(&configs, &[0, 1, 2], 4).unwrap();
    let strip = |s: &dpselft::pipeline::SuiteResult| -> Vec<(u64, u64)> {
        s.rows
            .iter()
            .map(|r| (r.seed, r.result.as_ref().unwrap().accuracy.to_bits()))
            .collect()
    };
    assert_eq!(strip(&one), strip(&many));
    assert_eq!(one.summaries.len(), 2);
    assert!(one.summaries.iter().all(|s| s.runs == 3 && s.failures == 0));

    let mut buf = Vec::new();
    one.write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert_eq!(text.lines().count(), 1 + 6 + 2);
    assert_eq!(text.lines().filter(|l| l.contains(",summary,")).count(), 2);
    assert!(one.table().contains("heuristic"));
    assert!(run_suite(&[], &[0], 1).is_err());
}

#[test]
fn failing_cells_are_kept_in_the_suite() {
    let mut bad = small(Arm::Heuristic, 0);
    bad.heuristic_layers = vec![2];
    let suite = run_suite(&[bad], &[0, 1], 2).unwrap();
    assert!(suite.rows.iter().all(|r| r.result.is_err()));
    assert_eq!(suite.summaries[0].failures, 2);
}

#[test]
fn shipped_config_matches_defaults() {
    let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/desk.json");
    assert_eq!(
        ExperimentConfig::load(path).unwrap(),
        ExperimentConfig::default()
    );
}
