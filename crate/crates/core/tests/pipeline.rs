use scyc::data::{encode_idx, load_idx, parse_idx, SyntheticSpec};
use scyc::harness::{
    run_all_seeds, run_iterative_pruning, DatasetSource, Experiment, ExperimentConfig, FailureKind, RunOutcome,
};
use scyc::optim::OptimizerKind;
use scyc::prune::{alive_neurons, PruneCriterion, ScoringRule};
use scyc::report::{read_csv_file, write_run_artifacts, HistogramRow};
use scyc::sched::ScheduleSpec;
use scyc::{CycleRecord, Error};

fn small_config() -> ExperimentConfig {
    ExperimentConfig {
        hidden: vec![24, 24],
        dataset: DatasetSource::Synthetic(SyntheticSpec {
            classes: 3,
            n: 300,
            side: 4,
            clusters: 2,
            ..SyntheticSpec::default()
        }),
        cycles: 3,
        epochs: 3,
        batch_size: 16,
        seeds: vec![0, 1],
        snapshot_rows: 64,
        ..ExperimentConfig::default()
    }
}

fn run(cfg: &ExperimentConfig, seed: u64) -> RunOutcome {
    let data = cfg.dataset.load().unwrap();
    run_iterative_pruning(cfg, &data, seed).unwrap()
}

#[test]
fn every_criterion_and_optimizer_completes_deterministically() {
    let rules = [
        ScoringRule::GlobalMagnitude,
        ScoringRule::LayerMagnitude,
        ScoringRule::GlobalGradient,
        ScoringRule::LayerGradient,
        ScoringRule::StructuredL1,
    ];
    let optimizers = [
        OptimizerKind::sgd(0.9, 1e-4),
        OptimizerKind::adam(0.0),
        OptimizerKind::rmsprop(1e-4),
    ];
    for (i, rule) in rules.into_iter().enumerate() {
        let cfg = ExperimentConfig {
            criterion: PruneCriterion::new(rule),
            optimizer: optimizers[i % optimizers.len()],
            schedule: if matches!(optimizers[i % 3], OptimizerKind::Sgd { .. }) {
                ScheduleSpec::Constant { a: 1e-2 }
            } else {
                ScheduleSpec::Constant { a: 1e-3 }
            },
            ..small_config()
        };
        let a = run(&cfg, 4);
        let b = run(&cfg, 4);
        assert!(a.failure.is_none(), "{rule}: {:?}", a.failure);
        assert_eq!(a.records().len(), 4, "{rule}");
        assert_eq!(a.records(), b.records(), "{rule} is not deterministic");
        let lambdas: Vec<f64> = a.records().iter().map(|r| r.lambda).collect();
        assert!(lambdas.windows(2).all(|w| w[1] < w[0]), "{rule}: {lambdas:?}");
    }
}

#[test]
fn structured_pruning_removes_whole_neurons() {
    let cfg = ExperimentConfig {
        criterion: PruneCriterion::new(ScoringRule::StructuredL1),
        ..small_config()
    };
    let data = cfg.dataset.load().unwrap();
    let exp = Experiment::new(&cfg, &data, 0).unwrap();
    let mut net = exp.initial_network().unwrap();
    for m in 1..=3 {
        exp.prune_for_cycle(&mut net, m, None).unwrap();
    }
    // 24 -> 20 -> 16 -> 13 alive neurons per hidden layer
    let mut upstream_alive = vec![true; net.input_dim()];
    for l in 0..2 {
        let alive = alive_neurons(&net, l);
        assert_eq!(alive.len(), 13);
        for j in 0..24 {
            let expected: Vec<bool> = if alive.contains(&j) {
                upstream_alive.clone()
            } else {
                vec![false; upstream_alive.len()]
            };
            assert_eq!(net.masks()[l].row(j).to_vec(), expected, "layer {l} neuron {j}");
        }
        upstream_alive = (0..24).map(|j| alive.contains(&j)).collect();
    }
    assert_eq!(net.masks()[2].iter().filter(|&&a| !a).count(), 3 * 11);
}

#[test]
fn structured_pruning_keeps_the_last_neuron() {
    let cfg = ExperimentConfig {
        hidden: vec![3],
        criterion: PruneCriterion::new(ScoringRule::StructuredL1),
        prune_rate: 0.5,
        cycles: 5,
        ..small_config()
    };
    let data = cfg.dataset.load().unwrap();
    let exp = Experiment::new(&cfg, &data, 0).unwrap();
    let mut net = exp.initial_network().unwrap();
    let mut alive = Vec::new();
    for m in 1..=5 {
        exp.prune_for_cycle(&mut net, m, None).unwrap();
        alive.push(alive_neurons(&net, 0).len());
    }
    // floor(0.5 * 1) = 0, so the last neuron survives every later cycle
    assert_eq!(alive, [2, 1, 1, 1, 1]);
    assert!(run(&cfg, 0).failure.is_none());
}

#[test]
fn divergence_is_reported_with_partial_records() {
    let cfg = ExperimentConfig {
        schedule: ScheduleSpec::Constant { a: 1e6 },
        ..small_config()
    };
    let out = run(&cfg, 0);
    let failure = out.failure.expect("a learning rate of 1e6 must diverge");
    assert_eq!(failure.kind, FailureKind::Diverged);
    assert_eq!(out.cycles.len() as u32, failure.cycle);
}

#[test]
fn batch_norm_runs_and_prunes_only_weights() {
    let cfg = ExperimentConfig {
        batch_norm: true,
        ..small_config()
    };
    let out = run(&cfg, 2);
    assert!(out.failure.is_none(), "{:?}", out.failure);
    assert!(out.records().iter().all(|r| r.best_val_acc > 0.34));
}

#[test]
fn parallel_seeds_match_sequential_runs() {
    let cfg = small_config();
    let data = cfg.dataset.load().unwrap();
    let parallel = run_all_seeds(&cfg, &data).unwrap();
    for (p, &seed) in parallel.iter().zip(&cfg.seeds) {
        assert_eq!(p.seed, seed);
        assert_eq!(p.records(), run(&cfg, seed).records());
    }
}

#[test]
fn scyc_records_its_growing_peak() {
    let cfg = ExperimentConfig {
        schedule: "scyc(4e-2, 6e-2, 1, 4, 5, 30, 45, nil)".parse().unwrap(),
        ..small_config()
    };
    let out = run(&cfg, 0);
    let peaks: Vec<f64> = out.records().iter().map(|r| r.max_lr).collect();
    assert_eq!(&peaks[..2], &[0.04, 0.04]);
    assert!(peaks[2] > peaks[1] && peaks[3] > peaks[2]);
}

#[test]
fn idx_files_load_exactly_what_was_generated() {
    let spec = SyntheticSpec {
        classes: 2,
        n: 1000,
        seed: 7,
        ..SyntheticSpec::default()
    };
    let (images, labels) = spec.to_idx().unwrap();
    let dir = tempfile::tempdir().unwrap();
    let (ip, lp) = (dir.path().join("i"), dir.path().join("l"));
    std::fs::write(&ip, &images).unwrap();
    std::fs::write(&lp, &labels).unwrap();
    let loaded = load_idx(&ip, &lp).unwrap();
    let generated = spec.generate().unwrap();
    assert_eq!(loaded.features, generated.features);
    assert_eq!(loaded.labels, generated.labels);
    assert_eq!(spec.to_idx().unwrap(), (images, labels));
}

#[test]
fn idx_errors_name_the_field() {
    let (images, labels) = encode_idx(&[0, 255, 7, 9], &[1, 0], 1, 2);
    let ok = parse_idx(&images, &labels).unwrap();
    assert_eq!(ok.features[[0, 1]], 1.0);

    let mut bad_magic = images.clone();
    bad_magic[3] = 0x01;
    let err = parse_idx(&bad_magic, &labels).unwrap_err().to_string();
    assert!(err.contains("magic"), "{err}");

    let (_, three_labels) = encode_idx(&[0; 6], &[0, 1, 2], 1, 2);
    let err = parse_idx(&images, &three_labels).unwrap_err().to_string();
    assert!(err.contains("count"), "{err}");

    let err = parse_idx(&images[..images.len() - 1], &labels).unwrap_err();
    assert!(matches!(err, Error::Format { .. }), "{err}");
}

#[test]
fn artifacts_round_trip_and_rerender_identically() {
    let cfg = ExperimentConfig {
        seeds: vec![5],
        ..small_config()
    };
    let data = cfg.dataset.load().unwrap();
    let runs = run_all_seeds(&cfg, &data).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let manifest = write_run_artifacts(dir.path(), &cfg, &runs).unwrap();
    for p in [
        &manifest.records_csv,
        &manifest.histograms_csv,
        &manifest.aggregates_csv,
        &manifest.svg_dir,
    ] {
        assert!(p.exists(), "{}", p.display());
    }
    let stored: Vec<CycleRecord> = read_csv_file(&manifest.records_csv).unwrap();
    assert_eq!(stored, runs[0].records());

    let first: Vec<(String, Vec<u8>)> = svg_files(&manifest.svg_dir);
    std::fs::remove_dir_all(&manifest.svg_dir).unwrap();
    let rows: Vec<HistogramRow> = read_csv_file(&manifest.histograms_csv).unwrap();
    scyc::report::render_histograms(&rows, &manifest.svg_dir).unwrap();
    let again = svg_files(&manifest.svg_dir);
    let hist_only: Vec<_> = first.into_iter().filter(|(n, _)| n.starts_with("hist_")).collect();
    assert_eq!(hist_only, again);
}

fn svg_files(dir: &std::path::Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().into_string().unwrap(), std::fs::read(e.path()).unwrap())
        })
        .collect();
    files.sort();
    files
}
