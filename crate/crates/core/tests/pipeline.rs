use std::collections::BTreeMap;

use meg_core::data::{load_csv, split, synth_task, CsvColumns, SynthKind, Task, DEFAULT_FRACTIONS};
use meg_core::fingerprint::FingerprintConfig;
use meg_core::gnn::{train_predictor, PredictorModel, TrainConfig};
use meg_core::rl::{generate_counterfactuals, select_action, EpisodeConfig, QNetwork};
use meg_core::{action_signature, canonical_key, check_validity, enumerate_actions, parse_smiles};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn small_train() -> TrainConfig {
    TrainConfig {
        hidden_size: 16,
        head_sizes: vec![16],
        epochs: 15,
        patience: 5,
        seed: 3,
        ..TrainConfig::tox21()
    }
}

fn small_episode() -> EpisodeConfig {
    EpisodeConfig {
        fingerprint: FingerprintConfig {
            radius: 2,
            width: 256,
        },
        q_hidden: vec![32],
        train_epochs: 60,
        batch_size: 16,
        seed: 5,
        ..EpisodeConfig::default()
    }
}

#[test]
fn csv_and_checkpoint_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth_task(SynthKind::ContainsNitrogen, 80, 2).unwrap();
    let csv = dir.path().join("d.csv");
    data.write_csv(std::fs::File::create(&csv).unwrap())
        .unwrap();
    let (again, skipped) = load_csv(&csv, Task::BINARY, &CsvColumns::default()).unwrap();
    assert!(skipped.is_empty());
    assert_eq!(again.len(), data.len());
    for (a, b) in again.records().iter().zip(data.records()) {
        assert_eq!((a.smiles.as_str(), &a.label), (b.smiles.as_str(), &b.label));
    }

    let (train, val, _) = split(&data, DEFAULT_FRACTIONS, 2).unwrap();
    let model = train_predictor(&train, &val, &small_train()).unwrap().model;
    let path = dir.path().join("m.ckpt");
    model.save(std::fs::File::create(&path).unwrap()).unwrap();
    let loaded =
        PredictorModel::load(std::io::BufReader::new(std::fs::File::open(&path).unwrap())).unwrap();
    assert_eq!(loaded.parameters(), model.parameters());
    for r in data.records() {
        assert_eq!(
            loaded.predict_and_embed(&r.molecule).unwrap(),
            model.predict_and_embed(&r.molecule).unwrap()
        );
    }
}

#[test]
fn counterfactuals_are_valid_distinct_single_edits() {
    let data = synth_task(SynthKind::ContainsNitrogen, 60, 4).unwrap();
    let (train, val, _) = split(&data, DEFAULT_FRACTIONS, 4).unwrap();
    let model = train_predictor(&train, &val, &small_train()).unwrap().model;
    let cfg = small_episode();
    for smiles in ["CC(N)CO", "NCCS", "C1CC(N)C1"] {
        let m = parse_smiles(smiles).unwrap();
        let out = generate_counterfactuals(&model, &m, &cfg).unwrap();
        let start = canonical_key(&m);
        let legal: Vec<String> = enumerate_actions(&m, &cfg.vocab, false)
            .unwrap()
            .iter()
            .map(action_signature)
            .collect();
        let mut keys = std::collections::BTreeSet::new();
        assert!(!out.counterfactuals.is_empty() && out.counterfactuals.len() <= cfg.top_k);
        for (i, r) in out.counterfactuals.iter().enumerate() {
            assert_eq!(r.rank, i + 1);
            assert!(check_validity(&r.molecule).valid, "{}", r.smiles);
            let key = canonical_key(&r.molecule);
            assert_ne!(key, start, "input returned as its own counterfactual");
            assert!(keys.insert(key), "duplicate {}", r.smiles);
            assert_eq!(r.edit_trace.len(), 1);
            assert!(legal.contains(&r.edit_trace[0]), "{}", r.edit_trace[0]);
            assert!((0.0..=1.0).contains(&r.similarity));
            assert_eq!(
                canonical_key(&parse_smiles(&r.smiles).unwrap()),
                canonical_key(&r.molecule)
            );
        }
        assert!(out
            .counterfactuals
            .windows(2)
            .all(|w| w[0].reward >= w[1].reward));
    }
}

#[test]
fn top_one_is_deterministic() {
    let model = PredictorModel::new(Task::Regression, 8, &[8], 0.1, 9);
    let m = parse_smiles("CCOC").unwrap();
    let cfg = EpisodeConfig {
        top_k: 1,
        ..small_episode()
    };
    let a = generate_counterfactuals(&model, &m, &cfg).unwrap();
    let b = generate_counterfactuals(&model, &m, &cfg).unwrap();
    assert_eq!(a.counterfactuals.len(), 1);
    assert_eq!(a.report(&cfg).to_json(), b.report(&cfg).to_json());
    assert_eq!(a.input.regression_target, a.input.prediction.value());
}

#[test]
fn full_exploration_is_uniform() {
    // CC with vocab C, N, O has 9 legal edits: 6 additions, 2 upgrades, 1 removal
    let m = parse_smiles("CC").unwrap();
    let cfg = small_episode();
    let legal = enumerate_actions(&m, &cfg.vocab, false).unwrap();
    assert_eq!(legal.len(), 9);
    let q = QNetwork::new(cfg.fingerprint.width + 1, &[8], 1);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let draws = 10_000;
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for _ in 0..draws {
        let a = select_action(&q, &m, 1, 1.0, &cfg, &mut rng).unwrap();
        *counts.entry(action_signature(&a)).or_default() += 1;
    }
    assert_eq!(counts.len(), legal.len());
    let expected = draws as f64 / legal.len() as f64;
    let chi2: f64 = counts
        .values()
        .map(|&c| (c as f64 - expected).powi(2) / expected)
        .sum();
    // 99th percentile of chi-square with 8 degrees of freedom
    assert!(chi2 < 20.09, "chi-square {chi2}");
}
