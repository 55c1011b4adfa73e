use std::path::PathBuf;

use glgnn::config::{HeadKind, TrainConfig};
use glgnn::data::{generate_sbm, load_dataset, Dataset, SbmSpec};
use glgnn::grid::{grid_search, Grid};
use glgnn::train::{evaluate, train, Problem};

fn repo_data(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data").join(name)
}

fn small_sbm(seed: u64) -> Dataset {
    generate_sbm(&SbmSpec {
        blocks: vec![15, 15],
        feature_dim: 8,
        seed,
        ..SbmSpec::default()
    })
    .unwrap()
}

fn quick(cfg: &mut TrainConfig) {
    cfg.set("train.max_epochs", "30").unwrap();
    cfg.set("train.patience", "30").unwrap();
    cfg.set("model.hidden", "8").unwrap();
    cfg.set("head.expansion", "2").unwrap();
}

#[test]
fn cora_loads_with_expected_counts() {
    let ds = load_dataset(&repo_data("cora")).unwrap();
    assert_eq!(ds.num_nodes(), 2708);
    assert_eq!(ds.num_features(), 1433);
    assert_eq!(ds.num_classes(), 7);
    assert_eq!(ds.graph().stats().input_edges, 5429);
    assert_eq!(ds.graph().num_edges(), 5278);
    let public = ds.split("public").unwrap();
    assert_eq!((public.train.len(), public.val.len(), public.test.len()), (140, 500, 1000));
    assert!(ds.row_normalize());
}

#[test]
fn citeseer_loads_with_public_split() {
    let ds = load_dataset(&repo_data("citeseer")).unwrap();
    assert_eq!(ds.num_nodes(), 3327);
    assert_eq!(ds.num_features(), 3703);
    assert_eq!(ds.num_classes(), 6);
    let public = ds.split("public").unwrap();
    assert_eq!((public.train.len(), public.val.len(), public.test.len()), (120, 500, 1000));
}

#[test]
fn zero_learning_rate_leaves_parameters_untouched() {
    let ds = small_sbm(1);
    let split = ds.split("random-0").unwrap();
    let mut cfg = TrainConfig::default();
    quick(&mut cfg);
    for key in ["optim.lr", "optim.lr_gnn"] {
        cfg.set(key, "0").unwrap();
    }
    let problem = Problem::new(&ds, split);
    let (initial, _) = problem.init(&cfg);
    let before = evaluate(&problem, &initial, &cfg).unwrap();
    let out = train(&ds, split, &cfg).unwrap();
    assert_eq!(out.params, initial);
    assert_eq!(out.metrics.best_epoch, 1);
    assert_eq!(out.metrics.test_acc, before.test);
}

#[test]
fn seeded_training_is_bit_identical() {
    let ds = small_sbm(2);
    let split = ds.split("random-0").unwrap();
    let mut cfg = TrainConfig::default();
    quick(&mut cfg);
    let a = train(&ds, split, &cfg).unwrap();
    let b = train(&ds, split, &cfg).unwrap();
    assert_eq!(a.metrics.to_csv(), b.metrics.to_csv());
    cfg.set("train.seed", "1").unwrap();
    let c = train(&ds, split, &cfg).unwrap();
    assert_ne!(a.metrics.to_csv(), c.metrics.to_csv());
}

#[test]
fn early_stopping_reports_the_best_validation_epoch() {
    let ds = small_sbm(3);
    let split = ds.split("random-0").unwrap();
    let mut cfg = TrainConfig::default();
    quick(&mut cfg);
    cfg.set("train.max_epochs", "200").unwrap();
    cfg.set("train.patience", "5").unwrap();
    let m = train(&ds, split, &cfg).unwrap().metrics;
    let best = &m.records[m.best_epoch - 1];
    assert_eq!(best.val_acc, m.best_val_acc);
    assert_eq!(best.test_acc, m.test_acc);
    assert!(m.records.iter().all(|r| r.val_acc <= m.best_val_acc));
    assert!(m.records[..m.best_epoch - 1].iter().all(|r| r.val_acc < m.best_val_acc));
    if m.stopped_early {
        assert_eq!(m.records.len(), m.best_epoch + 5);
    }
}

#[test]
fn singleton_grid_matches_plain_training() {
    let ds = small_sbm(4);
    let split = ds.split("random-0").unwrap();
    let mut cfg = TrainConfig::default();
    quick(&mut cfg);
    let grid = Grid::from_axes(&["loss.gamma=0.1".into()]).unwrap();
    let outcome = grid_search(&Problem::new(&ds, split), &cfg, &grid, None, 0).unwrap();
    let direct = train(&ds, split, &cfg).unwrap().metrics;
    assert_eq!(outcome.trials.len(), 1);
    assert_eq!(outcome.best().best_val_acc, Some(direct.best_val_acc));
    assert_eq!(outcome.best().test_acc, Some(direct.test_acc));
    assert_eq!(outcome.best().best_epoch, direct.best_epoch);
}

#[test]
fn grid_prefers_a_learning_rate_that_moves() {
    let ds = small_sbm(5);
    let split = ds.split("random-0").unwrap();
    let mut cfg = TrainConfig::default();
    quick(&mut cfg);
    cfg.set("optim.lr_gnn", "0").unwrap();
    let grid = Grid::from_axes(&["optim.lr=0,0.01".into()]).unwrap();
    let outcome = grid_search(&Problem::new(&ds, split), &cfg, &grid, None, 0).unwrap();
    assert_eq!(outcome.best().config.optim.lr, 0.01);
    assert!(outcome.best().best_val_acc > outcome.trials[1].best_val_acc);
}

#[test]
fn linear_head_has_no_global_local_term() {
    let ds = small_sbm(6);
    let split = ds.split("random-0").unwrap();
    let mut cfg = TrainConfig::default();
    quick(&mut cfg);
    cfg.set("model.head", "linear").unwrap();
    assert_eq!(cfg.head.kind, HeadKind::Linear);
    let m = train(&ds, split, &cfg).unwrap().metrics;
    assert!(m.records.iter().all(|r| r.loss_gl == 0.0));
}

#[test]
fn every_backbone_separates_an_easy_sbm() {
    let ds = generate_sbm(&SbmSpec { seed: 7, ..SbmSpec::default() }).unwrap();
    let split = ds.split("random-0").unwrap();
    for backbone in ["gcn", "gat", "gcnii"] {
        let mut cfg = TrainConfig::default();
        cfg.set("model.backbone", backbone).unwrap();
        cfg.set("model.hidden", "16").unwrap();
        cfg.set("head.expansion", "2").unwrap();
        cfg.set("train.max_epochs", "100").unwrap();
        cfg.set("train.patience", "100").unwrap();
        let m = train(&ds, split, &cfg).unwrap().metrics;
        assert!(m.test_acc >= 0.9, "{backbone}: test accuracy {}", m.test_acc);
    }
}
