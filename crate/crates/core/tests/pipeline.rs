//! End-to-end behaviour of the training loop and the open-set predictor.

mod common;

use ndarray::{array, Array2};
use rogpl::bench::metrics::OpenSetLabel;
use rogpl::gcn::GcnParams;
use rogpl::graph::{split_nodes, Graph, SplitSpec};
use rogpl::pipeline::{
    from_bytes, predict, to_bytes, train, train_with_observer, AblationFlags, Model, TrainConfig,
    TrainDiagnostics,
};
use rogpl::proto::PrototypePool;

fn small_config(seed: u64) -> TrainConfig {
    TrainConfig {
        epochs: 30,
        warmup_epochs: 10,
        refresh_period: 5,
        lr: 1e-2,
        hidden_dim: 16,
        latent_dim: 8,
        k_nn: 8,
        seed,
        ..TrainConfig::default()
    }
}

struct Fixture {
    blobs: common::Blobs,
    train: Vec<usize>,
    val: Vec<usize>,
    test: Vec<usize>,
}

fn fixture(noise: f64, seed: u64) -> Fixture {
    let blobs = common::blobs(90, 3, 6, 6.0, noise, seed);
    let s = split_nodes(&blobs.graph, &SplitSpec::with_seed(seed)).unwrap();
    Fixture {
        blobs,
        train: s.train,
        val: s.val,
        test: s.test,
    }
}

fn run(f: &Fixture, cfg: &TrainConfig, flags: AblationFlags) -> Model<f64> {
    train(&f.blobs.graph, &f.train, &f.val, cfg, flags).unwrap()
}

#[test]
fn identical_seeds_give_identical_traces() {
    let f = fixture(0.1, 1);
    let a = run(&f, &small_config(4), AblationFlags::default());
    let b = run(&f, &small_config(4), AblationFlags::default());
    assert_eq!(a.diagnostics, b.diagnostics);
    assert_eq!(to_bytes(&a).unwrap(), to_bytes(&b).unwrap());
    let c = run(&f, &small_config(5), AblationFlags::default());
    assert_ne!(a.diagnostics.log, c.diagnostics.log);
}

#[test]
fn recorded_loss_is_cls_plus_weighted_div() {
    let f = fixture(0.1, 2);
    for name in ["full", "no-ldiv", "no-region"] {
        let cfg = small_config(0);
        let flags = AblationFlags::from_name(name).unwrap();
        let m = run(&f, &cfg, flags);
        let lambda = if flags.diversity { cfg.lambda } else { 0.0 };
        for r in &m.diagnostics.log {
            assert!((r.loss - (r.l_cls + lambda * r.l_div)).abs() <= 1e-9, "{name} epoch {}", r.epoch);
            if !flags.diversity {
                assert_eq!(r.loss, r.l_cls);
            }
        }
    }
}

#[test]
fn clean_set_bounds() {
    let f = fixture(0.2, 3);
    let full = run(&f, &small_config(1), AblationFlags::default());
    assert!(full.diagnostics.log.iter().all(|r| r.n_clean <= f.train.len()));
    assert!(!full.diagnostics.denoise.is_empty());

    let off = run(&f, &small_config(1), AblationFlags::from_name("no-denoise").unwrap());
    assert!(off.diagnostics.log.iter().all(|r| r.n_clean == f.train.len()));
    assert!(off.diagnostics.denoise.is_empty(), "propagation must never run");
    assert_eq!(off.diagnostics.final_clean, f.train);
}

#[test]
fn full_warmup_equals_no_denoise() {
    let f = fixture(0.2, 4);
    let cfg = TrainConfig {
        warmup_epochs: 30,
        ..small_config(2)
    };
    let a = run(&f, &cfg, AblationFlags::default());
    let b = run(&f, &cfg, AblationFlags::from_name("no-denoise").unwrap());
    assert_eq!(a.diagnostics, b.diagnostics);
    assert_eq!(a.params.w1, b.params.w1);
    assert_eq!(a.pool, b.pool);
}

#[test]
fn no_region_variant_keeps_no_border_prototypes() {
    let f = fixture(0.1, 5);
    let m = run(&f, &small_config(3), AblationFlags::from_name("no-region").unwrap());
    assert_eq!(m.pool.n_border(), 0);
}

#[test]
fn no_ldiv_changes_prototype_updates_only_through_lambda() {
    let f = fixture(0.1, 6);
    let zero_lambda = TrainConfig {
        lambda: 0.0,
        ..small_config(3)
    };
    let a = run(&f, &zero_lambda, AblationFlags::default());
    let b = run(&f, &small_config(3), AblationFlags::from_name("no-ldiv").unwrap());
    assert_eq!(a.pool, b.pool);
    assert_eq!(
        a.diagnostics.log.iter().map(|r| r.loss).collect::<Vec<_>>(),
        b.diagnostics.log.iter().map(|r| r.loss).collect::<Vec<_>>()
    );
}

#[test]
fn observer_sees_every_epoch() {
    let f = fixture(0.1, 7);
    let mut seen = Vec::new();
    train_with_observer(&f.blobs.graph, &f.train, &f.val, &small_config(0), AblationFlags::default(), |s| {
        assert_eq!(s.clean.n_clean(), s.record.n_clean);
        seen.push(s.record.epoch);
    })
    .unwrap();
    assert_eq!(seen, (0..30).collect::<Vec<_>>());
}

#[test]
fn unknown_set_grows_with_tau() {
    let f = fixture(0.1, 8);
    let mut m = run(&f, &small_config(0), AblationFlags::default());
    let mut prev: Vec<bool> = vec![false; f.test.len()];
    for k in 0..=20 {
        m.tau = k as f64 / 20.0;
        let p = predict(&m, &f.blobs.graph, &f.test).unwrap();
        let unk: Vec<bool> = p.iter().map(|x| x.label.is_unknown()).collect();
        for (a, b) in prev.iter().zip(&unk) {
            assert!(!a || *b, "tau {} released a node", m.tau);
        }
        for x in &p {
            assert!((0.0..=1.0).contains(&x.confidence));
            assert_eq!(x.label.is_unknown(), x.confidence < m.tau);
        }
        if k == 0 {
            assert!(unk.iter().all(|u| !u));
        }
        if k == 20 {
            assert!(unk.iter().all(|&u| u));
        }
        prev = unk;
    }
}

fn hand_model() -> (Model<f64>, Graph<f64>) {
    let eye = Array2::<f64>::eye(2);
    let params = GcnParams::from_parts(eye.clone(), array![0.0, 0.0], eye.clone(), array![0.0, 0.0]).unwrap();
    let pool = PrototypePool {
        interior: eye,
        border: vec![Vec::new(), Vec::new()],
    };
    let cfg = TrainConfig {
        temperature: 0.1,
        hidden_dim: 2,
        latent_dim: 2,
        ..TrainConfig::default()
    };
    let m = Model {
        params,
        pool,
        config: cfg,
        flags: AblationFlags::default(),
        n_classes: 2,
        tau: 0.5,
        diagnostics: TrainDiagnostics::default(),
        experiment: None,
    };
    let g = Graph::from_edges(array![[1.0, 0.0]], &[], vec![None], 2).unwrap();
    (m, g)
}

#[test]
fn node_on_a_prototype_is_confidently_that_class() {
    let (m, g) = hand_model();
    let p = predict(&m, &g, &[0]).unwrap();
    // softmax(10, 0)_0 = 1 / (1 + e^-10)
    assert!((p[0].confidence - 1.0 / (1.0 + (-10f64).exp())).abs() < 1e-12);
    assert!(p[0].confidence > 0.99);
    assert_eq!(p[0].label, OpenSetLabel::Known(0));
}

#[test]
fn predict_rejects_wrong_feature_width() {
    let (m, _) = hand_model();
    let g = Graph::from_edges(array![[1.0, 0.0, 2.0]], &[], vec![None], 2).unwrap();
    assert!(predict(&m, &g, &[0]).is_err());
}

#[test]
fn loaded_model_predicts_identically() {
    let blobs = common::blobs(20, 2, 4, 6.0, 0.1, 9);
    let s = split_nodes(&blobs.graph, &SplitSpec::with_seed(9)).unwrap();
    let m = train(&blobs.graph, &s.train, &s.val, &small_config(9), AblationFlags::default()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.rogpl");
    rogpl::pipeline::save(&m, &path).unwrap();
    let back: Model<f64> = rogpl::pipeline::load(&path).unwrap();
    let all: Vec<usize> = (0..20).collect();
    assert_eq!(predict(&m, &blobs.graph, &all).unwrap(), predict(&back, &blobs.graph, &all).unwrap());
    let again = dir.path().join("again.rogpl");
    rogpl::pipeline::save(&back, &again).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&again).unwrap());
    assert!(from_bytes::<f64>(&std::fs::read(&path).unwrap()[..100]).is_err());
}

#[test]
fn empty_clean_set_aborts() {
    let f = fixture(0.1, 10);
    // More declared classes than training nodes: no clean set can cover C.
    let labels: Vec<Option<usize>> = f.blobs.graph.labels().to_vec();
    let g = f.blobs.graph.with_labels(labels, 100).unwrap();
    let err = train(&g, &f.train, &f.val, &small_config(0), AblationFlags::default()).unwrap_err();
    assert!(matches!(err, rogpl::Error::CleanSetCollapsed { .. }), "{err}");
}

/// Planted-noise recovery on a 40-node, 2-blob graph with 10% flipped labels.
#[test]
fn planted_flips_are_excluded_from_clean_set() {
    let b = common::blobs(40, 2, 8, 10.0, 0.1, 0);
    let ids: Vec<usize> = (0..40).collect();
    let cfg = TrainConfig {
        k_nn: 10,
        ..TrainConfig::default()
    };
    let m = train(&b.graph, &ids, &[], &cfg, AblationFlags::default()).unwrap();
    let clean = &m.diagnostics.final_clean;
    let excluded = b.flipped.iter().filter(|i| !clean.contains(i)).count();
    assert!(
        excluded * 10 >= 9 * b.flipped.len(),
        "excluded {excluded} of {} flipped nodes",
        b.flipped.len()
    );
}
