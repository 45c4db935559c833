//! Central-difference checks of every hand-written reverse pass.

mod common;

use approx::assert_relative_eq;
use ndarray::{Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rogpl::gcn::{backward, forward, GcnParams};
use rogpl::proto::{
    classification_loss, diversity_loss, score_backward, score_rows, BorderPrototype, InteriorMask,
    PrototypePool,
};

const H: f64 = 1e-5;

fn randn(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.sample(StandardNormal))
}

fn central(f: impl Fn(f64) -> f64) -> f64 {
    (f(H) - f(-H)) / (2.0 * H)
}

#[test]
fn classification_loss_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let s = randn(4, 3, &mut rng);
    let labels = [0, 2, 1, 1];
    let t = 0.7;
    let (_, g) = classification_loss(s.view(), &labels, t).unwrap();
    for ((i, j), &a) in g.indexed_iter() {
        let n = central(|d| {
            let mut p = s.clone();
            p[[i, j]] += d;
            classification_loss(p.view(), &labels, t).unwrap().0
        });
        assert_relative_eq!(a, n, max_relative = 1e-4, epsilon = 1e-9);
    }
}

#[test]
fn diversity_loss_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let p = randn(3, 5, &mut rng);
    let (_, g) = diversity_loss(p.view());
    for ((i, j), &a) in g.indexed_iter() {
        let n = central(|d| {
            let mut q = p.clone();
            q[[i, j]] += d;
            diversity_loss(q.view()).0
        });
        assert_relative_eq!(a, n, max_relative = 1e-4, epsilon = 1e-9);
    }
}

#[test]
fn score_backward_matches_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let z = randn(5, 4, &mut rng);
    let mut pool = PrototypePool::<f64>::init(3, 4, 2).unwrap();
    pool.border[1].push(BorderPrototype {
        cluster: 0,
        vector: randn(1, 4, &mut rng).index_axis(Axis(0), 0).to_owned(),
    });
    let w = randn(5, 3, &mut rng);
    let objective = |z: &Array2<f64>, pool: &PrototypePool<f64>| (score_rows(z.view(), pool).unwrap().scores * &w).sum();
    let sm = score_rows(z.view(), &pool).unwrap();
    let (gz, gp) = score_backward(z.view(), &pool, &sm, w.view(), InteriorMask::All);
    for ((i, j), &a) in gz.indexed_iter() {
        let n = central(|d| {
            let mut q = z.clone();
            q[[i, j]] += d;
            objective(&q, &pool)
        });
        assert_relative_eq!(a, n, max_relative = 1e-4, epsilon = 1e-9);
    }
    for ((i, j), &a) in gp.indexed_iter() {
        let n = central(|d| {
            let mut q = pool.clone();
            q.interior[[i, j]] += d;
            objective(&z, &q)
        });
        assert_relative_eq!(a, n, max_relative = 1e-4, epsilon = 1e-9);
    }
}

#[test]
fn class_only_mask_drops_foreign_samples() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let z = randn(4, 3, &mut rng);
    let pool = PrototypePool::<f64>::init(2, 3, 5).unwrap();
    let sm = score_rows(z.view(), &pool).unwrap();
    let w = randn(4, 2, &mut rng);
    let (_, full) = score_backward(z.view(), &pool, &sm, w.view(), InteriorMask::All);
    let none = [None; 4];
    let (_, masked) = score_backward(z.view(), &pool, &sm, w.view(), InteriorMask::ClassOnly(&none));
    assert!(masked.iter().all(|&v| v == 0.0));
    assert!(full.iter().any(|&v| v != 0.0));
}

#[test]
fn gcn_backward_with_input_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let g = common::random_graph(7, 4, 2, &mut rng);
    let a = g.normalize_adjacency();
    let mut p = GcnParams::<f64>::init(4, 5, 3, 3).unwrap();
    p.b1.fill(0.1);
    p.touch();
    let w = randn(7, 3, &mut rng);
    let x = g.features().clone();
    let objective = |p: &GcnParams<f64>, x: &Array2<f64>| (forward(p, &a, x.view()).unwrap().0 * &w).sum();
    let (_, cache) = forward(&p, &a, x.view()).unwrap();
    let grads = backward(&p, &cache, w.view(), true).unwrap();
    let gx = grads.x.unwrap();
    for ((i, j), &an) in gx.indexed_iter() {
        let n = central(|d| {
            let mut q = x.clone();
            q[[i, j]] += d;
            objective(&p, &q)
        });
        assert_relative_eq!(an, n, max_relative = 1e-4, epsilon = 1e-9);
    }
    for ((i, j), &an) in grads.w1.indexed_iter() {
        let n = central(|d| {
            let mut q = p.clone();
            q.w1[[i, j]] += d;
            q.touch();
            objective(&q, &x)
        });
        assert_relative_eq!(an, n, max_relative = 1e-4, epsilon = 1e-9);
    }
}

#[test]
fn total_loss_gradient_on_random_instances() {
    for seed in 100..110 {
        let inst = common::GradInstance::random(seed);
        let err = inst.max_relative_error(H, 1e-6);
        assert!(err < 1e-4, "seed {seed}: relative error {err:e}");
    }
}
