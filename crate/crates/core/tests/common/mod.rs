#![allow(dead_code)]

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rogpl::graph::Graph;

pub struct Blobs {
    pub graph: Graph<f64>,
    pub truth: Vec<usize>,
    /// Nodes whose observed label differs from `truth`.
    pub flipped: Vec<usize>,
}

/// `n_classes` unit-variance Gaussian blobs in `dim >= n_classes` dimensions,
/// centres pairwise `separation` apart, with homophilous random edges. A
/// `noise_rate` fraction of nodes get a different random label.
pub fn blobs(n: usize, n_classes: usize, dim: usize, separation: f64, noise_rate: f64, seed: u64) -> Blobs {
    assert!(dim >= n_classes);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let truth: Vec<usize> = (0..n).map(|i| i % n_classes).collect();
    let mut x = Array2::<f64>::zeros((n, dim));
    for i in 0..n {
        for d in 0..dim {
            let centre = if d == truth[i] { separation / 2f64.sqrt() } else { 0.0 };
            let eps: f64 = rng.sample(StandardNormal);
            x[[i, d]] = centre + eps;
        }
    }
    let per_class = (n / n_classes).max(1) as f64;
    let (p_in, p_out) = ((6.0 / per_class).min(1.0), 0.3 / n as f64);
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            let p = if truth[i] == truth[j] { p_in } else { p_out };
            if rng.random::<f64>() < p {
                edges.push((i, j));
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let n_flip = (noise_rate * n as f64).round() as usize;
    let mut flipped: Vec<usize> = order[..n_flip].to_vec();
    flipped.sort_unstable();
    let mut labels: Vec<Option<usize>> = truth.iter().map(|&c| Some(c)).collect();
    for &i in &flipped {
        let shift = rng.random_range(1..n_classes);
        labels[i] = Some((truth[i] + shift) % n_classes);
    }
    let graph = Graph::from_edges(x, &edges, labels, n_classes).expect("valid fixture");
    Blobs { graph, truth, flipped }
}

// ---- independent oracles -------------------------------------------------

use ndarray::{Array1, ArrayView1, ArrayView2};
use rogpl::bench::metrics::OpenSetLabel;
use rogpl::sparse::CsrMatrix;

/// Dense Gaussian elimination with partial pivoting; solves `a x = b`.
pub fn dense_solve(a: &Array2<f64>, b: &Array2<f64>) -> Array2<f64> {
    let n = a.nrows();
    let mut m = a.clone();
    let mut x = b.clone();
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&i, &j| m[[i, col]].abs().total_cmp(&m[[j, col]].abs()))
            .unwrap();
        for k in 0..n {
            m.swap([col, k], [piv, k]);
        }
        for k in 0..x.ncols() {
            x.swap([col, k], [piv, k]);
        }
        let d = m[[col, col]];
        for r in 0..n {
            if r == col {
                continue;
            }
            let f = m[[r, col]] / d;
            if f == 0.0 {
                continue;
            }
            for k in col..n {
                m[[r, k]] -= f * m[[col, k]];
            }
            for k in 0..x.ncols() {
                x[[r, k]] -= f * x[[col, k]];
            }
        }
    }
    for r in 0..n {
        let d = m[[r, r]];
        x.row_mut(r).mapv_inplace(|v| v / d);
    }
    x
}

/// `(I - alpha S) Y = Y0` with `S = D^-1/2 W D^-1/2` assembled densely.
pub fn dense_propagation(w: &Array2<f64>, y0: &Array2<f64>, alpha: f64) -> Array2<f64> {
    let n = w.nrows();
    let d: Vec<f64> = w.rows().into_iter().map(|r| r.sum()).collect();
    let mut a = Array2::<f64>::eye(n);
    for i in 0..n {
        for j in 0..n {
            if d[i] > 0.0 && d[j] > 0.0 {
                a[[i, j]] -= alpha * w[[i, j]] / (d[i].sqrt() * d[j].sqrt());
            }
        }
    }
    dense_solve(&a, y0)
}

/// Random symmetric nonnegative zero-diagonal matrix, sparse and dense.
pub fn random_symmetric(n: usize, density: f64, rng: &mut ChaCha8Rng) -> (CsrMatrix<f64>, Array2<f64>) {
    let mut dense = Array2::zeros((n, n));
    for i in 0..n {
        for j in i + 1..n {
            if rng.random::<f64>() < density {
                let v = rng.random_range(0.05..2.0);
                dense[[i, j]] = v;
                dense[[j, i]] = v;
            }
        }
    }
    let trip = dense.indexed_iter().filter(|(_, &v)| v != 0.0).map(|((i, j), &v)| (i, j, v));
    (CsrMatrix::from_triplets(n, n, trip).unwrap(), dense)
}

/// Macro-F1 from an explicit confusion matrix over every label that occurs.
pub fn brute_macro_f1(preds: &[OpenSetLabel], truth: &[OpenSetLabel]) -> f64 {
    let mut labels: Vec<OpenSetLabel> = preds.iter().chain(truth).copied().collect();
    labels.sort();
    labels.dedup();
    let k = labels.len();
    let idx = |l: &OpenSetLabel| labels.iter().position(|x| x == l).unwrap();
    let mut cm = vec![vec![0usize; k]; k];
    for (p, t) in preds.iter().zip(truth) {
        cm[idx(t)][idx(p)] += 1;
    }
    let mut total = 0.0;
    for c in 0..k {
        let tp = cm[c][c] as f64;
        let pred_c: usize = (0..k).map(|r| cm[r][c]).sum();
        let true_c: usize = cm[c].iter().sum();
        let f1 = if tp == 0.0 { 0.0 } else { 2.0 * tp / (pred_c + true_c) as f64 };
        total += f1;
    }
    total / k as f64
}

/// Pair-counting AUROC, ties worth one half.
pub fn brute_auroc(scores: &[f64], is_unknown: &[bool]) -> f64 {
    let (mut num, mut pairs) = (0.0, 0.0);
    for (i, &u) in is_unknown.iter().enumerate() {
        if !u {
            continue;
        }
        for (j, &k) in is_unknown.iter().enumerate() {
            if k {
                continue;
            }
            pairs += 1.0;
            if scores[i] > scores[j] {
                num += 1.0;
            } else if scores[i] == scores[j] {
                num += 0.5;
            }
        }
    }
    num / pairs
}

/// Clean-selection rule evaluated directly on one row.
pub fn eq5(row: ArrayView1<'_, f64>, given: usize, eta: f64) -> bool {
    let c = row.len() as f64;
    if row[given] > 1.0 / c {
        return true;
    }
    row.iter().cloned().fold(f64::NEG_INFINITY, f64::max) > eta
}

// ---- loss / gradient fixture ----------------------------------------------

use rogpl::gcn::{backward, forward, GcnParams};
use rogpl::proto::{
    classification_loss, compute_border_prototypes, cluster_regions, diversity_loss, score_backward,
    score_rows, InteriorMask, PrototypePool,
};

/// A random small problem for checking `L = L_cls + lambda * L_div`.
pub struct GradInstance {
    pub graph: Graph<f64>,
    pub params: GcnParams<f64>,
    pub pool: PrototypePool<f64>,
    pub labels: Vec<usize>,
    pub lambda: f64,
    pub temperature: f64,
}

pub fn random_graph(n: usize, s: usize, c: usize, rng: &mut ChaCha8Rng) -> Graph<f64> {
    let x = Array2::from_shape_fn((n, s), |_| rng.sample::<f64, _>(StandardNormal));
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if rng.random::<f64>() < 0.3 {
                edges.push((i, j));
            }
        }
    }
    let labels = (0..n).map(|i| Some(if i < c { i } else { rng.random_range(0..c) })).collect();
    Graph::from_edges(x, &edges, labels, c).unwrap()
}

impl GradInstance {
    pub fn random(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = rng.random_range(2..=4);
        let n = rng.random_range(c.max(6)..=20);
        let s = rng.random_range(1..=8);
        let h = rng.random_range(1..=6);
        let d = rng.random_range(2..=5);
        let graph = random_graph(n, s, c, &mut rng);
        let mut params = GcnParams::init(s, h, d, rng.random()).unwrap();
        // Nonzero biases keep ReLU inputs away from exact zeros.
        params.b1.mapv_inplace(|_| rng.random_range(-0.5..0.5));
        params.b2.mapv_inplace(|_| rng.random_range(-0.5..0.5));
        params.touch();
        let mut pool = PrototypePool::init(c, d, rng.random()).unwrap();
        let labels: Vec<usize> = (0..n).map(|i| graph.label(i).unwrap()).collect();
        let a = graph.normalize_adjacency();
        let (z, _) = forward(&params, &a, graph.features().view()).unwrap();
        let k = (n / 3).max(1);
        if let Ok(ca) = cluster_regions(z.view(), &labels, c, k, seed, 50) {
            pool.border = compute_border_prototypes(&ca, z.view());
        }
        GradInstance {
            graph,
            params,
            pool,
            labels,
            lambda: rng.random_range(0.0..0.5),
            temperature: rng.random_range(0.2..1.0),
        }
    }

    pub fn loss(&self, params: &GcnParams<f64>, interior: ArrayView2<'_, f64>) -> f64 {
        let a = self.graph.normalize_adjacency();
        let (z, _) = forward(params, &a, self.graph.features().view()).unwrap();
        let pool = PrototypePool {
            interior: interior.to_owned(),
            border: self.pool.border.clone(),
        };
        let sm = score_rows(z.view(), &pool).unwrap();
        let (l_cls, _) = classification_loss(sm.scores.view(), &self.labels, self.temperature).unwrap();
        let (l_div, _) = diversity_loss(interior);
        l_cls + self.lambda * l_div
    }

    /// Smallest gap between a ReLU input and zero, and between the best and
    /// second-best prototype of any class; finite differences are only
    /// meaningful when both are well above the step.
    pub fn kink_margin(&self) -> f64 {
        let a = self.graph.normalize_adjacency();
        let (z, cache) = forward(&self.params, &a, self.graph.features().view()).unwrap();
        let relu = cache.hidden_pre.iter().map(|v| v.abs()).fold(f64::INFINITY, f64::min);
        let mut gap = f64::INFINITY;
        let cos = |u: ArrayView1<'_, f64>, v: ArrayView1<'_, f64>| u.dot(&v) / (u.dot(&u).sqrt() * v.dot(&v).sqrt());
        for zi in z.rows() {
            for c in 0..self.pool.n_classes() {
                let mut s: Vec<f64> = std::iter::once(cos(zi, self.pool.interior.row(c)))
                    .chain(self.pool.border[c].iter().map(|b| cos(zi, b.vector.view())))
                    .collect();
                s.sort_by(|a, b| b.total_cmp(a));
                if s.len() > 1 {
                    gap = gap.min(s[0] - s[1]);
                }
            }
        }
        relu.min(gap)
    }

    /// Analytic gradients: encoder tensors (w1, b1, w2, b2) and interior prototypes.
    pub fn analytic(&self) -> (Vec<Array1<f64>>, Array2<f64>) {
        let a = self.graph.normalize_adjacency();
        let (z, cache) = forward(&self.params, &a, self.graph.features().view()).unwrap();
        let sm = score_rows(z.view(), &self.pool).unwrap();
        let (_, g_s) = classification_loss(sm.scores.view(), &self.labels, self.temperature).unwrap();
        let (g_z, g_p) = score_backward(z.view(), &self.pool, &sm, g_s.view(), InteriorMask::All);
        let (_, g_div) = diversity_loss(self.pool.interior.view());
        let g = backward(&self.params, &cache, g_z.view(), false).unwrap();
        let flat = |x: &[f64]| Array1::from(x.to_vec());
        (
            vec![
                flat(g.w1.as_slice().unwrap()),
                flat(g.b1.as_slice().unwrap()),
                flat(g.w2.as_slice().unwrap()),
                flat(g.b2.as_slice().unwrap()),
            ],
            g_p + &(g_div * self.lambda),
        )
    }

    /// Central differences with step `h` for every encoder and interior entry,
    /// returning the worst relative error `|a - n| / max(|a|, |n|, floor)`.
    pub fn max_relative_error(&self, h: f64, floor: f64) -> f64 {
        let (enc, g_p) = self.analytic();
        let rel = |a: f64, n: f64| (a - n).abs() / a.abs().max(n.abs()).max(floor);
        let mut worst: f64 = 0.0;
        for t in 0..4 {
            let len = enc[t].len();
            for k in 0..len {
                let eval = |delta: f64| {
                    let mut p = self.params.clone();
                    let slot = match t {
                        0 => &mut p.w1.as_slice_mut().unwrap()[k],
                        1 => &mut p.b1.as_slice_mut().unwrap()[k],
                        2 => &mut p.w2.as_slice_mut().unwrap()[k],
                        _ => &mut p.b2.as_slice_mut().unwrap()[k],
                    };
                    *slot += delta;
                    p.touch();
                    self.loss(&p, self.pool.interior.view())
                };
                let num = (eval(h) - eval(-h)) / (2.0 * h);
                worst = worst.max(rel(enc[t][k], num));
            }
        }
        for ((i, j), &a) in g_p.indexed_iter() {
            let eval = |delta: f64| {
                let mut p = self.pool.interior.clone();
                p[[i, j]] += delta;
                self.loss(&self.params, p.view())
            };
            let num = (eval(h) - eval(-h)) / (2.0 * h);
            worst = worst.max(rel(a, num));
        }
        worst
    }
}
