//! Open-set scenarios and label-noise injection.

use ndarray::{s, Array2};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::metrics::OpenSetLabel;
use crate::error::{Error, Result};
use crate::graph::{split_labels, Graph, SplitSpec};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Clean,
    IndNoise,
    OodNoise,
    UnknownTest,
    /// Known-class node outside the training set.
    Held,
}

/// A graph prepared for open-set training with noisy labels.
///
/// `graph` carries the observed labels: noisy ones on training nodes, ground
/// truth on validation / known test nodes, `None` on unknown-class nodes.
/// Class ids are compact (`0..C`) over the known classes.
#[derive(Debug, Clone)]
pub struct NoisyDataset<T> {
    pub graph: Graph<T>,
    pub truth: Vec<OpenSetLabel>,
    pub provenance: Vec<Provenance>,
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    /// Known-class test nodes followed by unknown test nodes.
    pub test: Vec<usize>,
    /// Original class ids held out as the unknown test class.
    pub unknown_classes: Vec<usize>,
    /// Original class ids used as OOD training noise (near mode only).
    pub ood_classes: Vec<usize>,
}

impl<T: Scalar> NoisyDataset<T> {
    pub fn n_classes(&self) -> usize {
        self.graph.n_classes()
    }

    pub fn count(&self, tag: Provenance) -> usize {
        self.provenance.iter().filter(|&&p| p == tag).count()
    }

    /// Training nodes that carry their true known-class label.
    pub fn clean_train(&self) -> Vec<usize> {
        self.train
            .iter()
            .copied()
            .filter(|&i| self.provenance[i] == Provenance::Clean)
            .collect()
    }

    pub fn test_truth(&self) -> Vec<OpenSetLabel> {
        self.test.iter().map(|&i| self.truth[i]).collect()
    }
}

fn raw_labels<T: Scalar>(g: &Graph<T>) -> Result<usize> {
    let c = g.n_classes();
    if c < 3 {
        return Err(Error::InvalidArgument(format!(
            "open-set scenario needs at least 3 classes, dataset has {c}"
        )));
    }
    Ok(c)
}

/// Holds out `unknown` (test only) and `ood` (training noise) classes, relabels
/// the rest to `0..C`, and splits known nodes 70/10/20 per class.
fn scenario<T: Scalar>(
    g: &Graph<T>,
    unknown: &[usize],
    ood: &[usize],
    seed: u64,
) -> Result<NoisyDataset<T>> {
    let c_total = g.n_classes();
    let mut map = vec![None; c_total];
    let mut next = 0;
    for (c, slot) in map.iter_mut().enumerate() {
        if !unknown.contains(&c) && !ood.contains(&c) {
            *slot = Some(next);
            next += 1;
        }
    }
    let n_known = next;
    let n = g.n_nodes();
    let known: Vec<Option<usize>> = g.labels().iter().map(|l| l.and_then(|c| map[c])).collect();
    let split = split_labels(&known, n_known, &SplitSpec::with_seed(seed))?;

    let mut truth = vec![OpenSetLabel::Unknown; n];
    let mut provenance = vec![Provenance::Held; n];
    let mut labels = known.clone();
    for i in 0..n {
        if let Some(c) = known[i] {
            truth[i] = OpenSetLabel::Known(c);
        }
    }
    for &i in &split.train {
        provenance[i] = Provenance::Clean;
    }
    let mut train = split.train;
    let mut test = split.test;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x00d_c1a55);
    for (i, l) in g.labels().iter().enumerate() {
        match *l {
            Some(c) if unknown.contains(&c) => {
                provenance[i] = Provenance::UnknownTest;
                test.push(i);
            }
            Some(c) if ood.contains(&c) => {
                provenance[i] = Provenance::OodNoise;
                labels[i] = Some(rng.random_range(0..n_known));
                train.push(i);
            }
            _ => {}
        }
    }
    train.sort_unstable();
    let graph = g.with_labels(labels, n_known)?;
    Ok(NoisyDataset {
        graph,
        truth,
        provenance,
        train,
        val: split.val,
        test,
        unknown_classes: unknown.to_vec(),
        ood_classes: ood.to_vec(),
    })
}

/// Near-OOD protocol: the last class becomes the unknown test class, the
/// second-last class is injected into training with random known labels.
pub fn build_near_ood_scenario<T: Scalar>(g: &Graph<T>, seed: u64) -> Result<NoisyDataset<T>> {
    let c = raw_labels(g)?;
    scenario(g, &[c - 1], &[c - 2], seed)
}

/// Only the last class is held out as the unknown test class; no OOD noise.
pub fn build_holdout_scenario<T: Scalar>(g: &Graph<T>, seed: u64) -> Result<NoisyDataset<T>> {
    let c = raw_labels(g)?;
    scenario(g, &[c - 1], &[], seed)
}

/// Flips `round(rate * n)` of the `n` clean training nodes to a uniformly
/// chosen different known class.
pub fn inject_ind_noise<T: Scalar>(ds: &mut NoisyDataset<T>, rate: f64, seed: u64) -> Result<()> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::InvalidArgument(format!("IND noise rate {rate} not in [0, 1)")));
    }
    let c = ds.n_classes();
    if c < 2 {
        return Err(Error::InvalidArgument("IND noise needs at least 2 known classes".into()));
    }
    let mut pool = ds.clean_train();
    let n_flip = (rate * pool.len() as f64).round() as usize;
    if n_flip == 0 {
        return Ok(());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    pool.shuffle(&mut rng);
    let mut labels = ds.graph.labels().to_vec();
    for &i in &pool[..n_flip] {
        let OpenSetLabel::Known(t) = ds.truth[i] else {
            unreachable!("clean training nodes have known truth")
        };
        labels[i] = Some((t + rng.random_range(1..c)) % c);
        ds.provenance[i] = Provenance::IndNoise;
    }
    ds.graph = ds.graph.with_labels(labels, c)?;
    Ok(())
}

/// Far-OOD injection parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FarOod {
    /// Injected training noise as a fraction of the current training set.
    pub rate: f64,
    /// Added unknown test nodes as a fraction of the known test set.
    pub unknown_rate: f64,
    /// Source classes supplying training noise.
    pub noise_classes: [usize; 2],
    /// Source class supplying unknown test nodes.
    pub unknown_class: usize,
}

impl FarOod {
    pub fn new(rate: f64) -> Self {
        Self {
            rate,
            unknown_rate: rate,
            noise_classes: [0, 1],
            unknown_class: 2,
        }
    }
}

/// Source rows zero-padded or cut to `width` columns.
fn fit_width<T: Scalar>(src: &Array2<T>, rows: &[usize], width: usize) -> Array2<T> {
    let mut out = Array2::zeros((rows.len(), width));
    let w = width.min(src.ncols());
    for (r, &i) in rows.iter().enumerate() {
        out.slice_mut(s![r, ..w]).assign(&src.slice(s![i, ..w]));
    }
    out
}

fn unit_rows<T: Scalar>(x: &Array2<T>) -> Array2<T> {
    let mut out = x.clone();
    for mut row in out.rows_mut() {
        let n = row.dot(&row).sqrt();
        if n > T::zero() {
            row /= n;
        }
    }
    out
}

/// Appends nodes drawn from another dataset: OOD training noise with random
/// known labels, plus unknown test nodes. Each new node is attached to its
/// `k ~ U{1..5}` most cosine-similar pre-existing training nodes.
pub fn inject_far_ood<T: Scalar>(
    ds: &mut NoisyDataset<T>,
    source: &Graph<T>,
    far: FarOod,
    seed: u64,
) -> Result<()> {
    for r in [far.rate, far.unknown_rate] {
        if !(0.0..1.0).contains(&r) {
            return Err(Error::InvalidArgument(format!("far-OOD rate {r} not in [0, 1)")));
        }
    }
    let n_noise = (far.rate * ds.train.len() as f64).round() as usize;
    let n_known_test = ds
        .test
        .iter()
        .filter(|&&i| ds.provenance[i] == Provenance::Held)
        .count();
    let n_unknown = (far.unknown_rate * n_known_test as f64).round() as usize;
    if n_noise == 0 && n_unknown == 0 {
        return Ok(());
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let of_class = |cs: &[usize]| -> Vec<usize> {
        (0..source.n_nodes())
            .filter(|&i| source.label(i).is_some_and(|c| cs.contains(&c)))
            .collect()
    };
    let pick = |pool: Vec<usize>, k: usize, rng: &mut ChaCha8Rng| -> Result<Vec<usize>> {
        if pool.len() < k {
            return Err(Error::SourceExhausted {
                requested: k,
                available: pool.len(),
            });
        }
        Ok(pool.choose_multiple(rng, k).copied().collect())
    };
    let noise_src = pick(of_class(&far.noise_classes), n_noise, &mut rng)?;
    let unknown_src = pick(of_class(&[far.unknown_class]), n_unknown, &mut rng)?;

    let g = &ds.graph;
    let (n0, width, c) = (g.n_nodes(), g.n_features(), g.n_classes());
    let new_rows: Vec<usize> = noise_src.iter().chain(&unknown_src).copied().collect();
    let new_x = fit_width(source.features(), &new_rows, width);

    let anchors: Vec<usize> = ds.train.clone();
    let anchor_x = unit_rows(&g.features().select(ndarray::Axis(0), &anchors));
    let sims = unit_rows(&new_x).dot(&anchor_x.t());

    let mut edges = g.edge_list();
    for (r, sim) in sims.rows().into_iter().enumerate() {
        let k = rng.random_range(1..=5usize).min(anchors.len());
        let mut order: Vec<usize> = (0..anchors.len()).collect();
        order.sort_by(|&a, &b| sim[b].partial_cmp(&sim[a]).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b)));
        edges.extend(order[..k].iter().map(|&a| (anchors[a], n0 + r)));
    }

    let x = ndarray::concatenate(ndarray::Axis(0), &[g.features().view(), new_x.view()])
        .expect("widths agree");
    let mut labels = g.labels().to_vec();
    for (r, _) in new_rows.iter().enumerate() {
        let id = n0 + r;
        if r < n_noise {
            labels.push(Some(rng.random_range(0..c)));
            ds.provenance.push(Provenance::OodNoise);
            ds.train.push(id);
        } else {
            labels.push(None);
            ds.provenance.push(Provenance::UnknownTest);
            ds.test.push(id);
        }
        ds.truth.push(OpenSetLabel::Unknown);
    }
    ds.graph = Graph::from_edges(x, &edges, labels, c)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    fn graph(n_per: usize, classes: usize) -> Graph<f64> {
        let n = n_per * classes;
        let x = Array2::from_shape_fn((n, 3), |(i, j)| ((i * 7 + j * 3) % 11) as f64 + 1.0);
        let edges: Vec<(usize, usize)> = (0..n - 1).map(|i| (i, i + 1)).collect();
        let labels = (0..n).map(|i| Some(i % classes)).collect();
        Graph::from_edges(x, &edges, labels, classes).unwrap()
    }

    #[test]
    fn near_scenario_class_arithmetic() {
        let ds = build_near_ood_scenario(&graph(20, 7), 1).unwrap();
        assert_eq!(ds.n_classes(), 5);
        assert_eq!(ds.unknown_classes, vec![6]);
        assert_eq!(ds.ood_classes, vec![5]);
        assert_eq!(ds.count(Provenance::OodNoise), 20);
        for &i in &ds.train {
            assert_ne!(ds.provenance[i], Provenance::UnknownTest);
            assert!(ds.graph.label(i).unwrap() < 5);
        }
        assert!(ds.val.iter().all(|&i| ds.provenance[i] == Provenance::Held));
        assert_eq!(ds.count(Provenance::UnknownTest), 20);
        assert!(build_near_ood_scenario(&graph(5, 2), 0).is_err());
    }

    #[test]
    fn ind_noise_counts_and_differs() {
        let mut ds = build_holdout_scenario(&graph(50, 3), 2).unwrap();
        let before = ds.graph.labels().to_vec();
        let n_train = ds.train.len();
        inject_ind_noise(&mut ds, 0.25, 9).unwrap();
        let flipped: Vec<usize> = (0..ds.provenance.len())
            .filter(|&i| ds.provenance[i] == Provenance::IndNoise)
            .collect();
        assert_eq!(flipped.len(), (0.25 * n_train as f64).round() as usize);
        for &i in &flipped {
            assert_ne!(OpenSetLabel::Known(ds.graph.label(i).unwrap()), ds.truth[i]);
        }
        for i in 0..before.len() {
            if !flipped.contains(&i) {
                assert_eq!(before[i], ds.graph.label(i));
            }
        }
        let mut again = build_holdout_scenario(&graph(50, 3), 2).unwrap();
        inject_ind_noise(&mut again, 0.25, 9).unwrap();
        assert_eq!(again.provenance, ds.provenance);
    }

    #[test]
    fn far_injection_degrees_and_counts() {
        let mut ds = build_holdout_scenario(&graph(30, 4), 0).unwrap();
        let src = graph(40, 3);
        let n0 = ds.graph.n_nodes();
        let old_edges = ds.graph.edge_list();
        let n_train = ds.train.len();
        inject_far_ood(&mut ds, &src, FarOod::new(0.3), 4).unwrap();
        let injected = (0.3 * n_train as f64).round() as usize;
        assert_eq!(ds.count(Provenance::OodNoise), injected);
        for i in n0..ds.graph.n_nodes() {
            assert!((1..=5).contains(&ds.graph.degree(i)));
        }
        let new_edges = ds.graph.edge_list();
        assert!(old_edges.iter().all(|e| new_edges.contains(e)));
        assert!(matches!(
            inject_far_ood(&mut ds.clone(), &graph(2, 3), FarOod::new(0.5), 0),
            Err(Error::SourceExhausted { .. })
        ));
    }
}
