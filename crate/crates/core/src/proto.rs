//! Region-based prototype learning.
//!
//! Clean latent vectors are partitioned by K-means. Clusters whose members
//! share one pseudo-label drive the trainable interior prototypes; mixed
//! clusters contribute per-class mean vectors as border prototypes. Nodes
//! are scored by their best cosine similarity to each class's prototypes.

use std::io::Write;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::denoise::{argmax, softmax};
use crate::error::{Error, Result};
use crate::gcn::he_matrix;
use crate::scalar::Scalar;

/// K-means partition of the clean nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterAssignment<T> {
    /// Cluster id per input row.
    pub assignment: Vec<usize>,
    pub centroids: Array2<T>,
    /// `members[k][c]`: rows of cluster `k` whose pseudo-label is `c`.
    pub members: Vec<Vec<Vec<usize>>>,
    pub homogeneous: Vec<bool>,
    /// Within-cluster SSE after every assignment step.
    pub sse_history: Vec<T>,
}

impl<T: Scalar> ClusterAssignment<T> {
    pub fn n_clusters(&self) -> usize {
        self.centroids.nrows()
    }

    pub fn sse(&self) -> T {
        self.sse_history.last().copied().unwrap_or_else(T::zero)
    }

    /// Class of a homogeneous cluster, `None` for mixed or empty ones.
    pub fn cluster_class(&self, k: usize) -> Option<usize> {
        if !self.homogeneous[k] {
            return None;
        }
        self.members[k].iter().position(|m| !m.is_empty())
    }

    /// For every row, the class of its cluster if that cluster is homogeneous.
    pub fn homogeneous_class_per_row(&self) -> Vec<Option<usize>> {
        self.assignment.iter().map(|&k| self.cluster_class(k)).collect()
    }
}

fn sq_dist<T: Scalar>(a: ArrayView1<'_, T>, b: ArrayView1<'_, T>) -> T {
    a.iter().zip(b).map(|(&x, &y)| (x - y) * (x - y)).sum()
}

fn nearest<T: Scalar>(x: ArrayView1<'_, T>, centroids: &Array2<T>) -> (usize, T) {
    let mut best = (0, T::infinity());
    for (k, c) in centroids.rows().into_iter().enumerate() {
        let d = sq_dist(x, c);
        if d < best.1 {
            best = (k, d);
        }
    }
    best
}

fn kmeans_pp<T: Scalar>(z: ArrayView2<'_, T>, k: usize, rng: &mut ChaCha8Rng) -> Array2<T> {
    let n = z.nrows();
    let mut chosen = vec![false; n];
    let mut centroids = Array2::zeros((k, z.ncols()));
    let first = rng.random_range(0..n);
    chosen[first] = true;
    centroids.row_mut(0).assign(&z.row(first));
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(z.row(i), z.row(first)).as_f64()).collect();
    for c in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = None;
            for (i, &d) in d2.iter().enumerate() {
                if d <= 0.0 {
                    continue;
                }
                if target < d {
                    pick = Some(i);
                    break;
                }
                target -= d;
            }
            pick.unwrap_or_else(|| (0..n).rev().find(|&i| d2[i] > 0.0).expect("positive mass"))
        } else {
            let free: Vec<usize> = (0..n).filter(|&i| !chosen[i]).collect();
            free[rng.random_range(0..free.len())]
        };
        chosen[pick] = true;
        centroids.row_mut(c).assign(&z.row(pick));
        for i in 0..n {
            let d = sq_dist(z.row(i), z.row(pick)).as_f64();
            if d < d2[i] {
                d2[i] = d;
            }
        }
    }
    centroids
}

/// Lloyd's K-means with k-means++ seeding over the rows of `z`. `labels`
/// holds each row's hard pseudo-label and drives the homogeneity flags.
pub fn cluster_regions<T: Scalar>(
    z: ArrayView2<'_, T>,
    labels: &[usize],
    n_classes: usize,
    k_clusters: usize,
    seed: u64,
    max_iter: usize,
) -> Result<ClusterAssignment<T>> {
    let n = z.nrows();
    if labels.len() != n {
        return Err(Error::DimensionMismatch(format!("{} labels for {n} rows", labels.len())));
    }
    if k_clusters == 0 || n < k_clusters {
        return Err(Error::TooFewPoints {
            needed: k_clusters.max(1),
            got: n,
        });
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= n_classes) {
        return Err(Error::LabelOutOfRange {
            node: labels.iter().position(|&l| l == bad).unwrap_or(0),
            label: bad,
            n_classes,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = kmeans_pp(z, k_clusters, &mut rng);
    let mut assignment = vec![usize::MAX; n];
    let mut sse_history = Vec::new();

    for _ in 0..max_iter.max(1) {
        let mut changed = false;
        let mut sse = T::zero();
        let mut dist = vec![T::zero(); n];
        for i in 0..n {
            let (k, d) = nearest(z.row(i), &centroids);
            if assignment[i] != k {
                assignment[i] = k;
                changed = true;
            }
            dist[i] = d;
            sse += d;
        }
        sse_history.push(sse);
        if !changed && sse_history.len() > 1 {
            break;
        }

        let mut sums = Array2::<T>::zeros(centroids.dim());
        let mut counts = vec![0usize; k_clusters];
        for i in 0..n {
            sums.row_mut(assignment[i]).scaled_add(T::one(), &z.row(i));
            counts[assignment[i]] += 1;
        }
        let mut taken = vec![false; n];
        for k in 0..k_clusters {
            if counts[k] > 0 {
                let cnt = T::from_usize_lossy(counts[k]);
                centroids.row_mut(k).assign(&sums.row(k).mapv(|v| v / cnt));
            }
        }
        for k in 0..k_clusters {
            if counts[k] == 0 {
                // Re-seed from the point farthest from its own centroid.
                let far = (0..n)
                    .filter(|&i| !taken[i])
                    .max_by(|&a, &b| {
                        let da = sq_dist(z.row(a), centroids.row(assignment[a]));
                        let db = sq_dist(z.row(b), centroids.row(assignment[b]));
                        da.partial_cmp(&db).unwrap_or(std::cmp::Ordering::Equal).then(b.cmp(&a))
                    })
                    .expect("n >= k");
                taken[far] = true;
                centroids.row_mut(k).assign(&z.row(far));
            }
        }
    }

    let mut members = vec![vec![Vec::new(); n_classes]; k_clusters];
    for (i, (&k, &l)) in assignment.iter().zip(labels).enumerate() {
        members[k][l].push(i);
    }
    let homogeneous = members
        .iter()
        .map(|m| m.iter().filter(|v| !v.is_empty()).count() == 1)
        .collect();
    Ok(ClusterAssignment {
        assignment,
        centroids,
        members,
        homogeneous,
        sse_history,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct BorderPrototype<T> {
    pub cluster: usize,
    pub vector: Array1<T>,
}

/// Per-class border prototypes: the mean latent vector of each nonempty class
/// partition inside every mixed cluster. Row `i` of `z` must correspond to
/// row `i` of the clustered data.
pub fn compute_border_prototypes<T: Scalar>(
    ca: &ClusterAssignment<T>,
    z: ArrayView2<'_, T>,
) -> Vec<Vec<BorderPrototype<T>>> {
    let n_classes = ca.members.first().map_or(0, Vec::len);
    let mut border = vec![Vec::new(); n_classes];
    for (k, parts) in ca.members.iter().enumerate() {
        if ca.homogeneous[k] {
            continue;
        }
        for (c, rows) in parts.iter().enumerate() {
            if rows.is_empty() {
                continue;
            }
            let mut mean = Array1::zeros(z.ncols());
            for &i in rows {
                mean += &z.row(i);
            }
            mean /= T::from_usize_lossy(rows.len());
            border[c].push(BorderPrototype {
                cluster: k,
                vector: mean,
            });
        }
    }
    border
}

/// Interior prototypes (trainable, one per class) plus border prototypes
/// (recomputed at each refresh, never trained).
#[derive(Debug, Clone, PartialEq)]
pub struct PrototypePool<T> {
    pub interior: Array2<T>,
    pub border: Vec<Vec<BorderPrototype<T>>>,
}

impl<T: Scalar> PrototypePool<T> {
    /// He-initialized interior prototypes, no border prototypes.
    pub fn init(n_classes: usize, dim: usize, seed: u64) -> Result<Self> {
        if n_classes == 0 || dim == 0 {
            return Err(Error::InvalidArgument("prototype pool needs C >= 1 and D >= 1".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(Self {
            interior: he_matrix(n_classes, dim, dim, &mut rng),
            border: vec![Vec::new(); n_classes],
        })
    }

    pub fn n_classes(&self) -> usize {
        self.interior.nrows()
    }

    pub fn dim(&self) -> usize {
        self.interior.ncols()
    }

    /// `K_c`: interior plus border prototypes of class `c`.
    pub fn count(&self, c: usize) -> usize {
        1 + self.border[c].len()
    }

    pub fn n_border(&self) -> usize {
        self.border.iter().map(Vec::len).sum()
    }

    pub fn clear_border(&mut self) {
        for b in &mut self.border {
            b.clear();
        }
    }

    /// Writes `class_id, kind, cluster_id, values...` rows (interior rows use
    /// cluster id -1).
    pub fn write_dump(&self, path: &Path) -> Result<()> {
        let io = |e| Error::io(path, e);
        let mut w = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
        let write_row = |w: &mut std::io::BufWriter<std::fs::File>,
                         c: usize,
                         kind: &str,
                         cluster: i64,
                         v: ArrayView1<'_, T>| {
            write!(w, "{c}\t{kind}\t{cluster}")?;
            for x in v {
                write!(w, "\t{x}")?;
            }
            writeln!(w)
        };
        for c in 0..self.n_classes() {
            write_row(&mut w, c, "interior", -1, self.interior.row(c)).map_err(io)?;
            for b in &self.border[c] {
                write_row(&mut w, c, "border", b.cluster as i64, b.vector.view()).map_err(io)?;
            }
        }
        w.flush().map_err(io)
    }
}

/// Which prototype of a class achieved the class score.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Winner {
    Interior,
    Border(usize),
}

/// Per-class maximum cosine similarity of one node.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreVector<T> {
    pub scores: Array1<T>,
    pub winners: Vec<Winner>,
}

fn norm<T: Scalar>(v: ArrayView1<'_, T>) -> T {
    v.dot(&v).sqrt()
}

fn check_pool<T: Scalar>(pool: &PrototypePool<T>) -> Result<()> {
    for c in 0..pool.n_classes() {
        if norm(pool.interior.row(c)) == T::zero() {
            return Err(Error::ZeroNorm(format!("interior prototype {c}")));
        }
        for (k, b) in pool.border[c].iter().enumerate() {
            if norm(b.vector.view()) == T::zero() {
                return Err(Error::ZeroNorm(format!("border prototype {k} of class {c}")));
            }
        }
    }
    Ok(())
}

fn score_unchecked<T: Scalar>(z: ArrayView1<'_, T>, z_norm: T, pool: &PrototypePool<T>) -> ScoreVector<T> {
    let c = pool.n_classes();
    let mut scores = Array1::zeros(c);
    let mut winners = Vec::with_capacity(c);
    for class in 0..c {
        let p = pool.interior.row(class);
        let mut best = z.dot(&p) / (z_norm * norm(p));
        let mut win = Winner::Interior;
        for (k, b) in pool.border[class].iter().enumerate() {
            let s = z.dot(&b.vector) / (z_norm * norm(b.vector.view()));
            if s > best {
                best = s;
                win = Winner::Border(k);
            }
        }
        scores[class] = best;
        winners.push(win);
    }
    ScoreVector { scores, winners }
}

/// `s_c = max_k cos(z, p_{c,k})` over interior and border prototypes of each
/// class. Ties keep the interior prototype.
pub fn score<T: Scalar>(z: ArrayView1<'_, T>, pool: &PrototypePool<T>) -> Result<ScoreVector<T>> {
    if z.len() != pool.dim() {
        return Err(Error::DimensionMismatch(format!(
            "latent width {} vs prototype width {}",
            z.len(),
            pool.dim()
        )));
    }
    let zn = norm(z);
    if zn == T::zero() {
        return Err(Error::ZeroNorm("latent vector".into()));
    }
    check_pool(pool)?;
    Ok(score_unchecked(z, zn, pool))
}

/// Scores for every row of `z`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix<T> {
    pub scores: Array2<T>,
    pub winners: Vec<Vec<Winner>>,
}

pub fn score_rows<T: Scalar>(z: ArrayView2<'_, T>, pool: &PrototypePool<T>) -> Result<ScoreMatrix<T>> {
    if z.ncols() != pool.dim() {
        return Err(Error::DimensionMismatch(format!(
            "latent width {} vs prototype width {}",
            z.ncols(),
            pool.dim()
        )));
    }
    check_pool(pool)?;
    let mut scores = Array2::zeros((z.nrows(), pool.n_classes()));
    let mut winners = Vec::with_capacity(z.nrows());
    for (i, row) in z.rows().into_iter().enumerate() {
        let zn = norm(row);
        if zn == T::zero() {
            return Err(Error::ZeroNorm(format!("latent vector {i}")));
        }
        let sv = score_unchecked(row, zn, pool);
        scores.row_mut(i).assign(&sv.scores);
        winners.push(sv.winners);
    }
    Ok(ScoreMatrix { scores, winners })
}

/// Predicted class: argmax of the score vector, lowest id on ties.
pub fn classify<T: Scalar>(scores: ArrayView1<'_, T>) -> usize {
    argmax(scores)
}

/// Temperature-scaled cross-entropy over score vectors, averaged over rows.
/// Returns the loss and `dL/ds`.
pub fn classification_loss<T: Scalar>(
    scores: ArrayView2<'_, T>,
    labels: &[usize],
    temperature: f64,
) -> Result<(T, Array2<T>)> {
    if !(temperature > 0.0) {
        return Err(Error::InvalidArgument(format!("temperature {temperature} must be > 0")));
    }
    if labels.len() != scores.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "{} labels for {} score rows",
            labels.len(),
            scores.nrows()
        )));
    }
    let n = scores.nrows();
    if n == 0 {
        return Ok((T::zero(), Array2::zeros(scores.dim())));
    }
    let t = T::lit(temperature);
    let inv = T::one() / (t * T::from_usize_lossy(n));
    let mut loss = T::zero();
    let mut grad = Array2::zeros(scores.dim());
    for (i, (row, &y)) in scores.rows().into_iter().zip(labels).enumerate() {
        if y >= scores.ncols() {
            return Err(Error::LabelOutOfRange {
                node: i,
                label: y,
                n_classes: scores.ncols(),
            });
        }
        let scaled = row.mapv(|v| v / t);
        let m = scaled.fold(T::neg_infinity(), |a, &b| a.max(b));
        let lse = m + scaled.mapv(|v| (v - m).exp()).sum().ln();
        loss += lse - scaled[y];
        let p = softmax(row, t);
        for c in 0..row.len() {
            let ind = if c == y { T::one() } else { T::zero() };
            grad[[i, c]] = (p[c] - ind) * inv;
        }
    }
    Ok((loss / T::from_usize_lossy(n), grad))
}

/// `‖P Pᵀ − I‖_F²` and its gradient `4 (P Pᵀ − I) P`.
pub fn diversity_loss<T: Scalar>(interior: ArrayView2<'_, T>) -> (T, Array2<T>) {
    let mut gram = interior.dot(&interior.t());
    for i in 0..gram.nrows() {
        gram[[i, i]] -= T::one();
    }
    let loss = gram.iter().map(|&v| v * v).sum();
    let grad = gram.dot(&interior) * T::lit(4.0);
    (loss, grad)
}

/// Which samples may push gradient into interior prototypes.
#[derive(Debug, Clone, Copy)]
pub enum InteriorMask<'a> {
    /// Every sample reaches every interior prototype (exact derivative).
    All,
    /// Sample `i` reaches only interior row `c` when `mask[i] == Some(c)`.
    ClassOnly(&'a [Option<usize>]),
}

/// Chains `dL/ds` through the cosine similarities. Only the winning prototype
/// of each class receives gradient; border prototypes are not trainable, so
/// their share is dropped after contributing to `dL/dz`.
pub fn score_backward<T: Scalar>(
    z: ArrayView2<'_, T>,
    pool: &PrototypePool<T>,
    scores: &ScoreMatrix<T>,
    grad_scores: ArrayView2<'_, T>,
    mask: InteriorMask<'_>,
) -> (Array2<T>, Array2<T>) {
    let mut grad_z = Array2::zeros(z.dim());
    let mut grad_p = Array2::zeros(pool.interior.dim());
    let interior_norms: Vec<T> = pool.interior.rows().into_iter().map(norm).collect();
    for (i, zi) in z.rows().into_iter().enumerate() {
        let zn = norm(zi);
        for c in 0..pool.n_classes() {
            let g = grad_scores[[i, c]];
            if g == T::zero() {
                continue;
            }
            let s = scores.scores[[i, c]];
            let (p, pn) = match scores.winners[i][c] {
                Winner::Interior => (pool.interior.row(c), interior_norms[c]),
                Winner::Border(k) => {
                    let v = pool.border[c][k].vector.view();
                    (v, norm(v))
                }
            };
            // d cos / dz = p/(|z||p|) − cos·z/|z|²
            let a = g / (zn * pn);
            let b = g * s / (zn * zn);
            let mut gz = grad_z.row_mut(i);
            gz.scaled_add(a, &p);
            gz.scaled_add(-b, &zi);
            let to_interior = match (scores.winners[i][c], mask) {
                (Winner::Border(_), _) => false,
                (Winner::Interior, InteriorMask::All) => true,
                (Winner::Interior, InteriorMask::ClassOnly(m)) => m[i] == Some(c),
            };
            if to_interior {
                // d cos / dp = z/(|z||p|) − cos·p/|p|²
                let mut gp = grad_p.row_mut(c);
                gp.scaled_add(a, &zi);
                gp.scaled_add(-g * s / (pn * pn), &p);
            }
        }
    }
    (grad_z, grad_p)
}

/// `P ← P − φ·grad`.
pub fn update_interior<T: Scalar>(interior: &mut Array2<T>, grad: ArrayView2<'_, T>, phi: f64) -> Result<()> {
    if grad.dim() != interior.dim() {
        return Err(Error::DimensionMismatch(format!(
            "gradient {:?} vs prototypes {:?}",
            grad.dim(),
            interior.dim()
        )));
    }
    if grad.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("interior prototype gradient".into()));
    }
    if phi < 0.0 {
        return Err(Error::InvalidArgument("prototype step must be >= 0".into()));
    }
    interior.scaled_add(-T::lit(phi), &grad);
    Ok(())
}
