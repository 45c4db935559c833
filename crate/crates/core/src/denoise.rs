//! Label-propagation denoising in latent space.
//!
//! A kNN affinity graph is built over the latent vectors, seed labels are
//! diffused by solving `(I - αS) Ȳ = Ỹ` with conjugate gradient, and nodes
//! whose propagated label distribution supports their given label (or is
//! confidently peaked) are kept as the clean set.

use std::cmp::Ordering;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::sparse::CsrMatrix;

/// Symmetric, zero-diagonal, nonnegative affinity matrix over latent vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct AffinityGraph<T> {
    w: CsrMatrix<T>,
    pub k_nn: usize,
    pub beta: f64,
    /// Nodes with an all-zero latent vector; they have no neighbors.
    pub degenerate: Vec<usize>,
}

impl<T: Scalar> AffinityGraph<T> {
    pub fn matrix(&self) -> &CsrMatrix<T> {
        &self.w
    }

    pub fn n_nodes(&self) -> usize {
        self.w.n_rows()
    }

    /// Wraps an explicit weight matrix, which must be square, symmetric,
    /// nonnegative and zero on the diagonal.
    pub fn from_weights(w: CsrMatrix<T>) -> Result<Self> {
        if w.n_rows() != w.n_cols() {
            return Err(Error::DimensionMismatch(format!("{}x{} affinity", w.n_rows(), w.n_cols())));
        }
        if let Some((row, col)) = w.asymmetry(T::zero()) {
            return Err(Error::NotSymmetric { row, col });
        }
        if let Some((i, j, _)) = w.iter().find(|&(i, j, v)| (i == j && v != T::zero()) || !(v >= T::zero())) {
            return Err(Error::InvalidArgument(format!("affinity entry ({i}, {j}) must be >= 0 and off-diagonal")));
        }
        Ok(Self {
            w,
            k_nn: 0,
            beta: 1.0,
            degenerate: Vec::new(),
        })
    }

    /// Uses an existing symmetric structure as the affinity (unit weights on
    /// every stored off-diagonal entry).
    pub fn from_structure(adjacency: &CsrMatrix<T>) -> Result<Self> {
        if let Some((row, col)) = adjacency.asymmetry(T::zero()) {
            return Err(Error::NotSymmetric { row, col });
        }
        let triplets = adjacency
            .iter()
            .filter(|&(i, j, v)| i != j && v != T::zero())
            .map(|(i, j, _)| (i, j, T::one()));
        let w = CsrMatrix::from_triplets(adjacency.n_rows(), adjacency.n_cols(), triplets)?;
        Ok(Self {
            w,
            k_nn: 0,
            beta: 1.0,
            degenerate: Vec::new(),
        })
    }
}

fn by_similarity<T: Scalar>(a: &(usize, T), b: &(usize, T)) -> Ordering {
    b.1.partial_cmp(&a.1)
        .unwrap_or(Ordering::Equal)
        .then(a.0.cmp(&b.0))
}

/// `W_ij = max(z_i·z_j, 0)^β` for `j` among the `k` most similar rows to `i`,
/// then `W <- max(W, Wᵀ)`. With `cosine`, rows are unit-normalized first.
pub fn build_knn_affinity<T: Scalar>(
    z: ArrayView2<'_, T>,
    k: usize,
    beta: f64,
    cosine: bool,
) -> Result<AffinityGraph<T>> {
    let n = z.nrows();
    if k >= n {
        return Err(Error::InvalidArgument(format!("k_nn = {k} must be < n = {n}")));
    }
    if !(beta > 0.0) {
        return Err(Error::InvalidArgument(format!("beta = {beta} must be > 0")));
    }
    if z.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("latent matrix".into()));
    }
    let norms: Vec<T> = z.rows().into_iter().map(|r| r.dot(&r).sqrt()).collect();
    let degenerate: Vec<usize> = (0..n).filter(|&i| norms[i] == T::zero()).collect();
    let mut zn = z.to_owned();
    if cosine {
        for (mut row, &nrm) in zn.axis_iter_mut(Axis(0)).zip(&norms) {
            if nrm > T::zero() {
                row.mapv_inplace(|v| v / nrm);
            }
        }
    }
    let valid: Vec<bool> = norms.iter().map(|&v| v > T::zero()).collect();
    let beta_t = T::lit(beta);

    let mut triplets: Vec<(usize, usize, T)> = Vec::with_capacity(n * k * 2);
    const BLOCK: usize = 256;
    let mut start = 0;
    while start < n {
        let end = (start + BLOCK).min(n);
        let sims = zn.slice(ndarray::s![start..end, ..]).dot(&zn.t());
        for (bi, row) in sims.axis_iter(Axis(0)).enumerate() {
            let i = start + bi;
            if !valid[i] {
                continue;
            }
            let mut cand: Vec<(usize, T)> = row
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i && valid[j])
                .map(|(j, &s)| (j, s))
                .collect();
            let take = k.min(cand.len());
            if take == 0 {
                continue;
            }
            if take < cand.len() {
                cand.select_nth_unstable_by(take - 1, by_similarity);
                cand.truncate(take);
            }
            for (j, s) in cand {
                if s > T::zero() {
                    let w = s.powf(beta_t);
                    triplets.push((i, j, w));
                    triplets.push((j, i, w));
                }
            }
        }
        start = end;
    }
    // Both orientations were pushed; keep the larger weight per coordinate.
    triplets.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
    triplets.dedup_by(|next, kept| {
        if (next.0, next.1) == (kept.0, kept.1) {
            if next.2 > kept.2 {
                kept.2 = next.2;
            }
            true
        } else {
            false
        }
    });
    let w = CsrMatrix::from_triplets(n, n, triplets)?;
    Ok(AffinityGraph {
        w,
        k_nn: k,
        beta,
        degenerate,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabelRole {
    /// Seed labels Ỹ fed into propagation.
    Seed,
    /// Propagated labels Ȳ.
    Propagated,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SoftLabels<T> {
    pub values: Array2<T>,
    pub role: LabelRole,
}

impl<T: Scalar> SoftLabels<T> {
    pub fn n_nodes(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_classes(&self) -> usize {
        self.values.ncols()
    }

    /// One-hot seed matrix.
    pub fn one_hot(labels: &[usize], n_classes: usize) -> Self {
        let mut values = Array2::zeros((labels.len(), n_classes));
        for (i, &l) in labels.iter().enumerate() {
            values[[i, l]] = T::one();
        }
        Self {
            values,
            role: LabelRole::Seed,
        }
    }
}

/// Reliability flags `g_i` from the most recent selection.
#[derive(Debug, Clone, PartialEq)]
pub struct CleanMask {
    pub mask: Vec<bool>,
    pub eta: f64,
    pub iteration: usize,
}

impl CleanMask {
    pub fn all(n: usize) -> Self {
        Self {
            mask: vec![true; n],
            eta: 0.0,
            iteration: 0,
        }
    }

    pub fn n_clean(&self) -> usize {
        self.mask.iter().filter(|&&b| b).count()
    }

    pub fn clean_indices(&self) -> Vec<usize> {
        self.mask
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(|(i, _)| i)
            .collect()
    }
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax<T: Scalar>(row: ArrayView1<'_, T>) -> usize {
    let mut best = 0;
    for (c, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = c;
        }
    }
    best
}

/// Temperature softmax of one row.
pub fn softmax<T: Scalar>(row: ArrayView1<'_, T>, temperature: T) -> Array1<T> {
    let scaled = row.mapv(|v| v / temperature);
    let m = scaled.fold(T::neg_infinity(), |a, &b| a.max(b));
    let e = scaled.mapv(|v| (v - m).exp());
    let s = e.sum();
    e / s
}

/// Seeds `Ỹ`: one-hot given label for previously clean nodes, temperature
/// softmax of the score vector `p̂` otherwise.
pub fn assemble_seed_labels<T: Scalar>(
    given: &[usize],
    n_classes: usize,
    prev_clean: &CleanMask,
    prev_scores: Option<ArrayView2<'_, T>>,
    temperature: f64,
) -> Result<SoftLabels<T>> {
    let n = given.len();
    if prev_clean.mask.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "clean mask has {} entries for {} nodes",
            prev_clean.mask.len(),
            n
        )));
    }
    if !(temperature > 0.0) {
        return Err(Error::InvalidArgument("temperature must be > 0".into()));
    }
    if let Some(s) = &prev_scores {
        if s.dim() != (n, n_classes) {
            return Err(Error::DimensionMismatch(format!(
                "scores are {:?}, expected ({n}, {n_classes})",
                s.dim()
            )));
        }
    }
    let t = T::lit(temperature);
    let mut values = Array2::zeros((n, n_classes));
    for i in 0..n {
        if given[i] >= n_classes {
            return Err(Error::LabelOutOfRange {
                node: i,
                label: given[i],
                n_classes,
            });
        }
        if prev_clean.mask[i] {
            values[[i, given[i]]] = T::one();
        } else {
            let scores = prev_scores.as_ref().ok_or(Error::MissingScores(i))?;
            values.row_mut(i).assign(&softmax(scores.row(i), t));
        }
    }
    Ok(SoftLabels {
        values,
        role: LabelRole::Seed,
    })
}

/// Solution of one propagation call with per-column solver diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct Propagation<T> {
    pub labels: SoftLabels<T>,
    pub iterations: Vec<usize>,
    pub converged: Vec<bool>,
}

impl<T> Propagation<T> {
    pub fn max_iterations(&self) -> usize {
        self.iterations.iter().copied().max().unwrap_or(0)
    }
}

/// `S = D^-1/2 W D^-1/2`; rows of isolated nodes are empty.
pub fn symmetric_normalize<T: Scalar>(w: &CsrMatrix<T>) -> CsrMatrix<T> {
    let inv_sqrt: Vec<T> = w
        .row_sums()
        .into_iter()
        .map(|d| if d > T::zero() { d.sqrt().recip() } else { T::zero() })
        .collect();
    w.map_values(|i, j, v| v * inv_sqrt[i] * inv_sqrt[j])
}

/// Solves `(I - αS) Ȳ = Ỹ` column by column with conjugate gradient,
/// starting from `Ȳ = Ỹ`. A column stops once its residual norm is `<= tol`.
pub fn propagate_labels<T: Scalar>(
    w: &AffinityGraph<T>,
    y_tilde: &SoftLabels<T>,
    alpha: f64,
    tol: f64,
    max_iter: usize,
) -> Result<Propagation<T>> {
    if !(0.0..1.0).contains(&alpha) {
        return Err(Error::InvalidArgument(format!("alpha = {alpha} outside [0, 1)")));
    }
    let wm = w.matrix();
    if wm.n_rows() != y_tilde.n_nodes() {
        return Err(Error::DimensionMismatch(format!(
            "affinity has {} nodes, labels have {}",
            wm.n_rows(),
            y_tilde.n_nodes()
        )));
    }
    let scale = wm.values().iter().fold(T::zero(), |a, &b| a.max(b.abs()));
    if let Some((row, col)) = wm.asymmetry(scale * T::lit(1e-12)) {
        return Err(Error::NotSymmetric { row, col });
    }
    let s = symmetric_normalize(wm);
    let a = T::lit(alpha);
    let apply = |v: &Array1<T>| -> Array1<T> {
        let sv = s.spmv(&v.view()).expect("square operator");
        v - &(sv * a)
    };
    let tol = T::lit(tol);

    let mut out = y_tilde.values.clone();
    let mut iterations = Vec::with_capacity(out.ncols());
    let mut converged = Vec::with_capacity(out.ncols());
    for (c, mut col) in out.axis_iter_mut(Axis(1)).enumerate() {
        let b = y_tilde.values.column(c).to_owned();
        let mut x = b.clone();
        let mut r = &b - &apply(&x);
        let mut p = r.clone();
        let mut rr = r.dot(&r);
        let mut it = 0;
        while rr.sqrt() > tol && it < max_iter {
            let ap = apply(&p);
            let step = rr / p.dot(&ap);
            x.scaled_add(step, &p);
            r.scaled_add(-step, &ap);
            let rr_next = r.dot(&r);
            p = &r + &(p * (rr_next / rr));
            rr = rr_next;
            it += 1;
        }
        iterations.push(it);
        converged.push(rr.sqrt() <= tol);
        col.assign(&x);
    }
    Ok(Propagation {
        labels: SoftLabels {
            values: out,
            role: LabelRole::Propagated,
        },
        iterations,
        converged,
    })
}

/// Clips negatives to zero and rescales each row to sum 1. Rows with no
/// positive mass become all-zero.
pub fn normalize_rows<T: Scalar>(y: ArrayView2<'_, T>) -> Array2<T> {
    let mut out = y.mapv(|v| if v > T::zero() { v } else { T::zero() });
    for mut row in out.axis_iter_mut(Axis(0)) {
        let s = row.sum();
        if s > T::zero() {
            row.mapv_inplace(|v| v / s);
        }
    }
    out
}

/// Clean-set selection on row-normalized `Ȳ`:
/// `g_i = 1` if `Ȳ[i, y_i] > 1/C`, otherwise `g_i = [max_c Ȳ[i, c] > η]`.
/// Also returns the hard pseudo-labels `argmax_c Ȳ[i, c]`.
pub fn select_clean<T: Scalar>(
    y_bar: ArrayView2<'_, T>,
    given: &[usize],
    eta: f64,
) -> (CleanMask, Vec<usize>) {
    let c = y_bar.ncols();
    let inv_c = T::one() / T::from_usize_lossy(c);
    let eta_t = T::lit(eta);
    let mut mask = Vec::with_capacity(given.len());
    let mut pseudo = Vec::with_capacity(given.len());
    for (row, &y) in y_bar.rows().into_iter().zip(given) {
        let best = argmax(row);
        let keep = row[y] > inv_c || row[best] > eta_t;
        mask.push(keep);
        pseudo.push(best);
    }
    (
        CleanMask {
            mask,
            eta,
            iteration: 0,
        },
        pseudo,
    )
}
