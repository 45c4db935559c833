//! Graph data model, TSV dataset ingestion, GCN adjacency normalization and
//! stratified node splitting.

use std::collections::BTreeSet;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::sparse::CsrMatrix;

/// Label written in `nodes.tsv` for unlabeled nodes.
pub const UNLABELED_TSV: i64 = -1;

/// Undirected attributed graph with (possibly noisy) node labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph<T> {
    features: Array2<T>,
    adjacency: CsrMatrix<T>,
    labels: Vec<Option<usize>>,
    n_classes: usize,
}

impl<T: Scalar> Graph<T> {
    /// Builds a graph from an undirected edge list. Edges are symmetrized by
    /// union, duplicates collapse, and self-loops are dropped.
    pub fn from_edges(
        features: Array2<T>,
        edges: &[(usize, usize)],
        labels: Vec<Option<usize>>,
        n_classes: usize,
    ) -> Result<Self> {
        let n = features.nrows();
        if labels.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "{} labels for {} feature rows",
                labels.len(),
                n
            )));
        }
        for (node, label) in labels.iter().enumerate() {
            if let Some(label) = *label {
                if label >= n_classes {
                    return Err(Error::LabelOutOfRange {
                        node,
                        label,
                        n_classes,
                    });
                }
            }
        }
        let mut pairs = BTreeSet::new();
        for &(a, b) in edges {
            if a >= n || b >= n {
                return Err(Error::DanglingEdge {
                    src: a,
                    dst: b,
                    n_nodes: n,
                });
            }
            if a != b {
                pairs.insert((a, b));
                pairs.insert((b, a));
            }
        }
        let adjacency =
            CsrMatrix::from_triplets(n, n, pairs.into_iter().map(|(a, b)| (a, b, T::one())))?;
        Ok(Self {
            features,
            adjacency,
            labels,
            n_classes,
        })
    }

    pub fn n_nodes(&self) -> usize {
        self.features.nrows()
    }

    pub fn n_features(&self) -> usize {
        self.features.ncols()
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn features(&self) -> &Array2<T> {
        &self.features
    }

    pub fn adjacency(&self) -> &CsrMatrix<T> {
        &self.adjacency
    }

    pub fn labels(&self) -> &[Option<usize>] {
        &self.labels
    }

    pub fn label(&self, node: usize) -> Option<usize> {
        self.labels[node]
    }

    pub fn degree(&self, node: usize) -> usize {
        self.adjacency.row(node).0.len()
    }

    pub fn neighbors(&self, node: usize) -> &[usize] {
        self.adjacency.row(node).0
    }

    /// Unique undirected edges as `(i, j)` with `i < j`.
    pub fn edge_list(&self) -> Vec<(usize, usize)> {
        self.adjacency
            .iter()
            .filter(|&(i, j, _)| i < j)
            .map(|(i, j, _)| (i, j))
            .collect()
    }

    pub fn labeled_nodes(&self) -> Vec<usize> {
        (0..self.n_nodes())
            .filter(|&i| self.labels[i].is_some())
            .collect()
    }

    /// Copy with replaced labels (same structure and features).
    pub fn with_labels(&self, labels: Vec<Option<usize>>, n_classes: usize) -> Result<Self> {
        Self::from_edges(self.features.clone(), &self.edge_list(), labels, n_classes)
    }

    /// Copy whose feature rows are scaled to unit L1 norm (all-zero rows stay zero).
    pub fn row_normalized(&self) -> Self {
        let mut out = self.clone();
        for mut row in out.features.axis_iter_mut(Axis(0)) {
            let s: T = row.iter().map(|v| v.abs()).sum();
            if s > T::zero() {
                row.mapv_inplace(|v| v / s);
            }
        }
        out
    }

    /// Induced subgraph on `ids`; node `ids[k]` becomes node `k`.
    pub fn induced_subgraph(&self, ids: &[usize]) -> Self {
        let features = self.features.select(Axis(0), ids);
        let adjacency = self.adjacency.submatrix(ids);
        let labels = ids.iter().map(|&i| self.labels[i]).collect();
        Self {
            features,
            adjacency,
            labels,
            n_classes: self.n_classes,
        }
    }

    pub fn normalize_adjacency(&self) -> NormalizedAdjacency<T> {
        normalize_adjacency(self)
    }
}

/// GCN propagation operator `D^-1/2 (A + I) D^-1/2`.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedAdjacency<T>(CsrMatrix<T>);

impl<T: Scalar> NormalizedAdjacency<T> {
    pub fn matrix(&self) -> &CsrMatrix<T> {
        &self.0
    }

    pub fn n_nodes(&self) -> usize {
        self.0.n_rows()
    }
}

pub fn normalize_adjacency<T: Scalar>(g: &Graph<T>) -> NormalizedAdjacency<T> {
    let a = g.adjacency();
    let n = a.n_rows();
    let inv_sqrt: Vec<T> = a
        .row_sums()
        .into_iter()
        .map(|d| (d + T::one()).sqrt().recip())
        .collect();
    let triplets = a
        .iter()
        .chain((0..n).map(|i| (i, i, T::one())))
        .map(|(i, j, v)| (i, j, v * inv_sqrt[i] * inv_sqrt[j]));
    NormalizedAdjacency(
        CsrMatrix::from_triplets(n, n, triplets).expect("indices come from a valid matrix"),
    )
}

/// Sparse-dense product `m * x`.
pub fn spmm<T: Scalar>(m: &CsrMatrix<T>, x: &ndarray::ArrayView2<'_, T>) -> Result<Array2<T>> {
    m.spmm(x)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub val_fraction: f64,
    pub test_fraction: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train_fraction: 0.70,
            val_fraction: 0.10,
            test_fraction: 0.20,
            seed: 0,
        }
    }
}

impl SplitSpec {
    pub fn with_seed(seed: u64) -> Self {
        Self {
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let f = [self.train_fraction, self.val_fraction, self.test_fraction];
        if f.iter().any(|&x| !(x > 0.0)) {
            return Err(Error::InvalidArgument("split fractions must be positive".into()));
        }
        if (f.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument("split fractions must sum to 1".into()));
        }
        Ok(())
    }
}

/// Disjoint train / validation / test node ids, each sorted ascending.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NodeSplit {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

pub fn split_nodes<T: Scalar>(g: &Graph<T>, spec: &SplitSpec) -> Result<NodeSplit> {
    split_labels(g.labels(), g.n_classes(), spec)
}

/// Per-class stratified split of every labeled entry of `labels`.
///
/// Each class with `n` members contributes `max(1, round(val*n))` validation
/// and `max(1, round(test*n))` test nodes; the rest go to training.
pub fn split_labels(
    labels: &[Option<usize>],
    n_classes: usize,
    spec: &SplitSpec,
) -> Result<NodeSplit> {
    spec.validate()?;
    let mut by_class = vec![Vec::new(); n_classes];
    for (i, l) in labels.iter().enumerate() {
        if let Some(c) = *l {
            if c >= n_classes {
                return Err(Error::LabelOutOfRange {
                    node: i,
                    label: c,
                    n_classes,
                });
            }
            by_class[c].push(i);
        }
    }
    if by_class.iter().all(Vec::is_empty) {
        return Err(Error::InvalidArgument("no labeled nodes to split".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut split = NodeSplit {
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
    };
    for (class, mut members) in by_class.into_iter().enumerate() {
        if members.is_empty() {
            continue;
        }
        if members.len() < 3 {
            return Err(Error::ClassTooSmall {
                class,
                count: members.len(),
            });
        }
        members.shuffle(&mut rng);
        let n = members.len() as f64;
        let n_val = ((spec.val_fraction * n).round() as usize).max(1);
        let n_test = ((spec.test_fraction * n).round() as usize).max(1);
        let n_train = members.len().saturating_sub(n_val + n_test).max(1);
        let n_val = members.len() - n_train - n_test;
        split.train.extend_from_slice(&members[..n_train]);
        split.val.extend_from_slice(&members[n_train..n_train + n_val]);
        split.test.extend_from_slice(&members[n_train + n_val..]);
    }
    split.train.sort_unstable();
    split.val.sort_unstable();
    split.test.sort_unstable();
    Ok(split)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub n_nodes: usize,
    pub n_features: usize,
    pub n_classes: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DatasetFormat {
    #[default]
    Tsv,
}

/// Reads `nodes.tsv`, `edges.tsv` and (if present) `meta.json` from `dir`.
pub fn load_dataset<T: Scalar>(dir: &Path, format: DatasetFormat) -> Result<Graph<T>> {
    match format {
        DatasetFormat::Tsv => load_tsv(dir),
    }
}

fn open_lines(path: &Path) -> Result<impl Iterator<Item = (usize, std::io::Result<String>)>> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(BufReader::new(file).lines().enumerate().map(|(i, l)| (i + 1, l)))
}

fn load_tsv<T: Scalar>(dir: &Path) -> Result<Graph<T>> {
    let meta_path = dir.join("meta.json");
    let meta: Option<DatasetMeta> = if meta_path.exists() {
        let text = fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
        Some(serde_json::from_str(&text)?)
    } else {
        None
    };

    let nodes_path = dir.join("nodes.tsv");
    let mut rows: Vec<(usize, Option<usize>, Vec<f64>)> = Vec::new();
    let parse_err = |line: usize, msg: String| Error::Parse {
        file: "nodes.tsv".into(),
        line,
        msg,
    };
    for (line_no, line) in open_lines(&nodes_path)? {
        let line = line.map_err(|e| Error::io(&nodes_path, e))?;
        if line_no == 1 {
            if !line.starts_with("node_id\tlabel") {
                return Err(parse_err(1, "expected header `node_id<TAB>label<TAB>f1..`".into()));
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split('\t');
        let id: usize = fields
            .next()
            .and_then(|f| f.trim().parse().ok())
            .ok_or_else(|| parse_err(line_no, "bad node id".into()))?;
        let label: i64 = fields
            .next()
            .and_then(|f| f.trim().parse().ok())
            .ok_or_else(|| parse_err(line_no, "bad label".into()))?;
        let label = match label {
            UNLABELED_TSV => None,
            l if l >= 0 => Some(l as usize),
            l => return Err(parse_err(line_no, format!("negative label {l}"))),
        };
        let feats = fields
            .map(|f| {
                f.trim()
                    .parse::<f64>()
                    .map_err(|_| parse_err(line_no, format!("non-numeric feature `{f}`")))
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push((id, label, feats));
    }

    let n = rows.len();
    let s = rows.first().map_or(0, |r| r.2.len());
    if let Some(meta) = meta {
        if meta.n_nodes != n || (n > 0 && meta.n_features != s) {
            return Err(Error::DimensionMismatch(format!(
                "meta.json declares {}x{}, nodes.tsv has {}x{}",
                meta.n_nodes, meta.n_features, n, s
            )));
        }
    }
    let mut features = Array2::<T>::zeros((n, s));
    let mut labels = vec![None; n];
    let mut seen = vec![false; n];
    for (row_no, (id, label, feats)) in rows.into_iter().enumerate() {
        if id >= n || seen[id] {
            return Err(parse_err(row_no + 2, format!("node id {id} duplicated or out of 0..{n}")));
        }
        if feats.len() != s {
            return Err(parse_err(row_no + 2, format!("expected {s} features, got {}", feats.len())));
        }
        seen[id] = true;
        labels[id] = label;
        for (k, v) in feats.into_iter().enumerate() {
            features[[id, k]] = T::lit(v);
        }
    }
    let n_classes = match meta {
        Some(m) => m.n_classes,
        None => labels.iter().flatten().max().map_or(0, |&m| m + 1),
    };

    let edges_path = dir.join("edges.tsv");
    let mut edges = Vec::new();
    for (line_no, line) in open_lines(&edges_path)? {
        let line = line.map_err(|e| Error::io(&edges_path, e))?;
        let t = line.trim();
        if t.is_empty() || t.starts_with("src") {
            continue;
        }
        let mut it = t.split('\t').map(|f| f.trim().parse::<usize>());
        match (it.next(), it.next()) {
            (Some(Ok(a)), Some(Ok(b))) => edges.push((a, b)),
            _ => {
                return Err(Error::Parse {
                    file: "edges.tsv".into(),
                    line: line_no,
                    msg: format!("expected `src<TAB>dst`, got `{t}`"),
                })
            }
        }
    }
    Graph::from_edges(features, &edges, labels, n_classes)
}

/// Writes `g` in the TSV interchange format (nodes, edges, meta).
pub fn write_dataset<T: Scalar>(g: &Graph<T>, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let nodes_path = dir.join("nodes.tsv");
    let file = fs::File::create(&nodes_path).map_err(|e| Error::io(&nodes_path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(&nodes_path, e);
    let mut header = String::from("node_id\tlabel");
    for k in 1..=g.n_features() {
        header.push_str(&format!("\tf{k}"));
    }
    writeln!(w, "{header}").map_err(io)?;
    for i in 0..g.n_nodes() {
        let label = g.label(i).map_or(UNLABELED_TSV, |l| l as i64);
        write!(w, "{i}\t{label}").map_err(io)?;
        for v in g.features().row(i) {
            write!(w, "\t{v}").map_err(io)?;
        }
        writeln!(w).map_err(io)?;
    }
    w.flush().map_err(io)?;

    let edges_path = dir.join("edges.tsv");
    let file = fs::File::create(&edges_path).map_err(|e| Error::io(&edges_path, e))?;
    let mut w = BufWriter::new(file);
    for (a, b) in g.edge_list() {
        writeln!(w, "{a}\t{b}").map_err(|e| Error::io(&edges_path, e))?;
    }
    w.flush().map_err(|e| Error::io(&edges_path, e))?;

    let meta = DatasetMeta {
        n_nodes: g.n_nodes(),
        n_features: g.n_features(),
        n_classes: g.n_classes(),
    };
    let meta_path = dir.join("meta.json");
    fs::write(&meta_path, serde_json::to_string_pretty(&meta)?).map_err(|e| Error::io(&meta_path, e))
}
