//! Converters from the raw LINQS citation-graph dumps to the TSV format.
//!
//! Two layouts are recognized inside the input directory:
//! * `*.content` + `*.cites` (Cora, CiteSeer): `id f1 .. fs label` rows and
//!   `cited citing` pairs.
//! * `*.NODE.paper.tab` + `*.DIRECTED.cites.tab` (Pubmed-Diabetes): sparse
//!   `name=value` feature rows after a schema line.
//!
//! Class ids are assigned in lexicographic order of the raw class names.
//! Citations that mention an unknown paper are dropped.

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::graph::Graph;

/// Summary of a conversion.
#[derive(Debug, Clone, PartialEq)]
pub struct Converted {
    pub graph: Graph<f64>,
    pub class_names: Vec<String>,
    pub dropped_edges: usize,
}

fn find(dir: &Path, suffix: &str) -> Result<Option<PathBuf>> {
    let mut hits = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let p = entry.map_err(|e| Error::io(dir, e))?.path();
        if p.file_name().is_some_and(|n| n.to_string_lossy().ends_with(suffix)) {
            hits.push(p);
        }
    }
    hits.sort();
    Ok(hits.into_iter().next())
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        file: path.display().to_string(),
        line,
        msg: msg.into(),
    }
}

/// Converts whichever raw layout `dir` holds.
pub fn convert_dir(dir: &Path) -> Result<Converted> {
    if let (Some(c), Some(e)) = (find(dir, ".content")?, find(dir, ".cites")?) {
        return convert_content(&c, &e);
    }
    if let (Some(n), Some(e)) = (find(dir, ".NODE.paper.tab")?, find(dir, ".DIRECTED.cites.tab")?) {
        return convert_pubmed(&n, &e);
    }
    Err(Error::MissingFile(dir.join("*.content | *.NODE.paper.tab")))
}

fn assemble(
    ids: &HashMap<String, usize>,
    rows: Vec<Vec<f64>>,
    raw_labels: Vec<String>,
    raw_edges: Vec<(String, String)>,
) -> Result<Converted> {
    let class_names: Vec<String> = raw_labels.iter().cloned().collect::<BTreeSet<_>>().into_iter().collect();
    let labels = raw_labels
        .iter()
        .map(|l| Some(class_names.binary_search(l).expect("name collected above")))
        .collect();
    let width = rows.first().map_or(0, Vec::len);
    let flat: Vec<f64> = rows.into_iter().flatten().collect();
    let x = Array2::from_shape_vec((raw_labels.len(), width), flat)
        .map_err(|e| Error::DimensionMismatch(e.to_string()))?;
    let mut edges = Vec::with_capacity(raw_edges.len());
    let mut dropped = 0;
    for (a, b) in raw_edges {
        match (ids.get(&a), ids.get(&b)) {
            (Some(&i), Some(&j)) => edges.push((i, j)),
            _ => dropped += 1,
        }
    }
    let graph = Graph::from_edges(x, &edges, labels, class_names.len())?;
    Ok(Converted {
        graph,
        class_names,
        dropped_edges: dropped,
    })
}

/// `*.content` / `*.cites` layout.
pub fn convert_content(content: &Path, cites: &Path) -> Result<Converted> {
    let text = read(content)?;
    let mut ids = HashMap::new();
    let (mut rows, mut labels) = (Vec::new(), Vec::new());
    for (ln, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() < 3 {
            return Err(parse_err(content, ln + 1, "expected id, features, label"));
        }
        let feats = f[1..f.len() - 1]
            .iter()
            .map(|v| v.parse::<f64>().map_err(|e| parse_err(content, ln + 1, e.to_string())))
            .collect::<Result<Vec<_>>>()?;
        if rows.first().is_some_and(|r: &Vec<f64>| r.len() != feats.len()) {
            return Err(parse_err(content, ln + 1, "inconsistent feature count"));
        }
        if ids.insert(f[0].to_string(), rows.len()).is_some() {
            return Err(parse_err(content, ln + 1, format!("duplicate paper id {}", f[0])));
        }
        rows.push(feats);
        labels.push(f[f.len() - 1].to_string());
    }
    let mut edges = Vec::new();
    for (ln, line) in read(cites)?.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 2 {
            return Err(parse_err(cites, ln + 1, "expected two paper ids"));
        }
        edges.push((f[0].to_string(), f[1].to_string()));
    }
    assemble(&ids, rows, labels, edges)
}

/// Pubmed-Diabetes `*.NODE.paper.tab` / `*.DIRECTED.cites.tab` layout.
pub fn convert_pubmed(nodes: &Path, cites: &Path) -> Result<Converted> {
    let text = read(nodes)?;
    let mut lines = text.lines().enumerate();
    lines.next();
    let (_, schema) = lines.next().ok_or_else(|| parse_err(nodes, 2, "missing schema line"))?;
    let names: Vec<&str> = schema
        .split('\t')
        .filter_map(|f| f.strip_prefix("numeric:"))
        .map(|f| f.rsplit_once(':').map_or(f, |(name, _)| name))
        .collect();
    let col: HashMap<&str, usize> = names.iter().enumerate().map(|(i, &n)| (n, i)).collect();
    let mut ids = HashMap::new();
    let (mut rows, mut labels) = (Vec::new(), Vec::new());
    for (ln, line) in lines.filter(|(_, l)| !l.trim().is_empty()) {
        let mut f = line.split('\t');
        let id = f.next().unwrap_or_default().trim().to_string();
        let mut row = vec![0.0; names.len()];
        let mut label = None;
        for kv in f {
            let Some((k, v)) = kv.split_once('=') else { continue };
            if k == "label" {
                label = Some(v.to_string());
            } else if let Some(&c) = col.get(k) {
                row[c] = v.parse().map_err(|_| parse_err(nodes, ln + 1, format!("bad value `{kv}`")))?;
            }
        }
        let label = label.ok_or_else(|| parse_err(nodes, ln + 1, "row has no label"))?;
        if ids.insert(id.clone(), rows.len()).is_some() {
            return Err(parse_err(nodes, ln + 1, format!("duplicate paper id {id}")));
        }
        rows.push(row);
        labels.push(label);
    }
    let mut edges = Vec::new();
    for (ln, line) in read(cites)?.lines().enumerate().skip(2).filter(|(_, l)| !l.trim().is_empty()) {
        let papers: Vec<&str> = line.split('\t').filter_map(|f| f.strip_prefix("paper:")).collect();
        if papers.len() != 2 {
            return Err(parse_err(cites, ln + 1, "expected `paper:A | paper:B`"));
        }
        edges.push((papers[0].to_string(), papers[1].to_string()));
    }
    assemble(&ids, rows, labels, edges)
}
