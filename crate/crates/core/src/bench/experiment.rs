//! Experiment orchestration: noise setup, repeated training, CSV reporting.

use std::fs::OpenOptions;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::metrics::{evaluate, Metrics, OpenSetLabel};
use super::noise::{
    build_holdout_scenario, build_near_ood_scenario, inject_far_ood, inject_ind_noise, FarOod,
    NoisyDataset,
};
use crate::error::{Error, Result};
use crate::graph::{load_dataset, DatasetFormat, Graph};
use crate::pipeline::{predict, train, AblationFlags, Model, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OodMode {
    #[default]
    None,
    Near,
    Far,
}

impl OodMode {
    pub fn as_str(self) -> &'static str {
        match self {
            OodMode::None => "none",
            OodMode::Near => "near",
            OodMode::Far => "far",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseSpec {
    pub ind_rate: f64,
    pub ood_mode: OodMode,
    /// Far mode: injected OOD nodes per training node.
    pub ood_rate: f64,
    /// Far mode: directory of the dataset supplying OOD nodes.
    pub far_source: Option<PathBuf>,
    /// Far mode: unknown test nodes per known test node; defaults to `ood_rate`.
    pub far_unknown_rate: Option<f64>,
}

impl NoiseSpec {
    pub fn validate(&self) -> Result<()> {
        for (name, r) in [("ind_rate", self.ind_rate), ("ood_rate", self.ood_rate)] {
            if !(0.0..=1.0).contains(&r) {
                return Err(Error::Config(format!("{name} = {r} is outside [0, 1]")));
            }
        }
        match (self.ood_mode, &self.far_source) {
            (OodMode::Far, None) => Err(Error::Config("ood_mode \"far\" requires far_source".into())),
            (OodMode::None | OodMode::Near, Some(_)) => {
                Err(Error::Config("far_source is only valid with ood_mode \"far\"".into()))
            }
            _ => Ok(()),
        }
    }

    /// Builds the noisy dataset for one seed.
    pub fn apply(&self, g: &Graph<f64>, source: Option<&Graph<f64>>, seed: u64) -> Result<NoisyDataset<f64>> {
        self.validate()?;
        let mut ds = match self.ood_mode {
            OodMode::Near => build_near_ood_scenario(g, seed)?,
            OodMode::None | OodMode::Far => build_holdout_scenario(g, seed)?,
        };
        inject_ind_noise(&mut ds, self.ind_rate, seed.wrapping_add(1))?;
        if self.ood_mode == OodMode::Far {
            let src = source.ok_or_else(|| Error::Config("far-OOD source graph not loaded".into()))?;
            let far = FarOod {
                unknown_rate: self.far_unknown_rate.unwrap_or(self.ood_rate),
                ..FarOod::new(self.ood_rate)
            };
            inject_far_ood(&mut ds, src, far, seed.wrapping_add(2))?;
        }
        Ok(ds)
    }
}

const NOISE_KEYS: [&str; 5] = ["ind_rate", "ood_mode", "ood_rate", "far_source", "far_unknown_rate"];

/// Training and noise settings read from one flat JSON object.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ExperimentConfig {
    pub train: TrainConfig,
    pub noise: NoiseSpec,
}

impl ExperimentConfig {
    /// Splits a flat JSON object into noise keys and training keys. Unknown
    /// keys are rejected. Relative `far_source` paths resolve against `base`.
    pub fn from_json(text: &str, base: Option<&Path>) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        let serde_json::Value::Object(all) = value else {
            return Err(Error::Config("config must be a JSON object".into()));
        };
        let (noise, train): (serde_json::Map<_, _>, serde_json::Map<_, _>) =
            all.into_iter().partition(|(k, _)| NOISE_KEYS.contains(&k.as_str()));
        let train: TrainConfig = serde_json::from_value(train.into())
            .map_err(|e| Error::Config(format!("training settings: {e}")))?;
        let mut noise: NoiseSpec = serde_json::from_value(noise.into())
            .map_err(|e| Error::Config(format!("noise settings: {e}")))?;
        if let (Some(base), Some(p)) = (base, noise.far_source.as_mut()) {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        train.validate()?;
        noise.validate()?;
        Ok(Self { train, noise })
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text, path.parent())
    }
}

pub const CSV_COLUMNS: [&str; 13] = [
    "dataset",
    "ood_mode",
    "ind_rate",
    "ood_rate",
    "variant",
    "seed",
    "macro_f1",
    "auroc",
    "known_acc",
    "unknown_acc",
    "overall_acc",
    "n_clean_final",
    "wall_seconds",
];

/// One `metrics.csv` row. `seed` is `"median"` on aggregate rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub dataset: String,
    pub ood_mode: String,
    pub ind_rate: f64,
    pub ood_rate: f64,
    pub variant: String,
    pub seed: String,
    pub macro_f1: f64,
    pub auroc: f64,
    pub known_acc: f64,
    pub unknown_acc: f64,
    pub overall_acc: f64,
    pub n_clean_final: f64,
    pub wall_seconds: f64,
}

impl MetricsRow {
    pub fn is_aggregate(&self) -> bool {
        self.seed == "median"
    }
}

/// Median ignoring NaNs; NaN if nothing is left.
pub fn median(values: &[f64]) -> f64 {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| !x.is_nan()).collect();
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        (v[m - 1] + v[m]) / 2.0
    }
}

fn aggregate(rows: &[MetricsRow]) -> MetricsRow {
    let col = |f: fn(&MetricsRow) -> f64| median(&rows.iter().map(f).collect::<Vec<_>>());
    MetricsRow {
        seed: "median".into(),
        macro_f1: col(|r| r.macro_f1),
        auroc: col(|r| r.auroc),
        known_acc: col(|r| r.known_acc),
        unknown_acc: col(|r| r.unknown_acc),
        overall_acc: col(|r| r.overall_acc),
        n_clean_final: col(|r| r.n_clean_final),
        wall_seconds: col(|r| r.wall_seconds),
        ..rows[0].clone()
    }
}

/// Evaluates a trained model on the test partition of `ds`.
pub fn evaluate_model(model: &Model<f64>, ds: &NoisyDataset<f64>) -> Result<Metrics> {
    let preds = predict(model, &ds.graph, &ds.test)?;
    let labels: Vec<OpenSetLabel> = preds.iter().map(|p| p.label).collect();
    let conf: Vec<f64> = preds.iter().map(|p| p.confidence).collect();
    evaluate(&labels, &conf, &ds.test_truth())
}

/// Everything needed to run one experiment cell.
pub struct Experiment<'a> {
    pub dataset: &'a str,
    pub graph: &'a Graph<f64>,
    pub far_source: Option<&'a Graph<f64>>,
    pub noise: &'a NoiseSpec,
    pub config: &'a TrainConfig,
    pub variant: AblationFlags,
}

/// Result of one seed: its CSV row and the trained model.
pub struct SeedRun {
    pub row: MetricsRow,
    pub model: Model<f64>,
    pub dataset: NoisyDataset<f64>,
}

impl Experiment<'_> {
    fn row(&self, seed: String, m: &Metrics, n_clean: usize, secs: f64) -> MetricsRow {
        MetricsRow {
            dataset: self.dataset.to_string(),
            ood_mode: self.noise.ood_mode.as_str().to_string(),
            ind_rate: self.noise.ind_rate,
            ood_rate: self.noise.ood_rate,
            variant: self.variant.name(),
            seed,
            macro_f1: m.macro_f1,
            auroc: m.auroc,
            known_acc: m.known_acc,
            unknown_acc: m.unknown_acc,
            overall_acc: m.overall_acc,
            n_clean_final: n_clean as f64,
            wall_seconds: secs,
        }
    }

    /// Noise injection, split, training and evaluation for a single seed.
    pub fn run_seed(&self, seed: u64) -> Result<SeedRun> {
        let start = Instant::now();
        let ds = self.noise.apply(self.graph, self.far_source, seed)?;
        let cfg = TrainConfig {
            seed,
            ..self.config.clone()
        };
        let mut model = train(&ds.graph, &ds.train, &ds.val, &cfg, self.variant)?;
        model.experiment = Some(serde_json::to_value(self.noise)?);
        let metrics = evaluate_model(&model, &ds)?;
        let n_clean = model.diagnostics.final_clean.len();
        let row = self.row(seed.to_string(), &metrics, n_clean, start.elapsed().as_secs_f64());
        Ok(SeedRun {
            row,
            model,
            dataset: ds,
        })
    }

    /// Runs seeds `config.seed .. config.seed + n_seeds`, returning one row per
    /// seed followed by the median row. `on_row` sees each row as it is made.
    pub fn run(&self, n_seeds: usize, mut on_row: impl FnMut(&MetricsRow) -> Result<()>) -> Result<Vec<MetricsRow>> {
        if n_seeds == 0 {
            return Err(Error::InvalidArgument("n_seeds must be >= 1".into()));
        }
        let mut rows = Vec::with_capacity(n_seeds + 1);
        for s in 0..n_seeds as u64 {
            let row = self.run_seed(self.config.seed + s)?.row;
            on_row(&row)?;
            rows.push(row);
        }
        let agg = aggregate(&rows);
        on_row(&agg)?;
        rows.push(agg);
        Ok(rows)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    Ind,
    Ood,
}

impl std::str::FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ind" => Ok(SweepAxis::Ind),
            "ood" => Ok(SweepAxis::Ood),
            other => Err(Error::Config(format!("unknown sweep axis `{other}` (ind|ood)"))),
        }
    }
}

/// Runs one experiment per value of the swept noise rate.
pub fn sweep(
    base: &Experiment<'_>,
    axis: SweepAxis,
    values: &[f64],
    n_seeds: usize,
    mut on_row: impl FnMut(&MetricsRow) -> Result<()>,
) -> Result<Vec<MetricsRow>> {
    if axis == SweepAxis::Ood && base.noise.ood_mode != OodMode::Far {
        return Err(Error::Config("an ood sweep needs ood_mode \"far\"".into()));
    }
    let mut rows = Vec::new();
    for &v in values {
        let mut noise = base.noise.clone();
        match axis {
            SweepAxis::Ind => noise.ind_rate = v,
            SweepAxis::Ood => noise.ood_rate = v,
        }
        let exp = Experiment { noise: &noise, ..*base };
        rows.extend(exp.run(n_seeds, &mut on_row)?);
    }
    Ok(rows)
}

/// Append-only CSV writer; the header is written when the file is empty.
pub struct CsvSink {
    writer: csv::Writer<std::fs::File>,
}

impl CsvSink {
    pub fn append(path: &Path) -> Result<Self> {
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        let empty = file.metadata().map_err(|e| Error::io(path, e))?.len() == 0;
        let writer = csv::WriterBuilder::new().has_headers(empty).from_writer(file);
        Ok(Self { writer })
    }

    pub fn write(&mut self, row: &MetricsRow) -> Result<()> {
        self.writer.serialize(row)?;
        self.writer.flush().map_err(|e| Error::io("<csv>", e))
    }
}

/// Reads every row of a metrics CSV.
pub fn read_rows(path: &Path) -> Result<Vec<MetricsRow>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|x| x.map_err(Error::from)).collect()
}

/// Loads a TSV dataset directory, naming it after the directory.
pub fn load_named(dir: &Path) -> Result<(String, Graph<f64>)> {
    let name = dir
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".into());
    Ok((name, load_dataset(dir, DatasetFormat::Tsv)?))
}
