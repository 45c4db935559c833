//! End-to-end training loop, open-set prediction and model persistence.

mod config;
mod persist;
mod predict;
mod train;

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use config::{AblationFlags, TrainConfig};
pub use persist::{from_bytes, load, save, to_bytes, MODEL_FORMAT_VERSION, MODEL_MAGIC};
pub use predict::{predict, OpenSetPrediction};
pub use train::{train, train_with_observer, ClosedSetStep};

use crate::error::{Error, Result};
use crate::gcn::GcnParams;
use crate::proto::PrototypePool;

/// One line of the training log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub l_cls: f64,
    pub l_div: f64,
    pub n_clean: usize,
    /// NaN when there is no validation set; stored as `null`.
    #[serde(with = "nan_as_null")]
    pub val_macro_f1: f64,
}

mod nan_as_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
    }
}

/// Diagnostics of one denoising refresh.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DenoiseRecord {
    pub epoch: usize,
    pub n_clean: usize,
    pub n_removed: usize,
    pub mean_max_confidence: f64,
    pub cg_iterations: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainDiagnostics {
    pub log: Vec<EpochRecord>,
    pub denoise: Vec<DenoiseRecord>,
    /// Epoch whose parameters were kept (best validation macro-F1).
    pub best_epoch: usize,
    /// Global ids of the clean training nodes after the last refresh.
    pub final_clean: Vec<usize>,
    /// Hard pseudo-labels of `final_clean`, same order.
    pub final_pseudo_labels: Vec<usize>,
}

impl TrainDiagnostics {
    /// Writes the log as JSON lines.
    pub fn write_log(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for r in &self.log {
            out.push_str(&serde_json::to_string(r)?);
            out.push('\n');
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    /// Writes the denoising diagnostics as TSV.
    pub fn write_denoise_tsv(&self, path: &Path) -> Result<()> {
        let io = |e| Error::io(path, e);
        let mut w = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
        writeln!(w, "epoch\tn_clean\tn_removed\tmean_max_confidence\tcg_iterations").map_err(io)?;
        for r in &self.denoise {
            writeln!(
                w,
                "{}\t{}\t{}\t{}\t{}",
                r.epoch, r.n_clean, r.n_removed, r.mean_max_confidence, r.cg_iterations
            )
            .map_err(io)?;
        }
        w.flush().map_err(io)
    }
}

/// A trained open-set classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct Model<T> {
    pub params: GcnParams<T>,
    pub pool: PrototypePool<T>,
    pub config: TrainConfig,
    pub flags: AblationFlags,
    pub n_classes: usize,
    /// Rejection threshold applied at prediction time.
    pub tau: f64,
    pub diagnostics: TrainDiagnostics,
    /// Free-form experiment description (noise setup etc.) carried in the model file.
    pub experiment: Option<serde_json::Value>,
}
