use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Hyperparameters of the training loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub warmup_epochs: usize,
    /// Epochs between denoise / recluster refreshes after warm-up.
    pub refresh_period: usize,
    /// Encoder Adam learning rate.
    pub lr: f64,
    /// Interior prototype step size.
    pub phi: f64,
    /// Weight of the diversity loss.
    pub lambda: f64,
    pub temperature: f64,
    pub alpha: f64,
    pub beta: f64,
    pub k_nn: usize,
    pub eta: f64,
    pub tau: f64,
    /// Number of K-means regions; `None` means `5 * C`.
    pub k_clusters: Option<usize>,
    pub hidden_dim: usize,
    pub latent_dim: usize,
    pub seed: u64,
    pub cg_tol: f64,
    pub cg_max_iter: usize,
    pub kmeans_max_iter: usize,
    /// Unit-normalize latent rows before building the kNN affinity.
    pub knn_cosine: bool,
    pub row_normalize_features: bool,
    /// When set, pick the largest tau in {0.1, ..., 0.9} that rejects at most
    /// this fraction of validation nodes; otherwise use `tau` as given.
    pub tau_max_val_reject: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            warmup_epochs: 20,
            refresh_period: 5,
            lr: 1e-3,
            phi: 1e-4,
            lambda: 1e-2,
            temperature: 0.1,
            alpha: 0.99,
            beta: 3.0,
            k_nn: 30,
            eta: 0.9,
            tau: 0.5,
            k_clusters: None,
            hidden_dim: 128,
            latent_dim: 128,
            seed: 0,
            cg_tol: 1e-6,
            cg_max_iter: 200,
            kmeans_max_iter: 100,
            knn_cosine: false,
            row_normalize_features: false,
            tau_max_val_reject: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(msg.to_string()));
        if self.epochs == 0 {
            return bad("epochs must be >= 1");
        }
        if self.warmup_epochs > self.epochs {
            return bad("warmup_epochs must not exceed epochs");
        }
        if self.refresh_period == 0 {
            return bad("refresh_period must be >= 1");
        }
        for (name, v) in [
            ("lr", self.lr),
            ("phi", self.phi),
            ("temperature", self.temperature),
            ("beta", self.beta),
            ("cg_tol", self.cg_tol),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if !(self.lambda >= 0.0) {
            return bad("lambda must be >= 0");
        }
        if !(0.0..=1.0).contains(&self.eta) || !(0.0..=1.0).contains(&self.tau) {
            return bad("eta and tau must lie in [0, 1]");
        }
        if !(0.0..1.0).contains(&self.alpha) {
            return bad("alpha must lie in [0, 1)");
        }
        if self.k_nn == 0 || self.hidden_dim == 0 || self.latent_dim == 0 {
            return bad("k_nn, hidden_dim and latent_dim must be >= 1");
        }
        if self.k_clusters == Some(0) {
            return bad("k_clusters must be >= 1");
        }
        if let Some(r) = self.tau_max_val_reject {
            if !(0.0..=1.0).contains(&r) {
                return bad("tau_max_val_reject must lie in [0, 1]");
            }
        }
        Ok(())
    }

    pub fn k_clusters_for(&self, n_classes: usize) -> usize {
        self.k_clusters.unwrap_or(5 * n_classes)
    }
}

/// Which parts of the method are active. The default enables everything.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AblationFlags {
    /// Build the latent kNN graph for propagation (otherwise reuse the input graph).
    pub knn_graph: bool,
    pub denoise: bool,
    /// Cluster into regions, mask interior updates, keep border prototypes.
    pub regions: bool,
    pub diversity: bool,
}

impl Default for AblationFlags {
    fn default() -> Self {
        Self {
            knn_graph: true,
            denoise: true,
            regions: true,
            diversity: true,
        }
    }
}

impl AblationFlags {
    pub const NAMES: [&'static str; 5] = ["full", "no-gn", "no-denoise", "no-region", "no-ldiv"];

    pub fn from_name(name: &str) -> Result<Self> {
        let full = Self::default();
        Ok(match name {
            "full" => full,
            "no-gn" => Self { knn_graph: false, ..full },
            "no-denoise" => Self { denoise: false, ..full },
            "no-region" => Self { regions: false, ..full },
            "no-ldiv" => Self { diversity: false, ..full },
            other => {
                return Err(Error::Config(format!(
                    "unknown variant `{other}` (expected one of {:?})",
                    Self::NAMES
                )))
            }
        })
    }

    /// Short name used in reports; combinations are joined with `+`.
    pub fn name(&self) -> String {
        let mut parts = Vec::new();
        if !self.knn_graph {
            parts.push("no-gn");
        }
        if !self.denoise {
            parts.push("no-denoise");
        }
        if !self.regions {
            parts.push("no-region");
        }
        if !self.diversity {
            parts.push("no-ldiv");
        }
        if parts.is_empty() {
            "full".into()
        } else {
            parts.join("+")
        }
    }
}
