use ndarray::{Array1, ArrayView2, Axis};

use super::Model;
use crate::bench::metrics::OpenSetLabel;
use crate::denoise::softmax;
use crate::error::{Error, Result};
use crate::gcn::forward;
use crate::graph::Graph;
use crate::proto::{classify, score_rows, PrototypePool};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct OpenSetPrediction<T> {
    pub node: usize,
    pub label: OpenSetLabel,
    /// `max_c softmax(p̂ / T)_c`.
    pub confidence: f64,
    pub scores: Array1<T>,
}

pub(crate) fn confidences<T: Scalar>(
    z: ArrayView2<'_, T>,
    pool: &PrototypePool<T>,
    temperature: f64,
) -> Result<Vec<f64>> {
    let sm = score_rows(z, pool)?;
    let t = T::lit(temperature);
    Ok(sm
        .scores
        .rows()
        .into_iter()
        .map(|r| softmax(r, t).fold(T::zero(), |a, &b| a.max(b)).as_f64())
        .collect())
}

/// Open-set predictions for `ids`. The encoder runs over the whole of `g`;
/// a node is UNKNOWN when its confidence falls below the model's tau.
pub fn predict<T: Scalar>(m: &Model<T>, g: &Graph<T>, ids: &[usize]) -> Result<Vec<OpenSetPrediction<T>>> {
    if g.n_features() != m.params.n_features() {
        return Err(Error::DimensionMismatch(format!(
            "graph has {} features, model expects {}",
            g.n_features(),
            m.params.n_features()
        )));
    }
    if let Some(&bad) = ids.iter().find(|&&i| i >= g.n_nodes()) {
        return Err(Error::InvalidArgument(format!("node id {bad} out of range")));
    }
    let normalized;
    let graph = if m.config.row_normalize_features {
        normalized = g.row_normalized();
        &normalized
    } else {
        g
    };
    let a_hat = graph.normalize_adjacency();
    let (z, _) = forward(&m.params, &a_hat, graph.features().view())?;
    let zs = z.select(Axis(0), ids);
    let sm = score_rows(zs.view(), &m.pool)?;
    let t = T::lit(m.config.temperature);
    Ok(ids
        .iter()
        .zip(sm.scores.rows())
        .map(|(&node, row)| {
            let confidence = softmax(row, t).fold(T::zero(), |a, &b| a.max(b)).as_f64();
            let label = if confidence >= m.tau {
                OpenSetLabel::Known(classify(row))
            } else {
                OpenSetLabel::Unknown
            };
            OpenSetPrediction {
                node,
                label,
                confidence,
                scores: row.to_owned(),
            }
        })
        .collect())
}
