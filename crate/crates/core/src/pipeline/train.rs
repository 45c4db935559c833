use ndarray::{Array2, ArrayView2, Axis};

use super::{AblationFlags, DenoiseRecord, EpochRecord, Model, TrainConfig, TrainDiagnostics};
use crate::bench::metrics::{macro_f1, OpenSetLabel};
use crate::denoise::{
    assemble_seed_labels, build_knn_affinity, normalize_rows, propagate_labels, select_clean,
    AffinityGraph, CleanMask,
};
use crate::error::{Error, Result};
use crate::gcn::{adam_step, backward, forward, AdamState, GcnParams};
use crate::graph::Graph;
use crate::proto::{
    classification_loss, classify, cluster_regions, compute_border_prototypes, diversity_loss,
    score_backward, score_rows, update_interior, InteriorMask, PrototypePool,
};
use crate::scalar::Scalar;

/// Snapshot handed to a training observer after each epoch's gradient step.
#[derive(Debug, Clone, Copy)]
pub struct ClosedSetStep<'a> {
    pub record: &'a EpochRecord,
    /// Local training-node clean mask in effect this epoch.
    pub clean: &'a CleanMask,
}

/// Trains the encoder and prototypes on `train_ids` (noisy labels taken from
/// `g`), selecting the epoch with the best validation macro-F1 on `val_ids`.
///
/// Training is inductive: only the subgraph induced by `train_ids ∪ val_ids`
/// is ever seen.
pub fn train<T: Scalar>(
    g: &Graph<T>,
    train_ids: &[usize],
    val_ids: &[usize],
    cfg: &TrainConfig,
    flags: AblationFlags,
) -> Result<Model<T>> {
    train_with_observer(g, train_ids, val_ids, cfg, flags, |_| {})
}

pub fn train_with_observer<T: Scalar>(
    g: &Graph<T>,
    train_ids: &[usize],
    val_ids: &[usize],
    cfg: &TrainConfig,
    flags: AblationFlags,
    mut observe: impl FnMut(ClosedSetStep<'_>),
) -> Result<Model<T>> {
    cfg.validate()?;
    let n_classes = g.n_classes();
    if n_classes == 0 {
        return Err(Error::InvalidArgument("graph declares no classes".into()));
    }
    if train_ids.is_empty() {
        return Err(Error::InvalidArgument("empty training set".into()));
    }

    let mut nodes: Vec<usize> = train_ids.iter().chain(val_ids).copied().collect();
    nodes.sort_unstable();
    nodes.dedup();
    if nodes.len() != train_ids.len() + val_ids.len() {
        return Err(Error::InvalidArgument("train and validation ids overlap".into()));
    }
    if let Some(&bad) = nodes.iter().find(|&&i| i >= g.n_nodes()) {
        return Err(Error::InvalidArgument(format!("node id {bad} out of range")));
    }
    let local_of = |id: usize| nodes.binary_search(&id).expect("id is in node set");
    let train_local: Vec<usize> = train_ids.iter().map(|&i| local_of(i)).collect();
    let val_local: Vec<usize> = val_ids.iter().map(|&i| local_of(i)).collect();
    let label_of = |id: usize| {
        g.label(id)
            .ok_or_else(|| Error::InvalidArgument(format!("node {id} has no label")))
    };
    let given: Vec<usize> = train_ids.iter().map(|&i| label_of(i)).collect::<Result<_>>()?;
    let val_truth: Vec<OpenSetLabel> = val_ids
        .iter()
        .map(|&i| label_of(i).map(OpenSetLabel::Known))
        .collect::<Result<_>>()?;

    let mut sub = g.induced_subgraph(&nodes);
    if cfg.row_normalize_features {
        sub = sub.row_normalized();
    }
    let a_hat = sub.normalize_adjacency();
    let train_structure = sub.adjacency().submatrix(&train_local);

    let mut params = GcnParams::<T>::init(sub.n_features(), cfg.hidden_dim, cfg.latent_dim, cfg.seed)?;
    let mut pool = PrototypePool::<T>::init(n_classes, cfg.latent_dim, cfg.seed.wrapping_add(0x5eed))?;
    let mut adam = AdamState::for_params(&params);

    let n_train = train_ids.len();
    let mut clean = CleanMask::all(n_train);
    let mut pseudo = given.clone();
    let mut clean_idx: Vec<usize> = (0..n_train).collect();
    let mut interior_class: Vec<Option<usize>> = Vec::new();
    let mut prev_scores: Option<Array2<T>> = None;
    let mut diag = TrainDiagnostics::default();
    let mut best: Option<(f64, usize, GcnParams<T>, PrototypePool<T>)> = None;
    let lambda = if flags.diversity { cfg.lambda } else { 0.0 };

    for epoch in 0..cfg.epochs {
        let (z, cache) = forward(&params, &a_hat, sub.features().view())?;
        let z_train = z.select(Axis(0), &train_local);

        let in_warmup = epoch < cfg.warmup_epochs;
        let refresh = in_warmup || (epoch - cfg.warmup_epochs) % cfg.refresh_period == 0;
        if refresh {
            if !in_warmup && flags.denoise {
                let w = if flags.knn_graph {
                    let k = cfg.k_nn.min(n_train.saturating_sub(1)).max(1);
                    if n_train < 2 {
                        AffinityGraph::from_structure(&train_structure)?
                    } else {
                        build_knn_affinity(z_train.view(), k, cfg.beta, cfg.knn_cosine)?
                    }
                } else {
                    AffinityGraph::from_structure(&train_structure)?
                };
                let seeds = assemble_seed_labels(
                    &given,
                    n_classes,
                    &clean,
                    prev_scores.as_ref().map(|s| s.view()),
                    cfg.temperature,
                )?;
                let prop = propagate_labels(&w, &seeds, cfg.alpha, cfg.cg_tol, cfg.cg_max_iter)?;
                let y_bar = normalize_rows(prop.labels.values.view());
                let (mut mask, labels) = select_clean(y_bar.view(), &given, cfg.eta);
                mask.iteration = epoch;
                let n_clean = mask.n_clean();
                let mean_max = y_bar
                    .rows()
                    .into_iter()
                    .map(|r| r.fold(T::zero(), |a, &b| a.max(b)).as_f64())
                    .sum::<f64>()
                    / n_train as f64;
                diag.denoise.push(DenoiseRecord {
                    epoch,
                    n_clean,
                    n_removed: n_train - n_clean,
                    mean_max_confidence: mean_max,
                    cg_iterations: prop.max_iterations(),
                });
                if n_clean < n_classes {
                    return Err(Error::CleanSetCollapsed { n_clean, n_classes });
                }
                clean = mask;
                pseudo = labels;
            } else {
                clean = CleanMask::all(n_train);
                clean.iteration = epoch;
                pseudo = given.clone();
            }
            clean_idx = clean.clean_indices();

            if flags.regions {
                let zc = z_train.select(Axis(0), &clean_idx);
                let labels: Vec<usize> = clean_idx.iter().map(|&i| pseudo[i]).collect();
                let k = cfg.k_clusters_for(n_classes).min(clean_idx.len());
                let ca = cluster_regions(
                    zc.view(),
                    &labels,
                    n_classes,
                    k,
                    cfg.seed.wrapping_add(epoch as u64),
                    cfg.kmeans_max_iter,
                )?;
                pool.border = compute_border_prototypes(&ca, zc.view());
                interior_class = ca.homogeneous_class_per_row();
            } else {
                pool.clear_border();
                interior_class.clear();
            }
        }

        // Loss over the clean set.
        let clean_labels: Vec<usize> = clean_idx.iter().map(|&i| pseudo[i]).collect();
        let zc = z_train.select(Axis(0), &clean_idx);
        let sm = score_rows(zc.view(), &pool)?;
        let (l_cls, g_scores) = classification_loss(sm.scores.view(), &clean_labels, cfg.temperature)?;
        let (l_div, g_div) = if flags.diversity {
            diversity_loss(pool.interior.view())
        } else {
            (T::zero(), Array2::zeros(pool.interior.dim()))
        };
        let loss = l_cls + T::lit(lambda) * l_div;
        if !loss.is_finite() {
            return Err(Error::Diverged(epoch));
        }
        let mask = if flags.regions {
            InteriorMask::ClassOnly(&interior_class)
        } else {
            InteriorMask::All
        };
        let (g_zc, g_interior_cls) = score_backward(zc.view(), &pool, &sm, g_scores.view(), mask);
        let mut grad_z = Array2::<T>::zeros(z.dim());
        for (row, &i) in clean_idx.iter().enumerate() {
            grad_z.row_mut(train_local[i]).assign(&g_zc.row(row));
        }
        let grads = backward(&params, &cache, grad_z.view(), false)?;

        prev_scores = Some(score_rows(z_train.view(), &pool)?.scores);
        let val_f1 = if val_local.is_empty() {
            f64::NAN
        } else {
            let zv = z.select(Axis(0), &val_local);
            closed_set_f1(zv.view(), &pool, &val_truth)?
        };

        let record = EpochRecord {
            epoch,
            loss: loss.as_f64(),
            l_cls: l_cls.as_f64(),
            l_div: l_div.as_f64(),
            n_clean: clean_idx.len(),
            val_macro_f1: val_f1,
        };
        observe(ClosedSetStep {
            record: &record,
            clean: &clean,
        });
        diag.log.push(record);
        let improved = match &best {
            None => true,
            Some((f, ..)) => val_f1 > *f || val_f1.is_nan(),
        };
        if improved {
            best = Some((val_f1, epoch, params.clone(), pool.clone()));
        }

        adam_step(&mut params, &grads, &mut adam, cfg.lr)?;
        let g_interior = g_interior_cls + &(g_div * T::lit(lambda));
        update_interior(&mut pool.interior, g_interior.view(), cfg.phi)?;
    }

    diag.final_clean = clean_idx.iter().map(|&i| train_ids[i]).collect();
    diag.final_pseudo_labels = clean_idx.iter().map(|&i| pseudo[i]).collect();
    let (_, best_epoch, best_params, best_pool) = best.expect("at least one epoch ran");
    diag.best_epoch = best_epoch;

    let mut model = Model {
        params: best_params,
        pool: best_pool,
        config: cfg.clone(),
        flags,
        n_classes,
        tau: cfg.tau,
        diagnostics: diag,
        experiment: None,
    };
    if let (Some(budget), false) = (cfg.tau_max_val_reject, val_local.is_empty()) {
        let (z, _) = forward(&model.params, &a_hat, sub.features().view())?;
        let zv = z.select(Axis(0), &val_local);
        let conf = super::predict::confidences(zv.view(), &model.pool, cfg.temperature)?;
        model.tau = select_tau(&conf, budget, cfg.tau);
    }
    Ok(model)
}

fn closed_set_f1<T: Scalar>(
    z: ArrayView2<'_, T>,
    pool: &PrototypePool<T>,
    truth: &[OpenSetLabel],
) -> Result<f64> {
    let sm = score_rows(z, pool)?;
    let preds: Vec<OpenSetLabel> = sm
        .scores
        .rows()
        .into_iter()
        .map(|r| OpenSetLabel::Known(classify(r)))
        .collect();
    macro_f1(&preds, truth, false)
}

/// Largest tau in {0.1, ..., 0.9} whose validation rejection rate stays
/// within `budget`; falls back to `default` if none qualifies.
fn select_tau(confidences: &[f64], budget: f64, default: f64) -> f64 {
    let n = confidences.len() as f64;
    (1..=9)
        .rev()
        .map(|k| k as f64 / 10.0)
        .find(|&tau| confidences.iter().filter(|&&c| c < tau).count() as f64 / n <= budget)
        .unwrap_or(default)
}
