//! k-nearest-neighbor prediction in the learned feature subspace and the
//! mean-network / sampled-network evaluation report.

use crate::data::DatasetView;
use crate::encoder::{forward_features, ArchitectureManifest};
use crate::error::{Error, Result};
use crate::params::{sample_net, MeanParams, SampleMode, VarianceParams};
use crate::tensor::{matmul, transpose, Tensor};

/// Images per forward chunk during evaluation; bounds peak activation memory.
pub const EVAL_CHUNK: usize = 256;

/// Accuracy of the deterministic mean network and of one sampled network on
/// the same train/test split.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct EvalReport {
    pub step: u64,
    pub acc_netd: f64,
    pub acc_netg: f64,
    /// `|acc_netd - acc_netg|`.
    pub gap: f64,
    pub k: usize,
    pub train_count: usize,
    pub test_count: usize,
    pub draw_id: u64,
}

/// Classify each query column by majority vote among its k nearest training
/// columns under Euclidean distance. Both feature matrices are `[d, n]` with
/// unit-norm columns, so distance is monotone in cosine distance and the
/// whole distance table reduces to one Gram product. Vote ties break to the
/// label with the smaller summed distance, then to the smaller label id.
pub fn knn_predict(
    train_feats: &Tensor,
    train_labels: &[usize],
    query_feats: &Tensor,
    k: usize,
) -> Result<Vec<usize>> {
    let n_train = train_feats.cols();
    let n_query = query_feats.cols();
    if train_feats.rows() != query_feats.rows() {
        return Err(Error::ShapeMismatch {
            op: "knn_predict",
            left: train_feats.shape().to_vec(),
            right: query_feats.shape().to_vec(),
        });
    }
    if train_labels.len() != n_train {
        return Err(Error::Config(format!(
            "{} training features but {} labels",
            n_train,
            train_labels.len()
        )));
    }
    if k == 0 || k > n_train {
        return Err(Error::Config(format!("k = {k} out of range 1..={n_train}")));
    }
    let num_labels = train_labels.iter().copied().max().unwrap_or(0) + 1;

    // gram[i, q] = <train_i, query_q>; unit norms give dist = sqrt(2 - 2*dot)
    let gram = matmul(&transpose(train_feats), query_feats)?;
    let mut predictions = Vec::with_capacity(n_query);
    let mut order: Vec<usize> = Vec::with_capacity(n_train);
    for q in 0..n_query {
        order.clear();
        order.extend(0..n_train);
        let dist = |i: usize| (2.0 - 2.0 * gram.at2(i, q)).max(0.0).sqrt();
        order.sort_by(|&a, &b| dist(a).total_cmp(&dist(b)).then(a.cmp(&b)));

        let mut votes = vec![0usize; num_labels];
        let mut summed = vec![0.0f64; num_labels];
        for &i in &order[..k] {
            votes[train_labels[i]] += 1;
            summed[train_labels[i]] += dist(i);
        }
        let mut best = 0;
        for label in 1..num_labels {
            let win = votes[label] > votes[best]
                || (votes[label] == votes[best] && summed[label] < summed[best]);
            // equal votes and equal sums keep the smaller label id
            if win {
                best = label;
            }
        }
        predictions.push(best);
    }
    Ok(predictions)
}

fn accuracy(predictions: &[usize], labels: &[usize]) -> f64 {
    let hits = predictions
        .iter()
        .zip(labels)
        .filter(|(p, l)| p == l)
        .count();
    hits as f64 / labels.len() as f64
}

/// Evaluate both players on one split: the mean network directly, and one
/// network draw with the given id. Both accuracies come from the same
/// training features' labels and the same query set.
#[allow(clippy::too_many_arguments)]
pub fn evaluate(
    manifest: &ArchitectureManifest,
    mu: &MeanParams,
    var: &VarianceParams,
    train_view: &DatasetView,
    test_view: &DatasetView,
    k: usize,
    mode: SampleMode,
    seed: u64,
    draw_id: u64,
    step: u64,
) -> Result<EvalReport> {
    if train_view.count() == 0 || test_view.count() == 0 {
        return Err(Error::EmptySet);
    }
    let netd_train = forward_features(manifest, &mu.0, &train_view.images, EVAL_CHUNK)?;
    let netd_test = forward_features(manifest, &mu.0, &test_view.images, EVAL_CHUNK)?;
    let netd_pred = knn_predict(&netd_train, &train_view.labels, &netd_test, k)?;
    let acc_netd = accuracy(&netd_pred, &test_view.labels);

    let sample = sample_net(mu, var, mode, seed, draw_id)?;
    let netg_train = forward_features(manifest, &sample.theta, &train_view.images, EVAL_CHUNK)?;
    let netg_test = forward_features(manifest, &sample.theta, &test_view.images, EVAL_CHUNK)?;
    let netg_pred = knn_predict(&netg_train, &train_view.labels, &netg_test, k)?;
    let acc_netg = accuracy(&netg_pred, &test_view.labels);

    Ok(EvalReport {
        step,
        acc_netd,
        acc_netg,
        gap: (acc_netd - acc_netg).abs(),
        k,
        train_count: train_view.count(),
        test_count: test_view.count(),
        draw_id,
    })
}
