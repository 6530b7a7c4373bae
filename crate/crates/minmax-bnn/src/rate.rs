//! Coding-rate objectives over feature matrices and the minimax objective
//! built from them.
//!
//! For a feature matrix `Z` of shape `[d, n]` the coding rate is
//!
//! ```text
//! R(Z) = 1/2 * logdet(I + d/(n*eps_sq) * Z*Z^T)
//! ```
//!
//! and the class-conditional rate weights each class block by its share of
//! the batch. The rate reduction `delta_r = R - R_c` measures how much the
//! classes expand the coded volume beyond their own subspaces; the pairwise
//! reduction compares one feature set against another through their column
//! union. The training objective sums the reductions of the deterministic
//! features, the sampled features, and the per-class pair distances.

use crate::error::{Error, Result};
use crate::tape::{Tape, Var};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct RateConfig {
    /// Rate-distortion parameter eps^2.
    pub eps_sq: f64,
    /// Feature dimension d.
    pub feature_dim: usize,
}

impl RateConfig {
    pub fn new(eps_sq: f64, feature_dim: usize) -> Result<Self> {
        if !eps_sq.is_finite() || eps_sq <= 0.0 {
            return Err(Error::Config(format!(
                "eps_sq must be positive, got {eps_sq}"
            )));
        }
        if feature_dim < 2 {
            return Err(Error::Config(format!(
                "feature_dim must be at least 2, got {feature_dim}"
            )));
        }
        Ok(RateConfig {
            eps_sq,
            feature_dim,
        })
    }
}

/// Whether the objective's pair distance is taken per class or once over the
/// whole batch (replicated per class).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairwiseScope {
    PerClass,
    WholeBatch,
}

impl std::fmt::Display for PairwiseScope {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            PairwiseScope::PerClass => "per_class",
            PairwiseScope::WholeBatch => "whole_batch",
        })
    }
}

impl std::str::FromStr for PairwiseScope {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "per_class" => Ok(PairwiseScope::PerClass),
            "whole_batch" => Ok(PairwiseScope::WholeBatch),
            other => Err(Error::Config(format!(
                "unknown pairwise scope {other:?}; expected per_class or whole_batch"
            ))),
        }
    }
}

/// Disjoint class index sets covering the columns of a batch.
#[derive(Debug, Clone)]
pub struct ClassPartition {
    classes: Vec<Vec<usize>>,
    total: usize,
}

impl ClassPartition {
    /// Build from per-column labels in `0..num_classes`. Every class must be
    /// represented.
    pub fn from_labels(labels: &[usize], num_classes: usize) -> Result<Self> {
        let mut classes = vec![Vec::new(); num_classes];
        for (i, &l) in labels.iter().enumerate() {
            if l >= num_classes {
                return Err(Error::Data(format!(
                    "label {l} at column {i} is outside 0..{num_classes}"
                )));
            }
            classes[l].push(i);
        }
        for (j, idx) in classes.iter().enumerate() {
            if idx.is_empty() {
                return Err(Error::EmptyClass { class: j });
            }
        }
        Ok(ClassPartition {
            classes,
            total: labels.len(),
        })
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn class_indices(&self, class: usize) -> &[usize] {
        &self.classes[class]
    }

    pub fn total(&self) -> usize {
        self.total
    }
}

/// `logdet(I + alpha * Gram)` computed on whichever Gram ordering (`Z^T Z`
/// or `Z Z^T`) is smaller; both share the nonzero eigenvalues.
fn log_volume(tape: &mut Tape, z: Var, alpha: f64) -> Result<Var> {
    let shape = tape.value(z).shape().to_vec();
    let (d, n) = (shape[0], shape[1]);
    let gram = if n <= d {
        let zt = tape.transpose(z);
        tape.matmul(zt, z)?
    } else {
        let zt = tape.transpose(z);
        tape.matmul(z, zt)?
    };
    let scaled = tape.scale(gram, alpha);
    let shifted = tape.add_eye(scaled)?;
    tape.logdet_pd(shifted)
}

fn check_features(
    op: &'static str,
    tape: &Tape,
    z: Var,
    cfg: &RateConfig,
) -> Result<(usize, usize)> {
    let shape = tape.value(z).shape();
    if shape.len() != 2 || shape[0] != cfg.feature_dim {
        return Err(Error::ShapeMismatch {
            op,
            left: shape.to_vec(),
            right: vec![cfg.feature_dim, 0],
        });
    }
    if shape[1] == 0 {
        return Err(Error::EmptySet);
    }
    Ok((shape[0], shape[1]))
}

/// Coding rate of the whole feature set.
pub fn rate(tape: &mut Tape, z: Var, cfg: &RateConfig) -> Result<Var> {
    let (d, n) = check_features("rate", tape, z, cfg)?;
    let alpha = d as f64 / (n as f64 * cfg.eps_sq);
    let ld = log_volume(tape, z, alpha)?;
    Ok(tape.scale(ld, 0.5))
}

/// Class-conditional coding rate: per-class rates weighted by class share,
/// summed in ascending class order.
pub fn rate_per_class(
    tape: &mut Tape,
    z: Var,
    part: &ClassPartition,
    cfg: &RateConfig,
) -> Result<Var> {
    let (d, n) = check_features("rate_per_class", tape, z, cfg)?;
    if part.total() != n {
        return Err(Error::ShapeMismatch {
            op: "rate_per_class",
            left: vec![d, n],
            right: vec![d, part.total()],
        });
    }
    let mut acc: Option<Var> = None;
    for j in 0..part.num_classes() {
        let idx = part.class_indices(j);
        if idx.is_empty() {
            return Err(Error::EmptyClass { class: j });
        }
        let nj = idx.len();
        let zj = tape.select_cols(z, idx);
        let alpha = d as f64 / (nj as f64 * cfg.eps_sq);
        let ld = log_volume(tape, zj, alpha)?;
        let term = tape.scale(ld, nj as f64 / (2.0 * n as f64));
        acc = Some(match acc {
            Some(a) => tape.add(a, term)?,
            None => term,
        });
    }
    Ok(acc.expect("partition has at least one class"))
}

/// Rate reduction: whole-set rate minus class-conditional rate.
pub fn delta_r(tape: &mut Tape, z: Var, part: &ClassPartition, cfg: &RateConfig) -> Result<Var> {
    let r = rate(tape, z, cfg)?;
    let rc = rate_per_class(tape, z, part, cfg)?;
    tape.sub(r, rc)
}

/// Rate distance between two feature sets:
/// `R(A union B) - R(A)/2 - R(B)/2` with union = column concatenation.
///
/// The two arguments are ordered canonically (by shape, then by element
/// bits) before concatenation so that swapping them evaluates the identical
/// arithmetic and the symmetry `pairwise_delta_r(a,b) == pairwise_delta_r(b,a)`
/// holds bitwise, not just analytically.
pub fn pairwise_delta_r(tape: &mut Tape, a: Var, b: Var, cfg: &RateConfig) -> Result<Var> {
    check_features("pairwise_delta_r", tape, a, cfg)?;
    check_features("pairwise_delta_r", tape, b, cfg)?;

    let swap = {
        use std::cmp::Ordering;
        let ta = tape.value(a);
        let tb = tape.value(b);
        let ord = ta.shape().cmp(tb.shape()).then_with(|| {
            ta.data()
                .iter()
                .zip(tb.data())
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| *o != Ordering::Equal)
                .unwrap_or(Ordering::Equal)
        });
        ord == Ordering::Greater
    };
    let (first, second) = if swap { (b, a) } else { (a, b) };

    let union = tape.concat_cols(first, second)?;
    let r_union = rate(tape, union, cfg)?;
    let r_first = rate(tape, first, cfg)?;
    let r_second = rate(tape, second, cfg)?;
    let half_first = tape.scale(r_first, 0.5);
    let half_second = tape.scale(r_second, 0.5);
    let partial = tape.sub(r_union, half_first)?;
    tape.sub(partial, half_second)
}

/// The minimax objective and its reported components. All fields are tape
/// variables; `tau` is built by summing the others in a fixed order so the
/// breakdown reproduces it bitwise.
#[derive(Debug)]
pub struct ObjectiveBreakdown {
    pub tau: Var,
    pub dr_z: Var,
    pub dr_zhat: Var,
    pub pairwise_terms: Vec<Var>,
    pub pairwise_sum: Var,
}

/// Plain values of the breakdown, for metrics rows.
#[derive(Debug, Clone, Copy)]
pub struct BreakdownValues {
    pub tau: f64,
    pub dr_z: f64,
    pub dr_zhat: f64,
    pub pairwise_sum: f64,
}

impl ObjectiveBreakdown {
    pub fn values(&self, tape: &Tape) -> BreakdownValues {
        BreakdownValues {
            tau: tape.value(self.tau).item(),
            dr_z: tape.value(self.dr_z).item(),
            dr_zhat: tape.value(self.dr_zhat).item(),
            pairwise_sum: tape.value(self.pairwise_sum).item(),
        }
    }
}

/// tau = delta_r(Z) + delta_r(Zhat) + sum of pair distances.
pub fn objective_tau(
    tape: &mut Tape,
    z: Var,
    zhat: Var,
    part: &ClassPartition,
    cfg: &RateConfig,
    scope: PairwiseScope,
) -> Result<ObjectiveBreakdown> {
    if tape.value(z).shape() != tape.value(zhat).shape() {
        return Err(Error::ShapeMismatch {
            op: "objective_tau",
            left: tape.value(z).shape().to_vec(),
            right: tape.value(zhat).shape().to_vec(),
        });
    }
    let dr_z = delta_r(tape, z, part, cfg)?;
    let dr_zhat = delta_r(tape, zhat, part, cfg)?;

    let pairwise_terms: Vec<Var> = match scope {
        PairwiseScope::PerClass => {
            let mut terms = Vec::with_capacity(part.num_classes());
            for j in 0..part.num_classes() {
                let idx = part.class_indices(j);
                let zj = tape.select_cols(z, idx);
                let zhj = tape.select_cols(zhat, idx);
                terms.push(pairwise_delta_r(tape, zj, zhj, cfg)?);
            }
            terms
        }
        PairwiseScope::WholeBatch => {
            let p = pairwise_delta_r(tape, z, zhat, cfg)?;
            vec![p; part.num_classes()]
        }
    };

    let mut pairwise_sum = pairwise_terms[0];
    for term in &pairwise_terms[1..] {
        pairwise_sum = tape.add(pairwise_sum, *term)?;
    }

    let partial = tape.add(dr_z, dr_zhat)?;
    let tau = tape.add(partial, pairwise_sum)?;
    Ok(ObjectiveBreakdown {
        tau,
        dr_z,
        dr_zhat,
        pairwise_terms,
        pairwise_sum,
    })
}
