//! Feature encoders: image batches to unit-norm feature columns.
//!
//! Two desk-scale architectures, both free of normalization layers:
//!
//! * `mlp`: 784 -> 1024 -> d with one relu.
//! * `conv-res-lite`: 3x3 conv(16) / relu, stride-2 3x3 conv(32) / relu,
//!   two identity-skip residual blocks of two 3x3 conv(32) each, global
//!   average pooling, and a linear map to d.
//!
//! The forward pass ends with per-column l2 normalization, so downstream
//! rate computations always see unit feature columns.

use crate::error::{Error, Result};
use crate::params::{Bound, ParamSet};
use crate::tape::{Tape, Var};
use crate::tensor::{transpose, ConvSpec, Tensor};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ArchId {
    #[serde(rename = "mlp")]
    Mlp,
    #[serde(rename = "conv-res-lite")]
    ConvResLite,
}

impl fmt::Display for ArchId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ArchId::Mlp => "mlp",
            ArchId::ConvResLite => "conv-res-lite",
        })
    }
}

impl FromStr for ArchId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mlp" => Ok(ArchId::Mlp),
            "conv-res-lite" => Ok(ArchId::ConvResLite),
            other => Err(Error::Config(format!("unknown architecture `{other}`"))),
        }
    }
}

/// Architecture identity plus the ordered parameter name/shape list derived
/// from it. The list is a pure function of `(arch, feature_dim)`.
#[derive(Debug, Clone)]
pub struct ArchitectureManifest {
    pub arch: ArchId,
    pub feature_dim: usize,
    params: Vec<(String, Vec<usize>)>,
}

const MLP_HIDDEN: usize = 1024;
const CONV_C1: usize = 16;
const CONV_C2: usize = 32;

pub fn build_manifest(arch: ArchId, feature_dim: usize) -> Result<ArchitectureManifest> {
    if feature_dim < 2 {
        return Err(Error::Config(format!(
            "feature_dim must be at least 2, got {feature_dim}"
        )));
    }
    let d = feature_dim;
    let mut params: Vec<(String, Vec<usize>)> = Vec::new();
    let mut p = |name: &str, shape: Vec<usize>| params.push((name.to_string(), shape));
    match arch {
        ArchId::Mlp => {
            p("l1.weight", vec![MLP_HIDDEN, 784]);
            p("l1.bias", vec![MLP_HIDDEN]);
            p("l2.weight", vec![d, MLP_HIDDEN]);
            p("l2.bias", vec![d]);
        }
        ArchId::ConvResLite => {
            p("conv1.weight", vec![CONV_C1, 1, 3, 3]);
            p("conv1.bias", vec![CONV_C1]);
            p("conv2.weight", vec![CONV_C2, CONV_C1, 3, 3]);
            p("conv2.bias", vec![CONV_C2]);
            for block in 1..=2 {
                for layer in 1..=2 {
                    p(
                        &format!("res{block}.conv{layer}.weight"),
                        vec![CONV_C2, CONV_C2, 3, 3],
                    );
                    p(&format!("res{block}.conv{layer}.bias"), vec![CONV_C2]);
                }
            }
            p("fc.weight", vec![d, CONV_C2]);
            p("fc.bias", vec![d]);
        }
    }
    Ok(ArchitectureManifest {
        arch,
        feature_dim,
        params,
    })
}

impl ArchitectureManifest {
    pub fn params(&self) -> &[(String, Vec<usize>)] {
        &self.params
    }

    pub fn param_count(&self) -> usize {
        self.params
            .iter()
            .map(|(_, s)| s.iter().product::<usize>())
            .sum()
    }

    /// Verify a parameter set mirrors this manifest exactly.
    pub fn check_params(&self, set: &ParamSet) -> Result<()> {
        if set.len() != self.params.len() {
            return Err(Error::MirrorViolation {
                name: String::from("<set>"),
                detail: format!(
                    "{} arrays vs {} in the manifest",
                    set.len(),
                    self.params.len()
                ),
            });
        }
        for ((name, shape), (got_name, got)) in self.params.iter().zip(set.iter()) {
            if name != got_name {
                return Err(Error::MirrorViolation {
                    name: got_name.to_string(),
                    detail: format!("expected `{name}` at this position"),
                });
            }
            if got.shape() != shape.as_slice() {
                return Err(Error::MirrorViolation {
                    name: name.clone(),
                    detail: format!("shape {:?} vs manifest {:?}", got.shape(), shape),
                });
            }
        }
        Ok(())
    }
}

fn bound_shapes_match(manifest: &ArchitectureManifest, tape: &Tape, bound: &Bound) -> Result<()> {
    for (name, shape) in &manifest.params {
        let var = bound.get(name)?;
        if tape.value(var).shape() != shape.as_slice() {
            return Err(Error::MirrorViolation {
                name: name.clone(),
                detail: format!(
                    "bound shape {:?} vs manifest {:?}",
                    tape.value(var).shape(),
                    shape
                ),
            });
        }
    }
    Ok(())
}

/// Forward pass over a batch of flattened 28x28 images (`[n, 784]`),
/// producing `[d, n]` unit-norm feature columns on the tape.
pub fn forward(
    tape: &mut Tape,
    manifest: &ArchitectureManifest,
    bound: &Bound,
    images: &Tensor,
) -> Result<Var> {
    if images.shape().len() != 2 || images.shape()[1] != 784 {
        return Err(Error::BadShape {
            op: "encoder::forward",
            shape: images.shape().to_vec(),
            count: images.len(),
        });
    }
    bound_shapes_match(manifest, tape, bound)?;
    let n = images.shape()[0];

    let pre_norm = match manifest.arch {
        ArchId::Mlp => {
            // columns are samples: [784, n]
            let x = tape.constant(transpose(images));
            let w1 = bound.get("l1.weight")?;
            let b1 = bound.get("l1.bias")?;
            let h_lin = tape.matmul(w1, x)?;
            let h_aff = tape.add_col_vec(h_lin, b1)?;
            let h = tape.relu(h_aff);
            let w2 = bound.get("l2.weight")?;
            let b2 = bound.get("l2.bias")?;
            let z_lin = tape.matmul(w2, h)?;
            tape.add_col_vec(z_lin, b2)?
        }
        ArchId::ConvResLite => {
            // row-major [n, 784] is byte-identical to channel-major
            // [1, n, 28, 28], so the reshape is free
            let x = tape.constant(images.clone().reshaped(vec![1, n, 28, 28])?);
            let unit = ConvSpec { stride: 1, pad: 1 };
            let down = ConvSpec { stride: 2, pad: 1 };

            let c1 = tape.conv2d(
                x,
                bound.get("conv1.weight")?,
                bound.get("conv1.bias")?,
                unit,
            )?;
            let a1 = tape.relu(c1);
            let c2 = tape.conv2d(
                a1,
                bound.get("conv2.weight")?,
                bound.get("conv2.bias")?,
                down,
            )?;
            let mut acts = tape.relu(c2);

            for block in 1..=2 {
                let w1 = bound.get(&format!("res{block}.conv1.weight"))?;
                let b1 = bound.get(&format!("res{block}.conv1.bias"))?;
                let w2 = bound.get(&format!("res{block}.conv2.weight"))?;
                let b2 = bound.get(&format!("res{block}.conv2.bias"))?;
                let t1 = tape.conv2d(acts, w1, b1, unit)?;
                let t2 = tape.relu(t1);
                let t3 = tape.conv2d(t2, w2, b2, unit)?;
                let skip = tape.add(acts, t3)?;
                acts = tape.relu(skip);
            }

            let pooled = tape.global_avg_pool(acts);
            let z_lin = tape.matmul(bound.get("fc.weight")?, pooled)?;
            tape.add_col_vec(z_lin, bound.get("fc.bias")?)?
        }
    };
    tape.l2_normalize_cols(pre_norm)
}

/// Forward a whole dataset in fixed-size chunks on throwaway tapes,
/// assembling a `[d, count]` feature matrix. Parameters enter as constants,
/// so per-chunk tape memory is bounded by the chunk's activations.
pub fn forward_features(
    manifest: &ArchitectureManifest,
    params: &ParamSet,
    images: &Tensor,
    chunk: usize,
) -> Result<Tensor> {
    let count = images.shape()[0];
    let d = manifest.feature_dim;
    let mut out = Tensor::zeros(&[d, count]);
    let mut start = 0;
    while start < count {
        let stop = (start + chunk).min(count);
        let rows = stop - start;
        let slice = Tensor::new(
            vec![rows, 784],
            images.data()[start * 784..stop * 784].to_vec(),
        )?;
        let mut tape = Tape::new();
        let bound = crate::params::bind_constants(&mut tape, params);
        let feats = forward(&mut tape, manifest, &bound, &slice)?;
        let fv = tape.value(feats);
        for i in 0..d {
            out.data_mut()[i * count + start..i * count + stop]
                .copy_from_slice(&fv.data()[i * rows..(i + 1) * rows]);
        }
        start = stop;
    }
    Ok(out)
}
