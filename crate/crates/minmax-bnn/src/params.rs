//! Named parameter sets for the two players and the sampling rule that
//! turns them into a stochastic network.
//!
//! The deterministic network keeps weights `mu`; the scale network keeps raw
//! values `v` with `sigma = softplus(v)`. A sampled network uses
//! `theta = mu + sigma .* eps` with `eps` standard normal, drawn from a
//! generator keyed by `(seed, draw_id)` so any draw can be reproduced
//! without replaying the run.

use crate::error::{Error, Result};
use crate::tape::{Tape, Var};
use crate::tensor::{softplus_scalar, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

/// Smallest sigma an initializer will produce; keeps `logistic(v)` finite.
pub const SIGMA_FLOOR: f64 = 1e-8;

/// Stream ids for the run-wide generator family. Parameter init and batch
/// shuffling use fixed streams; each network draw gets its own stream so
/// draws are addressable by id.
const STREAM_INIT: u64 = 0;
const STREAM_BATCH: u64 = 1;
const STREAM_DRAW_BASE: u64 = 1000;

pub fn init_rng(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(STREAM_INIT);
    rng
}

pub fn batch_rng(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(STREAM_BATCH);
    rng
}

pub fn draw_rng(seed: u64, draw_id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(STREAM_DRAW_BASE.wrapping_add(draw_id));
    rng
}

/// Inverse of `softplus`: the `v` with `softplus(v) = y`, `y > 0`.
pub fn softplus_inv(y: f64) -> f64 {
    debug_assert!(y > 0.0);
    if y > 30.0 {
        y // softplus is the identity to machine precision out here
    } else {
        y.exp_m1().ln()
    }
}

/// Ordered collection of named tensors. Order is the architecture manifest
/// order and is part of every determinism contract (initialization draws,
/// checkpoint layout, gradient application).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamSet {
    entries: Vec<(String, Tensor)>,
}

impl ParamSet {
    pub fn new() -> Self {
        ParamSet::default()
    }

    pub fn push(&mut self, name: impl Into<String>, t: Tensor) {
        self.entries.push((name.into(), t));
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.entries.iter_mut().map(|(n, t)| (n.as_str(), t))
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn element_count(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.len()).sum()
    }

    /// Mean over every element of every tensor.
    pub fn mean(&self) -> f64 {
        let count = self.element_count();
        if count == 0 {
            return 0.0;
        }
        let sum: f64 = self
            .entries
            .iter()
            .map(|(_, t)| t.data().iter().sum::<f64>())
            .sum();
        sum / count as f64
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> ParamSet {
        ParamSet {
            entries: self
                .entries
                .iter()
                .map(|(n, t)| (n.clone(), t.map(&f)))
                .collect(),
        }
    }

    pub fn zeros_like(&self) -> ParamSet {
        ParamSet {
            entries: self
                .entries
                .iter()
                .map(|(n, t)| (n.clone(), Tensor::zeros(t.shape())))
                .collect(),
        }
    }

    /// Same names, same order, same shapes.
    pub fn check_mirror(&self, other: &ParamSet) -> Result<()> {
        if self.len() != other.len() {
            return Err(Error::MirrorViolation {
                name: String::from("<set>"),
                detail: format!("{} arrays vs {}", self.len(), other.len()),
            });
        }
        for ((na, ta), (nb, tb)) in self.entries.iter().zip(&other.entries) {
            if na != nb {
                return Err(Error::MirrorViolation {
                    name: na.clone(),
                    detail: format!("name mismatch with `{nb}`"),
                });
            }
            if ta.shape() != tb.shape() {
                return Err(Error::MirrorViolation {
                    name: na.clone(),
                    detail: format!("shape {:?} vs {:?}", ta.shape(), tb.shape()),
                });
            }
        }
        Ok(())
    }

    /// Order-sensitive FNV-1a hash of names, shapes and element bits; used
    /// to assert that the other player's parameters were left untouched.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf29ce484222325;
        let mut eat = |byte: u8| {
            h ^= byte as u64;
            h = h.wrapping_mul(0x100000001b3);
        };
        for (name, t) in &self.entries {
            for b in name.as_bytes() {
                eat(*b);
            }
            for &dim in t.shape() {
                for b in (dim as u64).to_le_bytes() {
                    eat(b);
                }
            }
            for &x in t.data() {
                for b in x.to_bits().to_le_bytes() {
                    eat(b);
                }
            }
        }
        h
    }
}

/// Weights of the deterministic network (the max player).
#[derive(Debug, Clone)]
pub struct MeanParams(pub ParamSet);

/// Raw scale parameters of the noise network (the min player).
#[derive(Debug, Clone)]
pub struct VarianceParams(pub ParamSet);

/// One materialized draw of the stochastic network.
#[derive(Debug, Clone)]
pub struct SampledParams {
    pub theta: ParamSet,
    pub draw_id: u64,
}

/// How `sample_net` treats the noise; the non-default modes exist for
/// degenerate-case tests.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleMode {
    /// theta = mu + sigma .* eps with fresh standard-normal eps.
    Fresh,
    /// sigma treated as exactly zero: theta = mu bit-for-bit.
    SigmaZero,
    /// eps forced to zero: theta = mu, but the sigma pathway stays live.
    NoiseZero,
}

impl std::fmt::Display for SampleMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SampleMode::Fresh => "fresh",
            SampleMode::SigmaZero => "sigma_zero",
            SampleMode::NoiseZero => "noise_zero",
        })
    }
}

impl std::str::FromStr for SampleMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fresh" => Ok(SampleMode::Fresh),
            "sigma_zero" => Ok(SampleMode::SigmaZero),
            "noise_zero" => Ok(SampleMode::NoiseZero),
            other => Err(Error::Config(format!(
                "unknown sample mode {other:?}; expected fresh, sigma_zero or noise_zero"
            ))),
        }
    }
}

/// sigma = softplus(v), elementwise.
pub fn sigma_of(var: &VarianceParams) -> ParamSet {
    var.0.map(softplus_scalar)
}

/// Draw `mu ~ N(0, init_std^2)` and set every `v` to the constant whose
/// softplus is `sigma_init` (clamped to the sigma floor).
pub fn init_params(
    shapes: &[(String, Vec<usize>)],
    init_std: f64,
    sigma_init: f64,
    rng: &mut ChaCha8Rng,
) -> (MeanParams, VarianceParams) {
    let normal = Normal::new(0.0, init_std).expect("init_std is validated positive");
    let v0 = softplus_inv(sigma_init.max(SIGMA_FLOOR));
    let mut mu = ParamSet::new();
    let mut var = ParamSet::new();
    for (name, shape) in shapes {
        let mut t = Tensor::zeros(shape);
        for x in t.data_mut() {
            *x = normal.sample(rng);
        }
        mu.push(name.clone(), t);
        var.push(name.clone(), Tensor::filled(shape, v0));
    }
    (MeanParams(mu), VarianceParams(var))
}

/// Standard-normal noise shaped like `like`, addressable by `(seed, draw_id)`.
pub fn draw_eps(like: &ParamSet, seed: u64, draw_id: u64) -> ParamSet {
    let mut rng = draw_rng(seed, draw_id);
    let mut eps = ParamSet::new();
    for (name, t) in like.iter() {
        let mut e = Tensor::zeros(t.shape());
        for x in e.data_mut() {
            *x = StandardNormal.sample(&mut rng);
        }
        eps.push(name, e);
    }
    eps
}

/// Materialize one network draw: `theta = mu + softplus(v) .* eps`.
pub fn sample_net(
    mu: &MeanParams,
    var: &VarianceParams,
    mode: SampleMode,
    seed: u64,
    draw_id: u64,
) -> Result<SampledParams> {
    mu.0.check_mirror(&var.0)?;
    if mode == SampleMode::SigmaZero {
        return Ok(SampledParams {
            theta: mu.0.clone(),
            draw_id,
        });
    }
    let eps = draw_eps(&mu.0, seed, draw_id);
    let mut theta = ParamSet::new();
    for (((name, m), (_, v)), (_, e)) in mu.0.iter().zip(var.0.iter()).zip(eps.iter()) {
        let mut t = m.clone();
        if mode == SampleMode::Fresh {
            for ((x, &raw_v), &noise) in t.data_mut().iter_mut().zip(v.data()).zip(e.data()) {
                *x += softplus_scalar(raw_v) * noise;
            }
        }
        theta.push(name, t);
    }
    Ok(SampledParams { theta, draw_id })
}

/// Parameter names bound to variables on one tape.
#[derive(Debug)]
pub struct Bound {
    entries: Vec<(String, Var)>,
}

impl Bound {
    pub fn get(&self, name: &str) -> Result<Var> {
        self.entries
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| *v)
            .ok_or_else(|| Error::MirrorViolation {
                name: name.to_string(),
                detail: String::from("parameter not bound on this tape"),
            })
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Var)> {
        self.entries.iter().map(|(n, v)| (n.as_str(), *v))
    }
}

/// Bind every tensor as a differentiable leaf.
pub fn bind_leaves(tape: &mut Tape, set: &ParamSet) -> Bound {
    Bound {
        entries: set
            .iter()
            .map(|(n, t)| (n.to_string(), tape.leaf(t.clone())))
            .collect(),
    }
}

/// Bind every tensor as a constant: values participate, gradients do not.
pub fn bind_constants(tape: &mut Tape, set: &ParamSet) -> Bound {
    Bound {
        entries: set
            .iter()
            .map(|(n, t)| (n.to_string(), tape.constant(t.clone())))
            .collect(),
    }
}

/// theta for the deterministic player's update: `mu_var + const(sigma .* eps)`.
/// Gradients reach `mu` with coefficient one through this path.
pub fn bind_theta_via_mu(
    tape: &mut Tape,
    mu_bound: &Bound,
    sigma: &ParamSet,
    eps: &ParamSet,
) -> Result<Bound> {
    sigma.check_mirror(eps)?;
    let mut entries = Vec::with_capacity(sigma.len());
    for ((name, s), (_, e)) in sigma.iter().zip(eps.iter()) {
        let noise = crate::tensor::hadamard(s, e)?;
        let mu_var = mu_bound.get(name)?;
        let noise_var = tape.constant(noise);
        entries.push((name.to_string(), tape.add(mu_var, noise_var)?));
    }
    Ok(Bound { entries })
}

/// theta for the scale player's update:
/// `const(mu) + softplus(v_var) .* const(eps)`, the reparameterization
/// pathway, so gradients reach `v` with coefficient `eps .* logistic(v)`.
pub fn bind_theta_via_v(
    tape: &mut Tape,
    mu: &ParamSet,
    v_bound: &Bound,
    eps: &ParamSet,
) -> Result<Bound> {
    mu.check_mirror(eps)?;
    let mut entries = Vec::with_capacity(mu.len());
    for ((name, m), (_, e)) in mu.iter().zip(eps.iter()) {
        let v_var = v_bound.get(name)?;
        let sigma_var = tape.softplus(v_var);
        let eps_var = tape.constant(e.clone());
        let noise_var = tape.mul(sigma_var, eps_var)?;
        let mu_var = tape.constant(m.clone());
        entries.push((name.to_string(), tape.add(mu_var, noise_var)?));
    }
    Ok(Bound { entries })
}
