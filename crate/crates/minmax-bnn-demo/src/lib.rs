//! Browser bindings for two interactive views of the core library: a rate
//! playground (place points, read the coding-rate breakdown) and a live
//! min-max training loop on 2-D toy datasets with a miniature encoder.

use minmax_bnn::optim::{adam_update, AdamState, Direction};
use minmax_bnn::params::{
    bind_constants, bind_leaves, bind_theta_via_mu, bind_theta_via_v, draw_eps, init_params,
    init_rng, sample_net, sigma_of, Bound, MeanParams, ParamSet, SampleMode, VarianceParams,
};
use minmax_bnn::rate::{
    delta_r, objective_tau, pairwise_delta_r, rate, BreakdownValues, ClassPartition, PairwiseScope,
    RateConfig,
};
use minmax_bnn::tape::{Grads, Tape, Var};
use minmax_bnn::tensor::Tensor;
use minmax_bnn::Error;
use rand::Rng;
use serde::Serialize;
use wasm_bindgen::prelude::*;

const BETA1: f64 = 0.5;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

fn js_err(e: Error) -> JsError {
    JsError::new(&e.to_string())
}

// ---------------------------------------------------------------------------
// rate playground
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct ClassRate {
    label: u32,
    count: usize,
    rate: f64,
}

#[derive(Serialize)]
struct PairRate {
    a: u32,
    b: u32,
    value: f64,
}

#[derive(Serialize)]
struct RateBreakdown {
    rate: f64,
    class_rates: Vec<ClassRate>,
    delta_r: f64,
    pairwise: Vec<PairRate>,
    pairwise_sum: f64,
}

/// Coding-rate breakdown of a hand-placed 2-D point set. `coords` is
/// interleaved x,y; labels must be 0-based and dense.
#[wasm_bindgen]
pub fn rate_breakdown(coords: &[f64], labels: &[u32], eps_sq: f64) -> Result<String, JsError> {
    let n = labels.len();
    if coords.len() != 2 * n || n == 0 {
        return Err(JsError::new("need one x,y pair per label"));
    }
    let k = *labels.iter().max().unwrap() as usize + 1;
    // column-major feature matrix, one point per column
    let mut data = vec![0.0; 2 * n];
    for i in 0..n {
        data[i] = coords[2 * i];
        data[n + i] = coords[2 * i + 1];
    }
    let z = Tensor::new(vec![2, n], data).map_err(js_err)?;
    let idx: Vec<usize> = labels.iter().map(|&l| l as usize).collect();
    let part = ClassPartition::from_labels(&idx, k).map_err(js_err)?;
    let cfg = RateConfig::new(eps_sq, 2).map_err(js_err)?;

    let mut tape = Tape::new();
    let zv = tape.constant(z.clone());
    let r = rate(&mut tape, zv, &cfg).map_err(js_err)?;
    let dr = delta_r(&mut tape, zv, &part, &cfg).map_err(js_err)?;

    let mut class_rates = Vec::new();
    for j in 0..k {
        let cols = part.class_indices(j);
        let sub = tape.select_cols(zv, cols);
        let rc = rate(&mut tape, sub, &cfg).map_err(js_err)?;
        class_rates.push(ClassRate {
            label: j as u32,
            count: cols.len(),
            rate: tape.value(rc).item(),
        });
    }

    let mut pairwise = Vec::new();
    let mut pairwise_sum = 0.0;
    for a in 0..k {
        for b in (a + 1)..k {
            let za = tape.select_cols(zv, part.class_indices(a));
            let zb = tape.select_cols(zv, part.class_indices(b));
            let p = pairwise_delta_r(&mut tape, za, zb, &cfg).map_err(js_err)?;
            let value = tape.value(p).item();
            pairwise_sum += value;
            pairwise.push(PairRate {
                a: a as u32,
                b: b as u32,
                value,
            });
        }
    }

    let out = RateBreakdown {
        rate: tape.value(r).item(),
        class_rates,
        delta_r: tape.value(dr).item(),
        pairwise,
        pairwise_sum,
    };
    Ok(serde_json::to_string(&out).expect("breakdown serializes"))
}

// ---------------------------------------------------------------------------
// toy datasets
// ---------------------------------------------------------------------------

fn toy_dataset(name: &str, n_per_class: usize, seed: u64) -> Result<(Tensor, Vec<usize>), Error> {
    let mut rng = init_rng(seed);
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut labels = Vec::new();
    let mut push = |x: f64, y: f64, c: usize, labels: &mut Vec<usize>| {
        xs.push(x);
        ys.push(y);
        labels.push(c);
    };
    match name {
        "blobs" => {
            for c in 0..3usize {
                let angle = std::f64::consts::TAU * (0.25 + c as f64 / 3.0);
                let (cx, cy) = (0.55 * angle.cos(), 0.55 * angle.sin());
                for _ in 0..n_per_class {
                    let dx = 0.16 * (rng.gen::<f64>() + rng.gen::<f64>() - 1.0);
                    let dy = 0.16 * (rng.gen::<f64>() + rng.gen::<f64>() - 1.0);
                    push(cx + dx, cy + dy, c, &mut labels);
                }
            }
        }
        "moons" => {
            for c in 0..2usize {
                for i in 0..n_per_class {
                    let t = std::f64::consts::PI * i as f64 / (n_per_class - 1).max(1) as f64;
                    let (mut x, mut y) = if c == 0 {
                        (t.cos() * 0.6 - 0.15, t.sin() * 0.6 - 0.15)
                    } else {
                        (0.15 - t.cos() * 0.6, 0.25 - t.sin() * 0.6)
                    };
                    x += 0.05 * (rng.gen::<f64>() - 0.5);
                    y += 0.05 * (rng.gen::<f64>() - 0.5);
                    push(x, y, c, &mut labels);
                }
            }
        }
        "spiral" => {
            for c in 0..3usize {
                for i in 0..n_per_class {
                    let t = i as f64 / n_per_class as f64;
                    let r = 0.1 + 0.75 * t;
                    let angle = std::f64::consts::TAU * (t * 0.6 + c as f64 / 3.0);
                    let x = r * angle.cos() + 0.03 * (rng.gen::<f64>() - 0.5);
                    let y = r * angle.sin() + 0.03 * (rng.gen::<f64>() - 0.5);
                    push(x, y, c, &mut labels);
                }
            }
        }
        other => return Err(Error::Config(format!("unknown dataset `{other}`"))),
    }
    let n = labels.len();
    let mut data = xs;
    data.extend_from_slice(&ys);
    Ok((Tensor::new(vec![2, n], data)?, labels))
}

// ---------------------------------------------------------------------------
// miniature encoder: 2 -> 32 -> 32 -> 2, unit-norm features
// ---------------------------------------------------------------------------

fn toy_shapes() -> Vec<(String, Vec<usize>)> {
    vec![
        ("l1.weight".into(), vec![32, 2]),
        ("l1.bias".into(), vec![32]),
        ("l2.weight".into(), vec![32, 32]),
        ("l2.bias".into(), vec![32]),
        ("l3.weight".into(), vec![2, 32]),
        ("l3.bias".into(), vec![2]),
    ]
}

fn forward_toy(tape: &mut Tape, p: &Bound, data_t: &Tensor) -> Result<Var, Error> {
    let x = tape.constant(data_t.clone());
    let h = tape.matmul(p.get("l1.weight")?, x)?;
    let h = tape.add_col_vec(h, p.get("l1.bias")?)?;
    let h = tape.relu(h);
    let h = tape.matmul(p.get("l2.weight")?, h)?;
    let h = tape.add_col_vec(h, p.get("l2.bias")?)?;
    let h = tape.relu(h);
    let z = tape.matmul(p.get("l3.weight")?, h)?;
    let z = tape.add_col_vec(z, p.get("l3.bias")?)?;
    tape.l2_normalize_cols(z)
}

fn collect_grads(grads: &mut Grads, bound: &Bound, like: &ParamSet) -> ParamSet {
    let mut out = ParamSet::new();
    for (name, t) in like.iter() {
        let var = bound.get(name).expect("bound set mirrors the parameters");
        out.push(
            name,
            grads.take(var).unwrap_or_else(|| Tensor::zeros(t.shape())),
        );
    }
    out
}

// ---------------------------------------------------------------------------
// live min-max training
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct StepReport {
    step: u64,
    tau: f64,
    dr_z: f64,
    dr_zhat: f64,
    pairwise_sum: f64,
    sigma_mean: f64,
}

#[wasm_bindgen]
pub struct MinimaxDemo {
    mu: MeanParams,
    var: VarianceParams,
    opt_d: AdamState,
    opt_v: AdamState,
    data_t: Tensor,
    labels: Vec<usize>,
    part: ClassPartition,
    rate_cfg: RateConfig,
    seed: u64,
    draw: u64,
    step: u64,
}

#[wasm_bindgen]
impl MinimaxDemo {
    #[wasm_bindgen(constructor)]
    pub fn new(
        dataset: &str,
        n_per_class: usize,
        seed: u64,
        sigma_init: f64,
        eps_sq: f64,
    ) -> Result<MinimaxDemo, JsError> {
        let (data_t, labels) = toy_dataset(dataset, n_per_class.max(4), seed).map_err(js_err)?;
        let k = labels.iter().max().unwrap() + 1;
        let part = ClassPartition::from_labels(&labels, k).map_err(js_err)?;
        let rate_cfg = RateConfig::new(eps_sq, 2).map_err(js_err)?;
        let (mu, var) = init_params(&toy_shapes(), 0.4, sigma_init, &mut init_rng(seed));
        let opt_d = AdamState::new(&mu.0);
        let opt_v = AdamState::new(&var.0);
        Ok(MinimaxDemo {
            mu,
            var,
            opt_d,
            opt_v,
            data_t,
            labels,
            part,
            rate_cfg,
            seed,
            draw: 0,
            step: 0,
        })
    }

    /// One outer step: `ns` ascent updates of the mean net, then one descent
    /// update of the variance net. Returns the objective breakdown as JSON.
    pub fn step(&mut self, ns: u32, lr: f64) -> Result<String, JsError> {
        let mut vals = None;
        for _ in 0..ns.max(1) {
            vals = Some(self.d_update(lr).map_err(js_err)?);
        }
        let sigma_mean = sigma_of(&self.var).mean();
        self.v_update(lr).map_err(js_err)?;
        self.step += 1;
        let vals = vals.expect("ns >= 1");
        let report = StepReport {
            step: self.step,
            tau: vals.tau,
            dr_z: vals.dr_z,
            dr_zhat: vals.dr_zhat,
            pairwise_sum: vals.pairwise_sum,
            sigma_mean,
        };
        Ok(serde_json::to_string(&report).expect("report serializes"))
    }

    /// Mean-net embedding of every point, interleaved x,y on the unit circle.
    pub fn features(&self) -> Result<Vec<f64>, JsError> {
        self.embed(&self.mu.0).map_err(js_err)
    }

    /// Embedding under one fresh sampled net.
    pub fn sampled_features(&mut self) -> Result<Vec<f64>, JsError> {
        let draw = self.next_draw();
        let sampled =
            sample_net(&self.mu, &self.var, SampleMode::Fresh, self.seed, draw).map_err(js_err)?;
        self.embed(&sampled.theta).map_err(js_err)
    }

    /// Input points, interleaved x,y.
    pub fn points(&self) -> Vec<f64> {
        let n = self.labels.len();
        let d = self.data_t.data();
        let mut out = Vec::with_capacity(2 * n);
        for i in 0..n {
            out.push(d[i]);
            out.push(d[n + i]);
        }
        out
    }

    pub fn labels(&self) -> Vec<u32> {
        self.labels.iter().map(|&l| l as u32).collect()
    }

    pub fn sigma_mean(&self) -> f64 {
        sigma_of(&self.var).mean()
    }

    fn next_draw(&mut self) -> u64 {
        let d = self.draw;
        self.draw += 1;
        d
    }

    fn d_update(&mut self, lr: f64) -> Result<BreakdownValues, Error> {
        let draw = self.next_draw();
        let eps = draw_eps(&self.mu.0, self.seed, draw);
        let sigma = sigma_of(&self.var);
        let mut tape = Tape::new();
        let mu_b = bind_leaves(&mut tape, &self.mu.0);
        let theta = bind_theta_via_mu(&mut tape, &mu_b, &sigma, &eps)?;
        let z = forward_toy(&mut tape, &mu_b, &self.data_t)?;
        let zhat = forward_toy(&mut tape, &theta, &self.data_t)?;
        let bd = objective_tau(
            &mut tape,
            z,
            zhat,
            &self.part,
            &self.rate_cfg,
            PairwiseScope::PerClass,
        )?;
        let vals = bd.values(&tape);
        let mut grads = tape.backward(bd.tau)?;
        let g = collect_grads(&mut grads, &mu_b, &self.mu.0);
        adam_update(
            &mut self.mu.0,
            &g,
            &mut self.opt_d,
            lr,
            BETA1,
            BETA2,
            ADAM_EPS,
            Direction::Ascend,
        )?;
        Ok(vals)
    }

    fn v_update(&mut self, lr: f64) -> Result<(), Error> {
        let draw = self.next_draw();
        let eps = draw_eps(&self.mu.0, self.seed, draw);
        let mut tape = Tape::new();
        let v_b = bind_leaves(&mut tape, &self.var.0);
        let theta = bind_theta_via_v(&mut tape, &self.mu.0, &v_b, &eps)?;
        let mu_c = bind_constants(&mut tape, &self.mu.0);
        let z = forward_toy(&mut tape, &mu_c, &self.data_t)?;
        let zhat = forward_toy(&mut tape, &theta, &self.data_t)?;
        let bd = objective_tau(
            &mut tape,
            z,
            zhat,
            &self.part,
            &self.rate_cfg,
            PairwiseScope::PerClass,
        )?;
        let mut grads = tape.backward(bd.tau)?;
        let g = collect_grads(&mut grads, &v_b, &self.var.0);
        adam_update(
            &mut self.var.0,
            &g,
            &mut self.opt_v,
            lr,
            BETA1,
            BETA2,
            ADAM_EPS,
            Direction::Descend,
        )?;
        Ok(())
    }

    fn embed(&self, params: &ParamSet) -> Result<Vec<f64>, Error> {
        let mut tape = Tape::new();
        let bound = bind_constants(&mut tape, params);
        let z = forward_toy(&mut tape, &bound, &self.data_t)?;
        let t = tape.value(z);
        let n = t.cols();
        let mut out = Vec::with_capacity(2 * n);
        for i in 0..n {
            out.push(t.at2(0, i));
            out.push(t.at2(1, i));
        }
        Ok(out)
    }
}
