//! Alternating two-player training loop: per outer step, `ns` ascent updates
//! of the mean network followed by exactly one update of the variance
//! network, each on a freshly drawn class-balanced batch with a freshly
//! sampled network. The type signatures encode player isolation: a mean
//! update borrows the variance parameters immutably and vice versa.

use crate::config::{NetvDirection, RunConfig};
use crate::data::{BalancedBatches, Batch, DatasetView};
use crate::encoder::{build_manifest, forward, ArchitectureManifest};
use crate::error::{Error, Result};
use crate::knn::evaluate;
use crate::metrics::{MetricsRow, MetricsSink, Phase};
use crate::optim::{adam_update, AdamState, Direction};
use crate::params::{
    batch_rng, bind_constants, bind_leaves, bind_theta_via_mu, bind_theta_via_v, draw_eps,
    init_params, init_rng, sigma_of, Bound, MeanParams, ParamSet, SampleMode, VarianceParams,
};
use crate::rate::{objective_tau, BreakdownValues, RateConfig};
use crate::tape::{Grads, Tape};
use crate::tensor::{add, hadamard, Tensor};

/// Shared read-only context for the two step functions.
pub struct StepCtx<'a> {
    pub cfg: &'a RunConfig,
    pub rate: &'a RateConfig,
    pub manifest: &'a ArchitectureManifest,
}

impl<'a> StepCtx<'a> {
    pub fn new(
        cfg: &'a RunConfig,
        rate: &'a RateConfig,
        manifest: &'a ArchitectureManifest,
    ) -> Self {
        StepCtx {
            cfg,
            rate,
            manifest,
        }
    }

    /// Noise for one training draw. The degenerate sample modes force the
    /// sampled network onto the mean network by zeroing the noise.
    fn training_eps(&self, like: &ParamSet, draw_id: u64) -> ParamSet {
        match self.cfg.sample_mode {
            SampleMode::Fresh => draw_eps(like, self.cfg.seed, draw_id),
            SampleMode::SigmaZero | SampleMode::NoiseZero => like.zeros_like(),
        }
    }
}

/// Pull this player's gradient out of the tape, zero-filling any parameter
/// the loss did not reach.
fn grads_for(grads: &mut Grads, bound: &Bound, like: &ParamSet) -> Result<ParamSet> {
    let mut out = ParamSet::new();
    for (name, t) in like.iter() {
        let var = bound.get(name)?;
        match grads.take(var) {
            Some(g) => out.push(name, g),
            None => out.push(name, Tensor::zeros(t.shape())),
        }
    }
    Ok(out)
}

fn finite_or_abort(values: &BreakdownValues) -> Result<()> {
    if values.tau.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite { op: "objective" })
    }
}

fn update_row(
    step: u64,
    inner: u64,
    phase: Phase,
    values: BreakdownValues,
    sigma_mean: f64,
    draw_id: u64,
) -> MetricsRow {
    MetricsRow {
        step,
        inner,
        phase,
        tau: Some(values.tau),
        dr_z: Some(values.dr_z),
        dr_zhat: Some(values.dr_zhat),
        pairwise_sum: Some(values.pairwise_sum),
        sigma_mean: Some(sigma_mean),
        acc_netd: None,
        acc_netg: None,
        gap: None,
        draw_id: Some(draw_id),
        ms: None,
    }
}

/// One ascent update of the mean network. The sampled network's features
/// feed the objective through the mean parameters as well (coefficient one
/// per element), unless `detach_generator_for_d` severs that path.
#[allow(clippy::too_many_arguments)]
pub fn netd_step(
    ctx: &StepCtx,
    mu: &mut MeanParams,
    var: &VarianceParams,
    batch: &Batch,
    opt: &mut AdamState,
    draw_id: u64,
    step: u64,
    inner: u64,
) -> Result<MetricsRow> {
    let eps = ctx.training_eps(&mu.0, draw_id);
    let sigma = sigma_of(var);
    let sigma_mean = sigma.mean();

    let mut tape = Tape::new();
    let mu_bound = bind_leaves(&mut tape, &mu.0);
    let theta = if ctx.cfg.detach_generator_for_d {
        let mut sampled = ParamSet::new();
        for (((name, m), (_, s)), (_, e)) in mu.0.iter().zip(sigma.iter()).zip(eps.iter()) {
            sampled.push(name, add(m, &hadamard(s, e)?)?);
        }
        bind_constants(&mut tape, &sampled)
    } else {
        bind_theta_via_mu(&mut tape, &mu_bound, &sigma, &eps)?
    };

    let z = forward(&mut tape, ctx.manifest, &mu_bound, &batch.images)?;
    let zhat = forward(&mut tape, ctx.manifest, &theta, &batch.images)?;
    let breakdown = objective_tau(
        &mut tape,
        z,
        zhat,
        &batch.partition,
        ctx.rate,
        ctx.cfg.pairwise_scope,
    )?;
    let values = breakdown.values(&tape);
    finite_or_abort(&values)?;

    let mut grads = tape.backward(breakdown.tau)?;
    let grad_set = grads_for(&mut grads, &mu_bound, &mu.0)?;
    adam_update(
        &mut mu.0,
        &grad_set,
        opt,
        ctx.cfg.lr,
        ctx.cfg.beta1,
        ctx.cfg.beta2,
        ctx.cfg.adam_epsilon,
        Direction::Ascend,
    )?;
    Ok(update_row(
        step,
        inner,
        Phase::D,
        values,
        sigma_mean,
        draw_id,
    ))
}

/// One update of the variance network through the reparameterization
/// pathway; descends by default, ascends under `netv_direction = max`.
#[allow(clippy::too_many_arguments)]
pub fn netv_step(
    ctx: &StepCtx,
    mu: &MeanParams,
    var: &mut VarianceParams,
    batch: &Batch,
    opt: &mut AdamState,
    draw_id: u64,
    step: u64,
    inner: u64,
) -> Result<MetricsRow> {
    let eps = ctx.training_eps(&mu.0, draw_id);
    let sigma_mean = sigma_of(var).mean();

    let mut tape = Tape::new();
    let v_bound = bind_leaves(&mut tape, &var.0);
    let theta = bind_theta_via_v(&mut tape, &mu.0, &v_bound, &eps)?;
    let mu_const = bind_constants(&mut tape, &mu.0);

    let z = forward(&mut tape, ctx.manifest, &mu_const, &batch.images)?;
    let zhat = forward(&mut tape, ctx.manifest, &theta, &batch.images)?;
    let breakdown = objective_tau(
        &mut tape,
        z,
        zhat,
        &batch.partition,
        ctx.rate,
        ctx.cfg.pairwise_scope,
    )?;
    let values = breakdown.values(&tape);
    finite_or_abort(&values)?;

    let mut grads = tape.backward(breakdown.tau)?;
    let grad_set = grads_for(&mut grads, &v_bound, &var.0)?;
    let direction = match ctx.cfg.netv_direction {
        NetvDirection::Min => Direction::Descend,
        NetvDirection::Max => Direction::Ascend,
    };
    adam_update(
        &mut var.0,
        &grad_set,
        opt,
        ctx.cfg.lr,
        ctx.cfg.beta1,
        ctx.cfg.beta2,
        ctx.cfg.adam_epsilon,
        direction,
    )?;
    Ok(update_row(
        step,
        inner,
        Phase::V,
        values,
        sigma_mean,
        draw_id,
    ))
}

fn abort(
    sink: &mut dyn MetricsSink,
    step: u64,
    inner: u64,
    phase: &'static str,
    source: Error,
) -> Error {
    // partial metrics must survive the abort
    let _ = sink.flush();
    Error::TrainAbort {
        step,
        inner,
        phase,
        source: Box::new(source),
    }
}

/// Run the full alternating loop. Per outer step `s` (1-based): `ns` mean
/// updates (inner 1..=ns), one variance update (inner ns+1), then an
/// evaluation row whenever `s` hits the cadence or the final step.
/// `on_checkpoint` fires every `checkpoint_every` outer steps and always
/// after the last.
pub fn run(
    cfg: &RunConfig,
    train_view: &DatasetView,
    test_view: &DatasetView,
    sink: &mut dyn MetricsSink,
    mut on_checkpoint: impl FnMut(u64, &MeanParams, &VarianceParams) -> Result<()>,
) -> Result<(MeanParams, VarianceParams)> {
    cfg.validate()?;
    let manifest = build_manifest(cfg.arch, cfg.feature_dim)?;
    let rate = RateConfig::new(cfg.eps_sq, cfg.feature_dim)?;
    let ctx = StepCtx::new(cfg, &rate, &manifest);

    let (mut mu, mut var) = init_params(
        manifest.params(),
        cfg.init_std,
        cfg.sigma_init,
        &mut init_rng(cfg.seed),
    );
    let mut opt_d = AdamState::new(&mu.0);
    let mut opt_v = AdamState::new(&var.0);
    let mut batches = BalancedBatches::new(train_view, cfg.batch_per_class, batch_rng(cfg.seed))?;

    let mut draw_counter: u64 = 0;
    let mut next_draw = || {
        let id = draw_counter;
        draw_counter += 1;
        id
    };

    for step in 1..=cfg.numsteps {
        for inner in 1..=cfg.ns {
            let batch = batches.next_batch();
            let draw_id = next_draw();
            let t0 = std::time::Instant::now();
            let mut row = netd_step(
                &ctx, &mut mu, &var, &batch, &mut opt_d, draw_id, step, inner,
            )
            .map_err(|e| abort(sink, step, inner, "D", e))?;
            if cfg.timing {
                row.ms = Some(t0.elapsed().as_millis() as u64);
            }
            sink.record(&row)?;
        }

        {
            let inner = cfg.ns + 1;
            let batch = batches.next_batch();
            let draw_id = next_draw();
            let t0 = std::time::Instant::now();
            let mut row = netv_step(
                &ctx, &mu, &mut var, &batch, &mut opt_v, draw_id, step, inner,
            )
            .map_err(|e| abort(sink, step, inner, "V", e))?;
            if cfg.timing {
                row.ms = Some(t0.elapsed().as_millis() as u64);
            }
            sink.record(&row)?;
        }

        if step % cfg.eval_every == 0 || step == cfg.numsteps {
            let draw_id = next_draw();
            let t0 = std::time::Instant::now();
            let report = evaluate(
                &manifest,
                &mu,
                &var,
                train_view,
                test_view,
                cfg.k_nn,
                cfg.sample_mode,
                cfg.seed,
                draw_id,
                step,
            )
            .map_err(|e| abort(sink, step, 0, "E", e))?;
            let mut row = MetricsRow::eval(&report, None);
            if cfg.timing {
                row.ms = Some(t0.elapsed().as_millis() as u64);
            }
            sink.record(&row)?;
        }

        if cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0 && step != cfg.numsteps {
            on_checkpoint(step, &mu, &var)?;
        }
    }
    sink.flush()?;
    on_checkpoint(cfg.numsteps, &mu, &var)?;
    Ok((mu, var))
}
