//! Joint training of the recommendation and compatibility ranking losses.
//!
//! Each epoch draws one negative per positive for both objectives, shuffles,
//! and walks minibatches of `batch_size` recommendation triples (with the
//! compatibility pairs spread evenly across them). A minibatch runs the full
//! graph forward with dropout, then
//!
//! ```text
//! L = λ_rec · mean −ln σ(ŷ_uo − ŷ_uo′) + λ_comp · mean −ln σ(ŝ_o − ŝ_o′) + l2 · ‖θ‖²
//! ```
//!
//! is differentiated by hand and applied with one Adam step.

mod adam;
mod gradcheck;
mod sampling;
mod state;

pub use adam::Adam;
pub use gradcheck::{compare_gradients, gradient_check, GradientReport};
pub use sampling::{CompatPair, RecTriple, Sampler, TripleBatch};

use crate::embed::{ModelState, Params};
use crate::error::{Error, Result};
use crate::math::{axpy, sigmoid, softplus, Mat};
use crate::propagate::{backward, forward_traced, Dropout, GraphContext, PropagationOutput, Upstream};
use crate::rng;
use crate::score::{outfit_matrix, rec_score, rview, rview_backward};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr: f64,
    /// Inverted dropout on initial embeddings.
    pub embed_dropout: f64,
    /// Edge dropout on attention weights.
    pub attn_dropout: f64,
    pub l2: f64,
    pub epochs: usize,
    pub seed: u64,
    pub lambda_rec: f64,
    pub lambda_comp: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 512,
            lr: 0.001,
            embed_dropout: 0.2,
            attn_dropout: 0.3,
            l2: 1e-4,
            epochs: 50,
            seed: 0,
            lambda_rec: 1.0,
            lambda_comp: 1.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.into()));
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad("lr must be a non-negative number");
        }
        for (name, p) in [("embed_dropout", self.embed_dropout), ("attn_dropout", self.attn_dropout)] {
            if !(0.0..1.0).contains(&p) {
                return Err(Error::InvalidConfig(format!("{name} must lie in [0, 1), got {p}")));
            }
        }
        if !(self.l2 >= 0.0) || !(self.lambda_rec >= 0.0) || !(self.lambda_comp >= 0.0) {
            return bad("l2 and loss weights must be non-negative");
        }
        Ok(())
    }
}

/// `−ln σ(diff)`, stable for any magnitude.
pub fn bpr_loss(diff: f64) -> f64 {
    softplus(-diff)
}

pub fn bpr_rec_loss(y_pos: f64, y_neg: f64) -> f64 {
    bpr_loss(y_pos - y_neg)
}

pub fn bpr_comp_loss(s_pos: f64, s_neg: f64) -> f64 {
    bpr_loss(s_pos - s_neg)
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossBreakdown {
    /// Mean recommendation loss (unweighted).
    pub rec: f64,
    /// Mean compatibility loss (unweighted).
    pub comp: f64,
    /// `l2 · ‖θ‖²`
    pub l2: f64,
    pub total: f64,
}

fn mean_weight(n: usize) -> f64 {
    if n == 0 {
        0.0
    } else {
        1.0 / n as f64
    }
}

fn run_batch(
    ctx: &GraphContext,
    m: &ModelState,
    batch: &TripleBatch,
    cfg: &TrainConfig,
    dropout: Option<Dropout<'_>>,
    want_grad: bool,
) -> Result<(LossBreakdown, Option<Params>)> {
    let (out, trace) = forward_traced(ctx, m, dropout)?;
    let PropagationOutput {
        h_item_star: hi,
        h_outfit_star: ho,
        h_user_star: hu,
        ..
    } = &out;
    let mut up = want_grad.then(|| Upstream::zeros(&out));
    let mut grad = want_grad.then(|| Params::zeros(&m.config));

    let w_rec = mean_weight(batch.rec.len());
    let mut rec = 0.0;
    for t in &batch.rec {
        let u = hu.row(t.user);
        let diff = rec_score(u, ho.row(t.pos)) - rec_score(u, ho.row(t.neg));
        rec += bpr_loss(diff);
        if let Some(up) = up.as_mut() {
            let g = -cfg.lambda_rec * w_rec * sigmoid(-diff);
            let du: Vec<f64> = ho.row(t.pos).iter().zip(ho.row(t.neg)).map(|(p, n)| g * (p - n)).collect();
            axpy(1.0, &du, up.users.row_mut(t.user));
            axpy(g, u, up.outfits.row_mut(t.pos));
            axpy(-g, u, up.outfits.row_mut(t.neg));
        }
    }
    rec *= w_rec;

    let w_comp = mean_weight(batch.compat.len());
    let mut comp = 0.0;
    for pair in &batch.compat {
        let o_pos = outfit_matrix(&pair.pos, hi);
        let o_neg = outfit_matrix(&pair.neg, hi);
        let diff = rview(&o_pos, m)?.score - rview(&o_neg, m)?.score;
        comp += bpr_loss(diff);
        if let (Some(up), Some(grad)) = (up.as_mut(), grad.as_mut()) {
            let g = -cfg.lambda_comp * w_comp * sigmoid(-diff);
            scatter(&rview_backward(&o_pos, m, g, &mut grad.rview), &pair.pos, &mut up.items);
            scatter(&rview_backward(&o_neg, m, -g, &mut grad.rview), &pair.neg, &mut up.items);
        }
    }
    comp *= w_comp;

    let l2 = cfg.l2 * m.params.sum_squares();
    let total = cfg.lambda_rec * rec + cfg.lambda_comp * comp + l2;
    let losses = LossBreakdown { rec, comp, l2, total };

    if let (Some(up), Some(mut grad)) = (up, grad) {
        backward(ctx, m, &out, &trace, up, &mut grad);
        for ((_, g), (_, p)) in grad.named_mut().into_iter().zip(m.params.named()) {
            axpy(2.0 * cfg.l2, p.as_slice(), g.as_mut_slice());
        }
        return Ok((losses, Some(grad)));
    }
    Ok((losses, None))
}

fn scatter(d_o: &Mat, items: &[usize], into: &mut Mat) {
    for (r, &i) in items.iter().enumerate() {
        axpy(1.0, d_o.row(r), into.row_mut(i));
    }
}

/// Losses of one batch; dropout only if given.
pub fn batch_loss(
    ctx: &GraphContext,
    m: &ModelState,
    batch: &TripleBatch,
    cfg: &TrainConfig,
    dropout: Option<Dropout<'_>>,
) -> Result<LossBreakdown> {
    run_batch(ctx, m, batch, cfg, dropout, false).map(|(l, _)| l)
}

/// Losses of one batch and the gradient of `total` with respect to every
/// parameter.
pub fn batch_gradient(
    ctx: &GraphContext,
    m: &ModelState,
    batch: &TripleBatch,
    cfg: &TrainConfig,
    dropout: Option<Dropout<'_>>,
) -> Result<(LossBreakdown, Params)> {
    run_batch(ctx, m, batch, cfg, dropout, true).map(|(l, g)| (l, g.unwrap()))
}

/// Epoch-average losses.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    /// 1-based.
    pub epoch: usize,
    pub l_rec: f64,
    pub l_comp: f64,
    pub l_total: f64,
    pub batches: usize,
}

/// Model plus optimizer state; everything needed to continue training.
#[derive(Debug, Clone, PartialEq)]
pub struct Trainer {
    pub model: ModelState,
    pub adam: Adam,
    /// Completed epochs.
    pub epoch: usize,
}

impl Trainer {
    pub fn new(model: ModelState, cfg: &TrainConfig) -> Self {
        let adam = Adam::new(cfg.lr, &model.config);
        Trainer {
            model,
            adam,
            epoch: 0,
        }
    }

    /// Runs one epoch. Randomness depends only on `cfg.seed` and the epoch
    /// number, so resumed runs retrace uninterrupted ones exactly.
    pub fn train_epoch(&mut self, ctx: &GraphContext, sampler: &Sampler, cfg: &TrainConfig) -> Result<EpochStats> {
        cfg.validate()?;
        let epoch = self.epoch + 1;
        self.adam.lr = cfg.lr;
        let mut rng_epoch = rng::stream(cfg.seed, "epoch", epoch as u64);
        let all = sampler.sample(&mut rng_epoch);
        let batches = all.minibatches(cfg.batch_size);
        let (mut rec, mut comp, mut total) = (0.0, 0.0, 0.0);
        for (b, batch) in batches.iter().enumerate() {
            let mut r = rng::stream(cfg.seed, "dropout", epoch as u64 * 1_000_000 + b as u64);
            let dropout = Dropout {
                embedding: cfg.embed_dropout,
                attention: cfg.attn_dropout,
                rng: &mut r,
            };
            let (loss, grad) = batch_gradient(ctx, &self.model, batch, cfg, Some(dropout))?;
            if !loss.total.is_finite() {
                let norms = self
                    .model
                    .params
                    .named()
                    .iter()
                    .map(|(n, t)| format!("{n}={:.3e}", t.sum_squares().sqrt()))
                    .collect::<Vec<_>>()
                    .join(", ");
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch: b,
                    l_rec: loss.rec,
                    l_comp: loss.comp,
                    norms,
                });
            }
            self.adam.step(&mut self.model.params, &grad);
            rec += loss.rec;
            comp += loss.comp;
            total += loss.total;
        }
        self.epoch = epoch;
        let n = batches.len() as f64;
        Ok(EpochStats {
            epoch,
            l_rec: rec / n,
            l_comp: comp / n,
            l_total: total / n,
            batches: batches.len(),
        })
    }
}

#[cfg(test)]
mod tests;
