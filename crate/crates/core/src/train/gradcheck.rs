//! Finite-difference verification of the analytic gradients.

use super::{batch_gradient, batch_loss, TrainConfig, TripleBatch};
use crate::embed::{ModelState, Params};
use crate::error::Result;
use crate::propagate::GraphContext;

#[derive(Debug, Clone, PartialEq)]
pub struct GradientReport {
    /// Worst `|g_a − g_n| / max(1, |g_a|, |g_n|)` over all checked entries.
    pub max_rel_error: f64,
    /// Where the worst entry was found.
    pub worst: String,
    /// Worst error per parameter tensor.
    pub groups: Vec<(String, f64)>,
    pub checked: usize,
}

/// Compares `analytic` against central differences of `loss` on up to
/// `per_tensor` evenly spaced entries of every tensor (all entries when
/// `per_tensor` is 0).
pub fn compare_gradients(
    m: &ModelState,
    analytic: &Params,
    per_tensor: usize,
    step: f64,
    mut loss: impl FnMut(&ModelState) -> f64,
) -> GradientReport {
    let mut probe = m.clone();
    let mut report = GradientReport {
        max_rel_error: 0.0,
        worst: String::new(),
        groups: Vec::new(),
        checked: 0,
    };
    for (ti, (name, g)) in analytic.named().into_iter().enumerate() {
        let g = g.as_slice();
        let take = if per_tensor == 0 { g.len() } else { per_tensor };
        let stride = (g.len() / take.max(1)).max(1);
        let mut worst = 0.0f64;
        for k in (0..g.len()).step_by(stride).take(take) {
            let orig = probe.params.named()[ti].1.as_slice()[k];
            let mut at = |x: f64, p: &mut ModelState| {
                p.params.named_mut()[ti].1.as_mut_slice()[k] = x;
                loss(p)
            };
            let up = at(orig + step, &mut probe);
            let down = at(orig - step, &mut probe);
            probe.params.named_mut()[ti].1.as_mut_slice()[k] = orig;
            let gn = (up - down) / (2.0 * step);
            let rel = (g[k] - gn).abs() / 1f64.max(g[k].abs()).max(gn.abs());
            report.checked += 1;
            worst = worst.max(rel);
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = format!("{name}[{k}]: analytic {} numeric {gn}", g[k]);
            }
        }
        report.groups.push((name, worst));
    }
    report
}

/// Checks the gradient of the total loss on `batch` with dropout disabled.
pub fn gradient_check(
    ctx: &GraphContext,
    m: &ModelState,
    batch: &TripleBatch,
    cfg: &TrainConfig,
    per_tensor: usize,
    step: f64,
) -> Result<GradientReport> {
    let (_, grad) = batch_gradient(ctx, m, batch, cfg, None)?;
    batch_loss(ctx, m, batch, cfg, None)?;
    Ok(compare_gradients(m, &grad, per_tensor, step, |p| {
        batch_loss(ctx, p, batch, cfg, None).map_or(f64::NAN, |l| l.total)
    }))
}
