//! Attention propagation over the three graph levels.
//!
//! Each level refines a set of target embeddings from their neighbors:
//!
//! * item → item, over co-outfit items, message `W_1 (h_i ⊙ h_j)`;
//! * item → outfit, over an outfit's items, message `W_2 h_i*`;
//! * outfit → user, over a user's training outfits, message `W_3 h_o*`.
//!
//! Per head `k`, logits are `e = LeakyReLU(a_kᵀ [W_k h_tgt ‖ W_k h_src])`,
//! plus `ln(w(c_i, c_j) + ε)` on item-item edges, normalized by softmax over
//! the target's neighborhood. The update is
//! `h* = h + mean_k LeakyReLU(Σ α_k · message)`; targets without neighbors
//! keep `h* = h` bit for bit.

use std::io::Write;

use rand::Rng as _;

use crate::dataio::{Dataset, Splits};
use crate::embed::{fuse_backward, fuse_traced, AttentionHead, FusionTrace, Level, LevelParams, ModelConfig, ModelState, Params};
use crate::error::{Error, Result};
use crate::graph::{
    build_fashion_graph, category_cooccurrence_weights, item_neighborhoods, CategoryGraph,
    FashionGraph, NodeIndex,
};
use crate::math::{axpy, dot, leaky_relu, leaky_relu_grad, softmax_into, Mat};
use crate::rng::Rng;

/// Added to co-occurrence weights before taking the log.
pub const COOCCURRENCE_EPS: f64 = 1e-8;

/// Compressed adjacency: the sources of target `t` are
/// `sources[offsets[t]..offsets[t + 1]]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    pub offsets: Vec<usize>,
    pub sources: Vec<usize>,
    /// Additive logit per edge.
    pub bias: Option<Vec<f64>>,
}

impl Topology {
    fn from_lists<I>(lists: I) -> Self
    where
        I: IntoIterator,
        I::Item: IntoIterator<Item = usize>,
    {
        let mut offsets = vec![0];
        let mut sources = Vec::new();
        for list in lists {
            sources.extend(list);
            offsets.push(sources.len());
        }
        Topology {
            offsets,
            sources,
            bias: None,
        }
    }

    pub fn n_targets(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn n_edges(&self) -> usize {
        self.sources.len()
    }

    #[inline]
    pub fn edges(&self, t: usize) -> std::ops::Range<usize> {
        self.offsets[t]..self.offsets[t + 1]
    }
}

/// Everything the model needs from a dataset, in dense-index form.
#[derive(Debug, Clone)]
pub struct GraphContext {
    pub graph: FashionGraph,
    pub categories: CategoryGraph,
    pub item_category: Vec<usize>,
    pub visual: Mat,
    pub textual: Mat,
    pub item_item: Topology,
    pub item_outfit: Topology,
    pub outfit_user: Topology,
}

impl GraphContext {
    /// With `splits`, user–outfit edges come from training interactions only.
    pub fn new(ds: &Dataset, splits: Option<&Splits>) -> Self {
        let graph = build_fashion_graph(ds, splits);
        let categories = category_cooccurrence_weights(ds);
        let n_items = graph.n_items();
        let (d_v, d_t) = (ds.visual_dim(), ds.textual_dim());
        let mut visual = Mat::zeros(n_items, d_v);
        let mut textual = Mat::zeros(n_items, d_t);
        let mut item_category = Vec::with_capacity(n_items);
        for (k, item) in ds.items.values().enumerate() {
            for (dst, &x) in visual.row_mut(k).iter_mut().zip(&item.visual) {
                *dst = f64::from(x);
            }
            for (dst, &x) in textual.row_mut(k).iter_mut().zip(&item.textual) {
                *dst = f64::from(x);
            }
            item_category.push(item.category);
        }

        let neighborhoods = item_neighborhoods(ds, &graph, &categories);
        let mut item_item =
            Topology::from_lists(neighborhoods.iter().map(|n| n.iter().map(|&(j, _)| j)));
        item_item.bias = Some(
            neighborhoods
                .iter()
                .flatten()
                .map(|&(_, w)| (w + COOCCURRENCE_EPS).ln())
                .collect(),
        );
        let item_outfit = Topology::from_lists(graph.outfit_items.iter().map(|l| l.iter().copied()));
        let outfit_user = Topology::from_lists(graph.user_outfits.iter().map(|l| l.iter().copied()));

        GraphContext {
            graph,
            categories,
            item_category,
            visual,
            textual,
            item_item,
            item_outfit,
            outfit_user,
        }
    }

    pub fn index(&self) -> &NodeIndex {
        &self.graph.index
    }

    /// Model configuration sized for this graph, other fields from `base`.
    pub fn model_config(&self, base: &ModelConfig) -> ModelConfig {
        ModelConfig {
            n_users: self.graph.n_users(),
            n_outfits: self.graph.n_outfits(),
            n_items: self.graph.n_items(),
            n_categories: self.categories.n_categories(),
            visual_dim: self.visual.cols(),
            textual_dim: self.textual.cols(),
            ..base.clone()
        }
    }

    pub fn topology(&self, level: Level) -> &Topology {
        match level {
            Level::ItemItem => &self.item_item,
            Level::ItemOutfit => &self.item_outfit,
            Level::OutfitUser => &self.outfit_user,
        }
    }

    fn check_model(&self, m: &ModelState) -> Result<()> {
        let c = &m.config;
        let want = (
            self.graph.n_users(),
            self.graph.n_outfits(),
            self.graph.n_items(),
            self.visual.cols(),
            self.textual.cols(),
        );
        let got = (c.n_users, c.n_outfits, c.n_items, c.visual_dim, c.textual_dim);
        if want != got {
            return Err(Error::DimensionMismatch(format!(
                "model sized (users, outfits, items, d_v, d_t) = {got:?} but graph has {want:?}"
            )));
        }
        Ok(())
    }
}

/// Dropout rates and the generator that draws the masks.
pub struct Dropout<'a> {
    /// Inverted dropout on initial user, outfit and item embeddings.
    pub embedding: f64,
    /// Edge dropout on attention; surviving weights are renormalized.
    pub attention: f64,
    pub rng: &'a mut Rng,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PropagationOutput {
    /// Initial embeddings as fed to propagation (after dropout, if any).
    pub h_item: Mat,
    pub h_outfit: Mat,
    pub h_user: Mat,
    pub h_item_star: Mat,
    pub h_outfit_star: Mat,
    pub h_user_star: Mat,
    /// Attention weights per level (execution order), per head, per edge.
    /// Dropped edges carry weight 0.
    pub alpha: [Vec<Vec<f64>>; 3],
}

impl PropagationOutput {
    /// Writes `level<TAB>target<TAB>source<TAB>head<TAB>alpha` rows using
    /// external ids.
    pub fn write_attention<W: Write>(&self, ctx: &GraphContext, mut w: W) -> std::io::Result<()> {
        let idx = ctx.index();
        for level in Level::ALL {
            let topo = ctx.topology(level);
            let (tgt_ids, src_ids) = match level {
                Level::ItemItem => (&idx.items, &idx.items),
                Level::ItemOutfit => (&idx.outfits, &idx.items),
                Level::OutfitUser => (&idx.users, &idx.outfits),
            };
            for (head, alphas) in self.alpha[level as usize].iter().enumerate() {
                for t in 0..topo.n_targets() {
                    for e in topo.edges(t) {
                        writeln!(
                            w,
                            "{}\t{}\t{}\t{head}\t{}",
                            level.name(),
                            tgt_ids[t],
                            src_ids[topo.sources[e]],
                            alphas[e]
                        )?;
                    }
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Message {
    /// `W (h_tgt ⊙ h_src)`
    Hadamard,
    /// `W h_src`
    Linear,
}

#[derive(Debug, Clone)]
struct HeadTrace {
    /// `(Wᵀ a_tgt, Wᵀ a_src)`
    proj: (Vec<f64>, Vec<f64>),
    /// Pre-activation logit `p_t + q_s` per edge.
    pre: Vec<f64>,
    kept: Vec<bool>,
    alpha: Vec<f64>,
    /// `Σ α h_src` per target.
    agg: Mat,
    /// Message pre-activation per target.
    msg: Mat,
}

#[derive(Debug, Clone)]
pub(crate) struct LevelTrace {
    heads: Vec<HeadTrace>,
}

#[derive(Debug, Clone)]
pub(crate) struct ForwardTrace {
    fusion: Vec<FusionTrace>,
    /// Inverted-dropout scales (0 or 1/(1-p)) for items, outfits, users.
    masks: Option<[Mat; 3]>,
    levels: Vec<LevelTrace>,
}

fn head_projections(head: &AttentionHead, d: usize) -> (Vec<f64>, Vec<f64>) {
    let a = head.attention.as_slice();
    (
        head.transform.matvec_t(&a[..d]),
        head.transform.matvec_t(&a[d..]),
    )
}

/// Softmax (or uniform average in linear mode) over the kept edges of one
/// target. Falls back to all edges when every edge was dropped.
fn normalize(logits: &[f64], kept: &mut [bool], linear: bool, out: &mut [f64]) {
    if !kept.iter().any(|&k| k) {
        kept.iter_mut().for_each(|k| *k = true);
    }
    let idx: Vec<usize> = (0..logits.len()).filter(|&e| kept[e]).collect();
    out.iter_mut().for_each(|o| *o = 0.0);
    if linear {
        let w = 1.0 / idx.len() as f64;
        for &e in &idx {
            out[e] = w;
        }
    } else {
        let sub: Vec<f64> = idx.iter().map(|&e| logits[e]).collect();
        let mut p = vec![0.0; sub.len()];
        softmax_into(&sub, &mut p);
        for (&e, &pe) in idx.iter().zip(&p) {
            out[e] = pe;
        }
    }
}

/// Attention weights of one head for the given targets, without dropout.
pub fn attention_weights(
    topo: &Topology,
    targets: &[usize],
    tgt: &Mat,
    src: &Mat,
    head: &AttentionHead,
    cfg: &ModelConfig,
) -> Result<Vec<Vec<f64>>> {
    let (w_t, w_s) = head_projections(head, tgt.cols());
    let slope = cfg.slope();
    targets
        .iter()
        .map(|&t| {
            let edges = topo.edges(t);
            if edges.is_empty() {
                return Err(Error::Empty(format!("target {t} has no neighbors")));
            }
            let p = dot(tgt.row(t), &w_t);
            let logits: Vec<f64> = edges
                .clone()
                .map(|e| {
                    let z = p + dot(src.row(topo.sources[e]), &w_s);
                    leaky_relu(z, slope) + topo.bias.as_ref().map_or(0.0, |b| b[e])
                })
                .collect();
            let mut kept = vec![true; logits.len()];
            let mut alpha = vec![0.0; logits.len()];
            normalize(&logits, &mut kept, cfg.linear, &mut alpha);
            Ok(alpha)
        })
        .collect()
}

fn attend(
    kind: Message,
    topo: &Topology,
    tgt: &Mat,
    src: &Mat,
    lp: &LevelParams,
    cfg: &ModelConfig,
    mut dropout: Option<(f64, &mut Rng)>,
) -> (Mat, LevelTrace) {
    let d = tgt.cols();
    let n_t = topo.n_targets();
    let slope = cfg.slope();
    let inv_heads = 1.0 / lp.heads.len() as f64;
    let mut out = tgt.clone();
    let mut update = Mat::zeros(n_t, d);
    let mut heads = Vec::with_capacity(lp.heads.len());

    for head in &lp.heads {
        let proj = head_projections(head, d);
        let p: Vec<f64> = (0..n_t).map(|t| dot(tgt.row(t), &proj.0)).collect();
        let q: Vec<f64> = (0..src.rows()).map(|s| dot(src.row(s), &proj.1)).collect();
        let mut pre = vec![0.0; topo.n_edges()];
        let mut kept = vec![true; topo.n_edges()];
        let mut alpha = vec![0.0; topo.n_edges()];
        let mut agg = Mat::zeros(n_t, d);
        let mut msg = Mat::zeros(n_t, d);

        for t in 0..n_t {
            let edges = topo.edges(t);
            if edges.is_empty() {
                continue;
            }
            let mut logits = Vec::with_capacity(edges.len());
            for e in edges.clone() {
                pre[e] = p[t] + q[topo.sources[e]];
                logits.push(leaky_relu(pre[e], slope) + topo.bias.as_ref().map_or(0.0, |b| b[e]));
                if let Some((rate, rng)) = dropout.as_mut() {
                    kept[e] = *rate <= 0.0 || rng.random::<f64>() >= *rate;
                }
            }
            normalize(&logits, &mut kept[edges.clone()], cfg.linear, &mut alpha[edges.clone()]);

            let agg_t = agg.row_mut(t);
            for e in edges {
                if alpha[e] != 0.0 {
                    axpy(alpha[e], src.row(topo.sources[e]), agg_t);
                }
            }
            let input: Vec<f64> = match kind {
                Message::Hadamard => agg.row(t).iter().zip(tgt.row(t)).map(|(a, h)| a * h).collect(),
                Message::Linear => agg.row(t).to_vec(),
            };
            let m = lp.message.matvec(&input);
            let upd = update.row_mut(t);
            for (u, &z) in upd.iter_mut().zip(&m) {
                *u += inv_heads * leaky_relu(z, slope);
            }
            msg.row_mut(t).copy_from_slice(&m);
        }
        heads.push(HeadTrace {
            proj,
            pre,
            kept,
            alpha,
            agg,
            msg,
        });
    }

    for t in 0..n_t {
        if !topo.edges(t).is_empty() {
            for (o, u) in out.row_mut(t).iter_mut().zip(update.row(t)) {
                *o += u;
            }
        }
    }
    (out, LevelTrace { heads })
}

#[allow(clippy::too_many_arguments)]
fn attend_backward(
    kind: Message,
    topo: &Topology,
    tgt: &Mat,
    src: &Mat,
    lp: &LevelParams,
    cfg: &ModelConfig,
    trace: &LevelTrace,
    d_out: &Mat,
    grad: &mut LevelParams,
    d_tgt: &mut Mat,
    d_src: &mut Mat,
) {
    let d = tgt.cols();
    let n_t = topo.n_targets();
    let slope = cfg.slope();
    let inv_heads = 1.0 / lp.heads.len() as f64;
    d_tgt.add_assign(d_out);

    for (k, (head, ht)) in lp.heads.iter().zip(&trace.heads).enumerate() {
        let mut dp = vec![0.0; n_t];
        let mut dq = vec![0.0; src.rows()];
        for t in 0..n_t {
            let edges = topo.edges(t);
            if edges.is_empty() {
                continue;
            }
            let dr: Vec<f64> = d_out
                .row(t)
                .iter()
                .zip(ht.msg.row(t))
                .map(|(&g, &z)| g * inv_heads * leaky_relu_grad(z, slope))
                .collect();
            let d_input = lp.message.matvec_t(&dr);
            let d_agg: Vec<f64> = match kind {
                Message::Hadamard => {
                    let h_t = tgt.row(t);
                    let input: Vec<f64> = ht.agg.row(t).iter().zip(h_t).map(|(a, h)| a * h).collect();
                    grad.message.add_outer(1.0, &dr, &input);
                    let dt = d_tgt.row_mut(t);
                    for ((g, &di), &a) in dt.iter_mut().zip(&d_input).zip(ht.agg.row(t)) {
                        *g += di * a;
                    }
                    d_input.iter().zip(h_t).map(|(di, h)| di * h).collect()
                }
                Message::Linear => {
                    grad.message.add_outer(1.0, &dr, ht.agg.row(t));
                    d_input
                }
            };

            let mut d_alpha = Vec::with_capacity(edges.len());
            for e in edges.clone() {
                let s = topo.sources[e];
                if ht.alpha[e] != 0.0 {
                    axpy(ht.alpha[e], &d_agg, d_src.row_mut(s));
                }
                d_alpha.push(dot(&d_agg, src.row(s)));
            }
            if cfg.linear {
                continue;
            }
            let mean: f64 = edges
                .clone()
                .zip(&d_alpha)
                .map(|(e, da)| ht.alpha[e] * da)
                .sum();
            for (e, da) in edges.zip(&d_alpha) {
                if !ht.kept[e] {
                    continue;
                }
                let dz = ht.alpha[e] * (da - mean) * leaky_relu_grad(ht.pre[e], slope);
                dp[t] += dz;
                dq[topo.sources[e]] += dz;
            }
        }
        if cfg.linear {
            continue;
        }

        let (w_t, w_s) = &ht.proj;
        let mut g_t = vec![0.0; d];
        for (t, &g) in dp.iter().enumerate() {
            if g != 0.0 {
                axpy(g, w_t, d_tgt.row_mut(t));
                axpy(g, tgt.row(t), &mut g_t);
            }
        }
        let mut g_s = vec![0.0; d];
        for (s, &g) in dq.iter().enumerate() {
            if g != 0.0 {
                axpy(g, w_s, d_src.row_mut(s));
                axpy(g, src.row(s), &mut g_s);
            }
        }
        let a = head.attention.as_slice();
        let gh = &mut grad.heads[k];
        gh.transform.add_outer(1.0, &a[..d], &g_t);
        gh.transform.add_outer(1.0, &a[d..], &g_s);
        let da_t = head.transform.matvec(&g_t);
        let da_s = head.transform.matvec(&g_s);
        let ga = gh.attention.as_mut_slice();
        axpy(1.0, &da_t, &mut ga[..d]);
        axpy(1.0, &da_s, &mut ga[d..]);
    }
}

fn dropout_mask(rows: usize, cols: usize, rate: f64, rng: &mut Rng) -> Mat {
    let mut m = Mat::zeros(rows, cols);
    let keep = 1.0 / (1.0 - rate);
    for x in m.as_mut_slice() {
        *x = if rate <= 0.0 || rng.random::<f64>() >= rate {
            keep
        } else {
            0.0
        };
    }
    m
}

fn apply_mask(m: &Mat, mask: &Mat) -> Mat {
    let data = m.as_slice().iter().zip(mask.as_slice()).map(|(a, b)| a * b).collect();
    Mat::from_vec(m.rows(), m.cols(), data)
}

pub(crate) fn forward_traced(
    ctx: &GraphContext,
    m: &ModelState,
    mut dropout: Option<Dropout<'_>>,
) -> Result<(PropagationOutput, ForwardTrace)> {
    ctx.check_model(m)?;
    let cfg = &m.config;
    let p = &m.params;
    let n_items = ctx.graph.n_items();

    let mut h_item = Mat::zeros(n_items, cfg.dim);
    let mut fusion = Vec::with_capacity(n_items);
    for i in 0..n_items {
        let (e, trace) = fuse_traced(ctx.visual.row(i), ctx.textual.row(i), ctx.item_category[i], m)?;
        h_item.row_mut(i).copy_from_slice(&e.fused);
        fusion.push(trace);
    }
    let mut h_outfit = p.outfit_table.clone();
    let mut h_user = p.user_table.clone();

    let masks = dropout.as_mut().map(|dr| {
        let rate = dr.embedding;
        [
            dropout_mask(h_item.rows(), h_item.cols(), rate, dr.rng),
            dropout_mask(h_outfit.rows(), h_outfit.cols(), rate, dr.rng),
            dropout_mask(h_user.rows(), h_user.cols(), rate, dr.rng),
        ]
    });
    if let Some([mi, mo, mu]) = &masks {
        h_item = apply_mask(&h_item, mi);
        h_outfit = apply_mask(&h_outfit, mo);
        h_user = apply_mask(&h_user, mu);
    }

    let (h_item_star, t_ii) = {
        let d = dropout.as_mut().map(|dr| (dr.attention, &mut *dr.rng));
        attend(Message::Hadamard, &ctx.item_item, &h_item, &h_item, p.level(Level::ItemItem), cfg, d)
    };
    let (h_outfit_star, t_io) = {
        let d = dropout.as_mut().map(|dr| (dr.attention, &mut *dr.rng));
        attend(Message::Linear, &ctx.item_outfit, &h_outfit, &h_item_star, p.level(Level::ItemOutfit), cfg, d)
    };
    let (h_user_star, t_ou) = {
        let d = dropout.as_mut().map(|dr| (dr.attention, &mut *dr.rng));
        attend(Message::Linear, &ctx.outfit_user, &h_user, &h_outfit_star, p.level(Level::OutfitUser), cfg, d)
    };

    let alphas = |t: &LevelTrace| t.heads.iter().map(|h| h.alpha.clone()).collect::<Vec<_>>();
    let out = PropagationOutput {
        alpha: [alphas(&t_ii), alphas(&t_io), alphas(&t_ou)],
        h_item,
        h_outfit,
        h_user,
        h_item_star,
        h_outfit_star,
        h_user_star,
    };
    Ok((
        out,
        ForwardTrace {
            fusion,
            masks,
            levels: vec![t_ii, t_io, t_ou],
        },
    ))
}

/// Full propagation: item fusion, then item → item → outfit → user.
pub fn forward(ctx: &GraphContext, m: &ModelState, dropout: Option<Dropout<'_>>) -> Result<PropagationOutput> {
    forward_traced(ctx, m, dropout).map(|(out, _)| out)
}

/// Upstream gradients with respect to the propagated embeddings.
#[derive(Debug, Clone)]
pub(crate) struct Upstream {
    pub items: Mat,
    pub outfits: Mat,
    pub users: Mat,
}

impl Upstream {
    pub fn zeros(out: &PropagationOutput) -> Self {
        Upstream {
            items: Mat::zeros(out.h_item_star.rows(), out.h_item_star.cols()),
            outfits: Mat::zeros(out.h_outfit_star.rows(), out.h_outfit_star.cols()),
            users: Mat::zeros(out.h_user_star.rows(), out.h_user_star.cols()),
        }
    }
}

/// Accumulates parameter gradients of everything that flows into `up`.
pub(crate) fn backward(
    ctx: &GraphContext,
    m: &ModelState,
    out: &PropagationOutput,
    trace: &ForwardTrace,
    up: Upstream,
    grad: &mut Params,
) {
    let cfg = &m.config;
    let p = &m.params;
    let Upstream {
        items: mut d_item_star,
        outfits: mut d_outfit_star,
        users: d_user_star,
    } = up;

    let mut d_user = Mat::zeros(out.h_user.rows(), out.h_user.cols());
    attend_backward(
        Message::Linear,
        &ctx.outfit_user,
        &out.h_user,
        &out.h_outfit_star,
        p.level(Level::OutfitUser),
        cfg,
        &trace.levels[2],
        &d_user_star,
        grad.level_mut(Level::OutfitUser),
        &mut d_user,
        &mut d_outfit_star,
    );

    let mut d_outfit = Mat::zeros(out.h_outfit.rows(), out.h_outfit.cols());
    attend_backward(
        Message::Linear,
        &ctx.item_outfit,
        &out.h_outfit,
        &out.h_item_star,
        p.level(Level::ItemOutfit),
        cfg,
        &trace.levels[1],
        &d_outfit_star,
        grad.level_mut(Level::ItemOutfit),
        &mut d_outfit,
        &mut d_item_star,
    );

    let mut d_item = Mat::zeros(out.h_item.rows(), out.h_item.cols());
    let mut d_item_src = Mat::zeros(out.h_item.rows(), out.h_item.cols());
    attend_backward(
        Message::Hadamard,
        &ctx.item_item,
        &out.h_item,
        &out.h_item,
        p.level(Level::ItemItem),
        cfg,
        &trace.levels[0],
        &d_item_star,
        grad.level_mut(Level::ItemItem),
        &mut d_item,
        &mut d_item_src,
    );
    d_item.add_assign(&d_item_src);

    if let Some([mi, mo, mu]) = &trace.masks {
        d_item = apply_mask(&d_item, mi);
        d_outfit = apply_mask(&d_outfit, mo);
        d_user = apply_mask(&d_user, mu);
    }
    grad.user_table.add_assign(&d_user);
    grad.outfit_table.add_assign(&d_outfit);
    for i in 0..d_item.rows() {
        let g = d_item.row(i);
        if g.iter().all(|&x| x == 0.0) {
            continue;
        }
        fuse_backward(
            ctx.visual.row(i),
            ctx.textual.row(i),
            ctx.item_category[i],
            &trace.fusion[i],
            g,
            m,
            grad,
        );
    }
}
