//! Learnable parameters and initial node embeddings.
//!
//! Users and outfits start from ID embeddings. Items start from their
//! features: the visual vector goes through a two-layer MLP down to 32
//! dims, the textual vector through one affine map down to 32 dims, and the
//! concatenation is projected to the model dimension.

mod checkpoint;

use rand::Rng as _;
use rand_distr::{Distribution, Normal};

pub use checkpoint::{Checkpoint, Dtype, Section, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};

use crate::error::{Error, Result};
use crate::math::{leaky_relu, leaky_relu_grad, Mat, LEAKY_SLOPE};
use crate::rng;

/// Width of the reduced visual and textual embeddings.
pub const REDUCED_DIM: usize = 32;

/// The three propagation levels, in execution order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Level {
    ItemItem = 0,
    ItemOutfit = 1,
    OutfitUser = 2,
}

impl Level {
    pub const ALL: [Level; 3] = [Level::ItemItem, Level::ItemOutfit, Level::OutfitUser];

    pub fn name(self) -> &'static str {
        match self {
            Level::ItemItem => "item_item",
            Level::ItemOutfit => "item_outfit",
            Level::OutfitUser => "outfit_user",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub n_users: usize,
    pub n_outfits: usize,
    pub n_items: usize,
    pub n_categories: usize,
    pub dim: usize,
    pub visual_dim: usize,
    pub textual_dim: usize,
    pub hidden_dim: usize,
    pub heads: usize,
    pub views: usize,
    pub view_hidden: usize,
    /// Adds a per-category affine map after the shared visual encoder.
    pub category_heads: bool,
    /// Replaces LeakyReLU and tanh by the identity and every softmax by a
    /// uniform average. Only useful for gradient checking.
    pub linear: bool,
}

impl ModelConfig {
    pub fn new(n_users: usize, n_outfits: usize, n_items: usize, n_categories: usize) -> Self {
        ModelConfig {
            n_users,
            n_outfits,
            n_items,
            n_categories,
            dim: 64,
            visual_dim: 2048,
            textual_dim: 768,
            hidden_dim: 256,
            heads: 4,
            views: 6,
            view_hidden: 32,
            category_heads: false,
            linear: false,
        }
    }

    pub fn slope(&self) -> f64 {
        if self.linear {
            1.0
        } else {
            LEAKY_SLOPE
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("dim", self.dim),
            ("visual_dim", self.visual_dim),
            ("textual_dim", self.textual_dim),
            ("hidden_dim", self.hidden_dim),
            ("heads", self.heads),
            ("views", self.views),
            ("view_hidden", self.view_hidden),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(Error::InvalidConfig(format!("{name} must be positive")));
            }
        }
        if self.category_heads && self.n_categories == 0 {
            return Err(Error::InvalidConfig(
                "category_heads requires at least one category".into(),
            ));
        }
        Ok(())
    }

    pub(crate) fn to_meta(&self) -> Vec<(String, String)> {
        let kv = |k: &str, v: String| (k.to_string(), v);
        vec![
            kv("n_users", self.n_users.to_string()),
            kv("n_outfits", self.n_outfits.to_string()),
            kv("n_items", self.n_items.to_string()),
            kv("n_categories", self.n_categories.to_string()),
            kv("dim", self.dim.to_string()),
            kv("visual_dim", self.visual_dim.to_string()),
            kv("textual_dim", self.textual_dim.to_string()),
            kv("hidden_dim", self.hidden_dim.to_string()),
            kv("heads", self.heads.to_string()),
            kv("views", self.views.to_string()),
            kv("view_hidden", self.view_hidden.to_string()),
            kv("category_heads", self.category_heads.to_string()),
            kv("linear", self.linear.to_string()),
        ]
    }

    pub(crate) fn from_meta(meta: &[(String, String)]) -> Result<Self> {
        let get = |k: &str| -> Result<&str> {
            meta.iter()
                .find(|(key, _)| key == k)
                .map(|(_, v)| v.as_str())
                .ok_or_else(|| Error::Format {
                    what: "checkpoint".into(),
                    msg: format!("missing config key {k}"),
                })
        };
        let num = |k: &str| -> Result<usize> {
            get(k)?.parse().map_err(|_| Error::Format {
                what: "checkpoint".into(),
                msg: format!("bad value for {k}"),
            })
        };
        let flag = |k: &str| -> Result<bool> {
            get(k)?.parse().map_err(|_| Error::Format {
                what: "checkpoint".into(),
                msg: format!("bad value for {k}"),
            })
        };
        Ok(ModelConfig {
            n_users: num("n_users")?,
            n_outfits: num("n_outfits")?,
            n_items: num("n_items")?,
            n_categories: num("n_categories")?,
            dim: num("dim")?,
            visual_dim: num("visual_dim")?,
            textual_dim: num("textual_dim")?,
            hidden_dim: num("hidden_dim")?,
            heads: num("heads")?,
            views: num("views")?,
            view_hidden: num("view_hidden")?,
            category_heads: flag("category_heads")?,
            linear: flag("linear")?,
        })
    }
}

/// Affine map `y = W x + b`; `weight` is `out × in`, `bias` is `out × 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: Mat,
    pub bias: Mat,
}

impl Dense {
    fn zeros(out: usize, inp: usize) -> Self {
        Dense {
            weight: Mat::zeros(out, inp),
            bias: Mat::zeros(out, 1),
        }
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut y = self.weight.matvec(x);
        for (yi, b) in y.iter_mut().zip(self.bias.as_slice()) {
            *yi += b;
        }
        y
    }

    /// Accumulates parameter gradients into `grad` and returns `dL/dx`.
    fn backward(&self, x: &[f64], dy: &[f64], grad: &mut Dense) -> Vec<f64> {
        grad.weight.add_outer(1.0, dy, x);
        for (g, d) in grad.bias.as_mut_slice().iter_mut().zip(dy) {
            *g += d;
        }
        self.weight.matvec_t(dy)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionHead {
    /// Shared feature transform `W`, `d × d`.
    pub transform: Mat,
    /// Attention vector `a`, `2d × 1`: first half scores the target, second
    /// half the source.
    pub attention: Mat,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LevelParams {
    pub heads: Vec<AttentionHead>,
    /// Message transform (`W_1`, `W_2` or `W_3`), `d × d`, shared by heads.
    pub message: Mat,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RViewParams {
    /// Attention outer map, `R × v`.
    pub w4: Mat,
    /// Attention inner map, `v × d`.
    pub w5: Mat,
    /// Compatibility outer map, `R × v`.
    pub w6: Mat,
    /// Compatibility inner map, `v × d`.
    pub w7: Mat,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub user_table: Mat,
    pub outfit_table: Mat,
    pub visual_hidden: Dense,
    pub visual_out: Dense,
    pub category_out: Vec<Dense>,
    pub textual: Dense,
    pub fusion: Dense,
    pub levels: Vec<LevelParams>,
    pub rview: RViewParams,
}

impl Params {
    pub fn zeros(cfg: &ModelConfig) -> Self {
        let d = cfg.dim;
        Params {
            user_table: Mat::zeros(cfg.n_users, d),
            outfit_table: Mat::zeros(cfg.n_outfits, d),
            visual_hidden: Dense::zeros(cfg.hidden_dim, cfg.visual_dim),
            visual_out: Dense::zeros(REDUCED_DIM, cfg.hidden_dim),
            category_out: if cfg.category_heads {
                (0..cfg.n_categories)
                    .map(|_| Dense::zeros(REDUCED_DIM, REDUCED_DIM))
                    .collect()
            } else {
                Vec::new()
            },
            textual: Dense::zeros(REDUCED_DIM, cfg.textual_dim),
            fusion: Dense::zeros(d, 2 * REDUCED_DIM),
            levels: Level::ALL
                .iter()
                .map(|_| LevelParams {
                    heads: (0..cfg.heads)
                        .map(|_| AttentionHead {
                            transform: Mat::zeros(d, d),
                            attention: Mat::zeros(2 * d, 1),
                        })
                        .collect(),
                    message: Mat::zeros(d, d),
                })
                .collect(),
            rview: RViewParams {
                w4: Mat::zeros(cfg.views, cfg.view_hidden),
                w5: Mat::zeros(cfg.view_hidden, d),
                w6: Mat::zeros(cfg.views, cfg.view_hidden),
                w7: Mat::zeros(cfg.view_hidden, d),
            },
        }
    }

    pub fn level(&self, level: Level) -> &LevelParams {
        &self.levels[level as usize]
    }

    pub fn level_mut(&mut self, level: Level) -> &mut LevelParams {
        &mut self.levels[level as usize]
    }

    /// Every tensor with its stable name, in flat-view order.
    pub fn named(&self) -> Vec<(String, &Mat)> {
        let mut out: Vec<(String, &Mat)> = vec![
            ("user_table".into(), &self.user_table),
            ("outfit_table".into(), &self.outfit_table),
        ];
        for (name, d) in self.dense_layers() {
            out.push((format!("{name}.weight"), &d.weight));
            out.push((format!("{name}.bias"), &d.bias));
        }
        for (lvl, lp) in Level::ALL.iter().zip(&self.levels) {
            for (k, h) in lp.heads.iter().enumerate() {
                out.push((format!("{}.head{k}.transform", lvl.name()), &h.transform));
                out.push((format!("{}.head{k}.attention", lvl.name()), &h.attention));
            }
            out.push((format!("{}.message", lvl.name()), &lp.message));
        }
        out.push(("rview.w4".into(), &self.rview.w4));
        out.push(("rview.w5".into(), &self.rview.w5));
        out.push(("rview.w6".into(), &self.rview.w6));
        out.push(("rview.w7".into(), &self.rview.w7));
        out
    }

    fn dense_layers(&self) -> Vec<(String, &Dense)> {
        let mut v = vec![
            ("visual.hidden".to_string(), &self.visual_hidden),
            ("visual.out".to_string(), &self.visual_out),
        ];
        for (c, d) in self.category_out.iter().enumerate() {
            v.push((format!("visual.category{c}"), d));
        }
        v.push(("textual".into(), &self.textual));
        v.push(("fusion".into(), &self.fusion));
        v
    }

    /// Mutable counterpart of [`Params::named`], same order.
    pub fn named_mut(&mut self) -> Vec<(String, &mut Mat)> {
        let Params {
            user_table,
            outfit_table,
            visual_hidden,
            visual_out,
            category_out,
            textual,
            fusion,
            levels,
            rview,
        } = self;
        let mut out: Vec<(String, &mut Mat)> = vec![
            ("user_table".into(), user_table),
            ("outfit_table".into(), outfit_table),
        ];
        let mut dense: Vec<(String, &mut Dense)> = vec![
            ("visual.hidden".into(), visual_hidden),
            ("visual.out".into(), visual_out),
        ];
        for (c, d) in category_out.iter_mut().enumerate() {
            dense.push((format!("visual.category{c}"), d));
        }
        dense.push(("textual".into(), textual));
        dense.push(("fusion".into(), fusion));
        for (name, d) in dense {
            let Dense { weight, bias } = d;
            out.push((format!("{name}.weight"), weight));
            out.push((format!("{name}.bias"), bias));
        }
        for (lvl, lp) in Level::ALL.iter().zip(levels.iter_mut()) {
            let LevelParams { heads, message } = lp;
            for (k, h) in heads.iter_mut().enumerate() {
                let AttentionHead {
                    transform,
                    attention,
                } = h;
                out.push((format!("{}.head{k}.transform", lvl.name()), transform));
                out.push((format!("{}.head{k}.attention", lvl.name()), attention));
            }
            out.push((format!("{}.message", lvl.name()), message));
        }
        let RViewParams { w4, w5, w6, w7 } = rview;
        out.push(("rview.w4".into(), w4));
        out.push(("rview.w5".into(), w5));
        out.push(("rview.w6".into(), w6));
        out.push(("rview.w7".into(), w7));
        out
    }

    pub fn flat_len(&self) -> usize {
        self.named().iter().map(|(_, m)| m.len()).sum()
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.flat_len());
        for (_, m) in self.named() {
            v.extend_from_slice(m.as_slice());
        }
        v
    }

    pub fn sum_squares(&self) -> f64 {
        self.named().iter().map(|(_, m)| m.sum_squares()).sum()
    }

    pub fn add_assign(&mut self, other: &Params) {
        for ((_, a), (_, b)) in self.named_mut().into_iter().zip(other.named()) {
            a.add_assign(b);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    pub config: ModelConfig,
    pub params: Params,
}

fn xavier(m: &mut Mat, fan_in: usize, fan_out: usize, r: &mut rng::Rng) {
    let s = (6.0 / (fan_in + fan_out) as f64).sqrt();
    for x in m.as_mut_slice() {
        *x = r.random_range(-s..s);
    }
}

/// Deterministic initialization: ID tables ~ N(0, 0.01²), affine weights
/// Glorot-uniform, biases zero.
pub fn init_model(cfg: &ModelConfig, seed: u64) -> Result<ModelState> {
    cfg.validate()?;
    let mut p = Params::zeros(cfg);
    let mut r = rng::stream(seed, "init", 0);
    let normal = Normal::new(0.0, 0.01).expect("valid normal");
    for x in p.user_table.as_mut_slice() {
        *x = normal.sample(&mut r);
    }
    for x in p.outfit_table.as_mut_slice() {
        *x = normal.sample(&mut r);
    }
    for (name, m) in p.named_mut().into_iter().skip(2) {
        if name.ends_with(".bias") {
            continue;
        }
        let (rows, cols) = m.shape();
        // attention vectors are 2d × 1 and act as a 2d → 1 map
        let (fan_in, fan_out) = if name.ends_with(".attention") {
            (rows, 1)
        } else {
            (cols, rows)
        };
        xavier(m, fan_in, fan_out, &mut r);
    }
    Ok(ModelState {
        config: cfg.clone(),
        params: p,
    })
}

/// Reduced and fused embeddings of one item.
#[derive(Debug, Clone, PartialEq)]
pub struct ItemEmbedding {
    /// Reduced visual embedding (32 dims).
    pub visual: Vec<f64>,
    /// Reduced textual embedding (32 dims).
    pub textual: Vec<f64>,
    /// Fused embedding (model dim); the item's initial node embedding.
    pub fused: Vec<f64>,
}

/// Intermediate values of [`fuse_item`] needed for the backward pass.
#[derive(Debug, Clone)]
pub(crate) struct FusionTrace {
    hidden_pre: Vec<f64>,
    hidden: Vec<f64>,
    visual_shared: Vec<f64>,
    concat: Vec<f64>,
}

pub(crate) fn fuse_traced(
    x_v: &[f64],
    x_t: &[f64],
    category: usize,
    m: &ModelState,
) -> Result<(ItemEmbedding, FusionTrace)> {
    let cfg = &m.config;
    if x_v.len() != cfg.visual_dim || x_t.len() != cfg.textual_dim {
        return Err(Error::DimensionMismatch(format!(
            "item features are ({}, {}) but the model expects ({}, {})",
            x_v.len(),
            x_t.len(),
            cfg.visual_dim,
            cfg.textual_dim
        )));
    }
    let p = &m.params;
    let slope = cfg.slope();
    let hidden_pre = p.visual_hidden.forward(x_v);
    let hidden: Vec<f64> = hidden_pre.iter().map(|&z| leaky_relu(z, slope)).collect();
    let visual_shared = p.visual_out.forward(&hidden);
    let visual = match p.category_out.get(category) {
        Some(layer) if cfg.category_heads => layer.forward(&visual_shared),
        _ => visual_shared.clone(),
    };
    let textual = p.textual.forward(x_t);
    let mut concat = visual.clone();
    concat.extend_from_slice(&textual);
    let fused = p.fusion.forward(&concat);
    Ok((
        ItemEmbedding {
            visual,
            textual,
            fused,
        },
        FusionTrace {
            hidden_pre,
            hidden,
            visual_shared,
            concat,
        },
    ))
}

/// Fused embedding of one item from its raw feature vectors.
pub fn fuse_item(x_v: &[f64], x_t: &[f64], category: usize, m: &ModelState) -> Result<ItemEmbedding> {
    fuse_traced(x_v, x_t, category, m).map(|(e, _)| e)
}

/// Accumulates the gradient of the fused embedding into `grad`.
pub(crate) fn fuse_backward(
    x_v: &[f64],
    x_t: &[f64],
    category: usize,
    trace: &FusionTrace,
    d_fused: &[f64],
    m: &ModelState,
    grad: &mut Params,
) {
    let p = &m.params;
    let slope = m.config.slope();
    let d_concat = p.fusion.backward(&trace.concat, d_fused, &mut grad.fusion);
    let (d_visual, d_textual) = d_concat.split_at(REDUCED_DIM);
    p.textual.backward(x_t, d_textual, &mut grad.textual);
    let d_shared = if m.config.category_heads && category < p.category_out.len() {
        p.category_out[category].backward(
            &trace.visual_shared,
            d_visual,
            &mut grad.category_out[category],
        )
    } else {
        d_visual.to_vec()
    };
    let mut d_hidden = p.visual_out.backward(&trace.hidden, &d_shared, &mut grad.visual_out);
    for (dh, &z) in d_hidden.iter_mut().zip(&trace.hidden_pre) {
        *dh *= leaky_relu_grad(z, slope);
    }
    p.visual_hidden.backward(x_v, &d_hidden, &mut grad.visual_hidden);
}
