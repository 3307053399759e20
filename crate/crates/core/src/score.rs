//! User–outfit preference and multi-view outfit compatibility.
//!
//! For an outfit with item embeddings `O` (n × d), each of `R` views assigns
//! every item an importance (a softmax across the outfit's items) and a
//! compatibility in (−1, 1):
//!
//! ```text
//! A = row_softmax(W_4 · LeakyReLU(W_5 · Oᵀ))     R × n
//! C = tanh(W_6 · LeakyReLU(W_7 · Oᵀ))            R × n
//! ŝ = (1/R) Σ_r a_rᵀ c_r
//! ```
//!
//! Every map acts on item columns independently, so `ŝ` does not depend on
//! the order of the outfit's items.

use crate::embed::{ModelState, RViewParams};
use crate::error::{Error, Result};
use crate::math::{dot, leaky_relu, leaky_relu_grad, softmax_into, Mat};
use crate::propagate::{GraphContext, PropagationOutput};

/// Preference of a user for an outfit: the inner product of their
/// propagated embeddings. Unbounded; only the order matters.
pub fn rec_score(h_user: &[f64], h_outfit: &[f64]) -> f64 {
    assert_eq!(h_user.len(), h_outfit.len(), "embedding widths differ");
    dot(h_user, h_outfit)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RViewResult {
    /// Per-view item importances; rows sum to 1.
    pub attention: Mat,
    /// Per-view item compatibilities in (−1, 1).
    pub compat: Mat,
    pub score: f64,
}

/// Stacks the given rows of `h` into an outfit matrix.
pub fn outfit_matrix(items: &[usize], h: &Mat) -> Mat {
    let mut o = Mat::zeros(items.len(), h.cols());
    for (r, &i) in items.iter().enumerate() {
        o.row_mut(r).copy_from_slice(h.row(i));
    }
    o
}

fn check(o: &Mat, m: &ModelState) -> Result<()> {
    if o.rows() == 0 {
        return Err(Error::Empty("outfit matrix has no items".into()));
    }
    if o.cols() != m.config.dim {
        return Err(Error::DimensionMismatch(format!(
            "outfit matrix has width {}, model dim is {}",
            o.cols(),
            m.config.dim
        )));
    }
    Ok(())
}

/// `outer · LeakyReLU(inner · oᵀ)` for every item column, plus the hidden
/// pre-activations (v × n).
fn two_layer(o: &Mat, inner: &Mat, outer: &Mat, slope: f64) -> (Mat, Mat) {
    let n = o.rows();
    let mut hidden = Mat::zeros(inner.rows(), n);
    let mut out = Mat::zeros(outer.rows(), n);
    for j in 0..n {
        let h = inner.matvec(o.row(j));
        let l: Vec<f64> = h.iter().map(|&x| leaky_relu(x, slope)).collect();
        let z = outer.matvec(&l);
        for (k, &x) in h.iter().enumerate() {
            hidden.set(k, j, x);
        }
        for (r, &x) in z.iter().enumerate() {
            out.set(r, j, x);
        }
    }
    (hidden, out)
}

/// R × n item importances per view.
pub fn rview_attention(o: &Mat, m: &ModelState) -> Result<Mat> {
    check(o, m)?;
    let rv = &m.params.rview;
    let (_, mut z) = two_layer(o, &rv.w5, &rv.w4, m.config.slope());
    let n = o.rows();
    for r in 0..z.rows() {
        let row = z.row_mut(r);
        if m.config.linear {
            row.fill(1.0 / n as f64);
        } else {
            let logits = row.to_vec();
            softmax_into(&logits, row);
        }
    }
    Ok(z)
}

/// R × n item compatibilities per view.
pub fn rview_compat(o: &Mat, m: &ModelState) -> Result<Mat> {
    check(o, m)?;
    let rv = &m.params.rview;
    let (_, mut z) = two_layer(o, &rv.w7, &rv.w6, m.config.slope());
    if !m.config.linear {
        z.as_mut_slice().iter_mut().for_each(|x| *x = x.tanh());
    }
    Ok(z)
}

/// Mean over views of `a_rᵀ c_r`.
pub fn outfit_compat_score(a: &Mat, c: &Mat) -> Result<f64> {
    if a.shape() != c.shape() {
        return Err(Error::DimensionMismatch(format!(
            "attention map is {:?} but compatibility map is {:?}",
            a.shape(),
            c.shape()
        )));
    }
    if a.rows() == 0 {
        return Err(Error::Empty("no views".into()));
    }
    let total: f64 = (0..a.rows()).map(|r| dot(a.row(r), c.row(r))).sum();
    Ok(total / a.rows() as f64)
}

pub fn rview(o: &Mat, m: &ModelState) -> Result<RViewResult> {
    let attention = rview_attention(o, m)?;
    let compat = rview_compat(o, m)?;
    let score = outfit_compat_score(&attention, &compat)?;
    Ok(RViewResult {
        attention,
        compat,
        score,
    })
}

/// Compatibility of a catalogue outfit, from its propagated item embeddings.
pub fn score_outfit(
    outfit_id: u64,
    ctx: &GraphContext,
    prop: &PropagationOutput,
    m: &ModelState,
) -> Result<f64> {
    let o = ctx
        .index()
        .outfit(outfit_id)
        .ok_or(Error::UnknownOutfit(outfit_id))?;
    let items = &ctx.graph.outfit_items[o];
    Ok(rview(&outfit_matrix(items, &prop.h_item_star), m)?.score)
}

/// Backward of one two-layer map given `d_out` (R × n); returns `dO`
/// contributions added into `d_o`.
fn two_layer_backward(
    o: &Mat,
    inner: &Mat,
    outer: &Mat,
    hidden: &Mat,
    d_out: &Mat,
    slope: f64,
    g_inner: &mut Mat,
    g_outer: &mut Mat,
    d_o: &mut Mat,
) {
    for j in 0..o.rows() {
        let h: Vec<f64> = (0..hidden.rows()).map(|k| hidden.get(k, j)).collect();
        let l: Vec<f64> = h.iter().map(|&x| leaky_relu(x, slope)).collect();
        let dz: Vec<f64> = (0..d_out.rows()).map(|r| d_out.get(r, j)).collect();
        g_outer.add_outer(1.0, &dz, &l);
        let mut dh = outer.matvec_t(&dz);
        for (g, &x) in dh.iter_mut().zip(&h) {
            *g *= leaky_relu_grad(x, slope);
        }
        g_inner.add_outer(1.0, &dh, o.row(j));
        let dx = inner.matvec_t(&dh);
        for (a, b) in d_o.row_mut(j).iter_mut().zip(&dx) {
            *a += b;
        }
    }
}

/// Accumulates `d_score · ∂ŝ/∂θ` into `grad` and returns `d_score · ∂ŝ/∂O`.
pub(crate) fn rview_backward(o: &Mat, m: &ModelState, d_score: f64, grad: &mut RViewParams) -> Mat {
    let rv = &m.params.rview;
    let slope = m.config.slope();
    let linear = m.config.linear;
    let n = o.rows();
    let views = rv.w4.rows();
    let (h5, z4) = two_layer(o, &rv.w5, &rv.w4, slope);
    let (h7, z6) = two_layer(o, &rv.w7, &rv.w6, slope);
    let mut a = z4;
    for r in 0..views {
        let row = a.row_mut(r);
        if linear {
            row.fill(1.0 / n as f64);
        } else {
            let logits = row.to_vec();
            softmax_into(&logits, row);
        }
    }
    let c = if linear {
        z6
    } else {
        let mut c = z6;
        c.as_mut_slice().iter_mut().for_each(|x| *x = x.tanh());
        c
    };

    let scale = d_score / views as f64;
    let mut d_z4 = Mat::zeros(views, n);
    let mut d_z6 = Mat::zeros(views, n);
    for r in 0..views {
        let (ar, cr) = (a.row(r), c.row(r));
        if !linear {
            let mean = dot(ar, cr);
            for j in 0..n {
                d_z4.set(r, j, scale * ar[j] * (cr[j] - mean));
            }
        }
        for j in 0..n {
            let dc = scale * ar[j];
            d_z6.set(r, j, if linear { dc } else { dc * (1.0 - cr[j] * cr[j]) });
        }
    }

    let mut d_o = Mat::zeros(n, o.cols());
    if !linear {
        two_layer_backward(o, &rv.w5, &rv.w4, &h5, &d_z4, slope, &mut grad.w5, &mut grad.w4, &mut d_o);
    }
    two_layer_backward(o, &rv.w7, &rv.w6, &h7, &d_z6, slope, &mut grad.w7, &mut grad.w6, &mut d_o);
    d_o
}
