//! Parameter layout, forward pass and backpropagation of the MLP.
//!
//! All trainable values live in one flat vector, in this order:
//!
//! 1. `W_c`, shape `d_r × d_c`, input-major (row `i` holds the weights of
//!    feature `i`),
//! 2. `b_c`, length `d_c`,
//! 3. for every dense layer: `W`, shape `fan_in × fan_out`, input-major,
//!    followed by `b`, length `fan_out`.
//!
//! The first dense layer consumes `[e; c; ω]` as a list of non-zero entries in
//! ascending index order, so sparse hashed embeddings cost only their
//! non-zeros. Inference from a dense joint vector goes through the same path.

use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, ArrayView2, ArrayViewMut2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use twofloat::TwoFloat;

use super::PredictorModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    /// `x · sigmoid(x)`
    Silu,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Silu => x * sigmoid(x),
        }
    }

    #[inline]
    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Silu => {
                let s = sigmoid(x);
                s + x * s * (1.0 - s)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct LayerSlot {
    pub w: usize,
    pub b: usize,
    pub fan_in: usize,
    pub fan_out: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Layout {
    pub d_e: usize,
    pub d_c: usize,
    pub d_r: usize,
    /// `[d_e + d_c + 1, hidden..., d_q]`
    pub layer_sizes: Vec<usize>,
    pub wc: usize,
    pub bc: usize,
    pub layers: Vec<LayerSlot>,
    pub total: usize,
}

impl Layout {
    pub fn new(d_e: usize, d_c: usize, d_r: usize, hidden: &[usize], d_q: usize) -> Self {
        let mut layer_sizes = Vec::with_capacity(hidden.len() + 2);
        layer_sizes.push(d_e + d_c + 1);
        layer_sizes.extend_from_slice(hidden);
        layer_sizes.push(d_q);
        Self::from_sizes(d_e, d_c, d_r, layer_sizes)
    }

    pub fn from_sizes(d_e: usize, d_c: usize, d_r: usize, layer_sizes: Vec<usize>) -> Self {
        let wc = 0;
        let bc = d_r * d_c;
        let mut offset = bc + d_c;
        let layers = layer_sizes
            .windows(2)
            .map(|w| {
                let slot = LayerSlot {
                    w: offset,
                    b: offset + w[0] * w[1],
                    fan_in: w[0],
                    fan_out: w[1],
                };
                offset = slot.b + w[1];
                slot
            })
            .collect();
        Self {
            d_e,
            d_c,
            d_r,
            layer_sizes,
            wc,
            bc,
            layers,
            total: offset,
        }
    }

    pub fn init_params(&self, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = vec![0.0; self.total];
        let mut fill = |slice: &mut [f64], std: f64| {
            let normal = Normal::new(0.0, std).expect("finite std");
            slice.iter_mut().for_each(|p| *p = normal.sample(&mut rng));
        };
        fill(&mut params[self.wc..self.bc], (1.0 / self.d_r as f64).sqrt());
        let last = self.layers.len() - 1;
        for (l, slot) in self.layers.iter().enumerate() {
            let gain = if l == last { 1.0 } else { 2.0 };
            fill(
                &mut params[slot.w..slot.b],
                (gain / slot.fan_in as f64).sqrt(),
            );
        }
        params
    }

    fn weight<'a>(&self, params: &'a [f64], l: usize) -> ArrayView2<'a, f64> {
        let s = &self.layers[l];
        ArrayView2::from_shape((s.fan_in, s.fan_out), &params[s.w..s.b]).expect("layout")
    }

    fn weight_mut<'a>(&self, params: &'a mut [f64], l: usize) -> ArrayViewMut2<'a, f64> {
        let s = &self.layers[l];
        ArrayViewMut2::from_shape((s.fan_in, s.fan_out), &mut params[s.w..s.b]).expect("layout")
    }
}

/// Training input with the embedding already reduced to its non-zeros.
#[derive(Debug, Clone)]
pub(crate) struct Prepared {
    pub emb_nz: Vec<(usize, f64)>,
    pub z: Vec<f64>,
    pub scale: f64,
    pub target: Vec<f64>,
}

/// Computes `c = W_c z + b_c` and the sparse first-layer input row.
fn input_row(layout: &Layout, params: &[f64], ex: &Prepared) -> (Vec<f64>, Vec<(usize, f64)>) {
    let d_c = layout.d_c;
    let c: Vec<f64> = (0..d_c)
        .map(|j| {
            let mut acc = params[layout.bc + j];
            for (i, z) in ex.z.iter().enumerate() {
                acc += params[layout.wc + i * d_c + j] * z;
            }
            acc
        })
        .collect();
    let mut row = Vec::with_capacity(ex.emb_nz.len() + d_c + 1);
    row.extend_from_slice(&ex.emb_nz);
    row.extend(
        c.iter()
            .enumerate()
            .filter(|(_, v)| **v != 0.0)
            .map(|(j, v)| (layout.d_e + j, *v)),
    );
    if ex.scale != 0.0 {
        row.push((layout.d_e + d_c, ex.scale));
    }
    (c, row)
}

pub(crate) struct ForwardCache {
    pub rows: Vec<Vec<(usize, f64)>>,
    pub z: Vec<Vec<f64>>,
    pub pre: Vec<Array2<f64>>,
    pub act: Vec<Array2<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> &Array2<f64> {
        self.pre.last().expect("at least one layer")
    }
}

fn forward_layers(
    layout: &Layout,
    activation: Activation,
    params: &[f64],
    rows: &[Vec<(usize, f64)>],
) -> (Vec<Array2<f64>>, Vec<Array2<f64>>) {
    let n_layers = layout.layers.len();
    let first = &layout.layers[0];
    let fo = first.fan_out;
    let w1 = &params[first.w..first.b];
    let b1 = &params[first.b..first.b + fo];

    let mut pre0 = Array2::<f64>::zeros((rows.len(), fo));
    for (row, mut out) in rows.iter().zip(pre0.outer_iter_mut()) {
        let acc = out.as_slice_mut().expect("standard layout");
        acc.copy_from_slice(b1);
        for &(k, v) in row {
            let w = &w1[k * fo..(k + 1) * fo];
            for (a, wk) in acc.iter_mut().zip(w) {
                *a += v * wk;
            }
        }
    }

    let mut pre = Vec::with_capacity(n_layers);
    let mut act = Vec::with_capacity(n_layers.saturating_sub(1));
    pre.push(pre0);
    for l in 1..n_layers {
        let input = act_of(activation, &pre[l - 1]);
        let slot = &layout.layers[l];
        let mut out = Array2::<f64>::zeros((rows.len(), slot.fan_out));
        general_mat_mul(1.0, &input, &layout.weight(params, l), 0.0, &mut out);
        let bias = &params[slot.b..slot.b + slot.fan_out];
        for mut r in out.outer_iter_mut() {
            for (x, b) in r.iter_mut().zip(bias) {
                *x += b;
            }
        }
        act.push(input);
        pre.push(out);
    }
    (pre, act)
}

fn act_of(activation: Activation, pre: &Array2<f64>) -> Array2<f64> {
    pre.mapv(|x| activation.apply(x))
}

/// Inference on prebuilt sparse input rows; returns `rows × d_q`.
pub(crate) fn forward_rows(model: &PredictorModel, rows: &[Vec<(usize, f64)>]) -> Array2<f64> {
    let (mut pre, _) = forward_layers(&model.layout, model.activation, &model.params, rows);
    pre.pop().expect("at least one layer")
}

pub(crate) fn forward_batch(
    layout: &Layout,
    activation: Activation,
    params: &[f64],
    batch: &[&Prepared],
) -> ForwardCache {
    let mut rows = Vec::with_capacity(batch.len());
    let mut z = Vec::with_capacity(batch.len());
    for ex in batch {
        let (_, row) = input_row(layout, params, ex);
        rows.push(row);
        z.push(ex.z.clone());
    }
    let (pre, act) = forward_layers(layout, activation, params, &rows);
    ForwardCache { rows, z, pre, act }
}

/// Mean over the batch of the summed squared error.
pub(crate) fn batch_loss(cache: &ForwardCache, batch: &[&Prepared]) -> f64 {
    let out = cache.output();
    let total: f64 = out
        .outer_iter()
        .zip(batch)
        .map(|(o, ex)| o.iter().zip(&ex.target).map(|(p, t)| (p - t).powi(2)).sum::<f64>())
        .sum();
    total / batch.len() as f64
}

/// Accumulates the gradient of [`batch_loss`] into `grad`.
pub(crate) fn backward(
    layout: &Layout,
    activation: Activation,
    params: &[f64],
    cache: &ForwardCache,
    batch: &[&Prepared],
    grad: &mut [f64],
) {
    let scale = 2.0 / batch.len() as f64;
    let out = cache.output();
    let mut delta = Array2::<f64>::zeros(out.raw_dim());
    for ((mut d, o), ex) in delta.outer_iter_mut().zip(out.outer_iter()).zip(batch) {
        for ((d, p), t) in d.iter_mut().zip(o.iter()).zip(&ex.target) {
            *d = scale * (p - t);
        }
    }

    for l in (1..layout.layers.len()).rev() {
        let slot = &layout.layers[l];
        let input = &cache.act[l - 1];
        general_mat_mul(1.0, &input.t(), &delta, 1.0, &mut layout.weight_mut(grad, l));
        let db = delta.sum_axis(Axis(0));
        for (g, v) in grad[slot.b..slot.b + slot.fan_out].iter_mut().zip(db.iter()) {
            *g += v;
        }
        let mut dact = Array2::<f64>::zeros((delta.nrows(), slot.fan_in));
        general_mat_mul(1.0, &delta, &layout.weight(params, l).t(), 0.0, &mut dact);
        let pre = &cache.pre[l - 1];
        ndarray::Zip::from(&mut dact)
            .and(pre)
            .for_each(|d, &x| *d *= activation.derivative(x));
        delta = dact;
    }

    // first layer: sparse weight gradient, then back into W_c and b_c
    let first = &layout.layers[0];
    let fo = first.fan_out;
    let d_c = layout.d_c;
    for (row, d) in cache.rows.iter().zip(delta.outer_iter()) {
        let d = d.as_slice().expect("standard layout");
        for &(k, v) in row {
            let g = &mut grad[first.w + k * fo..first.w + (k + 1) * fo];
            for (gk, dk) in g.iter_mut().zip(d) {
                *gk += v * dk;
            }
        }
        for (gb, dk) in grad[first.b..first.b + fo].iter_mut().zip(d) {
            *gb += dk;
        }
    }
    let w1 = &params[first.w..first.b];
    for (z, d) in cache.z.iter().zip(delta.outer_iter()) {
        let d = d.as_slice().expect("standard layout");
        for j in 0..d_c {
            let k = layout.d_e + j;
            let wrow = &w1[k * fo..(k + 1) * fo];
            let dc: f64 = wrow.iter().zip(d).map(|(w, x)| w * x).sum();
            grad[layout.bc + j] += dc;
            for (i, zi) in z.iter().enumerate() {
                grad[layout.wc + i * d_c + j] += zi * dc;
            }
        }
    }
}

/// `a / b` by long division on the high word; the crate's own quotient
/// loses the low word of its correction term.
fn dd_div(a: TwoFloat, b: TwoFloat) -> TwoFloat {
    let q1 = a.hi() / b.hi();
    let r = a - b * q1;
    let q2 = r.hi() / b.hi();
    let r = r - b * q2;
    let q3 = r.hi() / b.hi();
    TwoFloat::new_add(q1, q2) + q3
}

/// `e^x` in double-double precision, accurate to roughly 1e-29 relative.
///
/// Uses `x = k·ln2 + r` and a Taylor series on `r / 2^10`, squared back ten
/// times.
fn dd_exp(x: TwoFloat) -> TwoFloat {
    if x.hi() < -700.0 {
        return TwoFloat::from(0.0);
    }
    let k = (x.hi() / twofloat::consts::LN_2.hi()).round();
    let r = (x - twofloat::consts::LN_2 * k) / 1024.0;
    let mut term = TwoFloat::from(1.0);
    let mut sum = TwoFloat::from(1.0);
    for n in 1..=16 {
        term = term * r / n as f64;
        sum += term;
    }
    for _ in 0..10 {
        sum = sum * sum;
    }
    sum * 2f64.powi(k as i32)
}

/// Mean squared error of `batch` evaluated in double-double arithmetic, with
/// parameter `perturb.0` shifted by exactly `perturb.1`.
///
/// Plain loops, independent of the batched f64 path. Used as the reference
/// side of the gradient check, where the f64 forward pass is too noisy to
/// resolve small gradients.
pub(crate) fn reference_loss(
    layout: &Layout,
    activation: Activation,
    params: &[f64],
    perturb: (usize, f64),
    batch: &[&Prepared],
) -> TwoFloat {
    let p = |i: usize| {
        let v = TwoFloat::from(params[i]);
        if i == perturb.0 { v + perturb.1 } else { v }
    };
    let act = |x: TwoFloat| match activation {
        Activation::Silu => {
            if x.hi() >= 0.0 {
                dd_div(x, 1.0 + dd_exp(-x))
            } else {
                let e = dd_exp(x);
                dd_div(x * e, 1.0 + e)
            }
        }
    };
    let mut total = TwoFloat::from(0.0);
    for ex in batch {
        let mut x = vec![TwoFloat::from(0.0); layout.layer_sizes[0]];
        for &(i, v) in &ex.emb_nz {
            x[i] = TwoFloat::from(v);
        }
        for j in 0..layout.d_c {
            let mut acc = p(layout.bc + j);
            for (i, &z) in ex.z.iter().enumerate() {
                acc += p(layout.wc + i * layout.d_c + j) * z;
            }
            x[layout.d_e + j] = acc;
        }
        x[layout.d_e + layout.d_c] = TwoFloat::from(ex.scale);
        let last = layout.layers.len() - 1;
        for (l, slot) in layout.layers.iter().enumerate() {
            let mut y: Vec<TwoFloat> = (0..slot.fan_out).map(|o| p(slot.b + o)).collect();
            for (i, xi) in x.iter().enumerate() {
                for (o, yo) in y.iter_mut().enumerate() {
                    *yo += p(slot.w + i * slot.fan_out + o) * *xi;
                }
            }
            x = if l == last { y } else { y.into_iter().map(act).collect() };
        }
        for (o, t) in x.iter().zip(&ex.target) {
            let d = *o - *t;
            total += d * d;
        }
    }
    total / batch.len() as f64
}
