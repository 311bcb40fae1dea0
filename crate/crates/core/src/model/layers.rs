//! Forward and backward passes for the encoder building blocks. Backward
//! functions accumulate parameter gradients with `+=` so shared weights can
//! be visited once per segment and per example.

use ndarray::{s, Array2, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::params::{Encoder, EncoderLayer, Linear, Norm};

pub const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

pub fn gelu(u: &Array2<f64>) -> Array2<f64> {
    u.mapv(|x| 0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh()))
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

pub fn gelu_back(u: &Array2<f64>, dy: &Array2<f64>) -> Array2<f64> {
    let mut dx = dy.clone();
    dx.zip_mut_with(u, |d, &x| *d *= gelu_grad(x));
    dx
}

pub fn linear(x: &Array2<f64>, l: &Linear) -> Array2<f64> {
    x.dot(&l.w) + &l.b
}

pub fn linear_back(x: &Array2<f64>, dy: &Array2<f64>, l: &Linear, g: &mut Linear) -> Array2<f64> {
    g.w += &x.t().dot(dy);
    g.b += &dy.sum_axis(Axis(0)).insert_axis(Axis(0));
    dy.dot(&l.w.t())
}

pub struct NormCache {
    xhat: Array2<f64>,
    rstd: Vec<f64>,
}

pub fn layer_norm(x: &Array2<f64>, n: &Norm) -> (Array2<f64>, NormCache) {
    let d = x.ncols() as f64;
    let mut xhat = x.clone();
    let mut rstd = Vec::with_capacity(x.nrows());
    for mut row in xhat.rows_mut() {
        let mu = row.sum() / d;
        row.mapv_inplace(|v| v - mu);
        let var = row.iter().map(|v| v * v).sum::<f64>() / d;
        let r = 1.0 / (var + LN_EPS).sqrt();
        row.mapv_inplace(|v| v * r);
        rstd.push(r);
    }
    let y = &xhat * &n.gain + &n.bias;
    (y, NormCache { xhat, rstd })
}

pub fn layer_norm_back(dy: &Array2<f64>, c: &NormCache, n: &Norm, g: &mut Norm) -> Array2<f64> {
    g.gain += &(dy * &c.xhat).sum_axis(Axis(0)).insert_axis(Axis(0));
    g.bias += &dy.sum_axis(Axis(0)).insert_axis(Axis(0));
    let dxhat = dy * &n.gain;
    let d = dy.ncols() as f64;
    let mut dx = Array2::zeros(dy.raw_dim());
    for (i, mut row) in dx.rows_mut().into_iter().enumerate() {
        let dh = dxhat.row(i);
        let xh = c.xhat.row(i);
        let m1 = dh.sum() / d;
        let m2 = dh.dot(&xh) / d;
        for j in 0..row.len() {
            row[j] = c.rstd[i] * (dh[j] - m1 - xh[j] * m2);
        }
    }
    dx
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows(x: &mut Array2<f64>) {
    for mut row in x.rows_mut() {
        let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - m).exp());
        let s = row.sum();
        row.mapv_inplace(|v| v / s);
    }
}

/// Scaled dot-product attention per head; returns concatenated head outputs
/// and each head's probability matrix.
pub fn attention(q: &Array2<f64>, k: &Array2<f64>, v: &Array2<f64>, heads: usize) -> (Array2<f64>, Vec<Array2<f64>>) {
    let d = q.ncols();
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut out = Array2::zeros(q.raw_dim());
    let mut probs = Vec::with_capacity(heads);
    for h in 0..heads {
        let cols = s![.., h * dh..(h + 1) * dh];
        let mut a = q.slice(cols).dot(&k.slice(cols).t());
        a.mapv_inplace(|x| x * scale);
        softmax_rows(&mut a);
        out.slice_mut(cols).assign(&a.dot(&v.slice(cols)));
        probs.push(a);
    }
    (out, probs)
}

pub fn attention_back(
    dout: &Array2<f64>,
    q: &Array2<f64>,
    k: &Array2<f64>,
    v: &Array2<f64>,
    probs: &[Array2<f64>],
) -> (Array2<f64>, Array2<f64>, Array2<f64>) {
    let heads = probs.len();
    let dh = q.ncols() / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut dq = Array2::zeros(q.raw_dim());
    let mut dk = Array2::zeros(k.raw_dim());
    let mut dv = Array2::zeros(v.raw_dim());
    for (h, a) in probs.iter().enumerate() {
        let cols = s![.., h * dh..(h + 1) * dh];
        let do_h = dout.slice(cols);
        let da = do_h.dot(&v.slice(cols).t());
        dv.slice_mut(cols).assign(&a.t().dot(&do_h));
        let mut ds = &da * a;
        for (mut row, arow) in ds.rows_mut().into_iter().zip(a.rows()) {
            let dot = row.sum();
            row.zip_mut_with(&arow, |x, &p| *x -= p * dot);
        }
        ds.mapv_inplace(|x| x * scale);
        dq.slice_mut(cols).assign(&ds.dot(&k.slice(cols)));
        dk.slice_mut(cols).assign(&ds.t().dot(&q.slice(cols)));
    }
    (dq, dk, dv)
}

/// Inverted dropout. With no rng (eval mode) or `p == 0` the input passes
/// through untouched.
pub struct Dropout<'a> {
    pub p: f64,
    pub rng: Option<&'a mut ChaCha8Rng>,
}

impl Dropout<'_> {
    pub fn eval() -> Dropout<'static> {
        Dropout { p: 0.0, rng: None }
    }

    pub fn apply(&mut self, x: &mut Array2<f64>) -> Option<Array2<f64>> {
        let rng = self.rng.as_mut()?;
        if self.p == 0.0 {
            return None;
        }
        let keep = 1.0 - self.p;
        let mask = Array2::from_shape_simple_fn(x.raw_dim(), || {
            if rng.gen::<f64>() < keep {
                1.0 / keep
            } else {
                0.0
            }
        });
        *x *= &mask;
        Some(mask)
    }
}

fn undrop(dy: &Array2<f64>, mask: &Option<Array2<f64>>) -> Array2<f64> {
    match mask {
        Some(m) => dy * m,
        None => dy.clone(),
    }
}

pub struct LayerCache {
    ln1: NormCache,
    h: Array2<f64>,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    probs: Vec<Array2<f64>>,
    o: Array2<f64>,
    drop1: Option<Array2<f64>>,
    ln2: NormCache,
    h2: Array2<f64>,
    u: Array2<f64>,
    g: Array2<f64>,
    drop2: Option<Array2<f64>>,
}

impl LayerCache {
    pub fn probs(&self) -> &[Array2<f64>] {
        &self.probs
    }
}

/// Pre-norm block: `x + Attn(LN(x))`, then `x + FFN(LN(x))`.
pub fn layer_forward(x: &Array2<f64>, l: &EncoderLayer, heads: usize, drop: &mut Dropout) -> (Array2<f64>, LayerCache) {
    let (h, ln1) = layer_norm(x, &l.ln1);
    let q = linear(&h, &l.wq);
    let k = linear(&h, &l.wk);
    let v = linear(&h, &l.wv);
    let (o, probs) = attention(&q, &k, &v, heads);
    let mut a = linear(&o, &l.wo);
    let drop1 = drop.apply(&mut a);
    let x1 = x + &a;
    let (h2, ln2) = layer_norm(&x1, &l.ln2);
    let u = linear(&h2, &l.ff1);
    let g = gelu(&u);
    let mut f = linear(&g, &l.ff2);
    let drop2 = drop.apply(&mut f);
    let x2 = x1 + &f;
    (x2, LayerCache { ln1, h, q, k, v, probs, o, drop1, ln2, h2, u, g, drop2 })
}

pub fn layer_backward(dx2: &Array2<f64>, c: &LayerCache, l: &EncoderLayer, g: &mut EncoderLayer) -> Array2<f64> {
    let df = undrop(dx2, &c.drop2);
    let dg = linear_back(&c.g, &df, &l.ff2, &mut g.ff2);
    let du = gelu_back(&c.u, &dg);
    let dh2 = linear_back(&c.h2, &du, &l.ff1, &mut g.ff1);
    let dx1 = dx2 + &layer_norm_back(&dh2, &c.ln2, &l.ln2, &mut g.ln2);
    let da = undrop(&dx1, &c.drop1);
    let do_ = linear_back(&c.o, &da, &l.wo, &mut g.wo);
    let (dq, dk, dv) = attention_back(&do_, &c.q, &c.k, &c.v, &c.probs);
    let mut dh = linear_back(&c.h, &dq, &l.wq, &mut g.wq);
    dh += &linear_back(&c.h, &dk, &l.wk, &mut g.wk);
    dh += &linear_back(&c.h, &dv, &l.wv, &mut g.wv);
    dx1 + layer_norm_back(&dh, &c.ln1, &l.ln1, &mut g.ln1)
}

pub struct EncoderCache {
    pub layers: Vec<LayerCache>,
    ln_f: NormCache,
}

pub fn encoder_forward(x: Array2<f64>, e: &Encoder, heads: usize, drop: &mut Dropout) -> (Array2<f64>, EncoderCache) {
    let mut x = x;
    let mut layers = Vec::with_capacity(e.layers.len());
    for l in &e.layers {
        let (y, c) = layer_forward(&x, l, heads, drop);
        layers.push(c);
        x = y;
    }
    let (y, ln_f) = layer_norm(&x, &e.ln_f);
    (y, EncoderCache { layers, ln_f })
}

pub fn encoder_backward(dy: &Array2<f64>, c: &EncoderCache, e: &Encoder, g: &mut Encoder) -> Array2<f64> {
    let mut dx = layer_norm_back(dy, &c.ln_f, &e.ln_f, &mut g.ln_f);
    for ((lc, l), lg) in c.layers.iter().zip(&e.layers).zip(g.layers.iter_mut()).rev() {
        dx = layer_backward(&dx, lc, l, lg);
    }
    dx
}
