//! Pre-LN transformer encoder with manual backpropagation.

use ndarray::{s, Array1, Array2, ArrayView1, Axis, Zip};
use rand::Rng;

use super::{Model, ModelError, Parameters};
use crate::seed;

const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_A: f64 = 0.044_715;

#[derive(Clone, Copy, Debug, Default)]
pub struct EncoderOptions {
    /// Training-mode dropout with masks drawn from this seed.
    pub dropout_seed: Option<u64>,
    /// Test hook: replace attention weights by 1/n.
    pub force_uniform_attention: bool,
}

#[derive(Clone, Debug)]
struct LnCache {
    xhat: Array2<f64>,
    rstd: Array1<f64>,
}

#[derive(Clone, Debug)]
struct LayerCache {
    ln1: LnCache,
    a: Array2<f64>,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    attn: Vec<Array2<f64>>,
    o: Array2<f64>,
    attn_mask: Option<Array2<f64>>,
    ln2: LnCache,
    b: Array2<f64>,
    u: Array2<f64>,
    g: Array2<f64>,
}

/// Forward activations kept for the backward pass.
#[derive(Clone, Debug)]
pub struct EncoderCache {
    ids: Vec<u32>,
    emb_mask: Option<Array2<f64>>,
    layers: Vec<LayerCache>,
    final_ln: Option<LnCache>,
    force_uniform: bool,
    /// Per-token output states, one row per token.
    pub hidden: Array2<f64>,
}

fn layer_norm(x: &Array2<f64>, g: &Array1<f64>, b: &Array1<f64>) -> (Array2<f64>, LnCache) {
    let d = x.ncols() as f64;
    let mut xhat = x.clone();
    let mut rstd = Array1::zeros(x.nrows());
    for (mut row, r) in xhat.rows_mut().into_iter().zip(rstd.iter_mut()) {
        let mean = row.sum() / d;
        row.mapv_inplace(|v| v - mean);
        let var = row.iter().map(|v| v * v).sum::<f64>() / d;
        *r = 1.0 / (var + LN_EPS).sqrt();
        row *= *r;
    }
    let y = &xhat * g + b;
    (y, LnCache { xhat, rstd })
}

fn layer_norm_backward(
    dy: &Array2<f64>,
    cache: &LnCache,
    g: &Array1<f64>,
    dg: &mut Array1<f64>,
    db: &mut Array1<f64>,
) -> Array2<f64> {
    *dg += &(dy * &cache.xhat).sum_axis(Axis(0));
    *db += &dy.sum_axis(Axis(0));
    let d = dy.ncols() as f64;
    let dxhat = dy * g;
    let mut dx = Array2::zeros(dy.raw_dim());
    for i in 0..dy.nrows() {
        let dh = dxhat.row(i);
        let xh = cache.xhat.row(i);
        let mean_dh = dh.sum() / d;
        let mean_dhx = dh.dot(&xh) / d;
        let r = cache.rstd[i];
        Zip::from(dx.row_mut(i)).and(dh).and(xh).for_each(|o, &a, &x| *o = r * (a - mean_dh - x * mean_dhx));
    }
    dx
}

fn gelu(u: f64) -> f64 {
    0.5 * u * (1.0 + (GELU_C * (u + GELU_A * u * u * u)).tanh())
}

fn gelu_grad(u: f64) -> f64 {
    let t = (GELU_C * (u + GELU_A * u * u * u)).tanh();
    0.5 * (1.0 + t) + 0.5 * u * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * u * u)
}

fn softmax_rows(s: &mut Array2<f64>) {
    for mut row in s.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row /= sum;
    }
}

fn dropout_mask(seed_value: u64, slot: u64, shape: (usize, usize), rate: f64) -> Array2<f64> {
    let mut rng = seed::rng(seed::derive_indexed(seed_value, "dropout", slot));
    let keep = 1.0 / (1.0 - rate);
    Array2::from_shape_simple_fn(shape, || if rng.random::<f64>() < rate { 0.0 } else { keep })
}

fn add_bias(mut m: Array2<f64>, b: &Array1<f64>) -> Array2<f64> {
    m += b;
    m
}

fn accumulate_outer(dw: &mut Array2<f64>, input: &Array2<f64>, dout: &Array2<f64>) {
    ndarray::linalg::general_mat_mul(1.0, &input.t(), dout, 1.0, dw);
}

impl Model {
    /// Runs the encoder over one token sequence.
    pub fn encode(&self, ids: &[u32], opts: EncoderOptions) -> Result<EncoderCache, ModelError> {
        let cfg = &self.config;
        let p = &self.params;
        let n = ids.len();
        if n > cfg.max_positions {
            return Err(ModelError::SequenceTooLong { len: n, max: cfg.max_positions });
        }
        if let Some(&id) = ids.iter().find(|&&id| id as usize >= cfg.vocab_size) {
            return Err(ModelError::TokenOutOfRange { id, vocab: cfg.vocab_size });
        }
        self.count_encode();
        let d = cfg.dim;
        let dropout = opts.dropout_seed.filter(|_| cfg.dropout > 0.0);

        let mut x = Array2::zeros((n, d));
        for (i, &id) in ids.iter().enumerate() {
            let row = &p.tok_emb.row(id as usize) + &p.pos_emb.row(i);
            x.row_mut(i).assign(&row);
        }
        let emb_mask = dropout.map(|s| dropout_mask(s, 0, (n, d), cfg.dropout));
        if let Some(m) = &emb_mask {
            x *= m;
        }

        let heads = cfg.heads;
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut layers = Vec::with_capacity(cfg.layers);
        for (li, lp) in p.layers.iter().enumerate() {
            let (a, ln1) = layer_norm(&x, &lp.ln1_g, &lp.ln1_b);
            let q = add_bias(a.dot(&lp.wq), &lp.bq);
            let k = add_bias(a.dot(&lp.wk), &lp.bk);
            let v = add_bias(a.dot(&lp.wv), &lp.bv);
            let mut o = Array2::zeros((n, d));
            let mut attn = Vec::with_capacity(heads);
            for h in 0..heads {
                let cols = s![.., h * dh..(h + 1) * dh];
                let weights = if opts.force_uniform_attention {
                    Array2::from_elem((n, n), 1.0 / n as f64)
                } else {
                    let mut sc = q.slice(cols).dot(&k.slice(cols).t()) * scale;
                    softmax_rows(&mut sc);
                    sc
                };
                o.slice_mut(cols).assign(&weights.dot(&v.slice(cols)));
                attn.push(weights);
            }
            let mut z = add_bias(o.dot(&lp.wo), &lp.bo);
            let attn_mask = dropout.map(|s| dropout_mask(s, 1 + li as u64, (n, d), cfg.dropout));
            if let Some(m) = &attn_mask {
                z *= m;
            }
            x += &z;
            let (b, ln2) = layer_norm(&x, &lp.ln2_g, &lp.ln2_b);
            let u = add_bias(b.dot(&lp.w1), &lp.b1);
            let g = u.mapv(gelu);
            let f = add_bias(g.dot(&lp.w2), &lp.b2);
            x += &f;
            layers.push(LayerCache { ln1, a, q, k, v, attn, o, attn_mask, ln2, b, u, g });
        }
        let (hidden, final_ln) = if cfg.layers > 0 {
            let (y, c) = layer_norm(&x, &p.lnf_g, &p.lnf_b);
            (y, Some(c))
        } else {
            (x, None)
        };
        Ok(EncoderCache {
            ids: ids.to_vec(),
            emb_mask,
            layers,
            final_ln,
            force_uniform: opts.force_uniform_attention,
            hidden,
        })
    }

    /// Accumulates into `grads` the gradient of a scalar whose derivative
    /// with respect to the hidden states is `d_hidden`.
    pub fn encode_backward(&self, cache: &EncoderCache, d_hidden: &Array2<f64>, grads: &mut Parameters) {
        let p = &self.params;
        let cfg = &self.config;
        let mut dx = match &cache.final_ln {
            Some(c) => layer_norm_backward(d_hidden, c, &p.lnf_g, &mut grads.lnf_g, &mut grads.lnf_b),
            None => d_hidden.clone(),
        };
        let heads = cfg.heads;
        let dh = cfg.dim / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        for (li, lc) in cache.layers.iter().enumerate().rev() {
            let lp = &p.layers[li];
            let gl = &mut grads.layers[li];

            // feed-forward branch
            accumulate_outer(&mut gl.w2, &lc.g, &dx);
            gl.b2 += &dx.sum_axis(Axis(0));
            let mut du = dx.dot(&lp.w2.t());
            Zip::from(&mut du).and(&lc.u).for_each(|d, &u| *d *= gelu_grad(u));
            accumulate_outer(&mut gl.w1, &lc.b, &du);
            gl.b1 += &du.sum_axis(Axis(0));
            let db = du.dot(&lp.w1.t());
            dx += &layer_norm_backward(&db, &lc.ln2, &lp.ln2_g, &mut gl.ln2_g, &mut gl.ln2_b);

            // attention branch
            let mut dz = dx.clone();
            if let Some(m) = &lc.attn_mask {
                dz *= m;
            }
            accumulate_outer(&mut gl.wo, &lc.o, &dz);
            gl.bo += &dz.sum_axis(Axis(0));
            let d_o = dz.dot(&lp.wo.t());
            let mut dq = Array2::zeros(lc.q.raw_dim());
            let mut dk = Array2::zeros(lc.k.raw_dim());
            let mut dv = Array2::zeros(lc.v.raw_dim());
            for h in 0..heads {
                let cols = s![.., h * dh..(h + 1) * dh];
                let a = &lc.attn[h];
                let doh = d_o.slice(cols);
                dv.slice_mut(cols).assign(&a.t().dot(&doh));
                if cache.force_uniform {
                    continue;
                }
                let da = doh.dot(&lc.v.slice(cols).t());
                let mut ds = &da * a;
                for (mut row, arow) in ds.rows_mut().into_iter().zip(a.rows()) {
                    let dot: f64 = row.sum();
                    Zip::from(&mut row).and(arow).for_each(|d, &w| *d -= w * dot);
                }
                ds *= scale;
                dq.slice_mut(cols).assign(&ds.dot(&lc.k.slice(cols)));
                dk.slice_mut(cols).assign(&ds.t().dot(&lc.q.slice(cols)));
            }
            let mut da = Array2::zeros(lc.a.raw_dim());
            for (w, dw, db, d) in [
                (&lp.wq, &mut gl.wq, &mut gl.bq, &dq),
                (&lp.wk, &mut gl.wk, &mut gl.bk, &dk),
                (&lp.wv, &mut gl.wv, &mut gl.bv, &dv),
            ] {
                accumulate_outer(dw, &lc.a, d);
                *db += &d.sum_axis(Axis(0));
                da += &d.dot(&w.t());
            }
            dx += &layer_norm_backward(&da, &lc.ln1, &lp.ln1_g, &mut gl.ln1_g, &mut gl.ln1_b);
        }
        if let Some(m) = &cache.emb_mask {
            dx *= m;
        }
        for (i, &id) in cache.ids.iter().enumerate() {
            let row: ArrayView1<f64> = dx.row(i);
            let mut e = grads.tok_emb.row_mut(id as usize);
            e += &row;
            let mut pos = grads.pos_emb.row_mut(i);
            pos += &row;
        }
    }
}
