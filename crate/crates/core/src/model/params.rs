use ndarray::{Array1, Array2};
use rand::Rng;

use super::ModelConfig;
use crate::seed;
use crate::technique::NUM_TECHNIQUES;

const INIT_RANGE: f64 = 0.05;

#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams {
    pub ln1_g: Array1<f64>,
    pub ln1_b: Array1<f64>,
    pub wq: Array2<f64>,
    pub bq: Array1<f64>,
    pub wk: Array2<f64>,
    pub bk: Array1<f64>,
    pub wv: Array2<f64>,
    pub bv: Array1<f64>,
    pub wo: Array2<f64>,
    pub bo: Array1<f64>,
    pub ln2_g: Array1<f64>,
    pub ln2_b: Array1<f64>,
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
}

/// All trainable weights. Gradients use the same type.
#[derive(Clone, Debug, PartialEq)]
pub struct Parameters {
    pub tok_emb: Array2<f64>,
    pub pos_emb: Array2<f64>,
    pub layers: Vec<LayerParams>,
    pub lnf_g: Array1<f64>,
    pub lnf_b: Array1<f64>,
    /// One row w_c per technique.
    pub flat: Array2<f64>,
    /// One matrix per internal node, one row w_{k,i} per outgoing edge.
    pub aux: Vec<Array2<f64>>,
}

pub type Gradients = Parameters;

impl LayerParams {
    fn zeros(d: usize, f: usize) -> Self {
        let m = |r, c| Array2::zeros((r, c));
        let v = |n| Array1::zeros(n);
        LayerParams {
            ln1_g: v(d),
            ln1_b: v(d),
            wq: m(d, d),
            bq: v(d),
            wk: m(d, d),
            bk: v(d),
            wv: m(d, d),
            bv: v(d),
            wo: m(d, d),
            bo: v(d),
            ln2_g: v(d),
            ln2_b: v(d),
            w1: m(d, f),
            b1: v(f),
            w2: m(f, d),
            b2: v(d),
        }
    }
}

impl Parameters {
    pub fn zeros(cfg: &ModelConfig) -> Self {
        let d = cfg.dim;
        Parameters {
            tok_emb: Array2::zeros((cfg.vocab_size, d)),
            pos_emb: Array2::zeros((cfg.max_positions, d)),
            layers: (0..cfg.layers).map(|_| LayerParams::zeros(d, cfg.ffn_dim)).collect(),
            lnf_g: Array1::zeros(d),
            lnf_b: Array1::zeros(d),
            flat: Array2::zeros((NUM_TECHNIQUES, d)),
            aux: cfg.classifier_arities.iter().map(|&c| Array2::zeros((c, d))).collect(),
        }
    }

    /// Seeded init: embeddings, projections and heads uniform in
    /// [-0.05, 0.05]; layer-norm gains 1; biases 0.
    pub fn init(cfg: &ModelConfig, seed_value: u64) -> Self {
        let mut p = Self::zeros(cfg);
        let mut rng = seed::rng(seed::derive(seed_value, "init"));
        let mut fill = |a: &mut [f64]| a.iter_mut().for_each(|x| *x = rng.random_range(-INIT_RANGE..=INIT_RANGE));
        fill(p.tok_emb.as_slice_mut().unwrap());
        fill(p.pos_emb.as_slice_mut().unwrap());
        for l in &mut p.layers {
            for w in [&mut l.wq, &mut l.wk, &mut l.wv, &mut l.wo, &mut l.w1, &mut l.w2] {
                fill(w.as_slice_mut().unwrap());
            }
            l.ln1_g.fill(1.0);
            l.ln2_g.fill(1.0);
        }
        p.lnf_g.fill(1.0);
        fill(p.flat.as_slice_mut().unwrap());
        for a in &mut p.aux {
            fill(a.as_slice_mut().unwrap());
        }
        p
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.for_each_mut(|_, t| t.fill(0.0));
        z
    }

    /// Visits every tensor in declared order as (name, flat data).
    pub fn for_each(&self, mut f: impl FnMut(&str, &[f64])) {
        self.visit(&mut |name, t| f(name, t));
    }

    fn visit(&self, f: &mut dyn FnMut(&str, &[f64])) {
        f("tok_emb", self.tok_emb.as_slice().unwrap());
        f("pos_emb", self.pos_emb.as_slice().unwrap());
        for (i, l) in self.layers.iter().enumerate() {
            for (n, t) in l.named() {
                f(&format!("layer{i}.{n}"), t);
            }
        }
        f("lnf_g", self.lnf_g.as_slice().unwrap());
        f("lnf_b", self.lnf_b.as_slice().unwrap());
        f("flat", self.flat.as_slice().unwrap());
        for (k, a) in self.aux.iter().enumerate() {
            f(&format!("aux{k}"), a.as_slice().unwrap());
        }
    }

    /// Mutable counterpart of [`Parameters::for_each`], same order.
    pub fn for_each_mut(&mut self, mut f: impl FnMut(&str, &mut [f64])) {
        f("tok_emb", self.tok_emb.as_slice_mut().unwrap());
        f("pos_emb", self.pos_emb.as_slice_mut().unwrap());
        for (i, l) in self.layers.iter_mut().enumerate() {
            for (n, t) in l.named_mut() {
                f(&format!("layer{i}.{n}"), t);
            }
        }
        f("lnf_g", self.lnf_g.as_slice_mut().unwrap());
        f("lnf_b", self.lnf_b.as_slice_mut().unwrap());
        f("flat", self.flat.as_slice_mut().unwrap());
        for (k, a) in self.aux.iter_mut().enumerate() {
            f(&format!("aux{k}"), a.as_slice_mut().unwrap());
        }
    }

    /// Mutable flat views of every tensor, in declared order.
    pub fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = vec![self.tok_emb.as_slice_mut().unwrap(), self.pos_emb.as_slice_mut().unwrap()];
        for l in &mut self.layers {
            out.extend(l.named_mut().into_iter().map(|(_, t)| t));
        }
        out.push(self.lnf_g.as_slice_mut().unwrap());
        out.push(self.lnf_b.as_slice_mut().unwrap());
        out.push(self.flat.as_slice_mut().unwrap());
        out.extend(self.aux.iter_mut().map(|a| a.as_slice_mut().unwrap()));
        out
    }

    pub fn slices(&self) -> Vec<&[f64]> {
        let mut out = Vec::new();
        out.push(self.tok_emb.as_slice().unwrap());
        out.push(self.pos_emb.as_slice().unwrap());
        for l in &self.layers {
            out.extend(l.named().into_iter().map(|(_, t)| t));
        }
        out.push(self.lnf_g.as_slice().unwrap());
        out.push(self.lnf_b.as_slice().unwrap());
        out.push(self.flat.as_slice().unwrap());
        out.extend(self.aux.iter().map(|a| a.as_slice().unwrap()));
        out
    }

    pub fn num_scalars(&self) -> usize {
        self.slices().iter().map(|s| s.len()).sum()
    }

    /// Number of scalars in the flat and auxiliary heads.
    pub fn head_scalars(&self) -> usize {
        self.flat.len() + self.aux.iter().map(|a| a.len()).sum::<usize>()
    }

    pub fn is_finite(&self) -> bool {
        self.slices().iter().all(|s| s.iter().all(|x| x.is_finite()))
    }

    /// self += scale * other
    pub fn add_scaled(&mut self, other: &Parameters, scale: f64) {
        let others = other.slices();
        for (dst, src) in self.slices_mut().into_iter().zip(others) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += scale * s;
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        self.for_each_mut(|_, t| t.iter_mut().for_each(|x| *x *= factor));
    }
}

impl LayerParams {
    fn named(&self) -> Vec<(&'static str, &[f64])> {
        vec![
            ("ln1_g", self.ln1_g.as_slice().unwrap()),
            ("ln1_b", self.ln1_b.as_slice().unwrap()),
            ("wq", self.wq.as_slice().unwrap()),
            ("bq", self.bq.as_slice().unwrap()),
            ("wk", self.wk.as_slice().unwrap()),
            ("bk", self.bk.as_slice().unwrap()),
            ("wv", self.wv.as_slice().unwrap()),
            ("bv", self.bv.as_slice().unwrap()),
            ("wo", self.wo.as_slice().unwrap()),
            ("bo", self.bo.as_slice().unwrap()),
            ("ln2_g", self.ln2_g.as_slice().unwrap()),
            ("ln2_b", self.ln2_b.as_slice().unwrap()),
            ("w1", self.w1.as_slice().unwrap()),
            ("b1", self.b1.as_slice().unwrap()),
            ("w2", self.w2.as_slice().unwrap()),
            ("b2", self.b2.as_slice().unwrap()),
        ]
    }

    fn named_mut(&mut self) -> Vec<(&'static str, &mut [f64])> {
        vec![
            ("ln1_g", self.ln1_g.as_slice_mut().unwrap()),
            ("ln1_b", self.ln1_b.as_slice_mut().unwrap()),
            ("wq", self.wq.as_slice_mut().unwrap()),
            ("bq", self.bq.as_slice_mut().unwrap()),
            ("wk", self.wk.as_slice_mut().unwrap()),
            ("bk", self.bk.as_slice_mut().unwrap()),
            ("wv", self.wv.as_slice_mut().unwrap()),
            ("bv", self.bv.as_slice_mut().unwrap()),
            ("wo", self.wo.as_slice_mut().unwrap()),
            ("bo", self.bo.as_slice_mut().unwrap()),
            ("ln2_g", self.ln2_g.as_slice_mut().unwrap()),
            ("ln2_b", self.ln2_b.as_slice_mut().unwrap()),
            ("w1", self.w1.as_slice_mut().unwrap()),
            ("b1", self.b1.as_slice_mut().unwrap()),
            ("w2", self.w2.as_slice_mut().unwrap()),
            ("b2", self.b2.as_slice_mut().unwrap()),
        ]
    }
}
