//! Factor-augmented temporal graph convolution: LSTM embeddings, attention-weighted
//! hypergraph aggregation and a linear head.
//!
//! LSTM gate weights are stored stacked: `w_x` is `P x 4d`, `w_h` is `d x 4d` and `b`
//! is `1 x 4d`, with column blocks in gate order (z, i, f, o).

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::FeatureTensor;
use crate::error::{Error, Result};
use crate::hypergraph::Hypergraph;
use crate::math::tensor::sigmoid;
use crate::math::{Tape, Tensor, Var};

pub const W_X: usize = 0;
pub const W_H: usize = 1;
pub const B_LSTM: usize = 2;
pub const W5: usize = 3;
pub const B5: usize = 4;
pub const W6: usize = 5;
pub const B6: usize = 6;
pub const PARAM_NAMES: [&str; 7] = ["w_x", "w_h", "b", "w5", "b5", "w6", "b6"];

/// Parameter ids grouped as LSTM, attention and head.
pub const PARAM_GROUPS: [(&str, &[usize]); 3] = [
    ("lstm", &[W_X, W_H, B_LSTM]),
    ("tgc", &[W5, B5]),
    ("head", &[W6, B6]),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dims {
    pub n_stocks: usize,
    pub n_factors: usize,
    pub n_relations: usize,
    pub n_features: usize,
    pub lags: usize,
    pub hidden: usize,
}

impl Dims {
    pub fn n_entities(&self) -> usize {
        self.n_stocks + self.n_factors
    }

    pub fn attention_width(&self) -> usize {
        2 * self.hidden + self.n_relations + self.n_factors
    }

    pub fn param_shape(&self, id: usize) -> [usize; 2] {
        let (p, d) = (self.n_features, self.hidden);
        match id {
            W_X => [p, 4 * d],
            W_H => [d, 4 * d],
            B_LSTM => [1, 4 * d],
            W5 => [1, self.attention_width()],
            W6 => [1, 2 * d],
            _ => [1, 1],
        }
    }
}

/// All trainable parameters of one model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelTheta {
    pub dims: Dims,
    pub params: Vec<Tensor>,
}

impl ModelTheta {
    /// Uniform on `±sqrt(6 / (fan_in + fan_out))` for weights, zero biases.
    pub fn init(dims: Dims, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (p, d) = (dims.n_features, dims.hidden);
        let mut uniform = |shape: [usize; 2], fan_in: usize, fan_out: usize| {
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let data = (0..shape[0] * shape[1]).map(|_| rng.gen_range(-bound..bound)).collect();
            Tensor::from_vec(&shape, data).expect("finite init")
        };
        let w_x = uniform(dims.param_shape(W_X), p, d);
        let w_h = uniform(dims.param_shape(W_H), d, d);
        let w5 = uniform(dims.param_shape(W5), dims.attention_width(), 1);
        let w6 = uniform(dims.param_shape(W6), 2 * d, 1);
        let params = vec![
            w_x,
            w_h,
            Tensor::zeros(&dims.param_shape(B_LSTM)),
            w5,
            Tensor::zeros(&[1, 1]),
            w6,
            Tensor::zeros(&[1, 1]),
        ];
        ModelTheta { dims, params }
    }

    pub fn zeros(dims: Dims) -> Self {
        let params = (0..PARAM_NAMES.len()).map(|k| Tensor::zeros(&dims.param_shape(k))).collect();
        ModelTheta { dims, params }
    }

    pub fn check(&self) -> Result<()> {
        if self.params.len() != PARAM_NAMES.len() {
            return Err(Error::Shape(format!("{} parameter arrays", self.params.len())));
        }
        for (k, t) in self.params.iter().enumerate() {
            if t.shape() != self.dims.param_shape(k) {
                return Err(Error::Shape(format!(
                    "{} has shape {:?}, expected {:?}",
                    PARAM_NAMES[k],
                    t.shape(),
                    self.dims.param_shape(k)
                )));
            }
            t.check_finite()?;
        }
        Ok(())
    }

    pub fn n_scalars(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    /// Replaces outputs `y` by `scale * y + shift` through the head.
    pub fn rescale_output(&mut self, scale: f64, shift: f64) {
        for v in self.params[W6].data_mut() {
            *v *= scale;
        }
        let b = &mut self.params[B6].data_mut()[0];
        *b = scale * *b + shift;
    }
}

/// Graph-derived constants reused by every forward pass.
#[derive(Debug, Clone)]
pub struct GraphContext {
    pub n_stocks: usize,
    pub n_vertices: usize,
    pub include_factors: bool,
    relations: Tensor,
    mask: Arc<Vec<bool>>,
    scale: Arc<Tensor>,
}

impl GraphContext {
    pub fn new(g: &Hypergraph) -> Self {
        let (n, nv) = (g.n_stocks, g.n_vertices());
        let mut mask = vec![false; n * nv];
        let mut scale = vec![0.0; n * nv];
        for i in 0..n {
            for j in 0..nv {
                let active = if j < n { j != i } else { g.include_factors };
                mask[i * nv + j] = active;
                scale[i * nv + j] = if j < n {
                    1.0 / g.degree(j).max(1) as f64
                } else {
                    1.0 / n as f64
                };
            }
        }
        GraphContext {
            n_stocks: n,
            n_vertices: nv,
            include_factors: g.include_factors,
            relations: g.relation_tensor(),
            mask: Arc::new(mask),
            scale: Arc::new(Tensor::from_vec(&[n, nv], scale).expect("finite")),
        }
    }

    fn check(&self, dims: &Dims, x: &FeatureTensor) -> Result<()> {
        let ok = self.n_stocks == dims.n_stocks
            && self.n_vertices == dims.n_entities()
            && self.relations.cols() == dims.n_relations + dims.n_factors
            && x.n_entities() == dims.n_entities()
            && x.n_features() == dims.n_features
            && x.n_lags() == dims.lags;
        if ok {
            Ok(())
        } else {
            Err(Error::Shape(format!(
                "model dims {dims:?} vs graph ({} stocks, {} vertices, width {}) and features \
                 ({} x {} x {})",
                self.n_stocks,
                self.n_vertices,
                self.relations.cols(),
                x.n_entities(),
                x.n_features(),
                x.n_lags()
            )))
        }
    }
}

/// Tape handles of the intermediate quantities of one forward pass.
pub struct ForwardVars {
    pub embeddings: Var,
    pub attention: Var,
    pub aggregated: Var,
    pub concat: Var,
    pub output: Var,
}

/// Registers `theta` on `tape` under ids `0..7`.
pub fn register_params(tape: &mut Tape, theta: &ModelTheta) -> Result<Vec<Var>> {
    theta
        .params
        .iter()
        .enumerate()
        .map(|(k, t)| tape.param(k, t.clone()))
        .collect()
}

/// Records `f(X_{t-1})` on `tape`; the output node is `N x 1`.
pub fn forward_on_tape(
    tape: &mut Tape,
    p: &[Var],
    dims: &Dims,
    ctx: &GraphContext,
    x: &FeatureTensor,
) -> Result<ForwardVars> {
    ctx.check(dims, x)?;
    let (n, e, d) = (dims.n_stocks, dims.n_entities(), dims.hidden);
    let width = dims.n_relations + dims.n_factors;

    let mut h = tape.constant(Tensor::zeros(&[e, d]));
    let mut c = tape.constant(Tensor::zeros(&[e, d]));
    for (s, lag) in x.lags.iter().enumerate() {
        let xs = tape.constant(lag.clone());
        let mut pre = tape.matmul(xs, p[W_X])?;
        if s > 0 {
            let rec = tape.matmul(h, p[W_H])?;
            pre = tape.add(pre, rec)?;
        }
        let pre = tape.add_broadcast(pre, p[B_LSTM])?;
        let z = tape.slice_cols(pre, 0, d)?;
        let z = tape.tanh(z);
        let i = tape.slice_cols(pre, d, d)?;
        let i = tape.sigmoid(i);
        let f = tape.slice_cols(pre, 2 * d, d)?;
        let f = tape.sigmoid(f);
        let o = tape.slice_cols(pre, 3 * d, d)?;
        let o = tape.sigmoid(o);
        let keep = tape.mul(f, c)?;
        let write = tape.mul(i, z)?;
        c = tape.add(keep, write)?;
        let tc = tape.tanh(c);
        h = tape.mul(o, tc)?;
    }
    let xl = h;
    let xl_stock = tape.slice_rows(xl, 0, n)?;

    let u = tape.slice_cols(p[W5], 0, d)?;
    let u = tape.reshape(u, &[d, 1])?;
    let v = tape.slice_cols(p[W5], d, d)?;
    let v = tape.reshape(v, &[d, 1])?;
    let w = tape.slice_cols(p[W5], 2 * d, width)?;
    let w = tape.reshape(w, &[width, 1])?;
    let own = tape.matmul(xl_stock, u)?;
    let other = tape.matmul(xl, v)?;
    let other = tape.reshape(other, &[1, e])?;
    let rel = tape.constant(ctx.relations.clone());
    let rel = tape.matmul(rel, w)?;
    let scores = tape.reshape(rel, &[n, e])?;
    let scores = tape.add_broadcast(scores, own)?;
    let scores = tape.add_broadcast(scores, other)?;
    let scores = tape.add_broadcast(scores, p[B5])?;
    let attention = tape.masked_softmax_rows(scores, ctx.mask.clone())?;
    let coef = tape.mul_const(attention, ctx.scale.clone())?;
    let aggregated = tape.matmul(coef, xl)?;
    let concat = tape.concat_cols(xl_stock, aggregated)?;
    let w6 = tape.reshape(p[W6], &[2 * d, 1])?;
    let out = tape.matmul(concat, w6)?;
    let output = tape.add_broadcast(out, p[B6])?;
    Ok(ForwardVars {
        embeddings: xl,
        attention,
        aggregated,
        concat,
        output,
    })
}

/// Temporal, aggregated and concatenated embeddings of one forward pass.
#[derive(Debug, Clone)]
pub struct EmbeddingSet {
    /// `(N+B) x d`
    pub temporal: Tensor,
    /// `N x d`
    pub aggregated: Tensor,
    /// `N x 2d`
    pub concat: Tensor,
    /// `N x (N+B)` attention weights (zero where a vertex does not contribute).
    pub attention: Tensor,
    pub output: Vec<f64>,
}

pub fn model_forward_embeddings(
    x: &FeatureTensor,
    ctx: &GraphContext,
    theta: &ModelTheta,
) -> Result<EmbeddingSet> {
    let mut tape = Tape::new();
    let p = register_params(&mut tape, theta)?;
    let fv = forward_on_tape(&mut tape, &p, &theta.dims, ctx, x)?;
    let output = tape.value(fv.output).data().to_vec();
    if output.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite model output".into()));
    }
    Ok(EmbeddingSet {
        temporal: tape.value(fv.embeddings).clone(),
        aggregated: tape.value(fv.aggregated).clone(),
        concat: tape.value(fv.concat).clone(),
        attention: tape.value(fv.attention).clone(),
        output,
    })
}

/// One output per stock.
pub fn model_forward(x: &FeatureTensor, ctx: &GraphContext, theta: &ModelTheta) -> Result<Vec<f64>> {
    Ok(model_forward_embeddings(x, ctx, theta)?.output)
}

/// Direct LSTM recursion for one entity; `features` is `P x S` (oldest lag first).
pub fn lstm_forward(features: &Tensor, theta: &ModelTheta) -> Result<Vec<f64>> {
    let (p, s_len) = features.dims2()?;
    let d = theta.dims.hidden;
    if p != theta.dims.n_features {
        return Err(Error::Shape(format!("{p} feature rows for a {}-feature model", theta.dims.n_features)));
    }
    let (wx, wh, b) = (&theta.params[W_X], &theta.params[W_H], &theta.params[B_LSTM]);
    let mut h = vec![0.0; d];
    let mut c = vec![0.0; d];
    for s in 0..s_len {
        let mut pre = b.data().to_vec();
        for (col, v) in pre.iter_mut().enumerate() {
            for q in 0..p {
                *v += features.get2(q, s) * wx.get2(q, col);
            }
            for (k, hk) in h.iter().enumerate() {
                *v += hk * wh.get2(k, col);
            }
        }
        for k in 0..d {
            let z = pre[k].tanh();
            let i = sigmoid(pre[d + k]);
            let f = sigmoid(pre[2 * d + k]);
            let o = sigmoid(pre[3 * d + k]);
            c[k] = f * c[k] + i * z;
            h[k] = o * c[k].tanh();
        }
    }
    Ok(h)
}

/// Softmax weights over the contributors of stock `i`: every other stock, then every
/// factor vertex when factors are included. `embeddings` is `(N+B) x d`.
pub fn attention_weights(
    g: &Hypergraph,
    embeddings: &Tensor,
    i: usize,
    theta: &ModelTheta,
) -> Result<Vec<(usize, f64)>> {
    let d = theta.dims.hidden;
    let w5 = theta.params[W5].data();
    let b5 = theta.params[B5].data()[0];
    let mut scores = Vec::new();
    for j in 0..g.n_vertices() {
        if j == i || (j >= g.n_stocks && !g.include_factors) {
            continue;
        }
        let a = g.relation_vector(i, j)?;
        let mut sc = b5;
        for k in 0..d {
            sc += w5[k] * embeddings.get2(i, k) + w5[d + k] * embeddings.get2(j, k);
        }
        for (k, ak) in a.iter().enumerate() {
            sc += w5[2 * d + k] * ak;
        }
        scores.push((j, sc));
    }
    let m = scores.iter().map(|s| s.1).fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = scores.iter().map(|s| (s.1 - m).exp()).sum();
    Ok(scores.into_iter().map(|(j, s)| (j, (s - m).exp() / z)).collect())
}

/// `x^P_i` from attention weights.
pub fn tgc_aggregate(g: &Hypergraph, embeddings: &Tensor, weights: &[(usize, f64)]) -> Vec<f64> {
    let d = embeddings.cols();
    let n = g.n_stocks;
    let mut out = vec![0.0; d];
    for &(j, w) in weights {
        let div = if j < n { g.degree(j).max(1) as f64 } else { n as f64 };
        for (k, o) in out.iter_mut().enumerate() {
            *o += w / div * embeddings.get2(j, k);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::tensor::Tensor;

    fn dims(n: usize, b: usize, m: usize, p: usize, s: usize, d: usize) -> Dims {
        Dims { n_stocks: n, n_factors: b, n_relations: m, n_features: p, lags: s, hidden: d }
    }

    fn random_x(dm: &Dims, seed: u64) -> FeatureTensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let e = dm.n_entities();
        FeatureTensor {
            t: 0,
            lags: (0..dm.lags)
                .map(|_| {
                    let v = (0..e * dm.n_features).map(|_| rng.gen_range(0.0..1.0)).collect();
                    Tensor::from_vec(&[e, dm.n_features], v).unwrap()
                })
                .collect(),
        }
    }

    fn graph(n: usize, b: usize, include: bool) -> Hypergraph {
        let edges = [(0, 1, 0), (1, 2, 1), (0, 2, 0), (3 % n, 4 % n, 1)];
        let edges: Vec<_> = edges.iter().cloned().filter(|e| e.0 != e.1).collect();
        Hypergraph::new(n, b, vec!["a".into(), "b".into()], &edges, include).unwrap()
    }

    fn entity_matrix(x: &FeatureTensor, e: usize) -> Tensor {
        let (p, s) = (x.n_features(), x.n_lags());
        let mut m = Tensor::zeros(&[p, s]);
        for q in 0..p {
            for l in 0..s {
                m.set2(q, l, x.get(e, q, l));
            }
        }
        m
    }

    #[test]
    fn zero_params_zero_embedding() {
        let dm = dims(3, 1, 2, 4, 3, 5);
        let th = ModelTheta::zeros(dm);
        let x = random_x(&dm, 1);
        assert!(lstm_forward(&entity_matrix(&x, 0), &th).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_step_hand_unrolled() {
        let dm = dims(1, 0, 0, 2, 1, 1);
        let mut th = ModelTheta::zeros(dm);
        th.params[W_X] = Tensor::from_vec(&[2, 4], vec![0.1, 0.2, 0.3, 0.4, -0.5, 0.6, -0.7, 0.8]).unwrap();
        th.params[B_LSTM] = Tensor::from_vec(&[1, 4], vec![0.01, 0.02, 0.03, 0.04]).unwrap();
        let x = Tensor::from_vec(&[2, 1], vec![1.5, -2.0]).unwrap();
        let pre = |g: usize| 1.5 * th.params[W_X].get2(0, g) - 2.0 * th.params[W_X].get2(1, g) + th.params[B_LSTM].get2(0, g);
        let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
        let c = sig(pre(1)) * pre(0).tanh();
        let h = sig(pre(3)) * c.tanh();
        let got = lstm_forward(&x, &th).unwrap();
        assert!((got[0] - h).abs() < 1e-15);
    }

    #[test]
    fn lstm_output_bounded() {
        let dm = dims(2, 0, 0, 3, 6, 4);
        let mut th = ModelTheta::init(dm, 9);
        for t in th.params.iter_mut() {
            for v in t.data_mut() {
                *v *= 50.0;
            }
        }
        let x = random_x(&dm, 2);
        for e in 0..2 {
            assert!(lstm_forward(&entity_matrix(&x, e), &th).unwrap().iter().all(|v| v.abs() < 1.0));
        }
    }

    #[test]
    fn uniform_attention_when_w5_zero() {
        let dm = dims(3, 2, 2, 2, 2, 3);
        let th = ModelTheta::zeros(dm);
        let g = graph(3, 2, true);
        let emb = Tensor::from_vec(&[5, 3], (0..15).map(|k| k as f64 * 0.1).collect()).unwrap();
        let w = attention_weights(&g, &emb, 1, &th).unwrap();
        assert_eq!(w.len(), 4);
        assert!(w.iter().all(|&(_, v)| (v - 0.25).abs() < 1e-15));
    }

    #[test]
    fn attention_symmetry_and_sum() {
        let dm = dims(4, 2, 2, 2, 2, 3);
        let th = ModelTheta::init(dm, 4);
        let g = Hypergraph::new(4, 2, vec!["a".into(), "b".into()], &[(0, 1, 0), (0, 2, 0)], true).unwrap();
        let mut emb = Tensor::from_vec(&[6, 3], (0..18).map(|k| (k as f64 * 0.37).sin()).collect()).unwrap();
        for k in 0..3 {
            let v = emb.get2(1, k);
            emb.set2(2, k, v);
        }
        let w = attention_weights(&g, &emb, 0, &th).unwrap();
        assert!((w.iter().map(|x| x.1).sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(w[0].1, w[1].1);
    }

    #[test]
    fn aggregation_cases() {
        let g = Hypergraph::new(2, 0, vec!["a".into()], &[(0, 1, 0)], true).unwrap();
        let emb = Tensor::from_vec(&[2, 2], vec![0.3, 0.4, 0.5, -0.6]).unwrap();
        let xp = tgc_aggregate(&g, &emb, &[(1, 1.0)]);
        assert_eq!(xp, vec![0.5, -0.6]);
        let g = graph(3, 2, true);
        let zeros = Tensor::zeros(&[5, 4]);
        assert!(tgc_aggregate(&g, &zeros, &[(1, 0.3), (2, 0.3), (3, 0.2), (4, 0.2)]).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn tape_forward_matches_direct_composition() {
        for include in [true, false] {
            let dm = dims(5, 2, 2, 3, 4, 6);
            let th = ModelTheta::init(dm, 17);
            let g = graph(5, 2, include);
            let x = random_x(&dm, 18);
            let emb = model_forward_embeddings(&x, &GraphContext::new(&g), &th).unwrap();
            for e in 0..dm.n_entities() {
                let h = lstm_forward(&entity_matrix(&x, e), &th).unwrap();
                for k in 0..dm.hidden {
                    assert!((h[k] - emb.temporal.get2(e, k)).abs() < 1e-14);
                }
            }
            for i in 0..dm.n_stocks {
                let w = attention_weights(&g, &emb.temporal, i, &th).unwrap();
                for &(j, v) in &w {
                    assert!((emb.attention.get2(i, j) - v).abs() < 1e-14);
                }
                let xp = tgc_aggregate(&g, &emb.temporal, &w);
                let mut out = th.params[B6].data()[0];
                for k in 0..dm.hidden {
                    out += th.params[W6].get2(0, k) * emb.temporal.get2(i, k)
                        + th.params[W6].get2(0, dm.hidden + k) * xp[k];
                }
                assert!((out - emb.output[i]).abs() < 1e-13);
                let total: f64 = (0..dm.n_entities()).map(|j| emb.attention.get2(i, j)).sum();
                assert!((total - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn constant_head() {
        let dm = dims(4, 1, 2, 2, 2, 3);
        let mut th = ModelTheta::init(dm, 1);
        th.params[W6] = Tensor::zeros(&[1, 6]);
        th.params[B6] = Tensor::scalar(0.7);
        let out = model_forward(&random_x(&dm, 3), &GraphContext::new(&graph(4, 1, true)), &th).unwrap();
        assert!(out.iter().all(|&v| v == 0.7));
    }

    #[test]
    fn grace1_equals_graph_without_factor_vertices() {
        let dm = dims(5, 2, 2, 3, 3, 4);
        let th = ModelTheta::init(dm, 5);
        let x = random_x(&dm, 6);
        let out = model_forward(&x, &GraphContext::new(&graph(5, 2, false)), &th).unwrap();

        let dm0 = Dims { n_factors: 0, ..dm };
        let mut th0 = ModelTheta::zeros(dm0);
        for k in [W_X, W_H, B_LSTM, B5, W6, B6] {
            th0.params[k] = th.params[k].clone();
        }
        th0.params[W5] = Tensor::from_vec(&[1, dm0.attention_width()], th.params[W5].data()[..dm0.attention_width()].to_vec()).unwrap();
        let x0 = FeatureTensor {
            t: 0,
            lags: x.lags.iter().map(|l| Tensor::from_vec(&[5, 3], l.data()[..15].to_vec()).unwrap()).collect(),
        };
        let out0 = model_forward(&x0, &GraphContext::new(&graph(5, 0, true)), &th0).unwrap();
        for (a, b) in out.iter().zip(&out0) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn permutation_equivariance() {
        let dm = dims(4, 1, 1, 2, 2, 3);
        let th = ModelTheta::init(dm, 8);
        let g = Hypergraph::new(4, 1, vec!["a".into()], &[(0, 1, 0), (1, 2, 0), (2, 3, 0), (0, 2, 0)], true).unwrap();
        let x = random_x(&dm, 10);
        let out = model_forward(&x, &GraphContext::new(&g), &th).unwrap();
        let perm = [2, 0, 3, 1, 4];
        let inv: Vec<usize> = (0..5).map(|k| perm.iter().position(|&p| p == k).unwrap()).collect();
        let pg = Hypergraph::new(
            4,
            1,
            vec!["a".into()],
            &[(0, 1, 0), (1, 2, 0), (2, 3, 0), (0, 2, 0)].map(|(i, j, r)| (inv[i], inv[j], r)),
            true,
        )
        .unwrap();
        let px = FeatureTensor {
            t: 0,
            lags: x
                .lags
                .iter()
                .map(|l| {
                    let mut m = Tensor::zeros(&[5, 2]);
                    for e in 0..5 {
                        for q in 0..2 {
                            m.set2(e, q, l.get2(perm[e], q));
                        }
                    }
                    m
                })
                .collect(),
        };
        let pout = model_forward(&px, &GraphContext::new(&pg), &th).unwrap();
        for e in 0..4 {
            assert!((pout[e] - out[perm[e]]).abs() < 1e-14);
        }
    }

    #[test]
    fn dimension_mismatch_is_shape_error() {
        let dm = dims(4, 1, 2, 2, 2, 3);
        let th = ModelTheta::init(dm, 1);
        let x = random_x(&Dims { lags: 3, ..dm }, 2);
        assert!(matches!(model_forward(&x, &GraphContext::new(&graph(4, 1, true)), &th), Err(Error::Shape(_))));
    }

    #[test]
    fn rescale_output_is_affine() {
        let dm = dims(4, 1, 2, 2, 2, 3);
        let mut th = ModelTheta::init(dm, 2);
        let (x, ctx) = (random_x(&dm, 2), GraphContext::new(&graph(4, 1, true)));
        let before = model_forward(&x, &ctx, &th).unwrap();
        th.rescale_output(0.02, 0.001);
        let after = model_forward(&x, &ctx, &th).unwrap();
        for (a, b) in before.iter().zip(&after) {
            assert!((0.02 * a + 0.001 - b).abs() < 1e-15);
        }
    }
}
