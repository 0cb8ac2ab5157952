//! A small transformer with the same parameter-group layout as a real
//! tabular foundation model, used where real checkpoints are unavailable.
//!
//! Features are standardised with context statistics and split into groups
//! of `group_size`. Every group yields one token per item:
//! `W_x x_g + b_x + e_g + W_y y + b_y`, where `e_g` is a fixed seeded
//! group embedding and `y` is a one-hot label for context items and zero
//! for queries. Each block applies single-head attention from all items to
//! context items followed by a GELU MLP, both residual. Query tokens are
//! mean-pooled over groups and decoded to two class logits; the positive
//! logit `z+` is their difference.

use std::sync::atomic::{AtomicUsize, Ordering};

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{InContextModel, TrainableModel};
use crate::error::{Error, Result};
use crate::finetune::{Gradients, ParamGroup, ParameterSet, Tensor};

const CLIP: f64 = 8.0;
const TENSORS_PER_BLOCK: usize = 8;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MockTfmConfig {
    pub embed_dim: usize,
    pub ff_dim: usize,
    pub n_blocks: usize,
    pub decoder_dim: usize,
    pub group_size: usize,
    pub seed: u64,
}

impl Default for MockTfmConfig {
    fn default() -> Self {
        Self {
            embed_dim: 16,
            ff_dim: 32,
            n_blocks: 2,
            decoder_dim: 32,
            group_size: 3,
            seed: 0,
        }
    }
}

pub struct MockTfm {
    config: MockTfmConfig,
    params: ParameterSet,
    forward_calls: AtomicUsize,
}

impl Clone for MockTfm {
    fn clone(&self) -> Self {
        Self {
            config: self.config.clone(),
            params: self.params.clone(),
            forward_calls: AtomicUsize::new(0),
        }
    }
}

impl std::fmt::Debug for MockTfm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MockTfm")
            .field("config", &self.config)
            .field("parameters", &self.params.total_count())
            .finish()
    }
}

struct BlockCache {
    h_in: Array2<f64>,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    a: Array2<f64>,
    o: Array2<f64>,
    h1: Array2<f64>,
    pre: Array2<f64>,
    act: Array2<f64>,
}

struct GroupCache {
    xg: Array2<f64>,
    blocks: Vec<BlockCache>,
    h_out: Array2<f64>,
}

struct Forward {
    n_context: usize,
    labels: Array2<f64>,
    groups: Vec<GroupCache>,
    pooled: Array2<f64>,
    dec_pre: Array2<f64>,
    dec_act: Array2<f64>,
    logits: Vec<f64>,
}

fn gelu(x: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4;
    0.5 * x * (1.0 + (C * (x + 0.044_715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4;
    let t = (C * (x + 0.044_715 * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * C * (1.0 + 3.0 * 0.044_715 * x * x)
}

fn softmax_rows(s: &mut Array2<f64>) {
    for mut row in s.rows_mut() {
        let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - m).exp());
        let z = row.sum();
        row /= z;
    }
}

fn flat(a: &Array2<f64>) -> Vec<f64> {
    a.iter().copied().collect()
}

impl MockTfm {
    pub fn new(config: MockTfmConfig) -> Result<Self> {
        let MockTfmConfig {
            embed_dim: e,
            ff_dim: f,
            n_blocks,
            decoder_dim: h,
            group_size: g,
            seed,
        } = config;
        if e == 0 || f == 0 || h == 0 || g == 0 {
            return Err(Error::Config("mock TFM dimensions must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut tensor = |name: String, group: ParamGroup, shape: Vec<usize>, std: f64| {
            let mut t = Tensor::zeros(name, group, shape);
            if std > 0.0 {
                let normal = Normal::new(0.0, std).expect("positive std");
                t.data.iter_mut().for_each(|v| *v = normal.sample(&mut rng));
            }
            t
        };
        let inv = |n: usize| 1.0 / (n as f64).sqrt();
        let mut tensors = vec![
            tensor("x_encoder.weight".into(), ParamGroup::XEncoder, vec![e, g], inv(g)),
            tensor("x_encoder.bias".into(), ParamGroup::XEncoder, vec![e], 0.0),
            tensor("y_encoder.weight".into(), ParamGroup::YEncoder, vec![e, 2], 1.0),
            tensor("y_encoder.bias".into(), ParamGroup::YEncoder, vec![e], 0.0),
        ];
        let tb = ParamGroup::TransformerBlocks;
        for l in 0..n_blocks {
            let p = |n: &str| format!("blocks.{l}.{n}");
            tensors.push(tensor(p("wq"), tb, vec![e, e], inv(e)));
            tensors.push(tensor(p("wk"), tb, vec![e, e], inv(e)));
            tensors.push(tensor(p("wv"), tb, vec![e, e], inv(e)));
            tensors.push(tensor(p("wo"), tb, vec![e, e], 0.5 * inv(e)));
            tensors.push(tensor(p("w1"), tb, vec![f, e], inv(e)));
            tensors.push(tensor(p("b1"), tb, vec![f], 0.0));
            tensors.push(tensor(p("w2"), tb, vec![e, f], 0.5 * inv(f)));
            tensors.push(tensor(p("b2"), tb, vec![e], 0.0));
        }
        let d = ParamGroup::Decoder;
        tensors.push(tensor("decoder.w1".into(), d, vec![h, e], inv(e)));
        tensors.push(tensor("decoder.b1".into(), d, vec![h], 0.0));
        tensors.push(tensor("decoder.w2".into(), d, vec![2, h], inv(h)));
        tensors.push(tensor("decoder.b2".into(), d, vec![2], 0.0));
        Ok(Self {
            config,
            params: ParameterSet::new(tensors),
            forward_calls: AtomicUsize::new(0),
        })
    }

    pub fn config(&self) -> &MockTfmConfig {
        &self.config
    }

    /// Number of forward passes run since construction.
    pub fn forward_calls(&self) -> usize {
        self.forward_calls.load(Ordering::Relaxed)
    }

    fn mat(&self, i: usize) -> ArrayView2<'_, f64> {
        let t = &self.params.tensors[i];
        ArrayView2::from_shape((t.shape[0], t.shape[1]), &t.data).expect("tensor shape")
    }

    fn vector(&self, i: usize) -> ArrayView1<'_, f64> {
        ArrayView1::from(&self.params.tensors[i].data)
    }

    fn decoder_index(&self) -> usize {
        4 + TENSORS_PER_BLOCK * self.config.n_blocks
    }

    fn group_embedding(&self, g: usize) -> Array1<f64> {
        let seed = self.config.seed ^ (g as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 0.5).expect("positive std");
        Array1::from_shape_fn(self.config.embed_dim, |_| normal.sample(&mut rng))
    }

    /// Context-standardised, clipped and zero-padded items, context first.
    fn prepare(
        &self,
        context_x: ArrayView2<'_, f64>,
        context_y: &[u8],
        query_x: ArrayView2<'_, f64>,
    ) -> Result<(Array2<f64>, Array2<f64>)> {
        let (n_c, p) = context_x.dim();
        if n_c == 0 || p == 0 {
            return Err(Error::invalid("context must have at least one row and column"));
        }
        if context_y.len() != n_c {
            return Err(Error::invalid(format!(
                "{n_c} context rows but {} labels",
                context_y.len()
            )));
        }
        if query_x.ncols() != p {
            return Err(Error::WidthMismatch {
                expected: p,
                actual: query_x.ncols(),
            });
        }
        if context_x.iter().chain(query_x.iter()).any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite feature value"));
        }
        let n_c_f = n_c as f64;
        let mean = context_x.sum_axis(Axis(0)) / n_c_f;
        let var = context_x
            .rows()
            .into_iter()
            .fold(Array1::<f64>::zeros(p), |acc, r| acc + (&r - &mean).mapv(|v| v * v))
            / n_c_f;
        let std = var.mapv(|v: f64| if v.sqrt() > 1e-12 { v.sqrt() } else { 1.0 });
        let gs = self.config.group_size;
        let width = p.div_ceil(gs) * gs;
        let n = n_c + query_x.nrows();
        let mut items = Array2::zeros((n, width));
        for (i, row) in context_x.rows().into_iter().chain(query_x.rows()).enumerate() {
            for j in 0..p {
                items[[i, j]] = ((row[j] - mean[j]) / std[j]).clamp(-CLIP, CLIP);
            }
        }
        let mut labels = Array2::zeros((n, 2));
        for (i, &y) in context_y.iter().enumerate() {
            if y > 1 {
                return Err(Error::invalid(format!("label {y} is not binary")));
            }
            labels[[i, usize::from(y)]] = 1.0;
        }
        Ok((items, labels))
    }

    fn forward_group(
        &self,
        xg: Array2<f64>,
        labels: &Array2<f64>,
        embedding: &Array1<f64>,
        n_c: usize,
    ) -> GroupCache {
        let scale = 1.0 / (self.config.embed_dim as f64).sqrt();
        let mut h = xg.dot(&self.mat(0).t()) + self.vector(1) + embedding
            + labels.dot(&self.mat(2).t())
            + self.vector(3);
        let mut blocks = Vec::with_capacity(self.config.n_blocks);
        for l in 0..self.config.n_blocks {
            let b = 4 + TENSORS_PER_BLOCK * l;
            let hc = h.slice(s![..n_c, ..]);
            let q = h.dot(&self.mat(b).t());
            let k = hc.dot(&self.mat(b + 1).t());
            let v = hc.dot(&self.mat(b + 2).t());
            let mut a = q.dot(&k.t()) * scale;
            softmax_rows(&mut a);
            let o = a.dot(&v);
            let h1 = &h + &o.dot(&self.mat(b + 3).t());
            let pre = h1.dot(&self.mat(b + 4).t()) + self.vector(b + 5);
            let act = pre.mapv(gelu);
            let h2 = &h1 + &act.dot(&self.mat(b + 6).t()) + self.vector(b + 7);
            blocks.push(BlockCache {
                h_in: h,
                q,
                k,
                v,
                a,
                o,
                h1,
                pre,
                act,
            });
            h = h2;
        }
        GroupCache {
            xg,
            blocks,
            h_out: h,
        }
    }

    fn run_forward(
        &self,
        context_x: ArrayView2<'_, f64>,
        context_y: &[u8],
        query_x: ArrayView2<'_, f64>,
        keep_cache: bool,
    ) -> Result<Forward> {
        self.forward_calls.fetch_add(1, Ordering::Relaxed);
        let (items, labels) = self.prepare(context_x, context_y, query_x)?;
        let n_c = context_x.nrows();
        let gs = self.config.group_size;
        let n_groups = items.ncols() / gs;
        let mut groups: Vec<GroupCache> = (0..n_groups)
            .into_par_iter()
            .map(|g| {
                let xg = items.slice(s![.., g * gs..(g + 1) * gs]).to_owned();
                let mut cache = self.forward_group(xg, &labels, &self.group_embedding(g), n_c);
                if !keep_cache {
                    cache.blocks.clear();
                    cache.h_out = cache.h_out.slice(s![n_c.., ..]).to_owned();
                }
                cache
            })
            .collect();
        let mut pooled = Array2::zeros((query_x.nrows(), self.config.embed_dim));
        for g in &groups {
            let rows = if keep_cache {
                g.h_out.slice(s![n_c.., ..])
            } else {
                g.h_out.view()
            };
            pooled += &rows;
        }
        pooled /= n_groups as f64;
        if !keep_cache {
            groups.clear();
        }
        let d = self.decoder_index();
        let dec_pre = pooled.dot(&self.mat(d).t()) + self.vector(d + 1);
        let dec_act = dec_pre.mapv(gelu);
        let out = dec_act.dot(&self.mat(d + 2).t()) + self.vector(d + 3);
        let logits = out.rows().into_iter().map(|r| r[1] - r[0]).collect();
        Ok(Forward {
            n_context: n_c,
            labels,
            groups,
            pooled,
            dec_pre,
            dec_act,
            logits,
        })
    }

    fn backward_group(&self, cache: &GroupCache, labels: &Array2<f64>, dpooled: &Array2<f64>, n_c: usize) -> Gradients {
        let scale = 1.0 / (self.config.embed_dim as f64).sqrt();
        let mut grads: Gradients = Vec::with_capacity(self.decoder_index());
        grads.resize(self.decoder_index(), Vec::new());
        let mut dh = Array2::zeros(cache.h_out.dim());
        dh.slice_mut(s![n_c.., ..]).assign(dpooled);
        for (l, bc) in cache.blocks.iter().enumerate().rev() {
            let b = 4 + TENSORS_PER_BLOCK * l;
            grads[b + 7] = dh.sum_axis(Axis(0)).to_vec();
            grads[b + 6] = flat(&dh.t().dot(&bc.act));
            let dpre = dh.dot(&self.mat(b + 6)) * &bc.pre.mapv(gelu_grad);
            grads[b + 4] = flat(&dpre.t().dot(&bc.h1));
            grads[b + 5] = dpre.sum_axis(Axis(0)).to_vec();
            let dh1 = &dh + &dpre.dot(&self.mat(b + 4));
            grads[b + 3] = flat(&dh1.t().dot(&bc.o));
            let d_o = dh1.dot(&self.mat(b + 3));
            let da = d_o.dot(&bc.v.t());
            let dv = bc.a.t().dot(&d_o);
            let row_dot = (&da * &bc.a).sum_axis(Axis(1)).insert_axis(Axis(1));
            let ds = (&bc.a * &(&da - &row_dot)) * scale;
            let dq = ds.dot(&bc.k);
            let dk = ds.t().dot(&bc.q);
            let hc = bc.h_in.slice(s![..n_c, ..]);
            grads[b] = flat(&dq.t().dot(&bc.h_in));
            grads[b + 1] = flat(&dk.t().dot(&hc));
            grads[b + 2] = flat(&dv.t().dot(&hc));
            let mut dh_in = dh1 + dq.dot(&self.mat(b));
            let dctx = dk.dot(&self.mat(b + 1)) + dv.dot(&self.mat(b + 2));
            let mut top = dh_in.slice_mut(s![..n_c, ..]);
            top += &dctx;
            dh = dh_in;
        }
        grads[0] = flat(&dh.t().dot(&cache.xg));
        grads[1] = dh.sum_axis(Axis(0)).to_vec();
        grads[2] = flat(&dh.t().dot(labels));
        grads[3] = grads[1].clone();
        grads
    }
}

impl InContextModel for MockTfm {
    fn model_name(&self) -> String {
        "mock_tfm".into()
    }

    fn version(&self) -> String {
        let c = &self.config;
        format!(
            "mock-tfm/e{}-f{}-b{}-d{}-g{}-s{}",
            c.embed_dim, c.ff_dim, c.n_blocks, c.decoder_dim, c.group_size, c.seed
        )
    }

    fn predict_logits(
        &self,
        context_x: ArrayView2<'_, f64>,
        context_y: &[u8],
        query_x: ArrayView2<'_, f64>,
    ) -> Result<Vec<f64>> {
        Ok(self.run_forward(context_x, context_y, query_x, false)?.logits)
    }

    fn parameter_checksum(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.version().as_bytes());
        h.update(self.params.checksum().as_bytes());
        hex::encode(h.finalize())
    }
}

impl TrainableModel for MockTfm {
    fn parameters(&self) -> &ParameterSet {
        &self.params
    }

    fn set_parameters(&mut self, params: ParameterSet) -> Result<()> {
        if !self.params.same_layout(&params) {
            return Err(Error::invalid("parameter layout does not match the model"));
        }
        self.params = params;
        Ok(())
    }

    fn logits_and_gradients(
        &self,
        context_x: ArrayView2<'_, f64>,
        context_y: &[u8],
        query_x: ArrayView2<'_, f64>,
        dlogits: &dyn Fn(&[f64]) -> Result<Vec<f64>>,
    ) -> Result<(Vec<f64>, Gradients)> {
        let fwd = self.run_forward(context_x, context_y, query_x, true)?;
        let dz = dlogits(&fwd.logits)?;
        if dz.len() != fwd.logits.len() {
            return Err(Error::invalid("logit gradient has the wrong length"));
        }
        let d = self.decoder_index();
        let dout = Array2::from_shape_fn((dz.len(), 2), |(i, c)| if c == 1 { dz[i] } else { -dz[i] });
        let mut grads = self.params.zeros_like();
        grads[d + 3] = dout.sum_axis(Axis(0)).to_vec();
        grads[d + 2] = flat(&dout.t().dot(&fwd.dec_act));
        let dpre = dout.dot(&self.mat(d + 2)) * &fwd.dec_pre.mapv(gelu_grad);
        grads[d + 1] = dpre.sum_axis(Axis(0)).to_vec();
        grads[d] = flat(&dpre.t().dot(&fwd.pooled));
        let dpooled = dpre.dot(&self.mat(d)) / fwd.groups.len() as f64;
        let per_group: Vec<Gradients> = fwd
            .groups
            .par_iter()
            .map(|g| self.backward_group(g, &fwd.labels, &dpooled, fwd.n_context))
            .collect();
        for pg in per_group {
            for (acc, part) in grads.iter_mut().zip(pg) {
                for (a, p) in acc.iter_mut().zip(part) {
                    *a += p;
                }
            }
        }
        Ok((fwd.logits, grads))
    }

    fn boxed_clone(&self) -> Box<dyn TrainableModel> {
        Box::new(self.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use rand::Rng;

    use crate::finetune::loss::{temperature_bce_grad, temperature_bce_loss};

    fn tiny() -> MockTfm {
        MockTfm::new(MockTfmConfig {
            embed_dim: 4,
            ff_dim: 5,
            n_blocks: 2,
            decoder_dim: 3,
            group_size: 3,
            seed: 7,
        })
        .unwrap()
    }

    fn data(seed: u64, n: usize, p: usize) -> (Array2<f64>, Vec<u8>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Array2::from_shape_fn((n, p), |_| rng.random_range(-2.0..2.0));
        let y = (0..n).map(|i| (i % 2) as u8).collect();
        (x, y)
    }

    #[test]
    fn reference_encoder_sizes() {
        let m = MockTfm::new(MockTfmConfig {
            embed_dim: 192,
            ..MockTfmConfig::default()
        })
        .unwrap();
        let map = m.group_map();
        assert_eq!(map.groups[&ParamGroup::XEncoder], 768);
        assert_eq!(map.groups[&ParamGroup::YEncoder], 576);
    }

    #[test]
    fn analytic_gradients_match_finite_differences() {
        let mut m = tiny();
        let (cx, cy) = data(1, 6, 5);
        let (qx, qy) = data(2, 4, 5);
        let tau = 1.3;
        let loss = |m: &MockTfm| {
            let z = m.predict_logits(cx.view(), &cy, qx.view()).unwrap();
            temperature_bce_loss(&z, &qy, tau).unwrap()
        };
        let (_, grads) = m
            .logits_and_gradients(cx.view(), &cy, qx.view(), &|z| {
                temperature_bce_grad(z, &qy, tau)
            })
            .unwrap();
        let h = 1e-6;
        for ti in 0..m.params.tensors.len() {
            for j in 0..m.params.tensors[ti].data.len() {
                let orig = m.params.tensors[ti].data[j];
                m.params.tensors[ti].data[j] = orig + h;
                let up = loss(&m);
                m.params.tensors[ti].data[j] = orig - h;
                let down = loss(&m);
                m.params.tensors[ti].data[j] = orig;
                let numeric = (up - down) / (2.0 * h);
                let analytic = grads[ti][j];
                let err = (numeric - analytic).abs() / numeric.abs().max(analytic.abs()).max(1e-4);
                assert!(
                    err < 1e-5,
                    "{} [{j}]: analytic {analytic} numeric {numeric}",
                    m.params.tensors[ti].name
                );
            }
        }
    }

    #[test]
    fn queries_are_independent_of_each_other() {
        let m = tiny();
        let (cx, cy) = data(3, 8, 7);
        let (qx, _) = data(4, 5, 7);
        let all = m.predict_logits(cx.view(), &cy, qx.view()).unwrap();
        for i in 0..5 {
            let one = m
                .predict_logits(cx.view(), &cy, qx.slice(s![i..i + 1, ..]))
                .unwrap();
            assert!((one[0] - all[i]).abs() < 1e-12);
        }
        assert_eq!(m.forward_calls(), 6);
    }

    #[test]
    fn width_mismatch_rejected() {
        let m = tiny();
        let (cx, cy) = data(3, 8, 7);
        let (qx, _) = data(4, 5, 6);
        assert!(matches!(
            m.predict_logits(cx.view(), &cy, qx.view()),
            Err(Error::WidthMismatch { .. })
        ));
    }

    #[test]
    fn same_seed_same_weights() {
        assert_eq!(tiny().parameter_checksum(), tiny().parameter_checksum());
        let other = MockTfm::new(MockTfmConfig {
            seed: 8,
            ..tiny().config.clone()
        })
        .unwrap();
        assert_ne!(tiny().params.checksum(), other.params.checksum());
    }
}
