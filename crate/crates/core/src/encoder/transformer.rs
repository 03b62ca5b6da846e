//! A small post-LayerNorm transformer encoder with a hand-written backward
//! pass. Sequences are processed one at a time with no padding, so the output
//! for a sentence never depends on what else is in the batch.

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2, ArrayView2, ArrayViewD, ArrayViewMutD, Axis, Zip};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

const LN_EPS: f64 = 1e-5;
const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TowerConfig {
    pub vocab_size: usize,
    pub max_positions: usize,
    pub hidden: usize,
    pub layers: usize,
    pub heads: usize,
    pub ffn: usize,
}

impl TowerConfig {
    pub fn head_dim(&self) -> usize {
        self.hidden / self.heads
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub wq: Array2<f64>,
    pub bq: Array1<f64>,
    pub wk: Array2<f64>,
    pub bk: Array1<f64>,
    pub wv: Array2<f64>,
    pub bv: Array1<f64>,
    pub wo: Array2<f64>,
    pub bo: Array1<f64>,
    pub ln1_g: Array1<f64>,
    pub ln1_b: Array1<f64>,
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
    pub ln2_g: Array1<f64>,
    pub ln2_b: Array1<f64>,
}

impl Layer {
    fn zeros(h: usize, ffn: usize) -> Self {
        let m = |r, c| Array2::zeros((r, c));
        let v = |n| Array1::zeros(n);
        Self {
            wq: m(h, h),
            bq: v(h),
            wk: m(h, h),
            bk: v(h),
            wv: m(h, h),
            bv: v(h),
            wo: m(h, h),
            bo: v(h),
            ln1_g: v(h),
            ln1_b: v(h),
            w1: m(h, ffn),
            b1: v(ffn),
            w2: m(ffn, h),
            b2: v(h),
            ln2_g: v(h),
            ln2_b: v(h),
        }
    }

    fn tensors(&self) -> [(&'static str, ArrayViewD<'_, f64>); 16] {
        [
            ("wq", self.wq.view().into_dyn()),
            ("bq", self.bq.view().into_dyn()),
            ("wk", self.wk.view().into_dyn()),
            ("bk", self.bk.view().into_dyn()),
            ("wv", self.wv.view().into_dyn()),
            ("bv", self.bv.view().into_dyn()),
            ("wo", self.wo.view().into_dyn()),
            ("bo", self.bo.view().into_dyn()),
            ("ln1_g", self.ln1_g.view().into_dyn()),
            ("ln1_b", self.ln1_b.view().into_dyn()),
            ("w1", self.w1.view().into_dyn()),
            ("b1", self.b1.view().into_dyn()),
            ("w2", self.w2.view().into_dyn()),
            ("b2", self.b2.view().into_dyn()),
            ("ln2_g", self.ln2_g.view().into_dyn()),
            ("ln2_b", self.ln2_b.view().into_dyn()),
        ]
    }

    fn tensors_mut(&mut self) -> [ArrayViewMutD<'_, f64>; 16] {
        [
            self.wq.view_mut().into_dyn(),
            self.bq.view_mut().into_dyn(),
            self.wk.view_mut().into_dyn(),
            self.bk.view_mut().into_dyn(),
            self.wv.view_mut().into_dyn(),
            self.bv.view_mut().into_dyn(),
            self.wo.view_mut().into_dyn(),
            self.bo.view_mut().into_dyn(),
            self.ln1_g.view_mut().into_dyn(),
            self.ln1_b.view_mut().into_dyn(),
            self.w1.view_mut().into_dyn(),
            self.b1.view_mut().into_dyn(),
            self.w2.view_mut().into_dyn(),
            self.b2.view_mut().into_dyn(),
            self.ln2_g.view_mut().into_dyn(),
            self.ln2_b.view_mut().into_dyn(),
        ]
    }
}

/// One transformer stack: embeddings, embedding LayerNorm and the layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Tower {
    pub config: TowerConfig,
    pub token_emb: Array2<f64>,
    pub pos_emb: Array2<f64>,
    pub emb_ln_g: Array1<f64>,
    pub emb_ln_b: Array1<f64>,
    pub layers: Vec<Layer>,
}

struct LnCache {
    xhat: Array2<f64>,
    inv_std: Array1<f64>,
}

struct LayerTrace {
    input: Array2<f64>,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    probs: Vec<Array2<f64>>,
    context: Array2<f64>,
    ln1: LnCache,
    h1: Array2<f64>,
    ff_pre: Array2<f64>,
    ff_act: Array2<f64>,
    ln2: LnCache,
}

/// Activations kept from a forward pass for the backward pass.
pub struct Trace {
    ids: Vec<u32>,
    emb_ln: LnCache,
    layers: Vec<LayerTrace>,
}

impl Trace {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

fn layer_norm(x: &Array2<f64>, g: &Array1<f64>, b: &Array1<f64>) -> (Array2<f64>, LnCache) {
    let h = x.ncols() as f64;
    let mut xhat = x.clone();
    let mut inv_std = Array1::zeros(x.nrows());
    for (mut row, istd) in xhat.rows_mut().into_iter().zip(inv_std.iter_mut()) {
        let mean = row.sum() / h;
        row.mapv_inplace(|v| v - mean);
        let var = row.iter().map(|v| v * v).sum::<f64>() / h;
        *istd = 1.0 / (var + LN_EPS).sqrt();
        let s = *istd;
        row.mapv_inplace(|v| v * s);
    }
    let y = &xhat * g + b;
    (y, LnCache { xhat, inv_std })
}

fn layer_norm_backward(
    cache: &LnCache,
    dy: &Array2<f64>,
    g: &Array1<f64>,
    dg: &mut Array1<f64>,
    db: &mut Array1<f64>,
) -> Array2<f64> {
    *dg += &(dy * &cache.xhat).sum_axis(Axis(0));
    *db += &dy.sum_axis(Axis(0));
    let dxhat = dy * g;
    let h = dy.ncols() as f64;
    let mut dx = Array2::zeros(dy.raw_dim());
    for (((mut out, dxh), xh), &istd) in dx
        .rows_mut()
        .into_iter()
        .zip(dxhat.rows())
        .zip(cache.xhat.rows())
        .zip(cache.inv_std.iter())
    {
        let mean_d = dxh.sum() / h;
        let mean_dx = dxh.iter().zip(xh.iter()).map(|(a, b)| a * b).sum::<f64>() / h;
        Zip::from(&mut out)
            .and(&dxh)
            .and(&xh)
            .for_each(|o, &d, &x| *o = istd * (d - mean_d - x * mean_dx));
    }
    dx
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + 0.044715 * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}

fn softmax_rows(m: &mut Array2<f64>) {
    for mut row in m.rows_mut() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
}

fn linear(x: &Array2<f64>, w: &Array2<f64>, b: &Array1<f64>) -> Array2<f64> {
    x.dot(w) + b
}

/// Accumulates `dW += xᵀ dy`, `db += Σ dy` and returns `dx = dy Wᵀ`.
fn linear_backward(
    x: &Array2<f64>,
    w: &Array2<f64>,
    dy: &Array2<f64>,
    dw: &mut Array2<f64>,
    db: &mut Array1<f64>,
) -> Array2<f64> {
    general_mat_mul(1.0, &x.t(), dy, 1.0, dw);
    *db += &dy.sum_axis(Axis(0));
    dy.dot(&w.t())
}

impl Tower {
    pub fn zeros(config: TowerConfig) -> Self {
        let h = config.hidden;
        Self {
            config,
            token_emb: Array2::zeros((config.vocab_size, h)),
            pos_emb: Array2::zeros((config.max_positions, h)),
            emb_ln_g: Array1::zeros(h),
            emb_ln_b: Array1::zeros(h),
            layers: (0..config.layers).map(|_| Layer::zeros(h, config.ffn)).collect(),
        }
    }

    /// Normal(0, 0.02) weights, unit LayerNorm gains, zero biases.
    pub fn random(config: TowerConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, INIT_STD).expect("valid std");
        let mut tower = Self::zeros(config);
        let names: Vec<String> = tower.tensors().into_iter().map(|(n, _)| n).collect();
        for (name, mut t) in names.iter().zip(tower.tensors_mut()) {
            let leaf = name.rsplit('.').next().unwrap_or(name);
            if leaf.ends_with("_g") {
                t.fill(1.0);
            } else if leaf.starts_with('w') || leaf.ends_with("_emb") {
                t.mapv_inplace(|_| normal.sample(&mut rng));
            }
        }
        tower
    }

    /// Named views of every parameter, in a fixed order.
    pub fn tensors(&self) -> Vec<(String, ArrayViewD<'_, f64>)> {
        let mut out = vec![
            ("token_emb".to_string(), self.token_emb.view().into_dyn()),
            ("pos_emb".to_string(), self.pos_emb.view().into_dyn()),
            ("emb_ln_g".to_string(), self.emb_ln_g.view().into_dyn()),
            ("emb_ln_b".to_string(), self.emb_ln_b.view().into_dyn()),
        ];
        for (i, layer) in self.layers.iter().enumerate() {
            out.extend(
                layer
                    .tensors()
                    .into_iter()
                    .map(|(name, t)| (format!("layers.{i}.{name}"), t)),
            );
        }
        out
    }

    /// Mutable views in the same order as [`Tower::tensors`].
    pub fn tensors_mut(&mut self) -> Vec<ArrayViewMutD<'_, f64>> {
        let mut out = vec![
            self.token_emb.view_mut().into_dyn(),
            self.pos_emb.view_mut().into_dyn(),
            self.emb_ln_g.view_mut().into_dyn(),
            self.emb_ln_b.view_mut().into_dyn(),
        ];
        for layer in &mut self.layers {
            out.extend(layer.tensors_mut());
        }
        out
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.config)
    }

    /// Runs the encoder over `ids` and returns the final hidden states.
    ///
    /// Panics if `ids` is empty, longer than `max_positions` or contains an
    /// out-of-vocabulary id; callers render inputs through the tokenizer.
    pub fn forward(&self, ids: &[u32]) -> (Array2<f64>, Trace) {
        assert!(!ids.is_empty() && ids.len() <= self.config.max_positions);
        let t = ids.len();
        let h = self.config.hidden;
        let mut x = Array2::zeros((t, h));
        for (pos, (mut row, &id)) in x.rows_mut().into_iter().zip(ids).enumerate() {
            row.assign(&self.token_emb.row(id as usize));
            row += &self.pos_emb.row(pos);
        }
        let (mut x, emb_ln) = layer_norm(&x, &self.emb_ln_g, &self.emb_ln_b);

        let heads = self.config.heads;
        let dh = self.config.head_dim();
        let scale = 1.0 / (dh as f64).sqrt();
        let mut traces = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let q = linear(&x, &layer.wq, &layer.bq);
            let k = linear(&x, &layer.wk, &layer.bk);
            let v = linear(&x, &layer.wv, &layer.bv);
            let mut context = Array2::zeros((t, h));
            let mut probs = Vec::with_capacity(heads);
            for head in 0..heads {
                let cols = s![.., head * dh..(head + 1) * dh];
                let mut p = q.slice(cols).dot(&k.slice(cols).t()) * scale;
                softmax_rows(&mut p);
                context.slice_mut(cols).assign(&p.dot(&v.slice(cols)));
                probs.push(p);
            }
            let attn = linear(&context, &layer.wo, &layer.bo);
            let (h1, ln1) = layer_norm(&(&x + &attn), &layer.ln1_g, &layer.ln1_b);
            let ff_pre = linear(&h1, &layer.w1, &layer.b1);
            let ff_act = ff_pre.mapv(gelu);
            let ff = linear(&ff_act, &layer.w2, &layer.b2);
            let (out, ln2) = layer_norm(&(&h1 + &ff), &layer.ln2_g, &layer.ln2_b);
            traces.push(LayerTrace {
                input: x,
                q,
                k,
                v,
                probs,
                context,
                ln1,
                h1,
                ff_pre,
                ff_act,
                ln2,
            });
            x = out;
        }
        (
            x,
            Trace {
                ids: ids.to_vec(),
                emb_ln,
                layers: traces,
            },
        )
    }

    /// Accumulates into `grads` the parameter gradient given the gradient of
    /// the loss with respect to the final hidden states.
    pub fn backward(&self, trace: &Trace, d_out: ArrayView2<'_, f64>, grads: &mut Tower) {
        let dh = self.config.head_dim();
        let scale = 1.0 / (dh as f64).sqrt();
        let mut d = d_out.to_owned();

        for ((layer, lt), g) in self
            .layers
            .iter()
            .zip(&trace.layers)
            .zip(grads.layers.iter_mut())
            .rev()
        {
            let d_sum2 = layer_norm_backward(&lt.ln2, &d, &layer.ln2_g, &mut g.ln2_g, &mut g.ln2_b);
            let d_act = linear_backward(&lt.ff_act, &layer.w2, &d_sum2, &mut g.w2, &mut g.b2);
            let mut d_pre = d_act;
            Zip::from(&mut d_pre)
                .and(&lt.ff_pre)
                .for_each(|dp, &x| *dp *= gelu_grad(x));
            let mut d_h1 = linear_backward(&lt.h1, &layer.w1, &d_pre, &mut g.w1, &mut g.b1);
            d_h1 += &d_sum2;

            let d_sum1 = layer_norm_backward(&lt.ln1, &d_h1, &layer.ln1_g, &mut g.ln1_g, &mut g.ln1_b);
            let d_ctx = linear_backward(&lt.context, &layer.wo, &d_sum1, &mut g.wo, &mut g.bo);

            let mut dq = Array2::zeros(lt.q.raw_dim());
            let mut dk = Array2::zeros(lt.k.raw_dim());
            let mut dv = Array2::zeros(lt.v.raw_dim());
            for (head, p) in lt.probs.iter().enumerate() {
                let cols = s![.., head * dh..(head + 1) * dh];
                let d_ctx_h = d_ctx.slice(cols);
                let dp = d_ctx_h.dot(&lt.v.slice(cols).t());
                dv.slice_mut(cols).assign(&p.t().dot(&d_ctx_h));
                // softmax backward, row by row: dS = P ⊙ (dP - Σ dP⊙P)
                let mut ds = dp;
                for (mut ds_row, p_row) in ds.rows_mut().into_iter().zip(p.rows()) {
                    let inner: f64 = ds_row.iter().zip(p_row.iter()).map(|(a, b)| a * b).sum();
                    Zip::from(&mut ds_row)
                        .and(&p_row)
                        .for_each(|x, &pv| *x = pv * (*x - inner) * scale);
                }
                dq.slice_mut(cols).assign(&ds.dot(&lt.k.slice(cols)));
                dk.slice_mut(cols).assign(&ds.t().dot(&lt.q.slice(cols)));
            }

            let mut d_x = d_sum1;
            d_x += &linear_backward(&lt.input, &layer.wq, &dq, &mut g.wq, &mut g.bq);
            d_x += &linear_backward(&lt.input, &layer.wk, &dk, &mut g.wk, &mut g.bk);
            d_x += &linear_backward(&lt.input, &layer.wv, &dv, &mut g.wv, &mut g.bv);
            d = d_x;
        }

        let d_emb = layer_norm_backward(
            &trace.emb_ln,
            &d,
            &self.emb_ln_g,
            &mut grads.emb_ln_g,
            &mut grads.emb_ln_b,
        );
        for (pos, (row, &id)) in d_emb.rows().into_iter().zip(&trace.ids).enumerate() {
            let mut tok = grads.token_emb.row_mut(id as usize);
            tok += &row;
            let mut p = grads.pos_emb.row_mut(pos);
            p += &row;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config() -> TowerConfig {
        TowerConfig {
            vocab_size: 11,
            max_positions: 8,
            hidden: 8,
            layers: 2,
            heads: 2,
            ffn: 12,
        }
    }

    /// A tower with larger weights than the default init so every path
    /// carries a visible gradient.
    fn tower(seed: u64) -> Tower {
        let mut t = Tower::random(config(), seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
        let normal = Normal::new(0.0, 0.4).unwrap();
        for mut p in t.tensors_mut() {
            p.mapv_inplace(|x| x + normal.sample(&mut rng));
        }
        t
    }

    /// Scalar probe: a fixed random projection of every output row.
    fn probe(out: &Array2<f64>, weights: &Array2<f64>) -> f64 {
        (out * weights).sum()
    }

    #[test]
    fn backward_matches_finite_differences() {
        let ids = [2u32, 7, 3, 9, 1];
        let mut t = tower(3);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let weights = Array2::from_shape_fn((ids.len(), 8), |_| normal.sample(&mut rng));

        let (out, trace) = t.forward(&ids);
        let mut grads = t.zeros_like();
        t.backward(&trace, weights.view(), &mut grads);
        let _ = out;

        let analytic: Vec<Vec<f64>> = grads
            .tensors()
            .into_iter()
            .map(|(_, g)| g.iter().copied().collect())
            .collect();
        let h = 1e-5;
        let mut checked = 0;
        let n_tensors = analytic.len();
        for ti in 0..n_tensors {
            let len = analytic[ti].len();
            // every entry of small tensors, a stride through large ones
            let stride = (len / 12).max(1);
            for k in (0..len).step_by(stride) {
                let orig = t.tensors()[ti].1.iter().nth(k).copied().unwrap();
                let set = |t: &mut Tower, v: f64| {
                    *t.tensors_mut()[ti].iter_mut().nth(k).unwrap() = v;
                };
                set(&mut t, orig + h);
                let plus = probe(&t.forward(&ids).0, &weights);
                set(&mut t, orig - h);
                let minus = probe(&t.forward(&ids).0, &weights);
                set(&mut t, orig);
                let numeric = (plus - minus) / (2.0 * h);
                let a = analytic[ti][k];
                let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-3);
                assert!(
                    err < 1e-5,
                    "tensor {} entry {k}: analytic {a} numeric {numeric}",
                    t.tensors()[ti].0
                );
                checked += 1;
            }
        }
        assert!(checked > 200);
    }

    #[test]
    fn unused_rows_get_no_gradient() {
        let t = tower(1);
        let (_, trace) = t.forward(&[2, 4]);
        let mut grads = t.zeros_like();
        let d = Array2::ones((2, 8));
        t.backward(&trace, d.view(), &mut grads);
        assert!(grads.token_emb.row(5).iter().all(|&x| x == 0.0));
        assert!(grads.pos_emb.row(3).iter().all(|&x| x == 0.0));
        assert!(grads.token_emb.row(4).iter().any(|&x| x != 0.0));
    }

    #[test]
    fn random_init_is_seeded() {
        assert_eq!(Tower::random(config(), 5), Tower::random(config(), 5));
        assert_ne!(Tower::random(config(), 5), Tower::random(config(), 6));
        let t = Tower::random(config(), 5);
        assert!(t.layers[0].ln1_g.iter().all(|&g| g == 1.0));
        assert!(t.layers[1].b1.iter().all(|&b| b == 0.0));
        assert_eq!(t.tensors().len(), 4 + 2 * 16);
    }
}
