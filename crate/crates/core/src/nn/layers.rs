//! Layers with explicit forward caches and hand-derived backward passes.
//!
//! Every layer only stores [`TensorRef`]s; parameter values and gradient
//! accumulators are flat buffers passed in by the caller, so a whole model is
//! one `Vec<f64>` and its gradient another `Vec<f64>` of the same layout.

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2, ArrayView2, Axis, Zip};

use super::params::{Init, ParamLayout, TensorRef};

const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy)]
pub struct Linear {
    pub w: TensorRef,
    pub b: TensorRef,
}

impl Linear {
    pub fn new(layout: &mut ParamLayout, name: &str, fan_in: usize, fan_out: usize) -> Self {
        let init = Init::Uniform { fan_in };
        Self {
            w: layout.add(format!("{name}.weight"), fan_in, fan_out, init),
            b: layout.add(format!("{name}.bias"), 1, fan_out, init),
        }
    }

    pub fn forward(&self, params: &[f64], x: &ArrayView2<f64>) -> Array2<f64> {
        let mut y = x.dot(&self.w.view(params));
        y += &self.b.vector(params);
        y
    }

    /// Accumulates weight/bias gradients and returns the input gradient.
    pub fn backward(&self, params: &[f64], grads: &mut [f64], x: &ArrayView2<f64>, gy: &Array2<f64>) -> Array2<f64> {
        general_mat_mul(1.0, &x.t(), gy, 1.0, &mut self.w.view_mut(grads));
        let mut gb = self.b.vector_mut(grads);
        gb += &gy.sum_axis(Axis(0));
        gy.dot(&self.w.view(params).t())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LayerNorm {
    pub gain: TensorRef,
    pub bias: TensorRef,
}

pub struct LayerNormCache {
    xhat: Array2<f64>,
    inv_std: Array1<f64>,
}

impl LayerNorm {
    pub fn new(layout: &mut ParamLayout, name: &str, dim: usize) -> Self {
        Self {
            gain: layout.add(format!("{name}.gain"), 1, dim, Init::Ones),
            bias: layout.add(format!("{name}.bias"), 1, dim, Init::Zeros),
        }
    }

    pub fn forward(&self, params: &[f64], x: &ArrayView2<f64>) -> (Array2<f64>, LayerNormCache) {
        let d = x.ncols() as f64;
        let mut xhat = x.to_owned();
        let mut inv_std = Array1::zeros(x.nrows());
        for (mut row, is) in xhat.rows_mut().into_iter().zip(inv_std.iter_mut()) {
            let mean = row.sum() / d;
            row -= mean;
            let var = row.iter().map(|v| v * v).sum::<f64>() / d;
            *is = 1.0 / (var + LN_EPS).sqrt();
            row *= *is;
        }
        let mut y = &xhat * &self.gain.vector(params);
        y += &self.bias.vector(params);
        (y, LayerNormCache { xhat, inv_std })
    }

    pub fn backward(&self, params: &[f64], grads: &mut [f64], cache: &LayerNormCache, gy: &Array2<f64>) -> Array2<f64> {
        {
            let mut gg = self.gain.vector_mut(grads);
            gg += &(gy * &cache.xhat).sum_axis(Axis(0));
        }
        {
            let mut gb = self.bias.vector_mut(grads);
            gb += &gy.sum_axis(Axis(0));
        }
        let d = gy.ncols() as f64;
        let mut gx = gy * &self.gain.vector(params);
        for ((mut g, xh), &is) in gx.rows_mut().into_iter().zip(cache.xhat.rows()).zip(&cache.inv_std) {
            let mean_g = g.sum() / d;
            let mean_gx = g.iter().zip(xh).map(|(a, b)| a * b).sum::<f64>() / d;
            Zip::from(&mut g).and(&xh).for_each(|gv, &x| {
                *gv = is * (*gv - mean_g - x * mean_gx);
            });
        }
        gx
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

/// Tanh approximation of GELU.
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

pub fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}

#[derive(Debug, Clone, Copy)]
pub struct FeedForward {
    pub up: Linear,
    pub down: Linear,
}

pub struct FeedForwardCache {
    pre: Array2<f64>,
    act: Array2<f64>,
}

impl FeedForward {
    pub fn new(layout: &mut ParamLayout, name: &str, dim: usize, hidden: usize) -> Self {
        Self {
            up: Linear::new(layout, &format!("{name}.up"), dim, hidden),
            down: Linear::new(layout, &format!("{name}.down"), hidden, dim),
        }
    }

    pub fn forward(&self, params: &[f64], x: &ArrayView2<f64>) -> (Array2<f64>, FeedForwardCache) {
        let pre = self.up.forward(params, x);
        let act = pre.mapv(gelu);
        let y = self.down.forward(params, &act.view());
        (y, FeedForwardCache { pre, act })
    }

    pub fn backward(
        &self,
        params: &[f64],
        grads: &mut [f64],
        x: &ArrayView2<f64>,
        cache: &FeedForwardCache,
        gy: &Array2<f64>,
    ) -> Array2<f64> {
        let mut g_act = self.down.backward(params, grads, &cache.act.view(), gy);
        Zip::from(&mut g_act).and(&cache.pre).for_each(|g, &p| *g *= gelu_grad(p));
        self.up.backward(params, grads, x, &g_act)
    }
}

/// Multi-head self-attention. Keys flagged invalid in the mask receive zero
/// attention weight from every query.
#[derive(Debug, Clone, Copy)]
pub struct SelfAttention {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
    pub heads: usize,
}

pub struct AttentionCache {
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    probs: Vec<Array2<f64>>,
    mixed: Array2<f64>,
}

impl SelfAttention {
    pub fn new(layout: &mut ParamLayout, name: &str, dim: usize, heads: usize) -> Self {
        Self {
            query: Linear::new(layout, &format!("{name}.query"), dim, dim),
            key: Linear::new(layout, &format!("{name}.key"), dim, dim),
            value: Linear::new(layout, &format!("{name}.value"), dim, dim),
            output: Linear::new(layout, &format!("{name}.output"), dim, dim),
            heads,
        }
    }

    pub fn forward(&self, params: &[f64], x: &ArrayView2<f64>, key_mask: &[bool]) -> (Array2<f64>, AttentionCache) {
        let q = self.query.forward(params, x);
        let k = self.key.forward(params, x);
        let v = self.value.forward(params, x);
        let (len, dim) = q.dim();
        let dh = dim / self.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut mixed = Array2::zeros((len, dim));
        let mut probs = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let cols = s![.., h * dh..(h + 1) * dh];
            let mut p = q.slice(cols).dot(&k.slice(cols).t());
            for mut row in p.rows_mut() {
                let mut max = f64::NEG_INFINITY;
                for (j, &valid) in key_mask.iter().enumerate() {
                    if valid {
                        max = max.max(row[j] * scale);
                    }
                }
                let mut sum = 0.0;
                for (j, &valid) in key_mask.iter().enumerate() {
                    let e = if valid { (row[j] * scale - max).exp() } else { 0.0 };
                    row[j] = e;
                    sum += e;
                }
                row /= sum;
            }
            mixed.slice_mut(cols).assign(&p.dot(&v.slice(cols)));
            probs.push(p);
        }
        let out = self.output.forward(params, &mixed.view());
        (out, AttentionCache { q, k, v, probs, mixed })
    }

    pub fn backward(
        &self,
        params: &[f64],
        grads: &mut [f64],
        x: &ArrayView2<f64>,
        cache: &AttentionCache,
        gy: &Array2<f64>,
    ) -> Array2<f64> {
        let g_mixed = self.output.backward(params, grads, &cache.mixed.view(), gy);
        let (len, dim) = cache.q.dim();
        let dh = dim / self.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut gq = Array2::zeros((len, dim));
        let mut gk = Array2::zeros((len, dim));
        let mut gv = Array2::zeros((len, dim));
        for (h, p) in cache.probs.iter().enumerate() {
            let cols = s![.., h * dh..(h + 1) * dh];
            let g_head = g_mixed.slice(cols);
            gv.slice_mut(cols).assign(&p.t().dot(&g_head));
            let mut gs = g_head.dot(&cache.v.slice(cols).t());
            // softmax backward: gS = P ⊙ (gP − Σ_j gP ⊙ P)
            for (mut g_row, p_row) in gs.rows_mut().into_iter().zip(p.rows()) {
                let dot: f64 = g_row.iter().zip(p_row).map(|(a, b)| a * b).sum();
                Zip::from(&mut g_row).and(&p_row).for_each(|g, &pv| *g = pv * (*g - dot) * scale);
            }
            gq.slice_mut(cols).assign(&gs.dot(&cache.k.slice(cols)));
            gk.slice_mut(cols).assign(&gs.t().dot(&cache.q.slice(cols)));
        }
        let mut gx = self.query.backward(params, grads, x, &gq);
        gx += &self.key.backward(params, grads, x, &gk);
        gx += &self.value.backward(params, grads, x, &gv);
        gx
    }
}

/// Pre-norm residual block: `x + Attn(LN(x))`, then `x + FFN(LN(x))`.
#[derive(Debug, Clone, Copy)]
pub struct EncoderBlock {
    pub ln_attn: LayerNorm,
    pub attn: SelfAttention,
    pub ln_ffn: LayerNorm,
    pub ffn: FeedForward,
}

pub struct BlockCache {
    ln_attn: LayerNormCache,
    h_attn: Array2<f64>,
    attn: AttentionCache,
    ln_ffn: LayerNormCache,
    h_ffn: Array2<f64>,
    ffn: FeedForwardCache,
}

impl EncoderBlock {
    pub fn new(layout: &mut ParamLayout, name: &str, dim: usize, heads: usize, ffn_dim: usize) -> Self {
        Self {
            ln_attn: LayerNorm::new(layout, &format!("{name}.ln_attn"), dim),
            attn: SelfAttention::new(layout, &format!("{name}.attn"), dim, heads),
            ln_ffn: LayerNorm::new(layout, &format!("{name}.ln_ffn"), dim),
            ffn: FeedForward::new(layout, &format!("{name}.ffn"), dim, ffn_dim),
        }
    }

    pub fn forward(&self, params: &[f64], x: Array2<f64>, key_mask: &[bool]) -> (Array2<f64>, BlockCache) {
        let (h_attn, ln_attn) = self.ln_attn.forward(params, &x.view());
        let (a, attn) = self.attn.forward(params, &h_attn.view(), key_mask);
        let x = x + a;
        let (h_ffn, ln_ffn) = self.ln_ffn.forward(params, &x.view());
        let (f, ffn) = self.ffn.forward(params, &h_ffn.view());
        let x = x + f;
        (
            x,
            BlockCache {
                ln_attn,
                h_attn,
                attn,
                ln_ffn,
                h_ffn,
                ffn,
            },
        )
    }

    pub fn backward(&self, params: &[f64], grads: &mut [f64], cache: &BlockCache, gy: Array2<f64>) -> Array2<f64> {
        let g_h = self.ffn.backward(params, grads, &cache.h_ffn.view(), &cache.ffn, &gy);
        let gx = gy + self.ln_ffn.backward(params, grads, &cache.ln_ffn, &g_h);
        let g_h = self.attn.backward(params, grads, &cache.h_attn.view(), &cache.attn, &gx);
        gx.clone() + self.ln_attn.backward(params, grads, &cache.ln_attn, &g_h)
    }
}

/// A stack of encoder blocks followed by a final layer norm.
#[derive(Debug, Clone)]
pub struct EncoderStack {
    pub blocks: Vec<EncoderBlock>,
    pub final_ln: LayerNorm,
}

pub struct StackCache {
    blocks: Vec<BlockCache>,
    final_ln: LayerNormCache,
}

impl EncoderStack {
    pub fn new(layout: &mut ParamLayout, name: &str, layers: usize, dim: usize, heads: usize, ffn_dim: usize) -> Self {
        let blocks = (0..layers)
            .map(|l| EncoderBlock::new(layout, &format!("{name}.layer{l}"), dim, heads, ffn_dim))
            .collect();
        Self {
            blocks,
            final_ln: LayerNorm::new(layout, &format!("{name}.ln_final"), dim),
        }
    }

    pub fn forward(&self, params: &[f64], x: Array2<f64>, key_mask: &[bool]) -> (Array2<f64>, StackCache) {
        let mut caches = Vec::with_capacity(self.blocks.len());
        let mut x = x;
        for block in &self.blocks {
            let (next, cache) = block.forward(params, x, key_mask);
            caches.push(cache);
            x = next;
        }
        let (y, final_ln) = self.final_ln.forward(params, &x.view());
        (
            y,
            StackCache {
                blocks: caches,
                final_ln,
            },
        )
    }

    pub fn backward(&self, params: &[f64], grads: &mut [f64], cache: &StackCache, gy: &Array2<f64>) -> Array2<f64> {
        let mut g = self.final_ln.backward(params, grads, &cache.final_ln, gy);
        for (block, bc) in self.blocks.iter().zip(&cache.blocks).rev() {
            g = block.backward(params, grads, bc, g);
        }
        g
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;
    use rand::Rng;

    fn random_input(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
        let mut rng = rng_from_seed(seed);
        Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-1.0..1.0))
    }

    /// Checks d(Σ w ⊙ f(x))/dparams and /dx against central differences.
    fn check<F, B>(layout: &ParamLayout, x: &Array2<f64>, forward: F, backward: B)
    where
        F: Fn(&[f64], &Array2<f64>) -> Array2<f64>,
        B: Fn(&[f64], &mut [f64], &Array2<f64>, &Array2<f64>) -> Array2<f64>,
    {
        let mut rng = rng_from_seed(99);
        let mut params = layout.initialize(&mut rng);
        for p in params.iter_mut() {
            *p += rng.gen_range(-0.1..0.1);
        }
        let y = forward(&params, x);
        let w = Array2::from_shape_fn(y.dim(), |_| rng.gen_range(-1.0..1.0));
        let objective = |p: &[f64], x: &Array2<f64>| (forward(p, x) * &w).sum();

        let mut grads = vec![0.0; params.len()];
        let gx = backward(&params, &mut grads, x, &w);
        let h = 1e-6;
        let rel = |a: f64, b: f64| (a - b).abs() / a.abs().max(b.abs()).max(1e-4);
        for i in 0..params.len() {
            let mut p = params.clone();
            p[i] += h;
            let up = objective(&p, x);
            p[i] -= 2.0 * h;
            let down = objective(&p, x);
            let fd = (up - down) / (2.0 * h);
            assert!(rel(fd, grads[i]) < 1e-5, "param {:?}: fd {fd} vs {}", layout.locate(i), grads[i]);
        }
        for idx in ndarray::indices(x.dim()) {
            let mut xp = x.clone();
            xp[idx] += h;
            let up = objective(&params, &xp);
            xp[idx] -= 2.0 * h;
            let down = objective(&params, &xp);
            let fd = (up - down) / (2.0 * h);
            assert!(rel(fd, gx[idx]) < 1e-5, "input {idx:?}: fd {fd} vs {}", gx[idx]);
        }
    }

    #[test]
    fn linear_gradients() {
        let mut layout = ParamLayout::default();
        let lin = Linear::new(&mut layout, "lin", 4, 3);
        check(
            &layout,
            &random_input(5, 4, 1),
            |p, x| lin.forward(p, &x.view()),
            |p, g, x, gy| lin.backward(p, g, &x.view(), gy),
        );
    }

    #[test]
    fn layer_norm_gradients() {
        let mut layout = ParamLayout::default();
        let ln = LayerNorm::new(&mut layout, "ln", 6);
        check(
            &layout,
            &random_input(4, 6, 2),
            |p, x| ln.forward(p, &x.view()).0,
            |p, g, x, gy| {
                let (_, c) = ln.forward(p, &x.view());
                ln.backward(p, g, &c, gy)
            },
        );
    }

    #[test]
    fn feed_forward_gradients() {
        let mut layout = ParamLayout::default();
        let ffn = FeedForward::new(&mut layout, "ffn", 4, 7);
        check(
            &layout,
            &random_input(3, 4, 3),
            |p, x| ffn.forward(p, &x.view()).0,
            |p, g, x, gy| {
                let (_, c) = ffn.forward(p, &x.view());
                ffn.backward(p, g, &x.view(), &c, gy)
            },
        );
    }

    #[test]
    fn attention_gradients_with_mask() {
        let mut layout = ParamLayout::default();
        let attn = SelfAttention::new(&mut layout, "attn", 6, 2);
        let mask = [true, true, false, true, false];
        check(
            &layout,
            &random_input(5, 6, 4),
            |p, x| attn.forward(p, &x.view(), &mask).0,
            |p, g, x, gy| {
                let (_, c) = attn.forward(p, &x.view(), &mask);
                attn.backward(p, g, &x.view(), &c, gy)
            },
        );
    }

    #[test]
    fn stack_gradients() {
        let mut layout = ParamLayout::default();
        let stack = EncoderStack::new(&mut layout, "enc", 2, 4, 2, 8);
        let mask = [true, false, true, true];
        check(
            &layout,
            &random_input(4, 4, 5),
            |p, x| stack.forward(p, x.clone(), &mask).0,
            |p, g, x, gy| {
                let (_, c) = stack.forward(p, x.clone(), &mask);
                stack.backward(p, g, &c, gy)
            },
        );
    }

    #[test]
    fn masked_keys_do_not_influence_valid_rows() {
        let mut layout = ParamLayout::default();
        let attn = SelfAttention::new(&mut layout, "attn", 4, 2);
        let params = layout.initialize(&mut rng_from_seed(0));
        let mask = [true, false, true];
        let a = random_input(3, 4, 6);
        let mut b = a.clone();
        b.row_mut(1).fill(5.0);
        let ya = attn.forward(&params, &a.view(), &mask).0;
        let yb = attn.forward(&params, &b.view(), &mask).0;
        assert_eq!(ya.row(0), yb.row(0));
        assert_eq!(ya.row(2), yb.row(2));
    }

    #[test]
    fn gelu_derivative() {
        for &x in &[-3.0, -0.5, 0.0, 0.7, 2.5] {
            let fd = (gelu(x + 1e-6) - gelu(x - 1e-6)) / 2e-6;
            assert!((fd - gelu_grad(x)).abs() < 1e-8);
        }
    }
}
