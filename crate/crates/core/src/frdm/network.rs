//! Time-conditioned residual temporal convolution network with hand-written
//! backpropagation over a flat parameter vector.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, ArrayViewMut2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::motion::features::FEATURE_DIM;

/// Kernel width of every temporal convolution.
const KERNEL: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DenoiserConfig {
    /// Channel width of the hidden sequence.
    pub hidden: usize,
    /// Residual blocks; block `i` uses dilation `2^(i % 4)`.
    pub blocks: usize,
    /// Sinusoid frequencies of the step embedding (gives `2 * time_features` inputs).
    pub time_features: usize,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        DenoiserConfig {
            hidden: 48,
            blocks: 4,
            time_features: 8,
        }
    }
}

impl DenoiserConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 {
            return Err(Error::config("denoiser.hidden", "must be at least 1"));
        }
        if self.time_features == 0 {
            return Err(Error::config("denoiser.time_features", "must be at least 1"));
        }
        if self.param_count() > 1_000_000 {
            return Err(Error::config(
                "denoiser",
                format!("{} parameters exceeds the 1M budget", self.param_count()),
            ));
        }
        Ok(())
    }

    pub fn dilation(block: usize) -> usize {
        1 << (block % 4)
    }

    pub fn param_count(&self) -> usize {
        Layout::new(self).total
    }
}

/// Offsets of each tensor in the flat parameter vector.
#[derive(Debug, Clone)]
struct Layout {
    hidden: usize,
    time_in: usize,
    w_time: usize,
    b_time: usize,
    w_in: usize,
    b_in: usize,
    blocks: Vec<BlockLayout>,
    w_out: usize,
    b_out: usize,
    total: usize,
}

#[derive(Debug, Clone, Copy)]
struct BlockLayout {
    w_conv: usize,
    b_conv: usize,
    w_ctx: usize,
    w_proj: usize,
    b_proj: usize,
    dilation: usize,
}

impl Layout {
    fn new(cfg: &DenoiserConfig) -> Self {
        let h = cfg.hidden;
        let time_in = 2 * cfg.time_features;
        let mut at = 0;
        let mut take = |n: usize| {
            let o = at;
            at += n;
            o
        };
        let w_time = take(time_in * h);
        let b_time = take(h);
        let w_in = take(FEATURE_DIM * h);
        let b_in = take(h);
        let blocks = (0..cfg.blocks)
            .map(|i| BlockLayout {
                w_conv: take(KERNEL * h * h),
                b_conv: take(h),
                w_ctx: take(h * h),
                w_proj: take(h * h),
                b_proj: take(h),
                dilation: DenoiserConfig::dilation(i),
            })
            .collect();
        let w_out = take(h * FEATURE_DIM);
        let b_out = take(FEATURE_DIM);
        Layout {
            hidden: h,
            time_in,
            w_time,
            b_time,
            w_in,
            b_in,
            blocks,
            w_out,
            b_out,
            total: at,
        }
    }
}

fn mat(p: &[f64], at: usize, rows: usize, cols: usize) -> ArrayView2<'_, f64> {
    ArrayView2::from_shape((rows, cols), &p[at..at + rows * cols]).expect("layout")
}

fn mat_mut(p: &mut [f64], at: usize, rows: usize, cols: usize) -> ArrayViewMut2<'_, f64> {
    ArrayViewMut2::from_shape((rows, cols), &mut p[at..at + rows * cols]).expect("layout")
}

fn vec_view(p: &[f64], at: usize, n: usize) -> ArrayView1<'_, f64> {
    ArrayView1::from(&p[at..at + n])
}

fn add_to(p: &mut [f64], at: usize, v: ArrayView1<f64>) {
    for (dst, x) in p[at..at + v.len()].iter_mut().zip(v.iter()) {
        *dst += x;
    }
}

fn silu(x: f64) -> f64 {
    x / (1.0 + (-x).exp())
}

fn silu_grad(x: f64) -> f64 {
    let s = 1.0 / (1.0 + (-x).exp());
    s * (1.0 + x * (1.0 - s))
}

/// Sinusoidal embedding of a diffusion step.
pub fn step_embedding(t: usize, features: usize) -> Array1<f64> {
    let mut e = Array1::zeros(2 * features);
    for k in 0..features {
        let freq = (-(k as f64) * (1000f64).ln() / features as f64).exp();
        let a = t as f64 * freq;
        e[k] = a.sin();
        e[features + k] = a.cos();
    }
    e
}

/// Adds `src` shifted by `shift` rows into `dst`: `dst[t] += src[t + shift]`
/// where the source row exists (zero padding).
fn add_shifted(dst: &mut Array2<f64>, src: &Array2<f64>, shift: isize) {
    let len = dst.nrows() as isize;
    let lo = (-shift).max(0);
    let hi = (len - shift).min(len);
    if lo >= hi {
        return;
    }
    let mut d = dst.slice_mut(s![lo..hi, ..]);
    d += &src.slice(s![lo + shift..hi + shift, ..]);
}

/// The denoiser `f_theta(x, t)`: `L x 259` in, `L x 259` out.
#[derive(Debug, Clone, PartialEq)]
pub struct Denoiser {
    config: DenoiserConfig,
    params: Vec<f64>,
}

/// Activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    x: Array2<f64>,
    emb: Array1<f64>,
    te_pre: Array1<f64>,
    /// Block inputs; the last entry is the head input.
    hs: Vec<Array2<f64>>,
    pre: Vec<Array2<f64>>,
    means: Vec<Array1<f64>>,
}

impl Denoiser {
    /// Random initialization with a small output head.
    pub fn new(config: DenoiserConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config);
        let mut params = vec![0.0; layout.total];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = layout.hidden;
        let mut fill = |params: &mut [f64], at: usize, n: usize, fan_in: usize, gain: f64| {
            let normal = Normal::new(0.0, gain / (fan_in as f64).sqrt()).expect("finite std");
            for v in &mut params[at..at + n] {
                *v = normal.sample(&mut rng);
            }
        };
        fill(&mut params, layout.w_time, layout.time_in * h, layout.time_in, 1.0);
        fill(&mut params, layout.w_in, FEATURE_DIM * h, FEATURE_DIM, 1.0);
        for b in &layout.blocks {
            fill(&mut params, b.w_conv, KERNEL * h * h, KERNEL * h, 1.0);
            fill(&mut params, b.w_ctx, h * h, h, 0.5);
            fill(&mut params, b.w_proj, h * h, h, 0.5);
        }
        fill(&mut params, layout.w_out, h * FEATURE_DIM, h, 0.1);
        Ok(Denoiser { config, params })
    }

    pub fn from_params(config: DenoiserConfig, params: Vec<f64>) -> Result<Self> {
        config.validate()?;
        let expected = config.param_count();
        if params.len() != expected {
            return Err(Error::Shape(format!(
                "denoiser expects {expected} parameters, got {}",
                params.len()
            )));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::ModelState("non-finite parameter".into()));
        }
        Ok(Denoiser { config, params })
    }

    pub fn config(&self) -> &DenoiserConfig {
        &self.config
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn forward(&self, x: ArrayView2<f64>, t: usize) -> Result<Array2<f64>> {
        Ok(self.forward_cached(x, t)?.0)
    }

    pub fn forward_cached(&self, x: ArrayView2<f64>, t: usize) -> Result<(Array2<f64>, ForwardCache)> {
        if x.ncols() != FEATURE_DIM || x.nrows() == 0 {
            return Err(Error::Shape(format!("denoiser input must be L x {FEATURE_DIM}, got {:?}", x.dim())));
        }
        let layout = Layout::new(&self.config);
        let p = &self.params;
        let h = layout.hidden;
        let len = x.nrows();

        let emb = step_embedding(t, self.config.time_features);
        let te_pre = emb.dot(&mat(p, layout.w_time, layout.time_in, h)) + vec_view(p, layout.b_time, h);
        let te = te_pre.mapv(silu);

        let mut hcur = x.dot(&mat(p, layout.w_in, FEATURE_DIM, h));
        hcur += &(&vec_view(p, layout.b_in, h) + &te);

        let mut hs = Vec::with_capacity(layout.blocks.len() + 1);
        let mut pre = Vec::with_capacity(layout.blocks.len());
        let mut means = Vec::with_capacity(layout.blocks.len());
        for b in &layout.blocks {
            let mean = hcur.mean_axis(Axis(0)).expect("non-empty");
            let mut c = Array2::zeros((len, h));
            for k in 0..KERNEL {
                let y = hcur.dot(&mat(p, b.w_conv + k * h * h, h, h));
                add_shifted(&mut c, &y, (k as isize - 1) * b.dilation as isize);
            }
            c += &(&vec_view(p, b.b_conv, h) + &mean.dot(&mat(p, b.w_ctx, h, h)));
            let a = c.mapv(silu);
            let mut next = a.dot(&mat(p, b.w_proj, h, h));
            next += &vec_view(p, b.b_proj, h);
            next += &hcur;
            hs.push(hcur);
            pre.push(c);
            means.push(mean);
            hcur = next;
        }
        let mut out = hcur.dot(&mat(p, layout.w_out, h, FEATURE_DIM));
        out += &vec_view(p, layout.b_out, FEATURE_DIM);
        hs.push(hcur);
        let cache = ForwardCache {
            x: x.to_owned(),
            emb,
            te_pre,
            hs,
            pre,
            means,
        };
        Ok((out, cache))
    }

    /// Accumulates `dL/dtheta` into `grad` given `dL/dout`.
    pub fn backward(&self, cache: &ForwardCache, d_out: ArrayView2<f64>, grad: &mut [f64]) {
        let layout = Layout::new(&self.config);
        let p = &self.params;
        let h = layout.hidden;
        let len = d_out.nrows();
        debug_assert_eq!(grad.len(), p.len());

        let h_last = cache.hs.last().expect("head input");
        mat_mut(grad, layout.w_out, h, FEATURE_DIM).scaled_add(1.0, &h_last.t().dot(&d_out));
        add_to(grad, layout.b_out, d_out.sum_axis(Axis(0)).view());
        let mut dh = d_out.dot(&mat(p, layout.w_out, h, FEATURE_DIM).t());

        for (i, b) in layout.blocks.iter().enumerate().rev() {
            let hin = &cache.hs[i];
            let c = &cache.pre[i];
            let a = c.mapv(silu);
            // residual: next = hin + a W_proj + b_proj
            mat_mut(grad, b.w_proj, h, h).scaled_add(1.0, &a.t().dot(&dh));
            add_to(grad, b.b_proj, dh.sum_axis(Axis(0)).view());
            let mut dc = dh.dot(&mat(p, b.w_proj, h, h).t());
            dc.zip_mut_with(c, |g, x| *g *= silu_grad(*x));

            let mut dhin = dh;
            let dctx = dc.sum_axis(Axis(0));
            add_to(grad, b.b_conv, dctx.view());
            {
                let mut gw = mat_mut(grad, b.w_ctx, h, h);
                for r in 0..h {
                    gw.row_mut(r).scaled_add(cache.means[i][r], &dctx);
                }
            }
            let dmean = mat(p, b.w_ctx, h, h).dot(&dctx) / len as f64;
            dhin += &dmean;
            for k in 0..KERNEL {
                let shift = (k as isize - 1) * b.dilation as isize;
                // c[t] += y[t + shift]  =>  dy[t + shift] += dc[t]
                let mut dy = Array2::zeros((len, h));
                add_shifted(&mut dy, &dc, -shift);
                let at = b.w_conv + k * h * h;
                mat_mut(grad, at, h, h).scaled_add(1.0, &hin.t().dot(&dy));
                dhin += &dy.dot(&mat(p, at, h, h).t());
            }
            dh = dhin;
        }

        mat_mut(grad, layout.w_in, FEATURE_DIM, h).scaled_add(1.0, &cache.x.t().dot(&dh));
        let dbias = dh.sum_axis(Axis(0));
        add_to(grad, layout.b_in, dbias.view());
        let dte_pre: Array1<f64> = dbias
            .iter()
            .zip(cache.te_pre.iter())
            .map(|(g, x)| g * silu_grad(*x))
            .collect();
        {
            let mut gw = mat_mut(grad, layout.w_time, layout.time_in, h);
            for r in 0..layout.time_in {
                gw.row_mut(r).scaled_add(cache.emb[r], &dte_pre);
            }
        }
        add_to(grad, layout.b_time, dte_pre.view());
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> DenoiserConfig {
        DenoiserConfig {
            hidden: 1,
            blocks: 2,
            time_features: 2,
        }
    }

    fn perturbed(seed: u64, cfg: DenoiserConfig) -> Denoiser {
        // non-zero head so every tensor receives gradient
        let mut d = Denoiser::new(cfg, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 1);
        let normal = Normal::new(0.0, 0.3).unwrap();
        for p in d.params_mut() {
            *p += normal.sample(&mut rng);
        }
        d
    }

    #[test]
    fn parameter_budget() {
        assert!(tiny().param_count() <= 1000);
        let big = DenoiserConfig {
            hidden: 64,
            ..DenoiserConfig::default()
        };
        assert!(big.param_count() < 1_000_000);
        assert!(DenoiserConfig { hidden: 400, blocks: 8, time_features: 8 }.validate().is_err());
    }

    #[test]
    fn output_shape_and_determinism() {
        let d = Denoiser::new(DenoiserConfig::default(), 3).unwrap();
        let x = Array2::from_shape_fn((20, FEATURE_DIM), |(t, j)| ((t * 7 + j) as f64 * 0.01).sin());
        let a = d.forward(x.view(), 5).unwrap();
        let b = d.forward(x.view(), 5).unwrap();
        assert_eq!(a.dim(), (20, FEATURE_DIM));
        assert_eq!(a, b);
        assert!(d.forward(Array2::zeros((3, 10)).view(), 1).is_err());
    }

    #[test]
    fn parameter_gradient_matches_finite_differences() {
        let cfg = tiny();
        let net = perturbed(11, cfg);
        let x = Array2::from_shape_fn((9, FEATURE_DIM), |(t, j)| ((t * 31 + j * 7) as f64 * 0.37).sin());
        let w = Array2::from_shape_fn((9, FEATURE_DIM), |(t, j)| ((t * 3 + j * 5) as f64 * 0.11).cos());
        let loss = |n: &Denoiser| (&n.forward(x.view(), 7).unwrap() * &w).sum();
        let (_, cache) = net.forward_cached(x.view(), 7).unwrap();
        let mut grad = vec![0.0; net.num_params()];
        net.backward(&cache, w.view(), &mut grad);
        let eps = 1e-6;
        for i in 0..net.num_params() {
            let mut plus = net.clone();
            plus.params_mut()[i] += eps;
            let mut minus = net.clone();
            minus.params_mut()[i] -= eps;
            let fd = (loss(&plus) - loss(&minus)) / (2.0 * eps);
            let err = (fd - grad[i]).abs() / fd.abs().max(grad[i].abs()).max(1e-6);
            assert!(err < 1e-4, "param {i}: fd {fd} analytic {}", grad[i]);
        }
    }
}
