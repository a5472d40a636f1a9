//! Reference fusion and real-FFT frequency bands.
//!
//! Spectra are half spectra of length `N/2 + 1` per channel. Band energies use
//! the one-sided convention: interior bins count twice, DC and (for even `N`)
//! the Nyquist bin once, all scaled by `1/N`, so the energies sum to the
//! time-domain energy `sum x^2`.

use std::ops::Range;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{Error, Result};

/// `omega_i = i / sum_{j=1..k} j` for `i = 1..k`; later references weigh more.
pub fn fusion_weights(k: usize) -> Result<Vec<f64>> {
    if k == 0 {
        return Err(Error::EmptyInput("no references to fuse".into()));
    }
    let total = (k * (k + 1) / 2) as f64;
    Ok((1..=k).map(|i| i as f64 / total).collect())
}

/// Weighted sum of references ordered from least to most relevant.
pub fn fuse_references(refs: &[ArrayView2<f64>]) -> Result<Array2<f64>> {
    let weights = fusion_weights(refs.len())?;
    let shape = refs[0].dim();
    if let Some(r) = refs.iter().find(|r| r.dim() != shape) {
        return Err(Error::Shape(format!(
            "reference shapes differ: {:?} vs {:?}",
            shape,
            r.dim()
        )));
    }
    let mut out = Array2::zeros(shape);
    for (w, r) in weights.iter().zip(refs) {
        out.scaled_add(*w, r);
    }
    Ok(out)
}

/// Number of half-spectrum rows for a length-`n` real signal.
pub fn half_spectrum_len(n: usize) -> usize {
    n / 2 + 1
}

/// Contiguous row ranges of `bands` bands over `n_q` rows, lowest first. The
/// lowest band absorbs the remainder when `n_q` is not divisible.
pub fn band_ranges(n_q: usize, bands: usize) -> Result<Vec<Range<usize>>> {
    if bands == 0 || bands > n_q {
        return Err(Error::config(
            "bands",
            format!("band count {bands} must lie in 1..={n_q}"),
        ));
    }
    let width = n_q / bands;
    let first = width + n_q % bands;
    let mut out = Vec::with_capacity(bands);
    out.push(0..first);
    for b in 1..bands {
        let start = first + (b - 1) * width;
        out.push(start..start + width);
    }
    Ok(out)
}

/// Column-wise real FFT: `N x C` signal to `N_q x C` half spectrum.
pub fn rfft(x: ArrayView2<f64>) -> Array2<Complex64> {
    let (n, c) = x.dim();
    let n_q = half_spectrum_len(n);
    let fft = FftPlanner::new().plan_fft_forward(n);
    let mut out = Array2::zeros((n_q, c));
    let mut buf = vec![Complex64::default(); n];
    for col in 0..c {
        for (b, v) in buf.iter_mut().zip(x.column(col)) {
            *b = Complex64::new(*v, 0.0);
        }
        fft.process(&mut buf);
        for k in 0..n_q {
            out[[k, col]] = buf[k];
        }
    }
    out
}

/// Inverse of [`rfft`] for a signal of length `n`.
pub fn irfft(spec: &Array2<Complex64>, n: usize) -> Result<Array2<f64>> {
    let (n_q, c) = spec.dim();
    if n_q != half_spectrum_len(n) {
        return Err(Error::Shape(format!(
            "{n_q} spectrum rows do not match signal length {n}"
        )));
    }
    let ifft = FftPlanner::new().plan_fft_inverse(n);
    let mut out = Array2::zeros((n, c));
    let mut buf = vec![Complex64::default(); n];
    let scale = 1.0 / n as f64;
    for col in 0..c {
        for k in 0..n {
            buf[k] = if k < n_q {
                spec[[k, col]]
            } else {
                spec[[n - k, col]].conj()
            };
        }
        ifft.process(&mut buf);
        for t in 0..n {
            out[[t, col]] = buf[t].re * scale;
        }
    }
    Ok(out)
}

/// A half spectrum partitioned into contiguous frequency bands.
#[derive(Debug, Clone, PartialEq)]
pub struct BandSpectrum {
    pub coefficients: Array2<Complex64>,
    pub bands: Vec<Range<usize>>,
    pub signal_len: usize,
}

impl BandSpectrum {
    pub fn num_bands(&self) -> usize {
        self.bands.len()
    }

    /// The full spectrum with every row outside `band` zeroed.
    pub fn masked(&self, band: usize) -> Array2<Complex64> {
        let mut out = Array2::zeros(self.coefficients.raw_dim());
        let rows = self.bands[band].clone();
        out.slice_mut(ndarray::s![rows.clone(), ..])
            .assign(&self.coefficients.slice(ndarray::s![rows, ..]));
        out
    }

    pub fn masked_spectra(&self) -> Vec<Array2<Complex64>> {
        (0..self.num_bands()).map(|b| self.masked(b)).collect()
    }

    /// Time-domain signal of one band.
    pub fn band_signal(&self, band: usize) -> Array2<f64> {
        irfft(&self.masked(band), self.signal_len).expect("consistent spectrum")
    }

    /// Parseval-scaled energy of each band.
    pub fn energies(&self) -> Vec<f64> {
        let n = self.signal_len;
        let weight = |k: usize| {
            if k == 0 || (n.is_multiple_of(2) && k == n / 2) {
                1.0
            } else {
                2.0
            }
        };
        self.bands
            .iter()
            .map(|rows| {
                rows.clone()
                    .map(|k| weight(k) * self.coefficients.row(k).iter().map(|z| z.norm_sqr()).sum::<f64>())
                    .sum::<f64>()
                    / n as f64
            })
            .collect()
    }
}

/// Real FFT of `x` (`N x C`) split into `bands` contiguous frequency bands.
pub fn band_split(x: ArrayView2<f64>, bands: usize) -> Result<BandSpectrum> {
    let n = x.nrows();
    if n < 2 || x.ncols() == 0 {
        return Err(Error::EmptyInput(format!(
            "band split needs at least 2 frames and 1 channel, got {:?}",
            x.dim()
        )));
    }
    let bands = band_ranges(half_spectrum_len(n), bands)?;
    Ok(BandSpectrum {
        coefficients: rfft(x),
        bands,
        signal_len: n,
    })
}

/// Fraction of spectral energy in each band.
pub fn band_energy(spec: &BandSpectrum) -> Result<Vec<f64>> {
    let e = spec.energies();
    let total: f64 = e.iter().sum();
    if !(total > 0.0) {
        return Err(Error::ZeroSignal);
    }
    Ok(e.into_iter().map(|v| v / total).collect())
}

/// Softmax over band logits.
pub fn gate(logits: &[f64]) -> Vec<f64> {
    const LIMIT: f64 = 1e300;
    let clamped: Vec<f64> = logits
        .iter()
        .map(|v| if v.is_nan() { 0.0 } else { v.clamp(-LIMIT, LIMIT) })
        .collect();
    let max = clamped.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = clamped.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exp.iter().sum();
    exp.into_iter().map(|v| v / sum).collect()
}

/// Weighted sum of per-band expert outputs.
pub fn band_merge(outputs: &[Array2<f64>], weights: &[f64]) -> Result<Array2<f64>> {
    if outputs.is_empty() {
        return Err(Error::EmptyInput("no band outputs to merge".into()));
    }
    if outputs.len() != weights.len() {
        return Err(Error::Shape(format!(
            "{} band outputs for {} weights",
            outputs.len(),
            weights.len()
        )));
    }
    let shape = outputs[0].dim();
    let mut out = Array2::zeros(shape);
    for (o, w) in outputs.iter().zip(weights) {
        if o.dim() != shape {
            return Err(Error::Shape(format!("band output {:?} vs {:?}", o.dim(), shape)));
        }
        out.scaled_add(*w, o);
    }
    Ok(out)
}

/// A per-band transform of an `N x C` band signal.
pub trait BandExpert: Send + Sync {
    fn apply(&self, band: usize, signal: ArrayView2<f64>) -> Array2<f64>;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityExpert;

impl BandExpert for IdentityExpert {
    fn apply(&self, _band: usize, signal: ArrayView2<f64>) -> Array2<f64> {
        signal.to_owned()
    }
}

/// Per-channel affine map `y = x W + b` shared across frames.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearExpert {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl LinearExpert {
    pub fn identity(channels: usize) -> Self {
        LinearExpert {
            weight: Array2::eye(channels),
            bias: Array1::zeros(channels),
        }
    }

    pub fn zero(channels: usize) -> Self {
        LinearExpert {
            weight: Array2::zeros((channels, channels)),
            bias: Array1::zeros(channels),
        }
    }
}

impl BandExpert for LinearExpert {
    fn apply(&self, _band: usize, signal: ArrayView2<f64>) -> Array2<f64> {
        signal.dot(&self.weight) + &self.bias
    }
}

/// Linear gate on the time-averaged input followed by a softmax.
#[derive(Debug, Clone, PartialEq)]
pub struct GatingNetwork {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl GatingNetwork {
    /// Gate with zero weights: uniform band weights.
    pub fn uniform(channels: usize, bands: usize) -> Self {
        GatingNetwork {
            weight: Array2::zeros((bands, channels)),
            bias: Array1::zeros(bands),
        }
    }

    pub fn weights(&self, x: ArrayView2<f64>) -> Result<Vec<f64>> {
        if x.ncols() != self.weight.ncols() {
            return Err(Error::Shape(format!(
                "gate expects {} channels, got {}",
                self.weight.ncols(),
                x.ncols()
            )));
        }
        let pooled = x
            .mean_axis(Axis(0))
            .ok_or_else(|| Error::EmptyInput("gate input has no frames".into()))?;
        let logits = self.weight.dot(&pooled) + &self.bias;
        Ok(gate(logits.as_slice().expect("contiguous")))
    }
}

/// Splits `x` into bands, runs one expert per band on the band signal and
/// merges the results with `weights`.
pub fn mixture_of_bands(
    x: ArrayView2<f64>,
    experts: &[&dyn BandExpert],
    weights: &[f64],
) -> Result<Array2<f64>> {
    let spec = band_split(x, experts.len())?;
    let outputs: Vec<Array2<f64>> = experts
        .iter()
        .enumerate()
        .map(|(b, e)| e.apply(b, spec.band_signal(b).view()))
        .collect();
    band_merge(&outputs, weights)
}
