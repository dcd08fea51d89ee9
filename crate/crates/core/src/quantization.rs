//! Uniform mid-rise ADC model and the Gaussian approximation of its noise.

use crate::error::{invalid, Result};
use crate::linalg::{dot_t, CVec, C64};
use crate::scene::ChannelSet;

/// Mid-rise quantizer: outputs sit at `step * (k + 1/2)` with `2^bits`
/// levels centred on zero; inputs beyond the outermost level saturate.
pub fn quantize(y: f64, step: f64, bits: u32) -> f64 {
    debug_assert!(step > 0.0);
    let half = if bits >= 63 { f64::MAX } else { (1u64 << (bits - 1)) as f64 };
    let k = (y / step).floor().clamp(-half, half - 1.0);
    step * (k + 0.5)
}

/// Quantizes real and imaginary parts independently.
pub fn quantize_complex(y: C64, step_re: f64, step_im: f64, bits: u32) -> C64 {
    C64::new(quantize(y.re, step_re, bits), quantize(y.im, step_im, bits))
}

/// Step that maps an input of mean power `power` onto `2^bits` levels.
pub fn step_size(power: f64, bits: u32) -> f64 {
    power.max(0.0).sqrt() / 2f64.powi(bits as i32 - 1)
}

/// Gaussian-model quantization noise variance of one reader antenna.
/// `backscatter_power` already includes the reflection energy factor.
pub fn noise_variance(dli_power: f64, backscatter_power: f64, bits: u32) -> f64 {
    (dli_power + backscatter_power + 1.0) / (3.0 * 4f64.powi(bits as i32))
}

/// Signal-to-quantization-noise ratio in dB.
pub fn sqnr_db(signal_power: f64, total_power: f64, bits: u32) -> Result<f64> {
    if !(total_power > 0.0) || !(signal_power > 0.0) {
        return invalid("SQNR needs positive signal and total power");
    }
    Ok(10.0 * (3.0 * 4f64.powi(bits as i32) * signal_power / total_power).log10())
}

/// Diagonal of the effective noise covariance: quantization variance plus
/// unit thermal noise per reader antenna.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseCovariance(pub Vec<f64>);

impl NoiseCovariance {
    pub fn identity(n: usize) -> Self {
        Self(vec![1.0; n])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn inv(&self) -> Vec<f64> {
        self.0.iter().map(|d| 1.0 / d).collect()
    }

    /// Builds `D` for beamformer `x` using the per-antenna ADC resolutions.
    pub fn for_beamformer(ch: &ChannelSet, x: &CVec, delta: f64) -> Self {
        let n_r = ch.n_r();
        let bs = dot_t(&ch.h_c, x).norm_sqr();
        let dli = &ch.h_dl * x;
        Self(
            (0..n_r)
                .map(|r| {
                    let s = delta * ch.h_r[r].norm_sqr() * bs;
                    1.0 + noise_variance(dli[r].norm_sqr(), s, ch.reader_bits[r])
                })
                .collect(),
        )
    }
}
