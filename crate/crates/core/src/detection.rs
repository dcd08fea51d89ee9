//! Likelihood-ratio detection of backscattered bits, closed-form error
//! probabilities and a Monte-Carlo bit-error simulator.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use statrs::function::erf::erfc;

use crate::error::{invalid, Result};
use crate::linalg::{hadamard, CMat, CVec, C64};
use crate::quantization::{quantize_complex, NoiseCovariance};
use crate::scene::ChannelSet;

/// Gaussian upper-tail probability.
pub fn q_function(x: f64) -> f64 {
    0.5 * erfc(x / std::f64::consts::SQRT_2)
}

/// Per-slot reflection coefficients under each hypothesis.
#[derive(Clone, Debug, PartialEq)]
pub struct Signaling {
    pub gamma0: Vec<C64>,
    pub gamma1: Vec<C64>,
}

impl Signaling {
    pub fn new(gamma0: Vec<C64>, gamma1: Vec<C64>) -> Result<Self> {
        if gamma0.is_empty() || gamma0.len() != gamma1.len() {
            return invalid("signaling sequences must be non-empty and of equal length");
        }
        let delta = gamma0[0].norm_sqr();
        let tol = 1e-9 * delta.max(1e-300);
        if !(delta > 0.0) || gamma0.iter().chain(&gamma1).any(|g| (g.norm_sqr() - delta).abs() > tol) {
            return invalid("all reflection coefficients must share one nonzero energy");
        }
        Ok(Self { gamma0, gamma1 })
    }

    /// `-1` for a zero bit and `+1` for a one bit, repeated over `slots` slots.
    pub fn antipodal(slots: usize) -> Result<Self> {
        Self::from_sequence(&vec![1.0; slots])
    }

    /// `gamma^i_j = (2i - 1) s_j`.
    pub fn from_sequence(s: &[f64]) -> Result<Self> {
        Self::new(
            s.iter().map(|v| C64::new(-v, 0.0)).collect(),
            s.iter().map(|v| C64::new(*v, 0.0)).collect(),
        )
    }

    pub fn slots(&self) -> usize {
        self.gamma0.len()
    }

    pub fn delta(&self) -> f64 {
        self.gamma0[0].norm_sqr()
    }

    pub fn gamma(&self, bit: bool) -> &[C64] {
        if bit {
            &self.gamma1
        } else {
            &self.gamma0
        }
    }

    fn diff(&self) -> impl Iterator<Item = C64> + '_ {
        self.gamma1.iter().zip(&self.gamma0).map(|(a, b)| a - b)
    }

    fn diff_energy(&self) -> f64 {
        self.diff().map(|d| d.norm_sqr()).sum()
    }
}

/// Orthogonal sequences for `bdes` devices over `slots` slots, taken from
/// the rows of a Hadamard matrix.
pub fn multi_signaling(bdes: usize, slots: usize) -> Result<Vec<Signaling>> {
    if slots < bdes {
        return invalid(format!("{slots} slots cannot separate {bdes} devices"));
    }
    let h = hadamard(slots)?;
    (0..bdes)
        .map(|k| Signaling::from_sequence(&h.row(k).iter().cloned().collect::<Vec<_>>()))
        .collect()
}

/// Checks pairwise orthogonality of the per-device sequences.
pub fn check_orthogonal(sig: &[Signaling]) -> Result<()> {
    for (a, sa) in sig.iter().enumerate() {
        if sa.slots() != sig[0].slots() {
            return invalid("all devices need the same number of slots");
        }
        for sb in &sig[a + 1..] {
            let cross: C64 = sa.diff().zip(sb.gamma1.iter()).map(|(d, g)| d * g.conj()).sum();
            let scale = sa.diff_energy() * sb.delta();
            if cross.norm() > 1e-9 * scale.sqrt().max(1e-300) * (sa.slots() as f64).sqrt() {
                return invalid("device sequences are not orthogonal");
            }
        }
    }
    Ok(())
}

fn weighted_inner(y: &CVec, dinv: &[f64], s: &CVec) -> C64 {
    y.iter().zip(s.iter()).zip(dinv).map(|((a, b), w)| a.conj() * b * *w).sum()
}

/// Log-likelihood statistic `sum_j Re{(g1 - g0) y'^H D^-1 H_BL x}` with
/// `y' = y - H_DL x`. Decide a one bit iff the value is positive.
pub fn llr(ys: &[CVec], x: &CVec, h_dl: &CMat, h_bl: &CMat, d: &NoiseCovariance, sig: &Signaling) -> Result<f64> {
    if ys.len() != sig.slots() {
        return invalid("observation count differs from slot count");
    }
    let n = h_bl.nrows();
    if h_dl.nrows() != n || d.len() != n || ys.iter().any(|y| y.len() != n) || h_bl.ncols() != x.len() {
        return invalid("dimension mismatch in detector");
    }
    Ok(statistic(ys, &(h_dl * x), &(h_bl * x), &d.inv(), sig))
}

fn statistic(ys: &[CVec], dli: &CVec, s: &CVec, dinv: &[f64], sig: &Signaling) -> f64 {
    ys.iter()
        .zip(sig.diff())
        .map(|(y, dg)| {
            let acc: C64 = y.iter().zip(dli.iter()).zip(s.iter()).zip(dinv).map(|(((a, b), c), w)| (a - b).conj() * c * *w).sum();
            (dg * acc).re
        })
        .sum()
}

/// Ties resolve to the zero bit.
pub fn decide(llr: f64) -> bool {
    llr > 0.0
}

/// Closed-form error probability with perfect channel knowledge.
pub fn pe_perfect(x: &CVec, h_bl: &CMat, d: &NoiseCovariance, sig: &Signaling) -> f64 {
    let s = h_bl * x;
    let e: f64 = s.iter().zip(&d.0).map(|(v, w)| v.norm_sqr() / w).sum();
    q_function(e.sqrt() * (sig.diff_energy() / 2.0).sqrt())
}

/// Channels used by a detector that only has estimates.
#[derive(Clone, Debug)]
pub struct Estimated<'a> {
    pub h_dl: &'a CMat,
    pub h_bl: &'a CMat,
    pub d: &'a NoiseCovariance,
    /// Per-entry variance of the direct-link estimation error.
    pub sigma2_dl: f64,
}

/// Error probability of the mismatched detector.
pub fn pe_mismatch(x: &CVec, h_bl: &CMat, d: &NoiseCovariance, est: &Estimated<'_>, sig: &Signaling) -> Result<f64> {
    if est.sigma2_dl < 0.0 {
        return invalid("direct-link error variance must be non-negative");
    }
    let s = h_bl * x;
    let s_hat = est.h_bl * x;
    let dinv = est.d.inv();
    let base = weighted_inner(&s, &dinv, &s_hat);
    let mean = |bit: bool| -> f64 {
        sig.diff().zip(sig.gamma(bit)).map(|(dg, g)| (dg * g.conj() * base).re).sum()
    };
    let mu0 = mean(false);
    let mu1 = mean(true);
    let extra = est.sigma2_dl * x.iter().map(|v| v.norm_sqr()).sum::<f64>();
    let c2: f64 = s_hat
        .iter()
        .zip(&dinv)
        .zip(&d.0)
        .map(|((v, wi), dt)| v.norm_sqr() * wi * wi * (dt + extra))
        .sum();
    let sigma = (0.5 * sig.diff_energy() * c2).sqrt();
    if sigma == 0.0 {
        return Ok(0.5);
    }
    Ok(0.5 * q_function(-mu0 / sigma) + 0.5 * q_function(mu1 / sigma))
}

/// Per-device decisions for several devices sharing the slots, each with an
/// orthogonal sequence. `h_bl[k]` is the cascade channel of device `k`.
pub fn detect_multi(ys: &[CVec], x: &CVec, h_dl: &CMat, h_bl: &[CMat], d: &NoiseCovariance, sig: &[Signaling]) -> Result<Vec<bool>> {
    if h_bl.len() != sig.len() {
        return invalid("one cascade channel per device required");
    }
    check_orthogonal(sig)?;
    h_bl.iter().zip(sig).map(|(h, s)| llr(ys, x, h_dl, h, d, s).map(decide)).collect()
}

/// Receiver front end used by the simulator.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum AdcModel {
    /// No quantization; the detector assumes unit noise.
    Ideal,
    /// Mid-rise quantizer with step `loading * rms / 2^(b-1)` per component.
    MidRise { loading: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BerCount {
    pub errors: u64,
    pub trials: u64,
}

impl BerCount {
    pub fn rate(&self) -> f64 {
        self.errors as f64 / self.trials as f64
    }

    /// Whether `p` lies within `k` binomial standard deviations of the rate.
    pub fn consistent_with(&self, p: f64, k: f64) -> bool {
        let sd = (p * (1.0 - p) / self.trials as f64).sqrt();
        (self.rate() - p).abs() <= k * sd
    }
}

/// Inputs of one bit-error simulation.
#[derive(Clone, Debug)]
pub struct BerSetup<'a> {
    pub truth: &'a ChannelSet,
    /// Channels the detector believes in; the truth when absent.
    pub estimate: Option<&'a ChannelSet>,
    pub x: &'a CVec,
    pub signaling: &'a Signaling,
    pub adc: AdcModel,
    /// Thermal noise standard deviation relative to unit power.
    pub noise_scale: f64,
}

struct Front {
    dli: CVec,
    s: CVec,
    steps: Vec<(f64, f64)>,
}

fn front_end(setup: &BerSetup<'_>) -> Front {
    let ch = setup.truth;
    let dli = &ch.h_dl * setup.x;
    let s = ch.h_bl() * setup.x;
    let noise = 0.5 * setup.noise_scale * setup.noise_scale;
    let steps = match setup.adc {
        AdcModel::Ideal => Vec::new(),
        AdcModel::MidRise { loading } => (0..ch.n_r())
            .map(|r| {
                let mut p = (0.0, 0.0);
                let mut count = 0.0;
                for bit in [false, true] {
                    for g in setup.signaling.gamma(bit) {
                        let m = dli[r] + g * s[r];
                        p.0 += m.re * m.re;
                        p.1 += m.im * m.im;
                        count += 1.0;
                    }
                }
                let bits = ch.reader_bits[r];
                let step = |pw: f64| {
                    let st = loading * crate::quantization::step_size(pw / count + noise, bits);
                    if st > 0.0 { st } else { f64::MIN_POSITIVE }
                };
                (step(p.0), step(p.1))
            })
            .collect(),
    };
    Front { dli, s, steps }
}

/// Counts bit errors over `trials` independent bits. Trial `t` draws from
/// its own stream so results do not depend on the thread count.
pub fn simulate_ber(setup: &BerSetup<'_>, trials: u64, seed: u64) -> Result<BerCount> {
    if trials == 0 {
        return invalid("at least one trial required");
    }
    let truth = setup.truth;
    let det = setup.estimate.unwrap_or(truth);
    if det.n_r() != truth.n_r() || det.n_c() != truth.n_c() {
        return invalid("estimated channels have the wrong shape");
    }
    let front = front_end(setup);
    let d_hat = match setup.adc {
        AdcModel::Ideal => NoiseCovariance::identity(det.n_r()),
        AdcModel::MidRise { .. } => NoiseCovariance::for_beamformer(det, setup.x, setup.signaling.delta()),
    };
    let dli_hat = &det.h_dl * setup.x;
    let s_hat = det.h_bl() * setup.x;
    let dinv = d_hat.inv();
    let bits: Vec<u32> = truth.reader_bits.clone();
    let sd = setup.noise_scale * std::f64::consts::FRAC_1_SQRT_2;
    let errors = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(t);
            let bit: bool = rng.random();
            let ys: Vec<CVec> = setup
                .signaling
                .gamma(bit)
                .iter()
                .map(|g| {
                    CVec::from_fn(truth.n_r(), |r, _| {
                        let nre: f64 = rng.sample(StandardNormal);
                        let nim: f64 = rng.sample(StandardNormal);
                        let y = front.dli[r] + g * front.s[r] + C64::new(sd * nre, sd * nim);
                        match setup.adc {
                            AdcModel::Ideal => y,
                            AdcModel::MidRise { .. } => {
                                let (a, b) = front.steps[r];
                                quantize_complex(y, a, b, bits[r])
                            }
                        }
                    })
                })
                .collect();
            let stat = statistic(&ys, &dli_hat, &s_hat, &dinv, setup.signaling);
            u64::from(decide(stat) != bit)
        })
        .sum();
    Ok(BerCount { errors, trials })
}

/// Draws one noisy, unquantized observation per slot.
pub fn observe<R: Rng>(ch: &ChannelSet, x: &CVec, gammas: &[C64], noise_scale: f64, rng: &mut R) -> Vec<CVec> {
    let dli = &ch.h_dl * x;
    let s = ch.h_bl() * x;
    let sd = noise_scale * std::f64::consts::FRAC_1_SQRT_2;
    gammas
        .iter()
        .map(|g| {
            CVec::from_fn(ch.n_r(), |r, _| {
                let nre: f64 = StandardNormal.sample(rng);
                let nim: f64 = StandardNormal.sample(rng);
                dli[r] + g * s[r] + C64::new(sd * nre, sd * nim)
            })
        })
        .collect()
}

/// Superposition of several devices' backscatter in each slot, noiseless.
pub fn observe_multi(h_dl: &CMat, h_bl: &[CMat], x: &CVec, sig: &[Signaling], bits: &[bool]) -> Vec<CVec> {
    let dli = h_dl * x;
    let s: Vec<CVec> = h_bl.iter().map(|h| h * x).collect();
    (0..sig[0].slots())
        .map(|j| {
            let mut y = dli.clone();
            for (k, sk) in s.iter().enumerate() {
                let g = sig[k].gamma(bits[k])[j];
                y.iter_mut().zip(sk.iter()).for_each(|(a, b)| *a += g * b);
            }
            y
        })
        .collect()
}
