//! Alternating optimization of the quantization-aware detection energy
//! `||D(x)^-1/2 H_BL x||^2` through its quadratic-transform surrogate
//! `2 Re{z^H H_BL x} - z^H D(x) z`.

use crate::error::{invalid, Result};
use crate::linalg::{hermitian_eigen, norm_sqr, CMat, CVec, C64, ZERO};
use crate::quantization::NoiseCovariance;
use crate::scene::ChannelSet;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PowerLimit {
    Total,
    PerAntenna,
}

#[derive(Clone, Copy, Debug)]
pub struct AoOptions {
    pub tol: f64,
    pub max_outer: usize,
    pub max_inner: usize,
}

impl Default for AoOptions {
    fn default() -> Self {
        Self { tol: 1e-9, max_outer: 200, max_inner: 2000 }
    }
}

#[derive(Clone, Debug)]
pub struct AoOutcome {
    pub x: CVec,
    /// Detection energy of every outer iterate, starting point included.
    pub objective: Vec<f64>,
    /// `(g(z_k, x_k), g(z_k, x_{k+1}))` per outer iteration.
    pub surrogate: Vec<(f64, f64)>,
    /// Largest per-antenna magnitude squared of every inner iterate.
    pub inner_peak_power: Vec<f64>,
    pub converged: bool,
}

/// `||D^-1/2 H_BL x||^2` with `D` evaluated at `x`.
pub fn detection_energy(ch: &ChannelSet, x: &CVec, delta: f64) -> f64 {
    let d = NoiseCovariance::for_beamformer(ch, x, delta);
    let s = ch.h_bl() * x;
    s.iter().zip(&d.0).map(|(v, w)| v.norm_sqr() / w).sum()
}

fn level(bits: u32) -> f64 {
    1.0 / (3.0 * 4f64.powi(bits as i32))
}

/// Quadratic part of `z^H D(x) z` as a function of `x`.
pub fn quad_matrix(ch: &ChannelSet, z: &CVec, delta: f64) -> CMat {
    let w: Vec<f64> = (0..ch.n_r()).map(|r| z[r].norm_sqr() * level(ch.reader_bits[r])).collect();
    let mut weighted = ch.h_dl.clone();
    for (r, wr) in w.iter().enumerate() {
        weighted.row_mut(r).scale_mut(*wr);
    }
    let mut a = ch.h_dl.adjoint() * weighted;
    let bl: f64 = (0..ch.n_r()).map(|r| w[r] * ch.h_r[r].norm_sqr()).sum();
    let hc = ch.h_c.map(|v| v.conj());
    a += (&hc * hc.adjoint()).scale(delta * bl);
    crate::linalg::hermitian_part(&a)
}

/// Surrogate value `2 Re{z^H H_BL x} - z^H D(x) z`.
pub fn surrogate(ch: &ChannelSet, z: &CVec, x: &CVec, delta: f64) -> f64 {
    let s = ch.h_bl() * x;
    let d = NoiseCovariance::for_beamformer(ch, x, delta);
    let lin: C64 = z.dotc(&s);
    2.0 * lin.re - z.iter().zip(&d.0).map(|(v, w)| v.norm_sqr() * w).sum::<f64>()
}

/// Maximizer of `2 Re{g^H x} - x^H A x` over `||x||^2 <= p`, with the
/// multiplier found by bisection. Returns `(x, mu)`.
pub fn kkt_solve(a: &CMat, g: &CVec, p: f64) -> (CVec, f64) {
    let gn = g.norm();
    if gn == 0.0 {
        return (CVec::from_element(g.len(), ZERO), 0.0);
    }
    let (vals, vecs) = hermitian_eigen(a);
    let lam: Vec<f64> = vals.iter().map(|v| v.max(0.0)).collect();
    let c = vecs.adjoint() * g;
    let mu_scale = gn / p.sqrt();
    let null = 1e-13 * mu_scale;
    let norm2 = |mu: f64| -> f64 {
        c.iter()
            .zip(&lam)
            .map(|(ci, l)| {
                let den = l + mu;
                if den <= 0.0 {
                    if ci.norm_sqr() > 0.0 { f64::INFINITY } else { 0.0 }
                } else {
                    ci.norm_sqr() / (den * den)
                }
            })
            .sum()
    };
    let build = |mu: f64| -> CVec {
        let scaled = CVec::from_fn(c.len(), |i, _| {
            let den = lam[i] + mu;
            if den <= null { ZERO } else { c[i] / den }
        });
        &vecs * scaled
    };
    if lam.iter().all(|l| *l > null) && norm2(0.0) <= p {
        return (build(0.0), 0.0);
    }
    let (mut lo, mut hi) = (0.0, mu_scale);
    while norm2(hi) > p {
        hi *= 2.0;
    }
    for _ in 0..300 {
        let mid = 0.5 * (lo + hi);
        if norm2(mid) > p {
            lo = mid;
        } else {
            hi = mid;
        }
        if (norm2(hi) - p).abs() <= 1e-12 * p || hi - lo <= 1e-16 * hi {
            break;
        }
    }
    (build(hi), hi)
}

/// Radial projection onto `|x_c| <= sqrt(p)`.
pub fn project_per_antenna(x: &CVec, p: f64) -> CVec {
    let r = p.sqrt();
    x.map(|v| {
        let m = v.norm();
        if m > r { v * (r / m) } else { v }
    })
}

fn phase_aligned(g: &CVec, p: f64) -> CVec {
    let r = p.sqrt();
    g.map(|v| if v.norm() > 0.0 { v * (r / v.norm()) } else { ZERO })
}

/// Minimizes `x^H A x - 2 Re{g^H x}` under the per-antenna bound by
/// projected gradient descent with step `1 / (2 lambda_max(A))`.
pub fn pgd_per_antenna(a: &CMat, g: &CVec, p: f64, x0: &CVec, max_iter: usize, peaks: &mut Vec<f64>) -> CVec {
    let lmax = hermitian_eigen(a).0.first().cloned().unwrap_or(0.0);
    let gn = g.norm();
    if lmax <= 1e-13 * gn / p.sqrt() {
        let x = phase_aligned(g, p);
        peaks.push(x.iter().map(|v| v.norm_sqr()).fold(0.0, f64::max));
        return x;
    }
    let mut x = project_per_antenna(x0, p);
    for _ in 0..max_iter {
        let grad = a * &x - g;
        let next = project_per_antenna(&(&x - grad.scale(1.0 / lmax)), p);
        peaks.push(next.iter().map(|v| v.norm_sqr()).fold(0.0, f64::max));
        let step = (&next - &x).norm();
        x = next;
        if step <= 1e-12 * x.norm().max(1e-300) {
            break;
        }
    }
    x
}

/// Objective of the inner per-antenna problem.
pub fn inner_cost(a: &CMat, g: &CVec, x: &CVec) -> f64 {
    x.dotc(&(a * x)).re - 2.0 * g.dotc(x).re
}

/// Alternating optimization over `(z, x)`. `D` is refreshed from the
/// current `x` once per outer iteration through the `z` update.
pub fn solve_detection_energy(ch: &ChannelSet, delta: f64, p_max: f64, limit: PowerLimit, opts: &AoOptions) -> Result<AoOutcome> {
    if norm_sqr(&ch.h_c) == 0.0 || norm_sqr(&ch.h_r) == 0.0 {
        return invalid("zero backscatter channel");
    }
    if !(p_max > 0.0) {
        return invalid("power budget must be positive");
    }
    let hc = ch.h_c.map(|v| v.conj());
    let mut x = match limit {
        PowerLimit::Total => hc.scale(p_max.sqrt() / hc.norm()),
        PowerLimit::PerAntenna => phase_aligned(&hc, p_max),
    };
    let h_bl = ch.h_bl();
    let mut objective = vec![detection_energy(ch, &x, delta)];
    let mut trace = Vec::new();
    let mut peaks = Vec::new();
    let mut converged = false;
    for _ in 0..opts.max_outer {
        let d = NoiseCovariance::for_beamformer(ch, &x, delta);
        let s = &h_bl * &x;
        let z = CVec::from_fn(ch.n_r(), |r, _| s[r] / d.0[r]);
        let a = quad_matrix(ch, &z, delta);
        let g = h_bl.adjoint() * &z;
        let before = surrogate(ch, &z, &x, delta);
        let next = match limit {
            PowerLimit::Total => kkt_solve(&a, &g, p_max).0,
            PowerLimit::PerAntenna => pgd_per_antenna(&a, &g, p_max, &x, opts.max_inner, &mut peaks),
        };
        let after = surrogate(ch, &z, &next, delta);
        trace.push((before, after));
        let f_prev = *objective.last().expect("seeded");
        let f_next = detection_energy(ch, &next, delta);
        if f_next < f_prev {
            converged = true;
            break;
        }
        x = next;
        objective.push(f_next);
        if (f_next - f_prev).abs() <= opts.tol * f_prev.abs() {
            converged = true;
            break;
        }
    }
    Ok(AoOutcome { x, objective, surrogate: trace, inner_peak_power: peaks, converged })
}
