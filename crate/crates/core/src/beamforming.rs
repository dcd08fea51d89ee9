//! Transmit beamformer design for a fixed AP partition.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::linalg::{canonical_phase, dot_t, lambda_max, norm_sqr, nullspace, CMat, CVec, ZERO};
use crate::scene::ChannelSet;
use crate::solvers::ao::{solve_detection_energy, AoOptions, PowerLimit};
use crate::solvers::{bisection, purify_rank, rank1_extract, rank1_gap, solve_sdp, LowRank, SdpInstance};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Problem {
    /// Maximum backscatter energy, total power.
    Bf,
    /// Maximum backscatter energy, per-antenna power.
    BfPrime,
    /// Dynamic-range constraint on every non-reference reader antenna.
    Dli,
    DliPrime,
    /// Zero direct-link interference at non-reference readers.
    Alpha0,
    Alpha0Prime,
    Alpha0PrimeClosed,
    /// Max-min SINR over several devices with zero interference.
    Multi,
    /// Quantization-aware detection energy.
    D,
    DPrime,
}

impl Problem {
    pub const ALL: [Problem; 10] = [
        Problem::Bf,
        Problem::BfPrime,
        Problem::Dli,
        Problem::DliPrime,
        Problem::Alpha0,
        Problem::Alpha0Prime,
        Problem::Alpha0PrimeClosed,
        Problem::Multi,
        Problem::D,
        Problem::DPrime,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Problem::Bf => "bf",
            Problem::BfPrime => "bf-prime",
            Problem::Dli => "dli",
            Problem::DliPrime => "dli-prime",
            Problem::Alpha0 => "alpha0",
            Problem::Alpha0Prime => "alpha0-prime",
            Problem::Alpha0PrimeClosed => "alpha0-prime-closed",
            Problem::Multi => "multi",
            Problem::D => "d",
            Problem::DPrime => "d-prime",
        }
    }

    pub fn per_antenna(&self) -> bool {
        matches!(
            self,
            Problem::BfPrime | Problem::DliPrime | Problem::Alpha0Prime | Problem::Alpha0PrimeClosed | Problem::DPrime
        )
    }

    /// Problems whose feasibility depends on the interference ratio `C(S)`.
    pub fn has_dli_constraint(&self) -> bool {
        matches!(self, Problem::Dli | Problem::DliPrime)
    }

    /// Problems that force the beamformer into the direct-link nullspace.
    pub fn nulls_dli(&self) -> bool {
        matches!(self, Problem::Alpha0 | Problem::Alpha0Prime | Problem::Alpha0PrimeClosed | Problem::Multi)
    }

    /// Problems solved with an iterative convex solver.
    pub fn is_iterative(&self) -> bool {
        matches!(self, Problem::Dli | Problem::DliPrime | Problem::Alpha0Prime | Problem::Multi | Problem::D | Problem::DPrime)
    }
}

impl fmt::Display for Problem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Problem {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Problem::ALL
            .iter()
            .find(|p| p.name() == s)
            .copied()
            .ok_or_else(|| Error::InvalidInput(format!("unknown problem '{s}'")))
    }
}

#[derive(Clone, Copy, Debug)]
pub struct BfOptions {
    pub p_max: f64,
    /// Interference-to-backscatter threshold, linear.
    pub alpha: f64,
    /// Reflection energy `|gamma|^2`.
    pub delta: f64,
    pub null_tol: f64,
    pub sdp_tol: f64,
    pub admm_tol: f64,
    pub admm_max_iter: usize,
    /// Bisection tolerance relative to the upper SINR bound.
    pub multi_rel_tol: f64,
    /// Account for direct-link leakage and inter-device interference in the
    /// SINR of the multi-device problem.
    pub multi_interference: bool,
    pub ao: AoOptions,
}

impl BfOptions {
    pub fn new(p_max: f64) -> Self {
        Self {
            p_max,
            alpha: 1.0,
            delta: 1.0,
            null_tol: 1e-10,
            sdp_tol: 1e-7,
            admm_tol: 1e-7,
            admm_max_iter: 10_000,
            multi_rel_tol: 1e-4,
            multi_interference: true,
            ao: AoOptions::default(),
        }
    }

    pub fn with_alpha(mut self, alpha: f64) -> Self {
        self.alpha = alpha;
        self
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Diagnostics {
    pub iterations: usize,
    /// Share of the relaxed solution's trace outside its top eigenvalue.
    pub rank1_gap: Option<f64>,
    pub relaxed_value: Option<f64>,
    pub duality_gap: Option<f64>,
    pub kkt_residual: Option<f64>,
    /// Phase-invariant mismatch between two equivalent constructions.
    pub cross_check: Option<f64>,
    pub power_ok: bool,
    pub dli_ok: bool,
    pub feasible: bool,
    pub warning: Option<String>,
}

#[derive(Clone, Debug)]
pub struct BeamformerSolution {
    pub problem: Problem,
    pub x: CVec,
    /// `||H_BL x||^2`, the minimum SINR for the multi-device problem, or
    /// the detection energy for the quantization-aware problems.
    pub objective: f64,
    pub dli_metric: f64,
    pub antenna_powers: Vec<f64>,
    pub sinr: Vec<f64>,
    pub diagnostics: Diagnostics,
}

impl BeamformerSolution {
    pub fn power(&self) -> f64 {
        self.antenna_powers.iter().sum()
    }
}

/// `||H_BL x||^2`.
pub fn backscatter_energy(ch: &ChannelSet, x: &CVec) -> f64 {
    norm_sqr(&ch.h_r) * dot_t(&ch.h_c, x).norm_sqr()
}

/// Worst interference-to-backscatter ratio over the non-reference reader
/// antennas. Zero when only the reference AP reads.
pub fn dli_metric(ch: &ChannelSet, x: &CVec) -> f64 {
    let rows = ch.non_ref_rows();
    if rows.is_empty() {
        return 0.0;
    }
    let dli = &ch.h_dl * x;
    let bs = dot_t(&ch.h_c, x).norm_sqr();
    rows.iter()
        .map(|&r| {
            let den = ch.h_r[r].norm_sqr() * bs;
            if den > 0.0 {
                dli[r].norm_sqr() / den
            } else {
                f64::INFINITY
            }
        })
        .fold(0.0, f64::max)
}

/// `||H x|| / (||H|| ||x||)` with the Frobenius norm of `H`.
pub fn nullspace_residual(h: &CMat, x: &CVec) -> f64 {
    let hn = h.norm();
    let xn = x.norm();
    if hn == 0.0 || xn == 0.0 {
        return 0.0;
    }
    (h * x).norm() / (hn * xn)
}

#[derive(Clone, Debug)]
pub struct NullspaceBasis {
    pub z: CMat,
    pub rank: usize,
}

pub fn nullspace_basis(h_dl_prime: &CMat, rel_tol: f64) -> Result<NullspaceBasis> {
    let (z, rank) = nullspace(h_dl_prime, rel_tol);
    if z.ncols() == 0 {
        return Err(Error::Infeasible(format!(
            "direct-link matrix of rank {rank} leaves no nullspace in {} dimensions",
            h_dl_prime.ncols()
        )));
    }
    Ok(NullspaceBasis { z, rank })
}

fn conj_hc(ch: &ChannelSet) -> Result<CVec> {
    if norm_sqr(&ch.h_c) == 0.0 {
        return invalid("emitter channel is zero");
    }
    Ok(ch.h_c.map(|v| v.conj()))
}

fn finish(problem: Problem, ch: &ChannelSet, x: CVec, objective: f64, mut diag: Diagnostics, opts: &BfOptions) -> BeamformerSolution {
    let x = canonical_phase(&x);
    let powers: Vec<f64> = x.iter().map(|v| v.norm_sqr()).collect();
    let slack = 1.0 + 1e-9;
    diag.power_ok = if problem.per_antenna() {
        powers.iter().all(|p| *p <= opts.p_max * slack)
    } else {
        powers.iter().sum::<f64>() <= opts.p_max * slack
    };
    let c = dli_metric(ch, &x);
    diag.dli_ok = if problem.has_dli_constraint() {
        c <= opts.alpha * (1.0 + 1e-3)
    } else if problem.nulls_dli() {
        nullspace_residual(&ch.h_dl_prime(), &x) <= 1e-9
    } else {
        true
    };
    diag.feasible = diag.power_ok && diag.dli_ok && diag.feasible;
    BeamformerSolution { problem, x, objective, dli_metric: c, antenna_powers: powers, sinr: Vec::new(), diagnostics: diag }
}

fn ok_diag() -> Diagnostics {
    Diagnostics { feasible: true, ..Default::default() }
}

/// Maximum-ratio transmission.
pub fn solve_p_bf(ch: &ChannelSet, opts: &BfOptions) -> Result<BeamformerSolution> {
    let hc = conj_hc(ch)?;
    let x = hc.scale(opts.p_max.sqrt() / hc.norm());
    let obj = backscatter_energy(ch, &x);
    Ok(finish(Problem::Bf, ch, x, obj, ok_diag(), opts))
}

fn phase_only(v: &CVec, p: f64) -> CVec {
    let r = p.sqrt();
    v.map(|z| if z.norm() > 0.0 { z * (r / z.norm()) } else { ZERO })
}

/// Full power on every antenna, phases matched to the emitter channel.
pub fn solve_p_bf_prime(ch: &ChannelSet, opts: &BfOptions) -> Result<BeamformerSolution> {
    let hc = conj_hc(ch)?;
    let x = phase_only(&hc, opts.p_max);
    let obj = backscatter_energy(ch, &x);
    Ok(finish(Problem::BfPrime, ch, x, obj, ok_diag(), opts))
}

/// Semidefinite relaxation of the interference-constrained problem followed
/// by dominant-eigenvector extraction.
pub fn solve_p_dli(ch: &ChannelSet, opts: &BfOptions, per_antenna: bool) -> Result<BeamformerSolution> {
    if !(opts.alpha >= 0.0) {
        return invalid("interference threshold must be non-negative");
    }
    let hc = conj_hc(ch)?;
    let n = ch.n_c();
    let mut inst = SdpInstance::new(n, LowRank::rank1(norm_sqr(&ch.h_r), hc.clone()));
    inst.tol = opts.sdp_tol;
    for r in ch.non_ref_rows() {
        let dl = ch.h_dl.row(r).transpose().map(|v| v.conj());
        let mut m = LowRank::new();
        if norm_sqr(&dl) > 0.0 {
            m.push(1.0, dl);
        }
        let w = opts.alpha * ch.h_r[r].norm_sqr();
        if w > 0.0 {
            m.push(-w, hc.clone());
        }
        if !m.terms.is_empty() {
            inst.constrain(m, 0.0);
        }
    }
    if per_antenna {
        for c in 0..n {
            inst.constrain(LowRank::unit(n, c, 1.0), opts.p_max);
        }
    } else {
        inst.constrain(LowRank::identity(n), opts.p_max);
    }
    let sol = solve_sdp(&inst)?;
    let (_, q) = rank1_extract(&sol.x);
    let x = if per_antenna {
        let peak = q.iter().map(|v| v.norm()).fold(0.0, f64::max);
        q.scale(opts.p_max.sqrt() / peak)
    } else {
        q.scale(opts.p_max.sqrt())
    };
    let obj = backscatter_energy(ch, &x);
    let diag = Diagnostics {
        iterations: sol.iterations,
        rank1_gap: Some(rank1_gap(&sol.x)),
        relaxed_value: Some(sol.primal),
        duality_gap: Some(sol.rel_gap),
        feasible: true,
        warning: (!sol.converged).then(|| "SDP did not reach the requested gap".to_string()),
        ..Default::default()
    };
    let problem = if per_antenna { Problem::DliPrime } else { Problem::Dli };
    Ok(finish(problem, ch, x, obj, diag, opts))
}

fn nullspace_direction(ch: &ChannelSet, basis: &NullspaceBasis) -> Result<(CVec, bool)> {
    let hc = conj_hc(ch)?;
    let v = basis.z.adjoint() * &hc;
    let vn = v.norm();
    if vn <= 1e-14 * hc.norm() {
        return Ok((basis.z.column(0).into_owned(), true));
    }
    Ok((&basis.z * v.scale(1.0 / vn), false))
}

/// Projection of the MRT direction onto the nullspace, built from the
/// pseudo-inverse rather than from the basis.
fn projected_mrt(ch: &ChannelSet, tol: f64) -> Option<CVec> {
    let h = ch.h_dl_prime();
    let n = ch.n_c();
    let hc = ch.h_c.map(|v| v.conj());
    if h.nrows() == 0 || h.norm() == 0.0 {
        return Some(hc.clone().scale(1.0 / hc.norm()));
    }
    let smax = h.clone().singular_values().iter().cloned().fold(0.0, f64::max);
    let pinv = h.clone().pseudo_inverse(tol * smax).ok()?;
    let proj = CMat::identity(n, n) - pinv * &h;
    let v = proj * hc;
    let vn = v.norm();
    (vn > 0.0).then(|| v.scale(1.0 / vn))
}

fn phase_mismatch(a: &CVec, b: &CVec) -> f64 {
    let an = a.norm();
    let bn = b.norm();
    if an == 0.0 || bn == 0.0 {
        return 1.0;
    }
    1.0 - a.dotc(b).norm() / (an * bn)
}

/// Zero-interference beamformer `sqrt(P) Z v_Z`.
pub fn solve_p_alpha0(ch: &ChannelSet, basis: &NullspaceBasis, opts: &BfOptions) -> Result<BeamformerSolution> {
    let (dir, degenerate) = nullspace_direction(ch, basis)?;
    let x = dir.scale(opts.p_max.sqrt());
    let mut diag = ok_diag();
    if degenerate {
        diag.warning = Some("emitter channel is orthogonal to the nullspace".into());
    } else {
        diag.cross_check = projected_mrt(ch, opts.null_tol).map(|p| phase_mismatch(&p, &x));
    }
    let obj = backscatter_energy(ch, &x);
    Ok(finish(Problem::Alpha0, ch, x, obj, diag, opts))
}

/// Zero-interference direction rescaled so the strongest antenna uses the
/// full per-antenna budget.
pub fn solve_p_alpha0_prime_closed(ch: &ChannelSet, basis: &NullspaceBasis, opts: &BfOptions) -> Result<BeamformerSolution> {
    let (dir, degenerate) = nullspace_direction(ch, basis)?;
    let peak = dir.iter().map(|v| v.norm()).fold(0.0, f64::max);
    let x = dir.scale(opts.p_max.sqrt() / peak);
    let mut diag = ok_diag();
    if degenerate {
        diag.warning = Some("emitter channel is orthogonal to the nullspace".into());
    }
    let obj = backscatter_energy(ch, &x);
    Ok(finish(Problem::Alpha0PrimeClosed, ch, x, obj, diag, opts))
}

fn clip_unit(v: &CVec) -> CVec {
    v.map(|z| {
        let m = z.norm();
        if m > 1.0 { z / m } else { z }
    })
}

/// Maximizes `Re{h_C^T x}` over the nullspace with `|x_c| <= sqrt(P)` by ADMM
/// on the splitting `y = x`, `y` in the nullspace and `x` in the per-antenna
/// ball. The better of the ADMM point and the closed form is returned.
pub fn solve_p_alpha0_prime_convex(ch: &ChannelSet, basis: &NullspaceBasis, opts: &BfOptions) -> Result<BeamformerSolution> {
    let closed = solve_p_alpha0_prime_closed(ch, basis, opts)?;
    let hc = conj_hc(ch)?;
    let v = hc.scale(1.0 / hc.norm());
    let z = &basis.z;
    let proj = |w: &CVec| -> CVec { z * (z.adjoint() * w) };
    let n = ch.n_c();
    let root_n = (n as f64).sqrt();
    let mut x = closed.x.scale(1.0 / opts.p_max.sqrt());
    let mut u = CVec::from_element(n, ZERO);
    let mut rho = 1.0 / root_n;
    let mut kkt = f64::INFINITY;
    let mut iterations = 0;
    let mut y = x.clone();
    for it in 1..=opts.admm_max_iter {
        iterations = it;
        y = proj(&(&x - &u + v.scale(1.0 / rho)));
        let x_old = x.clone();
        x = clip_unit(&(&y + &u));
        u += &y - &x;
        let r = (&y - &x).norm();
        let s = rho * (&x - &x_old).norm();
        kkt = r.max(s) / root_n;
        if kkt <= opts.admm_tol {
            break;
        }
        if it % 50 == 0 {
            if r > 10.0 * s {
                rho *= 2.0;
                u /= crate::linalg::c(2.0, 0.0);
            } else if s > 10.0 * r {
                rho /= 2.0;
                u *= crate::linalg::c(2.0, 0.0);
            }
        }
    }
    let peak = y.iter().map(|v| v.norm()).fold(0.0, f64::max);
    let candidate = y.scale(opts.p_max.sqrt() / peak.max(1.0));
    let cand_obj = backscatter_energy(ch, &candidate);
    let mut diag = ok_diag();
    diag.iterations = iterations;
    diag.kkt_residual = Some(kkt);
    if kkt > opts.admm_tol {
        diag.warning = Some(format!("ADMM stopped at residual {kkt:.2e}"));
    }
    let (x, obj) = if cand_obj >= closed.objective {
        (candidate, cand_obj)
    } else {
        (closed.x.clone(), closed.objective)
    };
    Ok(finish(Problem::Alpha0Prime, ch, x, obj, diag, opts))
}

/// SINR matrices of one device restricted to the nullspace.
#[derive(Clone, Debug)]
pub struct MultiMatrices {
    pub a: CMat,
    pub b: CMat,
    pub c: CMat,
    /// Noise term `||h_R||^2`.
    pub noise: f64,
}

pub fn build_multi_matrices(chs: &[ChannelSet], z: &CMat, deltas: &[f64], interference: bool) -> Result<Vec<MultiMatrices>> {
    if chs.is_empty() || deltas.len() != chs.len() {
        return invalid("one channel set and one reflection energy per device required");
    }
    let d = z.ncols();
    let zero = CMat::zeros(d, d);
    chs.iter()
        .enumerate()
        .map(|(k, ch)| {
            let hr2 = norm_sqr(&ch.h_r);
            let u = ch.h_r.clone();
            let zc = z.adjoint() * ch.h_c.map(|v| v.conj());
            let a = (&zc * zc.adjoint()).scale(deltas[k] * hr2 * hr2);
            if !interference {
                return Ok(MultiMatrices { a, b: zero.clone(), c: zero.clone(), noise: hr2 });
            }
            let w = z.adjoint() * (ch.h_dl.adjoint() * &u);
            let b = &w * w.adjoint();
            let mut c = zero.clone();
            for (kk, other) in chs.iter().enumerate() {
                if kk == k {
                    continue;
                }
                let coupling = u.dotc(&other.h_r).norm_sqr();
                let v = z.adjoint() * other.h_c.map(|t| t.conj());
                c += (&v * v.adjoint()).scale(deltas[kk] * coupling);
            }
            Ok(MultiMatrices { a, b, c, noise: hr2 })
        })
        .collect()
}

/// Per-device SINR of beamformer `x`.
pub fn multi_sinr(chs: &[ChannelSet], x: &CVec, deltas: &[f64], interference: bool) -> Vec<f64> {
    chs.iter()
        .enumerate()
        .map(|(k, ch)| {
            let u = &ch.h_r;
            let hr2 = norm_sqr(u);
            let num = deltas[k] * hr2 * hr2 * dot_t(&ch.h_c, x).norm_sqr();
            let mut den = hr2;
            if interference {
                den += u.dotc(&(&ch.h_dl * x)).norm_sqr();
                for (kk, other) in chs.iter().enumerate() {
                    if kk != k {
                        den += deltas[kk] * u.dotc(&other.h_r).norm_sqr() * dot_t(&other.h_c, x).norm_sqr();
                    }
                }
            }
            num / den
        })
        .collect()
}

struct Witness {
    b: CVec,
    gap: f64,
    rank1_gap: f64,
}

/// Whether some `b` with `||b||^2 <= P` reaches SINR `t` for every device,
/// decided on the relaxation with a margin variable appended to the lifted
/// matrix.
fn multi_feasible(mats: &[MultiMatrices], t: f64, p: f64, scale: f64, tol: f64) -> Result<Option<Witness>> {
    let d = mats[0].a.nrows();
    let dim = d + 1;
    let pad = |v: CVec| -> CVec {
        let mut out = CVec::from_element(dim, ZERO);
        out.rows_mut(0, d).copy_from(&v);
        out
    };
    let slack = LowRank::unit(dim, d, 1.0);
    let targets: Vec<f64> = mats.iter().map(|m| m.noise * t / scale).collect();
    let u0 = 2.0 * targets.iter().cloned().fold(0.0, f64::max).max(1e-12);
    let mut inst = SdpInstance::new(dim, slack.clone());
    inst.tol = tol;
    let mut fs = Vec::with_capacity(mats.len());
    for (m, target) in mats.iter().zip(&targets) {
        let f = (&m.a - (&m.b + &m.c).scale(t)).scale(p / scale);
        fs.push(f.clone());
        let mut row = slack.clone();
        row.extend(
            LowRank { terms: LowRank::from_dense(&f).terms.into_iter().map(|(w, v)| (w, pad(v))).collect() },
            -1.0,
        );
        inst.constrain(row, u0 - target);
    }
    let mut power = LowRank::new();
    for c in 0..d {
        power.extend(LowRank::unit(dim, c, 1.0), 1.0);
    }
    inst.constrain(power, 1.0);
    inst.constrain(slack, 2.0 * u0);
    let sol = solve_sdp(&inst)?;
    let margin = sol.x[(d, d)].re;
    if margin < u0 * (1.0 - 1e-9) {
        return Ok(None);
    }
    let block = purify_rank(&sol.x.view((0, 0), (d, d)).into_owned(), &fs);
    let (_, q) = rank1_extract(&block);
    Ok(Some(Witness { b: q.scale(p.sqrt()), gap: sol.rel_gap, rank1_gap: rank1_gap(&block) }))
}

/// Max-min SINR beamformer in the nullspace, by bisection on the common
/// SINR target.
pub fn solve_p_multi(chs: &[ChannelSet], basis: &NullspaceBasis, deltas: &[f64], opts: &BfOptions) -> Result<BeamformerSolution> {
    let mats = build_multi_matrices(chs, &basis.z, deltas, opts.multi_interference)?;
    let t_max = mats
        .iter()
        .map(|m| opts.p_max * lambda_max(&m.a) / m.noise)
        .fold(f64::INFINITY, f64::min);
    if !(t_max > 0.0) {
        return Err(Error::Infeasible("some device receives no energy from the nullspace".into()));
    }
    let scale = mats.iter().map(|m| opts.p_max * lambda_max(&m.a)).fold(0.0, f64::max);
    let eps = opts.multi_rel_tol * t_max;
    let res = bisection(
        |t| {
            if t == 0.0 {
                return Ok(Some(None));
            }
            Ok(multi_feasible(&mats, t, opts.p_max, scale, opts.sdp_tol)?.map(Some))
        },
        0.0,
        t_max,
        eps,
    )?;
    let (b, rank1, gap) = match res.witness {
        Some(w) => (w.b, Some(w.rank1_gap), Some(w.gap)),
        None => (rank1_extract(&mats[0].a).1.scale(opts.p_max.sqrt()), None, None),
    };
    let x = &basis.z * b;
    let sinr = multi_sinr(chs, &x, deltas, opts.multi_interference);
    let min_sinr = sinr.iter().cloned().fold(f64::INFINITY, f64::min);
    let diag = Diagnostics {
        iterations: res.iterations,
        rank1_gap: rank1,
        relaxed_value: Some(res.t),
        duality_gap: gap,
        feasible: true,
        ..Default::default()
    };
    let mut out = finish(Problem::Multi, &chs[0], x, min_sinr, diag, opts);
    out.sinr = sinr;
    Ok(out)
}

/// Quantization-aware designs by alternating optimization.
pub fn solve_p_d(ch: &ChannelSet, opts: &BfOptions, per_antenna: bool) -> Result<BeamformerSolution> {
    let limit = if per_antenna { PowerLimit::PerAntenna } else { PowerLimit::Total };
    let out = solve_detection_energy(ch, opts.delta, opts.p_max, limit, &opts.ao)?;
    let obj = *out.objective.last().expect("non-empty trace");
    let diag = Diagnostics {
        iterations: out.objective.len() - 1,
        feasible: true,
        warning: (!out.converged).then(|| "alternating optimization hit its iteration cap".to_string()),
        ..Default::default()
    };
    let problem = if per_antenna { Problem::DPrime } else { Problem::D };
    Ok(finish(problem, ch, out.x, obj, diag, opts))
}

/// Solves `problem` for the given channel sets; all problems except the
/// multi-device one use only the first set.
pub fn solve(problem: Problem, chs: &[ChannelSet], deltas: &[f64], opts: &BfOptions) -> Result<BeamformerSolution> {
    let ch = chs.first().ok_or_else(|| Error::InvalidInput("no channel set given".into()))?;
    let basis = || nullspace_basis(&ch.h_dl_prime(), opts.null_tol);
    match problem {
        Problem::Bf => solve_p_bf(ch, opts),
        Problem::BfPrime => solve_p_bf_prime(ch, opts),
        Problem::Dli => solve_p_dli(ch, opts, false),
        Problem::DliPrime => solve_p_dli(ch, opts, true),
        Problem::Alpha0 => solve_p_alpha0(ch, &basis()?, opts),
        Problem::Alpha0Prime => solve_p_alpha0_prime_convex(ch, &basis()?, opts),
        Problem::Alpha0PrimeClosed => solve_p_alpha0_prime_closed(ch, &basis()?, opts),
        Problem::Multi => solve_p_multi(chs, &basis()?, deltas, opts),
        Problem::D => solve_p_d(ch, opts, false),
        Problem::DPrime => solve_p_d(ch, opts, true),
    }
}
