//! Pilot-based estimation of the AP-to-BDE channels through the reference AP.
//!
//! The reference AP observes every backscattered pilot. Its own cascade gives
//! `h_ref` up to a sign, every other AP's cascade then gives `h_l`, and the
//! two steps alternate with a gradient-descent refinement of `h_ref`.

use nalgebra::{Cholesky, DMatrix, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::linalg::{dft, hadamard, CMat, CVec, C64, ONE, ZERO};
use crate::scene::{ApId, SceneChannels};

#[derive(Clone, Debug)]
pub struct Pilot {
    pub ap: ApId,
    /// `M_l x tau` pilot matrix with `phi phi^H = alpha I`.
    pub phi: CMat,
    pub alpha: f64,
}

#[derive(Clone, Debug)]
pub struct PilotSpec {
    pub pilots: Vec<Pilot>,
    /// Reflection coefficients indexed `[bde][slot]`.
    pub gammas: Vec<Vec<C64>>,
}

impl PilotSpec {
    pub fn jprime(&self) -> usize {
        self.gammas.first().map_or(0, |g| g.len())
    }

    pub fn num_bdes(&self) -> usize {
        self.gammas.len()
    }

    pub fn pilot(&self, id: ApId) -> Option<&Pilot> {
        self.pilots.iter().find(|p| p.ap == id)
    }

    /// Total pilot overhead in symbols.
    pub fn overhead(&self) -> usize {
        self.jprime() * self.pilots.iter().map(|p| p.phi.ncols()).sum::<usize>()
    }
}

/// Constant-modulus orthogonal rows: Hadamard when `tau` is a power of two,
/// DFT otherwise.
pub fn pilot_matrix(m: usize, tau: usize, alpha: f64) -> Result<CMat> {
    if m == 0 || tau < m {
        return invalid(format!("pilot length {tau} must be at least the antenna count {m}"));
    }
    if !(alpha > 0.0) {
        return invalid("pilot scale must be positive");
    }
    let amp = (alpha / tau as f64).sqrt();
    let base = if tau.is_power_of_two() { hadamard(tau)?.map(|v| C64::new(v, 0.0)) } else { dft(tau) };
    Ok(base.rows(0, m).map(|v| v * amp))
}

/// Orthogonal per-BDE reflection sequences of length `jprime`. A single
/// BDE reflects `+1` in every slot.
pub fn reflection_sequences(jprime: usize, bdes: usize) -> Result<Vec<Vec<C64>>> {
    if jprime == 0 || bdes == 0 {
        return invalid("need at least one slot and one BDE");
    }
    if bdes == 1 {
        return Ok(vec![vec![ONE; jprime]]);
    }
    if jprime < bdes {
        return invalid(format!("{bdes} BDEs need at least {bdes} slots, got {jprime}"));
    }
    let base = if jprime.is_power_of_two() { hadamard(jprime)?.map(|v| C64::new(v, 0.0)) } else { dft(jprime) };
    Ok((0..bdes).map(|k| base.row(k).iter().cloned().collect()).collect())
}

/// Pilots for `(ap, antennas, tau)` triples with `alpha_l = P tau / M_l`.
pub fn gen_pilots(aps: &[(ApId, usize, usize)], p_max: f64, jprime: usize, bdes: usize) -> Result<PilotSpec> {
    if !(p_max > 0.0) {
        return invalid("pilot power must be positive");
    }
    let pilots = aps
        .iter()
        .map(|&(ap, m, tau)| {
            let alpha = p_max * tau as f64 / m.max(1) as f64;
            Ok(Pilot { ap, phi: pilot_matrix(m, tau, alpha)?, alpha })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PilotSpec { pilots, gammas: reflection_sequences(jprime, bdes)? })
}

/// Minimal-length pilots (`tau = M_l`) for every AP of a scene.
pub fn scene_pilots(chans: &SceneChannels, p_max: f64, jprime: usize) -> Result<PilotSpec> {
    let aps = chans
        .ap_ids()
        .into_iter()
        .map(|id| Ok((id, chans.antennas(id)?, chans.antennas(id)?)))
        .collect::<Result<Vec<_>>>()?;
    gen_pilots(&aps, p_max, jprime, chans.num_bdes())
}

pub fn complex_gaussian<R: Rng + ?Sized>(rng: &mut R) -> C64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    C64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

/// `sum_k gamma_k h_ref^k (h_l^k)^T phi + W` for reflections
/// `(gamma_k, h_ref^k, h_l^k)`. `W` is unit-variance circular Gaussian noise,
/// or absent when `rng` is `None`.
pub fn rx_pilot<R: Rng + ?Sized>(reflections: &[(C64, &CVec, &CVec)], phi: &CMat, rng: Option<&mut R>) -> Result<CMat> {
    let m_ref = match reflections.first() {
        Some((_, h, _)) => h.len(),
        None => return invalid("no reflection given"),
    };
    let mut y = CMat::zeros(m_ref, phi.ncols());
    for (g, h_ref, h_l) in reflections {
        if h_ref.len() != m_ref || h_l.len() != phi.nrows() {
            return invalid("channel and pilot dimensions disagree");
        }
        y += (*h_ref * (h_l.transpose() * phi)) * *g;
    }
    if let Some(rng) = rng {
        for v in y.iter_mut() {
            *v += complex_gaussian(rng);
        }
    }
    Ok(y)
}

/// Received pilots of every AP, indexed by AP then slot.
#[derive(Clone, Debug)]
pub struct PilotObservations {
    pub ys: Vec<(ApId, Vec<CMat>)>,
}

impl PilotObservations {
    pub fn get(&self, id: ApId) -> Option<&[CMat]> {
        self.ys.iter().find(|(a, _)| *a == id).map(|(_, y)| y.as_slice())
    }
}

/// Simulates the pilot phase for every AP of `spec` with all BDEs of the
/// scene reflecting at once.
pub fn observe_pilots<R: Rng + ?Sized>(chans: &SceneChannels, spec: &PilotSpec, mut rng: Option<&mut R>) -> Result<PilotObservations> {
    if spec.num_bdes() != chans.num_bdes() {
        return invalid("pilot spec and scene disagree on the number of BDEs");
    }
    let ref_id = chans.ref_id();
    let mut ys = Vec::new();
    for pilot in &spec.pilots {
        let mut slots = Vec::new();
        for j in 0..spec.jprime() {
            let mut refl = Vec::new();
            for (k, g) in spec.gammas.iter().enumerate() {
                refl.push((g[j], chans.link(k, ref_id)?, chans.link(k, pilot.ap)?));
            }
            slots.push(rx_pilot(&refl, &pilot.phi, rng.as_deref_mut())?);
        }
        ys.push((pilot.ap, slots));
    }
    Ok(PilotObservations { ys })
}

fn gram_inverse(phi: &CMat) -> Result<CMat> {
    Cholesky::new(phi * phi.adjoint())
        .map(|c| c.inverse())
        .ok_or_else(|| Error::Numeric("pilot Gram matrix is singular".into()))
}

/// Least-squares cascade estimate `sum_j Y_j phi^H (phi phi^H)^-1 / (J' gamma_j)`.
pub fn ls_cascade(ys: &[CMat], phi: &CMat, gammas: &[C64]) -> Result<CMat> {
    if ys.is_empty() || ys.len() != gammas.len() {
        return invalid("need one reflection coefficient per received slot");
    }
    if gammas.iter().any(|g| g.norm() == 0.0) {
        return invalid("reflection coefficients must be nonzero");
    }
    let inv = gram_inverse(phi)?;
    let jp = ys.len() as f64;
    let mut acc = CMat::zeros(ys[0].nrows(), phi.ncols());
    for (y, g) in ys.iter().zip(gammas) {
        if y.ncols() != phi.ncols() || y.nrows() != acc.nrows() {
            return invalid("received block has the wrong shape");
        }
        acc += y / (*g * jp);
    }
    Ok(acc * phi.adjoint() * inv)
}

/// Square-root factor `h` of a symmetric cascade `h h^T`, up to sign. The
/// sign is fixed so that the largest real coordinate is positive. The real
/// embedding has a spectrum symmetric about zero, so only a zero cascade is
/// degenerate.
pub fn extract_href(h: &CMat) -> Result<CVec> {
    let m = h.nrows();
    if m == 0 || h.ncols() != m {
        return invalid("reference cascade must be square and non-empty");
    }
    if m == 1 {
        return Ok(CVec::from_element(1, h[(0, 0)].sqrt()));
    }
    let hb = (h.adjoint() + h.map(|v| v.conj())).scale(0.5);
    let g = DMatrix::from_fn(2 * m, 2 * m, |r, k| {
        let v = hb[(r % m, k % m)];
        match (r < m, k < m) {
            (true, true) => v.re,
            (true, false) | (false, true) => -v.im,
            (false, false) => -v.re,
        }
    });
    let eig = SymmetricEigen::new(g);
    let (i, lam) = eig
        .eigenvalues
        .iter()
        .cloned()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .expect("non-empty");
    if !(lam > 0.0) {
        return Err(Error::InvalidInput("reference cascade has no positive eigenvalue".into()));
    }
    let q = eig.eigenvectors.column(i);
    let lead = q.iter().cloned().fold(0.0f64, |a, v| if v.abs() > a.abs() { v } else { a });
    let s = lam.sqrt() / q.norm() * lead.signum();
    Ok(CVec::from_fn(m, |r, _| C64::new(q[r] * s, q[r + m] * s)))
}

/// `h_l = (C^T h_ref^*) / ||h_ref||^2` for the cascade estimate `C` of
/// `h_ref h_l^T`.
pub fn hl_from_cascade(cascade: &CMat, h_ref: &CVec) -> Result<CVec> {
    let n2 = h_ref.norm_squared();
    if !(n2 > 0.0) {
        return invalid("reference channel estimate is zero");
    }
    if cascade.nrows() != h_ref.len() {
        return invalid("cascade and reference channel disagree in size");
    }
    Ok(cascade.transpose() * h_ref.map(|v| v.conj()) / C64::new(n2, 0.0))
}

pub fn estimate_hl(ys: &[CMat], phi: &CMat, gammas: &[C64], h_ref: &CVec) -> Result<CVec> {
    hl_from_cascade(&ls_cascade(ys, phi, gammas)?, h_ref)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EstimationConfig {
    pub learning_rate: f64,
    pub max_gd_iters: usize,
    /// Gradient-change tolerance relative to the squared gradient scale
    /// `J' (||h_0||^2 + sum_l ||h_l||^2) ||h_0||` of the starting point.
    pub gd_tolerance: f64,
    pub max_outer_iters: usize,
    /// Outer stop on `||h^(i) - h^(i-1)||^2 < tol ||h^(i)||^2`.
    pub outer_tolerance: f64,
}

impl Default for EstimationConfig {
    fn default() -> Self {
        Self { learning_rate: 100.0, max_gd_iters: 100, gd_tolerance: 1e-20, max_outer_iters: 4, outer_tolerance: 1e-8 }
    }
}

impl EstimationConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate > 0.0
            && self.max_gd_iters > 0
            && self.gd_tolerance > 0.0
            && self.max_outer_iters >= 1
            && self.outer_tolerance > 0.0;
        if ok { Ok(()) } else { Err(Error::Config(format!("invalid estimation settings {self:?}"))) }
    }
}

#[derive(Clone, Debug)]
struct ApData {
    id: ApId,
    phi: CMat,
    ys: Vec<CMat>,
    /// `Y_j phi^H / (gamma_j alpha)` per slot.
    zs: Vec<CMat>,
    cascade: CMat,
}

/// Per-BDE view of the pilot observations with the normalized blocks
/// precomputed. The reference AP comes first.
#[derive(Clone, Debug)]
pub struct EstimationData {
    gammas: Vec<C64>,
    aps: Vec<ApData>,
}

impl EstimationData {
    pub fn new(spec: &PilotSpec, obs: &PilotObservations, ref_id: ApId, bde: usize) -> Result<Self> {
        let gammas = spec.gammas.get(bde).ok_or_else(|| Error::InvalidInput(format!("no reflection sequence for BDE {bde}")))?.clone();
        let mut order: Vec<&Pilot> = spec.pilots.iter().collect();
        order.sort_by_key(|p| (p.ap != ref_id, p.ap));
        if order.first().map(|p| p.ap) != Some(ref_id) {
            return invalid(format!("no pilot for the reference AP {ref_id}"));
        }
        let mut aps = Vec::new();
        for p in order {
            let ys = obs.get(p.ap).ok_or_else(|| Error::InvalidInput(format!("no observations for AP {}", p.ap)))?;
            if ys.len() != gammas.len() {
                return invalid(format!("AP {} has {} slots, expected {}", p.ap, ys.len(), gammas.len()));
            }
            let zs = ys.iter().zip(&gammas).map(|(y, g)| y * p.phi.adjoint() / (*g * p.alpha)).collect();
            aps.push(ApData { id: p.ap, phi: p.phi.clone(), ys: ys.to_vec(), zs, cascade: ls_cascade(ys, &p.phi, &gammas)? });
        }
        if aps[0].cascade.ncols() != aps[0].cascade.nrows() {
            return invalid("reference AP pilot does not match its receive array");
        }
        Ok(Self { gammas, aps })
    }

    pub fn ref_id(&self) -> ApId {
        self.aps[0].id
    }

    /// Non-reference AP ids in the order used by `h_ls` arguments.
    pub fn others(&self) -> Vec<ApId> {
        self.aps[1..].iter().map(|a| a.id).collect()
    }

    pub fn jprime(&self) -> usize {
        self.gammas.len()
    }

    pub fn initial_href(&self) -> Result<CVec> {
        extract_href(&self.aps[0].cascade)
    }

    pub fn estimate_others(&self, h_ref: &CVec) -> Result<Vec<CVec>> {
        self.aps[1..].iter().map(|a| hl_from_cascade(&a.cascade, h_ref)).collect()
    }

    fn check(&self, h_ref: &CVec, h_ls: &[CVec]) {
        debug_assert_eq!(h_ls.len(), self.aps.len() - 1);
        debug_assert_eq!(h_ref.len(), self.aps[0].cascade.nrows());
    }

    /// Refinement objective over the normalized blocks `Z`.
    pub fn gd_objective(&self, h_ref: &CVec, h_ls: &[CVec]) -> f64 {
        self.check(h_ref, h_ls);
        let own = h_ref * h_ref.transpose();
        let mut f: f64 = self.aps[0].zs.iter().map(|z| (z - &own).norm_squared()).sum();
        for (a, hl) in self.aps[1..].iter().zip(h_ls) {
            let m = h_ref * hl.transpose();
            f += a.zs.iter().map(|z| (z - &m).norm_squared()).sum::<f64>();
        }
        f
    }

    /// Wirtinger derivative of the refinement objective with respect to
    /// `h_ref`; the steepest-descent direction is its conjugate.
    pub fn gradient(&self, h_ref: &CVec, h_ls: &[CVec]) -> CVec {
        self.check(h_ref, h_ls);
        let conj = h_ref.map(|v| v.conj());
        let n2 = h_ref.norm_squared();
        let mut g = CVec::from_element(h_ref.len(), ZERO);
        for z in &self.aps[0].zs {
            g += conj.scale(2.0 * n2) - (z.map(|v| v.conj()) + z.adjoint()) * h_ref;
        }
        for (a, hl) in self.aps[1..].iter().zip(h_ls) {
            for z in &a.zs {
                g += conj.scale(hl.norm_squared()) - z.map(|v| v.conj()) * hl;
            }
        }
        g
    }

    /// Maximum-likelihood objective on the raw observations.
    pub fn ml_objective(&self, h_ref: &CVec, h_ls: &[CVec]) -> f64 {
        self.check(h_ref, h_ls);
        let mut f = 0.0;
        for (i, a) in self.aps.iter().enumerate() {
            let hl = if i == 0 { h_ref } else { &h_ls[i - 1] };
            let s = h_ref * (hl.transpose() * &a.phi);
            f += a.ys.iter().zip(&self.gammas).map(|(y, g)| (y - &s * *g).norm_squared()).sum::<f64>();
        }
        f
    }
}

#[derive(Clone, Debug)]
pub struct GdOutcome {
    pub h_ref: CVec,
    pub steps: usize,
    pub objective: Vec<f64>,
    pub converged: bool,
    /// Backtracking could not find a descent step.
    pub diverged: bool,
}

/// Gradient descent on `h_ref` with fixed step and step halving whenever
/// a step would increase the objective.
pub fn refine_href(data: &EstimationData, h0: &CVec, h_ls: &[CVec], cfg: &EstimationConfig) -> GdOutcome {
    let scale = data.jprime() as f64 * (h0.norm_squared() + h_ls.iter().map(|h| h.norm_squared()).sum::<f64>()) * h0.norm();
    let tol = cfg.gd_tolerance * scale * scale;
    let mut h = h0.clone();
    let mut f = data.gd_objective(&h, h_ls);
    let mut objective = vec![f];
    let mut prev = CVec::from_element(h.len(), ZERO);
    let mut step = cfg.learning_rate;
    let (mut converged, mut diverged) = (false, false);
    let mut steps = 0;
    for _ in 0..cfg.max_gd_iters {
        let g = data.gradient(&h, h_ls);
        let dir = g.map(|v| v.conj());
        let mut accepted = false;
        for _ in 0..64 {
            let cand = &h - dir.scale(step);
            let fc = data.gd_objective(&cand, h_ls);
            if fc <= f {
                h = cand;
                f = fc;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        steps += 1;
        objective.push(f);
        if !accepted {
            diverged = g.norm_squared() > tol;
            converged = !diverged;
            break;
        }
        if (&g - &prev).norm_squared() < tol {
            converged = true;
            break;
        }
        prev = g;
    }
    GdOutcome { h_ref: h, steps, objective, converged, diverged }
}

#[derive(Clone, Debug)]
pub struct EstimationResult {
    pub h_ref: CVec,
    /// Non-reference estimates in ascending AP order.
    pub h_l: Vec<(ApId, CVec)>,
    /// Estimates straight from the reference cascade, before any refinement.
    pub initial_h_ref: CVec,
    pub initial_h_l: Vec<(ApId, CVec)>,
    /// Outer rounds run.
    pub iterations: usize,
    /// Maximum-likelihood objective of the returned estimates.
    pub objective: f64,
    /// Objective of every outer iterate, the initial one included.
    pub trace: Vec<f64>,
    pub converged: bool,
}

impl EstimationResult {
    /// All estimated links including the reference AP.
    pub fn links(&self, ref_id: ApId) -> Vec<(ApId, CVec)> {
        let mut out = vec![(ref_id, self.h_ref.clone())];
        out.extend(self.h_l.iter().cloned());
        out.sort_by_key(|(id, _)| *id);
        out
    }

    pub fn initial_links(&self, ref_id: ApId) -> Vec<(ApId, CVec)> {
        let mut out = vec![(ref_id, self.initial_h_ref.clone())];
        out.extend(self.initial_h_l.iter().cloned());
        out.sort_by_key(|(id, _)| *id);
        out
    }
}

/// Alternates the `h_l` estimate and the `h_ref` refinement. Stops when
/// `h_ref` settles; after `max_outer_iters` rounds the iterate with the
/// lowest objective is returned instead.
pub fn estimate_all(data: &EstimationData, cfg: &EstimationConfig) -> Result<EstimationResult> {
    cfg.validate()?;
    let ids = data.others();
    let h0 = data.initial_href()?;
    let l0 = data.estimate_others(&h0)?;
    let mut iterates = vec![(h0.clone(), l0.clone())];
    let mut trace = vec![data.ml_objective(&h0, &l0)];
    let mut converged = false;
    for _ in 0..cfg.max_outer_iters {
        let (h_prev, l_prev) = iterates.last().expect("seeded");
        let h = refine_href(data, h_prev, l_prev, cfg).h_ref;
        let l = data.estimate_others(&h)?;
        let moved = (&h - h_prev).norm_squared();
        trace.push(data.ml_objective(&h, &l));
        iterates.push((h, l));
        let (h, _) = iterates.last().expect("pushed");
        if moved < cfg.outer_tolerance * h.norm_squared() {
            converged = true;
            break;
        }
    }
    let pick = if converged {
        iterates.len() - 1
    } else {
        trace.iter().enumerate().min_by(|a, b| a.1.total_cmp(b.1)).map(|(i, _)| i).expect("non-empty")
    };
    let (h_ref, h_l) = iterates.swap_remove(pick);
    Ok(EstimationResult {
        h_ref,
        h_l: ids.iter().cloned().zip(h_l).collect(),
        initial_h_ref: h0,
        initial_h_l: ids.iter().cloned().zip(l0).collect(),
        iterations: trace.len() - 1,
        objective: trace[pick],
        trace,
        converged,
    })
}

/// Estimates every BDE's channels and returns them per BDE.
pub fn estimate_scene(spec: &PilotSpec, obs: &PilotObservations, ref_id: ApId, cfg: &EstimationConfig) -> Result<Vec<EstimationResult>> {
    (0..spec.num_bdes())
        .map(|k| estimate_all(&EstimationData::new(spec, obs, ref_id, k)?, cfg))
        .collect()
}

/// Replaces the scene's links by the estimates.
pub fn apply_estimates(chans: &SceneChannels, results: &[EstimationResult], initial: bool) -> Result<SceneChannels> {
    let ref_id = chans.ref_id();
    let mut out = chans.clone();
    for (k, r) in results.iter().enumerate() {
        let links = if initial { r.initial_links(ref_id) } else { r.links(ref_id) };
        out = out.with_links(k, links)?;
    }
    Ok(out)
}

/// `min over theta in {0, pi}` of `||h - e^{j theta} h_hat||^2 / ||h||^2`.
pub fn nmse(h: &CVec, h_hat: &CVec) -> Result<f64> {
    if h.len() != h_hat.len() {
        return invalid("NMSE operands differ in length");
    }
    let n2 = h.norm_squared();
    if !(n2 > 0.0) {
        return invalid("NMSE reference channel is zero");
    }
    let plus = (h - h_hat).norm_squared();
    let minus = (h + h_hat).norm_squared();
    Ok(plus.min(minus) / n2)
}

/// NMSE of a set of links sharing one sign, `min over theta` of the summed
/// per-link errors.
pub fn joint_sign_errors(truth: &[&CVec], est: &[&CVec]) -> Result<Vec<f64>> {
    if truth.len() != est.len() {
        return invalid("link counts differ");
    }
    let mut best: Option<(f64, Vec<f64>)> = None;
    for s in [1.0, -1.0] {
        let errs = truth
            .iter()
            .zip(est)
            .map(|(h, e)| {
                let n2 = h.norm_squared();
                if !(n2 > 0.0) || h.len() != e.len() {
                    return invalid("bad link pair");
                }
                Ok((*h - e.scale(s)).norm_squared() / n2)
            })
            .collect::<Result<Vec<f64>>>()?;
        let total: f64 = errs.iter().sum();
        if best.as_ref().is_none_or(|(b, _)| total < *b) {
            best = Some((total, errs));
        }
    }
    Ok(best.expect("two candidates").1)
}
