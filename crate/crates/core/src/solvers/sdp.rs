//! Primal-dual interior-point method for small dense complex Hermitian SDPs
//!
//! ```text
//! maximize   tr(C X)
//! subject to tr(A_i X) <= b_i,  X >= 0
//! ```
//!
//! with every `A_i` (and `C`) given as a weighted sum of rank-one terms, which
//! keeps the Schur complement cheap to assemble from Gram matrices.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::error::{invalid, Error, Result};
use crate::linalg::{hermitian_eigen, hermitian_eigenvalues, hermitian_part, matmul, CMat, CVec, C64, ONE, ZERO};

/// `sum_k w_k v_k v_k^H`.
#[derive(Clone, Debug, Default)]
pub struct LowRank {
    pub terms: Vec<(f64, CVec)>,
}

impl LowRank {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn rank1(weight: f64, v: CVec) -> Self {
        Self { terms: vec![(weight, v)] }
    }

    pub fn unit(n: usize, i: usize, weight: f64) -> Self {
        let mut v = CVec::from_element(n, ZERO);
        v[i] = ONE;
        Self::rank1(weight, v)
    }

    pub fn identity(n: usize) -> Self {
        Self { terms: (0..n).map(|i| Self::unit(n, i, 1.0).terms.remove(0)).collect() }
    }

    /// Eigen-factorization of a dense Hermitian matrix, dropping exact zeros.
    pub fn from_dense(m: &CMat) -> Self {
        let (vals, vecs) = hermitian_eigen(m);
        let scale = vals.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        Self {
            terms: vals
                .iter()
                .enumerate()
                .filter(|(_, v)| v.abs() > 1e-15 * scale)
                .map(|(i, v)| (*v, vecs.column(i).into_owned()))
                .collect(),
        }
    }

    pub fn push(&mut self, weight: f64, v: CVec) -> &mut Self {
        self.terms.push((weight, v));
        self
    }

    pub fn extend(&mut self, other: LowRank, scale: f64) -> &mut Self {
        self.terms.extend(other.terms.into_iter().map(|(w, v)| (w * scale, v)));
        self
    }

    pub fn dense(&self, n: usize) -> CMat {
        let mut m = CMat::zeros(n, n);
        for (w, v) in &self.terms {
            m += (v * v.adjoint()).scale(*w);
        }
        m
    }

    /// Real value of `tr(self * X)` for Hermitian `X`.
    pub fn trace_with(&self, x: &CMat) -> f64 {
        self.terms.iter().map(|(w, v)| w * v.dotc(&(x * v)).re).sum()
    }

    fn nuclear_bound(&self) -> f64 {
        self.terms.iter().map(|(w, v)| w.abs() * v.norm_squared()).sum()
    }
}

#[derive(Clone, Debug)]
pub struct SdpConstraint {
    pub matrix: LowRank,
    pub bound: f64,
}

#[derive(Clone, Debug)]
pub struct SdpInstance {
    pub dim: usize,
    pub objective: LowRank,
    pub constraints: Vec<SdpConstraint>,
    pub tol: f64,
    pub max_iter: usize,
}

impl SdpInstance {
    pub fn new(dim: usize, objective: LowRank) -> Self {
        Self { dim, objective, constraints: Vec::new(), tol: 1e-7, max_iter: 100 }
    }

    pub fn constrain(&mut self, matrix: LowRank, bound: f64) -> &mut Self {
        self.constraints.push(SdpConstraint { matrix, bound });
        self
    }
}

#[derive(Clone, Debug)]
pub struct SdpSolution {
    pub x: CMat,
    pub primal: f64,
    pub dual: f64,
    /// `|primal - dual| / (1 + |primal| + |dual|)` in normalized units.
    pub rel_gap: f64,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub iterations: usize,
    pub converged: bool,
}

struct Scaled {
    n: usize,
    v: CMat,
    owner: Vec<usize>,
    w: Vec<f64>,
    b: Vec<f64>,
    c: CMat,
    c_norm: f64,
    x_scale: f64,
}

impl Scaled {
    fn m(&self) -> usize {
        self.b.len()
    }

    fn apply(&self, mat: &CMat) -> Vec<f64> {
        let mv = matmul(mat, &self.v);
        let mut out = vec![0.0; self.m()];
        for k in 0..self.v.ncols() {
            let d = self.v.column(k).dotc(&mv.column(k)).re;
            out[self.owner[k]] += self.w[k] * d;
        }
        out
    }

    fn adjoint(&self, y: &[f64]) -> CMat {
        let mut scaled = self.v.clone();
        for k in 0..self.v.ncols() {
            let f = self.w[k] * y[self.owner[k]];
            scaled.column_mut(k).scale_mut(f);
        }
        hermitian_part(&matmul(&scaled, &self.v.adjoint()))
    }

    fn schur(&self, x: &CMat, zi: &CMat) -> DMatrix<f64> {
        let vh = self.v.adjoint();
        let gx = matmul(&matmul(&vh, x), &self.v);
        let gz = matmul(&matmul(&vh, zi), &self.v);
        let kk = self.v.ncols();
        let m = self.m();
        let mut s = DMatrix::zeros(m, m);
        for k in 0..kk {
            for l in 0..kk {
                let p = (gx[(k, l)] * gz[(l, k)]).re;
                s[(self.owner[k], self.owner[l])] += self.w[k] * self.w[l] * p;
            }
        }
        (&s + s.transpose()) * 0.5
    }
}

fn scale(inst: &SdpInstance) -> Result<Scaled> {
    let n = inst.dim;
    let mut cols = Vec::new();
    let mut owner = Vec::new();
    let mut w = Vec::new();
    let mut b = Vec::new();
    for (i, con) in inst.constraints.iter().enumerate() {
        let norm = con.matrix.nuclear_bound();
        if !(norm > 0.0) || !norm.is_finite() {
            return invalid(format!("constraint {i} has a zero or non-finite matrix"));
        }
        for (wk, vk) in &con.matrix.terms {
            if vk.len() != n {
                return invalid(format!("constraint {i} has a vector of the wrong length"));
            }
            cols.push(vk.clone());
            owner.push(i);
            w.push(wk / norm);
        }
        b.push(con.bound / norm);
    }
    if b.is_empty() {
        return invalid("an SDP needs at least one constraint");
    }
    let x_scale = b.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let x_scale = if x_scale > 0.0 { x_scale } else { 1.0 };
    let b = b.iter().map(|v| v / x_scale).collect();
    let c_norm = inst.objective.nuclear_bound();
    let c_norm = if c_norm > 0.0 { c_norm } else { 1.0 };
    let c = inst.objective.dense(n).scale(1.0 / c_norm);
    Ok(Scaled {
        n,
        v: CMat::from_columns(&cols),
        owner,
        w,
        b,
        c,
        c_norm,
        x_scale,
    })
}

fn inner(a: &CMat, b: &CMat) -> f64 {
    a.iter().zip(b.iter()).map(|(p, q)| (p.conj() * q).re).sum()
}

/// Largest step `t` with `m + t d` positive semidefinite, capped at `cap`.
fn max_step_psd(m: &CMat, d: &CMat, cap: f64) -> f64 {
    let chol = match Cholesky::new(m.clone()) {
        Some(c) => c,
        None => return 0.0,
    };
    let l = chol.l();
    let a = l.solve_lower_triangular(d).unwrap_or_else(|| d.clone());
    let b = l.solve_lower_triangular(&a.adjoint()).unwrap_or(a);
    let lmin = *hermitian_eigenvalues(&b).last().unwrap_or(&0.0);
    if lmin >= 0.0 {
        cap
    } else {
        (-1.0 / lmin).min(cap)
    }
}

fn max_step_pos(v: &[f64], d: &[f64], cap: f64) -> f64 {
    v.iter()
        .zip(d)
        .filter(|(_, dv)| **dv < 0.0)
        .map(|(a, dv)| -a / dv)
        .fold(cap, f64::min)
}

fn solve_schur(s: &DMatrix<f64>, rhs: &DVector<f64>) -> Result<DVector<f64>> {
    if let Some(ch) = Cholesky::new(s.clone()) {
        return Ok(ch.solve(rhs));
    }
    let scale = (0..s.nrows()).map(|i| s[(i, i)].abs()).fold(0.0, f64::max).max(1e-300);
    let reg = s + DMatrix::identity(s.nrows(), s.nrows()) * (1e-14 * scale);
    if let Some(ch) = Cholesky::new(reg) {
        return Ok(ch.solve(rhs));
    }
    s.clone()
        .lu()
        .solve(rhs)
        .ok_or_else(|| Error::Numeric("singular Schur complement".into()))
}

fn inv_hpd(m: &CMat) -> Result<CMat> {
    Cholesky::new(m.clone())
        .map(|c| hermitian_part(&c.inverse()))
        .ok_or_else(|| Error::Numeric("iterate lost positive definiteness".into()))
}

/// Solves the instance with a Mehrotra predictor-corrector on the HKM
/// direction. Non-convergence within `max_iter` returns the last iterate
/// with `converged == false`.
pub fn solve_sdp(inst: &SdpInstance) -> Result<SdpSolution> {
    let sc = scale(inst)?;
    let n = sc.n;
    let m = sc.m();
    let nu = (n + m) as f64;
    let b = DVector::from_vec(sc.b.clone());
    let b_norm = b.norm();
    let c_norm = sc.c.norm();
    let id = CMat::identity(n, n);
    let mut x = id.clone();
    let mut z = id.clone();
    let mut y = vec![1.0; m];
    let mut s = vec![1.0; m];
    let mut best = None;
    let mut iterations = 0;
    let mut converged = false;
    let mut last_gap = f64::INFINITY;
    let mut last_res = (f64::INFINITY, f64::INFINITY);
    for it in 0..inst.max_iter {
        iterations = it;
        let ax = sc.apply(&x);
        let rp: Vec<f64> = (0..m).map(|i| sc.b[i] - ax[i] - s[i]).collect();
        let rd = &sc.c - sc.adjoint(&y) + &z;
        let pobj = inner(&sc.c, &x);
        let dobj: f64 = sc.b.iter().zip(&y).map(|(p, q)| p * q).sum();
        let gap = (pobj - dobj).abs() / (1.0 + pobj.abs() + dobj.abs());
        let pres = DVector::from_vec(rp.clone()).norm() / (1.0 + b_norm);
        let dres = rd.norm() / (1.0 + c_norm);
        last_gap = gap;
        last_res = (pres, dres);
        best = Some(x.clone());
        if gap <= inst.tol && pres <= inst.tol && dres <= inst.tol {
            converged = true;
            break;
        }
        let mu = (inner(&x, &z) + s.iter().zip(&y).map(|(a, b)| a * b).sum::<f64>()) / nu;
        let zi = inv_hpd(&z)?;
        let schur = sc.schur(&x, &zi) + DMatrix::from_diagonal(&DVector::from_fn(m, |i, _| s[i] / y[i]));
        let xrz = matmul(&matmul(&x, &rd), &zi);

        let direction = |sigma: f64, corr_x: Option<&CMat>, corr_s: Option<&[f64]>| -> Result<(CMat, CMat, Vec<f64>, Vec<f64>)> {
            let mut target = zi.scale(sigma * mu) - &x + &xrz;
            if let Some(cx) = corr_x {
                target -= cx;
            }
            let at = sc.apply(&target);
            let rhs = DVector::from_fn(m, |i, _| {
                let cs = corr_s.map_or(0.0, |c| c[i]);
                at[i] + (sigma * mu - s[i] * y[i] - cs) / y[i] - rp[i]
            });
            let dy = solve_schur(&schur, &rhs)?;
            let dyv: Vec<f64> = dy.iter().cloned().collect();
            let dz = sc.adjoint(&dyv) - &rd;
            let mut dx = zi.scale(sigma * mu) - &x - hermitian_part(&matmul(&matmul(&x, &dz), &zi));
            if let Some(cx) = corr_x {
                dx -= hermitian_part(cx);
            }
            let ds: Vec<f64> = (0..m)
                .map(|i| {
                    let cs = corr_s.map_or(0.0, |c| c[i]);
                    (sigma * mu - s[i] * y[i] - s[i] * dyv[i] - cs) / y[i]
                })
                .collect();
            Ok((hermitian_part(&dx), dz, dyv, ds))
        };

        let (dx_a, dz_a, dy_a, ds_a) = direction(0.0, None, None)?;
        let ap = max_step_psd(&x, &dx_a, 1.0).min(max_step_pos(&s, &ds_a, 1.0));
        let ad = max_step_psd(&z, &dz_a, 1.0).min(max_step_pos(&y, &dy_a, 1.0));
        let x_a = &x + dx_a.scale(ap);
        let z_a = &z + dz_a.scale(ad);
        let mu_a = (inner(&x_a, &z_a)
            + (0..m).map(|i| (s[i] + ap * ds_a[i]) * (y[i] + ad * dy_a[i])).sum::<f64>())
            / nu;
        let sigma = (mu_a / mu).clamp(0.0, 1.0).powi(3);
        let corr_x = matmul(&matmul(&dx_a, &dz_a), &zi);
        let corr_s: Vec<f64> = (0..m).map(|i| ds_a[i] * dy_a[i]).collect();
        let (dx, dz, dy, ds) = direction(sigma, Some(&corr_x), Some(&corr_s))?;
        let ap = 0.95 * max_step_psd(&x, &dx, 1.0 / 0.95).min(max_step_pos(&s, &ds, 1.0 / 0.95));
        let ad = 0.95 * max_step_psd(&z, &dz, 1.0 / 0.95).min(max_step_pos(&y, &dy, 1.0 / 0.95));
        x = hermitian_part(&(&x + dx.scale(ap)));
        z = hermitian_part(&(&z + dz.scale(ad)));
        for i in 0..m {
            s[i] += ap * ds[i];
            y[i] += ad * dy[i];
        }
        if !x.iter().chain(z.iter()).all(|v| v.re.is_finite() && v.im.is_finite()) {
            return Err(Error::Numeric("interior-point iterate diverged".into()));
        }
    }
    if !converged {
        log::warn!(
            "SDP stopped after {} iterations: gap {:.2e}, residuals {:.2e}/{:.2e}",
            inst.max_iter, last_gap, last_res.0, last_res.1
        );
        iterations = inst.max_iter;
    }
    let xs = best.unwrap_or(x);
    let factor = sc.c_norm * sc.x_scale;
    let dobj: f64 = sc.b.iter().zip(&y).map(|(p, q)| p * q).sum();
    Ok(SdpSolution {
        primal: factor * inner(&sc.c, &xs),
        dual: factor * dobj,
        x: xs.scale(sc.x_scale),
        rel_gap: last_gap,
        primal_residual: last_res.0,
        dual_residual: last_res.1,
        iterations,
        converged,
    })
}

/// Best rank-one approximation `lambda q q^H` of a Hermitian matrix.
pub fn rank1_extract(x: &CMat) -> (f64, CVec) {
    let (vals, vecs) = hermitian_eigen(x);
    (vals[0], vecs.column(0).into_owned())
}

/// Sum of all but the largest eigenvalue relative to the trace.
pub fn rank1_gap(x: &CMat) -> f64 {
    let (vals, _) = hermitian_eigen(x);
    let tr: f64 = vals.iter().map(|v| v.max(0.0)).sum();
    if tr <= 0.0 {
        return 0.0;
    }
    1.0 - vals[0].max(0.0) / tr
}

/// Rank reduction of a PSD matrix that keeps `tr(F_k X)` for every `k` and
/// never raises the trace. Each step removes at least one rank while the
/// rank `r` satisfies `r^2 > K`, so three functionals reach rank one.
pub fn purify_rank(x: &CMat, functionals: &[CMat]) -> CMat {
    let (vals, vecs) = hermitian_eigen(x);
    let top = vals.first().cloned().unwrap_or(0.0).max(0.0);
    let keep: Vec<usize> = (0..vals.len()).filter(|&i| vals[i] > 1e-12 * top && top > 0.0).collect();
    let mut v = CMat::from_fn(x.nrows(), keep.len(), |i, j| vecs[(i, keep[j])] * vals[keep[j]].sqrt());
    let k = functionals.len();
    while v.ncols() > 1 && v.ncols() * v.ncols() > k {
        let r = v.ncols();
        let n = r * r;
        let mut l = DMatrix::<f64>::zeros(k.max(1), n);
        for (row, f) in functionals.iter().enumerate() {
            let g = v.adjoint() * f * &v;
            let mut col = 0;
            for i in 0..r {
                l[(row, col)] = g[(i, i)].re;
                col += 1;
                for j in (i + 1)..r {
                    l[(row, col)] = 2.0 * g[(i, j)].re;
                    l[(row, col + 1)] = 2.0 * g[(i, j)].im;
                    col += 2;
                }
            }
        }
        let eig = (l.transpose() * &l).symmetric_eigen();
        let (imin, _) = eig.eigenvalues.iter().enumerate().fold((0, f64::INFINITY), |a, (i, e)| if *e < a.1 { (i, *e) } else { a });
        let z = eig.eigenvectors.column(imin);
        let mut delta = CMat::zeros(r, r);
        let mut col = 0;
        for i in 0..r {
            delta[(i, i)] = C64::new(z[col], 0.0);
            col += 1;
            for j in (i + 1)..r {
                delta[(i, j)] = C64::new(z[col], z[col + 1]);
                delta[(j, i)] = delta[(i, j)].conj();
                col += 2;
            }
        }
        let gram = v.adjoint() * &v;
        if (gram * &delta).trace().re < 0.0 {
            delta = -delta;
        }
        let dv = hermitian_eigenvalues(&delta);
        if !(dv[0] > 0.0) {
            break;
        }
        let shrink = CMat::identity(r, r) - delta.scale(1.0 / dv[0]);
        let (sv, sw) = hermitian_eigen(&shrink);
        let kept: Vec<usize> = (0..r).filter(|&i| sv[i] > 1e-12).collect();
        if kept.len() >= r {
            break;
        }
        let factor = CMat::from_fn(r, kept.len(), |i, j| sw[(i, kept[j])] * sv[kept[j]].sqrt());
        v = &v * factor;
    }
    &v * v.adjoint()
}
