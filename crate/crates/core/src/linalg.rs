//! Dense complex linear-algebra helpers shared by the solvers.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type C64 = Complex64;
pub type CVec = DVector<C64>;
pub type CMat = DMatrix<C64>;

pub const ZERO: C64 = C64 { re: 0.0, im: 0.0 };
pub const ONE: C64 = C64 { re: 1.0, im: 0.0 };

pub fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

pub fn pow_db(x: f64) -> f64 {
    10.0 * x.log10()
}

pub fn db_to_pow(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn norm_sqr(v: &CVec) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum()
}

/// Plain bilinear product `a^T b` (no conjugation).
pub fn dot_t(a: &CVec, b: &CVec) -> C64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

pub fn outer_t(a: &CVec, b: &CVec) -> CMat {
    a * b.transpose()
}

pub fn hermitian_part(m: &CMat) -> CMat {
    (m + m.adjoint()).scale(0.5)
}

/// Complex product through real matrix products, which run on the
/// blocked real kernel.
pub fn matmul(a: &CMat, b: &CMat) -> CMat {
    let (ar, ai) = (a.map(|v| v.re), a.map(|v| v.im));
    let (br, bi) = (b.map(|v| v.re), b.map(|v| v.im));
    let re = &ar * &br - &ai * &bi;
    let im = &ar * &bi + &ai * &br;
    re.zip_map(&im, C64::new)
}

/// Eigenvalues of the Hermitian part of `m` in descending order.
pub fn hermitian_eigenvalues(m: &CMat) -> Vec<f64> {
    let mut vals: Vec<f64> = hermitian_part(m).symmetric_eigenvalues().iter().cloned().collect();
    vals.sort_by(|a, b| b.total_cmp(a));
    vals
}

/// Eigen-decomposition of the Hermitian part of `m`, eigenvalues sorted in
/// descending order with matching eigenvector columns.
pub fn hermitian_eigen(m: &CMat) -> (Vec<f64>, CMat) {
    let n = m.nrows();
    let eig = SymmetricEigen::new(hermitian_part(m));
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = idx.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = CMat::from_fn(n, n, |r, k| eig.eigenvectors[(r, idx[k])]);
    (values, vectors)
}

pub fn top_eigenpair(m: &CMat) -> (f64, CVec) {
    let (vals, vecs) = hermitian_eigen(m);
    (vals[0], vecs.column(0).into_owned())
}

pub fn lambda_max(m: &CMat) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    hermitian_eigen(m).0[0]
}

/// Orthonormal basis of the nullspace of `h` (`cols` columns) together with
/// its numerical rank. Singular values at or below `rel_tol * sigma_max`
/// count as zero.
pub fn nullspace(h: &CMat, rel_tol: f64) -> (CMat, usize) {
    let n = h.ncols();
    if h.nrows() == 0 || n == 0 {
        return (CMat::identity(n, n), 0);
    }
    let padded = if h.nrows() < n {
        let mut p = CMat::zeros(n, n);
        p.view_mut((0, 0), (h.nrows(), n)).copy_from(h);
        p
    } else {
        h.clone()
    };
    let svd = padded.svd(false, true);
    let v_t = svd.v_t.expect("v_t requested");
    let sigma = &svd.singular_values;
    let smax = sigma.iter().cloned().fold(0.0, f64::max);
    if smax == 0.0 {
        return (CMat::identity(n, n), 0);
    }
    let mut null_rows: Vec<usize> = Vec::new();
    let mut rank = 0;
    for (i, &s) in sigma.iter().enumerate() {
        if s <= rel_tol * smax {
            null_rows.push(i);
        } else {
            rank += 1;
        }
    }
    let z = CMat::from_fn(n, null_rows.len(), |r, k| v_t[(null_rows[k], r)].conj());
    (z, rank)
}

/// Rotates `x` so that its first significant entry is real and positive.
pub fn canonical_phase(x: &CVec) -> CVec {
    let scale = norm_sqr(x).sqrt();
    if scale == 0.0 {
        return x.clone();
    }
    match x.iter().find(|z| z.norm() > 1e-12 * scale) {
        Some(z) => {
            let rot = z.conj() / z.norm();
            x.map(|v| v * rot)
        }
        None => x.clone(),
    }
}

/// Sylvester Hadamard matrix of order `n` (power of two).
pub fn hadamard(n: usize) -> Result<DMatrix<f64>> {
    if n == 0 || !n.is_power_of_two() {
        return Err(Error::InvalidInput(format!(
            "Hadamard order must be a power of two, got {n}"
        )));
    }
    let mut h = DMatrix::from_element(1, 1, 1.0);
    while h.nrows() < n {
        let m = h.nrows();
        let mut next = DMatrix::zeros(2 * m, 2 * m);
        for r in 0..m {
            for k in 0..m {
                let v = h[(r, k)];
                next[(r, k)] = v;
                next[(r, k + m)] = v;
                next[(r + m, k)] = v;
                next[(r + m, k + m)] = -v;
            }
        }
        h = next;
    }
    Ok(h)
}

/// Unnormalised DFT matrix `F[r, k] = exp(-j 2 pi r k / n)`.
pub fn dft(n: usize) -> CMat {
    CMat::from_fn(n, n, |r, k| {
        let ang = -2.0 * std::f64::consts::PI * (r * k % n.max(1)) as f64 / n as f64;
        C64::from_polar(1.0, ang)
    })
}

pub fn is_finite(v: &CVec) -> bool {
    v.iter().all(|z| z.re.is_finite() && z.im.is_finite())
}
