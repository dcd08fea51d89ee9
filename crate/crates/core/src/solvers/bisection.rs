use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct Bisection<W> {
    /// Largest value certified feasible.
    pub t: f64,
    pub witness: W,
    pub iterations: usize,
    /// Interval width after each iteration.
    pub widths: Vec<f64>,
}

/// Bisection on a predicate that is feasible below some threshold and
/// infeasible above it. The predicate returns a witness when feasible.
/// `t_min` must be feasible.
pub fn bisection<W, F>(mut feasible: F, t_min: f64, t_max: f64, eps: f64) -> Result<Bisection<W>>
where
    F: FnMut(f64) -> Result<Option<W>>,
{
    if !(t_max >= t_min) || !(eps > 0.0) {
        return Err(Error::InvalidInput(format!("bad bisection interval [{t_min}, {t_max}] with eps {eps}")));
    }
    let mut witness = feasible(t_min)?.ok_or_else(|| Error::Infeasible(format!("infeasible at the lower end {t_min}")))?;
    let (mut lo, mut hi) = (t_min, t_max);
    let mut widths = Vec::new();
    let mut iterations = 0;
    while hi - lo > eps {
        let mid = 0.5 * (lo + hi);
        match feasible(mid)? {
            Some(w) => {
                witness = w;
                lo = mid;
            }
            None => hi = mid,
        }
        iterations += 1;
        widths.push(hi - lo);
    }
    Ok(Bisection { t: lo, witness, iterations, widths })
}
