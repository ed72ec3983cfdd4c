use nalgebra::DMatrix;
use rand::seq::index::sample;

use crate::error::{Error, Result};
use crate::linalg::sym_eigenvalues;
use crate::rng::{map_indexed, stream};
use crate::stats::{delta_from_eigenvalues, PanelData};

/// `⌊n/4⌋`, at least 2.
pub fn default_subsample_size(n: usize) -> usize {
    (n / 4).max(2)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SubsampleResult {
    /// Full-sample `Δ_k`.
    pub statistic: f64,
    pub critical_value: f64,
    /// `Δ_k^b` in subsample order.
    pub draws: Vec<f64>,
    pub reject: bool,
    pub m: usize,
}

/// Subsampling critical value for `Δ_k`: `B` row subsets of size `m` drawn
/// without replacement, each giving `√m (δ_k − δ_{k+1})`.
pub fn subsample_critical_value(
    panel: &PanelData,
    k: usize,
    m: usize,
    b: usize,
    alpha: f64,
    seed: u64,
) -> Result<SubsampleResult> {
    let (n, t) = (panel.n(), panel.t());
    if k == 0 || k >= t {
        return Err(Error::invalid(format!("Δ_k needs 1 <= k <= T-1, got k={k}, T={t}")));
    }
    if m < 2 || m >= n {
        return Err(Error::invalid(format!("subsample size must satisfy 2 <= m < n, got m={m}, n={n}")));
    }
    if b == 0 {
        return Err(Error::invalid("need at least one subsample"));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidParameter(format!("alpha must lie in (0,1), got {alpha}")));
    }
    let y = panel.y();
    let statistic = delta_from_eigenvalues(&panel.second_moment().eigenvalues(), k, n);
    let draws = map_indexed(b, |i| {
        let mut rng = stream(seed, i as u64);
        let rows = sample(&mut rng, n, m);
        let mut v = DMatrix::<f64>::zeros(t, t);
        for r in rows.iter() {
            let row = y.row(r);
            v.ger(1.0, &row.transpose(), &row.transpose(), 1.0);
        }
        v /= m as f64;
        delta_from_eigenvalues(&sym_eigenvalues(&v), k, m)
    });
    let mut sorted = draws.clone();
    sorted.sort_by(f64::total_cmp);
    let idx = (((1.0 - alpha) * b as f64).ceil() as usize).clamp(1, b);
    let critical_value = sorted[idx - 1];
    Ok(SubsampleResult {
        statistic,
        critical_value,
        draws,
        reject: statistic > critical_value,
        m,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn identical_rows_give_constant_draws() {
        let row = [3.0, 1.0, 0.5, -2.0];
        let y = DMatrix::from_fn(40, 4, |_, j| row[j]);
        let panel = PanelData::new(y).unwrap();
        let res = subsample_critical_value(&panel, 1, 10, 50, 0.05, 1).unwrap();
        let first = res.draws[0];
        assert!(res.draws.iter().all(|d| (d - first).abs() < 1e-9 * first));
        assert!((res.critical_value - first).abs() < 1e-9 * first);
    }

    #[test]
    fn single_subsample() {
        let mut g = rng::from_seed(1);
        let y = DMatrix::from_fn(30, 4, |_, _| StandardNormal.sample(&mut g));
        let panel = PanelData::new(y).unwrap();
        let res = subsample_critical_value(&panel, 2, 7, 1, 0.05, 3).unwrap();
        assert_eq!(res.critical_value, res.draws[0]);
        assert!(subsample_critical_value(&panel, 2, 30, 1, 0.05, 3).is_err());
        assert!(subsample_critical_value(&panel, 0, 7, 1, 0.05, 3).is_err());
        let again = subsample_critical_value(&panel, 2, 7, 1, 0.05, 3).unwrap();
        assert_eq!(res, again);
    }

    #[test]
    fn strong_factor_rejects() {
        let mut g = rng::from_seed(2);
        let (n, t) = (4000, 6);
        let f = DMatrix::from_fn(t, 2, |_, _| Distribution::<f64>::sample(&StandardNormal, &mut g));
        let beta = DMatrix::from_fn(n, 2, |_, _| Distribution::<f64>::sample(&StandardNormal, &mut g));
        let e = DMatrix::from_fn(n, t, |_, _| Distribution::<f64>::sample(&StandardNormal, &mut g));
        let panel = PanelData::new(&beta * f.transpose() + e).unwrap();
        let res = subsample_critical_value(&panel, 2, default_subsample_size(n), 200, 0.05, 4).unwrap();
        assert!(res.reject);
    }
}
