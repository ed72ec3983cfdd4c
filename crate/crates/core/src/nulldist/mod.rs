//! Null distributions: variance estimators for the limiting Gaussian matrix,
//! simulated null laws, p-values and subsampling critical values.

mod estimate;
mod simulate;
mod subsample;

pub use estimate::{
    arch_order_condition,
    build_omega_arch, estimate_eta_q, estimate_instr_homo, estimate_lambda_hat,
    estimate_omega_nonparam, estimate_sigma2, estimate_theta_md, EtaQ, MomentCoefficients,
    ThetaEstimate,
};
pub use simulate::{simulate_law_s, simulate_law_t, simulate_z_indep, SpacingLaws, VechSampler};
pub use subsample::{default_subsample_size, subsample_critical_value, SubsampleResult};

use nalgebra::DMatrix;

use crate::error::{Error, Result};

pub const DEFAULT_DRAWS: usize = 10_000;
pub const DEFAULT_SUBSAMPLES: usize = 1000;

/// Below this many draws a law is fine for tests but too coarse for reporting.
const MIN_PRODUCTION_DRAWS: usize = 1000;

/// Variance structure of the limiting Gaussian matrix, one variant per
/// estimation strategy.
#[derive(Clone, Debug, PartialEq)]
pub enum NullVarianceSpec {
    /// Cross-sectionally and serially independent errors: `Var z_tt = η`,
    /// `Var z_ts = q`.
    IndepErrors { eta: f64, q: f64 },
    /// Linear ARCH-type parameter `(q, qψ(0), …, qψ(T−1))`.
    ArchParam { theta: Vec<f64> },
    /// Covariance of the trace-removed projected matrix, `(T−k)² × (T−k)²`.
    Nonparam { omega_bar: DMatrix<f64> },
    /// Homoskedastic instrument route; weights already include `σ̂²`.
    InstrHomo { sigma2: f64, weights: Vec<f64> },
    /// Heteroskedastic instrument route; eigenvalues of `Λ̂`.
    InstrGeneral { lambda: Vec<f64> },
}

impl NullVarianceSpec {
    pub fn label(&self) -> &'static str {
        match self {
            NullVarianceSpec::IndepErrors { .. } => "indep",
            NullVarianceSpec::ArchParam { .. } => "arch",
            NullVarianceSpec::Nonparam { .. } => "nonparam",
            NullVarianceSpec::InstrHomo { .. } => "instr_homo",
            NullVarianceSpec::InstrGeneral { .. } => "instr_general",
        }
    }
}

/// A value together with the non-fatal problems met while computing it.
#[derive(Clone, Debug)]
pub struct Estimated<T> {
    pub value: T,
    pub warnings: Vec<String>,
}

impl<T> Estimated<T> {
    pub(crate) fn new(value: T, warnings: Vec<String>) -> Self {
        for w in &warnings {
            log::warn!("{w}");
        }
        Estimated { value, warnings }
    }
}

/// Sorted simulated draws of a null statistic.
#[derive(Clone, Debug, PartialEq)]
pub struct SimulatedLaw {
    draws: Vec<f64>,
    seed: u64,
}

impl SimulatedLaw {
    /// Sorts the draws ascending. `+∞` is allowed, NaN is not.
    pub fn from_draws(mut draws: Vec<f64>, seed: u64) -> Result<Self> {
        if draws.is_empty() {
            return Err(Error::SimulationFailure("no draws".into()));
        }
        if draws.iter().any(|d| d.is_nan()) {
            return Err(Error::SimulationFailure("NaN among simulated draws".into()));
        }
        if draws.len() < MIN_PRODUCTION_DRAWS {
            log::warn!(
                "simulated law has only {} draws; p-values will be coarse",
                draws.len()
            );
        }
        draws.sort_by(f64::total_cmp);
        Ok(SimulatedLaw { draws, seed })
    }

    pub fn draws(&self) -> &[f64] {
        &self.draws
    }

    pub fn r(&self) -> usize {
        self.draws.len()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Order statistic `⌈p·R⌉` (clamped to `1..=R`).
    pub fn quantile(&self, p: f64) -> f64 {
        let r = self.draws.len();
        let idx = ((p * r as f64).ceil() as usize).clamp(1, r);
        self.draws[idx - 1]
    }

    /// Upper `α` critical value.
    pub fn critical_value(&self, alpha: f64) -> f64 {
        self.quantile(1.0 - alpha)
    }

    /// Number of draws `≥ x`.
    pub fn count_at_least(&self, x: f64) -> usize {
        self.draws.len() - self.draws.partition_point(|d| *d < x)
    }

    /// Empirical CDF `#{draws ≤ x}/R`.
    pub fn ecdf(&self, x: f64) -> f64 {
        self.draws.partition_point(|d| *d <= x) as f64 / self.draws.len() as f64
    }

    pub fn mean(&self) -> f64 {
        self.draws.iter().sum::<f64>() / self.draws.len() as f64
    }
}

/// `(1 + #{draws ≥ stat}) / (R + 1)`.
pub fn pvalue(stat: f64, law: &SimulatedLaw) -> f64 {
    (1 + law.count_at_least(stat)) as f64 / (law.r() + 1) as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pvalue_examples() {
        let law = SimulatedLaw::from_draws((1..=999).map(f64::from).collect(), 0).unwrap();
        assert_eq!(pvalue(0.0, &law), 1.0);
        assert_eq!(pvalue(1000.0, &law), 1.0 / 1000.0);
        assert!((pvalue(500.0, &law) - 0.5).abs() < 2e-3);
        let mut prev = 1.0;
        for x in 0..1100 {
            let p = pvalue(x as f64 * 0.97, &law);
            assert!(p <= prev && p > 0.0);
            prev = p;
        }
    }

    #[test]
    fn quantiles_use_order_statistics() {
        let law = SimulatedLaw::from_draws(vec![3.0, 1.0, 2.0, 4.0], 0).unwrap();
        assert_eq!(law.draws(), &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(law.critical_value(0.05), 4.0);
        assert_eq!(law.critical_value(0.5), 2.0);
        assert_eq!(law.quantile(0.0), 1.0);
        let single = SimulatedLaw::from_draws(vec![7.0], 0).unwrap();
        assert_eq!(single.critical_value(0.05), 7.0);
        assert!(SimulatedLaw::from_draws(vec![f64::NAN], 0).is_err());
        let inf = SimulatedLaw::from_draws(vec![1.0, f64::INFINITY], 0).unwrap();
        assert_eq!(pvalue(f64::INFINITY, &inf), 2.0 / 3.0);
    }
}
