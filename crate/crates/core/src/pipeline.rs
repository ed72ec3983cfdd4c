//! The p-value sweep over the tested number of factors.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nulldist::{
    arch_order_condition,    default_subsample_size, estimate_eta_q, estimate_instr_homo, estimate_lambda_hat,
    estimate_omega_nonparam, estimate_theta_md, pvalue, simulate_law_s, simulate_law_t,
    subsample_critical_value, Estimated, NullVarianceSpec, SimulatedLaw, DEFAULT_DRAWS,
    DEFAULT_SUBSAMPLES,
};
use crate::rng::{derive_seed, map_indexed};
use crate::stats::{
    iv_fit, pca_fit, s_from_eigenvalues, s_star_from_eigenvalues, stat_t, InstrumentPanel,
    PanelData,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Statistic {
    /// `√n·S(k)`.
    #[serde(rename = "S")]
    S,
    /// `S*(k)`.
    #[serde(rename = "Sstar")]
    SStar,
    /// `n·T(k)` from instrument-weighted portfolios.
    #[serde(rename = "Tiv")]
    TIv,
    /// Weak-factor gap `Δ_k` with a subsampling critical value.
    #[serde(rename = "Delta")]
    Delta,
}

impl Statistic {
    pub fn name(self) -> &'static str {
        match self {
            Statistic::S => "S",
            Statistic::SStar => "Sstar",
            Statistic::TIv => "Tiv",
            Statistic::Delta => "Delta",
        }
    }

    /// Smallest and largest admissible `k` given `T` and the instrument count.
    fn k_bounds(self, t: usize, kk: Option<usize>) -> Option<(usize, usize)> {
        match self {
            Statistic::S => (t >= 2).then(|| (0, t - 2)),
            Statistic::SStar => (t >= 3).then(|| (0, t - 3)),
            Statistic::TIv => kk.filter(|&k| k >= 1).map(|k| (0, (k - 1).min(t - 1))),
            Statistic::Delta => (t >= 2).then(|| (1, t - 1)),
        }
    }
}

impl fmt::Display for Statistic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Statistic {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "s" => Ok(Statistic::S),
            "sstar" | "s_star" | "s*" => Ok(Statistic::SStar),
            "tiv" | "t" | "t_iv" => Ok(Statistic::TIv),
            "delta" => Ok(Statistic::Delta),
            other => Err(Error::Config(format!("unknown statistic '{other}'"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VarianceMethod {
    Indep,
    Arch,
    Nonparam,
    InstrHomo,
    InstrGeneral,
}

impl VarianceMethod {
    pub fn name(self) -> &'static str {
        match self {
            VarianceMethod::Indep => "indep",
            VarianceMethod::Arch => "arch",
            VarianceMethod::Nonparam => "nonparam",
            VarianceMethod::InstrHomo => "instr_homo",
            VarianceMethod::InstrGeneral => "instr_general",
        }
    }

    fn for_instruments(self) -> bool {
        matches!(self, VarianceMethod::InstrHomo | VarianceMethod::InstrGeneral)
    }

    fn label(self) -> u64 {
        self as u64 + 1
    }
}

impl fmt::Display for VarianceMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for VarianceMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "indep" => Ok(VarianceMethod::Indep),
            "arch" => Ok(VarianceMethod::Arch),
            "nonparam" => Ok(VarianceMethod::Nonparam),
            "instr_homo" => Ok(VarianceMethod::InstrHomo),
            "instr_general" => Ok(VarianceMethod::InstrGeneral),
            other => Err(Error::Config(format!("unknown variance method '{other}'"))),
        }
    }
}

fn default_stats() -> Vec<Statistic> {
    vec![Statistic::S, Statistic::SStar]
}
fn default_methods() -> Vec<VarianceMethod> {
    vec![VarianceMethod::Indep, VarianceMethod::InstrHomo]
}
fn default_draws() -> usize {
    DEFAULT_DRAWS
}
fn default_alpha() -> f64 {
    0.05
}
fn default_subsamples() -> usize {
    DEFAULT_SUBSAMPLES
}

/// Settings of a test sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TestConfig {
    #[serde(default)]
    pub k_min: usize,
    /// Defaults to the largest admissible `k` of each statistic.
    #[serde(default)]
    pub k_max: Option<usize>,
    #[serde(default = "default_stats")]
    pub stats: Vec<Statistic>,
    #[serde(default = "default_methods")]
    pub var_methods: Vec<VarianceMethod>,
    #[serde(default = "default_draws")]
    pub draws: usize,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default)]
    pub seed: u64,
    /// Upper index of the ratio statistic; defaults to `T − 2`.
    #[serde(default)]
    pub k_star: Option<usize>,
    /// Subsample size; defaults to `⌊n/4⌋`.
    #[serde(default)]
    pub subsample_m: Option<usize>,
    #[serde(default = "default_subsamples")]
    pub subsample_b: usize,
}

impl Default for TestConfig {
    fn default() -> Self {
        TestConfig {
            k_min: 0,
            k_max: None,
            stats: default_stats(),
            var_methods: default_methods(),
            draws: DEFAULT_DRAWS,
            alpha: 0.05,
            seed: 0,
            k_star: None,
            subsample_m: None,
            subsample_b: DEFAULT_SUBSAMPLES,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TestRow {
    pub statistic: Statistic,
    pub k: usize,
    /// Variance method, or `subsample` for `Δ_k`.
    pub method: String,
    pub value: f64,
    pub critical_value: f64,
    pub p_value: f64,
    pub reject: bool,
    /// Simulation draws or subsamples behind the critical value.
    pub draws: usize,
    pub warnings: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TestReport {
    pub n: usize,
    pub t: usize,
    pub alpha: f64,
    pub rows: Vec<TestRow>,
    /// Eigenvalues of `V̂_y`, non-increasing.
    pub vy_eigenvalues: Vec<f64>,
    /// Eigenvalues of `V̂_ξ` when instruments were supplied.
    pub vxi_eigenvalues: Option<Vec<f64>>,
}

impl TestReport {
    /// Consecutive spacings `δ_j − δ_{j+1}` of `V̂_y`.
    pub fn spacings(&self) -> Vec<f64> {
        self.vy_eigenvalues.windows(2).map(|w| w[0] - w[1]).collect()
    }

    /// Consecutive spacing ratios of `V̂_y` (`+∞` where the denominator vanishes).
    pub fn spacing_ratios(&self) -> Vec<f64> {
        let e = &self.vy_eigenvalues;
        if e.len() < 3 {
            return Vec::new();
        }
        (0..e.len() - 2).map(|j| s_star_from_eigenvalues(e, j, j + 1)).collect()
    }
}

fn law_warning(law: &SimulatedLaw) -> Option<String> {
    (law.r() < 1000).then(|| format!("only {} simulation draws", law.r()))
}

fn spacing_spec(
    fit: &crate::stats::FactorFit,
    method: VarianceMethod,
) -> Result<Estimated<NullVarianceSpec>> {
    Ok(match method {
        VarianceMethod::Indep => {
            let e = estimate_eta_q(fit)?;
            Estimated {
                value: NullVarianceSpec::IndepErrors {
                    eta: e.value.eta,
                    q: e.value.q,
                },
                warnings: e.warnings,
            }
        }
        VarianceMethod::Arch => {
            let e = estimate_theta_md(fit)?;
            Estimated {
                value: NullVarianceSpec::ArchParam {
                    theta: e.value.theta,
                },
                warnings: e.warnings,
            }
        }
        VarianceMethod::Nonparam => {
            let e = estimate_omega_nonparam(fit)?;
            Estimated {
                value: NullVarianceSpec::Nonparam { omega_bar: e.value },
                warnings: e.warnings,
            }
        }
        other => {
            return Err(Error::invalid(format!(
                "{other} does not apply to the spacing statistics"
            )))
        }
    })
}

/// Rows for `√n·S(k)` and/or `S*(k)` sharing one simulated law.
pub fn spacing_rows(
    panel: &PanelData,
    k: usize,
    method: VarianceMethod,
    want: (bool, bool),
    cfg: &TestConfig,
    seed: u64,
) -> Result<Vec<TestRow>> {
    let t = panel.t();
    let fit = pca_fit(panel, k)?;
    let spec = spacing_spec(&fit, method)?;
    let laws = simulate_law_s(
        &spec.value,
        t,
        k,
        &fit.q_hat,
        cfg.draws,
        seed,
        cfg.k_star.filter(|_| want.1),
        false,
    )?;
    let eig = panel.second_moment().eigenvalues();
    let mut rows = Vec::new();
    if want.0 {
        let value = (panel.n() as f64).sqrt() * s_from_eigenvalues(&eig, k);
        rows.push(make_row(Statistic::S, k, method, value, &laws.s, cfg.alpha, &spec.warnings));
    }
    if want.1 {
        let law = laws.s_star.as_ref().ok_or_else(|| {
            Error::invalid(format!("S* needs T - k >= 3, got T={t}, k={k}"))
        })?;
        let k_star = cfg.k_star.unwrap_or(t - 2);
        let value = s_star_from_eigenvalues(&eig, k, k_star);
        rows.push(make_row(Statistic::SStar, k, method, value, law, cfg.alpha, &spec.warnings));
    }
    Ok(rows)
}

fn make_row(
    statistic: Statistic,
    k: usize,
    method: VarianceMethod,
    value: f64,
    law: &SimulatedLaw,
    alpha: f64,
    warnings: &[String],
) -> TestRow {
    let p = pvalue(value, law);
    let mut warnings = warnings.to_vec();
    warnings.extend(law_warning(law));
    TestRow {
        statistic,
        k,
        method: method.name().to_string(),
        value,
        critical_value: law.critical_value(alpha),
        p_value: p,
        reject: p <= alpha,
        draws: law.r(),
        warnings,
    }
}

/// Row for `n·T(k)`.
pub fn instrument_row(
    panel: &PanelData,
    instruments: &InstrumentPanel,
    k: usize,
    method: VarianceMethod,
    cfg: &TestConfig,
    seed: u64,
) -> Result<TestRow> {
    let iv = iv_fit(panel, instruments, k)?;
    let spec = match method {
        VarianceMethod::InstrHomo => estimate_instr_homo(&iv, instruments)?,
        VarianceMethod::InstrGeneral => estimate_lambda_hat(&iv, instruments)?,
        other => {
            return Err(Error::invalid(format!(
                "{other} does not apply to the instrument statistic"
            )))
        }
    };
    let law = simulate_law_t(&spec.value, panel.t(), k, instruments.k(), cfg.draws, seed)?;
    let value = panel.n() as f64 * stat_t(&iv.v_xi_hat, k)?;
    Ok(make_row(Statistic::TIv, k, method, value, &law, cfg.alpha, &spec.warnings))
}

/// Row for `Δ_k` with a subsampling critical value.
pub fn delta_row(panel: &PanelData, k: usize, cfg: &TestConfig, seed: u64) -> Result<TestRow> {
    let m = cfg.subsample_m.unwrap_or_else(|| default_subsample_size(panel.n()));
    let res = subsample_critical_value(panel, k, m, cfg.subsample_b, cfg.alpha, seed)?;
    let above = res.draws.iter().filter(|d| **d >= res.statistic).count();
    let mut warnings = Vec::new();
    if res.draws.len() < 100 {
        warnings.push(format!("only {} subsamples", res.draws.len()));
    }
    Ok(TestRow {
        statistic: Statistic::Delta,
        k,
        method: "subsample".to_string(),
        value: res.statistic,
        critical_value: res.critical_value,
        p_value: (1 + above) as f64 / (res.draws.len() + 1) as f64,
        reject: res.reject,
        draws: res.draws.len(),
        warnings,
    })
}

#[derive(Clone, Copy, Debug)]
enum Cell {
    Spacing {
        k: usize,
        method: VarianceMethod,
        want: (bool, bool),
    },
    Instrument {
        k: usize,
        method: VarianceMethod,
    },
    Delta {
        k: usize,
    },
}

impl Cell {
    fn seed(&self, base: u64) -> u64 {
        let (k, group, m) = match *self {
            Cell::Spacing { k, method, .. } => (k, 1, method.label()),
            Cell::Instrument { k, method } => (k, 2, method.label()),
            Cell::Delta { k } => (k, 3, 0),
        };
        derive_seed(derive_seed(derive_seed(base, k as u64), group), m)
    }

    fn context(&self) -> String {
        match *self {
            Cell::Spacing { k, method, .. } => format!("spacing statistics at k={k} ({method})"),
            Cell::Instrument { k, method } => format!("Tiv at k={k} ({method})"),
            Cell::Delta { k } => format!("Delta at k={k}"),
        }
    }
}

fn k_range(
    stat: Statistic,
    cfg: &TestConfig,
    t: usize,
    kk: Option<usize>,
) -> Result<std::ops::RangeInclusive<usize>> {
    let (lo, hi) = stat.k_bounds(t, kk).ok_or_else(|| {
        Error::invalid(format!("{stat} is not available for T={t} with the given data"))
    })?;
    let k_max = match cfg.k_max {
        Some(k) if k > hi => {
            return Err(Error::invalid(format!(
                "k_max={k} exceeds the largest admissible k={hi} for {stat}"
            )))
        }
        Some(k) => k,
        None => hi,
    };
    Ok(cfg.k_min.max(lo)..=k_max)
}

/// Computes every requested statistic for every `k` in range, re-estimating
/// the factor space and the null variance at each `k`.
pub fn run_test_sweep(
    panel: &PanelData,
    instruments: Option<&InstrumentPanel>,
    cfg: &TestConfig,
) -> Result<TestReport> {
    if !(cfg.alpha > 0.0 && cfg.alpha < 1.0) {
        return Err(Error::Config(format!("alpha must lie in (0,1), got {}", cfg.alpha)));
    }
    if cfg.draws == 0 {
        return Err(Error::Config("draws must be positive".into()));
    }
    if cfg.stats.is_empty() {
        return Err(Error::Config("no statistic selected".into()));
    }
    if let Some(inst) = instruments {
        if inst.n() != panel.n() {
            return Err(Error::invalid(format!(
                "panel has {} assets, instruments have {}",
                panel.n(),
                inst.n()
            )));
        }
    }
    let t = panel.t();
    let kk = instruments.map(|i| i.k());
    let spacing_methods: Vec<VarianceMethod> =
        cfg.var_methods.iter().copied().filter(|m| !m.for_instruments()).collect();
    let instrument_methods: Vec<VarianceMethod> =
        cfg.var_methods.iter().copied().filter(|m| m.for_instruments()).collect();

    let mut cells = Vec::new();
    let has = |s| cfg.stats.contains(&s);
    let want_s = has(Statistic::S);
    let want_star = has(Statistic::SStar);
    if want_s || want_star {
        if spacing_methods.is_empty() {
            return Err(Error::Config(
                "S/Sstar need one of the variance methods indep, arch, nonparam".into(),
            ));
        }
        let s_range = if want_s { Some(k_range(Statistic::S, cfg, t, kk)?) } else { None };
        let star_range = if want_star { Some(k_range(Statistic::SStar, cfg, t, kk)?) } else { None };
        let lo = [&s_range, &star_range].iter().filter_map(|r| r.as_ref().map(|r| *r.start())).min().unwrap();
        let hi = [&s_range, &star_range].iter().filter_map(|r| r.as_ref().map(|r| *r.end())).max().unwrap();
        for k in lo..=hi {
            let want = (
                s_range.as_ref().is_some_and(|r| r.contains(&k)),
                star_range.as_ref().is_some_and(|r| r.contains(&k)),
            );
            if want.0 || want.1 {
                for &method in &spacing_methods {
                    if method == VarianceMethod::Arch
                        && cfg.k_max.is_none()
                        && !arch_order_condition(t, k)
                    {
                        log::info!("skipping arch at k={k}: too few moments for T={t}");
                        continue;
                    }
                    cells.push(Cell::Spacing { k, method, want });
                }
            }
        }
    }
    if has(Statistic::TIv) {
        if instruments.is_none() {
            return Err(Error::Config("Tiv needs an instrument file".into()));
        }
        if instrument_methods.is_empty() {
            return Err(Error::Config(
                "Tiv needs one of the variance methods instr_homo, instr_general".into(),
            ));
        }
        for k in k_range(Statistic::TIv, cfg, t, kk)? {
            for &method in &instrument_methods {
                cells.push(Cell::Instrument { k, method });
            }
        }
    }
    if has(Statistic::Delta) {
        for k in k_range(Statistic::Delta, cfg, t, kk)? {
            cells.push(Cell::Delta { k });
        }
    }

    let results = map_indexed(cells.len(), |i| {
        let cell = cells[i];
        let seed = cell.seed(cfg.seed);
        let rows = match cell {
            Cell::Spacing { k, method, want } => spacing_rows(panel, k, method, want, cfg, seed),
            Cell::Instrument { k, method } => {
                instrument_row(panel, instruments.expect("checked"), k, method, cfg, seed)
                    .map(|r| vec![r])
            }
            Cell::Delta { k } => delta_row(panel, k, cfg, seed).map(|r| vec![r]),
        };
        rows.map_err(|e| e.context(cell.context()))
    });
    let mut rows = Vec::new();
    for r in results {
        rows.extend(r?);
    }
    let order = |s: Statistic| cfg.stats.iter().position(|x| *x == s).unwrap_or(usize::MAX);
    rows.sort_by(|a, b| {
        (order(a.statistic), a.k, &a.method).cmp(&(order(b.statistic), b.k, &b.method))
    });

    let vxi_eigenvalues = match instruments {
        Some(inst) => Some(crate::stats::portfolio_aggregates(panel, inst)?.1.eigenvalues()),
        None => None,
    };
    Ok(TestReport {
        n: panel.n(),
        t,
        alpha: cfg.alpha,
        rows,
        vy_eigenvalues: panel.second_moment().eigenvalues(),
        vxi_eigenvalues,
    })
}
