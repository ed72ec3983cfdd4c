//! Rejection frequencies of the tests over grids of simulated designs.

use serde::{Deserialize, Serialize};

use crate::dgp::{DgpConfig, DgpKind, Design, FactorPath};
use crate::error::{Error, Result};
use crate::pipeline::{delta_row, instrument_row, spacing_rows, Statistic, TestConfig, VarianceMethod};
use crate::rng::{self, derive_seed, map_indexed};

/// One test evaluated in every repetition.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McTest {
    pub statistic: Statistic,
    pub k: usize,
    /// Ignored for `Delta`.
    #[serde(default)]
    pub method: Option<VarianceMethod>,
}

impl McTest {
    pub fn new(statistic: Statistic, k: usize, method: VarianceMethod) -> Self {
        McTest {
            statistic,
            k,
            method: Some(method),
        }
    }

    pub fn label(&self) -> String {
        match (self.statistic, self.method) {
            (Statistic::Delta, _) | (_, None) => format!("{}({})", self.statistic, self.k),
            (s, Some(m)) => format!("{s}({})[{m}]", self.k),
        }
    }

    fn method_or_default(&self) -> VarianceMethod {
        self.method.unwrap_or(match self.statistic {
            Statistic::TIv => VarianceMethod::InstrHomo,
            _ => VarianceMethod::Indep,
        })
    }
}

fn one() -> usize {
    1
}
fn default_reps() -> usize {
    1000
}
fn default_draws() -> usize {
    crate::nulldist::DEFAULT_DRAWS
}
fn default_alpha() -> f64 {
    0.05
}
fn default_kappa() -> Vec<f64> {
    vec![0.0]
}
fn default_c() -> Vec<f64> {
    vec![1.0]
}
fn default_instruments() -> usize {
    10
}
fn default_b() -> usize {
    crate::nulldist::DEFAULT_SUBSAMPLES
}
fn default_arch_l() -> f64 {
    0.1
}
fn default_arch_u() -> f64 {
    0.4
}
fn default_burn_in() -> usize {
    50
}

/// Grid of designs and the tests run on each.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McGrid {
    pub n: Vec<usize>,
    pub t: Vec<usize>,
    /// Weak-factor exponents (designs 2 and 3).
    #[serde(default = "default_kappa")]
    pub kappa: Vec<f64>,
    /// Weak-factor scales (designs 2 and 3).
    #[serde(default = "default_c")]
    pub c: Vec<f64>,
    #[serde(default = "default_reps")]
    pub reps: usize,
    /// Factor paths per cell; repetitions are split evenly across paths.
    #[serde(default = "one")]
    pub paths: usize,
    /// Null simulation draws per test.
    #[serde(default = "default_draws")]
    pub draws: usize,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default)]
    pub seed: u64,
    /// True number of factors (designs 1 and 4).
    #[serde(default)]
    pub factors: Option<usize>,
    #[serde(default = "default_instruments")]
    pub instruments: usize,
    #[serde(default = "default_arch_l")]
    pub arch_l: f64,
    #[serde(default = "default_arch_u")]
    pub arch_u: f64,
    #[serde(default = "default_burn_in")]
    pub burn_in: usize,
    #[serde(default)]
    pub k_star: Option<usize>,
    #[serde(default)]
    pub subsample_m: Option<usize>,
    #[serde(default = "default_b")]
    pub subsample_b: usize,
    /// Defaults to the size and power tests of the design.
    #[serde(default)]
    pub tests: Vec<McTest>,
}

impl McGrid {
    pub fn new(n: Vec<usize>, t: Vec<usize>) -> Self {
        McGrid {
            n,
            t,
            kappa: default_kappa(),
            c: default_c(),
            reps: default_reps(),
            paths: 1,
            draws: default_draws(),
            alpha: 0.05,
            seed: 0,
            factors: None,
            instruments: default_instruments(),
            arch_l: default_arch_l(),
            arch_u: default_arch_u(),
            burn_in: default_burn_in(),
            k_star: None,
            subsample_m: None,
            subsample_b: default_b(),
            tests: Vec::new(),
        }
    }

    fn kind(&self, dgp: u8, kappa: f64, c: f64) -> Result<DgpKind> {
        let k = self.factors.unwrap_or(3);
        Ok(match dgp {
            1 => DgpKind::Dgp1 { k },
            2 => DgpKind::Dgp2 { kappa, c },
            3 => DgpKind::Dgp3 {
                kappa,
                c,
                arch_l: self.arch_l,
                arch_u: self.arch_u,
                burn_in: self.burn_in,
            },
            4 => DgpKind::Dgp4 {
                k,
                instruments: self.instruments,
            },
            other => return Err(Error::Config(format!("unknown design {other}, expected 1-4"))),
        })
    }

    fn test_config(&self) -> TestConfig {
        TestConfig {
            draws: self.draws,
            alpha: self.alpha,
            k_star: self.k_star,
            subsample_m: self.subsample_m,
            subsample_b: self.subsample_b,
            ..TestConfig::default()
        }
    }

    /// Explicit tests, or the size and power tests of design `dgp`.
    pub fn tests_for(&self, dgp: u8) -> Vec<McTest> {
        if !self.tests.is_empty() {
            return self.tests.clone();
        }
        let k = self.factors.unwrap_or(3);
        match dgp {
            2 => spacing_pair(2, VarianceMethod::Indep),
            3 => spacing_pair(2, VarianceMethod::Arch),
            4 => {
                let mut v = Vec::new();
                for kk in [k, k.saturating_sub(1)] {
                    for m in [VarianceMethod::InstrHomo, VarianceMethod::InstrGeneral] {
                        v.push(McTest::new(Statistic::TIv, kk, m));
                    }
                }
                v
            }
            _ => {
                let mut v = spacing_pair(k, VarianceMethod::Indep);
                v.extend(spacing_pair(k.saturating_sub(1), VarianceMethod::Indep));
                v
            }
        }
    }
}

fn spacing_pair(k: usize, m: VarianceMethod) -> Vec<McTest> {
    vec![McTest::new(Statistic::S, k, m), McTest::new(Statistic::SStar, k, m)]
}

/// Rejection frequency of one test in one design.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct McCell {
    pub dgp: u8,
    pub n: usize,
    pub t: usize,
    /// `None` outside designs 2 and 3.
    pub kappa: Option<f64>,
    pub c: Option<f64>,
    pub test: String,
    pub statistic: Statistic,
    pub k: usize,
    pub method: String,
    /// Rejection frequency in percent, averaged over paths.
    pub rate: f64,
    /// Standard deviation of the per-path rates (percent); `None` with one path.
    pub sd_across_paths: Option<f64>,
    pub per_path: Vec<f64>,
    pub reps: usize,
    /// Repetitions dropped because a step failed.
    pub failed: usize,
}

/// Evaluates every test on one panel; spacing tests with the same `k` and
/// method share one simulated law.
fn evaluate(
    draw: &crate::dgp::DgpDraw,
    tests: &[McTest],
    cfg: &TestConfig,
    seed: u64,
) -> Result<Vec<bool>> {
    let mut out = vec![false; tests.len()];
    let mut done = vec![false; tests.len()];
    for i in 0..tests.len() {
        if done[i] {
            continue;
        }
        let test = &tests[i];
        let method = test.method_or_default();
        let cell_seed = derive_seed(derive_seed(seed, i as u64), test.k as u64);
        match test.statistic {
            Statistic::S | Statistic::SStar => {
                let partner = (i + 1..tests.len()).find(|&j| {
                    !done[j]
                        && tests[j].k == test.k
                        && tests[j].method_or_default() == method
                        && matches!(tests[j].statistic, Statistic::S | Statistic::SStar)
                        && tests[j].statistic != test.statistic
                });
                let mut idx = vec![i];
                idx.extend(partner);
                let want = (
                    idx.iter().any(|&j| tests[j].statistic == Statistic::S),
                    idx.iter().any(|&j| tests[j].statistic == Statistic::SStar),
                );
                let rows = spacing_rows(&draw.panel, test.k, method, want, cfg, cell_seed)?;
                for &j in &idx {
                    let row = rows.iter().find(|r| r.statistic == tests[j].statistic).expect("row");
                    out[j] = row.reject;
                    done[j] = true;
                }
            }
            Statistic::TIv => {
                let inst = draw
                    .instruments
                    .as_ref()
                    .ok_or_else(|| Error::Config("Tiv needs a design with instruments".into()))?;
                out[i] = instrument_row(&draw.panel, inst, test.k, method, cfg, cell_seed)?.reject;
                done[i] = true;
            }
            Statistic::Delta => {
                out[i] = delta_row(&draw.panel, test.k, cfg, cell_seed)?.reject;
                done[i] = true;
            }
        }
    }
    Ok(out)
}

fn mean_sd(v: &[f64]) -> (f64, Option<f64>) {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    let sd = (v.len() > 1).then(|| {
        (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
    });
    (m, sd)
}

/// Runs design `dgp` over every `(n, T, κ, c)` in the grid.
pub fn run_montecarlo(dgp: u8, grid: &McGrid) -> Result<Vec<McCell>> {
    if grid.reps == 0 || grid.paths == 0 {
        return Err(Error::Config("reps and paths must be positive".into()));
    }
    if grid.n.is_empty() || grid.t.is_empty() {
        return Err(Error::Config("grid needs at least one n and one T".into()));
    }
    let tests = grid.tests_for(dgp);
    let cfg = grid.test_config();
    let (kappas, cs) = match dgp {
        2 | 3 => (
            grid.kappa.iter().copied().map(Some).collect(),
            grid.c.iter().copied().map(Some).collect(),
        ),
        _ => (vec![None], vec![None]),
    };
    let mut cells = Vec::new();
    let mut design_index = 0u64;
    for &n in &grid.n {
        for &t in &grid.t {
            for &kappa in &kappas {
                for &c in &cs {
                    design_index += 1;
                    let kind = grid.kind(dgp, kappa.unwrap_or(0.0), c.unwrap_or(1.0))?;
                    let mut dc = DgpConfig::new(n, t, kind);
                    dc.seed = derive_seed(grid.seed, design_index);
                    let mut ctx = format!("design {dgp}, n={n}, T={t}");
                    if let (Some(kappa), Some(c)) = (kappa, c) {
                        ctx.push_str(&format!(", kappa={kappa}, c={c}"));
                    }
                    log::info!("{ctx}: {} reps over {} paths", grid.reps, grid.paths);
                    let (rates, failed) =
                        run_design(&dc, &tests, &cfg, grid).map_err(|e| e.context(ctx.clone()))?;
                    for (j, test) in tests.iter().enumerate() {
                        let per_path: Vec<f64> = rates.iter().map(|r| r[j]).collect();
                        let (rate, sd) = mean_sd(&per_path);
                        cells.push(McCell {
                            dgp,
                            n,
                            t,
                            kappa,
                            c,
                            test: test.label(),
                            statistic: test.statistic,
                            k: test.k,
                            method: match test.statistic {
                                Statistic::Delta => "subsample".into(),
                                _ => test.method_or_default().name().into(),
                            },
                            rate,
                            sd_across_paths: sd,
                            per_path,
                            reps: grid.reps,
                            failed,
                        });
                    }
                }
            }
        }
    }
    Ok(cells)
}

/// Per-path rejection rates (percent) and the number of failed repetitions.
fn run_design(
    dc: &DgpConfig,
    tests: &[McTest],
    cfg: &TestConfig,
    grid: &McGrid,
) -> Result<(Vec<Vec<f64>>, usize)> {
    let mut rates = Vec::with_capacity(grid.paths);
    let mut failed = 0;
    for p in 0..grid.paths {
        let path_seed = derive_seed(dc.seed, p as u64);
        let path = FactorPath::draw(dc, &mut rng::from_seed(path_seed))?;
        let reps = grid.reps / grid.paths + usize::from(p < grid.reps % grid.paths);
        let outcomes = map_indexed(reps, |r| -> Result<Vec<bool>> {
            let mut g = rng::stream(path_seed, r as u64);
            let draw = Design::draw_on_path(dc, &path, &mut g)?.replicate(&mut g)?;
            evaluate(&draw, tests, cfg, derive_seed(path_seed ^ 0x5eed, r as u64))
        });
        let mut counts = vec![0usize; tests.len()];
        let mut ok = 0usize;
        for o in outcomes {
            match o {
                Ok(v) => {
                    ok += 1;
                    for (c, rej) in counts.iter_mut().zip(v) {
                        *c += usize::from(rej);
                    }
                }
                Err(e) => {
                    if matches!(e, Error::Config(_)) {
                        return Err(e);
                    }
                    log::warn!("repetition dropped: {e}");
                    failed += 1;
                }
            }
        }
        if ok == 0 {
            return Err(Error::SimulationFailure(format!("every repetition failed on path {p}")));
        }
        rates.push(counts.iter().map(|&c| 100.0 * c as f64 / ok as f64).collect());
    }
    Ok((rates, failed))
}
