use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use shortpanel::config::ConfigFile;
use shortpanel::densities::{local_power_gaussian, local_power_nongaussian_t2, SpacingStatistic};
use shortpanel::error::{Error, Result};
use shortpanel::io::{self, DensityFamily, GridSpec, PlotWriter};
use shortpanel::montecarlo::{run_montecarlo, McGrid};
use shortpanel::pipeline::{run_test_sweep, Statistic, TestConfig, VarianceMethod};

/// Eigenvalue tests for the number of latent factors in short panels.
#[derive(Parser, Debug)]
#[command(name = "shortpanel", version)]
struct Cli {
    /// TOML file with [test], [montecarlo], [power] and [densities] tables.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Repeat for more log output.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// p-values of the selected statistics for each tested number of factors.
    Test(TestArgs),
    /// Rejection frequencies over a grid of simulated designs.
    Montecarlo(MonteCarloArgs),
    /// Asymptotic local power curves.
    Power(PowerArgs),
    /// Spacing density grids.
    Densities(DensityArgs),
}

#[derive(Args, Debug)]
struct TestArgs {
    /// CSV with header asset_id,t1,...,tT.
    #[arg(long)]
    panel: Option<PathBuf>,
    /// CSV with header asset_id,z1,...,zK.
    #[arg(long)]
    instruments: Option<PathBuf>,
    #[arg(long)]
    k_min: Option<usize>,
    #[arg(long)]
    k_max: Option<usize>,
    /// Comma-separated: S, Sstar, Tiv, Delta.
    #[arg(long, value_delimiter = ',')]
    stat: Option<Vec<Statistic>>,
    /// Comma-separated: indep, arch, nonparam, instr_homo, instr_general.
    #[arg(long, value_delimiter = ',')]
    var_method: Option<Vec<VarianceMethod>>,
    #[arg(long)]
    draws: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Upper index of the spacing-ratio statistic (default T-2).
    #[arg(long)]
    k_star: Option<usize>,
    /// Subsample size for Delta (default n/4).
    #[arg(long)]
    subsample_m: Option<usize>,
    /// Number of subsamples for Delta.
    #[arg(long)]
    subsample_b: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct MonteCarloArgs {
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=4))]
    dgp: Option<u8>,
    /// TOML grid: n, t, kappa, c, paths, draws, tests, ...
    #[arg(long)]
    grid: Option<PathBuf>,
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct PowerArgs {
    #[arg(long)]
    t_minus_k: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    a_max: Option<f64>,
    #[arg(long)]
    grid_points: Option<usize>,
    /// Scaled kurtosis for the non-Gaussian curve (T-k = 2 only; needs --phi).
    #[arg(long)]
    eta_star: Option<f64>,
    /// Direction share of the alternative, in [0,1].
    #[arg(long)]
    phi: Option<f64>,
    #[arg(long)]
    draws: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct DensityArgs {
    /// f2, f3, g3 or goe3joint.
    #[arg(long)]
    family: Option<DensityFamily>,
    /// START:END:POINTS (goe3joint uses it on both axes).
    #[arg(long)]
    grid: Option<GridSpec>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn required<T>(v: Option<T>, flag: &str) -> Result<T> {
    v.ok_or_else(|| Error::Config(format!("--{flag} is required (flag or config file)")))
}

fn run_test(args: TestArgs, file: &ConfigFile) -> Result<()> {
    let sec = &file.test;
    let d = TestConfig::default();
    let cfg = TestConfig {
        k_min: args.k_min.or(sec.k_min).unwrap_or(d.k_min),
        k_max: args.k_max.or(sec.k_max),
        stats: args.stat.or_else(|| sec.stats.clone()).unwrap_or(d.stats),
        var_methods: args.var_method.or_else(|| sec.var_methods.clone()).unwrap_or(d.var_methods),
        draws: args.draws.or(sec.draws).unwrap_or(d.draws),
        alpha: args.alpha.or(sec.alpha).unwrap_or(d.alpha),
        seed: args.seed.or(sec.seed).unwrap_or(d.seed),
        k_star: args.k_star.or(sec.k_star),
        subsample_m: args.subsample_m.or(sec.subsample_m),
        subsample_b: args.subsample_b.or(sec.subsample_b).unwrap_or(d.subsample_b),
    };
    let panel_path = required(args.panel.or_else(|| sec.panel.clone()), "panel")?;
    let out = required(args.out.or_else(|| sec.out.clone()), "out")?;
    let loaded = io::load_panel(&panel_path)?;
    let instruments = match args.instruments.or_else(|| sec.instruments.clone()) {
        Some(p) => Some(io::load_instruments(&p, &loaded)?),
        None => None,
    };
    log::info!("panel: n={}, T={}", loaded.panel.n(), loaded.panel.t());
    let report = run_test_sweep(&loaded.panel, instruments.as_ref(), &cfg)?;
    let mut w = PlotWriter::new(&out)?;
    io::write_report(&report, &mut w)?;
    w.finish()?;
    println!("{:<6} {:>3} {:<14} {:>14} {:>14} {:>10}", "stat", "k", "method", "value", "critical", "p-value");
    for r in &report.rows {
        println!(
            "{:<6} {:>3} {:<14} {:>14.6} {:>14.6} {:>10.4}{}",
            r.statistic.name(),
            r.k,
            r.method,
            r.value,
            r.critical_value,
            r.p_value,
            if r.warnings.is_empty() { "" } else { "  (warnings)" }
        );
        for warn in &r.warnings {
            log::warn!("{} k={} {}: {warn}", r.statistic, r.k, r.method);
        }
    }
    println!("wrote {}", out.display());
    Ok(())
}

fn run_mc(args: MonteCarloArgs, file: &ConfigFile) -> Result<()> {
    let sec = &file.montecarlo;
    let dgp = required(args.dgp.or(sec.dgp), "dgp")?;
    if !(1..=4).contains(&dgp) {
        return Err(Error::Config(format!("dgp must be 1-4, got {dgp}")));
    }
    let grid_path = required(args.grid.or_else(|| sec.grid.clone()), "grid")?;
    let out = required(args.out.or_else(|| sec.out.clone()), "out")?;
    let text = std::fs::read_to_string(&grid_path).map_err(|e| Error::Io {
        path: grid_path.display().to_string(),
        source: e,
    })?;
    let mut grid: McGrid = toml::from_str(&text)
        .map_err(|e| Error::Config(format!("{}: {e}", grid_path.display())))?;
    if let Some(r) = args.reps.or(sec.reps) {
        grid.reps = r;
    }
    if let Some(s) = args.seed.or(sec.seed) {
        grid.seed = s;
    }
    let cells = run_montecarlo(dgp, &grid)?;
    let mut w = PlotWriter::new(&out)?;
    io::write_montecarlo_long(&cells, &mut w)?;
    io::write_montecarlo_table(&cells, &mut w)?;
    w.finish()?;
    for c in &cells {
        let design = match (c.kappa, c.c) {
            (Some(k), Some(cc)) => format!("n={} T={} kappa={k} c={cc}", c.n, c.t),
            _ => format!("n={} T={}", c.n, c.t),
        };
        let sd = c.sd_across_paths.map(|s| format!(" ({s:.2})")).unwrap_or_default();
        println!("{design:<34} {:<24} {:>7.2}%{sd}", c.test, c.rate);
    }
    println!("wrote {}", out.display());
    Ok(())
}

fn run_power(args: PowerArgs, file: &ConfigFile) -> Result<()> {
    let sec = &file.power;
    let m = args.t_minus_k.or(sec.t_minus_k).unwrap_or(2);
    let alpha = args.alpha.or(sec.alpha).unwrap_or(0.05);
    let a_max = args.a_max.or(sec.a_max).unwrap_or(10.0);
    let points = args.grid_points.or(sec.grid_points).unwrap_or(41);
    let draws = args.draws.or(sec.draws).unwrap_or(100_000);
    let seed = args.seed.or(sec.seed).unwrap_or(0);
    let eta_star = args.eta_star.or(sec.eta_star);
    let phi = args.phi.or(sec.phi);
    let out = required(args.out.or_else(|| sec.out.clone()), "out")?;
    if m < 2 {
        return Err(Error::Config(format!("t-minus-k must be at least 2, got {m}")));
    }
    if a_max.is_nan() || a_max <= 0.0 || points < 2 {
        return Err(Error::Config("need a-max > 0 and grid-points >= 2".into()));
    }
    let grid: Vec<f64> = (0..points).map(|i| a_max * i as f64 / (points - 1) as f64).collect();
    let mut w = PlotWriter::new(&out)?;
    let s = local_power_gaussian(m, alpha, &grid, draws, seed, SpacingStatistic::S)?;
    io::write_power_curve(&s, "power_s.csv", "local power of the spacing statistic, Gaussian errors", &mut w)?;
    report_curve("S", &s.grid, &s.power);
    if m >= 3 {
        let st = SpacingStatistic::SStar { k_star_minus_k: m - 2 };
        let c = local_power_gaussian(m, alpha, &grid, draws, seed, st)?;
        io::write_power_curve(&c, "power_sstar.csv", "local power of the spacing-ratio statistic, Gaussian errors", &mut w)?;
        report_curve("Sstar", &c.grid, &c.power);
    }
    match (eta_star, phi) {
        (Some(eta), Some(phi)) => {
            if m != 2 {
                return Err(Error::Config("the non-Gaussian curve needs t-minus-k = 2".into()));
            }
            let c = local_power_nongaussian_t2(eta, phi, alpha, &grid, draws, seed)?;
            io::write_power_curve(&c, "power_s_nongaussian.csv", "local power of the spacing statistic, non-Gaussian errors", &mut w)?;
            report_curve("S non-Gaussian", &c.grid, &c.power);
        }
        (None, None) => {}
        _ => return Err(Error::Config("--eta-star and --phi go together".into())),
    }
    w.finish()?;
    println!("wrote {}", out.display());
    Ok(())
}

fn report_curve(name: &str, grid: &[f64], power: &[f64]) {
    let last = grid.len() - 1;
    let mid = last / 2;
    println!(
        "{name}: power {:.3} at a={}, {:.3} at a={}, {:.3} at a={}",
        power[0], grid[0], power[mid], grid[mid], power[last], grid[last]
    );
}

fn run_densities(args: DensityArgs, file: &ConfigFile) -> Result<()> {
    let sec = &file.densities;
    let family = match args.family {
        Some(f) => f,
        None => required(sec.family.as_deref(), "family")?.parse()?,
    };
    let grid = match (args.grid, sec.grid.as_deref()) {
        (Some(g), _) => g,
        (None, Some(s)) => s.parse()?,
        (None, None) => GridSpec::default_for(family),
    };
    let out = required(args.out.or_else(|| sec.out.clone()), "out")?;
    let mut w = PlotWriter::new(&out)?;
    let path = io::write_density(family, &grid, &mut w)?;
    w.finish()?;
    println!("wrote {}", path.display());
    Ok(())
}

fn load_config(path: Option<&Path>) -> Result<ConfigFile> {
    match path {
        Some(p) => ConfigFile::load(p),
        None => Ok(ConfigFile::default()),
    }
}

fn run(cli: Cli) -> Result<()> {
    let file = load_config(cli.config.as_deref())?;
    match cli.command {
        Command::Test(a) => run_test(a, &file),
        Command::Montecarlo(a) => run_mc(a, &file),
        Command::Power(a) => run_power(a, &file),
        Command::Densities(a) => run_densities(a, &file),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let mut msg = format!("error: {e}");
            let mut src = std::error::Error::source(&e);
            while let Some(s) = src {
                if !msg.contains(&s.to_string()) {
                    msg.push_str(&format!("\n  caused by: {s}"));
                }
                src = s.source();
            }
            eprintln!("{msg}");
            ExitCode::FAILURE
        }
    }
}
