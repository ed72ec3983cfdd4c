//! CSV ingestion and plot-ready output.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::Serialize;

use crate::densities::PowerCurve;
use crate::error::{Error, Result};
use crate::montecarlo::McCell;
use crate::pipeline::TestReport;
use crate::stats::{InstrumentPanel, PanelData};

/// A panel with the asset ids in file order.
#[derive(Clone, Debug)]
pub struct LoadedPanel {
    pub ids: Vec<String>,
    pub panel: PanelData,
}

fn ingest(path: &Path, message: impl Into<String>) -> Error {
    Error::Ingest {
        path: path.display().to_string(),
        message: message.into(),
    }
}

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Reads `id,<prefix>1,...` rows into ids and a row-major matrix.
fn read_table(path: &Path, prefix: char) -> Result<(Vec<String>, Vec<String>, DMatrix<f64>)> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| ingest(path, e.to_string()))?;
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| ingest(path, e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    if header.len() < 2 || header[0] != "asset_id" {
        return Err(ingest(path, format!("header must be asset_id,{prefix}1,...")));
    }
    for (j, h) in header.iter().enumerate().skip(1) {
        let ok = h.strip_prefix(prefix).and_then(|d| d.parse::<usize>().ok()) == Some(j);
        if !ok {
            return Err(ingest(path, format!("header column {} is '{h}', expected '{prefix}{j}'", j + 1)));
        }
    }
    let cols = header.len() - 1;
    let mut ids = Vec::new();
    let mut seen = HashSet::new();
    let mut values = Vec::new();
    for (r, rec) in reader.records().enumerate() {
        let line = r + 2;
        let rec = rec.map_err(|e| ingest(path, format!("line {line}: {e}")))?;
        if rec.len() != header.len() {
            return Err(ingest(
                path,
                format!("line {line}: {} cells, header has {}", rec.len(), header.len()),
            ));
        }
        let id = rec[0].to_string();
        if id.is_empty() {
            return Err(ingest(path, format!("line {line}: empty asset_id")));
        }
        if !seen.insert(id.clone()) {
            return Err(ingest(path, format!("line {line}: duplicate asset_id '{id}'")));
        }
        for (j, cell) in rec.iter().enumerate().skip(1) {
            if cell.is_empty() {
                return Err(ingest(path, format!("line {line}, column {}: missing value", header[j])));
            }
            let v: f64 = cell.parse().map_err(|_| {
                ingest(path, format!("line {line}, column {}: '{cell}' is not a number", header[j]))
            })?;
            if !v.is_finite() {
                return Err(ingest(path, format!("line {line}, column {}: non-finite value", header[j])));
            }
            values.push(v);
        }
        ids.push(id);
    }
    if ids.is_empty() {
        return Err(ingest(path, "no data rows"));
    }
    let m = DMatrix::from_row_slice(ids.len(), cols, &values);
    Ok((header, ids, m))
}

/// Loads a balanced `n × T` panel with header `asset_id,t1,...,tT`.
pub fn load_panel(path: impl AsRef<Path>) -> Result<LoadedPanel> {
    let path = path.as_ref();
    let (_, ids, y) = read_table(path, 't')?;
    let panel = PanelData::new(y).map_err(|e| ingest(path, e.to_string()))?;
    Ok(LoadedPanel { ids, panel })
}

/// Loads `asset_id,z1,...,zK` and reorders the rows to the panel's asset order.
pub fn load_instruments(path: impl AsRef<Path>, panel: &LoadedPanel) -> Result<InstrumentPanel> {
    let path = path.as_ref();
    let (_, ids, z) = read_table(path, 'z')?;
    let pos: HashMap<&str, usize> = ids.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
    let want: HashSet<&str> = panel.ids.iter().map(String::as_str).collect();
    let mut diff: Vec<&str> = panel
        .ids
        .iter()
        .map(String::as_str)
        .filter(|id| !pos.contains_key(id))
        .chain(ids.iter().map(String::as_str).filter(|id| !want.contains(id)))
        .collect();
    if !diff.is_empty() {
        let total = diff.len();
        diff.truncate(10);
        return Err(ingest(
            path,
            format!(
                "asset ids differ from the panel in {total} place(s): {}",
                diff.join(", ")
            ),
        ));
    }
    let order: Vec<usize> = panel.ids.iter().map(|id| pos[id.as_str()]).collect();
    let z = DMatrix::from_fn(order.len(), z.ncols(), |i, j| z[(order[i], j)]);
    InstrumentPanel::new(z).map_err(|e| ingest(path, e.to_string()))
}

/// Formats with 17 significant digits, dropping trailing zeros.
pub fn fmt_f64(x: f64) -> String {
    if x.is_nan() {
        return "NaN".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return "0".into();
    }
    let sci = format!("{x:.16e}");
    let (mant, exp) = sci.split_once('e').expect("exponent");
    let exp: i32 = exp.parse().expect("exponent");
    if (-5..17).contains(&exp) {
        let decimals = (16 - exp).max(0) as usize;
        trim_zeros(format!("{x:.decimals$}"))
    } else {
        format!("{}e{exp}", trim_zeros(mant.to_string()))
    }
}

fn trim_zeros(s: String) -> String {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_f64).unwrap_or_default()
}

#[derive(Clone, Debug, Serialize)]
pub struct ColumnInfo {
    pub name: String,
    pub meaning: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct ManifestEntry {
    pub file: String,
    pub description: String,
    pub columns: Vec<ColumnInfo>,
}

/// Writes CSV files into one directory and records them for `manifest.json`.
#[derive(Debug)]
pub struct PlotWriter {
    dir: PathBuf,
    entries: Vec<ManifestEntry>,
}

impl PlotWriter {
    pub fn new(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
        Ok(PlotWriter {
            dir,
            entries: Vec::new(),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn entries(&self) -> &[ManifestEntry] {
        &self.entries
    }

    /// `columns` are `(name, meaning)` pairs.
    pub fn write_csv<I>(
        &mut self,
        file: &str,
        description: &str,
        columns: &[(&str, &str)],
        rows: I,
    ) -> Result<PathBuf>
    where
        I: IntoIterator<Item = Vec<String>>,
    {
        let path = self.dir.join(file);
        let mut w = csv::Writer::from_path(&path).map_err(|e| csv_err(&path, e))?;
        w.write_record(columns.iter().map(|c| c.0)).map_err(|e| csv_err(&path, e))?;
        for row in rows {
            w.write_record(&row).map_err(|e| csv_err(&path, e))?;
        }
        w.flush().map_err(|e| io_err(&path, e))?;
        self.entries.retain(|e| e.file != file);
        self.entries.push(ManifestEntry {
            file: file.to_string(),
            description: description.to_string(),
            columns: columns
                .iter()
                .map(|(n, m)| ColumnInfo {
                    name: n.to_string(),
                    meaning: m.to_string(),
                })
                .collect(),
        });
        Ok(path)
    }

    /// Writes `manifest.json` listing every file written so far.
    pub fn finish(self) -> Result<PathBuf> {
        let path = self.dir.join("manifest.json");
        #[derive(Serialize)]
        struct Manifest<'a> {
            files: &'a [ManifestEntry],
        }
        let json = serde_json::to_string_pretty(&Manifest { files: &self.entries })
            .map_err(|e| Error::invalid(e.to_string()))?;
        fs::write(&path, json + "\n").map_err(|e| io_err(&path, e))?;
        Ok(path)
    }
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(source) => io_err(path, source),
        other => Error::Ingest {
            path: path.display().to_string(),
            message: format!("{other:?}"),
        },
    }
}

fn indexed(values: &[f64]) -> impl Iterator<Item = Vec<String>> + '_ {
    values.iter().enumerate().map(|(j, v)| vec![(j + 1).to_string(), fmt_f64(*v)])
}

/// Writes the p-value table and the eigenvalue, spacing and ratio tables.
pub fn write_report(report: &TestReport, w: &mut PlotWriter) -> Result<()> {
    w.write_csv(
        "pvalues.csv",
        "p-value of each statistic against the tested number of factors",
        &[
            ("statistic", "S, Sstar, Tiv or Delta"),
            ("k", "number of factors under the null"),
            ("method", "null variance method, or subsample"),
            ("value", "statistic value"),
            ("critical_value", "critical value at alpha"),
            ("p_value", "simulated p-value"),
            ("reject", "1 if rejected at alpha"),
            ("draws", "simulation draws or subsamples"),
            ("warnings", "semicolon-separated warnings"),
        ],
        report.rows.iter().map(|r| {
            vec![
                r.statistic.name().to_string(),
                r.k.to_string(),
                r.method.clone(),
                fmt_f64(r.value),
                fmt_f64(r.critical_value),
                fmt_f64(r.p_value),
                u8::from(r.reject).to_string(),
                r.draws.to_string(),
                r.warnings.join("; "),
            ]
        }),
    )?;
    w.write_csv(
        "vy_eigenvalues.csv",
        "eigenvalues of the sample second-moment matrix of returns",
        &[("j", "rank, 1 = largest"), ("eigenvalue", "j-th largest eigenvalue")],
        indexed(&report.vy_eigenvalues),
    )?;
    w.write_csv(
        "vy_spacings.csv",
        "consecutive eigenvalue spacings of the return second-moment matrix",
        &[("j", "rank"), ("spacing", "eigenvalue j minus eigenvalue j+1")],
        indexed(&report.spacings()),
    )?;
    w.write_csv(
        "vy_spacing_ratios.csv",
        "ratios of consecutive eigenvalue spacings",
        &[("j", "rank"), ("ratio", "spacing j over spacing j+1")],
        indexed(&report.spacing_ratios()),
    )?;
    if let Some(e) = &report.vxi_eigenvalues {
        w.write_csv(
            "vxi_eigenvalues.csv",
            "eigenvalues of the instrument-portfolio second-moment matrix",
            &[("j", "rank, 1 = largest"), ("eigenvalue", "j-th largest eigenvalue")],
            indexed(e),
        )?;
    }
    Ok(())
}

/// One `(a, power)` file per curve.
pub fn write_power_curve(curve: &PowerCurve, file: &str, description: &str, w: &mut PlotWriter) -> Result<PathBuf> {
    w.write_csv(
        file,
        description,
        &[("a", "local alternative scale"), ("power", "rejection probability")],
        curve
            .grid
            .iter()
            .zip(&curve.power)
            .map(|(a, p)| vec![fmt_f64(*a), fmt_f64(*p)]),
    )
}

/// Long table of Monte Carlo rejection frequencies.
pub fn write_montecarlo_long(cells: &[McCell], w: &mut PlotWriter) -> Result<PathBuf> {
    w.write_csv(
        "montecarlo_long.csv",
        "rejection frequency of each test in each design",
        &[
            ("dgp", "data-generating process"),
            ("n", "assets"),
            ("T", "periods"),
            ("kappa", "weak-factor exponent (designs 2 and 3)"),
            ("c", "weak-factor scale (designs 2 and 3)"),
            ("test", "statistic(k)[method]"),
            ("rate_pct", "rejection frequency in percent, mean over factor paths"),
            ("sd_pct", "standard deviation of the rate across factor paths"),
            ("reps", "repetitions"),
            ("failed", "repetitions dropped after an error"),
        ],
        cells.iter().map(|c| {
            vec![
                c.dgp.to_string(),
                c.n.to_string(),
                c.t.to_string(),
                fmt_opt(c.kappa),
                fmt_opt(c.c),
                c.test.clone(),
                fmt_f64(c.rate),
                fmt_opt(c.sd_across_paths),
                c.reps.to_string(),
                c.failed.to_string(),
            ]
        }),
    )
}

/// Wide table: one row per design, a rate and a standard-deviation column per test.
pub fn write_montecarlo_table(cells: &[McCell], w: &mut PlotWriter) -> Result<PathBuf> {
    let mut tests: Vec<String> = Vec::new();
    let mut designs: Vec<(usize, usize, Option<f64>, Option<f64>)> = Vec::new();
    for c in cells {
        if !tests.contains(&c.test) {
            tests.push(c.test.clone());
        }
        let key = (c.n, c.t, c.kappa, c.c);
        if !designs.contains(&key) {
            designs.push(key);
        }
    }
    let names: Vec<(String, String)> = tests
        .iter()
        .flat_map(|t| {
            [
                (t.clone(), format!("rejection frequency of {t} in percent")),
                (format!("{t} sd"), format!("standard deviation of {t} across factor paths")),
            ]
        })
        .collect();
    let mut columns: Vec<(&str, &str)> =
        vec![("n", "assets"), ("T", "periods"), ("kappa", "weak-factor exponent"), ("c", "weak-factor scale")];
    columns.extend(names.iter().map(|(a, b)| (a.as_str(), b.as_str())));
    let rows = designs.iter().map(|d| {
        let mut row = vec![d.0.to_string(), d.1.to_string(), fmt_opt(d.2), fmt_opt(d.3)];
        for t in &tests {
            let cell = cells.iter().find(|c| (c.n, c.t, c.kappa, c.c) == *d && &c.test == t);
            row.push(cell.map(|c| fmt_f64(c.rate)).unwrap_or_default());
            row.push(cell.map(|c| fmt_opt(c.sd_across_paths)).unwrap_or_default());
        }
        row
    });
    w.write_csv("montecarlo_table.csv", "rejection frequencies laid out as a size/power table", &columns, rows)
}

/// Density families available as plot grids.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DensityFamily {
    /// Wigner surmise: spacing of a 2×2 GOE matrix.
    F2,
    /// Total spacing of a 3×3 GOE matrix.
    F3,
    /// Spacing ratio of a 3×3 GOE matrix.
    G3,
    /// Joint density of the two spacings of a 3×3 GOE matrix.
    Goe3Joint,
}

impl std::str::FromStr for DensityFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "f2" => Ok(DensityFamily::F2),
            "f3" => Ok(DensityFamily::F3),
            "g3" => Ok(DensityFamily::G3),
            "goe3joint" => Ok(DensityFamily::Goe3Joint),
            other => Err(Error::Config(format!(
                "unknown density family '{other}', expected f2, f3, g3 or goe3joint"
            ))),
        }
    }
}

/// Evenly spaced grid `start..=end` with `points` nodes.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, serde::Deserialize)]
pub struct GridSpec {
    pub start: f64,
    pub end: f64,
    pub points: usize,
}

impl GridSpec {
    pub fn default_for(family: DensityFamily) -> Self {
        match family {
            DensityFamily::Goe3Joint => GridSpec { start: 0.0, end: 8.0, points: 200 },
            DensityFamily::G3 => GridSpec { start: 0.0, end: 10.0, points: 401 },
            _ => GridSpec { start: 0.0, end: 8.0, points: 401 },
        }
    }

    pub fn nodes(&self) -> Vec<f64> {
        if self.points == 1 {
            return vec![self.start];
        }
        let h = (self.end - self.start) / (self.points - 1) as f64;
        (0..self.points).map(|i| self.start + h * i as f64).collect()
    }
}

impl std::str::FromStr for GridSpec {
    type Err = Error;

    /// Parses `START:END:POINTS`.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(':').map(str::trim).collect();
        let bad = || Error::Config(format!("grid '{s}' is not START:END:POINTS"));
        if parts.len() != 3 {
            return Err(bad());
        }
        let g = GridSpec {
            start: parts[0].parse().map_err(|_| bad())?,
            end: parts[1].parse().map_err(|_| bad())?,
            points: parts[2].parse().map_err(|_| bad())?,
        };
        if !(g.start.is_finite() && g.end.is_finite() && g.end > g.start && g.points >= 1) {
            return Err(Error::Config(format!("grid '{s}' needs END > START and POINTS >= 1")));
        }
        Ok(g)
    }
}

/// Writes the density (and CDF where available) of `family` on `grid`;
/// the joint family uses the grid along both axes.
pub fn write_density(family: DensityFamily, grid: &GridSpec, w: &mut PlotWriter) -> Result<PathBuf> {
    use crate::densities::*;
    let x = grid.nodes();
    let one_d = |pdf: fn(f64) -> f64, cdf: fn(f64) -> f64| {
        x.iter()
            .map(move |&v| vec![fmt_f64(v), fmt_f64(pdf(v)), fmt_f64(cdf(v))])
            .collect::<Vec<_>>()
    };
    match family {
        DensityFamily::F2 => w.write_csv(
            "density_f2.csv",
            "Wigner surmise: spacing density of a 2x2 GOE matrix",
            &[("s", "spacing"), ("density", "probability density"), ("cdf", "distribution function")],
            one_d(wigner_surmise_pdf, wigner_surmise_cdf),
        ),
        DensityFamily::F3 => w.write_csv(
            "density_f3.csv",
            "total spacing density of a 3x3 GOE matrix",
            &[("s", "largest minus smallest eigenvalue"), ("density", "probability density"), ("cdf", "distribution function")],
            one_d(goe3_total_spacing_pdf, goe3_total_spacing_cdf),
        ),
        DensityFamily::G3 => w.write_csv(
            "density_g3.csv",
            "spacing-ratio density of a 3x3 GOE matrix",
            &[("r", "ratio of the two spacings"), ("density", "probability density"), ("cdf", "distribution function")],
            one_d(goe3_spacing_ratio_pdf, goe3_spacing_ratio_cdf),
        ),
        DensityFamily::Goe3Joint => w.write_csv(
            "density_goe3joint.csv",
            "joint density of the two spacings of a 3x3 GOE matrix on a square grid",
            &[("s1", "upper spacing"), ("s2", "lower spacing"), ("density", "joint probability density")],
            x.iter().flat_map(|&a| {
                x.iter().map(move |&b| vec![fmt_f64(a), fmt_f64(b), fmt_f64(goe3_joint_spacing_pdf(a, b))])
            }),
        ),
    }
}
