//! Convergence sweeps: configuration, per-row pipeline runs, EoCs and table output.

use crate::error::{Error, Result};
use crate::estimators::{estimate, EstimatorReport};
use crate::problems::{problem_by_id, PROBLEM_IDS};
use crate::residual::PipelineOptions;
use crate::time::{ButcherPair, TrajectoryConfig};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

/// Mesh sizes run without `--full`.
pub const DESK_MAX_N: usize = 32;

/// Column keys in table order.
pub const COLUMNS: [&str; 5] = ["err_L2L2", "err_LinfL2", "r1_L1L2", "err_L2H1", "E_r2"];

/// Columns that only exist for `eps > 0`.
const DIFFUSIVE: [bool; 5] = [false, false, false, true, true];

fn default_ns() -> Vec<usize> {
    vec![16, 32, 64, 128]
}

fn default_eps() -> Vec<f64> {
    vec![0.0, 1e-4, 1e-3, 1e-2, 1e-1]
}

fn default_c_adv() -> f64 {
    0.1
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

/// Sweep configuration as read from JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub problem: String,
    pub q: usize,
    #[serde(default = "default_ns", alias = "N")]
    pub n: Vec<usize>,
    #[serde(default = "default_eps")]
    pub eps: Vec<f64>,
    /// Final time; the problem's default when absent.
    #[serde(default)]
    pub t_final: Option<f64>,
    #[serde(default = "default_c_adv")]
    pub c_adv: f64,
    /// Tableau name; chosen from `q` when absent.
    #[serde(default)]
    pub tableau: Option<String>,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    #[serde(default)]
    pub quadrature: PipelineOptions,
    /// Also run meshes finer than [`DESK_MAX_N`].
    #[serde(default)]
    pub full: bool,
}

/// Command-line overrides applied on top of a [`RunConfig`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub problem: Option<String>,
    pub q: Option<usize>,
    pub n: Option<Vec<usize>>,
    pub eps: Option<Vec<f64>>,
    pub out: Option<PathBuf>,
    pub full: bool,
}

impl RunConfig {
    pub fn new(problem: &str, q: usize) -> Self {
        Self {
            problem: problem.into(),
            q,
            n: default_ns(),
            eps: default_eps(),
            t_final: None,
            c_adv: default_c_adv(),
            tableau: None,
            out: default_out(),
            quadrature: PipelineOptions::default(),
            full: false,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(p) = &o.problem {
            self.problem = p.clone();
        }
        if let Some(q) = o.q {
            self.q = q;
        }
        if let Some(n) = &o.n {
            self.n = n.clone();
        }
        if let Some(e) = &o.eps {
            self.eps = e.clone();
        }
        if let Some(out) = &o.out {
            self.out = out.clone();
        }
        self.full |= o.full;
    }

    pub fn validate(&self) -> Result<()> {
        if !PROBLEM_IDS.contains(&self.problem.as_str()) {
            return Err(Error::Config(format!(
                "unknown problem '{}', expected one of {PROBLEM_IDS:?}",
                self.problem
            )));
        }
        if !(1..=2).contains(&self.q) {
            return Err(Error::Config(format!("q must be 1 or 2, got {}", self.q)));
        }
        if self.n.is_empty() {
            return Err(Error::Config("empty N list".into()));
        }
        if let Some(&n) = self.n.iter().find(|&&n| n < 8 || !n.is_power_of_two()) {
            return Err(Error::Config(format!("N must be a power of two >= 8, got {n}")));
        }
        if self.eps.is_empty() {
            return Err(Error::Config("empty eps list".into()));
        }
        if let Some(&e) = self.eps.iter().find(|e| !(e.is_finite() && **e >= 0.0)) {
            return Err(Error::Config(format!("eps must be finite and >= 0, got {e}")));
        }
        if !(self.c_adv.is_finite() && self.c_adv > 0.0) {
            return Err(Error::Config(format!("c_adv must be positive, got {}", self.c_adv)));
        }
        if let Some(t) = self.t_final {
            if !(t.is_finite() && t > 0.0) {
                return Err(Error::Config(format!("t_final must be positive, got {t}")));
            }
        }
        if let Some(name) = &self.tableau {
            ButcherPair::by_name(name).map_err(|e| Error::Config(e.to_string()))?;
        }
        Ok(())
    }

    /// Mesh sizes actually run, sorted ascending.
    pub fn active_ns(&self) -> Vec<usize> {
        let mut ns: Vec<usize> = self
            .n
            .iter()
            .copied()
            .filter(|&n| self.full || n <= DESK_MAX_N)
            .collect();
        ns.sort_unstable();
        ns.dedup();
        ns
    }

    fn trajectory(&self, n: usize) -> TrajectoryConfig {
        let mut t = TrajectoryConfig::new(self.q, n);
        t.t_final = self.t_final;
        t.c_adv = self.c_adv;
        t.tableau = self.tableau.clone();
        t
    }

    /// File stem of this sweep's outputs.
    pub fn stem(&self) -> String {
        format!("{}_q{}", self.problem, self.q)
    }
}

/// `log(e1 / e2) / log(h1 / h2)`; `None` when undefined.
pub fn compute_eoc(e1: f64, e2: f64, h1: f64, h2: f64) -> Option<f64> {
    let ok = |v: f64| v.is_finite() && v > 0.0;
    if !(ok(e1) && ok(e2) && ok(h1) && ok(h2)) || h1 == h2 {
        return None;
    }
    Some((e1 / e2).ln() / (h1 / h2).ln())
}

/// Scientific notation with 4 significant digits and a two-digit exponent: `6.834e-03`.
pub fn format_sci(v: f64) -> String {
    if !v.is_finite() {
        return format!("{v}");
    }
    let s = format!("{v:.3e}");
    let (mant, exp) = s.split_once('e').expect("exponent present");
    let e: i32 = exp.parse().expect("integer exponent");
    let sign = if e < 0 { '-' } else { '+' };
    format!("{mant}e{sign}{:02}", e.abs())
}

/// Fixed three decimals, as printed for EoCs.
pub fn format_eoc(v: f64) -> String {
    format!("{v:.3}")
}

/// Value rounded to what [`format_sci`] prints.
fn rounded(v: f64) -> f64 {
    format_sci(v).parse().unwrap_or(v)
}

/// One table row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub eps: f64,
    pub n: usize,
    /// In [`COLUMNS`] order; `None` for absent columns or failed rows.
    pub values: [Option<f64>; 5],
    pub eocs: [Option<f64>; 5],
    /// `||u_h - u^ts||_{Linf(L2)}`
    pub indicator: Option<f64>,
    pub bound: Option<f64>,
    pub lhs: Option<f64>,
    pub ratio: Option<f64>,
    pub error: Option<String>,
}

impl TableRow {
    fn from_report(eps: f64, n: usize, rep: &EstimatorReport) -> Self {
        let nm = &rep.norms;
        let values = [
            Some(nm.err_l2l2_temporal),
            Some(nm.err_linf_l2),
            Some(nm.r1_l1l2),
            nm.err_l2h1,
            nm.e_r2,
        ];
        Self {
            eps,
            n,
            values: values.map(|v| v.map(rounded)),
            eocs: [None; 5],
            indicator: Some(nm.dg_minus_reconstruction_linf_l2),
            bound: Some(rep.bound),
            lhs: Some(rep.lhs),
            ratio: Some(rep.ratio),
            error: None,
        }
    }

    fn failed(eps: f64, n: usize, err: &Error) -> Self {
        Self {
            eps,
            n,
            values: [None; 5],
            eocs: [None; 5],
            indicator: None,
            bound: None,
            lhs: None,
            ratio: None,
            error: Some(err.to_string()),
        }
    }
}

/// Fill EoCs between consecutive rows of equal `eps`. Rows must be ordered by `(eps, N)`.
pub fn fill_eocs(rows: &mut [TableRow]) {
    for i in 1..rows.len() {
        let (prev, cur) = rows.split_at_mut(i);
        let (a, b) = (&prev[i - 1], &mut cur[0]);
        if a.eps != b.eps {
            continue;
        }
        for k in 0..5 {
            b.eocs[k] = match (a.values[k], b.values[k]) {
                (Some(e1), Some(e2)) => {
                    compute_eoc(e1, e2, 1.0 / a.n as f64, 1.0 / b.n as f64).map(|v| format_eoc(v).parse().unwrap())
                }
                _ => None,
            };
        }
    }
}

/// CSV header in table order.
pub fn csv_header() -> Vec<String> {
    let mut h = vec!["eps".to_string(), "N".to_string()];
    for c in COLUMNS {
        h.push(c.to_string());
        h.push(format!("EoC_{c}"));
    }
    h.extend(["indicator_LinfL2", "bound", "lhs", "ratio", "status"].map(String::from));
    h
}

fn csv_record(row: &TableRow) -> Vec<String> {
    let mut r = vec![format_sci(row.eps), row.n.to_string()];
    let opt = |v: Option<f64>, f: fn(f64) -> String| v.map(f).unwrap_or_default();
    for k in 0..5 {
        if row.eps == 0.0 && DIFFUSIVE[k] {
            r.push("--".into());
            r.push("--".into());
        } else {
            r.push(opt(row.values[k], format_sci));
            r.push(opt(row.eocs[k], format_eoc));
        }
    }
    r.push(opt(row.indicator, format_sci));
    r.push(opt(row.bound, format_sci));
    r.push(opt(row.lhs, format_sci));
    r.push(opt(row.ratio, format_sci));
    r.push(match &row.error {
        None => "ok".into(),
        Some(e) => format!("error: {e}"),
    });
    r
}

/// Write rows as CSV.
pub fn write_csv(path: &Path, rows: &[TableRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(csv_header())?;
    for row in rows {
        w.write_record(csv_record(row))?;
    }
    w.flush()?;
    Ok(())
}

/// Parsed CSV row as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct StoredRow {
    pub eps: f64,
    pub n: usize,
    pub values: [Option<f64>; 5],
    pub eocs: [Option<f64>; 5],
}

fn parse_cell(s: &str) -> Result<Option<f64>> {
    match s.trim() {
        "" | "--" => Ok(None),
        t => t
            .parse()
            .map(Some)
            .map_err(|_| Error::Config(format!("not a number: '{t}'"))),
    }
}

/// Read a table written by [`write_csv`].
pub fn read_csv(path: &Path) -> Result<Vec<StoredRow>> {
    let mut r = csv::Reader::from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(String::from).collect();
    let expect = csv_header();
    if header[..12] != expect[..12] {
        return Err(Error::Config(format!("unexpected CSV header {header:?}")));
    }
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let eps = parse_cell(&rec[0])?.unwrap_or(0.0);
        let n = rec[1]
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("bad N '{}'", &rec[1])))?;
        let mut values = [None; 5];
        let mut eocs = [None; 5];
        for k in 0..5 {
            values[k] = parse_cell(&rec[2 + 2 * k])?;
            eocs[k] = parse_cell(&rec[3 + 2 * k])?;
        }
        rows.push(StoredRow { eps, n, values, eocs });
    }
    Ok(rows)
}

/// EoC recomputed from stored values against the stored EoC.
#[derive(Debug, Clone, PartialEq)]
pub struct EocCheck {
    pub eps: f64,
    pub n: usize,
    pub column: &'static str,
    pub stored: Option<f64>,
    pub recomputed: Option<f64>,
}

impl EocCheck {
    /// Agreement to `1e-6` after rounding to the stored precision.
    pub fn consistent(&self) -> bool {
        match (self.stored, self.recomputed) {
            (Some(a), Some(b)) => (a - format_eoc(b).parse::<f64>().unwrap()).abs() <= 1e-6,
            (None, None) => true,
            _ => false,
        }
    }
}

/// Recompute every EoC of a stored table.
pub fn recompute_eocs(rows: &[StoredRow]) -> Vec<EocCheck> {
    let mut out = Vec::new();
    for (i, b) in rows.iter().enumerate() {
        let prev = i.checked_sub(1).map(|j| &rows[j]).filter(|a| a.eps == b.eps);
        for k in 0..5 {
            let recomputed = prev.and_then(|a| match (a.values[k], b.values[k]) {
                (Some(e1), Some(e2)) => compute_eoc(e1, e2, 1.0 / a.n as f64, 1.0 / b.n as f64),
                _ => None,
            });
            out.push(EocCheck {
                eps: b.eps,
                n: b.n,
                column: COLUMNS[k],
                stored: b.eocs[k],
                recomputed,
            });
        }
    }
    out
}

/// Result of one sweep.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepOutcome {
    pub config: RunConfig,
    pub rows: Vec<TableRow>,
    pub reports: Vec<EstimatorReport>,
    pub csv: PathBuf,
    pub json: PathBuf,
}

impl SweepOutcome {
    pub fn failures(&self) -> usize {
        self.rows.iter().filter(|r| r.error.is_some()).count()
    }
}

/// Run one row.
pub fn run_row(config: &RunConfig, eps: f64, n: usize) -> Result<EstimatorReport> {
    let problem = problem_by_id(&config.problem, eps)?;
    let (rep, _) = estimate(problem.as_ref(), &config.trajectory(n), &config.quadrature)?;
    Ok(rep)
}

/// Run every `(eps, N)` row in config order and write CSV, JSON and plot data.
///
/// Row errors are recorded in the table; the sweep continues.
pub fn run_sweep(config: &RunConfig, mut progress: impl FnMut(&TableRow)) -> Result<SweepOutcome> {
    config.validate()?;
    std::fs::create_dir_all(&config.out)?;
    let mut rows = Vec::new();
    let mut reports = Vec::new();
    for &eps in &config.eps {
        for n in config.active_ns() {
            let row = match run_row(config, eps, n) {
                Ok(rep) => {
                    let row = TableRow::from_report(eps, n, &rep);
                    reports.push(rep);
                    row
                }
                Err(e) => TableRow::failed(eps, n, &e),
            };
            progress(&row);
            rows.push(row);
        }
    }
    fill_eocs(&mut rows);
    let stem = config.stem();
    let csv = config.out.join(format!("{stem}.csv"));
    write_csv(&csv, &rows)?;
    write_plot_data(&config.out, &stem, &rows)?;
    let outcome = SweepOutcome {
        config: config.clone(),
        rows,
        reports,
        csv,
        json: config.out.join(format!("{stem}.json")),
    };
    std::fs::write(&outcome.json, serde_json::to_string_pretty(&outcome)?)?;
    Ok(outcome)
}

/// One whitespace-separated `N value` file per column and `eps`.
fn write_plot_data(dir: &Path, stem: &str, rows: &[TableRow]) -> Result<()> {
    use std::fmt::Write as _;
    for (k, col) in COLUMNS.iter().enumerate() {
        let mut by_eps: Vec<(f64, String)> = Vec::new();
        for r in rows {
            let Some(v) = r.values[k] else { continue };
            if !by_eps.last().is_some_and(|(e, _)| *e == r.eps) {
                by_eps.push((r.eps, String::from("# N value\n")));
            }
            let buf = &mut by_eps.last_mut().unwrap().1;
            writeln!(buf, "{} {}", r.n, format_sci(v)).unwrap();
        }
        for (eps, text) in by_eps {
            let name = format!("{stem}_{col}_eps{}.dat", format_sci(eps));
            std::fs::write(dir.join(name), text)?;
        }
    }
    Ok(())
}
