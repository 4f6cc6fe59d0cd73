use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rmc_core::analysis::ProofContext;
use rmc_core::sdu::{sdu_decompose, SduFactors};
use rmc_core::simulator::run_scenario;

use crate::config::{load_config, BoundsFile, ScenarioConfig};
use crate::csvlog::{format_value, CsvLog};
use crate::diagnostics::{diagnose, Check, Diagnostics, Inputs};
use crate::error::{CliError, Result};
use crate::plot::{plot_script, script_path};

/// Environment variable that redirects run output to another directory.
pub const LOG_DIR_ENV: &str = "RMC_LOG_DIR";

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub output: Option<PathBuf>,
    pub deg: bool,
    /// Overrides the directory part of the output path.
    pub log_dir: Option<PathBuf>,
}

impl RunOptions {
    pub fn from_env(output: Option<PathBuf>, deg: bool) -> Self {
        Self {
            output,
            deg,
            log_dir: std::env::var_os(LOG_DIR_ENV).map(PathBuf::from),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub config: PathBuf,
    pub csv: PathBuf,
    pub samples: usize,
    /// `|e1(T)|`, radians.
    pub final_e1: f64,
    pub max_tau: f64,
    pub wall: Duration,
    pub checks: Option<Vec<Check>>,
}

impl RunSummary {
    pub fn render(&self) -> String {
        let mut s = format!(
            "{}: {} samples -> {}\n  final |e1| = {:.6e} rad ({:.6e} deg)\n  max |tau| = {:.6}\n  wall time = {:.3} s\n",
            self.config.display(),
            self.samples,
            self.csv.display(),
            self.final_e1,
            self.final_e1.to_degrees(),
            self.max_tau,
            self.wall.as_secs_f64()
        );
        if let Some(checks) = &self.checks {
            s.push_str(&render_checks(checks));
        }
        s
    }
}

pub fn render_checks(checks: &[Check]) -> String {
    let mut s = String::new();
    for c in checks {
        let _ = writeln!(
            s,
            "  {} {:<16} {}",
            if c.pass { "PASS" } else { "FAIL" },
            c.name,
            c.detail
        );
    }
    s
}

pub fn output_path(config: &Path, opts: &RunOptions) -> PathBuf {
    let file = match &opts.output {
        Some(p) => p.file_name().map(PathBuf::from).unwrap_or_else(|| p.clone()),
        None => PathBuf::from(config.file_stem().unwrap_or_default()).with_extension("csv"),
    };
    match (&opts.log_dir, &opts.output) {
        (Some(dir), _) => dir.join(file),
        (None, Some(p)) => p.clone(),
        (None, None) => file,
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

fn analysis_inputs<'a>(cfg: &'a ScenarioConfig, sc: &'a rmc_core::simulator::Scenario) -> Inputs<'a> {
    Inputs {
        plant: sc.plant.as_ref(),
        reference: sc.reference.as_ref(),
        gains: &sc.gains,
        horizon: sc.horizon,
        settings: &cfg.analysis,
    }
}

pub fn run_config(config: &Path, opts: &RunOptions) -> Result<RunSummary> {
    let cfg = load_config(config)?;
    let sc = cfg.to_scenario().map_err(|m| CliError::config(config, m))?;
    let start = Instant::now();
    let log = run_scenario(&sc)?;

    let diag = if cfg.analysis.enabled {
        let inputs = analysis_inputs(&cfg, &sc);
        let signals = inputs.context()?.along(&log.samples)?;
        Some(diagnose(&inputs, &signals, log.dt)?)
    } else {
        None
    };
    let table = CsvLog::from_log(&log, diag.as_ref().map(|d| &d.series), opts.deg)?;

    let csv = output_path(config, opts);
    let mut bytes = Vec::new();
    table.write(&mut bytes).map_err(|e| CliError::Csv {
        path: csv.clone(),
        source: e,
    })?;
    write_file(&csv, &bytes)?;
    let csv_name = csv.file_name().unwrap_or_default().to_string_lossy().into_owned();
    write_file(
        &script_path(&csv),
        plot_script(&csv_name, log.m, opts.deg, diag.is_some()).as_bytes(),
    )?;
    let wall = start.elapsed();

    let last = log.samples.last().expect("run logs the initial sample");
    Ok(RunSummary {
        config: config.to_path_buf(),
        csv,
        samples: log.samples.len(),
        final_e1: last.e1().norm(),
        max_tau: log.samples.iter().map(|s| s.tau.amax()).fold(0.0, f64::max),
        wall,
        checks: diag.map(|d| d.checks()),
    })
}

/// Runs every `*.cfg` in `dir` concurrently. Outputs land next to the
/// configs unless a log directory is set. Results are in file-name order.
pub fn run_batch(dir: &Path, opts: &RunOptions) -> Result<Vec<(PathBuf, Result<RunSummary>)>> {
    let mut configs: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| CliError::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "cfg"))
        .collect();
    configs.sort();
    if configs.is_empty() {
        return Err(CliError::Validation(format!("{}: no .cfg files", dir.display())));
    }
    let opts = RunOptions {
        output: None,
        deg: opts.deg,
        log_dir: Some(opts.log_dir.clone().unwrap_or_else(|| dir.to_path_buf())),
    };
    let results = std::thread::scope(|s| {
        let handles: Vec<_> = configs
            .iter()
            .map(|cfg| {
                let opts = &opts;
                s.spawn(move || run_config(cfg, opts))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("scenario thread panicked"))
            .collect::<Vec<_>>()
    });
    Ok(configs.into_iter().zip(results).collect())
}

#[derive(Debug, Clone)]
pub struct GainReport {
    pub checks: Vec<Check>,
    pub notes: Vec<String>,
}

impl GainReport {
    pub fn pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }
}

fn fmt_vec(v: &DVector<f64>) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:.4}")).collect();
    format!("[{}]", parts.join(", "))
}

/// Checks `alpha` always, and `C` against bounds read from a file or
/// estimated from a run of the scenario.
pub fn check_gains(config: &Path, bounds: Option<&Path>, estimate: bool) -> Result<GainReport> {
    let cfg = load_config(config)?;
    let sc = cfg.to_scenario().map_err(|m| CliError::config(config, m))?;
    let mut notes = Vec::new();

    let alpha = rmc_core::controller::check_alpha(&sc.gains.alpha);
    let mut checks = vec![Check {
        name: "alpha",
        pass: alpha.pass,
        detail: format!("lambda_min(alpha) - 1/2 = {:.4}", alpha.margin),
    }];

    let estimates = match (bounds, estimate) {
        (Some(path), _) => Some(BoundsFile::load(path)?),
        (None, true) => {
            let log = run_scenario(&sc)?;
            let inputs = analysis_inputs(&cfg, &sc);
            let signals = inputs.context()?.along(&log.samples)?;
            let d = diagnose(&inputs, &signals, log.dt)?;
            if d.gammas.is_none() {
                checks.push(
                    d.checks()
                        .into_iter()
                        .find(|c| c.name == "integral-bound")
                        .expect("integral-bound check"),
                );
            }
            Some(d.bounds)
        }
        (None, false) => None,
    };
    if let Some(b) = estimates {
        if b.dim() != sc.gains.dim() {
            return Err(CliError::Validation(format!(
                "bounds have {} channels, gains have {}",
                b.dim(),
                sc.gains.dim()
            )));
        }
        let c_min = rmc_core::controller::minimal_c(&b, &sc.gains.alpha)?;
        let c = rmc_core::controller::validate_c(&sc.gains.c, &c_min);
        notes.push(format!("zeta_nbar = {}", fmt_vec(&b.zeta_nbar)));
        for i in 0..b.dim() {
            for j in i + 1..b.dim() {
                notes.push(format!("zeta_omega[{},{}] = {:.4}", i + 1, j + 1, b.zeta_omega[(i, j)]));
            }
        }
        notes.push(format!("gamma1 = {}, gamma2 = {}", b.gamma1, b.gamma2));
        checks.push(Check {
            name: "gain-c",
            pass: c.pass,
            detail: format!(
                "C = {}, C_min = {}, margins {}",
                fmt_vec(&sc.gains.c),
                fmt_vec(&c_min),
                fmt_vec(&c.margins)
            ),
        });
    }
    Ok(GainReport { checks, notes })
}

/// Whitespace- or comma-separated rows; blank lines and `#` comments skipped.
pub fn parse_matrix(text: &str) -> std::result::Result<DMatrix<f64>, String> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let row = line
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|s| !s.is_empty())
            .map(|s| s.parse::<f64>().map_err(|e| format!("line {}: `{s}`: {e}", i + 1)))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        rows.push(row);
    }
    let m = rows.len();
    if m == 0 {
        return Err("empty matrix".into());
    }
    if let Some(r) = rows.iter().find(|r| r.len() != m) {
        return Err(format!(
            "matrix must be square: {m} rows but a row has {} entries",
            r.len()
        ));
    }
    Ok(DMatrix::from_fn(m, m, |i, j| rows[i][j]))
}

pub fn decompose(path: &Path) -> Result<SduFactors> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let g = parse_matrix(&text).map_err(|m| CliError::config(path, m))?;
    // a singular leading minor is a property of the input, not a runtime fault
    sdu_decompose(&g).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))
}

pub fn render_matrix(name: &str, a: &DMatrix<f64>) -> String {
    let mut s = format!("{name} =\n");
    for i in 0..a.nrows() {
        let row: Vec<String> = (0..a.ncols()).map(|j| format!("{:>14.8}", a[(i, j)])).collect();
        let _ = writeln!(s, "  {}", row.join(" "));
    }
    s
}

pub fn render_sdu(f: &SduFactors) -> String {
    format!(
        "{}{}{}",
        render_matrix("S", &f.s),
        render_matrix("D", &f.d_matrix()),
        render_matrix("U", &f.u)
    )
}

#[derive(Debug, Clone)]
pub struct AnalyzeReport {
    pub diagnostics: Diagnostics,
    pub samples: usize,
}

impl AnalyzeReport {
    pub fn checks(&self) -> Vec<Check> {
        self.diagnostics.checks()
    }

    pub fn pass(&self) -> bool {
        self.checks().iter().all(|c| c.pass)
    }
}

/// Recomputes the proof signals of a logged run from its states and inputs.
pub fn analyze(config: &Path, log_path: &Path, output: Option<&Path>) -> Result<AnalyzeReport> {
    let cfg = load_config(config)?;
    let sc = cfg.to_scenario().map_err(|m| CliError::config(config, m))?;
    let file = std::fs::File::open(log_path).map_err(|e| CliError::io(log_path, e))?;
    let table = CsvLog::read(file).map_err(|m| CliError::config(log_path, m))?;
    let plant = sc.plant.as_ref();
    if table.m != plant.inputs() || table.n != plant.order() {
        return Err(CliError::Validation(format!(
            "{}: log has m = {}, n = {}; the configured plant has m = {}, n = {}",
            log_path.display(),
            table.m,
            table.n,
            plant.inputs(),
            plant.order()
        )));
    }
    if table.rows.len() < 3 {
        return Err(CliError::Validation(format!(
            "{}: need at least 3 samples",
            log_path.display()
        )));
    }
    let dt = table.rows[1].t - table.rows[0].t;
    for w in table.rows.windows(2) {
        if ((w[1].t - w[0].t) - dt).abs() > 1e-9 * dt.max(1.0) {
            return Err(CliError::Validation(format!(
                "{}: non-uniform time grid near t = {}",
                log_path.display(),
                w[0].t
            )));
        }
    }

    let inputs = analysis_inputs(&cfg, &sc);
    let ctx: ProofContext<'_> = inputs.context()?;
    let mut signals = Vec::with_capacity(table.rows.len());
    for row in &table.rows {
        let x = DVector::from_column_slice(&row.x);
        let tau = DVector::from_column_slice(&row.tau);
        let accel = plant.highest_derivative(&x, &tau);
        let sig = ctx.at_state(row.t, &x, &accel).map_err(|e| rmc_core::Error::AtTime {
            t: row.t,
            source: Box::new(e),
        })?;
        let gap = sig.errors[0]
            .iter()
            .zip(&row.e1)
            .map(|(a, b)| (a - b).abs() / (1.0 + b.abs()))
            .fold(0.0, f64::max);
        if gap > 1e-9 {
            return Err(CliError::Validation(format!(
                "{}: logged e1 at t = {} disagrees with the configured reference (written with --deg or for another config?)",
                log_path.display(),
                row.t
            )));
        }
        signals.push(sig);
    }
    let horizon = table.rows.last().map(|r| r.t).unwrap_or(sc.horizon);
    let diagnostics = diagnose(&Inputs { horizon, ..inputs }, &signals, dt)?;

    if let Some(out) = output {
        let mut w = csv::Writer::from_writer(Vec::new());
        let csv_err = |e| CliError::Csv {
            path: out.to_path_buf(),
            source: e,
        };
        w.write_record(Diagnostics::header()).map_err(csv_err)?;
        for row in diagnostics.rows() {
            w.write_record(row.iter().map(|v| format_value(*v))).map_err(csv_err)?;
        }
        let bytes = w.into_inner().map_err(|e| CliError::io(out, e.into_error()))?;
        write_file(out, &bytes)?;
    }
    Ok(AnalyzeReport {
        diagnostics,
        samples: table.rows.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matrix_parsing() {
        let m = parse_matrix("# g\n1 2\n3, 4\n\n").unwrap();
        assert_eq!(m, nalgebra::dmatrix![1.0, 2.0; 3.0, 4.0]);
        assert!(parse_matrix("1 2\n3\n").is_err());
        assert!(parse_matrix("").is_err());
        assert!(parse_matrix("1 x\n1 1\n").unwrap_err().contains("line 1"));
    }

    #[test]
    fn output_resolution() {
        let cfg = Path::new("configs/bench.cfg");
        let mut o = RunOptions::default();
        assert_eq!(output_path(cfg, &o), PathBuf::from("bench.csv"));
        o.output = Some("out/a.csv".into());
        assert_eq!(output_path(cfg, &o), PathBuf::from("out/a.csv"));
        o.log_dir = Some("/tmp/logs".into());
        assert_eq!(output_path(cfg, &o), PathBuf::from("/tmp/logs/a.csv"));
        o.output = None;
        assert_eq!(output_path(cfg, &o), PathBuf::from("/tmp/logs/bench.csv"));
    }
}
