//! Trajectory CSV: `t, x_1..x_{mn}, xr_1..xr_m, e1_1..e1_m, en_1..en_m,
//! r_1..r_m, tau_1..tau_m, Pi_1..Pi_m` with optional `V1, L, P, V`.
//!
//! Values are written as `{:.16e}`, which reads back to the same `f64`.

use std::io::{Read, Write};

use rmc_core::analysis::LyapunovSeries;
use rmc_core::simulator::TrajectoryLog;

use crate::error::{CliError, Result};

pub const LYAPUNOV_COLUMNS: [&str; 4] = ["V1", "L", "P", "V"];

pub fn header(m: usize, n: usize, lyapunov: bool) -> Vec<String> {
    let mut h = vec!["t".to_string()];
    let group = |h: &mut Vec<String>, name: &str, len: usize| h.extend((1..=len).map(|i| format!("{name}_{i}")));
    group(&mut h, "x", m * n);
    for name in ["xr", "e1", "en", "r", "tau", "Pi"] {
        group(&mut h, name, m);
    }
    if lyapunov {
        h.extend(LYAPUNOV_COLUMNS.iter().map(|s| s.to_string()));
    }
    h
}

pub fn format_value(v: f64) -> String {
    format!("{v:.16e}")
}

/// One CSV row, all angles as written.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvRow {
    pub t: f64,
    pub x: Vec<f64>,
    pub xr: Vec<f64>,
    pub e1: Vec<f64>,
    pub en: Vec<f64>,
    pub r: Vec<f64>,
    pub tau: Vec<f64>,
    pub pi: Vec<f64>,
    /// `[V1, L, P, V]` when present.
    pub lyapunov: Option<[f64; 4]>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CsvLog {
    pub m: usize,
    pub n: usize,
    pub rows: Vec<CsvRow>,
}

impl CsvLog {
    /// Rows of a simulation log. `deg` converts the positional columns
    /// (`x_1..x_m`, `xr`, `e1`) to degrees.
    pub fn from_log(log: &TrajectoryLog, lyapunov: Option<&LyapunovSeries>, deg: bool) -> Result<Self> {
        if let Some(s) = lyapunov {
            if s.v.len() != log.samples.len() {
                return Err(CliError::Validation(format!(
                    "Lyapunov series has {} samples, log has {}",
                    s.v.len(),
                    log.samples.len()
                )));
            }
        }
        let m = log.m;
        let angle = |v: f64| if deg { v.to_degrees() } else { v };
        let rows = log
            .samples
            .iter()
            .enumerate()
            .map(|(k, s)| CsvRow {
                t: s.t,
                x: s.x
                    .iter()
                    .enumerate()
                    .map(|(j, v)| if j < m { angle(*v) } else { *v })
                    .collect(),
                xr: s.reference[0].iter().map(|v| angle(*v)).collect(),
                e1: s.e1().iter().map(|v| angle(*v)).collect(),
                en: s.en().as_slice().to_vec(),
                r: s.r.as_slice().to_vec(),
                tau: s.tau.as_slice().to_vec(),
                pi: s.pi.as_slice().to_vec(),
                lyapunov: lyapunov.map(|l| [l.v1[k], l.l[k], l.p[k], l.v[k]]),
            })
            .collect();
        Ok(Self { m, n: log.n, rows })
    }

    pub fn has_lyapunov(&self) -> bool {
        self.rows.first().is_some_and(|r| r.lyapunov.is_some())
    }

    pub fn write<W: Write>(&self, out: W) -> std::result::Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(header(self.m, self.n, self.has_lyapunov()))?;
        for row in &self.rows {
            let mut rec = vec![format_value(row.t)];
            for group in [&row.x, &row.xr, &row.e1, &row.en, &row.r, &row.tau, &row.pi] {
                rec.extend(group.iter().map(|v| format_value(*v)));
            }
            if let Some(l) = row.lyapunov {
                rec.extend(l.iter().map(|v| format_value(*v)));
            }
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a log written by [`CsvLog::write`]; `m` and `n` come from the header.
    pub fn read<R: Read>(input: R) -> std::result::Result<Self, String> {
        let mut rd = csv::Reader::from_reader(input);
        let head: Vec<String> = rd
            .headers()
            .map_err(|e| e.to_string())?
            .iter()
            .map(str::to_string)
            .collect();
        let m = head.iter().filter(|h| h.starts_with("xr_")).count();
        let nx = head.iter().filter(|h| h.starts_with("x_")).count();
        if m == 0 || nx % m != 0 {
            return Err(format!("unrecognized header: {}", head.join(",")));
        }
        let n = nx / m;
        let lyapunov = head.last().is_some_and(|h| h == "V");
        if head != header(m, n, lyapunov) {
            return Err(format!("unrecognized header: {}", head.join(",")));
        }
        let mut rows = Vec::new();
        for (line, rec) in rd.records().enumerate() {
            let rec = rec.map_err(|e| e.to_string())?;
            let vals: Vec<f64> = rec
                .iter()
                .enumerate()
                .map(|(j, s)| {
                    s.trim()
                        .parse::<f64>()
                        .map_err(|e| format!("row {}, column {}: {e}", line + 2, head[j]))
                })
                .collect::<std::result::Result<_, _>>()?;
            let mut it = vals.into_iter();
            let mut take = |len: usize| it.by_ref().take(len).collect::<Vec<f64>>();
            let t = take(1)[0];
            rows.push(CsvRow {
                t,
                x: take(m * n),
                xr: take(m),
                e1: take(m),
                en: take(m),
                r: take(m),
                tau: take(m),
                pi: take(m),
                lyapunov: if lyapunov {
                    let l = take(4);
                    Some([l[0], l[1], l[2], l[3]])
                } else {
                    None
                },
            });
        }
        Ok(Self { m, n, rows })
    }
}
