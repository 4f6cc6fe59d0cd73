//! Lyapunov bookkeeping and invariant checks on a closed-loop trajectory.

use nalgebra::DVector;
use rmc_core::analysis::{
    check_lemma1, check_nonincreasing, en_channels, l_and_p, search_gammas, splitting_residuals, theta_bound_margin,
    LyapunovSeries, MonotonicityCheck, ProofContext, ProofSignals,
};
use rmc_core::controller::{check_alpha, minimal_c, validate_c, zeta_l, BoundEstimates, CCheck, GainCheck, GainSet};
use rmc_core::plants::PlantModel;
use rmc_core::reference::ReferenceTrajectory;

use crate::config::AnalysisSection;
use crate::error::Result;

/// Identity residuals above this count as a failed splitting check.
pub const SPLIT_TOL: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct Check {
    pub name: &'static str,
    pub pass: bool,
    pub detail: String,
}

#[derive(Debug, Clone)]
pub struct Diagnostics {
    pub series: LyapunovSeries,
    pub bounds: BoundEstimates,
    /// `None` when no integer pair on `0..=10` works.
    pub gammas: Option<(f64, f64)>,
    pub integral_margin: f64,
    pub zeta_l: f64,
    pub alpha: GainCheck,
    pub minimal_c: DVector<f64>,
    pub c_check: CCheck,
    pub split_gain: Vec<f64>,
    pub split_sign: Vec<f64>,
    pub split_theta: Vec<f64>,
    pub last_entry: f64,
    pub theta_margin: Vec<f64>,
    pub monotone: MonotonicityCheck,
}

pub struct Inputs<'a> {
    pub plant: &'a dyn PlantModel,
    pub reference: &'a dyn ReferenceTrajectory,
    pub gains: &'a GainSet,
    pub horizon: f64,
    pub settings: &'a AnalysisSection,
}

impl Inputs<'_> {
    pub fn context(&self) -> Result<ProofContext<'_>> {
        Ok(ProofContext::new(self.plant, self.reference, self.gains)?.with_step(self.settings.diff_step))
    }
}

pub fn diagnose(inputs: &Inputs<'_>, signals: &[ProofSignals], dt: f64) -> Result<Diagnostics> {
    let ctx = inputs.context()?;
    let gains = inputs.gains;
    let settings = inputs.settings;
    let mut bounds = ctx.estimate_bounds(inputs.horizon, dt, settings.safety)?;

    let channels = en_channels(signals);
    let gammas = match (settings.gamma1, settings.gamma2) {
        (Some(g1), Some(g2)) => Some((g1, g2)),
        _ => search_gammas(&channels, dt, 10)?,
    };
    let integral_margin = match gammas {
        Some((g1, g2)) => {
            let mut worst = f64::INFINITY;
            for (e, ed) in &channels {
                worst = worst.min(check_lemma1(e, ed, dt, g1, g2)?);
            }
            worst
        }
        None => f64::NEG_INFINITY,
    };
    if let Some((g1, g2)) = gammas {
        bounds.gamma1 = g1;
        bounds.gamma2 = g2;
    }

    let c_min = minimal_c(&bounds, &gains.alpha)?;
    let c_check = validate_c(&gains.c, &c_min);
    let en0 = signals
        .first()
        .map(|s| s.en().clone())
        .unwrap_or_else(|| DVector::zeros(gains.dim()));
    let zl = zeta_l(&bounds, &gains.c, &en0);
    let series = l_and_p(signals, dt, zl)?;
    let monotone = check_nonincreasing(&series.v, dt);

    let mut d = Diagnostics {
        monotone,
        series,
        gammas,
        integral_margin,
        zeta_l: zl,
        alpha: check_alpha(&gains.alpha),
        minimal_c: c_min,
        c_check,
        split_gain: Vec::with_capacity(signals.len()),
        split_sign: Vec::with_capacity(signals.len()),
        split_theta: Vec::with_capacity(signals.len()),
        last_entry: 0.0,
        theta_margin: Vec::with_capacity(signals.len()),
        bounds,
    };
    for s in signals {
        let res = splitting_residuals(s, gains);
        d.split_gain.push(res.gain_term);
        d.split_sign.push(res.sign_term);
        d.split_theta.push(res.theta_forms);
        d.last_entry = d.last_entry.max(res.last_entry.abs());
        d.theta_margin.push(theta_bound_margin(s, &gains.c, &d.bounds).min());
    }
    Ok(d)
}

fn max(v: &[f64]) -> f64 {
    v.iter().copied().fold(0.0, f64::max)
}

fn min(v: &[f64]) -> f64 {
    v.iter().copied().fold(f64::INFINITY, f64::min)
}

fn fmt_vec(v: &DVector<f64>) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:.4}")).collect();
    format!("[{}]", parts.join(", "))
}

impl Diagnostics {
    pub fn min_p(&self) -> f64 {
        min(&self.series.p)
    }

    pub fn checks(&self) -> Vec<Check> {
        let split = max(&self.split_gain)
            .max(max(&self.split_sign))
            .max(max(&self.split_theta));
        let theta = min(&self.theta_margin);
        vec![
            Check {
                name: "alpha",
                pass: self.alpha.pass,
                detail: format!("lambda_min(alpha) - 1/2 = {:.4}", self.alpha.margin),
            },
            Check {
                name: "splitting",
                pass: split <= SPLIT_TOL && self.last_entry == 0.0,
                detail: format!("max residual {split:.3e}, last entry {:.3e}", self.last_entry),
            },
            Check {
                name: "theta-bound",
                pass: theta >= 0.0,
                detail: format!("min margin {theta:.4e}"),
            },
            Check {
                name: "integral-bound",
                pass: self.gammas.is_some() && self.integral_margin >= 0.0,
                detail: match self.gammas {
                    Some((g1, g2)) => format!("gamma1 = {g1}, gamma2 = {g2}, margin {:.4e}", self.integral_margin),
                    None => "no integer pair in 0..=10".to_string(),
                },
            },
            Check {
                name: "gain-c",
                pass: self.c_check.pass,
                detail: format!(
                    "C_min = {}, margins {}",
                    fmt_vec(&self.minimal_c),
                    fmt_vec(&self.c_check.margins)
                ),
            },
            Check {
                name: "p-nonnegative",
                pass: self.min_p() >= 0.0,
                detail: format!("zeta_L = {:.4}, min P = {:.4}", self.zeta_l, self.min_p()),
            },
            Check {
                name: "v-nonincreasing",
                pass: self.monotone.pass,
                detail: format!(
                    "max rise {:.3e} (tolerance {:.3e}) at t = {:.4}",
                    self.monotone.max_increase,
                    self.monotone.tolerance,
                    self.series.t.get(self.monotone.worst_step).copied().unwrap_or(0.0)
                ),
            },
        ]
    }

    /// Per-sample columns for `analyze -o`.
    pub fn header() -> Vec<&'static str> {
        vec![
            "t",
            "V1",
            "L",
            "P",
            "V",
            "split_gain",
            "split_sign",
            "split_theta",
            "theta_margin",
        ]
    }

    pub fn rows(&self) -> impl Iterator<Item = [f64; 9]> + '_ {
        let s = &self.series;
        (0..s.t.len()).map(move |k| {
            [
                s.t[k],
                s.v1[k],
                s.l[k],
                s.p[k],
                s.v[k],
                self.split_gain[k],
                self.split_sign[k],
                self.split_theta[k],
                self.theta_margin[k],
            ]
        })
    }
}
