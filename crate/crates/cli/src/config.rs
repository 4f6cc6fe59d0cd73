//! Scenario files: TOML with `[scenario]`, `[plant]`, `[reference]`,
//! `[gains]`, `[initial]` and optional `[analysis]` sections.
//!
//! Angles may be given in degrees (`units = "deg"`); they are converted to
//! radians on load and the loaded value always carries `units = "rad"`, so
//! writing a loaded config back out and reloading it gives the same value.

use std::path::Path;
use std::sync::Arc;

use nalgebra::DVector;
use rmc_core::controller::GainSet;
use rmc_core::plants::{CoriolisVariant, PlantModel, ScalarToy, TwoLinkArm, TwoLinkParams};
use rmc_core::reference::{benchmark_reference, Constant, EnvelopedSine, ReferenceTrajectory, Riccati, Sinusoid};
use rmc_core::simulator::Scenario;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Units {
    #[default]
    Rad,
    Deg,
}

impl Units {
    fn to_rad(self, v: f64) -> f64 {
        match self {
            Units::Rad => v,
            Units::Deg => v.to_radians(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub scenario: ScenarioSection,
    pub plant: PlantSection,
    pub reference: ReferenceSection,
    pub gains: GainsSection,
    pub initial: InitialSection,
    #[serde(default)]
    pub analysis: AnalysisSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSection {
    /// Horizon `T`, seconds.
    pub horizon: f64,
    /// Integration step, seconds.
    pub step: f64,
    /// Log every k-th step.
    #[serde(default = "one")]
    pub decimation: usize,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Coriolis {
    #[default]
    Printed,
    Corrected,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum PlantSection {
    TwoLink {
        #[serde(default)]
        coriolis_variant: Coriolis,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        a1: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        a2: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        a3: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        a4: Option<f64>,
    },
    ScalarToy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum ReferenceSection {
    /// `(1 - exp(-0.3 t^3)) [30, 45] deg sin t`.
    Benchmark,
    EnvelopedSine {
        #[serde(default)]
        units: Units,
        amplitude: Vec<f64>,
        rate: f64,
    },
    Sinusoid {
        #[serde(default)]
        units: Units,
        amplitude: Vec<f64>,
        offset: Vec<f64>,
        omega: f64,
        #[serde(default)]
        phase: f64,
    },
    Constant {
        #[serde(default)]
        units: Units,
        value: Vec<f64>,
    },
    Riccati {
        x0: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GainsSection {
    pub alpha: Vec<f64>,
    pub kp: f64,
    #[serde(default)]
    pub kd: Vec<f64>,
    pub c: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialSection {
    #[serde(default)]
    pub units: Units,
    pub position: Vec<f64>,
    /// Omitted means at rest; must stay empty for first-order plants.
    #[serde(default)]
    pub velocity: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisSection {
    /// Append `V1, L, P, V` to run logs.
    #[serde(default)]
    pub enabled: bool,
    #[serde(default = "default_safety")]
    pub safety: f64,
    /// Fixed integral-inequality constants; searched on the run when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma2: Option<f64>,
    #[serde(default = "default_diff_step")]
    pub diff_step: f64,
}

fn default_safety() -> f64 {
    rmc_core::analysis::DEFAULT_SAFETY
}

fn default_diff_step() -> f64 {
    rmc_core::analysis::DEFAULT_DIFF_STEP
}

impl Default for AnalysisSection {
    fn default() -> Self {
        Self {
            enabled: false,
            safety: default_safety(),
            gamma1: None,
            gamma2: None,
            diff_step: default_diff_step(),
        }
    }
}

pub fn load_config(path: &Path) -> Result<ScenarioConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::config(path, e.to_string()))?;
    parse_config(&text).map_err(|m| CliError::config(path, m))
}

/// Parses, converts to radians and validates.
pub fn parse_config(text: &str) -> std::result::Result<ScenarioConfig, String> {
    let raw: ScenarioConfig = toml::from_str(text).map_err(|e| e.to_string())?;
    let cfg = raw.into_radians();
    cfg.validate()?;
    Ok(cfg)
}

pub fn to_toml_string(cfg: &ScenarioConfig) -> String {
    toml::to_string(cfg).expect("scenario config serializes")
}

fn convert(units: Units, v: &[f64]) -> Vec<f64> {
    v.iter().map(|x| units.to_rad(*x)).collect()
}

fn field(name: &str, reason: impl std::fmt::Display) -> String {
    format!("invalid `{name}`: {reason}")
}

fn require_len(name: &str, v: &[f64], len: usize) -> std::result::Result<(), String> {
    if v.len() != len {
        return Err(field(name, format!("expected {len} entries, got {}", v.len())));
    }
    if let Some(x) = v.iter().find(|x| !x.is_finite()) {
        return Err(field(name, format!("non-finite entry {x}")));
    }
    Ok(())
}

impl ScenarioConfig {
    fn into_radians(mut self) -> Self {
        self.reference = match self.reference {
            ReferenceSection::EnvelopedSine { units, amplitude, rate } => ReferenceSection::EnvelopedSine {
                units: Units::Rad,
                amplitude: convert(units, &amplitude),
                rate,
            },
            ReferenceSection::Sinusoid {
                units,
                amplitude,
                offset,
                omega,
                phase,
            } => ReferenceSection::Sinusoid {
                units: Units::Rad,
                amplitude: convert(units, &amplitude),
                offset: convert(units, &offset),
                omega,
                phase,
            },
            ReferenceSection::Constant { units, value } => ReferenceSection::Constant {
                units: Units::Rad,
                value: convert(units, &value),
            },
            other => other,
        };
        let u = self.initial.units;
        self.initial = InitialSection {
            units: Units::Rad,
            position: convert(u, &self.initial.position),
            velocity: convert(u, &self.initial.velocity),
        };
        self
    }

    pub fn plant_model(&self) -> Arc<dyn PlantModel> {
        match &self.plant {
            PlantSection::TwoLink {
                coriolis_variant,
                a1,
                a2,
                a3,
                a4,
            } => {
                let d = TwoLinkParams::default();
                Arc::new(TwoLinkArm::new(TwoLinkParams {
                    a1: a1.unwrap_or(d.a1),
                    a2: a2.unwrap_or(d.a2),
                    a3: a3.unwrap_or(d.a3),
                    a4: a4.unwrap_or(d.a4),
                    coriolis: match coriolis_variant {
                        Coriolis::Printed => CoriolisVariant::Printed,
                        Coriolis::Corrected => CoriolisVariant::Corrected,
                    },
                }))
            }
            PlantSection::ScalarToy => Arc::new(ScalarToy),
        }
    }

    pub fn reference_trajectory(&self) -> Arc<dyn ReferenceTrajectory> {
        let v = |x: &[f64]| DVector::from_column_slice(x);
        match &self.reference {
            ReferenceSection::Benchmark => Arc::new(benchmark_reference()),
            ReferenceSection::EnvelopedSine { amplitude, rate, .. } => Arc::new(EnvelopedSine {
                amplitude: v(amplitude),
                rate: *rate,
            }),
            ReferenceSection::Sinusoid {
                amplitude,
                offset,
                omega,
                phase,
                ..
            } => Arc::new(Sinusoid {
                amplitude: v(amplitude),
                offset: v(offset),
                omega: *omega,
                phase: *phase,
            }),
            ReferenceSection::Constant { value, .. } => Arc::new(Constant(v(value))),
            ReferenceSection::Riccati { x0 } => Arc::new(Riccati { x0: *x0 }),
        }
    }

    pub fn gain_set(&self, plant: &dyn PlantModel) -> std::result::Result<GainSet, String> {
        let g = &self.gains;
        GainSet::new(
            DVector::from_column_slice(&g.alpha),
            g.kp,
            DVector::from_column_slice(&g.kd),
            DVector::from_column_slice(&g.c),
            plant.sign_matrix(),
        )
        .map_err(|e| format!("gains: {e}"))
    }

    pub fn initial_state(&self, plant: &dyn PlantModel) -> DVector<f64> {
        let m = plant.inputs();
        let mut x = DVector::zeros(plant.state_len());
        x.rows_mut(0, m).copy_from_slice(&self.initial.position);
        if plant.order() > 1 && !self.initial.velocity.is_empty() {
            x.rows_mut(m, m).copy_from_slice(&self.initial.velocity);
        }
        x
    }

    pub fn validate(&self) -> std::result::Result<(), String> {
        let s = &self.scenario;
        if !(s.horizon > 0.0) || !s.horizon.is_finite() {
            return Err(field(
                "scenario.horizon",
                format!("must be positive, got {}", s.horizon),
            ));
        }
        if !(s.step > 0.0) || !s.step.is_finite() {
            return Err(field("scenario.step", format!("must be positive, got {}", s.step)));
        }
        if s.decimation < 1 {
            return Err(field("scenario.decimation", "must be at least 1"));
        }
        let steps = (s.horizon / s.step).round();
        if (steps * s.step - s.horizon).abs() > 1e-9 * s.horizon {
            return Err(field(
                "scenario.horizon",
                "must be an integer multiple of scenario.step",
            ));
        }

        let plant = self.plant_model();
        let m = plant.inputs();
        if let PlantSection::TwoLink { a1, a2, a3, a4, .. } = &self.plant {
            for (name, v) in [("a1", a1), ("a2", a2), ("a3", a3), ("a4", a4)] {
                if let Some(v) = v {
                    if !v.is_finite() {
                        return Err(field(&format!("plant.{name}"), "must be finite"));
                    }
                }
            }
        }

        match &self.reference {
            ReferenceSection::Benchmark => {}
            ReferenceSection::EnvelopedSine { amplitude, rate, .. } => {
                require_len("reference.amplitude", amplitude, m)?;
                if !(*rate > 0.0) {
                    return Err(field("reference.rate", format!("must be positive, got {rate}")));
                }
            }
            ReferenceSection::Sinusoid {
                amplitude,
                offset,
                omega,
                phase,
                ..
            } => {
                require_len("reference.amplitude", amplitude, m)?;
                require_len("reference.offset", offset, m)?;
                if !omega.is_finite() || !phase.is_finite() {
                    return Err(field("reference.omega", "omega and phase must be finite"));
                }
            }
            ReferenceSection::Constant { value, .. } => require_len("reference.value", value, m)?,
            ReferenceSection::Riccati { x0 } => {
                if m != 1 {
                    return Err(field("reference.name", "riccati is scalar"));
                }
                if *x0 > 0.0 && s.horizon >= 1.0 / x0 {
                    return Err(field(
                        "reference.x0",
                        format!("escapes to infinity at t = {}", 1.0 / x0),
                    ));
                }
            }
        }
        if self.reference_trajectory().dim() != m {
            return Err(field(
                "reference.name",
                format!("reference dimension differs from the plant's {m}"),
            ));
        }

        require_len("gains.alpha", &self.gains.alpha, m)?;
        require_len("gains.kd", &self.gains.kd, m - 1)?;
        require_len("gains.c", &self.gains.c, m)?;
        self.gain_set(plant.as_ref())?;

        require_len("initial.position", &self.initial.position, m)?;
        if plant.order() == 1 {
            if !self.initial.velocity.is_empty() {
                return Err(field("initial.velocity", "first-order plant has no velocity state"));
            }
        } else if !self.initial.velocity.is_empty() {
            require_len("initial.velocity", &self.initial.velocity, m)?;
        }

        let a = &self.analysis;
        if !(a.safety >= 0.0) {
            return Err(field("analysis.safety", "must be non-negative"));
        }
        if !(a.diff_step > 0.0) {
            return Err(field("analysis.diff_step", "must be positive"));
        }
        for (name, g) in [("analysis.gamma1", a.gamma1), ("analysis.gamma2", a.gamma2)] {
            if let Some(g) = g {
                if !(g >= 0.0) {
                    return Err(field(name, "must be non-negative"));
                }
            }
        }
        Ok(())
    }

    pub fn to_scenario(&self) -> std::result::Result<Scenario, String> {
        let plant = self.plant_model();
        let gains = self.gain_set(plant.as_ref())?;
        Ok(Scenario {
            initial_state: self.initial_state(plant.as_ref()),
            reference: self.reference_trajectory(),
            gains,
            plant,
            horizon: self.scenario.horizon,
            step: self.scenario.step,
            decimation: self.scenario.decimation,
        })
    }
}

/// Bound estimates file for `check-gains --bounds`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundsFile {
    pub zeta_nbar: Vec<f64>,
    /// Full `m x m` rows; only entries above the diagonal may be non-zero.
    #[serde(default)]
    pub zeta_omega: Vec<Vec<f64>>,
    pub gamma1: f64,
    pub gamma2: f64,
}

impl BoundsFile {
    pub fn load(path: &Path) -> Result<rmc_core::controller::BoundEstimates> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::config(path, e.to_string()))?;
        let raw: BoundsFile = toml::from_str(&text).map_err(|e| CliError::config(path, e.to_string()))?;
        raw.into_estimates().map_err(|m| CliError::config(path, m))
    }

    pub fn into_estimates(self) -> std::result::Result<rmc_core::controller::BoundEstimates, String> {
        let m = self.zeta_nbar.len();
        let mut b = rmc_core::controller::BoundEstimates::zeros(m);
        b.zeta_nbar = DVector::from_vec(self.zeta_nbar);
        if !self.zeta_omega.is_empty() {
            if self.zeta_omega.len() != m || self.zeta_omega.iter().any(|r| r.len() != m) {
                return Err(field("zeta_omega", format!("expected {m} rows of {m} entries")));
            }
            for (i, row) in self.zeta_omega.iter().enumerate() {
                for (j, v) in row.iter().enumerate() {
                    b.zeta_omega[(i, j)] = *v;
                }
            }
        }
        b.gamma1 = self.gamma1;
        b.gamma2 = self.gamma2;
        b.validate().map_err(|e| e.to_string())?;
        Ok(b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const BENCH: &str = r#"
[scenario]
horizon = 20.0
step = 0.001

[plant]
name = "two_link"

[reference]
name = "enveloped_sine"
units = "deg"
amplitude = [30.0, 45.0]
rate = 0.3

[gains]
alpha = [1.0, 5.0]
kp = 124.0
kd = [50.0]
c = [5.0, 5.0]

[initial]
units = "deg"
position = [10.0, 10.0]
velocity = [0.0, 0.0]
"#;

    #[test]
    fn degrees_converted_on_load() {
        let cfg = parse_config(BENCH).unwrap();
        assert_eq!(cfg.initial.units, Units::Rad);
        assert_eq!(cfg.initial.position, vec![10f64.to_radians(); 2]);
        match &cfg.reference {
            ReferenceSection::EnvelopedSine { amplitude, units, .. } => {
                assert_eq!(*units, Units::Rad);
                assert_eq!(amplitude, &vec![30f64.to_radians(), 45f64.to_radians()]);
            }
            other => panic!("{other:?}"),
        }
        assert_eq!(cfg.scenario.decimation, 1);
        assert_eq!(
            cfg.plant,
            PlantSection::TwoLink {
                coriolis_variant: Coriolis::Printed,
                a1: None,
                a2: None,
                a3: None,
                a4: None
            }
        );
    }

    #[test]
    fn zero_step_rejected() {
        let err = parse_config(&BENCH.replace("step = 0.001", "step = 0.0")).unwrap_err();
        assert!(err.contains("scenario.step"), "{err}");
    }

    #[test]
    fn unknown_key_named() {
        let err = parse_config(&BENCH.replace("kp = 124.0", "kp = 124.0\nfoo = 1")).unwrap_err();
        assert!(err.contains("foo"), "{err}");
        let err = parse_config(&BENCH.replace("name = \"two_link\"", "name = \"two_link\"\nfoo = 2")).unwrap_err();
        assert!(err.contains("foo"), "{err}");
        let err = parse_config(&format!("{BENCH}\n[foo]\nx = 1\n")).unwrap_err();
        assert!(err.contains("foo"), "{err}");
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let err = parse_config(&BENCH.replace("kp = 124.0", "kp = = 124.0")).unwrap_err();
        assert!(err.contains("line 17"), "{err}");
    }

    #[test]
    fn field_validation_messages() {
        let cases = [
            ("alpha = [1.0, 5.0]", "alpha = [1.0, -5.0]", "alpha"),
            ("c = [5.0, 5.0]", "c = [5.0]", "gains.c"),
            ("horizon = 20.0", "horizon = 20.0005", "scenario.horizon"),
            ("position = [10.0, 10.0]", "position = [10.0]", "initial.position"),
            ("kd = [50.0]", "kd = []", "gains.kd"),
        ];
        for (from, to, name) in cases {
            let err = parse_config(&BENCH.replace(from, to)).unwrap_err();
            assert!(err.contains(name), "{to}: {err}");
        }
    }

    #[test]
    fn round_trip_is_fixed_point() {
        let cfg = parse_config(BENCH).unwrap();
        let text = to_toml_string(&cfg);
        let again = parse_config(&text).unwrap();
        assert_eq!(cfg, again);
        assert_eq!(text, to_toml_string(&again));
    }

    #[test]
    fn scalar_toy_config() {
        let text = r#"
[scenario]
horizon = 1.0
step = 0.01
decimation = 2
[plant]
name = "scalar_toy"
[reference]
name = "riccati"
x0 = 0.4
[gains]
alpha = [2.0]
kp = 5.0
c = [1.0]
[initial]
position = [0.4]
[analysis]
enabled = true
gamma1 = 1.0
"#;
        let cfg = parse_config(text).unwrap();
        let sc = cfg.to_scenario().unwrap();
        assert_eq!(sc.initial_state.as_slice(), &[0.4]);
        assert_eq!(cfg.analysis.gamma1, Some(1.0));
        assert_eq!(cfg.analysis.gamma2, None);
        assert_eq!(parse_config(&to_toml_string(&cfg)).unwrap(), cfg);
        let err = parse_config(&text.replace("x0 = 0.4", "x0 = 2.0")).unwrap_err();
        assert!(err.contains("reference.x0"), "{err}");
    }

    #[test]
    fn bounds_file() {
        let b: BoundsFile = toml::from_str(
            "zeta_nbar = [1.0, 2.0]\nzeta_omega = [[0.0, 0.5], [0.0, 0.0]]\ngamma1 = 1.0\ngamma2 = 2.0\n",
        )
        .unwrap();
        let e = b.into_estimates().unwrap();
        assert_eq!(e.zeta_omega[(0, 1)], 0.5);
        let bad: BoundsFile = toml::from_str(
            "zeta_nbar = [1.0, 2.0]\nzeta_omega = [[0.0, 0.5], [0.3, 0.0]]\ngamma1 = 1.0\ngamma2 = 2.0\n",
        )
        .unwrap();
        assert!(bad.into_estimates().is_err());
    }
}
