//! Continuous robust control law
//!
//! ```text
//! tau  = D K [ e_n(t) - e_n(t0) + alpha * int_{t0}^t e_n ] + D Pi
//! Pi'  = C Sgn(e_n),   Pi(t0) = 0
//! ```
//!
//! with `K = I + kp I + diag(kd_1, ..., kd_(m-1), 0)`. Only the sign matrix
//! `D` of the input gain is assumed known. All matrices here are diagonal and
//! are carried as their diagonals.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Componentwise signum with `sgn(0) = 0`.
pub fn sgn(v: &DVector<f64>) -> DVector<f64> {
    v.map(|x| {
        if x > 0.0 {
            1.0
        } else if x < 0.0 {
            -1.0
        } else {
            0.0
        }
    })
}

fn require_positive(name: &str, v: &DVector<f64>) -> Result<()> {
    match v.iter().position(|x| !(*x > 0.0)) {
        Some(i) => Err(Error::invalid(
            format!("{name}[{}]", i + 1),
            format!("must be positive, got {}", v[i]),
        )),
        None => Ok(()),
    }
}

/// Diagonal of `K = I + kp I + diag(kd, 0)`; `kd` has `m - 1` entries.
pub fn compose_k(kp: f64, kd: &[f64]) -> Result<DVector<f64>> {
    if !(kp > 0.0) {
        return Err(Error::invalid("kp", format!("must be positive, got {kp}")));
    }
    require_positive("kd", &DVector::from_column_slice(kd))?;
    let m = kd.len() + 1;
    Ok(DVector::from_iterator(
        m,
        (0..m).map(|i| 1.0 + kp + kd.get(i).copied().unwrap_or(0.0)),
    ))
}

#[derive(Debug, Clone, PartialEq)]
pub struct GainSet {
    /// Diagonal of `alpha` (1/s).
    pub alpha: DVector<f64>,
    pub kp: f64,
    pub kd: DVector<f64>,
    /// Diagonal of `C`.
    pub c: DVector<f64>,
    /// Diagonal of the sign matrix `D`.
    pub d: DVector<f64>,
    k: DVector<f64>,
}

impl GainSet {
    pub fn new(alpha: DVector<f64>, kp: f64, kd: DVector<f64>, c: DVector<f64>, d: DVector<f64>) -> Result<Self> {
        let m = alpha.len();
        if m == 0 {
            return Err(Error::invalid("alpha", "needs at least one entry"));
        }
        if kd.len() + 1 != m {
            return Err(Error::dims("kd", m - 1, kd.len()));
        }
        if c.len() != m {
            return Err(Error::dims("C", m, c.len()));
        }
        if d.len() != m {
            return Err(Error::dims("D", m, d.len()));
        }
        require_positive("alpha", &alpha)?;
        require_positive("C", &c)?;
        if let Some(i) = d.iter().position(|x| x.abs() != 1.0) {
            return Err(Error::invalid(format!("D[{}]", i + 1), "entries must be +1 or -1"));
        }
        let k = compose_k(kp, kd.as_slice())?;
        Ok(Self { alpha, kp, kd, c, d, k })
    }

    pub fn dim(&self) -> usize {
        self.alpha.len()
    }

    /// Diagonal of `K`.
    pub fn k(&self) -> &DVector<f64> {
        &self.k
    }

    pub fn with_c(&self, c: DVector<f64>) -> Result<Self> {
        Self::new(self.alpha.clone(), self.kp, self.kd.clone(), c, self.d.clone())
    }
}

/// Integrator states of the controller.
#[derive(Debug, Clone, PartialEq)]
pub struct ControllerState {
    /// Integral of `C Sgn(e_n)`.
    pub pi: DVector<f64>,
    /// Running integral of `e_n`.
    pub int_en: DVector<f64>,
    en0: DVector<f64>,
}

impl ControllerState {
    /// Fresh state at `t0`: `Pi = 0`, `int e_n = 0`, `e_n(t0)` frozen.
    pub fn new(en0: DVector<f64>) -> Self {
        let m = en0.len();
        Self {
            pi: DVector::zeros(m),
            int_en: DVector::zeros(m),
            en0,
        }
    }

    /// Rebuilds a state from stored integrator values.
    pub fn from_parts(pi: DVector<f64>, int_en: DVector<f64>, en0: DVector<f64>) -> Self {
        Self { pi, int_en, en0 }
    }

    pub fn en0(&self) -> &DVector<f64> {
        &self.en0
    }
}

pub fn control_input(e_n: &DVector<f64>, state: &ControllerState, gains: &GainSet) -> Result<DVector<f64>> {
    let m = gains.dim();
    for (what, v) in [
        ("e_n", e_n),
        ("Pi", &state.pi),
        ("int e_n", &state.int_en),
        ("e_n(t0)", &state.en0),
    ] {
        if v.len() != m {
            return Err(Error::dims(what, m, v.len()));
        }
    }
    let inner = e_n - &state.en0 + gains.alpha.component_mul(&state.int_en);
    Ok(gains.d.component_mul(&(gains.k.component_mul(&inner) + &state.pi)))
}

/// `(Pi', d/dt int e_n) = (C Sgn(e_n), e_n)`.
pub fn controller_state_derivative(e_n: &DVector<f64>, gains: &GainSet) -> (DVector<f64>, DVector<f64>) {
    (gains.c.component_mul(&sgn(e_n)), e_n.clone())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GainCheck {
    pub pass: bool,
    pub margin: f64,
}

/// `lambda_min(alpha) >= 1/2`.
pub fn check_alpha(alpha: &DVector<f64>) -> GainCheck {
    let lmin = alpha.iter().copied().fold(f64::INFINITY, f64::min);
    let margin = lmin - 0.5;
    GainCheck {
        pass: margin >= 0.0,
        margin,
    }
}

/// Bounds on the reference-evaluated disturbance terms plus the
/// integral-inequality constants `gamma1`, `gamma2`.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundEstimates {
    /// Bounds on `|Nbar_i|`.
    pub zeta_nbar: DVector<f64>,
    /// Bounds on `|Omega_ij|`, strictly upper triangular.
    pub zeta_omega: DMatrix<f64>,
    pub gamma1: f64,
    pub gamma2: f64,
}

impl BoundEstimates {
    pub fn zeros(m: usize) -> Self {
        Self {
            zeta_nbar: DVector::zeros(m),
            zeta_omega: DMatrix::zeros(m, m),
            gamma1: 0.0,
            gamma2: 0.0,
        }
    }

    pub fn dim(&self) -> usize {
        self.zeta_nbar.len()
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.dim();
        if self.zeta_omega.nrows() != m || self.zeta_omega.ncols() != m {
            return Err(Error::dims("zeta_omega", m, self.zeta_omega.nrows()));
        }
        let nonneg = |x: f64| x >= 0.0 && x.is_finite();
        if !self.zeta_nbar.iter().all(|&x| nonneg(x)) {
            return Err(Error::invalid("zeta_nbar", "entries must be non-negative"));
        }
        for i in 0..m {
            for j in 0..m {
                let v = self.zeta_omega[(i, j)];
                if j <= i && v != 0.0 {
                    return Err(Error::invalid("zeta_omega", "must be zero on and below the diagonal"));
                }
                if !nonneg(v) {
                    return Err(Error::invalid("zeta_omega", "entries must be non-negative"));
                }
            }
        }
        if !nonneg(self.gamma1) || !nonneg(self.gamma2) {
            return Err(Error::invalid("gamma", "gamma1 and gamma2 must be non-negative"));
        }
        Ok(())
    }
}

/// Smallest `C` satisfying the gain conditions with equality, computed from
/// the last channel upward.
pub fn minimal_c(bounds: &BoundEstimates, alpha: &DVector<f64>) -> Result<DVector<f64>> {
    bounds.validate()?;
    require_positive("alpha", alpha)?;
    let m = bounds.dim();
    if alpha.len() != m {
        return Err(Error::dims("alpha", m, alpha.len()));
    }
    let mut c = DVector::zeros(m);
    for i in (0..m).rev() {
        let coupling: f64 = (i + 1..m).map(|j| bounds.zeta_omega[(i, j)] * c[j]).sum();
        c[i] = (bounds.zeta_nbar[i] + coupling) * (1.0 + bounds.gamma2 / alpha[i]);
    }
    Ok(c)
}

/// `zeta_L = g1 sum_ij zeta_Omega_ij C_j + g1 sum_i zeta_Nbar_i + sum_i C_i |e_n,i(t0)|`.
pub fn zeta_l(bounds: &BoundEstimates, c: &DVector<f64>, en0: &DVector<f64>) -> f64 {
    let m = bounds.dim();
    let mut omega_term = 0.0;
    for i in 0..m {
        for j in i + 1..m {
            omega_term += bounds.zeta_omega[(i, j)] * c[j];
        }
    }
    bounds.gamma1 * omega_term
        + bounds.gamma1 * bounds.zeta_nbar.sum()
        + c.iter().zip(en0.iter()).map(|(ci, e)| ci * e.abs()).sum::<f64>()
}

#[derive(Debug, Clone, PartialEq)]
pub struct CCheck {
    pub pass: bool,
    /// `C_i - C_min,i` per channel.
    pub margins: DVector<f64>,
}

pub fn validate_c(c: &DVector<f64>, minimum: &DVector<f64>) -> CCheck {
    let margins = c - minimum;
    CCheck {
        pass: margins.iter().all(|&x| x >= 0.0),
        margins,
    }
}
