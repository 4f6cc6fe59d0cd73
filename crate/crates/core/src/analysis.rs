//! Stability-proof quantities evaluated along closed-loop trajectories.
//!
//! Time derivatives of `h`, `g` and `M` are central differences in state
//! space along the velocity `X' = [x', ..., x^(n-1), x^(n)]`, so each sample
//! is evaluated on its own without neighbouring log entries. The plants are
//! autonomous, which makes this the exact chain-rule derivative up to
//! `O(delta^2)`.
//!
//! `N` and `Nbar` go through the same function; `Nbar` simply receives the
//! reference state, so `Ntilde` and `Utilde` are exactly zero there.

use nalgebra::{DMatrix, DVector};

use crate::cascade::{cascade_coefficients, combine, filtered_error, last_error_rate, CascadeCoefficients};
use crate::controller::{minimal_c, sgn, validate_c, BoundEstimates, GainSet};
use crate::error::{Error, Result};
use crate::plants::PlantModel;
use crate::reference::ReferenceTrajectory;
use crate::sdu::{sdu_decompose, SduFactors};
use crate::simulator::{run_scenario, LogSample, Scenario, TrajectoryLog};

/// Default state-space differencing step (seconds along `X'`).
pub const DEFAULT_DIFF_STEP: f64 = 1e-5;

/// Default relative inflation applied to empirical suprema.
pub const DEFAULT_SAFETY: f64 = 0.1;

/// Plant-side terms at one point `(X, x^(n))`.
#[derive(Debug, Clone)]
pub struct PlantTerms {
    pub sdu: SduFactors,
    /// `M = S^-1`.
    pub m: DMatrix<f64>,
    pub m_dot: DMatrix<f64>,
    /// `h' + g' g^-1 (x^(n) - h)`.
    pub phi: DVector<f64>,
    /// `M phi`.
    pub f: DVector<f64>,
}

fn inverse_spd(s: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let inv = s
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Numerical("S is not positive definite".into()))?
        .inverse();
    Ok((&inv + inv.transpose()) * 0.5)
}

fn inertia_like(plant: &dyn PlantModel, x: &DVector<f64>) -> Result<(SduFactors, DMatrix<f64>)> {
    let f = sdu_decompose(&plant.input_gain(x))?;
    let m = inverse_spd(&f.s)?;
    Ok((f, m))
}

fn all_finite<'a>(it: impl IntoIterator<Item = &'a f64>) -> bool {
    it.into_iter().all(|v| v.is_finite())
}

/// `X' = [x', ..., x^(n-1), x^(n)]` from the stacked state and `x^(n)`.
fn state_velocity(x: &DVector<f64>, xn: &DVector<f64>, m: usize) -> DVector<f64> {
    let len = x.len();
    let mut v = DVector::zeros(len);
    v.rows_mut(0, len - m).copy_from(&x.rows(m, len - m));
    v.rows_mut(len - m, m).copy_from(xn);
    v
}

pub fn plant_terms(plant: &dyn PlantModel, x: &DVector<f64>, xn: &DVector<f64>, delta: f64) -> Result<PlantTerms> {
    let m = plant.inputs();
    if x.len() != plant.state_len() {
        return Err(Error::dims("state", plant.state_len(), x.len()));
    }
    if xn.len() != m {
        return Err(Error::dims("highest derivative", m, xn.len()));
    }
    if !(delta > 0.0) {
        return Err(Error::invalid("delta", format!("must be positive, got {delta}")));
    }
    let v = state_velocity(x, xn, m);
    let xp = x + &v * delta;
    let xm = x - &v * delta;
    let scale = 0.5 / delta;

    let g = plant.input_gain(x);
    let h = plant.drift(x);
    let (sdu, m_mat) = inertia_like(plant, x)?;
    let (_, m_plus) = inertia_like(plant, &xp)?;
    let (_, m_minus) = inertia_like(plant, &xm)?;
    let m_dot = (m_plus - m_minus) * scale;
    let h_dot = (plant.drift(&xp) - plant.drift(&xm)) * scale;
    let g_dot = (plant.input_gain(&xp) - plant.input_gain(&xm)) * scale;
    let tau_equiv = g
        .clone()
        .lu()
        .solve(&(xn - &h))
        .ok_or_else(|| Error::Numerical("input gain not invertible".into()))?;
    let phi = h_dot + g_dot * tau_equiv;
    let f = &m_mat * &phi;
    if !all_finite(m_dot.iter().chain(phi.iter()).chain(f.iter())) {
        return Err(Error::Numerical("non-finite derivative estimate".into()));
    }
    Ok(PlantTerms {
        sdu,
        m: m_mat,
        m_dot,
        phi,
        f,
    })
}

/// `N` together with the error signals it was built from.
#[derive(Debug, Clone)]
pub struct NTerms {
    pub plant: PlantTerms,
    pub errors: Vec<DVector<f64>>,
    pub en_dot: DVector<f64>,
    pub r: DVector<f64>,
    pub n: DVector<f64>,
}

/// `N = M (x_r^(n+1) + sum_{j<=n-2} a_nj e1^(j+2) + alpha e_n') - f + e_n + M' r / 2`.
///
/// `reference` holds `x_r` derivatives of order `0..=n+1`.
pub fn n_signal(
    plant: &dyn PlantModel,
    coeffs: &CascadeCoefficients,
    alpha: &DVector<f64>,
    reference: &[DVector<f64>],
    x: &DVector<f64>,
    xn: &DVector<f64>,
    delta: f64,
) -> Result<NTerms> {
    let n = coeffs.order();
    let m = plant.inputs();
    if reference.len() != n + 2 {
        return Err(Error::dims("reference derivative list", n + 2, reference.len()));
    }
    let plant_t = plant_terms(plant, x, xn, delta)?;
    let mut e1_derivs: Vec<DVector<f64>> = (0..n).map(|k| &reference[k] - x.rows(k * m, m)).collect();
    e1_derivs.push(&reference[n] - xn);
    let errors: Vec<DVector<f64>> = (1..=n).map(|i| combine(coeffs.row(i), &e1_derivs[..n])).collect();
    let en_dot = last_error_rate(&e1_derivs, coeffs)?;
    let en = &errors[n - 1];
    let r = filtered_error(en, &en_dot, alpha)?;

    let row = coeffs.row(n);
    let mut inner = reference[n + 1].clone();
    for j in 0..n.saturating_sub(1) {
        inner.axpy(row[j] as f64, &e1_derivs[j + 2], 1.0);
    }
    inner += alpha.component_mul(&en_dot);
    let n_vec = &plant_t.m * inner - &plant_t.f + en + &plant_t.m_dot * &r * 0.5;
    Ok(NTerms {
        plant: plant_t,
        errors,
        en_dot,
        r,
        n: n_vec,
    })
}

/// Proof quantities at one sample.
#[derive(Debug, Clone)]
pub struct ProofSignals {
    pub t: f64,
    pub m: DMatrix<f64>,
    pub m_dot: DMatrix<f64>,
    pub f: DVector<f64>,
    pub n: DVector<f64>,
    pub n_bar: DVector<f64>,
    pub n_tilde: DVector<f64>,
    pub u: DMatrix<f64>,
    pub u_bar: DMatrix<f64>,
    /// `D (Ubar - I) D`, strictly upper triangular.
    pub omega: DMatrix<f64>,
    pub lambda: DVector<f64>,
    /// `Phi` of the gain-term splitting (not the plant `phi`).
    pub cap_phi: DVector<f64>,
    pub psi: DVector<f64>,
    pub theta: DVector<f64>,
    pub errors: Vec<DVector<f64>>,
    pub en_dot: DVector<f64>,
    pub r: DVector<f64>,
    /// `(e_1, ..., e_n, r)` stacked.
    pub z: DVector<f64>,
    pub v1: f64,
    pub l: f64,
}

impl ProofSignals {
    pub fn en(&self) -> &DVector<f64> {
        self.errors.last().expect("cascade has at least one error")
    }

    pub fn u_tilde(&self) -> DMatrix<f64> {
        &self.u - &self.u_bar
    }
}

/// `(1/2) sum e_i^T e_i + (1/2) r^T M r`; fails unless `M` is SPD.
pub fn lyapunov_v1(errors: &[DVector<f64>], r: &DVector<f64>, m: &DMatrix<f64>) -> Result<f64> {
    if m.nrows() != r.len() || m.ncols() != r.len() {
        return Err(Error::dims("M", r.len(), m.nrows()));
    }
    if m != &m.transpose() || m.clone().cholesky().is_none() {
        return Err(Error::invalid("M", "not symmetric positive definite"));
    }
    let e: f64 = errors.iter().map(|e| e.norm_squared()).sum();
    Ok(0.5 * e + 0.5 * r.dot(&(m * r)))
}

fn d_weighted_upper(d: &DVector<f64>, u: &DMatrix<f64>, w: &DVector<f64>, from_diag: bool) -> DVector<f64> {
    let m = d.len();
    let rows = if from_diag { m } else { m - 1 };
    DVector::from_iterator(
        rows,
        (0..rows).map(|i| {
            let start = if from_diag { i } else { i + 1 };
            d[i] * (start..m).map(|j| d[j] * w[j] * u[(i, j)]).sum::<f64>()
        }),
    )
}

/// Plant, reference and gains bundled for repeated proof evaluations.
pub struct ProofContext<'a> {
    pub plant: &'a dyn PlantModel,
    pub reference: &'a dyn ReferenceTrajectory,
    pub gains: &'a GainSet,
    pub coeffs: CascadeCoefficients,
    pub delta: f64,
}

impl<'a> ProofContext<'a> {
    pub fn new(plant: &'a dyn PlantModel, reference: &'a dyn ReferenceTrajectory, gains: &'a GainSet) -> Result<Self> {
        let n = plant.order();
        if reference.max_order() < n + 1 {
            return Err(Error::invalid(
                "reference",
                format!("analysis needs derivatives through order {}", n + 1),
            ));
        }
        if gains.dim() != plant.inputs() || reference.dim() != plant.inputs() {
            return Err(Error::dims("gains/reference", plant.inputs(), gains.dim()));
        }
        Ok(Self {
            plant,
            reference,
            gains,
            coeffs: cascade_coefficients(n)?,
            delta: DEFAULT_DIFF_STEP,
        })
    }

    pub fn with_step(mut self, delta: f64) -> Self {
        self.delta = delta;
        self
    }

    fn reference_state(&self, refs: &[DVector<f64>]) -> DVector<f64> {
        let m = self.plant.inputs();
        let n = self.plant.order();
        let mut x = DVector::zeros(m * n);
        for k in 0..n {
            x.rows_mut(k * m, m).copy_from(&refs[k]);
        }
        x
    }

    /// `Nbar(t)` and `Ubar(t)`.
    pub fn reference_terms(&self, t: f64) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let n = self.plant.order();
        let refs = self.reference.derivatives(t, n + 1);
        let xr = self.reference_state(&refs);
        let at_ref = n_signal(
            self.plant,
            &self.coeffs,
            &self.gains.alpha,
            &refs,
            &xr,
            &refs[n],
            self.delta,
        )?;
        Ok((at_ref.n, at_ref.plant.sdu.u))
    }

    pub fn omega(&self, u_bar: &DMatrix<f64>) -> DMatrix<f64> {
        let d = DMatrix::from_diagonal(&self.gains.d);
        let m = u_bar.nrows();
        &d * (u_bar - DMatrix::identity(m, m)) * &d
    }

    /// Proof quantities at `(t, X, x^(n))`.
    pub fn at_state(&self, t: f64, x: &DVector<f64>, xn: &DVector<f64>) -> Result<ProofSignals> {
        let n = self.plant.order();
        let refs = self.reference.derivatives(t, n + 1);
        let actual = n_signal(self.plant, &self.coeffs, &self.gains.alpha, &refs, x, xn, self.delta)?;
        if actual.plant.sdu.d != self.gains.d {
            return Err(Error::SignMismatch {
                expected: self.gains.d.as_slice().to_vec(),
                found: actual.plant.sdu.d.as_slice().to_vec(),
            });
        }
        let (n_bar, u_bar) = self.reference_terms(t)?;
        let omega = self.omega(&u_bar);
        let u = actual.plant.sdu.u.clone();
        let u_tilde = &u - &u_bar;

        let d = &self.gains.d;
        let kr = self.gains.k().component_mul(&actual.r);
        let en = actual.errors.last().unwrap();
        let cs = self.gains.c.component_mul(&sgn(en));
        let lambda = d_weighted_upper(d, &u_tilde, &kr, false);
        let cap_phi = d_weighted_upper(d, &u_bar, &kr, false);
        let psi = d_weighted_upper(d, &u_tilde, &cs, false);
        let theta = d_weighted_upper(d, &u_bar, &cs, true);

        let mut z = DVector::zeros(actual.errors.len() * d.len() + d.len());
        for (k, e) in actual.errors.iter().chain(std::iter::once(&actual.r)).enumerate() {
            z.rows_mut(k * d.len(), d.len()).copy_from(e);
        }
        let v1 = lyapunov_v1(&actual.errors, &actual.r, &actual.plant.m)?;
        let l = actual.r.dot(&(&n_bar - &theta));
        Ok(ProofSignals {
            t,
            m: actual.plant.m,
            m_dot: actual.plant.m_dot,
            f: actual.plant.f,
            n_tilde: &actual.n - &n_bar,
            n: actual.n,
            n_bar,
            u,
            u_bar,
            omega,
            lambda,
            cap_phi,
            psi,
            theta,
            errors: actual.errors,
            en_dot: actual.en_dot,
            r: actual.r,
            z,
            v1,
            l,
        })
    }

    pub fn at_sample(&self, sample: &LogSample) -> Result<ProofSignals> {
        self.at_state(sample.t, &sample.x, &sample.accel)
    }

    pub fn along(&self, samples: &[LogSample]) -> Result<Vec<ProofSignals>> {
        samples
            .iter()
            .map(|s| {
                self.at_sample(s).map_err(|e| Error::AtTime {
                    t: s.t,
                    source: Box::new(e),
                })
            })
            .collect()
    }

    /// Empirical `zeta_Nbar`, `zeta_Omega` over `t = 0, dt, ..., horizon`,
    /// inflated by `1 + safety`. The gammas are left at zero.
    pub fn estimate_bounds(&self, horizon: f64, sampling: f64, safety: f64) -> Result<BoundEstimates> {
        if !(sampling > 0.0) || !(horizon >= 0.0) {
            return Err(Error::invalid("sampling", "needs sampling > 0 and horizon >= 0"));
        }
        if !(safety >= 0.0) {
            return Err(Error::invalid("safety", format!("must be non-negative, got {safety}")));
        }
        let m = self.plant.inputs();
        let mut b = BoundEstimates::zeros(m);
        let steps = (horizon / sampling).round() as usize;
        for k in 0..=steps {
            let t = k as f64 * sampling;
            let (n_bar, u_bar) = self
                .reference_terms(t)
                .map_err(|e| Error::AtTime { t, source: Box::new(e) })?;
            let omega = self.omega(&u_bar);
            for i in 0..m {
                b.zeta_nbar[i] = b.zeta_nbar[i].max(n_bar[i].abs());
                for j in i + 1..m {
                    b.zeta_omega[(i, j)] = b.zeta_omega[(i, j)].max(omega[(i, j)].abs());
                }
            }
        }
        b.zeta_nbar *= 1.0 + safety;
        b.zeta_omega *= 1.0 + safety;
        Ok(b)
    }
}

pub fn proof_signals_at(
    sample: &LogSample,
    plant: &dyn PlantModel,
    reference: &dyn ReferenceTrajectory,
    gains: &GainSet,
    delta: f64,
) -> Result<ProofSignals> {
    ProofContext::new(plant, reference, gains)?
        .with_step(delta)
        .at_sample(sample)
}

pub fn estimate_bounds(
    reference: &dyn ReferenceTrajectory,
    plant: &dyn PlantModel,
    gains: &GainSet,
    horizon: f64,
    sampling: f64,
) -> Result<BoundEstimates> {
    ProofContext::new(plant, reference, gains)?.estimate_bounds(horizon, sampling, DEFAULT_SAFETY)
}

/// Worst relative disagreement between direct products and the componentwise
/// splittings at one sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitResiduals {
    /// `D (U - I) D K r` against `(Lambda + Phi, 0)`.
    pub gain_term: f64,
    /// `D U D C Sgn(e_n)` against `(Psi, 0) + Theta`.
    pub sign_term: f64,
    /// `D Ubar D C Sgn(e_n)` against `(I + Omega) C Sgn(e_n)`.
    pub theta_forms: f64,
    /// Last entry of the direct `D (U - I) D K r`.
    pub last_entry: f64,
}

fn relative_gap(a: &DVector<f64>, b: &DVector<f64>, scale: &DVector<f64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .zip(scale.iter())
        .map(|((x, y), s)| {
            let gap = (x - y).abs();
            if gap == 0.0 {
                0.0
            } else if *s > 0.0 {
                gap / s
            } else {
                f64::INFINITY
            }
        })
        .fold(0.0, f64::max)
}

fn stack_zero(v: &DVector<f64>) -> DVector<f64> {
    let mut out = DVector::zeros(v.len() + 1);
    out.rows_mut(0, v.len()).copy_from(v);
    out
}

pub fn splitting_residuals(sig: &ProofSignals, gains: &GainSet) -> SplitResiduals {
    let m = gains.dim();
    let dm = DMatrix::from_diagonal(&gains.d);
    let eye = DMatrix::<f64>::identity(m, m);
    let kr = gains.k().component_mul(&sig.r);
    let cs = gains.c.component_mul(&sgn(sig.en()));
    // per-row magnitude of everything that entered either side
    let mag = sig.u.abs() + sig.u_bar.abs();

    let direct_k = &dm * (&sig.u - &eye) * &dm * &kr;
    let split_k = stack_zero(&(&sig.lambda + &sig.cap_phi));
    let direct_c = &dm * &sig.u * &dm * &cs;
    let split_c = stack_zero(&sig.psi) + &sig.theta;
    let theta_alt = (&eye + &sig.omega) * &cs;

    SplitResiduals {
        gain_term: relative_gap(&direct_k, &split_k, &(&mag * kr.abs())),
        sign_term: relative_gap(&direct_c, &split_c, &(&mag * cs.abs())),
        theta_forms: relative_gap(&sig.theta, &theta_alt, &(&mag * cs.abs())),
        last_entry: direct_k[m - 1],
    }
}

/// `sum_{j>=i} C_j zeta_Ubar_ij - |Theta_i|` with `zeta_Ubar_ii = 1` and
/// `zeta_Ubar_ij = zeta_Omega_ij` above the diagonal.
pub fn theta_bound_margin(sig: &ProofSignals, c: &DVector<f64>, bounds: &BoundEstimates) -> DVector<f64> {
    let m = c.len();
    DVector::from_iterator(
        m,
        (0..m).map(|i| {
            let bound: f64 = c[i] + (i + 1..m).map(|j| c[j] * bounds.zeta_omega[(i, j)]).sum::<f64>();
            bound - sig.theta[i].abs()
        }),
    )
}

/// Residual of the closed-loop error dynamics at an interior sample, `r'`
/// taken by central differences of the logged `r`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResidualSample {
    pub t: f64,
    pub residual: f64,
    /// Sum of the norms of the individual terms.
    pub scale: f64,
}

pub fn closed_loop_residuals(signals: &[ProofSignals], gains: &GainSet, dt: f64) -> Vec<ResidualSample> {
    let m = gains.dim();
    let dm = DMatrix::from_diagonal(&gains.d);
    let eye = DMatrix::<f64>::identity(m, m);
    signals
        .windows(3)
        .map(|w| {
            let s = &w[1];
            let r_dot = (&w[2].r - &w[0].r) / (2.0 * dt);
            let kr = gains.k().component_mul(&s.r);
            let terms = [
                &s.m * r_dot,
                &s.m_dot * &s.r * 0.5,
                s.en().clone(),
                kr.clone(),
                -&s.n_tilde,
                -&s.n_bar,
                &dm * (&s.u - &eye) * &dm * &kr,
                &dm * &s.u * &dm * gains.c.component_mul(&sgn(s.en())),
            ];
            let sum = terms.iter().fold(DVector::zeros(m), |acc, v| acc + v);
            ResidualSample {
                t: s.t,
                residual: sum.norm(),
                scale: terms.iter().map(|v| v.norm()).sum(),
            }
        })
        .collect()
}

pub fn cumulative_trapezoid(y: &[f64], dt: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(y.len());
    let mut acc = 0.0;
    for (k, v) in y.iter().enumerate() {
        if k > 0 {
            acc += 0.5 * dt * (y[k - 1] + v);
        }
        out.push(acc);
    }
    out
}

/// Composite Simpson at even indices; odd indices add one trapezoid panel to
/// the preceding even value.
pub fn cumulative_simpson(y: &[f64], dt: f64) -> Vec<f64> {
    let mut out = vec![0.0; y.len()];
    let mut even = 0.0;
    for k in 1..y.len() {
        if k % 2 == 0 {
            even += dt / 3.0 * (y[k - 2] + 4.0 * y[k - 1] + y[k]);
            out[k] = even;
        } else {
            out[k] = even + 0.5 * dt * (y[k - 1] + y[k]);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct LyapunovSeries {
    pub t: Vec<f64>,
    pub l: Vec<f64>,
    /// `zeta_L - int L`, trapezoidal.
    pub p: Vec<f64>,
    pub p_simpson: Vec<f64>,
    pub v1: Vec<f64>,
    /// `V1 + P`.
    pub v: Vec<f64>,
}

pub fn l_and_p(signals: &[ProofSignals], dt: f64, zeta_l: f64) -> Result<LyapunovSeries> {
    if signals.is_empty() {
        return Err(Error::MissingField("samples"));
    }
    if !(dt > 0.0) {
        return Err(Error::invalid("dt", format!("must be positive, got {dt}")));
    }
    let l: Vec<f64> = signals.iter().map(|s| s.l).collect();
    let p: Vec<f64> = cumulative_trapezoid(&l, dt).iter().map(|i| zeta_l - i).collect();
    let p_simpson = cumulative_simpson(&l, dt).iter().map(|i| zeta_l - i).collect();
    let v1: Vec<f64> = signals.iter().map(|s| s.v1).collect();
    let v = v1.iter().zip(&p).map(|(a, b)| a + b).collect();
    Ok(LyapunovSeries {
        t: signals.iter().map(|s| s.t).collect(),
        l,
        p,
        p_simpson,
        v1,
        v,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MonotonicityCheck {
    pub pass: bool,
    /// Largest single-step increase (0 if the series never rises).
    pub max_increase: f64,
    /// `10 dt^2 max|dV|/dt`.
    pub tolerance: f64,
    /// Index of the step `k -> k+1` with the largest increase.
    pub worst_step: usize,
}

pub fn check_nonincreasing(v: &[f64], dt: f64) -> MonotonicityCheck {
    let steps: Vec<f64> = v.windows(2).map(|w| w[1] - w[0]).collect();
    let max_abs = steps.iter().fold(0.0_f64, |a, d| a.max(d.abs()));
    let tolerance = 10.0 * dt * dt * max_abs / dt;
    let (worst_step, max_increase) =
        steps
            .iter()
            .enumerate()
            .fold((0, 0.0_f64), |(bi, bv), (i, &d)| if d > bv { (i, d) } else { (bi, bv) });
    MonotonicityCheck {
        pass: max_increase <= tolerance,
        max_increase,
        tolerance,
        worst_step,
    }
}

struct IntegralBound {
    abs_e: Vec<f64>,
    int_e: Vec<f64>,
    int_edot: Vec<f64>,
}

fn integral_bound(e: &[f64], edot: &[f64], dt: f64) -> Result<IntegralBound> {
    if e.len() != edot.len() {
        return Err(Error::dims("integral inequality grids", e.len(), edot.len()));
    }
    if e.is_empty() {
        return Err(Error::MissingField("e_n"));
    }
    let abs_e: Vec<f64> = e.iter().map(|v| v.abs()).collect();
    let abs_edot: Vec<f64> = edot.iter().map(|v| v.abs()).collect();
    Ok(IntegralBound {
        int_e: cumulative_trapezoid(&abs_e, dt),
        int_edot: cumulative_trapezoid(&abs_edot, dt),
        abs_e,
    })
}

impl IntegralBound {
    /// `min_t [gamma2 int|e| + |e| - int|e'|]`, i.e. the margin at `gamma1 = 0`.
    fn base_margin(&self, gamma2: f64) -> f64 {
        (0..self.abs_e.len())
            .map(|k| gamma2 * self.int_e[k] + self.abs_e[k] - self.int_edot[k])
            .fold(f64::INFINITY, f64::min)
    }
}

/// `min_t [gamma1 + gamma2 int_0^t |e| + |e(t)| - int_0^t |e'|]`, trapezoidal.
pub fn check_lemma1(e: &[f64], edot: &[f64], dt: f64, gamma1: f64, gamma2: f64) -> Result<f64> {
    Ok(gamma1 + integral_bound(e, edot, dt)?.base_margin(gamma2))
}

/// Smallest integer `gamma2` in `0..=max`, then smallest `gamma1`, such that
/// every channel satisfies the integral inequality. `None` if infeasible.
pub fn search_gammas(channels: &[(Vec<f64>, Vec<f64>)], dt: f64, max: u32) -> Result<Option<(f64, f64)>> {
    let integrals: Vec<IntegralBound> = channels
        .iter()
        .map(|(e, ed)| integral_bound(e, ed, dt))
        .collect::<Result<_>>()?;
    for g2 in 0..=max {
        let g2 = g2 as f64;
        let worst = integrals
            .iter()
            .map(|i| i.base_margin(g2))
            .fold(f64::INFINITY, f64::min);
        let g1 = (-worst).max(0.0).ceil();
        if g1 <= max as f64 {
            return Ok(Some((g1, g2)));
        }
    }
    Ok(None)
}

/// `sup |e(T)|` over the start and every sample where `e'` changes sign.
pub fn gamma1_from_sign_changes(e: &[f64], edot: &[f64]) -> f64 {
    let mut sup = e.first().map_or(0.0, |v| v.abs());
    for k in 1..e.len().min(edot.len()) {
        if edot[k - 1] * edot[k] < 0.0 {
            sup = sup.max(e[k - 1].abs()).max(e[k].abs());
        }
    }
    sup
}

/// Whether the cubic Hermite interpolant through `(e0, d0)` and `(e1, d1)`
/// over a step `h` touches or crosses zero.
pub fn hermite_crosses_zero(e0: f64, e1: f64, d0: f64, d1: f64, h: f64) -> bool {
    if e0 == 0.0 || e1 == 0.0 || (e0 > 0.0) != (e1 > 0.0) {
        return true;
    }
    let (m0, m1) = (d0 * h, d1 * h);
    let p = |s: f64| {
        let (s2, s3) = (s * s, s * s * s);
        (2.0 * s3 - 3.0 * s2 + 1.0) * e0 + (s3 - 2.0 * s2 + s) * m0 + (3.0 * s2 - 2.0 * s3) * e1 + (s3 - s2) * m1
    };
    // p'(s) = a s^2 + b s + c
    let a = 6.0 * (e0 - e1) + 3.0 * (m0 + m1);
    let b = 6.0 * (e1 - e0) - 4.0 * m0 - 2.0 * m1;
    let c = m0;
    let mut crit = Vec::with_capacity(2);
    if a == 0.0 {
        if b != 0.0 {
            crit.push(-c / b);
        }
    } else {
        let disc = b * b - 4.0 * a * c;
        if disc >= 0.0 {
            let q = -0.5 * (b + b.signum() * disc.sqrt());
            crit.push(q / a);
            if q != 0.0 {
                crit.push(c / q);
            }
        }
    }
    crit.into_iter()
        .filter(|s| *s > 0.0 && *s < 1.0)
        .any(|s| p(s) == 0.0 || (p(s) > 0.0) != (e0 > 0.0))
}

/// `true` for samples within `width` steps of an interval where any channel
/// of `e` crosses zero. Crossings between samples are found from the Hermite
/// interpolant built with the rates `edot`.
pub fn sign_switch_mask(channels: &[(Vec<f64>, Vec<f64>)], dt: f64, width: usize) -> Vec<bool> {
    let len = channels.iter().map(|c| c.0.len()).max().unwrap_or(0);
    let mut mask = vec![false; len];
    for (e, ed) in channels {
        for k in 1..e.len().min(ed.len()) {
            if hermite_crosses_zero(e[k - 1], e[k], ed[k - 1], ed[k], dt) {
                let lo = (k - 1).saturating_sub(width);
                let hi = (k + width).min(len - 1);
                mask[lo..=hi].iter_mut().for_each(|b| *b = true);
            }
        }
    }
    mask
}

/// `(e_n,i, e_n,i')` series per channel.
pub fn en_channels(signals: &[ProofSignals]) -> Vec<(Vec<f64>, Vec<f64>)> {
    let m = signals.first().map_or(0, |s| s.r.len());
    (0..m)
        .map(|i| {
            (
                signals.iter().map(|s| s.en()[i]).collect(),
                signals.iter().map(|s| s.en_dot[i]).collect(),
            )
        })
        .collect()
}

/// Same as [`en_channels`] from a raw log, using `e_n' = r - alpha e_n`.
pub fn log_en_channels(log: &TrajectoryLog, alpha: &DVector<f64>) -> Vec<(Vec<f64>, Vec<f64>)> {
    (0..log.m)
        .map(|i| {
            (
                log.en_series(i),
                log.samples.iter().map(|s| s.r[i] - alpha[i] * s.en()[i]).collect(),
            )
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateConsistency {
    /// Interior samples outside the switch mask.
    pub checked: usize,
    /// Of those, samples meeting the relative tolerance.
    pub within: usize,
    pub worst: f64,
}

impl RateConsistency {
    pub fn fraction(&self) -> f64 {
        if self.checked == 0 {
            0.0
        } else {
            self.within as f64 / self.checked as f64
        }
    }
}

/// Central-differenced `tau` against `D K r + D C Sgn(e_n)` at samples more
/// than `width` steps from any `e_n` crossing.
pub fn tau_rate_consistency(log: &TrajectoryLog, gains: &GainSet, width: usize, rtol: f64) -> RateConsistency {
    let mask = sign_switch_mask(&log_en_channels(log, &gains.alpha), log.dt, width);
    let mut out = RateConsistency {
        checked: 0,
        within: 0,
        worst: 0.0,
    };
    for k in 1..log.samples.len().saturating_sub(1) {
        if mask[k] {
            continue;
        }
        let s = &log.samples[k];
        let fd = (&log.samples[k + 1].tau - &log.samples[k - 1].tau) / (2.0 * log.dt);
        let law = gains
            .d
            .component_mul(&(gains.k().component_mul(&s.r) + gains.c.component_mul(&sgn(s.en()))));
        let rel = (&fd - &law).norm() / law.norm();
        out.checked += 1;
        if rel <= rtol {
            out.within += 1;
        }
        out.worst = out.worst.max(rel);
    }
    out
}

/// Integer `(gamma1, gamma2)` from a grid search over `0..=10` on the `e_n`
/// channels of a run.
pub fn estimate_gammas(signals: &[ProofSignals], dt: f64) -> Result<Option<(f64, f64)>> {
    search_gammas(&en_channels(signals), dt, 10)
}

/// Outcome of raising `C` until it satisfies the gain conditions computed
/// from its own closed-loop run.
#[derive(Debug, Clone)]
pub struct Calibration {
    pub gains: GainSet,
    pub bounds: BoundEstimates,
    pub minimal_c: DVector<f64>,
    pub log: TrajectoryLog,
    pub signals: Vec<ProofSignals>,
    pub iterations: usize,
}

/// Runs the scenario, estimates `zeta`s on the log grid and the gammas from
/// the run, and lifts `C` to `minimal_c` until it no longer has to move.
/// `C` is never lowered.
pub fn calibrate_c(scenario: &Scenario, safety: f64, max_iter: usize) -> Result<Calibration> {
    let plant = scenario.plant.as_ref();
    let reference = scenario.reference.as_ref();
    let mut gains = scenario.gains.clone();
    for it in 1..=max_iter {
        let run = Scenario {
            gains: gains.clone(),
            ..scenario.clone()
        };
        let log = run_scenario(&run)?;
        let ctx = ProofContext::new(plant, reference, &gains)?;
        let signals = ctx.along(&log.samples)?;
        let mut bounds = ctx.estimate_bounds(scenario.horizon, log.dt, safety)?;
        let (g1, g2) = estimate_gammas(&signals, log.dt)?
            .ok_or_else(|| Error::Numerical("no feasible (gamma1, gamma2) on the grid".into()))?;
        bounds.gamma1 = g1;
        bounds.gamma2 = g2;
        let c_min = minimal_c(&bounds, &gains.alpha)?;
        if validate_c(&gains.c, &c_min).pass {
            return Ok(Calibration {
                gains,
                bounds,
                minimal_c: c_min,
                log,
                signals,
                iterations: it,
            });
        }
        gains = gains.with_c(gains.c.zip_map(&c_min, f64::max))?;
    }
    Err(Error::Numerical(format!("C did not settle within {max_iter} runs")))
}
