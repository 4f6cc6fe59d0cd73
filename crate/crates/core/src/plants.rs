//! True plant dynamics `x^(n) = h(X) + g(X) tau`.
//!
//! The simulator sees everything here; the controller only ever receives the
//! sign matrix `D`.

use nalgebra::{DMatrix, DVector, Matrix2, Vector2};

use crate::error::{Error, Result};
use crate::sdu::{leading_minors, sign_matrix};

pub trait PlantModel: Send + Sync {
    /// Number of inputs and outputs, `m`.
    fn inputs(&self) -> usize;

    /// Differential order `n`.
    fn order(&self) -> usize;

    /// Drift `h(X)`, `X = [x, x', ..., x^(n-1)]`.
    fn drift(&self, state: &DVector<f64>) -> DVector<f64>;

    /// Input gain `g(X)`.
    fn input_gain(&self, state: &DVector<f64>) -> DMatrix<f64>;

    /// Diagonal of the sign matrix shared with the controller.
    fn sign_matrix(&self) -> DVector<f64>;

    fn state_len(&self) -> usize {
        self.inputs() * self.order()
    }

    /// `h(X) + g(X) tau`.
    fn highest_derivative(&self, state: &DVector<f64>, tau: &DVector<f64>) -> DVector<f64> {
        self.drift(state) + self.input_gain(state) * tau
    }

    /// Checks that `g(X)` has non-zero leading minors with the advertised sign
    /// pattern.
    fn check_input_gain(&self, state: &DVector<f64>) -> Result<()> {
        let g = self.input_gain(state);
        let found = sign_matrix(&g)?;
        let expected = self.sign_matrix();
        if found != expected {
            return Err(Error::SignMismatch {
                expected: expected.as_slice().to_vec(),
                found: found.as_slice().to_vec(),
            });
        }
        debug_assert!(leading_minors(&g).iter().all(|d| *d != 0.0));
        Ok(())
    }
}

/// Which expression is used for the coupling coefficient `h(q2)` of the arm.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CoriolisVariant {
    /// `(a3 - a4) sin q2`, as printed for the benchmark.
    #[default]
    Printed,
    /// `a3 sin q2 - a4 cos q2`, the classical two-link coupling.
    Corrected,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwoLinkParams {
    pub a1: f64,
    pub a2: f64,
    pub a3: f64,
    pub a4: f64,
    pub coriolis: CoriolisVariant,
}

impl Default for TwoLinkParams {
    fn default() -> Self {
        Self {
            a1: 4.42,
            a2: 0.97,
            a3: 1.04,
            a4: 0.6,
            coriolis: CoriolisVariant::Printed,
        }
    }
}

impl TwoLinkParams {
    /// Inertia matrix `H(q2)`.
    pub fn inertia(&self, q2: f64) -> Matrix2<f64> {
        let (s, c) = q2.sin_cos();
        let h11 = self.a1 + 2.0 * self.a3 * c + 2.0 * self.a4 * s;
        let h12 = self.a2 + self.a3 * c + self.a4 * s;
        Matrix2::new(h11, h12, h12, self.a2)
    }

    /// Scalar coupling coefficient `h(q2)`.
    pub fn coupling(&self, q2: f64) -> f64 {
        match self.coriolis {
            CoriolisVariant::Printed => self.a3 * q2.sin() - self.a4 * q2.sin(),
            CoriolisVariant::Corrected => self.a3 * q2.sin() - self.a4 * q2.cos(),
        }
    }

    /// Velocity coupling matrix `V(q, q')`.
    pub fn velocity_matrix(&self, q2: f64, qd: &Vector2<f64>) -> Matrix2<f64> {
        let h = self.coupling(q2);
        Matrix2::new(-h * qd[1], -h * (qd[0] + qd[1]), -h * qd[0], 0.0)
    }

    /// `det H`, which also scales the input channel.
    pub fn beta_bar(&self, q2: f64) -> f64 {
        let h = self.inertia(q2);
        h[(0, 0)] * h[(1, 1)] - h[(0, 1)] * h[(0, 1)]
    }
}

fn adjugate(h: &Matrix2<f64>) -> Matrix2<f64> {
    Matrix2::new(h[(1, 1)], -h[(0, 1)], -h[(1, 0)], h[(0, 0)])
}

/// Joint accelerations from `H q'' = -V q' + beta_bar [[1,1],[0,1]] tau`.
pub fn two_link_accel(
    params: &TwoLinkParams,
    q: &Vector2<f64>,
    qd: &Vector2<f64>,
    tau: &Vector2<f64>,
) -> Result<Vector2<f64>> {
    let h = params.inertia(q[1]);
    let beta = params.beta_bar(q[1]);
    let u0 = Matrix2::new(1.0, 1.0, 0.0, 1.0);
    let rhs = -params.velocity_matrix(q[1], qd) * qd + u0 * tau * beta;
    h.lu()
        .solve(&rhs)
        .filter(|v| v.iter().all(|x| x.is_finite()))
        .ok_or_else(|| Error::Numerical(format!("inertia matrix singular at q2 = {}", q[1])))
}

/// Two-link arm with coupled inputs, state `[q1, q2, q1', q2']` in radians.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TwoLinkArm {
    pub params: TwoLinkParams,
}

impl TwoLinkArm {
    pub fn new(params: TwoLinkParams) -> Self {
        Self { params }
    }
}

impl PlantModel for TwoLinkArm {
    fn inputs(&self) -> usize {
        2
    }

    fn order(&self) -> usize {
        2
    }

    fn drift(&self, state: &DVector<f64>) -> DVector<f64> {
        let q2 = state[1];
        let qd = Vector2::new(state[2], state[3]);
        let h = self.params.inertia(q2);
        let beta = self.params.beta_bar(q2);
        let a = adjugate(&h) * (-self.params.velocity_matrix(q2, &qd) * qd) / beta;
        DVector::from_column_slice(a.as_slice())
    }

    fn input_gain(&self, state: &DVector<f64>) -> DMatrix<f64> {
        // beta_bar * H^-1 is exactly adj(H)
        let adj = adjugate(&self.params.inertia(state[1]));
        let g = adj * Matrix2::new(1.0, 1.0, 0.0, 1.0);
        DMatrix::from_column_slice(2, 2, g.as_slice())
    }

    fn sign_matrix(&self) -> DVector<f64> {
        DVector::from_element(2, 1.0)
    }
}

pub fn two_link_as_plant() -> TwoLinkArm {
    TwoLinkArm::default()
}

/// `x' = x^2 + (2 + sin x) tau`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ScalarToy;

impl PlantModel for ScalarToy {
    fn inputs(&self) -> usize {
        1
    }

    fn order(&self) -> usize {
        1
    }

    fn drift(&self, state: &DVector<f64>) -> DVector<f64> {
        DVector::from_element(1, state[0] * state[0])
    }

    fn input_gain(&self, state: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, 2.0 + state[0].sin())
    }

    fn sign_matrix(&self) -> DVector<f64> {
        DVector::from_element(1, 1.0)
    }
}

pub fn scalar_toy_plant() -> ScalarToy {
    ScalarToy
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sdu::sdu_decompose;
    use nalgebra::dvector;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn arm_at_rest_has_no_acceleration() {
        let p = TwoLinkParams::default();
        let a = two_link_accel(&p, &Vector2::zeros(), &Vector2::zeros(), &Vector2::zeros()).unwrap();
        assert_eq!(a, Vector2::zeros());
    }

    #[test]
    fn inertia_at_zero_elbow() {
        let p = TwoLinkParams::default();
        let h = p.inertia(0.0);
        assert!((h[(0, 0)] - 6.50).abs() < 1e-12);
        assert!((h[(0, 1)] - 2.01).abs() < 1e-12);
        assert!((h[(1, 1)] - 0.97).abs() < 1e-12);
        assert!((p.beta_bar(0.0) - 2.2649).abs() < 1e-12);
    }

    #[test]
    fn printed_coupling_collapses() {
        let p = TwoLinkParams::default();
        let q2 = 0.7;
        assert!((p.coupling(q2) - (1.04 - 0.6) * q2.sin()).abs() < 1e-15);
        let c = TwoLinkParams {
            coriolis: CoriolisVariant::Corrected,
            ..p
        };
        assert!((c.coupling(q2) - (1.04 * q2.sin() - 0.6 * q2.cos())).abs() < 1e-15);
    }

    #[test]
    fn plant_form_matches_accel() {
        let arm = two_link_as_plant();
        let x = dvector![0.3, -1.1, 0.8, -0.4];
        let tau = dvector![2.0, -0.5];
        let via_plant = arm.highest_derivative(&x, &tau);
        let direct = two_link_accel(
            &arm.params,
            &Vector2::new(x[0], x[1]),
            &Vector2::new(x[2], x[3]),
            &Vector2::new(tau[0], tau[1]),
        )
        .unwrap();
        assert!((via_plant[0] - direct[0]).abs() < 1e-12);
        assert!((via_plant[1] - direct[1]).abs() < 1e-12);
    }

    #[test]
    fn arm_input_gain_at_origin() {
        let arm = two_link_as_plant();
        let x = DVector::zeros(4);
        assert_eq!(sign_matrix(&arm.input_gain(&x)).unwrap(), dvector![1.0, 1.0]);
        let f = sdu_decompose(&arm.input_gain(&x)).unwrap();
        assert_eq!(f.d, dvector![1.0, 1.0]);
        assert!((f.u[(0, 1)] - 1.0).abs() < 1e-12);
        assert!((f.reconstruct() - arm.input_gain(&x)).norm() < 1e-12);
        assert_eq!(arm.drift(&x), dvector![0.0, 0.0]);
    }

    #[test]
    fn decomposition_agrees_with_plant_signs() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for variant in [CoriolisVariant::Printed, CoriolisVariant::Corrected] {
            let arm = TwoLinkArm::new(TwoLinkParams {
                coriolis: variant,
                ..Default::default()
            });
            for _ in 0..100 {
                let x = DVector::from_fn(4, |_, _| rng.random_range(-10.0..10.0));
                let f = sdu_decompose(&arm.input_gain(&x)).unwrap();
                assert_eq!(f.d, arm.sign_matrix());
                arm.check_input_gain(&x).unwrap();
            }
        }
        let toy = scalar_toy_plant();
        for _ in 0..100 {
            let x = DVector::from_element(1, rng.random_range(-50.0..50.0));
            let f = sdu_decompose(&toy.input_gain(&x)).unwrap();
            assert_eq!(f.d, toy.sign_matrix());
        }
    }

    #[test]
    fn arm_stays_at_rest_unforced() {
        let p = TwoLinkParams::default();
        for q in [[0.1, 0.2], [-2.0, 1.3], [3.0, -0.7]] {
            let a = two_link_accel(&p, &Vector2::new(q[0], q[1]), &Vector2::zeros(), &Vector2::zeros()).unwrap();
            assert_eq!(a, Vector2::zeros());
        }
    }

    #[test]
    fn toy_definitions() {
        let toy = scalar_toy_plant();
        assert_eq!(toy.drift(&dvector![2.0]), dvector![4.0]);
        assert_eq!(toy.input_gain(&dvector![0.0])[(0, 0)], 2.0);
        assert_eq!(toy.sign_matrix(), dvector![1.0]);
        for k in -100..100 {
            let g = toy.input_gain(&dvector![k as f64 * 0.37])[(0, 0)];
            assert!((1.0..=3.0).contains(&g));
        }
    }
}
