//! Desired trajectories with closed-form time derivatives.

use std::f64::consts::FRAC_PI_2;

use nalgebra::DVector;

pub trait ReferenceTrajectory: Send + Sync {
    fn dim(&self) -> usize;

    /// Highest derivative order available from [`Self::derivatives`].
    fn max_order(&self) -> usize;

    /// `[x_r(t), x_r'(t), ..., x_r^(order)(t)]`.
    ///
    /// Panics if `order > self.max_order()`.
    fn derivatives(&self, t: f64, order: usize) -> Vec<DVector<f64>>;

    fn position(&self, t: f64) -> DVector<f64> {
        self.derivatives(t, 0).swap_remove(0)
    }
}

/// `(1 - exp(-rate t^3)) * amplitude * sin t`, derivatives through order 3.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvelopedSine {
    /// Per-channel amplitude, radians.
    pub amplitude: DVector<f64>,
    pub rate: f64,
}

/// Desired joint trajectory of the arm benchmark: amplitudes 30 and 45 degrees.
pub fn benchmark_reference() -> EnvelopedSine {
    EnvelopedSine {
        amplitude: DVector::from_vec(vec![30f64.to_radians(), 45f64.to_radians()]),
        rate: 0.3,
    }
}

impl EnvelopedSine {
    /// Envelope `E = 1 - exp(-c t^3)` and its first three derivatives.
    fn envelope(&self, t: f64) -> [f64; 4] {
        let c = self.rate;
        let w = (-c * t.powi(3)).exp();
        let e0 = -(-c * t.powi(3)).exp_m1();
        let e1 = 3.0 * c * t * t * w;
        let e2 = (6.0 * c * t - 9.0 * c * c * t.powi(4)) * w;
        let e3 = (6.0 * c - 54.0 * c * c * t.powi(3) + 27.0 * c.powi(3) * t.powi(6)) * w;
        [e0, e1, e2, e3]
    }
}

impl ReferenceTrajectory for EnvelopedSine {
    fn dim(&self) -> usize {
        self.amplitude.len()
    }

    fn max_order(&self) -> usize {
        3
    }

    fn derivatives(&self, t: f64, order: usize) -> Vec<DVector<f64>> {
        assert!(order <= 3, "enveloped sine provides derivatives through order 3");
        let [e0, e1, e2, e3] = self.envelope(t);
        let (s, c) = t.sin_cos();
        let scalars = [
            e0 * s,
            e1 * s + e0 * c,
            e2 * s + 2.0 * e1 * c - e0 * s,
            e3 * s + 3.0 * e2 * c - 3.0 * e1 * s - e0 * c,
        ];
        scalars[..=order].iter().map(|k| &self.amplitude * *k).collect()
    }
}

/// `offset + amplitude * sin(omega t + phase)`, any derivative order.
#[derive(Debug, Clone, PartialEq)]
pub struct Sinusoid {
    pub amplitude: DVector<f64>,
    pub offset: DVector<f64>,
    pub omega: f64,
    pub phase: f64,
}

impl ReferenceTrajectory for Sinusoid {
    fn dim(&self) -> usize {
        self.amplitude.len()
    }

    fn max_order(&self) -> usize {
        usize::MAX
    }

    fn derivatives(&self, t: f64, order: usize) -> Vec<DVector<f64>> {
        (0..=order)
            .map(|k| {
                let arg = self.omega * t + self.phase + k as f64 * FRAC_PI_2;
                let v = &self.amplitude * (self.omega.powi(k as i32) * arg.sin());
                if k == 0 {
                    v + &self.offset
                } else {
                    v
                }
            })
            .collect()
    }
}

/// Constant set-point.
#[derive(Debug, Clone, PartialEq)]
pub struct Constant(pub DVector<f64>);

impl ReferenceTrajectory for Constant {
    fn dim(&self) -> usize {
        self.0.len()
    }

    fn max_order(&self) -> usize {
        usize::MAX
    }

    fn derivatives(&self, _t: f64, order: usize) -> Vec<DVector<f64>> {
        let mut out = vec![DVector::zeros(self.0.len()); order + 1];
        out[0] = self.0.clone();
        out
    }
}

/// Scalar `x0 / (1 - x0 t)`, the unforced solution of `x' = x^2`.
///
/// Finite only for `t < 1 / x0` when `x0 > 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Riccati {
    pub x0: f64,
}

impl ReferenceTrajectory for Riccati {
    fn dim(&self) -> usize {
        1
    }

    fn max_order(&self) -> usize {
        usize::MAX
    }

    fn derivatives(&self, t: f64, order: usize) -> Vec<DVector<f64>> {
        let base = 1.0 - self.x0 * t;
        let mut fact = 1.0;
        (0..=order)
            .map(|k| {
                if k > 0 {
                    fact *= k as f64;
                }
                DVector::from_element(1, fact * self.x0.powi(k as i32 + 1) / base.powi(k as i32 + 1))
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn central_diff_check(r: &dyn ReferenceTrajectory, top: usize, times: &[f64]) {
        let h = 1e-4;
        for &t in times {
            let plus = r.derivatives(t + h, top);
            let minus = r.derivatives(t - h, top);
            let here = r.derivatives(t, top);
            for k in 0..top {
                for i in 0..r.dim() {
                    let fd = (plus[k][i] - minus[k][i]) / (2.0 * h);
                    let exact = here[k + 1][i];
                    let scale = exact.abs().max(1e-3);
                    assert!(
                        (fd - exact).abs() / scale < 1e-5,
                        "order {} channel {i} at t = {t}: fd {fd} vs {exact}",
                        k + 1
                    );
                }
            }
        }
    }

    #[test]
    fn benchmark_starts_at_rest() {
        let r = benchmark_reference();
        let d = r.derivatives(0.0, 3);
        assert_eq!(d[0].as_slice(), &[0.0, 0.0]);
        assert_eq!(d[1].as_slice(), &[0.0, 0.0]);
    }

    #[test]
    fn benchmark_envelope_saturates() {
        let r = benchmark_reference();
        let q = r.position(10.0);
        assert_eq!(q[0], 30f64.to_radians() * 10f64.sin());
        assert_eq!(q[1], 45f64.to_radians() * 10f64.sin());
    }

    #[test]
    fn derivative_consistency() {
        let times: Vec<f64> = (1..60).map(|k| k as f64 * 0.37).collect();
        central_diff_check(&benchmark_reference(), 3, &times);
        let s = Sinusoid {
            amplitude: DVector::from_vec(vec![0.2, -1.5]),
            offset: DVector::from_vec(vec![0.1, 0.0]),
            omega: 2.3,
            phase: 0.4,
        };
        central_diff_check(&s, 4, &times);
        let ric = Riccati { x0: 0.3 };
        central_diff_check(&ric, 4, &[0.1, 0.5, 1.0, 2.0]);
    }

    #[test]
    fn riccati_solves_unforced_toy() {
        let r = Riccati { x0: 0.4 };
        for t in [0.0, 0.3, 1.1] {
            let d = r.derivatives(t, 1);
            assert!((d[1][0] - d[0][0] * d[0][0]).abs() < 1e-14);
        }
    }

    #[test]
    fn constant_has_zero_rates() {
        let c = Constant(DVector::from_vec(vec![1.0, 2.0]));
        let d = c.derivatives(3.0, 2);
        assert_eq!(d[0].as_slice(), &[1.0, 2.0]);
        assert!(d[1].iter().chain(d[2].iter()).all(|&x| x == 0.0));
    }
}
