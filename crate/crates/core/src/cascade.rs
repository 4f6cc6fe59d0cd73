//! Tracking-error cascade.
//!
//! The auxiliary errors are built from the output error `e1 = x_r - x` by
//!
//! ```text
//! e2 = e1' + e1
//! ei = e(i-1)' + e(i-1) + e(i-2)      i = 3..n
//! ```
//!
//! which expands to `ei = sum_j a[i][j] * e1^(j)` with integer coefficients
//! obeying `a[i][j] = a[i-1][j-1] + a[i-1][j] + a[i-2][j]`.

use nalgebra::DVector;

use crate::error::{Error, Result};

/// Lower-triangular integer table `a[i][j]`, `1 <= i <= n`, `0 <= j <= i-1`.
///
/// Row `i` (1-based) is stored at index `i - 1` and has exactly `i` entries.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CascadeCoefficients {
    rows: Vec<Vec<u128>>,
}

impl CascadeCoefficients {
    pub fn order(&self) -> usize {
        self.rows.len()
    }

    /// Row `i` (1-based), i.e. the coefficients expressing `e_i` in terms of
    /// `e1, e1', ..., e1^(i-1)`.
    pub fn row(&self, i: usize) -> &[u128] {
        &self.rows[i - 1]
    }

    /// `a[i][j]`, zero outside the triangle.
    pub fn get(&self, i: usize, j: usize) -> u128 {
        if i == 0 || i > self.rows.len() || j >= i {
            0
        } else {
            self.rows[i - 1][j]
        }
    }

    /// Last row as floating point, the only one the control path needs.
    pub fn last_row_f64(&self) -> Vec<f64> {
        self.rows
            .last()
            .map(|r| r.iter().map(|&a| a as f64).collect())
            .unwrap_or_default()
    }
}

pub fn cascade_coefficients(n: usize) -> Result<CascadeCoefficients> {
    if n == 0 {
        return Err(Error::invalid("n", "cascade order must be at least 1"));
    }
    let mut rows: Vec<Vec<u128>> = Vec::with_capacity(n);
    for i in 1..=n {
        let mut row = vec![0u128; i];
        if i == 1 {
            row[0] = 1;
        } else {
            for (j, slot) in row.iter_mut().enumerate() {
                let prev = &rows[i - 2];
                let up_left = if j >= 1 { prev.get(j - 1).copied() } else { None };
                let up = prev.get(j).copied();
                let up2 = if i >= 3 { rows[i - 3].get(j).copied() } else { None };
                let sum = [up_left, up, up2]
                    .into_iter()
                    .flatten()
                    .try_fold(0u128, |acc, v| acc.checked_add(v));
                *slot = sum.ok_or_else(|| Error::invalid("n", format!("coefficient a[{i}][{j}] overflows u128")))?;
            }
        }
        rows.push(row);
    }
    Ok(CascadeCoefficients { rows })
}

fn check_lists(x_derivs: &[DVector<f64>], xr_derivs: &[DVector<f64>], n: usize) -> Result<usize> {
    if x_derivs.len() != n {
        return Err(Error::dims("state derivative list", n, x_derivs.len()));
    }
    if xr_derivs.len() < n {
        return Err(Error::dims("reference derivative list", n, xr_derivs.len()));
    }
    let m = x_derivs.first().map_or(0, |v| v.len());
    for v in x_derivs.iter().chain(xr_derivs.iter().take(n)) {
        if v.len() != m {
            return Err(Error::dims("derivative vector", m, v.len()));
        }
    }
    Ok(m)
}

/// `sum_j row[j] * derivs[j]`.
pub fn combine(row: &[u128], derivs: &[DVector<f64>]) -> DVector<f64> {
    let m = derivs.first().map_or(0, |v| v.len());
    let mut out = DVector::zeros(m);
    for (a, d) in row.iter().zip(derivs) {
        out.axpy(*a as f64, d, 1.0);
    }
    out
}

/// Builds `e1, ..., en` from `(x, x', ..., x^(n-1))` and the matching
/// reference derivatives. Extra reference derivatives beyond order `n-1` are
/// ignored.
pub fn compute_errors(
    x_derivs: &[DVector<f64>],
    xr_derivs: &[DVector<f64>],
    coeffs: &CascadeCoefficients,
) -> Result<Vec<DVector<f64>>> {
    let n = coeffs.order();
    check_lists(x_derivs, xr_derivs, n)?;
    let e1_derivs: Vec<DVector<f64>> = xr_derivs.iter().zip(x_derivs).map(|(xr, x)| xr - x).collect();
    Ok((1..=n).map(|i| combine(coeffs.row(i), &e1_derivs)).collect())
}

/// Time derivative of `e_n` given `e1, e1', ..., e1^(n)` (n + 1 entries).
pub fn last_error_rate(e1_derivs: &[DVector<f64>], coeffs: &CascadeCoefficients) -> Result<DVector<f64>> {
    let n = coeffs.order();
    if e1_derivs.len() != n + 1 {
        return Err(Error::dims("e1 derivative list", n + 1, e1_derivs.len()));
    }
    Ok(combine(coeffs.row(n), &e1_derivs[1..]))
}

/// `r = e_n' + alpha * e_n` with `alpha` given by its diagonal.
pub fn filtered_error(e_n: &DVector<f64>, e_n_dot: &DVector<f64>, alpha: &DVector<f64>) -> Result<DVector<f64>> {
    if let Some(bad) = alpha.iter().find(|a| !(**a > 0.0)) {
        return Err(Error::invalid("alpha", format!("diagonal entry {bad} is not positive")));
    }
    if e_n.len() != alpha.len() {
        return Err(Error::dims("filtered_error e_n", alpha.len(), e_n.len()));
    }
    if e_n_dot.len() != alpha.len() {
        return Err(Error::dims("filtered_error e_n_dot", alpha.len(), e_n_dot.len()));
    }
    Ok(e_n_dot + alpha.component_mul(e_n))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dvector;
    use proptest::prelude::*;

    /// Integer polynomial in t, coefficient k multiplies t^k.
    #[derive(Clone, Debug, PartialEq)]
    struct Poly(Vec<i128>);

    impl Poly {
        fn monomial(k: usize) -> Self {
            let mut c = vec![0; k + 1];
            c[k] = 1;
            Poly(c)
        }
        fn zero() -> Self {
            Poly(vec![0])
        }
        fn deriv(&self) -> Self {
            if self.0.len() <= 1 {
                return Poly::zero();
            }
            Poly(self.0.iter().enumerate().skip(1).map(|(k, c)| c * k as i128).collect())
        }
        fn add(&self, other: &Poly) -> Self {
            let len = self.0.len().max(other.0.len());
            Poly(
                (0..len)
                    .map(|k| self.0.get(k).unwrap_or(&0) + other.0.get(k).unwrap_or(&0))
                    .collect(),
            )
        }
        fn at_zero(&self) -> i128 {
            self.0[0]
        }
    }

    /// Oracle: apply the literal recursive definitions to e1(t) = t^k and read
    /// e_i(0) = a[i][k] * k!.
    fn oracle_table(n: usize) -> Vec<Vec<i128>> {
        let mut table = vec![vec![0i128; n]; n];
        for k in 0..n {
            let mut es: Vec<Poly> = vec![Poly::monomial(k)];
            for i in 2..=n {
                let prev = &es[i - 2];
                let mut next = prev.deriv().add(prev);
                if i >= 3 {
                    next = next.add(&es[i - 3]);
                }
                es.push(next);
            }
            let fact: i128 = (1..=k as i128).product();
            for (i, e) in es.iter().enumerate() {
                let v = e.at_zero();
                assert_eq!(v % fact, 0);
                table[i][k] = v / fact;
            }
        }
        table
    }

    #[test]
    fn rows_match_hand_expansion() {
        let c = cascade_coefficients(3).unwrap();
        assert_eq!(c.row(1), &[1]);
        assert_eq!(c.row(2), &[1, 1]);
        assert_eq!(c.row(3), &[2, 2, 1]);
    }

    #[test]
    fn leading_coefficient_is_one() {
        let c = cascade_coefficients(10).unwrap();
        assert_eq!(c.get(10, 9), 1);
    }

    #[test]
    fn zero_order_rejected() {
        assert!(matches!(cascade_coefficients(0), Err(Error::InvalidParameter { .. })));
    }

    #[test]
    fn table_matches_polynomial_oracle() {
        for n in 1..=12 {
            let c = cascade_coefficients(n).unwrap();
            let oracle = oracle_table(n);
            for i in 1..=n {
                assert_eq!(c.row(i).len(), i);
                for j in 0..n {
                    assert_eq!(c.get(i, j) as i128, oracle[i - 1][j], "a[{i}][{j}] for n = {n}");
                    if j < i {
                        assert!(c.get(i, j) > 0);
                    }
                }
            }
        }
    }

    #[test]
    fn equal_derivatives_give_zero_errors() {
        let c = cascade_coefficients(3).unwrap();
        let x = vec![dvector![0.3, -1.0], dvector![2.0, 4.0], dvector![-7.0, 0.5]];
        let e = compute_errors(&x, &x, &c).unwrap();
        assert!(e.iter().all(|v| v.iter().all(|&c| c == 0.0)));
    }

    #[test]
    fn scalar_first_order_error() {
        let c = cascade_coefficients(1).unwrap();
        let e = compute_errors(&[dvector![0.2]], &[dvector![1.0]], &c).unwrap();
        assert!((e[0][0] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn third_order_uses_row_three() {
        let c = cascade_coefficients(3).unwrap();
        // e1 = 1, e1' = 0, e1'' = 0 with x = 0
        let x = vec![dvector![0.0]; 3];
        let xr = vec![dvector![1.0], dvector![0.0], dvector![0.0]];
        let e = compute_errors(&x, &xr, &c).unwrap();
        assert_eq!(e[2][0], 2.0);
    }

    #[test]
    fn mismatched_lists_rejected() {
        let c = cascade_coefficients(2).unwrap();
        let err = compute_errors(&[dvector![0.0]], &[dvector![0.0], dvector![0.0]], &c);
        assert!(matches!(err, Err(Error::DimensionMismatch { .. })));
        let err = compute_errors(
            &[dvector![0.0], dvector![0.0, 1.0]],
            &[dvector![0.0], dvector![0.0]],
            &c,
        );
        assert!(matches!(err, Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn filtered_error_cases() {
        let r = filtered_error(&dvector![0.0, 0.0], &dvector![0.0, 0.0], &dvector![1.0, 5.0]).unwrap();
        assert_eq!(r, dvector![0.0, 0.0]);
        let r = filtered_error(&dvector![1.0, 1.0], &dvector![0.0, 0.0], &dvector![1.0, 5.0]).unwrap();
        assert_eq!(r, dvector![1.0, 5.0]);
        let r = filtered_error(&dvector![3.0], &dvector![-1.0], &dvector![2.0]).unwrap();
        assert_eq!(r, dvector![5.0]);
        assert!(filtered_error(&dvector![1.0], &dvector![1.0], &dvector![0.0]).is_err());
        assert!(filtered_error(&dvector![1.0], &dvector![1.0], &dvector![-2.0]).is_err());
    }

    proptest! {
        #[test]
        fn errors_are_linear_in_e1(
            n in 1usize..6,
            seed in proptest::collection::vec(-10.0f64..10.0, 6 * 2),
        ) {
            let c = cascade_coefficients(n).unwrap();
            let xr: Vec<DVector<f64>> = (0..n).map(|j| dvector![seed[2 * j], seed[2 * j + 1]]).collect();
            let zero = vec![DVector::zeros(2); n];
            let doubled: Vec<DVector<f64>> = xr.iter().map(|v| v * 2.0).collect();
            let e = compute_errors(&zero, &xr, &c).unwrap();
            let e2 = compute_errors(&zero, &doubled, &c).unwrap();
            for (a, b) in e.iter().zip(&e2) {
                // scaling by two is exact in binary floating point
                prop_assert_eq!(a * 2.0, b.clone());
            }
        }
    }
}
