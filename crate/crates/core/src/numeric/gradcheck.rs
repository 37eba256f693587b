//! Central finite-difference validation of tape gradients.

use crate::error::{Error, Result};
use crate::numeric::{DenseMatrix, Tape, Var};

/// Outcome of [`finite_diff_check`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    /// Entries compared.
    pub checked: usize,
    /// Entries skipped because `p ± ε` crosses a relu kink.
    pub skipped_kinks: usize,
    /// `(parameter, flat entry)` of the worst relative discrepancy.
    pub worst: Option<(usize, usize)>,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.checked > 0 && self.max_rel_error < self.tolerance
    }
}

/// Denominator floor for relative errors. Entries whose analytic and numeric
/// gradients are both below this magnitude are compared in absolute terms.
pub const REL_ERROR_FLOOR: f64 = 1e-7;

/// Compares tape gradients against central differences
/// `(f(p + ε) − f(p − ε)) / 2ε` for every entry of every parameter.
///
/// `f` records a scalar loss on a fresh tape given parameter handles (one
/// per matrix in `params`, in order). Entries whose perturbation changes
/// the relu sign pattern of the tape are excluded and counted in
/// [`GradCheckReport::skipped_kinks`].
pub fn finite_diff_check<'g, F>(
    f: F,
    params: &[DenseMatrix],
    epsilon: f64,
    tolerance: f64,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<'g>, &[Var]) -> Result<Var>,
{
    if !(epsilon > 0.0) {
        return Err(Error::InvalidArgument("epsilon must be positive".into()));
    }

    let eval = |ps: &[DenseMatrix], with_grad: bool| -> Result<(f64, Vec<bool>, Option<Vec<DenseMatrix>>)> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = ps.iter().map(|p| tape.param(p.clone())).collect();
        let loss = f(&mut tape, &vars)?;
        let value = tape.value(loss);
        if value.shape() != (1, 1) {
            return Err(Error::dims("finite_diff_check", "1x1 loss", format!("{:?}", value.shape())));
        }
        let grads = if with_grad {
            Some(tape.backward(loss)?.into_vec())
        } else {
            None
        };
        Ok((value.get(0, 0), tape.relu_pattern(), grads))
    };

    let (_, base_pattern, analytic) = eval(params, true)?;
    let analytic = analytic.expect("base evaluation returns gradients");

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        max_abs_error: 0.0,
        checked: 0,
        skipped_kinks: 0,
        worst: None,
        tolerance,
    };
    let mut work: Vec<DenseMatrix> = params.to_vec();
    for (pi, param) in params.iter().enumerate() {
        for k in 0..param.len() {
            let orig = param.data()[k];
            work[pi].data_mut()[k] = orig + epsilon;
            let (plus, plus_pattern, _) = eval(&work, false)?;
            work[pi].data_mut()[k] = orig - epsilon;
            let (minus, minus_pattern, _) = eval(&work, false)?;
            work[pi].data_mut()[k] = orig;

            if plus_pattern != base_pattern || minus_pattern != base_pattern {
                report.skipped_kinks += 1;
                continue;
            }
            let numeric = (plus - minus) / (2.0 * epsilon);
            let exact = analytic[pi].data()[k];
            let abs = (numeric - exact).abs();
            let rel = abs / exact.abs().max(numeric.abs()).max(REL_ERROR_FLOOR);
            report.checked += 1;
            report.max_abs_error = report.max_abs_error.max(abs);
            if rel > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(rel);
                report.worst = Some((pi, k));
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_loss_is_exact() {
        let params = vec![
            DenseMatrix::from_rows(&[&[0.3, -1.2], &[0.7, 2.0]]),
            DenseMatrix::from_rows(&[&[1.5], &[-0.25]]),
        ];
        let report = finite_diff_check(
            |tape, vars| {
                let y = tape.matmul(vars[0], vars[1])?;
                let target = tape.constant(DenseMatrix::from_rows(&[&[0.5], &[1.0]]));
                let r = tape.sub(y, target)?;
                Ok(tape.square_mean(r))
            },
            &params,
            1e-5,
            1e-6,
        )
        .unwrap();
        assert!(report.passed(), "{report:?}");
        assert_eq!(report.checked, 6);
    }

    #[test]
    fn constant_loss_has_zero_gradients() {
        let params = vec![DenseMatrix::from_rows(&[&[1.0, 2.0]])];
        let report = finite_diff_check(
            |tape, _| Ok(tape.constant(DenseMatrix::from_rows(&[&[4.0]]))),
            &params,
            1e-5,
            1e-6,
        )
        .unwrap();
        assert_eq!(report.max_abs_error, 0.0);
        assert!(report.passed());
    }

    #[test]
    fn kink_crossings_are_skipped() {
        // relu input sits exactly at 0 for the first entry
        let params = vec![DenseMatrix::from_rows(&[&[0.0, 1.0]])];
        let report = finite_diff_check(
            |tape, vars| {
                let r = tape.relu(vars[0]);
                Ok(tape.square_mean(r))
            },
            &params,
            1e-5,
            1e-6,
        )
        .unwrap();
        assert_eq!(report.skipped_kinks, 1);
        assert_eq!(report.checked, 1);
        assert!(report.passed());
    }

    #[test]
    fn rejects_non_positive_epsilon() {
        let params = vec![DenseMatrix::zeros(1, 1)];
        let res = finite_diff_check(|tape, vars| Ok(tape.square_mean(vars[0])), &params, 0.0, 1e-6);
        assert!(res.is_err());
    }
}
