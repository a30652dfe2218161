//! Matrix-free conjugate gradients for symmetric positive-definite systems.

use crate::error::{GensartError, Result};

pub struct CgOutcome {
    pub x: Vec<f64>,
    pub iterations: usize,
    pub rel_residual: f64,
}

/// Solve A x = b by CG, with `apply` evaluating the SPD operator A.
/// Stops at ‖r‖/‖b‖ ≤ tol; errors out with diagnostics if `max_iters` is
/// exhausted without reaching the tolerance.
pub fn conjugate_gradients(
    apply: impl Fn(&[f64]) -> Vec<f64>,
    b: &[f64],
    tol: f64,
    max_iters: usize,
) -> Result<CgOutcome> {
    let n = b.len();
    let bnorm = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if bnorm == 0.0 {
        return Ok(CgOutcome {
            x: vec![0.0; n],
            iterations: 0,
            rel_residual: 0.0,
        });
    }
    let mut x = vec![0.0; n];
    let mut r = b.to_vec();
    let mut p = r.clone();
    let mut rr: f64 = r.iter().map(|v| v * v).sum();
    for it in 0..max_iters {
        if rr.sqrt() <= tol * bnorm {
            return Ok(CgOutcome {
                x,
                iterations: it,
                rel_residual: rr.sqrt() / bnorm,
            });
        }
        let ap = apply(&p);
        let pap: f64 = p.iter().zip(&ap).map(|(a, b)| a * b).sum();
        if !(pap > 0.0) {
            return Err(GensartError::Numerical(format!(
                "CG operator not positive definite (p·Ap = {pap:.3e} at iteration {it})"
            )));
        }
        let alpha = rr / pap;
        for k in 0..n {
            x[k] += alpha * p[k];
            r[k] -= alpha * ap[k];
        }
        let rr_new: f64 = r.iter().map(|v| v * v).sum();
        let beta = rr_new / rr;
        for k in 0..n {
            p[k] = r[k] + beta * p[k];
        }
        rr = rr_new;
    }
    if rr.sqrt() <= tol * bnorm {
        return Ok(CgOutcome {
            x,
            iterations: max_iters,
            rel_residual: rr.sqrt() / bnorm,
        });
    }
    Err(GensartError::Numerical(format!(
        "CG did not converge in {max_iters} iterations (rel. residual {:.3e}, tol {tol:.1e})",
        rr.sqrt() / bnorm
    )))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_diagonal_system() {
        let d = [4.0, 2.0, 9.0, 1.5];
        let b = [1.0, -2.0, 3.0, 0.5];
        let out = conjugate_gradients(
            |x| x.iter().zip(&d).map(|(xi, di)| xi * di).collect(),
            &b,
            1e-12,
            50,
        )
        .unwrap();
        for k in 0..4 {
            assert!((out.x[k] - b[k] / d[k]).abs() < 1e-10);
        }
    }

    #[test]
    fn zero_rhs_short_circuits() {
        let out = conjugate_gradients(|x| x.to_vec(), &[0.0; 5], 1e-10, 3).unwrap();
        assert_eq!(out.iterations, 0);
        assert!(out.x.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn reports_nonconvergence() {
        // ill-conditioned 2x2 with 1 allowed iteration
        let a = [[1.0, 0.0], [0.0, 1e8]];
        let res = conjugate_gradients(
            |x| vec![a[0][0] * x[0], a[1][1] * x[1]],
            &[1.0, 1.0],
            1e-14,
            1,
        );
        assert!(res.is_err());
    }
}
