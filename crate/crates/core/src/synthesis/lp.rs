//! The initial boost-box linear program.
//!
//! In variables t_j = 1/g_j the box-sizing problem is the packing LP
//!
//! ```text
//! maximize   Σ_j t_j
//! s.t.       Σ_j |g_u,i,j| t_j ≤ b̄_u,i   for every input row i
//!            t_min ≤ t_j ≤ t_max
//! ```
//!
//! Solved exactly by vertex enumeration: a vertex activates m constraints
//! out of the packing rows and bound rows. Input dimensions are small in
//! every intended use, so the enumeration is cheap and fully deterministic.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

const T_MIN: f64 = 1e-9;
const T_MAX: f64 = 1e9;

/// Maximizes Σ t subject to `coeff · t ≤ rhs` (entrywise) and box bounds on
/// t. `coeff` must be entrywise nonnegative.
pub fn solve_packing_lp(coeff: &DMatrix<f64>, rhs: &DVector<f64>) -> Result<DVector<f64>> {
    let m = coeff.ncols();
    let rows = coeff.nrows();
    assert_eq!(rows, rhs.len());
    if m == 0 {
        return Ok(DVector::zeros(0));
    }

    // Constraint list in the form aᵀ t = b when active: packing rows, then
    // upper bounds, then lower bounds.
    let mut normals: Vec<DVector<f64>> = Vec::new();
    let mut offsets: Vec<f64> = Vec::new();
    for i in 0..rows {
        normals.push(coeff.row(i).transpose().clone_owned());
        offsets.push(rhs[i]);
    }
    for j in 0..m {
        let mut e = DVector::zeros(m);
        e[j] = 1.0;
        normals.push(e.clone());
        offsets.push(T_MAX);
        normals.push(-e);
        offsets.push(-T_MIN);
    }

    let total = normals.len();
    let feasible = |t: &DVector<f64>| -> bool {
        for (a, b) in normals.iter().zip(offsets.iter()) {
            if a.dot(t) > b + 1e-9 * b.abs().max(1.0) {
                return false;
            }
        }
        true
    };

    let mut best: Option<(f64, DVector<f64>)> = None;
    let mut subset = vec![0usize; m];
    enumerate_subsets(total, m, &mut subset, 0, 0, &mut |active: &[usize]| {
        let a = DMatrix::from_fn(m, m, |r, c| normals[active[r]][c]);
        let b = DVector::from_fn(m, |r, _| offsets[active[r]]);
        if let Some(t) = a.lu().solve(&b) {
            if t.iter().all(|v| v.is_finite()) && feasible(&t) {
                let obj = t.sum();
                let better = match &best {
                    None => true,
                    Some((bo, _)) => obj > bo + 1e-12,
                };
                if better {
                    best = Some((obj, t));
                }
            }
        }
    });

    match best {
        Some((_, t)) => Ok(t),
        None => Err(Error::Invalid(
            "initial box LP has no feasible vertex".into(),
        )),
    }
}

fn enumerate_subsets(
    n: usize,
    k: usize,
    buf: &mut Vec<usize>,
    depth: usize,
    start: usize,
    visit: &mut impl FnMut(&[usize]),
) {
    if depth == k {
        visit(buf);
        return;
    }
    for i in start..n {
        buf[depth] = i;
        enumerate_subsets(n, k, buf, depth + 1, i + 1, visit);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;

    #[test]
    fn single_input_symmetric_bounds() {
        // U = [−1, 1], ū = 0: both rows give t ≤ 1.
        let coeff = dmatrix![1.0; 1.0];
        let rhs = DVector::from_vec(vec![1.0, 1.0]);
        let t = solve_packing_lp(&coeff, &rhs).unwrap();
        assert!((t[0] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn single_input_shifted_equilibrium() {
        // ū = 0.5 in U = [−1, 1]: slacks (0.5, 1.5), binding row is tighter.
        let coeff = dmatrix![1.0; 1.0];
        let rhs = DVector::from_vec(vec![0.5, 1.5]);
        let t = solve_packing_lp(&coeff, &rhs).unwrap();
        assert!((t[0] - 0.5).abs() < 1e-9);
    }

    #[test]
    fn decoupled_two_inputs() {
        let coeff = dmatrix![1.0, 0.0; 0.0, 1.0; 1.0, 0.0; 0.0, 1.0];
        let rhs = DVector::from_vec(vec![1.0, 1.0, 1.0, 1.0]);
        let t = solve_packing_lp(&coeff, &rhs).unwrap();
        assert!((t[0] - 1.0).abs() < 1e-9);
        assert!((t[1] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn coupled_rows() {
        // t1 + t2 ≤ 1 together with t1 ≤ 0.4: optimum t = (0.4, 0.6).
        let coeff = dmatrix![1.0, 1.0; 1.0, 0.0];
        let rhs = DVector::from_vec(vec![1.0, 0.4]);
        let t = solve_packing_lp(&coeff, &rhs).unwrap();
        assert!((t.sum() - 1.0).abs() < 1e-9);
        assert!(t[0] <= 0.4 + 1e-9);
    }
}
