//! Semidefinite feasibility problems and a projection-based reference solver.
//!
//! A [`ConicProblem`] is a set of named decision blocks (symmetric,
//! rectangular, or diagonal) together with matrix constraints that are
//! affine in the scalar decision variables and required to be positive
//! semidefinite. Scalar inequalities are 1×1 blocks.
//!
//! The reference backend solves the feasibility problem by Douglas–Rachford
//! splitting between two sets in the product space (x, Y₁, …, Y_J):
//! the affine set {Y_j = S_j(x)} and the cone product {Y_j ⪰ τI}. The
//! affine projection is a linear least-squares solve whose Gram matrix is
//! fixed, so it is factored once per problem; the cone projection clamps
//! eigenvalues. The inset τ is lowered adaptively when progress stalls, and
//! a stall at the smallest inset is reported as infeasibility. Any backend
//! meeting the residual contract can replace this one.

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockId(usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockKind {
    /// Symmetric n×n block stored as its upper triangle.
    Symmetric,
    /// General rectangular block.
    Rectangular,
    /// Diagonal n×n block storing only the diagonal.
    Diagonal,
}

#[derive(Debug, Clone)]
struct BlockInfo {
    name: String,
    kind: BlockKind,
    rows: usize,
    cols: usize,
    first_var: usize,
}

/// One affine-in-variables PSD constraint S(x) = F₀ + Σ xᵥ Eᵥ ⪰ 0.
#[derive(Debug, Clone)]
pub struct PsdConstraint {
    pub name: String,
    pub dim: usize,
    f0: DMatrix<f64>,
    /// (variable, row, col, coefficient); both triangles are stored so the
    /// assembled matrix is symmetric by construction.
    coeffs: Vec<(usize, usize, usize, f64)>,
}

impl PsdConstraint {
    fn evaluate(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let mut s = self.f0.clone();
        for &(v, r, c, a) in &self.coeffs {
            s[(r, c)] += a * x[v];
        }
        s
    }
}

#[derive(Debug, Clone, Default)]
pub struct ConicProblem {
    blocks: Vec<BlockInfo>,
    num_vars: usize,
    pub constraints: Vec<PsdConstraint>,
}

impl ConicProblem {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_symmetric_block(&mut self, name: &str, n: usize) -> BlockId {
        self.push_block(name, BlockKind::Symmetric, n, n, n * (n + 1) / 2)
    }

    pub fn add_rect_block(&mut self, name: &str, rows: usize, cols: usize) -> BlockId {
        self.push_block(name, BlockKind::Rectangular, rows, cols, rows * cols)
    }

    pub fn add_diag_block(&mut self, name: &str, n: usize) -> BlockId {
        self.push_block(name, BlockKind::Diagonal, n, n, n)
    }

    fn push_block(
        &mut self,
        name: &str,
        kind: BlockKind,
        rows: usize,
        cols: usize,
        nvars: usize,
    ) -> BlockId {
        let id = BlockId(self.blocks.len());
        self.blocks.push(BlockInfo {
            name: name.to_string(),
            kind,
            rows,
            cols,
            first_var: self.num_vars,
        });
        self.num_vars += nvars;
        id
    }

    pub fn num_vars(&self) -> usize {
        self.num_vars
    }

    /// Scalar variable index backing entry (r, c) of a block; `None` for the
    /// structurally-zero off-diagonal entries of a diagonal block.
    fn var_of(&self, block: BlockId, r: usize, c: usize) -> Option<usize> {
        let info = &self.blocks[block.0];
        debug_assert!(r < info.rows && c < info.cols);
        match info.kind {
            BlockKind::Symmetric => {
                let (i, j) = if r <= c { (r, c) } else { (c, r) };
                // Upper-triangle row-major index.
                let idx = i * info.cols - i * (i + 1) / 2 + j;
                Some(info.first_var + idx)
            }
            BlockKind::Rectangular => Some(info.first_var + r * info.cols + c),
            BlockKind::Diagonal => (r == c).then_some(info.first_var + r),
        }
    }

    /// Extracts the value of a block from a solution vector.
    pub fn block_value(&self, block: BlockId, x: &DVector<f64>) -> DMatrix<f64> {
        let info = &self.blocks[block.0];
        DMatrix::from_fn(info.rows, info.cols, |r, c| match self.var_of(block, r, c) {
            Some(v) => x[v],
            None => 0.0,
        })
    }

    pub fn block_name(&self, block: BlockId) -> &str {
        &self.blocks[block.0].name
    }

    pub fn add_constraint(&mut self, c: PsdConstraintBuilder) {
        let mut grouped: BTreeMap<(usize, usize, usize), f64> = BTreeMap::new();
        for (v, r, cc, a) in c.coeffs {
            if a != 0.0 {
                *grouped.entry((v, r, cc)).or_insert(0.0) += a;
            }
        }
        self.constraints.push(PsdConstraint {
            name: c.name,
            dim: c.dim,
            f0: c.f0,
            coeffs: grouped
                .into_iter()
                .filter(|&(_, a)| a != 0.0)
                .map(|((v, r, cc), a)| (v, r, cc, a))
                .collect(),
        });
    }

    /// Per-constraint minimum-eigenvalue margins at a candidate solution.
    pub fn margins(&self, x: &DVector<f64>) -> Vec<(String, f64)> {
        self.constraints
            .iter()
            .map(|c| (c.name.clone(), min_eig(&c.evaluate(x))))
            .collect()
    }
}

/// Builder for one PSD constraint, assembled block-row by block-row.
pub struct PsdConstraintBuilder {
    name: String,
    dim: usize,
    f0: DMatrix<f64>,
    coeffs: Vec<(usize, usize, usize, f64)>,
}

impl PsdConstraintBuilder {
    pub fn new(name: &str, dim: usize) -> Self {
        PsdConstraintBuilder {
            name: name.to_string(),
            dim,
            f0: DMatrix::zeros(dim, dim),
            coeffs: Vec::new(),
        }
    }

    /// Places the constant matrix `m` at block offset (r0, c0); when the
    /// offsets differ, mᵀ is mirrored to (c0, r0).
    pub fn constant(&mut self, r0: usize, c0: usize, m: &DMatrix<f64>) -> &mut Self {
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                self.f0[(r0 + i, c0 + j)] += m[(i, j)];
                if r0 != c0 {
                    self.f0[(c0 + j, r0 + i)] += m[(i, j)];
                }
            }
        }
        self
    }

    /// Places sign · L · X · R (or L · Xᵀ · R) at block offset (r0, c0),
    /// mirroring the transpose to (c0, r0) when the offsets differ.
    #[allow(clippy::too_many_arguments)]
    pub fn term(
        &mut self,
        prob: &ConicProblem,
        r0: usize,
        c0: usize,
        sign: f64,
        left: &DMatrix<f64>,
        block: BlockId,
        transpose_block: bool,
        right: &DMatrix<f64>,
    ) -> &mut Self {
        let info_rows = if transpose_block {
            prob.blocks[block.0].cols
        } else {
            prob.blocks[block.0].rows
        };
        let info_cols = if transpose_block {
            prob.blocks[block.0].rows
        } else {
            prob.blocks[block.0].cols
        };
        assert_eq!(left.ncols(), info_rows, "term: left width");
        assert_eq!(right.nrows(), info_cols, "term: right height");
        for i in 0..left.nrows() {
            for j in 0..right.ncols() {
                for p in 0..info_rows {
                    let lv = left[(i, p)];
                    if lv == 0.0 {
                        continue;
                    }
                    for q in 0..info_cols {
                        let rv = right[(q, j)];
                        if rv == 0.0 {
                            continue;
                        }
                        let (br, bc) = if transpose_block { (q, p) } else { (p, q) };
                        if let Some(v) = prob.var_of(block, br, bc) {
                            let a = sign * lv * rv;
                            self.coeffs.push((v, r0 + i, c0 + j, a));
                            if r0 != c0 {
                                self.coeffs.push((v, c0 + j, r0 + i, a));
                            }
                        }
                    }
                }
            }
        }
        self
    }

    /// Shorthand for a plain block placement: sign · X at (r0, c0) with
    /// identity factors on both sides.
    pub fn var(
        &mut self,
        prob: &ConicProblem,
        r0: usize,
        c0: usize,
        sign: f64,
        block: BlockId,
    ) -> &mut Self {
        let rows = prob.blocks[block.0].rows;
        let cols = prob.blocks[block.0].cols;
        let eye_r = DMatrix::<f64>::identity(rows, rows);
        let eye_c = DMatrix::<f64>::identity(cols, cols);
        self.term(prob, r0, c0, sign, &eye_r, block, false, &eye_c)
    }
}

#[derive(Debug, Clone)]
pub struct SolverOptions {
    pub max_iter: usize,
    /// Initial strict-feasibility inset on every cone.
    pub target_margin: f64,
    /// Declare success once every margin reaches this value.
    pub exit_margin: f64,
    pub stall_window: usize,
    pub stall_tol: f64,
    pub time_budget: Option<Duration>,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            max_iter: 60_000,
            target_margin: 1e-4,
            exit_margin: 1e-9,
            stall_window: 250,
            stall_tol: 1e-9,
            time_budget: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Assignment {
    pub x: DVector<f64>,
    pub margins: Vec<(String, f64)>,
    pub iterations: usize,
}

#[derive(Debug, Clone)]
pub struct InfeasibilityReport {
    pub best_margin: f64,
    pub iterations: usize,
    pub margins: Vec<(String, f64)>,
    pub stalled: bool,
    /// Best iterate found; useful as a warm start for a relaxed problem.
    pub best_x: DVector<f64>,
}

impl InfeasibilityReport {
    pub fn describe(&self) -> String {
        let worst = self
            .margins
            .iter()
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .map(|(n, v)| format!("{n} (margin {v:.3e})"))
            .unwrap_or_else(|| "no constraints".to_string());
        format!(
            "no feasible point after {} iterations (best margin {:.3e}, worst condition {}{})",
            self.iterations,
            self.best_margin,
            worst,
            if self.stalled { ", progress stalled" } else { "" }
        )
    }
}

#[derive(Debug, Clone)]
pub enum SolveOutcome {
    Feasible(Assignment),
    Infeasible(InfeasibilityReport),
}

/// A pluggable semidefinite feasibility engine.
pub trait FeasibilityBackend {
    fn solve(
        &self,
        problem: &ConicProblem,
        warm_start: Option<&DVector<f64>>,
        options: &SolverOptions,
    ) -> Result<SolveOutcome>;
}

/// Reference backend: Douglas–Rachford alternating projections.
#[derive(Debug, Clone, Default)]
pub struct ProjectionBackend;

impl FeasibilityBackend for ProjectionBackend {
    fn solve(
        &self,
        problem: &ConicProblem,
        warm_start: Option<&DVector<f64>>,
        options: &SolverOptions,
    ) -> Result<SolveOutcome> {
        solve_projection(problem, warm_start, options)
    }
}

fn min_eig(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return f64::INFINITY;
    }
    if m.nrows() == 1 {
        return m[(0, 0)];
    }
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min)
}

/// Eigenvalue clamp onto {Y = Yᵀ : Y ⪰ tau·I}.
fn psd_clamp(m: &DMatrix<f64>, tau: f64) -> DMatrix<f64> {
    if m.nrows() == 0 {
        return m.clone();
    }
    if m.nrows() == 1 {
        return DMatrix::from_element(1, 1, m[(0, 0)].max(tau));
    }
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let clamped = DVector::from_fn(eig.eigenvalues.len(), |i, _| eig.eigenvalues[i].max(tau));
    &eig.eigenvectors * DMatrix::from_diagonal(&clamped) * eig.eigenvectors.transpose()
}

struct AffineProjector {
    /// Column scales applied to the raw variables (x_raw = x_scaled / scale).
    scales: DVector<f64>,
    chol: Cholesky<f64, Dyn>,
    /// Scaled coefficient lists per constraint.
    coeffs: Vec<Vec<(usize, usize, usize, f64)>>,
}

impl AffineProjector {
    fn build(problem: &ConicProblem) -> Result<Self> {
        let d = problem.num_vars();
        // Column equilibration over all constraint coefficients.
        let mut colsq = DVector::<f64>::zeros(d);
        for c in &problem.constraints {
            for &(v, _, _, a) in &c.coeffs {
                colsq[v] += a * a;
            }
        }
        let scales = DVector::from_fn(d, |i, _| colsq[i].sqrt().max(1e-12));
        let coeffs: Vec<Vec<(usize, usize, usize, f64)>> = problem
            .constraints
            .iter()
            .map(|c| {
                c.coeffs
                    .iter()
                    .map(|&(v, r, cc, a)| (v, r, cc, a / scales[v]))
                    .collect()
            })
            .collect();

        // Gram matrix M = I + Σ GᵀG over the scaled coefficients, grouped by
        // constraint entry.
        let mut gram = DMatrix::<f64>::identity(d, d);
        for list in &coeffs {
            let mut by_entry: BTreeMap<(usize, usize), Vec<(usize, f64)>> = BTreeMap::new();
            for &(v, r, cc, a) in list {
                by_entry.entry((r, cc)).or_default().push((v, a));
            }
            for vars in by_entry.values() {
                for &(vi, ai) in vars {
                    for &(vj, aj) in vars {
                        gram[(vi, vj)] += ai * aj;
                    }
                }
            }
        }
        let chol = Cholesky::new(gram)
            .ok_or_else(|| Error::Invalid("conic Gram matrix not positive definite".into()))?;
        Ok(AffineProjector {
            scales,
            chol,
            coeffs,
        })
    }

    /// Projects (x̂, Ŷ) onto the graph {Y_j = S_j(x)}; returns the scaled x.
    fn project(
        &self,
        problem: &ConicProblem,
        x_hat: &DVector<f64>,
        y_hat: &[DMatrix<f64>],
    ) -> DVector<f64> {
        let mut rhs = x_hat.clone();
        for (j, c) in problem.constraints.iter().enumerate() {
            let resid = &y_hat[j] - &c.f0;
            for &(v, r, cc, a) in &self.coeffs[j] {
                rhs[v] += a * resid[(r, cc)];
            }
        }
        self.chol.solve(&rhs)
    }

    /// Evaluates S_j at a scaled solution.
    fn evaluate(&self, problem: &ConicProblem, j: usize, x_scaled: &DVector<f64>) -> DMatrix<f64> {
        let c = &problem.constraints[j];
        let mut s = c.f0.clone();
        for &(v, r, cc, a) in &self.coeffs[j] {
            s[(r, cc)] += a * x_scaled[v];
        }
        s
    }

    fn unscale(&self, x_scaled: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(x_scaled.len(), |i, _| x_scaled[i] / self.scales[i])
    }
}

fn solve_projection(
    problem: &ConicProblem,
    warm_start: Option<&DVector<f64>>,
    options: &SolverOptions,
) -> Result<SolveOutcome> {
    let d = problem.num_vars();
    if problem.constraints.is_empty() {
        return Ok(SolveOutcome::Feasible(Assignment {
            x: DVector::zeros(d),
            margins: Vec::new(),
            iterations: 0,
        }));
    }
    let proj = AffineProjector::build(problem)?;
    let start = Instant::now();

    // Product-space iterate: z = (zx, zY).
    let mut zx: DVector<f64> = match warm_start {
        Some(x0) => DVector::from_fn(d, |i, _| x0[i] * proj.scales[i]),
        None => DVector::zeros(d),
    };
    let mut zy: Vec<DMatrix<f64>> = (0..problem.constraints.len())
        .map(|j| proj.evaluate(problem, j, &zx))
        .collect();

    let trace = std::env::var("RNNBOOST_SOLVER_TRACE").ok().as_deref() == Some("1");
    let mut tau = options.target_margin;
    let mut best_margin = f64::NEG_INFINITY;
    let mut best_x = proj.unscale(&zx);
    let mut since_improvement = 0usize;
    let mut iterations = 0usize;

    for iter in 0..options.max_iter {
        iterations = iter + 1;
        if trace && iter % 500 == 0 {
            eprintln!(
                "    solver iter {iter}: best margin {best_margin:.3e}, tau {tau:.1e}"
            );
        }
        // p = P_C(z): clamp the cone parts.
        let py: Vec<DMatrix<f64>> = zy.iter().map(|y| psd_clamp(y, tau)).collect();
        // r = 2p − z.
        let ry: Vec<DMatrix<f64>> = py
            .iter()
            .zip(zy.iter())
            .map(|(p, z)| p * 2.0 - z)
            .collect();
        // q = P_A(r).
        let qx = proj.project(problem, &zx, &ry);
        // z ← z + q − p  (the x component of P_C is the identity).
        let mut worst = f64::INFINITY;
        for (j, y) in zy.iter_mut().enumerate() {
            let sj = proj.evaluate(problem, j, &qx);
            worst = worst.min(min_eig(&sj));
            *y += &sj - &py[j];
        }
        zx = qx.clone();

        // Progress must beat a threshold that scales with how far from
        // feasibility we are; a slow asymptotic crawl counts as a stall.
        let improvement_floor = options.stall_tol.max(1e-4 * best_margin.abs());
        if worst > best_margin + improvement_floor {
            best_margin = worst;
            best_x = proj.unscale(&qx);
            since_improvement = 0;
        } else {
            if worst > best_margin {
                best_margin = worst;
                best_x = proj.unscale(&qx);
            }
            since_improvement += 1;
        }

        if worst >= options.exit_margin {
            let x = proj.unscale(&qx);
            let margins = problem.margins(&x);
            return Ok(SolveOutcome::Feasible(Assignment {
                x,
                margins,
                iterations,
            }));
        }

        if since_improvement >= options.stall_window {
            // The inset ladder only helps when the iterate is already close
            // to the cone; a deeply negative margin will not be rescued by
            // loosening tau.
            if tau > 1e-8 && best_margin > -1e-3 {
                tau *= 0.25;
                since_improvement = 0;
            } else {
                break;
            }
        }
        if let Some(budget) = options.time_budget {
            if start.elapsed() > budget {
                break;
            }
        }
    }

    let margins = problem.margins(&best_x);
    Ok(SolveOutcome::Infeasible(InfeasibilityReport {
        best_margin,
        iterations,
        margins,
        stalled: true,
        best_x,
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;

    #[test]
    fn trivial_band_is_feasible() {
        // I ⪯ Q ⪯ 2I for a symmetric 2×2 block.
        let mut p = ConicProblem::new();
        let q = p.add_symmetric_block("Q", 2);
        let eye = DMatrix::<f64>::identity(2, 2);

        let mut lower = PsdConstraintBuilder::new("lower", 2);
        lower.constant(0, 0, &(-&eye)).var(&p, 0, 0, 1.0, q);
        p.add_constraint(lower);

        let mut upper = PsdConstraintBuilder::new("upper", 2);
        upper.constant(0, 0, &(&eye * 2.0)).var(&p, 0, 0, -1.0, q);
        p.add_constraint(upper);

        match solve_projection(&p, None, &SolverOptions::default()).unwrap() {
            SolveOutcome::Feasible(a) => {
                for (name, m) in &a.margins {
                    assert!(*m >= -1e-7, "{name}: {m}");
                }
                let qv = p.block_value(q, &a.x);
                assert!((&qv - qv.transpose()).norm() < 1e-12);
            }
            SolveOutcome::Infeasible(r) => panic!("should be feasible: {}", r.describe()),
        }
    }

    #[test]
    fn contradictory_scalars_are_infeasible() {
        // x ≥ 1 and x ≤ 0.
        let mut p = ConicProblem::new();
        let x = p.add_symmetric_block("x", 1);

        let mut ge = PsdConstraintBuilder::new("ge", 1);
        ge.constant(0, 0, &DMatrix::from_element(1, 1, -1.0))
            .var(&p, 0, 0, 1.0, x);
        p.add_constraint(ge);

        let mut le = PsdConstraintBuilder::new("le", 1);
        le.var(&p, 0, 0, -1.0, x);
        p.add_constraint(le);

        let opts = SolverOptions {
            max_iter: 5_000,
            ..SolverOptions::default()
        };
        match solve_projection(&p, None, &opts).unwrap() {
            SolveOutcome::Feasible(a) => panic!("impossible: {:?}", a.margins),
            SolveOutcome::Infeasible(r) => assert!(r.best_margin < -1e-3, "{}", r.describe()),
        }
    }

    #[test]
    fn discrete_lyapunov_feasible_iff_stable() {
        // Q − A Q Aᵀ ⪰ 0 via the Schur block [[Q, AQ], [QAᵀ, Q]] ⪰ 0 with
        // Q ⪰ 0.1 I; feasible only when ρ(A) < 1.
        for (a, feasible) in [(0.9, true), (1.5, false)] {
            let amat = dmatrix![a];
            let mut p = ConicProblem::new();
            let q = p.add_symmetric_block("Q", 1);

            let mut lyap = PsdConstraintBuilder::new("lyap", 2);
            lyap.var(&p, 0, 0, 1.0, q)
                .var(&p, 1, 1, 1.0, q)
                .term(&p, 0, 1, 1.0, &amat, q, false, &DMatrix::identity(1, 1));
            p.add_constraint(lyap);

            let mut floor = PsdConstraintBuilder::new("floor", 1);
            floor
                .constant(0, 0, &DMatrix::from_element(1, 1, -0.1))
                .var(&p, 0, 0, 1.0, q);
            p.add_constraint(floor);

            let opts = SolverOptions {
                max_iter: 8_000,
                ..SolverOptions::default()
            };
            let out = solve_projection(&p, None, &opts).unwrap();
            match (feasible, out) {
                (true, SolveOutcome::Feasible(asg)) => {
                    for (name, m) in &asg.margins {
                        assert!(*m >= -1e-7, "{name}: {m}");
                    }
                }
                (false, SolveOutcome::Infeasible(_)) => {}
                (want, got) => panic!(
                    "a = {a}: wanted feasible={want}, got {:?}",
                    match got {
                        SolveOutcome::Feasible(_) => "feasible",
                        SolveOutcome::Infeasible(_) => "infeasible",
                    }
                ),
            }
        }
    }

    #[test]
    fn warm_start_is_accepted() {
        let mut p = ConicProblem::new();
        let x = p.add_symmetric_block("x", 1);
        let mut ge = PsdConstraintBuilder::new("ge", 1);
        ge.constant(0, 0, &DMatrix::from_element(1, 1, -1.0))
            .var(&p, 0, 0, 1.0, x);
        p.add_constraint(ge);

        let warm = DVector::from_vec(vec![5.0]);
        match solve_projection(&p, Some(&warm), &SolverOptions::default()).unwrap() {
            SolveOutcome::Feasible(a) => assert!(a.x[0] >= 1.0 - 1e-7),
            SolveOutcome::Infeasible(r) => panic!("{}", r.describe()),
        }
    }
}
