//! Stabilizing-gain synthesis via semidefinite feasibility.
//!
//! The gain K for the control law u_s = ū + K(x − x̄) is found by solving a
//! family of matrix inequalities over the decision blocks
//! (Q_s, Z, Q̃_s,x, Q_s,w_s, U_s) with the sector levels H_s and the level
//! scale γ_s fixed per attempt:
//!
//!   (6a) the 4×4 dissipation block: closed-loop incremental stability,
//!   (6b) Q_s,w_s ⪯ Q⁰_w_s, the disturbance-plus-boost gain cap,
//!   (6c) Q̃_s,x ⪰ Q_s/γ_s, coupling the decay rate to the invariant level,
//!   (6d) per active channel: the sector bound holds on the whole orbit,
//!   (6e)/(6f) per polytope row: the invariant ellipsoid E(P_s/γ_s) ⊕ x̄
//!             maps into the output/input constraint sets,
//!   (6g) v̄_i(h_s,i) ≥ |Ã_i x̄ + B̃_i ū|: the sector radius covers the
//!        operating point (checked outside the solver; it involves no
//!        decision variables).
//!
//! The procedure: size the boost box (an LP), attempt H_s = I, γ_s = 1, then
//! escalate h and γ_s geometrically until feasible; if the sector radii
//! cannot cover the operating point, restart with a smaller boost box.

pub mod conic;
pub mod lp;

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::activation::{q_deriv, Activation};
use crate::error::{Error, Result};
use crate::model::{ConstraintSets, Equilibrium, RnnModel};
use conic::{
    BlockId, ConicProblem, FeasibilityBackend, ProjectionBackend, PsdConstraintBuilder,
    SolveOutcome, SolverOptions,
};

/// Symmetric axis-aligned box for the boosting input:
/// u_b ∈ U_b ⇔ |g_b,i · u_b,i| ≤ 1 for every i.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoostBox {
    #[serde(with = "crate::serialize::vec_f64")]
    pub g_b: DVector<f64>,
}

impl BoostBox {
    pub fn new(g_b: DVector<f64>) -> Result<Self> {
        if g_b.iter().any(|&g| g <= 0.0 || !g.is_finite()) {
            return Err(Error::Invalid("boost box scales must be positive".into()));
        }
        Ok(BoostBox { g_b })
    }

    pub fn dim(&self) -> usize {
        self.g_b.len()
    }

    pub fn contains(&self, u_b: &DVector<f64>, tol: f64) -> bool {
        u_b.iter()
            .zip(self.g_b.iter())
            .all(|(&u, &g)| (g * u).abs() <= 1.0 + tol)
    }

    /// Half-width of the box along each axis, 1/g_b,i.
    pub fn half_widths(&self) -> DVector<f64> {
        DVector::from_fn(self.g_b.len(), |i, _| 1.0 / self.g_b[i])
    }

    /// max over u_b ∈ U_b of g_row · u_b, available in closed form because
    /// the box is axis-aligned: Σ_j |g_row,j| / g_b,j.
    pub fn max_row_support(&self, g_row: &DVector<f64>) -> f64 {
        g_row
            .iter()
            .zip(self.g_b.iter())
            .map(|(&g, &gb)| g.abs() / gb)
            .sum()
    }

    /// Verifies U_b ⊆ U ⊖ ū by checking G_u(ū + v) ≤ b_u at all 2^m box
    /// vertices v.
    pub fn verify_inside(
        &self,
        constraints: &ConstraintSets,
        equilibrium: &Equilibrium,
        tol: f64,
    ) -> Result<()> {
        let m = self.dim();
        let hw = self.half_widths();
        for mask in 0..(1usize << m) {
            let v = DVector::from_fn(m, |i, _| {
                if mask & (1 << i) != 0 {
                    hw[i]
                } else {
                    -hw[i]
                }
            });
            let u = &equilibrium.u_bar + v;
            let slack = constraints.input_slack(&u);
            if let Some((row, &worst)) = slack
                .iter()
                .enumerate()
                .min_by(|a, b| a.1.total_cmp(b.1))
            {
                if worst < -tol {
                    return Err(Error::Invalid(format!(
                        "boost box vertex leaves the input polytope (row {row}, margin {worst:.3e})"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Shrinks the box by scaling every g_b,i up by `factor`.
    pub fn shrunk(&self, factor: f64) -> BoostBox {
        BoostBox {
            g_b: &self.g_b * factor,
        }
    }
}

/// Step 1: the largest admissible symmetric box around ū, sized by the
/// packing LP over the reciprocal scales.
pub fn init_boost_box(
    constraints: &ConstraintSets,
    equilibrium: &Equilibrium,
) -> Result<BoostBox> {
    let b_bar = constraints.input_slack(&equilibrium.u_bar);
    if let Some((row, &margin)) = b_bar.iter().enumerate().min_by(|a, b| a.1.total_cmp(b.1)) {
        if margin <= 0.0 {
            return Err(Error::InfeasibleEquilibrium { row, margin });
        }
    }
    let abs_gu = constraints.g_u.abs();
    let t = lp::solve_packing_lp(&abs_gu, &b_bar)?;
    BoostBox::new(DVector::from_fn(t.len(), |i, _| 1.0 / t[i]))
}

/// Largest ṽ such that 1 − σ'(v) ≤ 1/h for all |v| ≤ ṽ, found by bisection
/// on the even, nondecreasing-in-|v| derivative of the deadzone residual.
/// Returns +∞ when the bound holds globally.
pub fn compute_vbar(activation: Activation, h: f64) -> Result<f64> {
    if h < 1.0 || h.is_nan() {
        return Err(Error::SectorLevelOutOfRange { h });
    }
    let level = 1.0 / h;
    // Grow the bracket until the bound fails; if it never fails the bound
    // holds globally.
    let mut hi = 1.0;
    while q_deriv(activation, hi) <= level {
        hi *= 2.0;
        if hi > 1e12 {
            return Ok(f64::INFINITY);
        }
    }
    let mut lo = 0.0;
    while hi - lo > 1e-10 {
        let mid = 0.5 * (lo + hi);
        if q_deriv(activation, mid) <= level {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Options for the synthesis procedure.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthesisOptions {
    /// A channel enters I(H_s) when h_s,i exceeds this (strictly). The
    /// default 1.0 makes H_s = I the global case.
    pub active_threshold: f64,
    pub h_factor: f64,
    pub gamma_factor: f64,
    pub max_rounds: usize,
    /// Step-4 box update: g_b scales up by this per restart (shrinks U_b).
    pub gb_multiplier: f64,
    pub max_restarts: usize,
    /// Residual acceptance tolerance on minimum eigenvalues.
    pub psd_tol: f64,
    /// Strict-definiteness floors for Q_s and the diagonal of U_s.
    pub q_floor: f64,
    pub u_floor: f64,
    /// Designer override for the initial boost box scales (skips the LP).
    pub g_b_init: Option<Vec<f64>>,
    #[serde(skip)]
    pub solver: SolverOptions,
}

impl Default for SynthesisOptions {
    fn default() -> Self {
        SynthesisOptions {
            active_threshold: 1.0,
            h_factor: 2.0,
            gamma_factor: 2.0,
            max_rounds: 20,
            gb_multiplier: 2.0,
            max_restarts: 5,
            psd_tol: 1e-7,
            q_floor: 1e-4,
            u_floor: 1e-6,
            g_b_init: None,
            solver: SolverOptions::default(),
        }
    }
}

/// Gain and certificates returned by a successful synthesis.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthesisResult {
    #[serde(with = "crate::serialize::mat_f64")]
    pub k: DMatrix<f64>,
    #[serde(with = "crate::serialize::mat_f64")]
    pub p_s: DMatrix<f64>,
    #[serde(with = "crate::serialize::mat_f64")]
    pub q_s: DMatrix<f64>,
    #[serde(with = "crate::serialize::mat_f64")]
    pub z: DMatrix<f64>,
    pub gamma_s: f64,
    #[serde(with = "crate::serialize::vec_f64")]
    pub h_s: DVector<f64>,
    #[serde(with = "crate::serialize::vec_f64")]
    pub u_s: DVector<f64>,
    #[serde(with = "crate::serialize::mat_f64")]
    pub qtilde_sx: DMatrix<f64>,
    #[serde(with = "crate::serialize::mat_f64")]
    pub q_sws: DMatrix<f64>,
    /// Minimum-eigenvalue margin per emitted condition ("6a".."6g").
    pub residuals: BTreeMap<String, f64>,
    pub boost_box: BoostBox,
    /// True when I(H_s) is empty under the configured threshold, i.e. the
    /// certificate holds globally.
    pub global_flag: bool,
}

impl SynthesisResult {
    /// Shape matrix of the invariant ellipsoid E(P_s/γ_s) ⊕ x̄.
    pub fn rpi_shape(&self) -> DMatrix<f64> {
        &self.p_s / self.gamma_s
    }
}

/// Stacked disturbance shape Q⁰_w_s = diag(Q⁰_w/2, G_bᵀG_b/(2m)).
pub fn stacked_disturbance_shape(
    constraints: &ConstraintSets,
    boost_box: &BoostBox,
) -> DMatrix<f64> {
    let n = constraints.q_w0.nrows();
    let m = boost_box.dim();
    let mut q = DMatrix::zeros(n + m, n + m);
    q.view_mut((0, 0), (n, n)).copy_from(&(&constraints.q_w0 * 0.5));
    for i in 0..m {
        q[(n + i, n + i)] = boost_box.g_b[i] * boost_box.g_b[i] / (2.0 * m as f64);
    }
    q
}

/// Indices of the channels whose sector level is strictly above the
/// threshold (the "regional" channels).
pub fn active_channels(h_s: &DVector<f64>, threshold: f64) -> Vec<usize> {
    (0..h_s.len()).filter(|&i| h_s[i] > threshold).collect()
}

/// Decision-block handles of an assembled problem.
pub struct DecisionBlocks {
    pub q_s: BlockId,
    pub z: BlockId,
    pub qtilde_sx: BlockId,
    pub q_sws: BlockId,
    pub u_s: BlockId,
}

/// Assembles conditions (6a)–(6f) for fixed H_s and γ_s, after pre-checking
/// the sector-radius condition (6g).
pub fn assemble_lmis(
    model: &RnnModel,
    equilibrium: &Equilibrium,
    constraints: &ConstraintSets,
    boost_box: &BoostBox,
    h_s: &DVector<f64>,
    gamma_s: f64,
    options: &SynthesisOptions,
) -> Result<(ConicProblem, DecisionBlocks)> {
    let n = model.state_dim();
    let m = model.input_dim();
    let nu = model.channel_dim();
    assert_eq!(h_s.len(), nu);

    let active = active_channels(h_s, options.active_threshold);
    // (6g) pre-screen: the certified sector radius must cover the operating
    // point of every active channel.
    for &i in &active {
        let vbar = compute_vbar(model.activations[i], h_s[i])?;
        let need = equilibrium.v_bar[i].abs();
        if vbar < need {
            return Err(Error::SectorPreViolation {
                channel: i,
                needed: need,
                available: vbar,
            });
        }
    }

    let a = model.a();
    let b = model.b();
    let b_q = model.b_q();
    let eye_n = DMatrix::<f64>::identity(n, n);
    // D_s = [I_n, B], D̃_s = [0, B̃].
    let mut d_s = DMatrix::zeros(n, n + m);
    d_s.view_mut((0, 0), (n, n)).copy_from(&eye_n);
    d_s.view_mut((0, n), (n, m)).copy_from(&b);
    let mut d_tilde = DMatrix::zeros(nu, n + m);
    d_tilde.view_mut((0, n), (nu, m)).copy_from(&model.b_tilde);
    let q_ws0 = stacked_disturbance_shape(constraints, boost_box);

    let mut prob = ConicProblem::new();
    let bq_s = prob.add_symmetric_block("Q_s", n);
    let bz = prob.add_rect_block("Z", m, n);
    let bqt = prob.add_symmetric_block("Qtilde_sx", n);
    let bqw = prob.add_symmetric_block("Q_sws", n + m);
    let bu = prob.add_diag_block("U_s", nu);

    let eye_nu = DMatrix::<f64>::identity(nu, nu);
    let eye_nm = DMatrix::<f64>::identity(n + m, n + m);

    // ---- (6a): the 4×4 dissipation block -------------------------------
    {
        let dim = n + nu + (n + m) + n;
        let (o1, o2, o3, o4) = (0, n, n + nu, 2 * n + nu + m);
        let mut c = PsdConstraintBuilder::new("6a", dim);
        // (1,1) Q_s − Q̃_s,x
        c.var(&prob, o1, o1, 1.0, bq_s).var(&prob, o1, o1, -1.0, bqt);
        // (1,2) −Q_s Ãᵀ − Zᵀ B̃ᵀ
        c.term(&prob, o1, o2, -1.0, &eye_n, bq_s, false, &model.a_tilde.transpose());
        c.term(&prob, o1, o2, -1.0, &eye_n, bz, true, &model.b_tilde.transpose());
        // (1,4) Q_s Aᵀ + Zᵀ Bᵀ
        c.term(&prob, o1, o4, 1.0, &eye_n, bq_s, false, &a.transpose());
        c.term(&prob, o1, o4, 1.0, &eye_n, bz, true, &b.transpose());
        // (2,2) 2 H_s U_s
        let two_h = DMatrix::from_fn(nu, nu, |i, j| if i == j { 2.0 * h_s[i] } else { 0.0 });
        c.term(&prob, o2, o2, 1.0, &two_h, bu, false, &eye_nu);
        // (2,3) −D̃_s
        c.constant(o2, o3, &(-&d_tilde));
        // (2,4) U_s B_qᵀ
        c.term(&prob, o2, o4, 1.0, &eye_nu, bu, false, &b_q.transpose());
        // (3,3) Q_s,w_s
        c.var(&prob, o3, o3, 1.0, bqw);
        // (3,4) D_sᵀ
        c.constant(o3, o4, &d_s.transpose());
        // (4,4) Q_s
        c.var(&prob, o4, o4, 1.0, bq_s);
        prob.add_constraint(c);
    }

    // ---- (6b): Q_s,w_s ⪯ Q⁰_w_s ----------------------------------------
    {
        let mut c = PsdConstraintBuilder::new("6b", n + m);
        c.constant(0, 0, &q_ws0).var(&prob, 0, 0, -1.0, bqw);
        prob.add_constraint(c);
    }

    // ---- (6c): Q̃_s,x − Q_s/γ_s ⪰ 0 ------------------------------------
    {
        let mut c = PsdConstraintBuilder::new("6c", n);
        c.var(&prob, 0, 0, 1.0, bqt).var(&prob, 0, 0, -1.0 / gamma_s, bq_s);
        prob.add_constraint(c);
    }

    // ---- (6d): sector locality per active channel ----------------------
    for &i in &active {
        let vbar = compute_vbar(model.activations[i], h_s[i])?;
        if !vbar.is_finite() {
            continue; // globally valid sector: nothing to localize
        }
        let corner = vbar - equilibrium.v_bar[i].abs();
        let dim = n + (n + m) + 1;
        let (o1, o2, o3) = (0, n, 2 * n + m);
        let mut c = PsdConstraintBuilder::new("6d", dim);
        c.var(&prob, o1, o1, 0.5 / gamma_s, bq_s);
        c.constant(o2, o2, &(&q_ws0 * 0.5));
        c.constant(o3, o3, &DMatrix::from_element(1, 1, corner * corner));
        // (1,3) Q_s Ã_iᵀ + Zᵀ B̃_iᵀ
        let ai = model.a_tilde.row(i).transpose().clone_owned();
        let bi = model.b_tilde.row(i).transpose().clone_owned();
        c.term(&prob, o1, o3, 1.0, &eye_n, bq_s, false, &DMatrix::from_column_slice(n, 1, ai.as_slice()));
        c.term(&prob, o1, o3, 1.0, &eye_n, bz, true, &DMatrix::from_column_slice(m, 1, bi.as_slice()));
        // (2,3) D̃_s,iᵀ
        let di = d_tilde.row(i).transpose().clone_owned();
        c.constant(o2, o3, &DMatrix::from_column_slice(n + m, 1, di.as_slice()));
        prob.add_constraint(c);
    }

    // ---- (6e): output rows ----------------------------------------------
    for r in 0..constraints.output_rows() {
        let g_row = constraints.g_y.row(r).clone_owned();
        let margin = constraints.b_y[r] - (&g_row * &equilibrium.y_bar)[(0, 0)];
        let mut c = PsdConstraintBuilder::new("6e", n + 1);
        c.var(&prob, 0, 0, 1.0 / gamma_s, bq_s);
        c.constant(n, n, &DMatrix::from_element(1, 1, margin * margin));
        // (1,2) Q_s Cᵀ G_y,rᵀ
        let gc = (&g_row * &model.c).transpose();
        c.term(&prob, 0, n, 1.0, &eye_n, bq_s, false, &DMatrix::from_column_slice(n, 1, gc.as_slice()));
        prob.add_constraint(c);
    }

    // ---- (6f): input rows -----------------------------------------------
    for t in 0..constraints.input_rows() {
        let g_row = constraints.g_u.row(t).transpose().clone_owned();
        let support = boost_box.max_row_support(&g_row);
        let margin = constraints.b_u[t] - g_row.dot(&equilibrium.u_bar) - support;
        let mut c = PsdConstraintBuilder::new("6f", n + 1);
        c.var(&prob, 0, 0, 1.0 / gamma_s, bq_s);
        c.constant(n, n, &DMatrix::from_element(1, 1, margin * margin));
        // (1,2) Zᵀ G_u,tᵀ
        c.term(&prob, 0, n, 1.0, &eye_n, bz, true, &DMatrix::from_column_slice(m, 1, g_row.as_slice()));
        prob.add_constraint(c);
    }

    // ---- strict-definiteness floors (solver hygiene, not reported) ------
    {
        let mut c = PsdConstraintBuilder::new("floor_q", n);
        c.constant(0, 0, &(&eye_n * (-options.q_floor)))
            .var(&prob, 0, 0, 1.0, bq_s);
        prob.add_constraint(c);
    }
    if nu > 0 {
        let mut c = PsdConstraintBuilder::new("floor_u", nu);
        c.constant(0, 0, &(&eye_nu * (-options.u_floor)));
        c.term(&prob, 0, 0, 1.0, &eye_nu, bu, false, &eye_nu);
        prob.add_constraint(c);
    }
    // Q_s,w_s stays PSD (its (6a) diagonal slot already pushes it up; the
    // explicit cone keeps the extracted certificate clean).
    {
        let mut c = PsdConstraintBuilder::new("floor_qws", n + m);
        c.term(&prob, 0, 0, 1.0, &eye_nm, bqw, false, &eye_nm);
        prob.add_constraint(c);
    }

    Ok((
        prob,
        DecisionBlocks {
            q_s: bq_s,
            z: bz,
            qtilde_sx: bqt,
            q_sws: bqw,
            u_s: bu,
        },
    ))
}

/// Runs a feasibility backend on an assembled problem.
pub fn solve_feasibility(
    problem: &ConicProblem,
    warm_start: Option<&DVector<f64>>,
    options: &SolverOptions,
) -> Result<SolveOutcome> {
    ProjectionBackend.solve(problem, warm_start, options)
}

/// The full synthesis procedure (Steps 1–4).
pub fn synthesize(
    model: &RnnModel,
    equilibrium: &Equilibrium,
    constraints: &ConstraintSets,
    options: &SynthesisOptions,
) -> Result<SynthesisResult> {
    let nu = model.channel_dim();

    // Step 1: boost box (designer override or the packing LP), always
    // validated against the input polytope.
    let mut boost_box = match &options.g_b_init {
        Some(g) => BoostBox::new(DVector::from_vec(g.clone()))?,
        None => init_boost_box(constraints, equilibrium)?,
    };
    // Surface an equilibrium-on-boundary error even when the box is given.
    let b_bar = constraints.input_slack(&equilibrium.u_bar);
    if let Some((row, &margin)) = b_bar.iter().enumerate().min_by(|a, b| a.1.total_cmp(b.1)) {
        if margin <= 0.0 {
            return Err(Error::InfeasibleEquilibrium { row, margin });
        }
    }
    boost_box.verify_inside(constraints, equilibrium, 1e-9)?;

    let mut last_failure = String::from("no attempt made");
    let mut warm: Option<DVector<f64>> = None;

    for _restart in 0..=options.max_restarts {
        // Step 2: start from the global candidate.
        let mut h = 1.0f64;
        let mut gamma = 1.0f64;
        let mut h_frozen = false;
        let mut escalate_h_next = true;

        // Step 3: escalate until feasible.
        for _round in 0..options.max_rounds {
            let trace = std::env::var("RNNBOOST_SYNTH_TRACE").ok().as_deref() == Some("1");
            let round_start = std::time::Instant::now();
            if trace {
                eprintln!(
                    "  synth round: h = {h}, gamma_s = {gamma}, g_b[0] = {:.4}",
                    boost_box.g_b[0]
                );
            }
            let h_s = DVector::from_element(nu, h);
            let outcome = try_round(
                model,
                equilibrium,
                constraints,
                &boost_box,
                &h_s,
                gamma,
                options,
                warm.as_ref(),
            );
            match outcome {
                Ok(TryRound::Feasible(res)) => {
                    if trace {
                        eprintln!("    feasible in {:.2?}", round_start.elapsed());
                    }
                    return Ok(*res);
                }
                Ok(TryRound::Infeasible { report, x }) => {
                    if trace {
                        eprintln!("    infeasible in {:.2?}: {report}", round_start.elapsed());
                    }
                    last_failure = format!("h = {h}, gamma_s = {gamma}: {report}");
                    warm = Some(x);
                }
                Err(e) => return Err(e),
            }

            // Advance the interleaved schedule, respecting the sector
            // ceiling imposed by (6g).
            if escalate_h_next && !h_frozen && nu > 0 {
                let h_next = h * options.h_factor;
                if sector_prescreen(model, equilibrium, h_next, options)? {
                    h = h_next;
                } else {
                    h_frozen = true;
                    gamma *= options.gamma_factor;
                }
            } else {
                gamma *= options.gamma_factor;
            }
            escalate_h_next = !escalate_h_next;
        }

        // Step 4 fallback: shrink the boost box and start over.
        boost_box = boost_box.shrunk(options.gb_multiplier);
        warm = None;
    }

    Err(Error::SynthesisFailed(format!(
        "schedule exhausted ({} rounds × {} restarts); last report: {last_failure}",
        options.max_rounds,
        options.max_restarts + 1
    )))
}

/// True when every channel that would become active at level `h` still has
/// its operating point covered by the certified sector radius.
fn sector_prescreen(
    model: &RnnModel,
    equilibrium: &Equilibrium,
    h: f64,
    options: &SynthesisOptions,
) -> Result<bool> {
    if h <= options.active_threshold {
        return Ok(true);
    }
    for i in 0..model.channel_dim() {
        let vbar = compute_vbar(model.activations[i], h)?;
        if vbar < equilibrium.v_bar[i].abs() {
            return Ok(false);
        }
    }
    Ok(true)
}

enum TryRound {
    Feasible(Box<SynthesisResult>),
    Infeasible { report: String, x: DVector<f64> },
}

#[allow(clippy::too_many_arguments)]
fn try_round(
    model: &RnnModel,
    equilibrium: &Equilibrium,
    constraints: &ConstraintSets,
    boost_box: &BoostBox,
    h_s: &DVector<f64>,
    gamma_s: f64,
    options: &SynthesisOptions,
    warm: Option<&DVector<f64>>,
) -> Result<TryRound> {
    let (prob, blocks) = assemble_lmis(
        model,
        equilibrium,
        constraints,
        boost_box,
        h_s,
        gamma_s,
        options,
    )?;
    match solve_feasibility(&prob, warm, &options.solver)? {
        SolveOutcome::Feasible(assignment) => {
            let res = extract_result(
                model,
                equilibrium,
                &prob,
                &blocks,
                &assignment.x,
                boost_box,
                h_s,
                gamma_s,
                options,
            )?;
            Ok(TryRound::Feasible(Box::new(res)))
        }
        SolveOutcome::Infeasible(report) => Ok(TryRound::Infeasible {
            report: report.describe(),
            x: report.best_x,
        }),
    }
}

#[allow(clippy::too_many_arguments)]
fn extract_result(
    model: &RnnModel,
    equilibrium: &Equilibrium,
    prob: &ConicProblem,
    blocks: &DecisionBlocks,
    x: &DVector<f64>,
    boost_box: &BoostBox,
    h_s: &DVector<f64>,
    gamma_s: f64,
    options: &SynthesisOptions,
) -> Result<SynthesisResult> {
    let q_s = prob.block_value(blocks.q_s, x);
    let z = prob.block_value(blocks.z, x);
    let qtilde_sx = prob.block_value(blocks.qtilde_sx, x);
    let q_sws = prob.block_value(blocks.q_sws, x);
    let u_s_mat = prob.block_value(blocks.u_s, x);
    let u_s = DVector::from_fn(model.channel_dim(), |i, _| u_s_mat[(i, i)]);

    let chol = q_s
        .clone()
        .cholesky()
        .ok_or(Error::NotPositiveDefinite("Q_s"))?;
    let p_s_raw = chol.inverse();
    let p_s = (&p_s_raw + p_s_raw.transpose()) * 0.5;
    let k = &z * &p_s;

    // Residual margins per named condition, min over same-named blocks.
    let mut residuals: BTreeMap<String, f64> = BTreeMap::new();
    for (name, margin) in prob.margins(x) {
        if !name.starts_with('6') {
            continue;
        }
        residuals
            .entry(name)
            .and_modify(|m| *m = m.min(margin))
            .or_insert(margin);
    }
    for (name, margin) in &residuals {
        if *margin < -options.psd_tol {
            return Err(Error::SynthesisFailed(format!(
                "extracted solution violates {name} (margin {margin:.3e})"
            )));
        }
    }

    // (6g) margin over active channels with finite radii.
    let active = active_channels(h_s, options.active_threshold);
    let mut sector_margin = f64::INFINITY;
    for &i in &active {
        let vbar = compute_vbar(model.activations[i], h_s[i])?;
        if vbar.is_finite() {
            sector_margin = sector_margin.min(vbar - equilibrium.v_bar[i].abs());
        }
    }
    if !active.is_empty() && sector_margin.is_finite() {
        if sector_margin < 0.0 {
            return Err(Error::SectorPreViolation {
                channel: 0,
                needed: 0.0,
                available: sector_margin,
            });
        }
        residuals.insert("6g".to_string(), sector_margin);
    }

    Ok(SynthesisResult {
        k,
        p_s,
        q_s,
        z,
        gamma_s,
        h_s: h_s.clone(),
        u_s,
        qtilde_sx,
        q_sws,
        residuals,
        boost_box: boost_box.clone(),
        global_flag: active.is_empty(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;

    fn interval_constraints(n_states: usize) -> ConstraintSets {
        // u ∈ [−2, 2], y ∈ [−5, 5], modest disturbances.
        ConstraintSets::new(
            dmatrix![1.0; -1.0],
            DVector::from_vec(vec![2.0, 2.0]),
            dmatrix![1.0; -1.0],
            DVector::from_vec(vec![5.0, 5.0]),
            DMatrix::<f64>::identity(n_states, n_states) * 400.0,
        )
        .unwrap()
    }

    fn scalar_linear_plant(a: f64, b: f64) -> (RnnModel, Equilibrium) {
        let model = RnnModel::new(
            dmatrix![a],
            dmatrix![b],
            DMatrix::zeros(1, 0),
            DMatrix::zeros(0, 1),
            DMatrix::zeros(0, 1),
            dmatrix![1.0],
            vec![],
        )
        .unwrap();
        let eq = model
            .find_equilibrium(&DVector::zeros(1), &DVector::zeros(1), 200)
            .unwrap();
        (model, eq)
    }

    #[test]
    fn vbar_matches_tanh_closed_form() {
        for h in [1.5, 2.0, 4.0, 10.0, 100.0] {
            let got = compute_vbar(Activation::Tanh, h).unwrap();
            let want = (1.0 / h.sqrt()).atanh();
            assert!((got - want).abs() <= 1e-9, "h = {h}: {got} vs {want}");
        }
        assert_eq!(compute_vbar(Activation::Tanh, 1.0).unwrap(), f64::INFINITY);
        assert!(compute_vbar(Activation::Tanh, 0.5).is_err());
    }

    #[test]
    fn vbar_atan_closed_form() {
        // q'(v) = (πv/2)²/(1+(πv/2)²) ≤ 1/h  ⇔  |v| ≤ (2/π)/√(h−1).
        for h in [2.0, 5.0, 50.0] {
            let got = compute_vbar(Activation::Atan, h).unwrap();
            let want = (2.0 / std::f64::consts::PI) / (h - 1.0).sqrt();
            assert!((got - want).abs() <= 1e-9, "h = {h}: {got} vs {want}");
        }
    }

    #[test]
    fn boost_box_from_lp_single_input() {
        let cons = interval_constraints(1);
        let (model, eq) = scalar_linear_plant(0.5, 1.0);
        let _ = model;
        let bb = init_boost_box(&cons, &eq).unwrap();
        assert!((bb.g_b[0] - 0.5).abs() < 1e-9); // U_b = [−2, 2]
        bb.verify_inside(&cons, &eq, 1e-12).unwrap();
    }

    #[test]
    fn boost_box_rejects_boundary_equilibrium() {
        let cons = interval_constraints(1);
        let (model, _) = scalar_linear_plant(0.5, 1.0);
        let eq = Equilibrium {
            x_bar: DVector::zeros(1),
            u_bar: DVector::from_vec(vec![2.0]),
            y_bar: DVector::zeros(1),
            v_bar: DVector::zeros(0),
            residual: 0.0,
        };
        let _ = model;
        let err = init_boost_box(&cons, &eq).unwrap_err();
        assert!(matches!(err, Error::InfeasibleEquilibrium { .. }));
    }

    #[test]
    fn stacked_shape_matches_displayed_form() {
        let cons = interval_constraints(1);
        let bb = BoostBox::new(DVector::from_vec(vec![2.0])).unwrap();
        let q = stacked_disturbance_shape(&cons, &bb);
        assert_eq!(q[(0, 0)], 200.0);
        assert_eq!(q[(1, 1)], 4.0 / 2.0);
        assert_eq!(q[(0, 1)], 0.0);
    }

    #[test]
    fn synthesize_scalar_unstable_linear_plant() {
        let (model, eq) = scalar_linear_plant(1.1, 1.0);
        let cons = interval_constraints(1);
        let res = synthesize(&model, &eq, &cons, &SynthesisOptions::default()).unwrap();
        assert!(res.global_flag);
        for (name, margin) in &res.residuals {
            assert!(*margin >= -1e-7, "{name}: {margin:.3e}");
        }
        // Closed-loop spectral radius oracle.
        let acl = model.a() + model.b() * &res.k;
        let rho = acl
            .complex_eigenvalues()
            .iter()
            .map(|c| c.norm())
            .fold(0.0, f64::max);
        assert!(rho < 1.0, "closed loop not stable: rho = {rho}");
        // K = Z Q⁻¹ and P = Q⁻¹ consistency.
        let kq = &res.k * &res.q_s;
        assert!((&kq - &res.z).norm() <= 1e-9 * res.z.norm().max(1e-12));
        let pq = &res.p_s * &res.q_s;
        assert!((pq - DMatrix::<f64>::identity(1, 1)).norm() < 1e-9);
        // Invariance of the certified set holds empirically as well.
        let mc = crate::certificates::check_rpi_montecarlo(&model, &res, &eq, &cons, 10_000, 9)
            .unwrap();
        assert!(mc.pass, "{mc:?}");
    }

    #[test]
    fn synthesize_reports_unstabilizable_plant() {
        let (model, eq) = scalar_linear_plant(2.0, 0.0);
        let cons = interval_constraints(1);
        let mut opts = SynthesisOptions {
            max_rounds: 4,
            max_restarts: 1,
            ..SynthesisOptions::default()
        };
        opts.solver.max_iter = 3_000;
        let err = synthesize(&model, &eq, &cons, &opts).unwrap_err();
        assert!(matches!(err, Error::SynthesisFailed(_)), "{err}");
    }

    #[test]
    fn lmi_block_counts_follow_polytope_rows() {
        let (model, eq) = scalar_linear_plant(0.9, 1.0);
        let cons = interval_constraints(1);
        let bb = init_boost_box(&cons, &eq).unwrap();
        let opts = SynthesisOptions::default();
        let h = DVector::zeros(0);
        let (prob, _) = assemble_lmis(&model, &eq, &cons, &bb, &h, 1.0, &opts).unwrap();
        let count = |tag: &str| prob.constraints.iter().filter(|c| c.name == tag).count();
        assert_eq!(count("6a"), 1);
        assert_eq!(count("6b"), 1);
        assert_eq!(count("6c"), 1);
        assert_eq!(count("6d"), 0); // empty I(H_s)
        assert_eq!(count("6e"), cons.output_rows());
        assert_eq!(count("6f"), cons.input_rows());
    }
}
