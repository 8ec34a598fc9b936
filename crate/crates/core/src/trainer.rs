//! Closed-loop training of the boosting operator.
//!
//! Training unrolls the full control chain per scenario (exogenous-signal
//! reconstruction, operator step, box projection, composite input, plant
//! step) and backpropagates exactly through the unrolled graph. The clip
//! has subgradient 1 componentwise where |G_b ũ_b| < 1 and 0 where ≥ 1, so
//! saturated channels stop pulling on the parameters.
//!
//! Because the operator family is stable for every parameter value, every
//! intermediate iterate is a valid controller; stopping early never costs
//! stability or constraint satisfaction.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::certificates::Ellipsoid;
use crate::error::{Error, Result};
use crate::imc::error_dynamics;
use crate::model::{ConstraintSets, Equilibrium, RnnModel};
use crate::operator::{OperatorContext, OperatorGradients, StableOperatorParams};
use crate::rng::SplitRng;
use crate::synthesis::SynthesisResult;

/// Weights and targets of the running cost.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LossSpec {
    pub omega1: f64,
    pub omega2: f64,
    pub omega3: f64,
    /// Output target ȳ (scalar; vector outputs are summed row-wise).
    pub y_bar: f64,
    /// Soft magnitude bound on the pre-projection boost signal.
    pub u_m: f64,
    /// Select the tracking term: concentration-scale preset or quadratic.
    pub tracking: TrackingTerm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrackingTerm {
    /// ω₁ |10^(−y) − 10^(−ȳ)|: concentration error, emphasising acid-side
    /// deviations through the log scale.
    Concentration,
    /// ω₁ (y − ȳ)²: the symmetric surrogate commonly used instead.
    Quadratic,
}

impl LossSpec {
    /// The pH-style preset: ω₁ = 1/10^(−ȳ), ω₂ = 0.1, ω₃ = 0.05.
    pub fn ph_preset(y_bar: f64, u_m: f64) -> Self {
        LossSpec {
            omega1: 10f64.powf(y_bar),
            omega2: 0.1,
            omega3: 0.05,
            y_bar,
            u_m,
            tracking: TrackingTerm::Concentration,
        }
    }

    /// Same smoothness/saturation terms with a quadratic tracking error.
    pub fn quadratic(y_bar: f64, u_m: f64, weight: f64) -> Self {
        LossSpec {
            omega1: weight,
            omega2: 0.1,
            omega3: 0.05,
            y_bar,
            u_m,
            tracking: TrackingTerm::Quadratic,
        }
    }

    /// Stage cost and its gradients with respect to (u, u_prev, y, ũ_b).
    #[allow(clippy::type_complexity)]
    fn stage(
        &self,
        u: &DVector<f64>,
        u_prev: &DVector<f64>,
        y: &DVector<f64>,
        u_tilde: &DVector<f64>,
    ) -> (f64, DVector<f64>, DVector<f64>, DVector<f64>, DVector<f64>) {
        let ln10 = std::f64::consts::LN_10;
        let mut value = 0.0;
        let mut dy = DVector::zeros(y.len());
        match self.tracking {
            TrackingTerm::Concentration => {
                let target = 10f64.powf(-self.y_bar);
                for r in 0..y.len() {
                    let conc = 10f64.powf(-y[r]);
                    let diff = conc - target;
                    value += self.omega1 * diff.abs();
                    dy[r] = self.omega1 * sign(diff) * (-ln10 * conc);
                }
            }
            TrackingTerm::Quadratic => {
                for r in 0..y.len() {
                    let diff = y[r] - self.y_bar;
                    value += self.omega1 * diff * diff;
                    dy[r] = 2.0 * self.omega1 * diff;
                }
            }
        }

        let mut du = DVector::zeros(u.len());
        let mut du_prev = DVector::zeros(u.len());
        for i in 0..u.len() {
            let diff = u[i] - u_prev[i];
            value += self.omega2 * diff.abs();
            du[i] = self.omega2 * sign(diff);
            du_prev[i] = -self.omega2 * sign(diff);
        }

        let mut dut = DVector::zeros(u_tilde.len());
        for i in 0..u_tilde.len() {
            let excess = u_tilde[i].abs() - self.u_m;
            if excess > 0.0 {
                value += self.omega3 * excess;
                dut[i] = self.omega3 * sign(u_tilde[i]);
            }
        }
        (value, du, du_prev, dy, dut)
    }
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Disturbance scenarios plus initial deviations, all admissible.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioBatch {
    pub seed: u64,
    pub horizon: usize,
    #[serde(with = "vec_of_vec")]
    pub dx0: Vec<DVector<f64>>,
    #[serde(with = "vec_of_traj")]
    pub w: Vec<Vec<DVector<f64>>>,
}

mod vec_of_vec {
    use nalgebra::DVector;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &[DVector<f64>], s: S) -> Result<S::Ok, S::Error> {
        let plain: Vec<Vec<f64>> = v.iter().map(|x| x.as_slice().to_vec()).collect();
        plain.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<DVector<f64>>, D::Error> {
        let plain = Vec::<Vec<f64>>::deserialize(d)?;
        Ok(plain.into_iter().map(DVector::from_vec).collect())
    }
}

mod vec_of_traj {
    use nalgebra::DVector;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &[Vec<DVector<f64>>], s: S) -> Result<S::Ok, S::Error> {
        let plain: Vec<Vec<Vec<f64>>> = v
            .iter()
            .map(|t| t.iter().map(|x| x.as_slice().to_vec()).collect())
            .collect();
        plain.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(
        d: D,
    ) -> Result<Vec<Vec<DVector<f64>>>, D::Error> {
        let plain = Vec::<Vec<Vec<f64>>>::deserialize(d)?;
        Ok(plain
            .into_iter()
            .map(|t| t.into_iter().map(DVector::from_vec).collect())
            .collect())
    }
}

impl ScenarioBatch {
    pub fn len(&self) -> usize {
        self.dx0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dx0.is_empty()
    }
}

/// Disturbance envelope: unit weight before the cutoff, zero after. The
/// hard truncation keeps every training disturbance inside ℓp.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Envelope {
    pub t_cut: usize,
}

impl Envelope {
    pub fn full(horizon: usize) -> Self {
        Envelope { t_cut: horizon }
    }

    pub fn weight(&self, k: usize) -> f64 {
        if k < self.t_cut {
            1.0
        } else {
            0.0
        }
    }
}

/// Draws disturbances uniformly from E(Q_w⁰) scaled by the envelope and
/// initial deviations uniformly from the invariant ellipsoid. Independent
/// of worker count; reproducible from the seed alone.
pub fn sample_scenarios(
    constraints: &ConstraintSets,
    result: &SynthesisResult,
    scenarios: usize,
    horizon: usize,
    seed: u64,
    envelope: Envelope,
) -> Result<ScenarioBatch> {
    let dist = Ellipsoid::centered(constraints.q_w0.clone())?;
    let rpi = Ellipsoid::centered(result.rpi_shape())?;
    let mut dx0 = Vec::with_capacity(scenarios);
    let mut w = Vec::with_capacity(scenarios);
    for s in 0..scenarios {
        let mut rng = SplitRng::new(seed, 0x5343_0000 ^ s as u64); // "SC"
        dx0.push(rpi.sample_uniform(&mut rng));
        let mut traj = Vec::with_capacity(horizon);
        for k in 0..horizon {
            let zeta = dist.sample_uniform(&mut rng);
            traj.push(zeta * envelope.weight(k));
        }
        w.push(traj);
    }
    Ok(ScenarioBatch {
        seed,
        horizon,
        dx0,
        w,
    })
}

/// Forward tape of one scenario rollout.
struct ScenarioTape {
    dx: Vec<DVector<f64>>,
    du: Vec<DVector<f64>>,
    we: Vec<DVector<f64>>,
    xi: Vec<DVector<f64>>,
    u_tilde: Vec<DVector<f64>>,
    /// Clip pass-through mask (1 inside the box, 0 at or beyond the face).
    active: Vec<DVector<f64>>,
    /// Total pre-activation v at (Δx(k), Δu(k)); drives the f_e Jacobians.
    v_now: Vec<DVector<f64>>,
    u: Vec<DVector<f64>>,
    y: Vec<DVector<f64>>,
    loss: f64,
}

#[allow(clippy::too_many_arguments)]
fn rollout_scenario(
    model: &RnnModel,
    equilibrium: &Equilibrium,
    result: &SynthesisResult,
    ctx: &OperatorContext,
    loss: &LossSpec,
    dx0: &DVector<f64>,
    w_seq: &[DVector<f64>],
    rpi: &Ellipsoid,
) -> Result<ScenarioTape> {
    let membership = rpi.membership(dx0);
    if membership > 1.0 + 1e-12 {
        return Err(Error::StartOutsideInvariantSet { membership });
    }
    let t = w_seq.len();
    let m = model.input_dim();
    let mut tape = ScenarioTape {
        dx: Vec::with_capacity(t + 1),
        du: Vec::with_capacity(t),
        we: Vec::with_capacity(t),
        xi: Vec::with_capacity(t + 1),
        u_tilde: Vec::with_capacity(t),
        active: Vec::with_capacity(t),
        v_now: Vec::with_capacity(t),
        u: Vec::with_capacity(t),
        y: Vec::with_capacity(t),
        loss: 0.0,
    };
    tape.dx.push(dx0.clone());
    tape.xi.push(DVector::zeros(ctx.params.n_xi));

    // The step index addresses several tape lanes at once (k and k−1).
    #[allow(clippy::needless_range_loop)]
    for k in 0..t {
        let dx_k = tape.dx[k].clone();
        let we_k = if k == 0 {
            dx_k.clone()
        } else {
            &dx_k - error_dynamics(model, equilibrium, &tape.dx[k - 1], &tape.du[k - 1])
        };
        let (xi_next, u_tilde) = ctx.step(&tape.xi[k], &we_k);
        let active = DVector::from_fn(m, |i, _| {
            if (result.boost_box.g_b[i] * u_tilde[i]).abs() < 1.0 {
                1.0
            } else {
                0.0
            }
        });
        let u_b = crate::imc::project_box(&u_tilde, &result.boost_box);
        let du_k = &result.k * &dx_k + &u_b;
        let u_k = &equilibrium.u_bar + &du_k;
        let y_k = &equilibrium.y_bar + &model.c * &dx_k;

        let u_prev = if k == 0 {
            equilibrium.u_bar.clone()
        } else {
            tape.u[k - 1].clone()
        };
        let (stage, ..) = loss.stage(&u_k, &u_prev, &y_k, &u_tilde);
        tape.loss += stage;

        let x = &equilibrium.x_bar + &dx_k;
        let u_raw = &equilibrium.u_bar + &du_k;
        tape.v_now.push(model.v(&x, &u_raw));
        let dx_next = error_dynamics(model, equilibrium, &dx_k, &du_k) + &w_seq[k];

        tape.we.push(we_k);
        tape.xi.push(xi_next);
        tape.u_tilde.push(u_tilde);
        tape.active.push(active);
        tape.du.push(du_k);
        tape.u.push(u_k);
        tape.y.push(y_k);
        tape.dx.push(dx_next);
    }
    Ok(tape)
}

fn jacobians(
    model: &RnnModel,
    v: &DVector<f64>,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = model.state_dim();
    let m = model.input_dim();
    let nu = model.channel_dim();
    let mut jx = model.a_x.clone();
    let mut ju = model.b_u.clone();
    if nu > 0 {
        let sp = DVector::from_fn(nu, |i, _| model.activations[i].sigma_prime(v[i]));
        let scaled = DMatrix::from_fn(n, nu, |i, j| model.b_sigma[(i, j)] * sp[j]);
        jx += &scaled * &model.a_tilde;
        ju += &scaled * &model.b_tilde;
    }
    let _ = m;
    (jx, ju)
}

#[allow(clippy::too_many_arguments)]
fn backward_scenario(
    model: &RnnModel,
    result: &SynthesisResult,
    loss: &LossSpec,
    equilibrium: &Equilibrium,
    ctx: &OperatorContext,
    tape: &ScenarioTape,
    grads: &mut OperatorGradients,
    a_m_bar: &mut DMatrix<f64>,
) {
    let t = tape.du.len();
    let n = model.state_dim();
    let m = model.input_dim();
    let n_xi = ctx.params.n_xi;

    let mut d_dx = vec![DVector::<f64>::zeros(n); t + 1];
    let mut d_du = vec![DVector::<f64>::zeros(m); t];
    let mut d_we = vec![DVector::<f64>::zeros(model.state_dim()); t];
    let mut d_xi = vec![DVector::<f64>::zeros(n_xi); t + 1];
    let mut d_ut = vec![DVector::<f64>::zeros(m); t];

    // Jacobians at (Δx(k), Δu(k)).
    let jacs: Vec<(DMatrix<f64>, DMatrix<f64>)> =
        tape.v_now.iter().map(|v| jacobians(model, v)).collect();

    for k in (0..t).rev() {
        // Δx(k+1) = f_e(Δx(k), Δu(k)) + w(k)
        let (jx, ju) = &jacs[k];
        let dxn = d_dx[k + 1].clone();
        d_dx[k] += jx.transpose() * &dxn;
        d_du[k] += ju.transpose() * &dxn;

        // Stage loss at k.
        let u_prev = if k == 0 {
            equilibrium.u_bar.clone()
        } else {
            tape.u[k - 1].clone()
        };
        let (_, gu, gu_prev, gy, gut) = loss.stage(&tape.u[k], &u_prev, &tape.y[k], &tape.u_tilde[k]);
        d_du[k] += &gu;
        if k > 0 {
            d_du[k - 1] += &gu_prev;
        }
        d_dx[k] += model.c.transpose() * &gy;
        d_ut[k] += &gut;

        // Δu(k) = K Δx(k) + u_b(k)
        let dub = d_du[k].clone();
        d_dx[k] += result.k.transpose() * &dub;
        // u_b = Π(ũ_b): pass-through on active coordinates.
        d_ut[k] += dub.component_mul(&tape.active[k]);

        // ξ(k+1) = A_M ξ(k) + B_w ŵ_e(k)
        let dxi_next = d_xi[k + 1].clone();
        *a_m_bar += &dxi_next * tape.xi[k].transpose();
        grads.b_w += &dxi_next * tape.we[k].transpose();
        d_xi[k] += ctx.a_m.transpose() * &dxi_next;
        d_we[k] += ctx.params.b_w.transpose() * &dxi_next;

        // ũ_b(k) = C_m tanh(ξ(k)) + D_m ŵ_e(k)
        let tanh_xi = tape.xi[k].map(f64::tanh);
        grads.c_m += &d_ut[k] * tanh_xi.transpose();
        grads.d_m += &d_ut[k] * tape.we[k].transpose();
        let sech2 = tape.xi[k].map(|v| 1.0 - v.tanh() * v.tanh());
        d_xi[k] += (ctx.params.c_m.transpose() * &d_ut[k]).component_mul(&sech2);
        d_we[k] += ctx.params.d_m.transpose() * &d_ut[k];

        // ŵ_e(k) = Δx(k) − f_e(Δx(k−1), Δu(k−1)), k ≥ 1.
        let dwe = d_we[k].clone();
        if k > 0 {
            let (jx_prev, ju_prev) = &jacs[k - 1];
            d_dx[k] += &dwe;
            d_dx[k - 1] -= jx_prev.transpose() * &dwe;
            d_du[k - 1] -= ju_prev.transpose() * &dwe;
        }
        // k = 0: ŵ_e(0) = Δx(0) is an input; nothing to propagate.
    }
}

/// Mean loss over a batch and exact reverse-mode gradients over θ.
pub fn rollout_loss(
    model: &RnnModel,
    equilibrium: &Equilibrium,
    result: &SynthesisResult,
    params: &StableOperatorParams,
    loss: &LossSpec,
    batch: &ScenarioBatch,
) -> Result<(f64, OperatorGradients)> {
    let ctx = OperatorContext::new(params);
    let rpi = Ellipsoid::centered(result.rpi_shape())?;
    let s = batch.len().max(1) as f64;
    let mut total = 0.0;
    let mut grads = OperatorGradients::zeros(params);
    let mut a_m_bar = DMatrix::zeros(params.n_xi, params.n_xi);
    for (dx0, w_seq) in batch.dx0.iter().zip(batch.w.iter()) {
        let tape = rollout_scenario(model, equilibrium, result, &ctx, loss, dx0, w_seq, &rpi)?;
        total += tape.loss;
        backward_scenario(model, result, loss, equilibrium, &ctx, &tape, &mut grads, &mut a_m_bar);
    }
    grads.w = ctx.w_gradient(&a_m_bar);
    grads.scale_mut(1.0 / s);
    Ok((total / s, grads))
}

/// Forward-only batch loss; `params = None` evaluates the u_b ≡ 0 baseline.
pub fn evaluate_loss(
    model: &RnnModel,
    equilibrium: &Equilibrium,
    result: &SynthesisResult,
    params: Option<&StableOperatorParams>,
    loss: &LossSpec,
    batch: &ScenarioBatch,
) -> Result<f64> {
    let zero;
    let params = match params {
        Some(p) => p,
        None => {
            zero = StableOperatorParams {
                n_xi: 1,
                rho: 0.95,
                eps: 1e-8,
                w: DMatrix::zeros(1, 1),
                b_w: DMatrix::zeros(1, model.state_dim()),
                c_m: DMatrix::zeros(model.input_dim(), 1),
                d_m: DMatrix::zeros(model.input_dim(), model.state_dim()),
            };
            &zero
        }
    };
    let ctx = OperatorContext::new(params);
    let rpi = Ellipsoid::centered(result.rpi_shape())?;
    let s = batch.len().max(1) as f64;
    let mut total = 0.0;
    for (dx0, w_seq) in batch.dx0.iter().zip(batch.w.iter()) {
        let tape = rollout_scenario(model, equilibrium, result, &ctx, loss, dx0, w_seq, &rpi)?;
        total += tape.loss;
    }
    Ok(total / s)
}

/// Mean acid-side deviation Σ_k max(10^(−y(k)) − 10^(−ȳ), 0) over a batch.
pub fn acid_deviation(
    model: &RnnModel,
    equilibrium: &Equilibrium,
    result: &SynthesisResult,
    params: Option<&StableOperatorParams>,
    y_bar: f64,
    batch: &ScenarioBatch,
) -> Result<f64> {
    // Reuse the rollout with a zero-weight loss; only trajectories matter.
    let probe = LossSpec {
        omega1: 0.0,
        omega2: 0.0,
        omega3: 0.0,
        y_bar,
        u_m: f64::INFINITY,
        tracking: TrackingTerm::Quadratic,
    };
    let zero;
    let params = match params {
        Some(p) => p,
        None => {
            zero = StableOperatorParams {
                n_xi: 1,
                rho: 0.95,
                eps: 1e-8,
                w: DMatrix::zeros(1, 1),
                b_w: DMatrix::zeros(1, model.state_dim()),
                c_m: DMatrix::zeros(model.input_dim(), 1),
                d_m: DMatrix::zeros(model.input_dim(), model.state_dim()),
            };
            &zero
        }
    };
    let ctx = OperatorContext::new(params);
    let rpi = Ellipsoid::centered(result.rpi_shape())?;
    let target = 10f64.powf(-y_bar);
    let mut total = 0.0;
    for (dx0, w_seq) in batch.dx0.iter().zip(batch.w.iter()) {
        let tape = rollout_scenario(model, equilibrium, result, &ctx, &probe, dx0, w_seq, &rpi)?;
        for y in &tape.y {
            for r in 0..y.len() {
                total += (10f64.powf(-y[r]) - target).max(0.0);
            }
        }
    }
    Ok(total / batch.len().max(1) as f64)
}

/// First-order update rule configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub step_size: f64,
    pub momentum: f64,
    /// Global gradient-norm clip; 0 disables clipping.
    pub grad_clip: f64,
    pub epochs: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            step_size: 0.05,
            momentum: 0.8,
            grad_clip: 10.0,
            epochs: 20,
        }
    }
}

/// Any first-order update rule over the flattened parameters.
pub trait UpdateRule {
    fn update(&mut self, theta: &[f64], gradient: &[f64]) -> Vec<f64>;
}

/// Plain momentum descent, the reference rule.
pub struct MomentumRule {
    step_size: f64,
    momentum: f64,
    velocity: Vec<f64>,
}

impl MomentumRule {
    pub fn new(step_size: f64, momentum: f64, dim: usize) -> Self {
        MomentumRule {
            step_size,
            momentum,
            velocity: vec![0.0; dim],
        }
    }
}

impl UpdateRule for MomentumRule {
    fn update(&mut self, theta: &[f64], gradient: &[f64]) -> Vec<f64> {
        let mut next = vec![0.0; theta.len()];
        for i in 0..theta.len() {
            self.velocity[i] = self.momentum * self.velocity[i] - self.step_size * gradient[i];
            next[i] = theta[i] + self.velocity[i];
        }
        next
    }
}

/// Loss trace plus per-epoch parameter snapshots.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainHistory {
    pub losses: Vec<f64>,
    pub snapshots: Vec<StableOperatorParams>,
    pub best_epoch: usize,
    pub early_stopped: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stop_reason: Option<String>,
}

/// Momentum descent over the rollout loss. Returns the best iterate and the
/// full history; every recorded iterate is a usable controller.
pub fn train(
    model: &RnnModel,
    equilibrium: &Equilibrium,
    result: &SynthesisResult,
    loss: &LossSpec,
    batch: &ScenarioBatch,
    init: &StableOperatorParams,
    config: &OptimizerConfig,
) -> Result<(StableOperatorParams, TrainHistory)> {
    let mut rule = MomentumRule::new(config.step_size, config.momentum, init.to_flat().len());
    train_with_rule(
        model,
        equilibrium,
        result,
        loss,
        batch,
        init,
        &mut rule,
        config.grad_clip,
        config.epochs,
    )
}

/// Training loop over an arbitrary first-order update rule.
#[allow(clippy::too_many_arguments)]
pub fn train_with_rule(
    model: &RnnModel,
    equilibrium: &Equilibrium,
    result: &SynthesisResult,
    loss: &LossSpec,
    batch: &ScenarioBatch,
    init: &StableOperatorParams,
    rule: &mut dyn UpdateRule,
    grad_clip: f64,
    epochs: usize,
) -> Result<(StableOperatorParams, TrainHistory)> {
    let mut theta = init.clone();
    let mut losses = Vec::with_capacity(epochs + 1);
    let mut snapshots = Vec::with_capacity(epochs + 1);

    let mut best_epoch = 0usize;
    let mut best_loss = f64::INFINITY;

    for epoch in 0..=epochs {
        let (value, grads) = rollout_loss(model, equilibrium, result, &theta, loss, batch)?;
        if !value.is_finite() {
            return Err(Error::NonFiniteTraining {
                what: "loss",
                epoch,
            });
        }
        if !grads.is_finite() {
            return Err(Error::NonFiniteTraining {
                what: "gradient",
                epoch,
            });
        }
        losses.push(value);
        snapshots.push(theta.clone());
        if value < best_loss {
            best_loss = value;
            best_epoch = epoch;
        }
        if epoch == epochs {
            break;
        }

        let mut g = grads;
        if grad_clip > 0.0 {
            let norm = g.norm();
            if norm > grad_clip {
                g.scale_mut(grad_clip / norm);
            }
        }
        let next = rule.update(&theta.to_flat(), &g.to_flat());
        theta = theta.from_flat(&next);
    }

    let final_loss = *losses.last().unwrap();
    let early_stopped = final_loss > losses[0];
    let stop_reason = early_stopped.then(|| {
        format!(
            "final loss {final_loss:.6e} above initial {:.6e}; returning epoch {best_epoch}",
            losses[0]
        )
    });
    let best = snapshots[best_epoch].clone();
    Ok((
        best,
        TrainHistory {
            losses,
            snapshots,
            best_epoch,
            early_stopped,
            stop_reason,
        },
    ))
}
