//! The projected internal-model-control layer.
//!
//! The boosting input is u_b(k) = Π_Ub(M(ŵ_e(k))) where ŵ_e is rebuilt
//! online from the deviation state and an internal model of the
//! pre-stabilized error dynamics: ŵ_e(0) = Δx(0) and, for k ≥ 1,
//! ŵ_e(k) = Δx(k) − f_e(Δx(k−1), Δu(k−1)). Under a perfect model this is
//! exactly the exogenous sequence (Δx(0), w(0), w(1), …), so the operator M
//! sees a signal that does not depend on its own parameters.
//!
//! The projection onto the symmetric box U_b is the closed form
//! Π(ũ) = G_b⁻¹ · clip(G_b ũ) with componentwise clip to [−1, 1].
//!
//! The boost set is restricted to symmetric axis-aligned boxes throughout:
//! symmetry is what makes any admissible closed-loop behavior realizable
//! by replaying −K Ψ^Δx + Ψ^Δu through the projection without clipping it.

use nalgebra::{DMatrix, DVector};

use crate::certificates::Ellipsoid;
use crate::error::{Error, Result};
use crate::model::{Equilibrium, RnnModel};
use crate::synthesis::{BoostBox, SynthesisResult};
use crate::trajectory::{Trajectory, TrajectoryStep};

/// A causal operator producing the pre-projection boost signal, one sample
/// per step of the reconstructed exogenous input.
pub trait BoostOperator {
    fn step(&mut self, w_e: &DVector<f64>) -> DVector<f64>;
    fn reset(&mut self);
}

/// The u_b ≡ 0 baseline.
#[derive(Debug, Clone, Default)]
pub struct ZeroOperator {
    m: usize,
}

impl ZeroOperator {
    pub fn new(m: usize) -> Self {
        ZeroOperator { m }
    }
}

impl BoostOperator for ZeroOperator {
    fn step(&mut self, _w_e: &DVector<f64>) -> DVector<f64> {
        DVector::zeros(self.m)
    }
    fn reset(&mut self) {}
}

/// Replays a recorded output sequence; used to realize closed-loop maps of
/// the form M = −K Ψ^Δx + Ψ^Δu.
#[derive(Debug, Clone)]
pub struct ReplayOperator {
    outputs: Vec<DVector<f64>>,
    cursor: usize,
}

impl ReplayOperator {
    pub fn new(outputs: Vec<DVector<f64>>) -> Self {
        ReplayOperator { outputs, cursor: 0 }
    }
}

impl BoostOperator for ReplayOperator {
    fn step(&mut self, _w_e: &DVector<f64>) -> DVector<f64> {
        let out = self.outputs[self.cursor.min(self.outputs.len() - 1)].clone();
        self.cursor += 1;
        out
    }
    fn reset(&mut self) {
        self.cursor = 0;
    }
}

/// Internal model state for exogenous-signal reconstruction.
#[derive(Debug, Clone)]
pub struct ImcState {
    pub model: RnnModel,
    pub equilibrium: Equilibrium,
    pub k_gain: DMatrix<f64>,
    prev: Option<(DVector<f64>, DVector<f64>)>,
    history: Option<std::collections::VecDeque<DVector<f64>>>,
    history_cap: usize,
}

impl ImcState {
    pub fn new(model: RnnModel, equilibrium: Equilibrium, k_gain: DMatrix<f64>) -> Self {
        ImcState {
            model,
            equilibrium,
            k_gain,
            prev: None,
            history: None,
            history_cap: 0,
        }
    }

    /// Enables a bounded ring buffer of reconstructed samples.
    pub fn with_history(mut self, cap: usize) -> Self {
        self.history = Some(std::collections::VecDeque::with_capacity(cap));
        self.history_cap = cap;
        self
    }

    pub fn history(&self) -> Option<&std::collections::VecDeque<DVector<f64>>> {
        self.history.as_ref()
    }

    /// The deterministic part of the error dynamics,
    /// f_e(Δx, Δu) = step(x̄ + Δx, ū + Δu) − x̄ with w = 0.
    pub fn f_e(&self, dx: &DVector<f64>, du: &DVector<f64>) -> DVector<f64> {
        error_dynamics(&self.model, &self.equilibrium, dx, du)
    }

    /// Reconstructs ŵ_e(k) from the current deviation state, then arms the
    /// recursion with it. Call exactly once per step, in step order.
    pub fn reconstruct_we(&mut self, dx_now: &DVector<f64>) -> DVector<f64> {
        let we = match &self.prev {
            None => dx_now.clone(),
            Some((dx_prev, du_prev)) => dx_now - self.f_e(dx_prev, du_prev),
        };
        if let Some(h) = &mut self.history {
            if h.len() == self.history_cap && self.history_cap > 0 {
                h.pop_front();
            }
            h.push_back(we.clone());
        }
        we
    }

    /// Records (Δx(k), Δu(k)) after the input has been applied.
    pub fn commit(&mut self, dx: DVector<f64>, du: DVector<f64>) {
        self.prev = Some((dx, du));
    }

    pub fn reset(&mut self) {
        self.prev = None;
        if let Some(h) = &mut self.history {
            h.clear();
        }
    }
}

/// Deterministic part of the pre-stabilized error dynamics for an explicit
/// model/equilibrium pair.
pub fn error_dynamics(
    model: &RnnModel,
    equilibrium: &Equilibrium,
    dx: &DVector<f64>,
    du: &DVector<f64>,
) -> DVector<f64> {
    let x = &equilibrium.x_bar + dx;
    let u = &equilibrium.u_bar + du;
    let v = model.v(&x, &u);
    &model.a_x * x + &model.b_u * u + &model.b_sigma * model.sigma(&v) - &equilibrium.x_bar
}

/// Euclidean projection onto the boost box: G_b⁻¹ · clip(G_b ũ).
pub fn project_box(u_tilde: &DVector<f64>, boost_box: &BoostBox) -> DVector<f64> {
    DVector::from_fn(u_tilde.len(), |i, _| {
        let g = boost_box.g_b[i];
        (g * u_tilde[i]).clamp(-1.0, 1.0) / g
    })
}

/// Independent projection oracle: per-coordinate golden-section search on
/// the 1-D quadratics the diagonal QP decouples into.
pub fn project_box_qp_oracle(u_tilde: &DVector<f64>, boost_box: &BoostBox) -> DVector<f64> {
    let phi = (5.0_f64.sqrt() - 1.0) / 2.0;
    DVector::from_fn(u_tilde.len(), |i, _| {
        let half = 1.0 / boost_box.g_b[i];
        let target = u_tilde[i];
        let objective = |v: f64| (v - target) * (v - target);
        let (mut lo, mut hi) = (-half, half);
        let mut c = hi - phi * (hi - lo);
        let mut d = lo + phi * (hi - lo);
        let (mut fc, mut fd) = (objective(c), objective(d));
        for _ in 0..200 {
            if hi - lo < 1e-14 * half.max(1.0) {
                break;
            }
            if fc < fd {
                hi = d;
                d = c;
                fd = fc;
                c = hi - phi * (hi - lo);
                fc = objective(c);
            } else {
                lo = c;
                c = d;
                fc = fd;
                d = lo + phi * (hi - lo);
                fd = objective(d);
            }
        }
        0.5 * (lo + hi)
    })
}

/// Applies the projection to an operator output; the result is guaranteed
/// to lie in U_b.
pub fn boost_input(operator_output: &DVector<f64>, boost_box: &BoostBox) -> DVector<f64> {
    project_box(operator_output, boost_box)
}

/// Composite control input u = ū + K Δx + u_b.
pub fn composite_input(
    k_gain: &DMatrix<f64>,
    dx_now: &DVector<f64>,
    u_b: &DVector<f64>,
    u_bar: &DVector<f64>,
) -> DVector<f64> {
    u_bar + k_gain * dx_now + u_b
}

/// Detuning bound on the operator gain that keeps the loop ℓp-stable under
/// a model mismatch of gain `gamma_delta`: γ(M) < 1/(γ_Δ (γ_F̃e + 1)).
pub fn mismatch_gain_budget(gamma_delta: f64, gamma_fe: f64) -> f64 {
    assert!(gamma_delta >= 0.0 && gamma_fe >= 0.0);
    if gamma_delta == 0.0 {
        f64::INFINITY
    } else {
        1.0 / (gamma_delta * (gamma_fe + 1.0))
    }
}

/// Closed-loop simulation of the plant under u = ū + KΔx + Π_Ub(M(ŵ_e)).
///
/// `plant` generates the true states; `controller` holds the internal model
/// used for reconstruction (pass the same model for the nominal case). The
/// run refuses to start outside the invariant set.
#[allow(clippy::too_many_arguments)]
pub fn simulate_closed_loop(
    plant: &RnnModel,
    controller: &mut ImcState,
    boost_box: &BoostBox,
    rpi: &Ellipsoid,
    operator: &mut dyn BoostOperator,
    x0: &DVector<f64>,
    disturbances: &[DVector<f64>],
) -> Result<Trajectory> {
    controller.reset();
    operator.reset();
    let eq = controller.equilibrium.clone();
    let dx0 = x0 - &eq.x_bar;
    let membership = rpi.membership(&dx0);
    if membership > 1.0 + 1e-12 {
        return Err(Error::StartOutsideInvariantSet { membership });
    }

    let mut x = x0.clone();
    let mut steps = Vec::with_capacity(disturbances.len());
    for (k, w) in disturbances.iter().enumerate() {
        let dx = &x - &eq.x_bar;
        let w_e_hat = controller.reconstruct_we(&dx);
        let u_b_tilde = operator.step(&w_e_hat);
        let u_b = project_box(&u_b_tilde, boost_box);
        let u = composite_input(&controller.k_gain, &dx, &u_b, &eq.u_bar);
        let y = &plant.c * &x;
        let du = &u - &eq.u_bar;
        controller.commit(dx.clone(), du);

        let x_next = plant.step(&x, &u, w)?;
        steps.push(TrajectoryStep {
            k,
            x: x.clone(),
            u,
            y,
            u_b,
            u_b_tilde,
            w: w.clone(),
            w_e_hat,
        });
        x = x_next;
    }
    Ok(Trajectory { steps })
}

/// Convenience constructor for the nominal loop implied by a synthesis
/// result.
pub fn nominal_controller(
    model: &RnnModel,
    equilibrium: &Equilibrium,
    result: &SynthesisResult,
) -> Result<(ImcState, Ellipsoid)> {
    let rpi = Ellipsoid::centered(result.rpi_shape())?;
    Ok((
        ImcState::new(model.clone(), equilibrium.clone(), result.k.clone()),
        rpi,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::activation::Activation;
    use crate::rng::SplitRng;
    use nalgebra::dmatrix;

    fn toy() -> (RnnModel, Equilibrium) {
        let model = RnnModel::new(
            dmatrix![0.6, 0.1; 0.0, 0.5],
            dmatrix![1.0; 0.3],
            dmatrix![0.2, 0.0; 0.0, 0.1],
            dmatrix![0.4, -0.1; 0.2, 0.3],
            dmatrix![0.1; -0.2],
            dmatrix![1.0, 0.0],
            vec![Activation::Tanh, Activation::Tanh],
        )
        .unwrap();
        let eq = model
            .find_equilibrium(
                &DVector::from_vec(vec![0.4]),
                &DVector::zeros(2),
                200,
            )
            .unwrap();
        (model, eq)
    }

    #[test]
    fn projection_examples() {
        let b2 = BoostBox::new(DVector::from_vec(vec![2.0])).unwrap();
        let p = project_box(&DVector::from_vec(vec![1.0]), &b2);
        assert!((p[0] - 0.5).abs() < 1e-15);
        let p = project_box(&DVector::from_vec(vec![0.3]), &b2);
        assert!((p[0] - 0.3).abs() < 1e-15);

        let b = BoostBox::new(DVector::from_vec(vec![1.0, 4.0])).unwrap();
        let p = project_box(&DVector::from_vec(vec![-3.0, 0.1]), &b);
        assert!((p[0] + 1.0).abs() < 1e-15);
        assert!((p[1] - 0.1).abs() < 1e-15);
    }

    #[test]
    fn projection_matches_qp_oracle() {
        let b = BoostBox::new(DVector::from_vec(vec![0.7, 3.0, 1.5])).unwrap();
        let mut rng = SplitRng::new(11, 0);
        for _ in 0..1000 {
            let u = DVector::from_fn(3, |_, _| rng.uniform(-5.0, 5.0));
            let fast = project_box(&u, &b);
            let slow = project_box_qp_oracle(&u, &b);
            assert!((fast - slow).norm() <= 1e-10);
        }
    }

    #[test]
    fn projection_is_nonexpansive() {
        let b = BoostBox::new(DVector::from_vec(vec![0.5, 2.0])).unwrap();
        let mut rng = SplitRng::new(12, 0);
        for _ in 0..1000 {
            let a = DVector::from_fn(2, |_, _| rng.uniform(-4.0, 4.0));
            let c = DVector::from_fn(2, |_, _| rng.uniform(-4.0, 4.0));
            let pa = project_box(&a, &b);
            let pc = project_box(&c, &b);
            assert!((pa - pc).norm() <= (a - c).norm() + 1e-15);
        }
    }

    #[test]
    fn composite_input_identities() {
        let k = dmatrix![0.5, -0.2];
        let ubar = DVector::from_vec(vec![1.0]);
        let dx0 = DVector::zeros(2);
        let ub0 = DVector::zeros(1);
        assert_eq!(composite_input(&k, &dx0, &ub0, &ubar), ubar);
        let kzero = dmatrix![0.0, 0.0];
        let ub = DVector::from_vec(vec![0.3]);
        let dx = DVector::from_vec(vec![5.0, -2.0]);
        let got = composite_input(&kzero, &dx, &ub, &ubar);
        assert!((got[0] - 1.3).abs() < 1e-15);
    }

    #[test]
    fn gain_budget_values() {
        assert_eq!(mismatch_gain_budget(0.0, 7.0), f64::INFINITY);
        assert!((mismatch_gain_budget(0.5, 1.0) - 1.0).abs() < 1e-15);
        assert!((mismatch_gain_budget(1.0, 3.0) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn reconstruction_recovers_disturbance_under_perfect_model() {
        let (model, eq) = toy();
        let k = dmatrix![-0.2, -0.1];
        let mut ctrl = ImcState::new(model.clone(), eq.clone(), k);
        let rpi = Ellipsoid::centered(DMatrix::<f64>::identity(2, 2) * 1e-2).unwrap();
        let mut rng = SplitRng::new(5, 1);
        let ws: Vec<DVector<f64>> = (0..300)
            .map(|_| DVector::from_fn(2, |_, _| rng.uniform(-0.01, 0.01)))
            .collect();
        let x0 = &eq.x_bar + DVector::from_vec(vec![0.05, -0.02]);
        let mut op = ZeroOperator::new(1);
        let traj =
            simulate_closed_loop(&model, &mut ctrl, &ctrl_box(), &rpi, &mut op, &x0, &ws).unwrap();

        // ŵ_e(0) = Δx(0); ŵ_e(k) = w(k−1) exactly up to rounding.
        let dx0 = &traj.steps[0].x - &eq.x_bar;
        assert!((&traj.steps[0].w_e_hat - dx0).norm() == 0.0);
        let mut worst = 0.0f64;
        for k in 1..traj.steps.len() {
            let err = (&traj.steps[k].w_e_hat - &traj.steps[k - 1].w)
                .amax();
            worst = worst.max(err);
        }
        assert!(worst <= 1e-12, "reconstruction error {worst:.3e}");
    }

    fn ctrl_box() -> BoostBox {
        BoostBox::new(DVector::from_vec(vec![10.0])).unwrap()
    }

    #[test]
    fn mismatch_produces_nonzero_reconstruction_bias() {
        let (model, eq) = toy();
        let mut wrong = model.clone();
        wrong.a_x[(0, 0)] += 0.05;
        let k = dmatrix![-0.2, -0.1];
        let mut ctrl = ImcState::new(wrong, eq.clone(), k);
        let rpi = Ellipsoid::centered(DMatrix::<f64>::identity(2, 2) * 1e-2).unwrap();
        let ws: Vec<DVector<f64>> = (0..20).map(|_| DVector::zeros(2)).collect();
        let x0 = &eq.x_bar + DVector::from_vec(vec![0.05, 0.0]);
        let mut op = ZeroOperator::new(1);
        let traj =
            simulate_closed_loop(&model, &mut ctrl, &ctrl_box(), &rpi, &mut op, &x0, &ws).unwrap();
        // With w ≡ 0 a perfect model reconstructs zero; the mismatch shows up.
        let bias = traj.steps[1].w_e_hat.norm();
        assert!(bias > 1e-6, "expected visible mismatch, got {bias:.3e}");
    }

    #[test]
    fn refuses_to_start_outside_rpi() {
        let (model, eq) = toy();
        let k = dmatrix![-0.2, -0.1];
        let mut ctrl = ImcState::new(model.clone(), eq.clone(), k);
        let rpi = Ellipsoid::centered(DMatrix::<f64>::identity(2, 2) * 1e4).unwrap();
        let x0 = &eq.x_bar + DVector::from_vec(vec![1.0, 0.0]);
        let mut op = ZeroOperator::new(1);
        let err = simulate_closed_loop(
            &model,
            &mut ctrl,
            &ctrl_box(),
            &rpi,
            &mut op,
            &x0,
            &[DVector::zeros(2)],
        )
        .unwrap_err();
        assert!(matches!(err, Error::StartOutsideInvariantSet { .. }));
    }
}
