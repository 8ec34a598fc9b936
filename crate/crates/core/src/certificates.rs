//! Stability certificates and falsification-style checks.
//!
//! From a synthesis result this module derives the decay/gain constants of
//! the closed-loop error system and provides three report-producing checks:
//! Monte-Carlo invariance of E(P_s/γ_s) ⊕ x̄, pointwise constraint
//! satisfaction along a trajectory, and the finite-horizon ℓp bounds
//!
//! ```text
//! ‖Δx‖_p ≤ (κ₀ μ_p + κ₁/(1−a)) ‖w_e‖_p + κ₁/(1−a) ‖u_b‖_p
//! ‖Δu‖_p ≤ |K|_p (κ₀ μ_p + κ₁/(1−a)) ‖w_e‖_p + (|K|_p κ₁/(1−a) + 1) ‖u_b‖_p
//! ```
//!
//! with a² = 1 − σ_x/λ_max(P_s), κ₀² = λ_max(P_s)/λ_min(P_s),
//! κ₁² = σ_w_s/λ_min(P_s), σ_x = λ_min(P_s Q̃_s,x P_s),
//! σ_w_s = λ_max(Q_s,w_s), and μ_p = (1/(1−a^p))^{1/p} (μ_∞ = 1).
//! Sequence p-norms use the Euclidean norm of each sample.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ConstraintSets, Equilibrium, RnnModel};
use crate::rng::{split_seed, SplitRng};
use crate::synthesis::SynthesisResult;
use crate::trajectory::Trajectory;

/// The ellipsoid {v : (v − center)ᵀ · shape · (v − center) ≤ 1}.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ellipsoid {
    #[serde(with = "crate::serialize::mat_f64")]
    pub shape: DMatrix<f64>,
    #[serde(with = "crate::serialize::vec_f64")]
    pub center: DVector<f64>,
}

impl Ellipsoid {
    pub fn new(shape: DMatrix<f64>, center: DVector<f64>) -> Result<Self> {
        if shape.nrows() != shape.ncols() || shape.nrows() != center.len() {
            return Err(Error::Invalid("ellipsoid dimensions inconsistent".into()));
        }
        if shape.clone().cholesky().is_none() {
            return Err(Error::NotPositiveDefinite("ellipsoid shape"));
        }
        Ok(Ellipsoid { shape, center })
    }

    pub fn centered(shape: DMatrix<f64>) -> Result<Self> {
        let n = shape.nrows();
        Ellipsoid::new(shape, DVector::zeros(n))
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    /// Quadratic membership value; ≤ 1 inside.
    pub fn membership(&self, v: &DVector<f64>) -> f64 {
        let d = v - &self.center;
        (d.transpose() * &self.shape * &d)[(0, 0)]
    }

    pub fn contains(&self, v: &DVector<f64>, tol: f64) -> bool {
        self.membership(v) <= 1.0 + tol
    }

    /// Uniform sample on/inside the ellipsoid: a unit-ball sample mapped
    /// through the inverse Cholesky factor of the shape.
    pub fn sample_uniform(&self, rng: &mut SplitRng) -> DVector<f64> {
        self.map_ball_sample(rng.unit_ball(self.dim()))
    }

    /// Sample on the boundary (membership value exactly 1 up to rounding).
    pub fn sample_boundary(&self, rng: &mut SplitRng) -> DVector<f64> {
        let mut z = rng.gaussian_vector(self.dim());
        let norm = z.norm();
        if norm > 0.0 {
            z /= norm;
        }
        self.map_ball_sample(z)
    }

    fn map_ball_sample(&self, z: DVector<f64>) -> DVector<f64> {
        let chol = self
            .shape
            .clone()
            .cholesky()
            .expect("shape validated at construction");
        // v = L⁻ᵀ z satisfies vᵀ(LLᵀ)v = zᵀz ≤ 1.
        let v = chol.l().transpose().solve_upper_triangular(&z).unwrap();
        &self.center + v
    }
}

/// Decay and gain constants of the pre-stabilized error dynamics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StabilityCertificate {
    pub a: f64,
    pub kappa0: f64,
    pub kappa1: f64,
    pub sigma_x: f64,
    pub sigma_ws: f64,
    pub mu_p: f64,
    pub p: NormIndex,
    pub k_norm: f64,
    pub gain_x_we: f64,
    pub gain_x_ub: f64,
    pub gain_u_we: f64,
    pub gain_u_ub: f64,
}

/// The p in ℓp: 1, 2, or ∞.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormIndex {
    One,
    Two,
    Inf,
}

impl NormIndex {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "1" => Ok(NormIndex::One),
            "2" => Ok(NormIndex::Two),
            "inf" | "infinity" | "oo" => Ok(NormIndex::Inf),
            other => Err(Error::Invalid(format!("unknown norm index '{other}'"))),
        }
    }
}

impl std::fmt::Display for NormIndex {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            NormIndex::One => write!(f, "1"),
            NormIndex::Two => write!(f, "2"),
            NormIndex::Inf => write!(f, "inf"),
        }
    }
}

/// ‖(a^k)_{k≥0}‖_p for a ∈ [0, 1).
pub fn mu_p(a: f64, p: NormIndex) -> f64 {
    match p {
        NormIndex::One => 1.0 / (1.0 - a),
        NormIndex::Two => (1.0 / (1.0 - a * a)).sqrt(),
        NormIndex::Inf => 1.0,
    }
}

/// Induced matrix p-norm for p ∈ {1, 2, ∞}.
pub fn matrix_norm(m: &DMatrix<f64>, p: NormIndex) -> f64 {
    match p {
        NormIndex::One => (0..m.ncols())
            .map(|j| m.column(j).iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max),
        NormIndex::Inf => (0..m.nrows())
            .map(|i| m.row(i).iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max),
        NormIndex::Two => {
            if m.nrows() == 0 || m.ncols() == 0 {
                0.0
            } else {
                m.clone().svd(false, false).singular_values[0]
            }
        }
    }
}

fn sym_eig_bounds(m: &DMatrix<f64>) -> (f64, f64) {
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let min = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    let max = eig
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    (min, max)
}

/// Derives the certificate constants from a synthesis result.
pub fn build_certificate(result: &SynthesisResult, p: NormIndex) -> Result<StabilityCertificate> {
    let p_s = &result.p_s;
    let (lambda_min_p, lambda_max_p) = sym_eig_bounds(p_s);
    if lambda_min_p <= 0.0 {
        return Err(Error::DegenerateCertificate(format!(
            "lambda_min(P_s) = {lambda_min_p:.3e} is not positive"
        )));
    }
    let pqp = p_s * &result.qtilde_sx * p_s;
    let (sigma_x, _) = sym_eig_bounds(&pqp);
    let (_, sigma_ws) = sym_eig_bounds(&result.q_sws);

    let a_tilde = 1.0 - sigma_x / lambda_max_p;
    if !(0.0..1.0).contains(&a_tilde) {
        return Err(Error::DegenerateCertificate(format!(
            "a² = 1 − σ_x/λ_max(P_s) = {a_tilde:.6} outside [0, 1); σ_x = λ_min(P_s Q̃_s,x P_s) = {sigma_x:.3e}"
        )));
    }
    let a = a_tilde.sqrt();
    let kappa0 = (lambda_max_p / lambda_min_p).sqrt();
    let kappa1 = (sigma_ws.max(0.0) / lambda_min_p).sqrt();
    let mu = mu_p(a, p);
    let k_norm = matrix_norm(&result.k, p);

    let gain_x_we = kappa0 * mu + kappa1 / (1.0 - a);
    let gain_x_ub = kappa1 / (1.0 - a);
    Ok(StabilityCertificate {
        a,
        kappa0,
        kappa1,
        sigma_x,
        sigma_ws,
        mu_p: mu,
        p,
        k_norm,
        gain_x_we,
        gain_x_ub,
        gain_u_we: k_norm * gain_x_we,
        gain_u_ub: k_norm * kappa1 / (1.0 - a) + 1.0,
    })
}

/// Machine-readable outcome of one check.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckReport {
    pub condition: String,
    pub pass: bool,
    pub worst_violation: f64,
    pub samples: u64,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

/// Monte-Carlo invariance check of E(P_s/γ_s) ⊕ x̄ under the closed loop
/// with arbitrary admissible disturbances and boost inputs.
pub fn check_rpi_montecarlo(
    model: &RnnModel,
    result: &SynthesisResult,
    equilibrium: &Equilibrium,
    constraints: &ConstraintSets,
    samples: u64,
    seed: u64,
) -> Result<CheckReport> {
    let rpi = Ellipsoid::centered(result.rpi_shape())?;
    let dist = Ellipsoid::centered(constraints.q_w0.clone())?;
    let hw = result.boost_box.half_widths();
    let mut worst: f64 = 0.0;

    for i in 0..samples {
        // Each sample owns a derived stream, so the result is independent
        // of how the sample range is split across workers.
        let mut rng = SplitRng::new(split_seed(seed, 0x52_50_49), i); // "RPI"
        // Alternate interior and boundary states; escapes start at the
        // boundary, so this sharpens the falsification power of the check.
        let dx = if i % 2 == 0 {
            rpi.sample_uniform(&mut rng)
        } else {
            rpi.sample_boundary(&mut rng)
        };
        let w = dist.sample_uniform(&mut rng);
        let u_b = DVector::from_fn(hw.len(), |i, _| rng.uniform(-hw[i], hw[i]));
        let x = &equilibrium.x_bar + &dx;
        let u = &equilibrium.u_bar + &result.k * &dx + &u_b;
        let x_next = model.step(&x, &u, &w)?;
        let violation = (rpi.membership(&(x_next - &equilibrium.x_bar)) - 1.0).max(0.0);
        worst = worst.max(violation);
    }

    Ok(CheckReport {
        condition: "rpi_invariance".to_string(),
        pass: worst <= 1e-9,
        worst_violation: worst,
        samples,
        seed,
        note: None,
    })
}

/// Pointwise polytope residuals along a trajectory.
pub fn check_constraints_along(
    trajectory: &Trajectory,
    constraints: &ConstraintSets,
) -> CheckReport {
    let mut worst = f64::NEG_INFINITY;
    for step in &trajectory.steps {
        let su = constraints.input_slack(&step.u);
        let sy = constraints.output_slack(&step.y);
        for s in su.iter().chain(sy.iter()) {
            worst = worst.max(-s);
        }
    }
    if trajectory.steps.is_empty() {
        worst = 0.0;
    }
    CheckReport {
        condition: "constraint_satisfaction".to_string(),
        pass: worst <= 1e-9,
        worst_violation: worst.max(0.0),
        samples: trajectory.steps.len() as u64,
        seed: 0,
        note: None,
    }
}

/// Finite-horizon sequence p-norm with Euclidean sample norms.
pub fn sequence_norm(samples: &[f64], p: NormIndex) -> f64 {
    match p {
        NormIndex::One => samples.iter().sum(),
        NormIndex::Two => samples.iter().map(|v| v * v).sum::<f64>().sqrt(),
        NormIndex::Inf => samples.iter().copied().fold(0.0, f64::max),
    }
}

/// Verifies the ℓp bounds on Δx and Δu over a recorded trajectory.
pub fn check_lp_bound(
    trajectory: &Trajectory,
    equilibrium: &Equilibrium,
    certificate: &StabilityCertificate,
) -> CheckReport {
    let p = certificate.p;
    let t = trajectory.steps.len();

    let dx_norms: Vec<f64> = trajectory
        .steps
        .iter()
        .map(|s| (&s.x - &equilibrium.x_bar).norm())
        .collect();
    let du_norms: Vec<f64> = trajectory
        .steps
        .iter()
        .map(|s| (&s.u - &equilibrium.u_bar).norm())
        .collect();
    let ub_norms: Vec<f64> = trajectory.steps.iter().map(|s| s.u_b.norm()).collect();
    // w_e = (Δx(0), w(0), …, w(T−2)): exactly the exogenous samples that
    // influence Δx(0..T−1).
    let mut we_norms: Vec<f64> = Vec::with_capacity(t);
    if t > 0 {
        we_norms.push(dx_norms[0]);
        for s in trajectory.steps.iter().take(t - 1) {
            we_norms.push(s.w.norm());
        }
    }

    let nx = sequence_norm(&dx_norms, p);
    let nu = sequence_norm(&du_norms, p);
    let nub = sequence_norm(&ub_norms, p);
    let nwe = sequence_norm(&we_norms, p);

    let bound_x = certificate.gain_x_we * nwe + certificate.gain_x_ub * nub;
    let bound_u = certificate.gain_u_we * nwe + certificate.gain_u_ub * nub;
    let slack_x = bound_x - nx;
    let slack_u = bound_u - nu;
    let worst = (-slack_x.min(slack_u)).max(0.0);

    // Tail-energy warning: finite horizons stand in for infinite sequences.
    let tail_note = if t >= 10 {
        let tail_start = t - t / 10;
        let tail = sequence_norm(&dx_norms[tail_start..], p);
        if tail > 0.01 * nx.max(1e-300) {
            Some(format!(
                "tail 10% of the horizon contributes {:.2}% of ‖Δx‖_p; consider a longer horizon",
                100.0 * tail / nx.max(1e-300)
            ))
        } else {
            None
        }
    } else {
        None
    };

    CheckReport {
        condition: format!("lp_bound_p{}", certificate.p),
        pass: slack_x >= 0.0 && slack_u >= 0.0,
        worst_violation: worst,
        samples: t as u64,
        seed: 0,
        note: tail_note,
    }
}
