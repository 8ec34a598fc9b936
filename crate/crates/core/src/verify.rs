//! Standard verification bundle: the three certificate checks plus the
//! projection oracle, runnable against any (model, constraints, synthesis,
//! operator) tuple regardless of where it was produced.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::certificates::{
    build_certificate, check_constraints_along, check_lp_bound, check_rpi_montecarlo,
    CheckReport, Ellipsoid, NormIndex,
};
use crate::error::Result;
use crate::imc::{
    nominal_controller, project_box, project_box_qp_oracle, simulate_closed_loop, BoostOperator,
    ZeroOperator,
};
use crate::model::{ConstraintSets, Equilibrium, RnnModel};
use crate::operator::{StableOperator, StableOperatorParams};
use crate::rng::{split_seed, SplitRng};
use crate::synthesis::SynthesisResult;
use crate::trajectory::Trajectory;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VerifyOptions {
    pub samples: u64,
    pub scenarios: usize,
    pub p: NormIndex,
    pub horizon: usize,
    pub seed: u64,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions {
            samples: 10_000,
            scenarios: 20,
            p: NormIndex::Two,
            horizon: 300,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VerifyReport {
    pub pass: bool,
    pub checks: Vec<CheckReport>,
}

pub fn operator_for(theta: Option<&StableOperatorParams>, m: usize) -> Box<dyn BoostOperator> {
    match theta {
        Some(p) => Box::new(StableOperator::new(p)),
        None => Box::new(ZeroOperator::new(m)),
    }
}

pub fn sample_disturbances(
    constraints: &ConstraintSets,
    horizon: usize,
    rng: &mut SplitRng,
) -> Result<Vec<DVector<f64>>> {
    let dist = Ellipsoid::centered(constraints.q_w0.clone())?;
    Ok((0..horizon).map(|_| dist.sample_uniform(rng)).collect())
}

/// One admissible closed-loop run from a seeded random initial deviation
/// and disturbance sequence.
pub fn simulate_random_run(
    model: &RnnModel,
    equilibrium: &Equilibrium,
    constraints: &ConstraintSets,
    result: &SynthesisResult,
    theta: Option<&StableOperatorParams>,
    seed: u64,
    horizon: usize,
) -> Result<Trajectory> {
    let (mut controller, rpi) = nominal_controller(model, equilibrium, result)?;
    let mut rng = SplitRng::new(seed, 0x53_49_4D); // "SIM"
    let dx0 = rpi.sample_uniform(&mut rng);
    let x0 = &equilibrium.x_bar + dx0;
    let w = sample_disturbances(constraints, horizon, &mut rng)?;
    let mut op = operator_for(theta, model.input_dim());
    simulate_closed_loop(
        model,
        &mut controller,
        &result.boost_box,
        &rpi,
        op.as_mut(),
        &x0,
        &w,
    )
}

/// Runs the invariance Monte-Carlo check, constraint and ℓp checks along
/// simulated closed-loop runs, and the projection oracle.
pub fn run_verification(
    model: &RnnModel,
    equilibrium: &Equilibrium,
    constraints: &ConstraintSets,
    result: &SynthesisResult,
    theta: Option<&StableOperatorParams>,
    opts: &VerifyOptions,
) -> Result<VerifyReport> {
    let mut checks = Vec::new();
    checks.push(check_rpi_montecarlo(
        model,
        result,
        equilibrium,
        constraints,
        opts.samples,
        split_seed(opts.seed, 10),
    )?);

    let certificate = build_certificate(result, opts.p)?;
    let mut worst_constraint = CheckReport {
        condition: "constraint_satisfaction".into(),
        pass: true,
        worst_violation: 0.0,
        samples: 0,
        seed: opts.seed,
        note: None,
    };
    let mut worst_lp = CheckReport {
        condition: format!("lp_bound_p{}", opts.p),
        pass: true,
        worst_violation: 0.0,
        samples: 0,
        seed: opts.seed,
        note: None,
    };
    for s in 0..opts.scenarios {
        let traj = simulate_random_run(
            model,
            equilibrium,
            constraints,
            result,
            theta,
            split_seed(split_seed(opts.seed, 20), s as u64),
            opts.horizon,
        )?;
        let c = check_constraints_along(&traj, constraints);
        worst_constraint.pass &= c.pass;
        worst_constraint.worst_violation = worst_constraint.worst_violation.max(c.worst_violation);
        worst_constraint.samples += c.samples;
        let l = check_lp_bound(&traj, equilibrium, &certificate);
        worst_lp.pass &= l.pass;
        worst_lp.worst_violation = worst_lp.worst_violation.max(l.worst_violation);
        worst_lp.samples += 1;
    }
    checks.push(worst_constraint);
    checks.push(worst_lp);

    let mut rng = SplitRng::new(split_seed(opts.seed, 30), 0);
    let hw = result.boost_box.half_widths();
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let point = DVector::from_fn(hw.len(), |i, _| rng.uniform(-4.0 * hw[i], 4.0 * hw[i]));
        let fast = project_box(&point, &result.boost_box);
        let slow = project_box_qp_oracle(&point, &result.boost_box);
        worst = worst.max((fast - slow).amax());
    }
    checks.push(CheckReport {
        condition: "projection_oracle".into(),
        pass: worst <= 1e-10,
        worst_violation: worst,
        samples: 1000,
        seed: opts.seed,
        note: None,
    });

    let pass = checks.iter().all(|c| c.pass);
    Ok(VerifyReport { pass, checks })
}
