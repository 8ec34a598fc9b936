//! End-to-end demo on the pH-style preset: synthesize the stabilizing
//! gain, train the boosting operator, and compare the closed loop against
//! the zero-boost baseline.
//!
//! Run with `cargo run --release --example ph_demo`.

use rnnboost::bench::{generate_benchmark, BenchmarkSpec};
use rnnboost::trainer::{
    acid_deviation, evaluate_loss, sample_scenarios, train, Envelope, LossSpec, OptimizerConfig,
};
use rnnboost::{
    run_verification, StableOperatorParams, SynthesisOptions, VerifyOptions,
};

fn main() -> rnnboost::Result<()> {
    let spec = BenchmarkSpec::ph_like(1);
    let bench = generate_benchmark(&spec)?;
    println!(
        "plant: n = {}, channels = {}, u in [{}, {}], y in [{}, {}]",
        bench.model.state_dim(),
        bench.model.channel_dim(),
        -bench.constraints.b_u[1],
        bench.constraints.b_u[0],
        -bench.constraints.b_y[1],
        bench.constraints.b_y[0],
    );

    let options = SynthesisOptions {
        g_b_init: spec.designer_boost_scales(),
        ..SynthesisOptions::default()
    };
    let result = rnnboost::synthesize(&bench.model, &bench.equilibrium, &bench.constraints, &options)?;
    println!(
        "synthesized gain, gamma_s = {}, sector levels = {:?}",
        result.gamma_s,
        result.h_s.as_slice()
    );
    for (cond, margin) in &result.residuals {
        println!("  condition {cond}: margin {margin:+.3e}");
    }

    let report = run_verification(
        &bench.model,
        &bench.equilibrium,
        &bench.constraints,
        &result,
        None,
        &VerifyOptions::default(),
    )?;
    println!("verification (baseline loop): pass = {}", report.pass);

    let batch = sample_scenarios(&bench.constraints, &result, 16, 100, 1, Envelope::full(100))?;
    let held = sample_scenarios(&bench.constraints, &result, 20, 120, 2, Envelope::full(120))?;
    let u_m = 0.8 * result.boost_box.half_widths().min();
    let y_bar = bench.equilibrium.y_bar[0];
    let loss = LossSpec::ph_preset(y_bar, u_m);
    let init = StableOperatorParams::zero_output_init(8, bench.model.state_dim(), 1, 3);
    let config = OptimizerConfig {
        step_size: 0.08,
        momentum: 0.85,
        grad_clip: 5.0,
        epochs: 100,
    };
    let (theta, history) = train(&bench.model, &bench.equilibrium, &result, &loss, &batch, &init, &config)?;
    println!(
        "training: epoch-0 loss {:.6}, best {:.6} at epoch {}",
        history.losses[0],
        history.losses[history.best_epoch],
        history.best_epoch
    );

    let j_zero = evaluate_loss(&bench.model, &bench.equilibrium, &result, None, &loss, &held)?;
    let j_star = evaluate_loss(&bench.model, &bench.equilibrium, &result, Some(&theta), &loss, &held)?;
    let acid_zero = acid_deviation(&bench.model, &bench.equilibrium, &result, None, y_bar, &held)?;
    let acid_star = acid_deviation(&bench.model, &bench.equilibrium, &result, Some(&theta), y_bar, &held)?;
    println!(
        "held-out loss: baseline {j_zero:.6} -> boosted {j_star:.6} ({:+.2}%)",
        100.0 * (j_star - j_zero) / j_zero
    );
    println!(
        "held-out acid deviations: baseline {acid_zero:.4e} -> boosted {acid_star:.4e} ({:+.2}%)",
        100.0 * (acid_star - acid_zero) / acid_zero
    );
    Ok(())
}
