//! Stage implementations and the staged pipeline runner.
//!
//! Stage failures map to distinct exit codes: 1 config/inputs, 2 synth,
//! 3 train, 4 simulate, 5 verify.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use serde::{Deserialize, Serialize};

use rnnboost::bench::{generate_benchmark, BenchmarkSpec};
use rnnboost::certificates::NormIndex;
use rnnboost::formats::{
    load_constraints, load_json, load_model, save_constraints, save_json, save_model,
};
use rnnboost::model::{ConstraintSets, Equilibrium, RnnModel};
use rnnboost::operator::StableOperatorParams;
use rnnboost::rng::split_seed;
use rnnboost::synthesis::{synthesize, SynthesisOptions, SynthesisResult};
use rnnboost::trainer::{sample_scenarios, train, Envelope, LossSpec, OptimizerConfig};
use rnnboost::verify::{run_verification, simulate_random_run, VerifyOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Config,
    Synth,
    Train,
    Simulate,
    Verify,
}

impl Stage {
    pub fn code(self) -> u8 {
        match self {
            Stage::Config => 1,
            Stage::Synth => 2,
            Stage::Train => 3,
            Stage::Simulate => 4,
            Stage::Verify => 5,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Stage::Config => "config",
            Stage::Synth => "synth",
            Stage::Train => "train",
            Stage::Simulate => "simulate",
            Stage::Verify => "verify",
        }
    }
}

/// Exit code when the verify stage runs but reports failures.
pub const VERIFY_FAILED_CODE: u8 = 5;

#[derive(Debug)]
pub struct StageError {
    pub stage: Stage,
    pub message: String,
}

impl StageError {
    fn new(stage: Stage, message: impl Into<String>) -> Self {
        StageError {
            stage,
            message: message.into(),
        }
    }

    pub fn code(&self) -> u8 {
        self.stage.code()
    }

    pub fn stage_name(&self) -> &'static str {
        self.stage.name()
    }

    pub fn message(&self) -> &str {
        &self.message
    }
}

type StageResult<T> = Result<T, StageError>;

fn in_stage<T>(stage: Stage, r: rnnboost::Result<T>) -> StageResult<T> {
    r.map_err(|e| StageError::new(stage, e.to_string()))
}

// ---------------------------------------------------------------------------
// Bundle I/O
// ---------------------------------------------------------------------------

pub struct Bundle {
    pub model: RnnModel,
    pub equilibrium: Equilibrium,
    pub constraints: ConstraintSets,
    pub benchspec: Option<BenchmarkSpec>,
}

fn load_bundle(dir: &Path) -> StageResult<Bundle> {
    let (model, eq) = in_stage(Stage::Config, load_model(&dir.join("model.json")))?;
    let equilibrium = eq.ok_or_else(|| {
        StageError::new(
            Stage::Config,
            "model.json carries no equilibrium block; synthesize requires one",
        )
    })?;
    let constraints = in_stage(Stage::Config, load_constraints(&dir.join("constraints.json")))?;
    let benchspec = load_json::<BenchmarkSpec>(&dir.join("benchspec.json")).ok();
    Ok(Bundle {
        model,
        equilibrium,
        constraints,
        benchspec,
    })
}

fn load_synthesis(dir: &Path) -> StageResult<SynthesisResult> {
    in_stage(Stage::Config, load_json(&dir.join("synthesis.json")))
}

/// Serialized θ with its provenance.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub params: StableOperatorParams,
    pub epoch: usize,
    pub seed: u64,
}

fn ensure_dir(stage: Stage, dir: &Path) -> StageResult<()> {
    std::fs::create_dir_all(dir)
        .map_err(|e| StageError::new(stage, format!("cannot create {}: {e}", dir.display())))
}

// ---------------------------------------------------------------------------
// Stages
// ---------------------------------------------------------------------------

/// `bench gen`: generate a plant bundle from a named preset.
pub fn stage_generate_named(preset: &str, seed: u64, out: &Path) -> StageResult<()> {
    let spec = parse_preset(preset, seed)?;
    stage_generate(&spec, out)
}

fn parse_preset(preset: &str, seed: u64) -> StageResult<BenchmarkSpec> {
    if preset == "ph-like" {
        return Ok(BenchmarkSpec::ph_like(seed));
    }
    if let Some(n) = preset.strip_prefix("random-") {
        let n: usize = n
            .parse()
            .map_err(|_| StageError::new(Stage::Config, format!("bad preset '{preset}'")))?;
        if !(2..=6).contains(&n) {
            return Err(StageError::new(
                Stage::Config,
                "random preset supports 2..=6 states",
            ));
        }
        return Ok(BenchmarkSpec::random_small(seed, n));
    }
    Err(StageError::new(
        Stage::Config,
        format!("unknown preset '{preset}' (expected ph-like or random-<n>)"),
    ))
}

fn stage_generate(spec: &BenchmarkSpec, out: &Path) -> StageResult<()> {
    ensure_dir(Stage::Config, out)?;
    let b = in_stage(Stage::Config, generate_benchmark(spec))?;
    in_stage(
        Stage::Config,
        save_model(&b.model, Some(&b.equilibrium), &out.join("model.json")),
    )?;
    in_stage(
        Stage::Config,
        save_constraints(&b.constraints, &out.join("constraints.json")),
    )?;
    in_stage(Stage::Config, save_json(spec, &out.join("benchspec.json")))?;
    Ok(())
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct SynthConfig {
    /// Use the designer boost box implied by the benchmark spec when one is
    /// available (the preset's normalised boost magnitude).
    pub use_designer_box: Option<bool>,
    pub options: Option<SynthesisOptions>,
}

pub fn cmd_synth(bundle: &Path, out: Option<&Path>, config: Option<&Path>) -> StageResult<()> {
    let cfg: SynthConfig = match config {
        Some(p) => in_stage(Stage::Config, load_json(p))?,
        None => SynthConfig::default(),
    };
    let b = load_bundle(bundle)?;
    let out = out.unwrap_or(bundle);
    ensure_dir(Stage::Synth, out)?;

    let mut options = cfg.options.unwrap_or_default();
    if options.g_b_init.is_none() && cfg.use_designer_box.unwrap_or(true) {
        if let Some(spec) = &b.benchspec {
            options.g_b_init = spec.designer_boost_scales();
        }
    }
    let result = in_stage(
        Stage::Synth,
        synthesize(&b.model, &b.equilibrium, &b.constraints, &options),
    )?;
    in_stage(Stage::Synth, save_json(&result, &out.join("synthesis.json")))?;
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub scenarios: usize,
    pub horizon: usize,
    pub n_xi: usize,
    pub optimizer: OptimizerConfig,
    /// Soft boost-magnitude bound for the loss; defaults to 80% of the
    /// smallest boost-box half-width.
    pub u_m: Option<f64>,
    /// Tracking term selection; the concentration preset by default.
    pub quadratic_tracking: Option<bool>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            scenarios: 8,
            horizon: 80,
            n_xi: 8,
            optimizer: OptimizerConfig::default(),
            u_m: None,
            quadratic_tracking: None,
        }
    }
}

/// The loss preset for a bundle: targets the equilibrium output, bounds the
/// boost magnitude.
pub fn loss_for_bundle(
    bundle: &Bundle,
    result: &SynthesisResult,
    cfg: &TrainConfig,
) -> LossSpec {
    let y_bar = bundle.equilibrium.y_bar[0];
    let u_m = cfg.u_m.unwrap_or_else(|| {
        let hw = result.boost_box.half_widths();
        0.8 * hw.iter().copied().fold(f64::INFINITY, f64::min)
    });
    if cfg.quadratic_tracking.unwrap_or(false) {
        LossSpec::quadratic(y_bar, u_m, 1.0)
    } else {
        LossSpec::ph_preset(y_bar, u_m)
    }
}

pub fn cmd_train(
    bundle: &Path,
    out: Option<&Path>,
    config: Option<&Path>,
    seed: u64,
    horizon: Option<usize>,
    scenarios: Option<usize>,
) -> StageResult<()> {
    let mut cfg: TrainConfig = match config {
        Some(p) => in_stage(Stage::Config, load_json(p))?,
        None => TrainConfig::default(),
    };
    if let Some(h) = horizon {
        cfg.horizon = h;
    }
    if let Some(s) = scenarios {
        cfg.scenarios = s;
    }
    let b = load_bundle(bundle)?;
    let result = load_synthesis(bundle)?;
    let out = out.unwrap_or(bundle);
    ensure_dir(Stage::Train, out)?;
    let (checkpoint, history) = run_training(&b, &result, &cfg, seed)?;
    in_stage(Stage::Train, save_json(&checkpoint, &out.join("theta.json")))?;
    in_stage(Stage::Train, save_json(&history, &out.join("history.json")))?;
    Ok(())
}

pub fn run_training(
    b: &Bundle,
    result: &SynthesisResult,
    cfg: &TrainConfig,
    seed: u64,
) -> StageResult<(Checkpoint, rnnboost::trainer::TrainHistory)> {
    let batch = in_stage(
        Stage::Train,
        sample_scenarios(
            &b.constraints,
            result,
            cfg.scenarios,
            cfg.horizon,
            split_seed(seed, 1),
            Envelope::full(cfg.horizon),
        ),
    )?;
    let loss = loss_for_bundle(b, result, cfg);
    let init = StableOperatorParams::zero_output_init(
        cfg.n_xi,
        b.model.state_dim(),
        b.model.input_dim(),
        split_seed(seed, 2),
    );
    let (theta, history) = in_stage(
        Stage::Train,
        train(
            &b.model,
            &b.equilibrium,
            result,
            &loss,
            &batch,
            &init,
            &cfg.optimizer,
        ),
    )?;
    Ok((
        Checkpoint {
            params: theta,
            epoch: history.best_epoch,
            seed,
        },
        history,
    ))
}

pub fn cmd_simulate(
    bundle: &Path,
    out: Option<&Path>,
    theta: Option<&Path>,
    seed: u64,
    horizon: usize,
) -> StageResult<()> {
    let b = load_bundle(bundle)?;
    let result = load_synthesis(bundle)?;
    let out = out.unwrap_or(bundle);
    ensure_dir(Stage::Simulate, out)?;
    let theta = match theta {
        Some(p) => Some(in_stage::<Checkpoint>(Stage::Config, load_json(p))?.params),
        None => {
            // Use the bundle's checkpoint when present.
            load_json::<Checkpoint>(&bundle.join("theta.json"))
                .ok()
                .map(|c| c.params)
        }
    };
    let traj = simulate_random_run(
        &b.model,
        &b.equilibrium,
        &b.constraints,
        &result,
        theta.as_ref(),
        seed,
        horizon,
    )
    .map_err(|e| StageError::new(Stage::Simulate, e.to_string()))?;
    traj.export_csv(
        &out.join("trajectory.csv"),
        b.model.state_dim(),
        b.model.input_dim(),
        b.model.output_dim(),
    )
    .map_err(|e| StageError::new(Stage::Simulate, e.to_string()))?;
    Ok(())
}

#[allow(clippy::too_many_arguments)]
pub fn cmd_verify(
    bundle: &Path,
    out: Option<&Path>,
    theta: Option<&Path>,
    seed: u64,
    samples: u64,
    scenarios: usize,
    p: &str,
    horizon: usize,
) -> StageResult<bool> {
    let b = load_bundle(bundle)?;
    let result = load_synthesis(bundle)?;
    let p = in_stage(Stage::Config, NormIndex::parse(p))?;
    let theta = match theta {
        Some(path) => Some(in_stage::<Checkpoint>(Stage::Config, load_json(path))?.params),
        None => load_json::<Checkpoint>(&bundle.join("theta.json"))
            .ok()
            .map(|c| c.params),
    };
    let opts = VerifyOptions {
        samples,
        scenarios,
        p,
        horizon,
        seed,
    };
    let report = run_verification(
        &b.model,
        &b.equilibrium,
        &b.constraints,
        &result,
        theta.as_ref(),
        &opts,
    )
    .map_err(|e| StageError::new(Stage::Verify, e.to_string()))?;
    if let Some(out) = out {
        ensure_dir(Stage::Verify, out)?;
        in_stage(Stage::Verify, save_json(&report, &out.join("report.json")))?;
    } else {
        ensure_dir(Stage::Verify, bundle)?;
        in_stage(Stage::Verify, save_json(&report, &bundle.join("report.json")))?;
    }
    for c in &report.checks {
        println!(
            "{}: {} (worst violation {:.3e})",
            c.condition,
            if c.pass { "pass" } else { "FAIL" },
            c.worst_violation
        );
    }
    Ok(report.pass)
}

// ---------------------------------------------------------------------------
// Pipeline
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub seed: u64,
    pub out: PathBuf,
    pub stages: Vec<String>,
    #[serde(default)]
    pub generate: Option<GenerateConfig>,
    #[serde(default)]
    pub synth: Option<SynthConfig>,
    #[serde(default)]
    pub train: Option<TrainConfig>,
    #[serde(default)]
    pub simulate: Option<SimulateConfig>,
    #[serde(default)]
    pub verify: Option<VerifyConfig>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GenerateConfig {
    Preset { preset: String },
    Load {
        model: PathBuf,
        constraints: PathBuf,
        #[serde(default)]
        benchspec: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimulateConfig {
    pub horizon: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VerifyConfig {
    pub samples: u64,
    pub scenarios: usize,
    pub p: String,
    pub horizon: usize,
}

impl PipelineConfig {
    pub fn load(path: &Path, out: Option<&Path>, seed: Option<u64>) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| e.to_string())?;
        let mut cfg: PipelineConfig = serde_json::from_str(&text).map_err(|e| e.to_string())?;
        if let Some(out) = out {
            cfg.out = out.to_path_buf();
        }
        if let Some(seed) = seed {
            cfg.seed = seed;
        }
        Ok(cfg)
    }
}

/// Executes the requested stages in order; returns Ok(false) when the
/// verify stage ran and reported failures.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<bool, StageError> {
    let out = cfg.out.clone();
    let mut all_ok = true;
    for stage in &cfg.stages {
        match stage.as_str() {
            "generate" => match cfg.generate.as_ref() {
                Some(GenerateConfig::Preset { preset }) => {
                    stage_generate_named(preset, cfg.seed, &out)?
                }
                Some(GenerateConfig::Load {
                    model,
                    constraints,
                    benchspec,
                }) => {
                    ensure_dir(Stage::Config, &out)?;
                    copy_into(Stage::Config, model, &out.join("model.json"))?;
                    copy_into(Stage::Config, constraints, &out.join("constraints.json"))?;
                    if let Some(b) = benchspec {
                        copy_into(Stage::Config, b, &out.join("benchspec.json"))?;
                    }
                }
                None => {
                    return Err(StageError::new(
                        Stage::Config,
                        "generate stage requested without a generate section",
                    ))
                }
            },
            "synth" => {
                let tmp;
                let synth_cfg = match &cfg.synth {
                    Some(c) => c,
                    None => {
                        tmp = SynthConfig::default();
                        &tmp
                    }
                };
                let b = load_bundle(&out)?;
                let mut options = synth_cfg.options.clone().unwrap_or_default();
                if options.g_b_init.is_none() && synth_cfg.use_designer_box.unwrap_or(true) {
                    if let Some(spec) = &b.benchspec {
                        options.g_b_init = spec.designer_boost_scales();
                    }
                }
                let result = in_stage(
                    Stage::Synth,
                    synthesize(&b.model, &b.equilibrium, &b.constraints, &options),
                )?;
                in_stage(Stage::Synth, save_json(&result, &out.join("synthesis.json")))?;
            }
            "train" => {
                let tcfg = cfg.train.clone().unwrap_or_default();
                let b = load_bundle(&out)?;
                let result = load_synthesis(&out)?;
                let (checkpoint, history) =
                    run_training(&b, &result, &tcfg, split_seed(cfg.seed, 0x7472))?;
                in_stage(Stage::Train, save_json(&checkpoint, &out.join("theta.json")))?;
                in_stage(Stage::Train, save_json(&history, &out.join("history.json")))?;
            }
            "simulate" => {
                let horizon = cfg.simulate.as_ref().map_or(300, |c| c.horizon);
                cmd_simulate(&out, Some(&out), None, split_seed(cfg.seed, 0x7369), horizon)?;
            }
            "verify" => {
                let vcfg = cfg.verify.clone().unwrap_or(VerifyConfig {
                    samples: 10_000,
                    scenarios: 20,
                    p: "2".into(),
                    horizon: 300,
                });
                let ok = cmd_verify(
                    &out,
                    Some(&out),
                    None,
                    split_seed(cfg.seed, 0x7665),
                    vcfg.samples,
                    vcfg.scenarios,
                    &vcfg.p,
                    vcfg.horizon,
                )?;
                all_ok &= ok;
            }
            other => {
                return Err(StageError::new(
                    Stage::Config,
                    format!("unknown stage '{other}'"),
                ))
            }
        }
    }
    Ok(all_ok)
}

fn copy_into(stage: Stage, from: &Path, to: &Path) -> StageResult<()> {
    std::fs::copy(from, to)
        .map(|_| ())
        .map_err(|e| StageError::new(stage, format!("copy {} failed: {e}", from.display())))
}

pub fn exit_code_for(result: Result<bool, StageError>) -> ExitCode {
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(VERIFY_FAILED_CODE),
        Err(e) => ExitCode::from(e.code()),
    }
}
