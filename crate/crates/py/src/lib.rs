//! Python bindings for the rnnboost toolkit.
//!
//! Exposes the main types and operations in-process: benchmark generation,
//! gain synthesis, certificate checks, operator training, and closed-loop
//! simulation. Matrices cross the boundary as nested lists; full artifacts
//! serialize through the same JSON formats the CLI writes.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};

use rnnboost::bench::{generate_benchmark, BenchmarkSpec};
use rnnboost::certificates::NormIndex;
use rnnboost::formats::ModelFile;
use rnnboost::model::{ConstraintSets, Equilibrium, RnnModel};
use rnnboost::operator::StableOperatorParams;
use rnnboost::rng::split_seed;
use rnnboost::serialize::mat_to_rows;
use rnnboost::synthesis::{SynthesisOptions, SynthesisResult};
use rnnboost::trainer::{Envelope, LossSpec, OptimizerConfig};
use rnnboost::trajectory::Trajectory;
use rnnboost::verify::{run_verification, simulate_random_run, VerifyOptions};

fn err<T>(r: rnnboost::Result<T>) -> PyResult<T> {
    r.map_err(|e| PyRuntimeError::new_err(e.to_string()))
}

/// A plant bundle: model, equilibrium, and constraint sets.
#[pyclass(skip_from_py_object)]
#[derive(Clone)]
struct Benchmark {
    model: RnnModel,
    equilibrium: Equilibrium,
    constraints: ConstraintSets,
    spec: Option<BenchmarkSpec>,
}

#[pymethods]
impl Benchmark {
    /// Generate from a preset: "ph-like" or "random-<n>".
    #[staticmethod]
    #[pyo3(signature = (preset="ph-like", seed=0))]
    fn generate(preset: &str, seed: u64) -> PyResult<Self> {
        let spec = if preset == "ph-like" {
            BenchmarkSpec::ph_like(seed)
        } else if let Some(n) = preset.strip_prefix("random-") {
            let n: usize = n
                .parse()
                .map_err(|_| PyValueError::new_err(format!("bad preset '{preset}'")))?;
            BenchmarkSpec::random_small(seed, n)
        } else {
            return Err(PyValueError::new_err(format!("unknown preset '{preset}'")));
        };
        let b = err(generate_benchmark(&spec))?;
        Ok(Benchmark {
            model: b.model,
            equilibrium: b.equilibrium,
            constraints: b.constraints,
            spec: Some(b.spec),
        })
    }

    /// Load from model/constraints JSON strings (the CLI file formats).
    #[staticmethod]
    fn from_json(model_json: &str, constraints_json: &str) -> PyResult<Self> {
        let file: ModelFile =
            serde_json::from_str(model_json).map_err(|e| PyValueError::new_err(e.to_string()))?;
        let (model, eq) = err(file.into_parts())?;
        let equilibrium =
            eq.ok_or_else(|| PyValueError::new_err("model JSON lacks an equilibrium block"))?;
        let constraints: ConstraintSets = serde_json::from_str(constraints_json)
            .map_err(|e| PyValueError::new_err(e.to_string()))?;
        Ok(Benchmark {
            model,
            equilibrium,
            constraints,
            spec: None,
        })
    }

    #[getter]
    fn state_dim(&self) -> usize {
        self.model.state_dim()
    }

    #[getter]
    fn input_dim(&self) -> usize {
        self.model.input_dim()
    }

    #[getter]
    fn output_dim(&self) -> usize {
        self.model.output_dim()
    }

    #[getter]
    fn channels(&self) -> usize {
        self.model.channel_dim()
    }

    #[getter]
    fn y_bar(&self) -> Vec<f64> {
        self.equilibrium.y_bar.as_slice().to_vec()
    }

    #[getter]
    fn u_bar(&self) -> Vec<f64> {
        self.equilibrium.u_bar.as_slice().to_vec()
    }

    fn model_json(&self) -> PyResult<String> {
        serde_json::to_string_pretty(&ModelFile::from_parts(&self.model, Some(&self.equilibrium)))
            .map_err(|e| PyRuntimeError::new_err(e.to_string()))
    }

    fn constraints_json(&self) -> PyResult<String> {
        serde_json::to_string_pretty(&self.constraints)
            .map_err(|e| PyRuntimeError::new_err(e.to_string()))
    }

    /// Synthesize the stabilizing gain and certificates.
    #[pyo3(signature = (use_designer_box=true))]
    fn synthesize(&self, use_designer_box: bool) -> PyResult<Synthesis> {
        let mut options = SynthesisOptions::default();
        if use_designer_box {
            if let Some(spec) = &self.spec {
                options.g_b_init = spec.designer_boost_scales();
            }
        }
        let result = err(rnnboost::synthesis::synthesize(
            &self.model,
            &self.equilibrium,
            &self.constraints,
            &options,
        ))?;
        Ok(Synthesis { result })
    }
}

/// Synthesized gain plus every certificate the conditions produce.
#[pyclass(skip_from_py_object)]
#[derive(Clone)]
struct Synthesis {
    result: SynthesisResult,
}

#[pymethods]
impl Synthesis {
    #[getter]
    fn gain(&self) -> Vec<Vec<f64>> {
        mat_to_rows(&self.result.k)
    }

    #[getter]
    fn gamma_s(&self) -> f64 {
        self.result.gamma_s
    }

    #[getter]
    fn global_certificate(&self) -> bool {
        self.result.global_flag
    }

    #[getter]
    fn boost_half_widths(&self) -> Vec<f64> {
        self.result.boost_box.half_widths().as_slice().to_vec()
    }

    /// Minimum-eigenvalue margin per emitted condition.
    fn residuals<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let d = PyDict::new(py);
        for (k, v) in &self.result.residuals {
            d.set_item(k, v)?;
        }
        Ok(d)
    }

    /// Decay and gain constants for a norm index ("1", "2", or "inf").
    fn certificate<'py>(&self, py: Python<'py>, p: &str) -> PyResult<Bound<'py, PyDict>> {
        let p = err(NormIndex::parse(p))?;
        let c = err(rnnboost::certificates::build_certificate(&self.result, p))?;
        let d = PyDict::new(py);
        d.set_item("a", c.a)?;
        d.set_item("kappa0", c.kappa0)?;
        d.set_item("kappa1", c.kappa1)?;
        d.set_item("sigma_x", c.sigma_x)?;
        d.set_item("sigma_ws", c.sigma_ws)?;
        d.set_item("mu_p", c.mu_p)?;
        d.set_item("k_norm", c.k_norm)?;
        d.set_item("gain_x_we", c.gain_x_we)?;
        d.set_item("gain_x_ub", c.gain_x_ub)?;
        d.set_item("gain_u_we", c.gain_u_we)?;
        d.set_item("gain_u_ub", c.gain_u_ub)?;
        Ok(d)
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string_pretty(&self.result)
            .map_err(|e| PyRuntimeError::new_err(e.to_string()))
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(Synthesis {
            result: serde_json::from_str(text).map_err(|e| PyValueError::new_err(e.to_string()))?,
        })
    }
}

/// Trained boosting-operator parameters.
#[pyclass(skip_from_py_object)]
#[derive(Clone)]
struct Operator {
    params: StableOperatorParams,
}

#[pymethods]
impl Operator {
    /// Gain bound ‖D‖ + ‖C‖‖B‖/(1−ρ), finite for every parameter value.
    #[getter]
    fn gain_bound(&self) -> f64 {
        rnnboost::operator::gain_bound(&self.params)
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string_pretty(&self.params)
            .map_err(|e| PyRuntimeError::new_err(e.to_string()))
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(Operator {
            params: serde_json::from_str(text).map_err(|e| PyValueError::new_err(e.to_string()))?,
        })
    }
}

/// Train the boosting operator; returns the best iterate and the per-epoch
/// loss trace.
#[pyfunction]
#[pyo3(signature = (bench, synth, scenarios=8, horizon=80, epochs=10, seed=0, n_xi=8,
                    step_size=0.05, momentum=0.8, grad_clip=10.0))]
#[allow(clippy::too_many_arguments)]
fn train_operator(
    bench: &Benchmark,
    synth: &Synthesis,
    scenarios: usize,
    horizon: usize,
    epochs: usize,
    seed: u64,
    n_xi: usize,
    step_size: f64,
    momentum: f64,
    grad_clip: f64,
) -> PyResult<(Operator, Vec<f64>)> {
    let batch = err(rnnboost::trainer::sample_scenarios(
        &bench.constraints,
        &synth.result,
        scenarios,
        horizon,
        split_seed(seed, 1),
        Envelope::full(horizon),
    ))?;
    let hw = synth.result.boost_box.half_widths();
    let u_m = 0.8 * hw.iter().copied().fold(f64::INFINITY, f64::min);
    let loss = LossSpec::ph_preset(bench.equilibrium.y_bar[0], u_m);
    let init = StableOperatorParams::zero_output_init(
        n_xi,
        bench.model.state_dim(),
        bench.model.input_dim(),
        split_seed(seed, 2),
    );
    let config = OptimizerConfig {
        step_size,
        momentum,
        grad_clip,
        epochs,
    };
    let (theta, history) = err(rnnboost::trainer::train(
        &bench.model,
        &bench.equilibrium,
        &synth.result,
        &loss,
        &batch,
        &init,
        &config,
    ))?;
    Ok((Operator { params: theta }, history.losses))
}

fn trajectory_to_dict<'py>(py: Python<'py>, traj: &Trajectory) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    let column = |f: &dyn Fn(&rnnboost::trajectory::TrajectoryStep) -> Vec<f64>| -> Vec<Vec<f64>> {
        traj.steps.iter().map(f).collect()
    };
    d.set_item("x", column(&|s| s.x.as_slice().to_vec()))?;
    d.set_item("u", column(&|s| s.u.as_slice().to_vec()))?;
    d.set_item("y", column(&|s| s.y.as_slice().to_vec()))?;
    d.set_item("u_b", column(&|s| s.u_b.as_slice().to_vec()))?;
    d.set_item("u_b_tilde", column(&|s| s.u_b_tilde.as_slice().to_vec()))?;
    d.set_item("w", column(&|s| s.w.as_slice().to_vec()))?;
    Ok(d)
}

/// Simulate one admissible closed-loop run; returns columns as lists.
#[pyfunction]
#[pyo3(signature = (bench, synth, operator=None, seed=0, horizon=300))]
fn simulate<'py>(
    py: Python<'py>,
    bench: &Benchmark,
    synth: &Synthesis,
    operator: Option<&Operator>,
    seed: u64,
    horizon: usize,
) -> PyResult<Bound<'py, PyDict>> {
    let traj = err(simulate_random_run(
        &bench.model,
        &bench.equilibrium,
        &bench.constraints,
        &synth.result,
        operator.map(|o| &o.params),
        seed,
        horizon,
    ))?;
    trajectory_to_dict(py, &traj)
}

/// Run the standard verification checks; returns (pass, list of checks).
#[pyfunction]
#[pyo3(signature = (bench, synth, operator=None, seed=0, samples=10_000, scenarios=20, p="2", horizon=300))]
#[allow(clippy::too_many_arguments)]
fn verify<'py>(
    py: Python<'py>,
    bench: &Benchmark,
    synth: &Synthesis,
    operator: Option<&Operator>,
    seed: u64,
    samples: u64,
    scenarios: usize,
    p: &str,
    horizon: usize,
) -> PyResult<(bool, Bound<'py, PyList>)> {
    let opts = VerifyOptions {
        samples,
        scenarios,
        p: err(NormIndex::parse(p))?,
        horizon,
        seed,
    };
    let report = err(run_verification(
        &bench.model,
        &bench.equilibrium,
        &bench.constraints,
        &synth.result,
        operator.map(|o| &o.params),
        &opts,
    ))?;
    let list = PyList::empty(py);
    for c in &report.checks {
        let d = PyDict::new(py);
        d.set_item("condition", &c.condition)?;
        d.set_item("pass", c.pass)?;
        d.set_item("worst_violation", c.worst_violation)?;
        d.set_item("samples", c.samples)?;
        list.append(d)?;
    }
    Ok((report.pass, list))
}

#[pymodule]
fn rnnboost_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Benchmark>()?;
    m.add_class::<Synthesis>()?;
    m.add_class::<Operator>()?;
    m.add_function(wrap_pyfunction!(train_operator, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(verify, m)?)?;
    Ok(())
}
