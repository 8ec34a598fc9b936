//! A finitely parametrized operator family that is ℓp-stable for every
//! parameter value.
//!
//! The recurrence ξ(k+1) = A_M ξ(k) + B_w w_e(k),
//! output m(k) = C_m tanh(ξ(k)) + D_m w_e(k), with
//! A_M = (ρ/(‖W‖₂ + ε)) W. The normalization makes ‖A_M‖₂ ≤ ρ < 1 for every
//! W, so the state map is a contraction by construction and
//!
//! ```text
//! γ(M) ≤ ‖D_m‖₂ + ‖C_m‖₂ ‖B_w‖₂ / (1 − ρ)
//! ```
//!
//! bounds the ℓp gain for every p ∈ [1, ∞] (tanh is 1-Lipschitz with
//! tanh(0) = 0, and Young's inequality bounds the convolution sum by the
//! geometric series). Keeping tanh on the output path leaves the state
//! recursion linear, which keeps the bound tight and the adjoint simple.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imc::BoostOperator;
use crate::rng::SplitRng;

/// Parameters θ of the boosting operator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StableOperatorParams {
    pub n_xi: usize,
    pub rho: f64,
    pub eps: f64,
    #[serde(with = "crate::serialize::mat_f64")]
    pub w: DMatrix<f64>,
    #[serde(with = "crate::serialize::mat_f64")]
    pub b_w: DMatrix<f64>,
    #[serde(with = "crate::serialize::mat_f64")]
    pub c_m: DMatrix<f64>,
    #[serde(with = "crate::serialize::mat_f64")]
    pub d_m: DMatrix<f64>,
}

impl StableOperatorParams {
    /// Random W and B_w, zero C_m and D_m: the operator starts out exactly
    /// at the u_b ≡ 0 baseline, so the initial loop is the certified one.
    pub fn zero_output_init(n_xi: usize, n_in: usize, m_out: usize, seed: u64) -> Self {
        let mut rng = SplitRng::new(seed, 0x7468_6574); // "thet"
        StableOperatorParams {
            n_xi,
            rho: 0.95,
            eps: 1e-8,
            w: rng.gaussian_matrix(n_xi, n_xi),
            b_w: rng.gaussian_matrix(n_xi, n_in) * (1.0 / (n_in as f64).sqrt()),
            c_m: DMatrix::zeros(m_out, n_xi),
            d_m: DMatrix::zeros(m_out, n_in),
        }
    }

    pub fn random(n_xi: usize, n_in: usize, m_out: usize, seed: u64, output_scale: f64) -> Self {
        let mut base = Self::zero_output_init(n_xi, n_in, m_out, seed);
        let mut rng = SplitRng::new(seed, 0x6F75_7470); // "outp"
        base.c_m = rng.gaussian_matrix(m_out, n_xi) * output_scale;
        base.d_m = rng.gaussian_matrix(m_out, n_in) * output_scale;
        base
    }

    pub fn input_dim(&self) -> usize {
        self.b_w.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.c_m.nrows()
    }

    /// Flat view of θ (row-major per matrix, in W, B_w, C_m, D_m order);
    /// used by finite-difference checks and the optimizer.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for m in [&self.w, &self.b_w, &self.c_m, &self.d_m] {
            for i in 0..m.nrows() {
                for j in 0..m.ncols() {
                    out.push(m[(i, j)]);
                }
            }
        }
        out
    }

    pub fn from_flat(&self, flat: &[f64]) -> StableOperatorParams {
        let mut out = self.clone();
        let mut idx = 0;
        for m in [&mut out.w, &mut out.b_w, &mut out.c_m, &mut out.d_m] {
            for i in 0..m.nrows() {
                for j in 0..m.ncols() {
                    m[(i, j)] = flat[idx];
                    idx += 1;
                }
            }
        }
        out
    }
}

/// Result of the spectral-norm power iteration on W.
#[derive(Debug, Clone)]
pub struct SpectralNorm {
    pub value: f64,
    /// Top left/right singular vectors (u, v) with W v ≈ value · u.
    pub u: DVector<f64>,
    pub v: DVector<f64>,
    pub converged: bool,
}

/// Power iteration on WᵀW with a deterministic start vector. Falls back to
/// the Frobenius norm (a safe overestimate of ‖W‖₂) when it fails to
/// converge, flagging the result.
pub fn spectral_norm_power_iteration(w: &DMatrix<f64>, tol: f64, max_iter: usize) -> SpectralNorm {
    let n = w.ncols();
    let m = w.nrows();
    if n == 0 || m == 0 || w.norm() == 0.0 {
        return SpectralNorm {
            value: 0.0,
            u: DVector::zeros(m),
            v: DVector::zeros(n),
            converged: true,
        };
    }
    // Ramped start avoids pathological orthogonality to the top vector.
    let mut v = DVector::from_fn(n, |i, _| 1.0 + i as f64 * 1e-3);
    v /= v.norm();
    let mut converged = false;
    for _ in 0..max_iter {
        let wv = w * &v;
        if wv.norm() == 0.0 {
            break;
        }
        let vt = w.transpose() * &wv;
        let vt_norm = vt.norm();
        if vt_norm == 0.0 {
            break;
        }
        let v_next = vt / vt_norm;
        // Converge the singular vector itself, not just the value: the
        // gradient u vᵀ is first-order sensitive to vector error while the
        // value is only second-order.
        let done = (&v_next - &v).norm() <= tol;
        v = v_next;
        if done {
            converged = true;
            break;
        }
    }
    if converged {
        let wv = w * &v;
        let value = wv.norm();
        let u = if value > 0.0 { wv / value } else { DVector::zeros(m) };
        SpectralNorm {
            value,
            u,
            v,
            converged: true,
        }
    } else {
        // One-sided safe overestimate: ‖W‖_F ≥ ‖W‖₂.
        let value = w.norm();
        let scale = if value > 0.0 { 1.0 / value } else { 0.0 };
        SpectralNorm {
            value,
            u: DVector::zeros(m),
            v: DVector::from_fn(n, |i, _| w.row(0)[i] * scale),
            converged: false,
        }
    }
}

/// Precomputed evaluation context: the normalized recurrence matrix and the
/// quantities the reverse pass needs to differentiate the normalization.
#[derive(Debug, Clone)]
pub struct OperatorContext {
    pub params: StableOperatorParams,
    pub a_m: DMatrix<f64>,
    /// ρ/(s + ε) with s the spectral norm of W.
    pub scale: f64,
    pub spectral: SpectralNorm,
}

impl OperatorContext {
    pub fn new(params: &StableOperatorParams) -> Self {
        let spectral = spectral_norm_power_iteration(&params.w, 1e-10, 500);
        if !spectral.converged {
            eprintln!(
                "warning: spectral-norm power iteration did not converge; \
                 falling back to the Frobenius overestimate ({:.3e})",
                spectral.value
            );
        }
        let scale = params.rho / (spectral.value + params.eps);
        OperatorContext {
            a_m: &params.w * scale,
            scale,
            spectral,
            params: params.clone(),
        }
    }

    /// One forward step: (ξ⁺, m_out).
    pub fn step(&self, xi: &DVector<f64>, w_e: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let xi_next = &self.a_m * xi + &self.params.b_w * w_e;
        let tanh_xi = xi.map(f64::tanh);
        let m_out = &self.params.c_m * tanh_xi + &self.params.d_m * w_e;
        (xi_next, m_out)
    }

    /// Gradient of a scalar loss with respect to W given the accumulated
    /// cotangent of A_M, through A_M = scale(W) · W with the converged top
    /// singular pair held fixed.
    pub fn w_gradient(&self, a_m_bar: &DMatrix<f64>) -> DMatrix<f64> {
        let mut grad = a_m_bar * self.scale;
        let inner: f64 = a_m_bar.component_mul(&self.params.w).sum();
        let dscale_ds = -self.params.rho
            / ((self.spectral.value + self.params.eps) * (self.spectral.value + self.params.eps));
        let ds_dw = if self.spectral.converged {
            &self.spectral.u * self.spectral.v.transpose()
        } else {
            // Frobenius fallback: ∂‖W‖_F/∂W = W/‖W‖_F.
            if self.spectral.value > 0.0 {
                &self.params.w / self.spectral.value
            } else {
                DMatrix::zeros(self.params.w.nrows(), self.params.w.ncols())
            }
        };
        grad += ds_dw * (inner * dscale_ds);
        grad
    }
}

/// Closed-form ℓp-gain bound, finite for every θ.
pub fn gain_bound(params: &StableOperatorParams) -> f64 {
    let norm2 = |m: &DMatrix<f64>| -> f64 {
        spectral_norm_power_iteration(m, 1e-12, 1000).value
    };
    norm2(&params.d_m) + norm2(&params.c_m) * norm2(&params.b_w) / (1.0 - params.rho)
}

/// One forward step through freshly normalized parameters.
pub fn operator_step(
    params: &StableOperatorParams,
    xi: &DVector<f64>,
    w_e: &DVector<f64>,
) -> (DVector<f64>, DVector<f64>) {
    OperatorContext::new(params).step(xi, w_e)
}

/// Forward tape of a rollout: the states and inputs seen at each step.
#[derive(Debug, Clone, Default)]
pub struct OperatorTape {
    pub xi: Vec<DVector<f64>>,
    pub w_e: Vec<DVector<f64>>,
}

/// Parameter gradients in the same shapes as the parameters.
#[derive(Debug, Clone)]
pub struct OperatorGradients {
    pub w: DMatrix<f64>,
    pub b_w: DMatrix<f64>,
    pub c_m: DMatrix<f64>,
    pub d_m: DMatrix<f64>,
}

impl OperatorGradients {
    pub fn zeros(params: &StableOperatorParams) -> Self {
        OperatorGradients {
            w: DMatrix::zeros(params.w.nrows(), params.w.ncols()),
            b_w: DMatrix::zeros(params.b_w.nrows(), params.b_w.ncols()),
            c_m: DMatrix::zeros(params.c_m.nrows(), params.c_m.ncols()),
            d_m: DMatrix::zeros(params.d_m.nrows(), params.d_m.ncols()),
        }
    }

    pub fn norm(&self) -> f64 {
        (self.w.norm_squared()
            + self.b_w.norm_squared()
            + self.c_m.norm_squared()
            + self.d_m.norm_squared())
        .sqrt()
    }

    pub fn scale_mut(&mut self, s: f64) {
        self.w *= s;
        self.b_w *= s;
        self.c_m *= s;
        self.d_m *= s;
    }

    pub fn is_finite(&self) -> bool {
        self.w.iter().all(|v| v.is_finite())
            && self.b_w.iter().all(|v| v.is_finite())
            && self.c_m.iter().all(|v| v.is_finite())
            && self.d_m.iter().all(|v| v.is_finite())
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for m in [&self.w, &self.b_w, &self.c_m, &self.d_m] {
            for i in 0..m.nrows() {
                for j in 0..m.ncols() {
                    out.push(m[(i, j)]);
                }
            }
        }
        out
    }
}

/// Reverse pass over a recorded rollout of the operator alone: given the
/// cotangents of every output, returns exact gradients with respect to θ.
pub fn operator_adjoint(
    params: &StableOperatorParams,
    tape: &OperatorTape,
    output_cotangents: &[DVector<f64>],
) -> Result<OperatorGradients> {
    let ctx = OperatorContext::new(params);
    let steps = output_cotangents.len();
    if tape.xi.len() < steps || tape.w_e.len() < steps {
        return Err(Error::Invalid("operator tape shorter than cotangents".into()));
    }
    let mut grads = OperatorGradients::zeros(params);
    let mut a_m_bar = DMatrix::zeros(params.w.nrows(), params.w.ncols());
    let mut xi_bar = DVector::zeros(params.n_xi);

    for k in (0..steps).rev() {
        let xi = &tape.xi[k];
        let w_e = &tape.w_e[k];
        // ξ(k+1) = A_M ξ(k) + B_w w_e(k), cotangent arriving in xi_bar.
        a_m_bar += &xi_bar * xi.transpose();
        grads.b_w += &xi_bar * w_e.transpose();
        let mut xi_bar_now = ctx.a_m.transpose() * &xi_bar;
        // m(k) = C_m tanh(ξ(k)) + D_m w_e(k).
        let y_bar = &output_cotangents[k];
        let tanh_xi = xi.map(f64::tanh);
        grads.c_m += y_bar * tanh_xi.transpose();
        grads.d_m += y_bar * w_e.transpose();
        let sech2 = xi.map(|v| 1.0 - v.tanh() * v.tanh());
        xi_bar_now += (ctx.params.c_m.transpose() * y_bar).component_mul(&sech2);
        xi_bar = xi_bar_now;
    }
    grads.w = ctx.w_gradient(&a_m_bar);
    Ok(grads)
}

/// Runs the operator as a stateful boosting element.
#[derive(Debug, Clone)]
pub struct StableOperator {
    ctx: OperatorContext,
    xi: DVector<f64>,
}

impl StableOperator {
    pub fn new(params: &StableOperatorParams) -> Self {
        StableOperator {
            xi: DVector::zeros(params.n_xi),
            ctx: OperatorContext::new(params),
        }
    }

    pub fn context(&self) -> &OperatorContext {
        &self.ctx
    }
}

impl BoostOperator for StableOperator {
    fn step(&mut self, w_e: &DVector<f64>) -> DVector<f64> {
        let (xi_next, out) = self.ctx.step(&self.xi, w_e);
        self.xi = xi_next;
        out
    }

    fn reset(&mut self) {
        self.xi = DVector::zeros(self.ctx.params.n_xi);
    }
}
