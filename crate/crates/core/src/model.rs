//! Recurrent plant model, equilibria, and constraint sets.
//!
//! The plant is the discrete-time state-space model
//!
//! ```text
//! x(k+1) = A_x x(k) + B_u u(k) + B_σ σ(v(k)) + w(k)
//! v(k)   = Ã x(k) + B̃ u(k)
//! y(k)   = C x(k)
//! ```
//!
//! with a decentralised vector of sigmoids σ. With q(v) = v − σ(v) and the
//! derived matrices A = A_x + B_σ Ã, B = B_u + B_σ B̃, B_q = −B_σ the same
//! dynamics read x(k+1) = A x + B u + B_q q(v) + w; both forms are exposed
//! and agree to floating-point rounding.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::activation::Activation;
use crate::error::{Error, Result};

/// Plant matrices and activation channels.
#[derive(Debug, Clone, PartialEq)]
pub struct RnnModel {
    pub a_x: DMatrix<f64>,
    pub b_u: DMatrix<f64>,
    pub b_sigma: DMatrix<f64>,
    pub a_tilde: DMatrix<f64>,
    pub b_tilde: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub activations: Vec<Activation>,
}

impl RnnModel {
    pub fn new(
        a_x: DMatrix<f64>,
        b_u: DMatrix<f64>,
        b_sigma: DMatrix<f64>,
        a_tilde: DMatrix<f64>,
        b_tilde: DMatrix<f64>,
        c: DMatrix<f64>,
        activations: Vec<Activation>,
    ) -> Result<Self> {
        let model = RnnModel {
            a_x,
            b_u,
            b_sigma,
            a_tilde,
            b_tilde,
            c,
            activations,
        };
        model.validate()?;
        Ok(model)
    }

    fn validate(&self) -> Result<()> {
        let (n, m, nu, ny) = (
            self.state_dim(),
            self.input_dim(),
            self.channel_dim(),
            self.output_dim(),
        );
        if n < 1 || m < 1 || ny < 1 {
            return Err(Error::BadModel(format!(
                "n = {n}, m = {m}, n_y = {ny} must all be >= 1"
            )));
        }
        let checks: [(&str, usize, usize, usize, usize); 6] = [
            ("A_x", self.a_x.nrows(), self.a_x.ncols(), n, n),
            ("B_u", self.b_u.nrows(), self.b_u.ncols(), n, m),
            ("B_sigma", self.b_sigma.nrows(), self.b_sigma.ncols(), n, nu),
            ("A_tilde", self.a_tilde.nrows(), self.a_tilde.ncols(), nu, n),
            ("B_tilde", self.b_tilde.nrows(), self.b_tilde.ncols(), nu, m),
            ("C", self.c.nrows(), self.c.ncols(), ny, n),
        ];
        for (name, r, c, er, ec) in checks {
            if (r, c) != (er, ec) {
                return Err(Error::BadModel(format!(
                    "{name} is {r}x{c}, expected {er}x{ec}"
                )));
            }
        }
        if self.activations.len() != nu {
            return Err(Error::BadModel(format!(
                "{} activation tags for {} channels",
                self.activations.len(),
                nu
            )));
        }
        Ok(())
    }

    pub fn state_dim(&self) -> usize {
        self.a_x.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.b_u.ncols()
    }

    /// Number of sigmoid channels ν (may be zero for a purely linear plant).
    pub fn channel_dim(&self) -> usize {
        self.b_sigma.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.c.nrows()
    }

    /// A = A_x + B_σ Ã.
    pub fn a(&self) -> DMatrix<f64> {
        &self.a_x + &self.b_sigma * &self.a_tilde
    }

    /// B = B_u + B_σ B̃.
    pub fn b(&self) -> DMatrix<f64> {
        &self.b_u + &self.b_sigma * &self.b_tilde
    }

    /// B_q = −B_σ.
    pub fn b_q(&self) -> DMatrix<f64> {
        -&self.b_sigma
    }

    /// σ applied channel-wise to v.
    pub fn sigma(&self, v: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(v.len(), |i, _| self.activations[i].sigma(v[i]))
    }

    /// q(v) = v − σ(v) channel-wise.
    pub fn q(&self, v: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(v.len(), |i, _| self.activations[i].q(v[i]))
    }

    /// Pre-activation vector v = Ã x + B̃ u.
    pub fn v(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        &self.a_tilde * x + &self.b_tilde * u
    }

    /// One step of the plant dynamics.
    pub fn step(&self, x: &DVector<f64>, u: &DVector<f64>, w: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim("step x", x.len(), self.state_dim())?;
        check_dim("step u", u.len(), self.input_dim())?;
        check_dim("step w", w.len(), self.state_dim())?;
        let v = self.v(x, u);
        Ok(&self.a_x * x + &self.b_u * u + &self.b_sigma * self.sigma(&v) + w)
    }

    /// Same step evaluated through the reformulated A, B, B_q, q(v) route.
    pub fn step_reformulated(
        &self,
        x: &DVector<f64>,
        u: &DVector<f64>,
        w: &DVector<f64>,
    ) -> Result<DVector<f64>> {
        check_dim("step x", x.len(), self.state_dim())?;
        check_dim("step u", u.len(), self.input_dim())?;
        check_dim("step w", w.len(), self.state_dim())?;
        let v = self.v(x, u);
        Ok(self.a() * x + self.b() * u + self.b_q() * self.q(&v) + w)
    }

    /// Solve for an equilibrium state at constant input `u_bar` by damped
    /// Newton iteration on the fixed-point residual, starting from `x_init`.
    pub fn find_equilibrium(
        &self,
        u_bar: &DVector<f64>,
        x_init: &DVector<f64>,
        max_iter: usize,
    ) -> Result<Equilibrium> {
        check_dim("equilibrium u_bar", u_bar.len(), self.input_dim())?;
        check_dim("equilibrium x_init", x_init.len(), self.state_dim())?;
        let n = self.state_dim();
        let residual = |x: &DVector<f64>| -> DVector<f64> {
            let v = self.v(x, u_bar);
            x - (&self.a_x * x + &self.b_u * u_bar + &self.b_sigma * self.sigma(&v))
        };

        let mut x = x_init.clone();
        let mut r = residual(&x);
        let mut rn = r.norm();
        for _ in 0..max_iter {
            if rn <= 1e-12 {
                break;
            }
            let v = self.v(&x, u_bar);
            // J = I − A_x − B_σ diag(σ'(v)) Ã
            let mut jac = DMatrix::<f64>::identity(n, n) - &self.a_x;
            if self.channel_dim() > 0 {
                let sp = DVector::from_fn(v.len(), |i, _| self.activations[i].sigma_prime(v[i]));
                let scaled = DMatrix::from_fn(n, self.channel_dim(), |i, j| {
                    self.b_sigma[(i, j)] * sp[j]
                });
                jac -= scaled * &self.a_tilde;
            }
            let dx = jac.lu().solve(&r).ok_or(Error::NoEquilibrium {
                iterations: max_iter,
                residual: rn,
            })?;
            // Damped update: halve the step until the residual decreases.
            let mut alpha = 1.0;
            loop {
                let cand = &x - alpha * &dx;
                let rc = residual(&cand);
                if rc.norm() < rn {
                    x = cand;
                    r = rc;
                    rn = r.norm();
                    break;
                }
                alpha *= 0.5;
                if alpha < 2f64.powi(-20) {
                    return Err(Error::NoEquilibrium {
                        iterations: max_iter,
                        residual: rn,
                    });
                }
            }
        }
        if rn > 1e-10 {
            return Err(Error::NoEquilibrium {
                iterations: max_iter,
                residual: rn,
            });
        }
        Ok(Equilibrium {
            y_bar: &self.c * &x,
            v_bar: self.v(&x, u_bar),
            x_bar: x,
            u_bar: u_bar.clone(),
            residual: rn,
        })
    }
}

fn check_dim(context: &'static str, got: usize, expected: usize) -> Result<()> {
    if got != expected {
        Err(Error::DimensionMismatch {
            context,
            expected,
            got,
        })
    } else {
        Ok(())
    }
}

/// A plant equilibrium (x̄, ū, ȳ) with its fixed-point residual.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Equilibrium {
    #[serde(with = "crate::serialize::vec_f64")]
    pub x_bar: DVector<f64>,
    #[serde(with = "crate::serialize::vec_f64")]
    pub u_bar: DVector<f64>,
    #[serde(with = "crate::serialize::vec_f64")]
    pub y_bar: DVector<f64>,
    #[serde(with = "crate::serialize::vec_f64")]
    pub v_bar: DVector<f64>,
    pub residual: f64,
}

/// Input/output polytopes G_u u ≤ b_u, G_y y ≤ b_y and the disturbance
/// ellipsoid shape Q_w⁰ (w ∈ E(Q_w⁰) pointwise in time).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintSets {
    #[serde(with = "crate::serialize::mat_f64")]
    pub g_u: DMatrix<f64>,
    #[serde(with = "crate::serialize::vec_f64")]
    pub b_u: DVector<f64>,
    #[serde(with = "crate::serialize::mat_f64")]
    pub g_y: DMatrix<f64>,
    #[serde(with = "crate::serialize::vec_f64")]
    pub b_y: DVector<f64>,
    #[serde(with = "crate::serialize::mat_f64")]
    pub q_w0: DMatrix<f64>,
}

impl ConstraintSets {
    pub fn new(
        g_u: DMatrix<f64>,
        b_u: DVector<f64>,
        g_y: DMatrix<f64>,
        b_y: DVector<f64>,
        q_w0: DMatrix<f64>,
    ) -> Result<Self> {
        if g_u.nrows() != b_u.len() || g_y.nrows() != b_y.len() {
            return Err(Error::Invalid(
                "polytope row counts do not match bound vectors".into(),
            ));
        }
        if q_w0.nrows() != q_w0.ncols() {
            return Err(Error::Invalid("Q_w0 must be square".into()));
        }
        let sym_err = (&q_w0 - q_w0.transpose()).norm();
        if sym_err > 1e-9 * q_w0.norm().max(1.0) {
            return Err(Error::NotPositiveDefinite("Q_w0 is not symmetric"));
        }
        if q_w0.clone().cholesky().is_none() {
            return Err(Error::NotPositiveDefinite("Q_w0"));
        }
        Ok(ConstraintSets {
            g_u,
            b_u,
            g_y,
            b_y,
            q_w0,
        })
    }

    pub fn input_rows(&self) -> usize {
        self.g_u.nrows()
    }

    pub fn output_rows(&self) -> usize {
        self.g_y.nrows()
    }

    /// Componentwise slack b_u − G_u u (all entries ≥ 0 iff u ∈ U).
    pub fn input_slack(&self, u: &DVector<f64>) -> DVector<f64> {
        &self.b_u - &self.g_u * u
    }

    /// Componentwise slack b_y − G_y y.
    pub fn output_slack(&self, y: &DVector<f64>) -> DVector<f64> {
        &self.b_y - &self.g_y * y
    }

    /// Checks that the equilibrium pair (ū, ȳ) sits strictly inside both
    /// polytopes; returns the smallest slack.
    pub fn equilibrium_margin(&self, eq: &Equilibrium) -> f64 {
        let su = self.input_slack(&eq.u_bar);
        let sy = self.output_slack(&eq.y_bar);
        su.iter().chain(sy.iter()).copied().fold(f64::INFINITY, f64::min)
    }
}
