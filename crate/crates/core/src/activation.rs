//! Scalar sigmoid activations with certified slope properties.
//!
//! Every shipped activation σ satisfies: σ(0) = 0, σ'(0) = 1, |σ(v)| ≤ 1,
//! unit Lipschitz constant, and σ'(v) ∈ (0, 1]. The deadzone-like residual
//! q(v) = v − σ(v) then has derivative q'(v) = 1 − σ'(v) ∈ [0, 1) that is
//! even in v and nondecreasing in |v|, which the sector-radius bisection
//! relies on. Activations ship as a closed descriptor set with σ and σ'
//! given analytically so these properties hold by construction rather than
//! by numerical probing.

use serde::{Deserialize, Serialize};

/// Descriptor of one scalar sigmoid channel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    /// Hyperbolic tangent.
    Tanh,
    /// Rescaled arctangent (2/π)·atan(πv/2).
    Atan,
}

impl Activation {
    pub fn sigma(self, v: f64) -> f64 {
        match self {
            Activation::Tanh => v.tanh(),
            Activation::Atan => {
                let c = std::f64::consts::FRAC_PI_2;
                (c * v).atan() / c
            }
        }
    }

    pub fn sigma_prime(self, v: f64) -> f64 {
        match self {
            Activation::Tanh => {
                // sech²(v); stays strictly positive where 1 − tanh²(v)
                // would round to zero.
                let s = 1.0 / v.cosh();
                s * s
            }
            Activation::Atan => {
                let c = std::f64::consts::FRAC_PI_2;
                1.0 / (1.0 + (c * v) * (c * v))
            }
        }
    }

    /// Deadzone residual q(v) = v − σ(v).
    pub fn q(self, v: f64) -> f64 {
        v - self.sigma(v)
    }

    pub fn tag(self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
            Activation::Atan => "atan",
        }
    }
}

/// Derivative of the deadzone residual, ∂q/∂v = 1 − σ'(v) ∈ [0, 1).
pub fn q_deriv(activation: Activation, v: f64) -> f64 {
    1.0 - activation.sigma_prime(v)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn q_deriv_zero_at_origin() {
        assert_eq!(q_deriv(Activation::Tanh, 0.0), 0.0);
        assert_eq!(q_deriv(Activation::Atan, 0.0), 0.0);
    }

    #[test]
    fn q_deriv_tanh_quarter_point() {
        // q'(v) = tanh²(v), so q'(artanh(1/2)) = 1/4.
        let v = 0.5f64.atanh();
        assert!((q_deriv(Activation::Tanh, v) - 0.25).abs() < 1e-14);

        // Cross-check σ' by central finite differences.
        let h = 1e-6;
        let fd = (Activation::Tanh.sigma(v + h) - Activation::Tanh.sigma(v - h)) / (2.0 * h);
        assert!((fd - Activation::Tanh.sigma_prime(v)).abs() < 1e-9);
    }

    #[test]
    fn q_deriv_even_and_monotone_toward_one() {
        for act in [Activation::Tanh, Activation::Atan] {
            let mut prev = -1.0;
            for i in 0..200 {
                let v = i as f64 * 0.25;
                let d = q_deriv(act, v);
                // Strictly below 1 while representable; saturates to 1.0 in
                // f64 once σ'(v) drops below machine epsilon.
                if v <= 15.0 {
                    assert!((0.0..1.0).contains(&d), "{:?} at {v}: {d}", act);
                } else {
                    assert!((0.0..=1.0).contains(&d), "{:?} at {v}: {d}", act);
                }
                assert!((d - q_deriv(act, -v)).abs() < 1e-15, "evenness");
                assert!(d >= prev - 1e-15, "monotone in |v|");
                prev = d;
            }
            // Approaches 1 from below for large |v|.
            assert!(q_deriv(act, 50.0) > 0.99);
        }
    }

    #[test]
    fn assumption_bounds_hold_on_grid() {
        for act in [Activation::Tanh, Activation::Atan] {
            for i in -400..=400 {
                let v = i as f64 * 0.05;
                let s = act.sigma(v);
                let sp = act.sigma_prime(v);
                assert!(s.abs() <= 1.0 + 1e-15);
                assert!(sp > 0.0 && sp <= 1.0);
            }
            assert_eq!(act.sigma(0.0), 0.0);
            assert_eq!(act.sigma_prime(0.0), 1.0);
        }
    }
}
