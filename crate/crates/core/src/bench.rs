//! Synthetic benchmark plants.
//!
//! Generates random plants of the modelled class with a prescribed spectral
//! radius for the combined linear map A = A_x + B_σ Ã, an equilibrium
//! solved from the requested constant input, and constraint sets that admit
//! the equilibrium with margin.
//!
//! The `ph-like` preset mirrors the published pH-neutralisation setup:
//! n = 10 states, five tanh channels, scalar input bounded to [12.5, 17],
//! scalar output bounded to [5.94, 9.13], disturbances below 0.01 in
//! normalised units, and a boost magnitude of 0.0912 on the normalised
//! input scale. Input-side quantities stated in normalised units convert
//! through half the input range (2.25); state-side quantities are already
//! normalised.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::activation::Activation;
use crate::error::{Error, Result};
use crate::model::{ConstraintSets, Equilibrium, RnnModel};
use crate::rng::{split_seed, SplitRng};

/// Recipe for one synthetic plant.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchmarkSpec {
    pub seed: u64,
    pub n: usize,
    pub m: usize,
    pub nu: usize,
    pub n_y: usize,
    /// Target ρ(A_x + B_σ Ã).
    pub spectral_radius: f64,
    /// Input box [lo, hi] per channel.
    pub u_lo: Vec<f64>,
    pub u_hi: Vec<f64>,
    /// Output box half-width around the generated equilibrium output.
    pub y_halfwidth: Vec<f64>,
    /// Optional absolute output bounds overriding the half-width box.
    pub y_bounds: Option<(Vec<f64>, Vec<f64>)>,
    /// Componentwise ∞-bound on disturbances (normalised state units).
    pub w_max: f64,
    /// Equilibrium input ū.
    pub u_bar: Vec<f64>,
    /// Boost magnitude in normalised input units (used by presets to size
    /// the designer boost box and the loss penalty).
    pub boost_magnitude_norm: Option<f64>,
}

impl BenchmarkSpec {
    /// The pH-neutralisation-style preset.
    pub fn ph_like(seed: u64) -> Self {
        BenchmarkSpec {
            seed,
            n: 10,
            m: 1,
            nu: 5,
            n_y: 1,
            spectral_radius: 0.7,
            u_lo: vec![12.5],
            u_hi: vec![17.0],
            y_halfwidth: vec![0.0],
            y_bounds: Some((vec![5.94], vec![9.13])),
            w_max: 0.01,
            u_bar: vec![14.75],
            boost_magnitude_norm: Some(0.0912),
        }
    }

    /// Small random plant with benign interval constraints.
    pub fn random_small(seed: u64, n: usize) -> Self {
        BenchmarkSpec {
            seed,
            n,
            m: 1,
            nu: (n / 2).max(1),
            n_y: 1,
            spectral_radius: 0.75,
            u_lo: vec![-2.0],
            u_hi: vec![2.0],
            y_halfwidth: vec![3.0],
            y_bounds: None,
            w_max: 0.02,
            u_bar: vec![0.3],
            boost_magnitude_norm: None,
        }
    }

    /// Half the input range per channel; converts normalised input-side
    /// quantities to plant units.
    pub fn input_scale(&self) -> DVector<f64> {
        DVector::from_fn(self.m, |i, _| 0.5 * (self.u_hi[i] - self.u_lo[i]))
    }

    /// Designer boost-box scales implied by the preset boost magnitude.
    pub fn designer_boost_scales(&self) -> Option<Vec<f64>> {
        self.boost_magnitude_norm.map(|um| {
            let scale = self.input_scale();
            (0..self.m).map(|i| 1.0 / (um * scale[i])).collect()
        })
    }

    /// Disturbance ellipsoid shape containing the ∞-ball of radius w_max:
    /// Q_w⁰ = I / (n · w_max²).
    pub fn disturbance_shape(&self) -> DMatrix<f64> {
        DMatrix::<f64>::identity(self.n, self.n) / (self.n as f64 * self.w_max * self.w_max)
    }
}

/// A generated plant bundle.
#[derive(Debug, Clone)]
pub struct Benchmark {
    pub spec: BenchmarkSpec,
    pub model: RnnModel,
    pub equilibrium: Equilibrium,
    pub constraints: ConstraintSets,
}

fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    m.complex_eigenvalues()
        .iter()
        .map(|c| c.norm())
        .fold(0.0, f64::max)
}

/// Generates the plant, equilibrium, and constraint sets for a spec,
/// retrying with derived sub-seeds when the equilibrium solve or the
/// margin checks fail.
pub fn generate_benchmark(spec: &BenchmarkSpec) -> Result<Benchmark> {
    let mut last = String::from("unknown");
    for attempt in 0..10u64 {
        match try_generate(spec, split_seed(spec.seed, attempt)) {
            Ok(b) => return Ok(b),
            Err(e) => last = e.to_string(),
        }
    }
    Err(Error::BenchmarkGeneration {
        attempts: 10,
        reason: last,
    })
}

fn try_generate(spec: &BenchmarkSpec, sub_seed: u64) -> Result<Benchmark> {
    let (n, m, nu, ny) = (spec.n, spec.m, spec.nu, spec.n_y);
    let mut rng = SplitRng::new(sub_seed, 0x6265_6E63); // "benc"
    let u_scale = spec.input_scale();

    // Raw draws. Two normalization stages: A_x alone is first pinned just
    // below the target radius, then A_x and Ã are rescaled jointly so that
    // A = A_x + B_σ Ã hits the requested radius exactly. Both matter: the
    // sector vertices of the deviation dynamics range between A_x-driven
    // (slope 0) and A-driven (slope 1) behavior, so an unstable A_x would
    // make the dissipation condition infeasible at every level. The
    // activation operating point Ã x̄ + B̃ ū is also kept well inside the
    // near-linear sigmoid region so the regional escalation has room.
    let a_x_raw = rng.gaussian_matrix(n, n) * (0.8 / (n as f64).sqrt());
    let b_sigma = rng.gaussian_matrix(n, nu) * (0.3 / (nu.max(1) as f64).sqrt());
    let a_tilde_raw = rng.gaussian_matrix(nu, n) * (0.2 / (n as f64).sqrt());
    // Input sensitivity sized so a full input swing moves states O(1); a
    // weak B_u shrinks the equilibrium state, which in turn inflates the
    // output-matrix rescaling below and squeezes the feasible window of
    // the synthesis conditions shut.
    let b_u = DMatrix::from_fn(n, m, |i, j| {
        let _ = i;
        rng.gaussian() * 0.25 / u_scale[j]
    });
    let b_tilde = DMatrix::from_fn(nu, m, |i, j| {
        let _ = i;
        rng.gaussian() * 0.03 / u_scale[j]
    });
    let c_raw = rng.gaussian_matrix(ny, n) * (1.0 / (n as f64).sqrt());

    let rho_x_raw = spectral_radius(&a_x_raw);
    if rho_x_raw < 1e-9 {
        return Err(Error::Invalid("degenerate random draw".into()));
    }
    let a_x_pre = &a_x_raw * (0.92 * spec.spectral_radius / rho_x_raw);
    let a_raw = &a_x_pre + &b_sigma * &a_tilde_raw;
    let rho_raw = spectral_radius(&a_raw);
    if rho_raw < 1e-9 {
        return Err(Error::Invalid("degenerate random draw".into()));
    }
    let scale = spec.spectral_radius / rho_raw;
    let a_x = a_x_pre * scale;
    let a_tilde = a_tilde_raw * scale;
    if spectral_radius(&a_x) >= 0.99 {
        return Err(Error::Invalid("slope-zero vertex unstable".into()));
    }

    let u_bar = DVector::from_vec(spec.u_bar.clone());
    let model_unnormalized = RnnModel::new(
        a_x.clone(),
        b_u.clone(),
        b_sigma.clone(),
        a_tilde.clone(),
        b_tilde.clone(),
        c_raw.clone(),
        vec![Activation::Tanh; nu],
    )?;
    let eq0 = model_unnormalized.find_equilibrium(&u_bar, &DVector::zeros(n), 200)?;

    // The activation operating point must sit in the near-linear sigmoid
    // region or no finite sector level can cover the equilibrium.
    if eq0.v_bar.iter().any(|v| v.abs() > 0.8) {
        return Err(Error::Invalid(
            "activation operating point too deep into saturation".into(),
        ));
    }

    // Output matrix scaled row-wise so ȳ lands mid-interval when absolute
    // bounds are requested. Rows with a small raw output would need a large
    // amplification, which tightens the output conditions against the
    // disturbance floor until nothing is feasible; reject those draws.
    let c = match &spec.y_bounds {
        Some((lo, hi)) => {
            let mut c = c_raw.clone();
            for r in 0..ny {
                let target = 0.5 * (lo[r] + hi[r]);
                let raw = eq0.y_bar[r];
                if raw.abs() < 1.0 {
                    return Err(Error::Invalid(
                        "equilibrium output too small for the requested band".into(),
                    ));
                }
                let factor = target / raw;
                for j in 0..n {
                    c[(r, j)] *= factor;
                }
            }
            c
        }
        None => c_raw,
    };

    let model = RnnModel::new(a_x, b_u, b_sigma, a_tilde, b_tilde, c, vec![Activation::Tanh; nu])?;
    let equilibrium = model.find_equilibrium(&u_bar, &eq0.x_bar, 200)?;

    // Interval constraints stacked as [I; −I] rows.
    let mut g_u = DMatrix::zeros(2 * m, m);
    let mut b_u_vec = DVector::zeros(2 * m);
    for i in 0..m {
        g_u[(i, i)] = 1.0;
        b_u_vec[i] = spec.u_hi[i];
        g_u[(m + i, i)] = -1.0;
        b_u_vec[m + i] = -spec.u_lo[i];
    }
    let mut g_y = DMatrix::zeros(2 * ny, ny);
    let mut b_y_vec = DVector::zeros(2 * ny);
    for r in 0..ny {
        g_y[(r, r)] = 1.0;
        g_y[(ny + r, r)] = -1.0;
        match &spec.y_bounds {
            Some((lo, hi)) => {
                b_y_vec[r] = hi[r];
                b_y_vec[ny + r] = -lo[r];
            }
            None => {
                b_y_vec[r] = equilibrium.y_bar[r] + spec.y_halfwidth[r];
                b_y_vec[ny + r] = -(equilibrium.y_bar[r] - spec.y_halfwidth[r]);
            }
        }
    }
    let constraints = ConstraintSets::new(g_u, b_u_vec, g_y, b_y_vec, spec.disturbance_shape())?;

    let margin = constraints.equilibrium_margin(&equilibrium);
    if margin <= 1e-6 {
        return Err(Error::Invalid(format!(
            "equilibrium margin {margin:.3e} too small"
        )));
    }
    Ok(Benchmark {
        spec: spec.clone(),
        model,
        equilibrium,
        constraints,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generation_is_deterministic() {
        let spec = BenchmarkSpec::random_small(7, 3);
        let a = generate_benchmark(&spec).unwrap();
        let b = generate_benchmark(&spec).unwrap();
        assert_eq!(a.model, b.model);
        assert_eq!(a.equilibrium, b.equilibrium);
        assert_eq!(a.constraints, b.constraints);
    }

    #[test]
    fn spectral_radius_hits_target() {
        for seed in [1, 2, 3] {
            let mut spec = BenchmarkSpec::random_small(seed, 4);
            spec.spectral_radius = 0.8;
            let b = generate_benchmark(&spec).unwrap();
            let rho = spectral_radius(&b.model.a());
            assert!((rho - 0.8).abs() <= 1e-9, "seed {seed}: rho = {rho}");
        }
    }

    #[test]
    fn ph_like_preset_pins_published_values() {
        let spec = BenchmarkSpec::ph_like(1);
        assert_eq!(spec.n, 10);
        assert_eq!(spec.nu, 5);
        let b = generate_benchmark(&spec).unwrap();
        // Bounds appear verbatim in the constraint sets.
        assert_eq!(b.constraints.b_u[0], 17.0);
        assert_eq!(b.constraints.b_u[1], -12.5);
        assert_eq!(b.constraints.b_y[0], 9.13);
        assert_eq!(b.constraints.b_y[1], -5.94);
        assert!(b.constraints.equilibrium_margin(&b.equilibrium) > 0.1);
        // All-tanh channels.
        assert!(b.model.activations.iter().all(|a| *a == Activation::Tanh));
        // The ∞-ball of radius w_max fits inside E(Q_w⁰): corners included.
        let corner = DVector::from_element(10, 0.01);
        let q = (corner.transpose() * &b.constraints.q_w0 * &corner)[(0, 0)];
        assert!(q <= 1.0 + 1e-12);
        // Designer boost box: 1/(0.0912 · 2.25).
        let g = spec.designer_boost_scales().unwrap();
        assert!((g[0] - 1.0 / (0.0912 * 2.25)).abs() < 1e-12);
    }

    #[test]
    fn equilibrium_strictly_inside_for_random_small() {
        for seed in 0..5 {
            let b = generate_benchmark(&BenchmarkSpec::random_small(seed, 2)).unwrap();
            assert!(b.constraints.equilibrium_margin(&b.equilibrium) > 1e-6);
        }
    }
}
