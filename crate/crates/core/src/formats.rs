//! On-disk JSON formats shared by the CLI and bindings.

use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::activation::Activation;
use crate::error::Result;
use crate::model::{ConstraintSets, Equilibrium, RnnModel};
use crate::serialize::{mat_to_rows, rows_to_mat};

/// Model file: row-major nested arrays per matrix, activation tags, and an
/// optional equilibrium block.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelFile {
    #[serde(rename = "A_x")]
    pub a_x: Vec<Vec<f64>>,
    #[serde(rename = "B_u")]
    pub b_u: Vec<Vec<f64>>,
    #[serde(rename = "B_sigma")]
    pub b_sigma: Vec<Vec<f64>>,
    #[serde(rename = "A_tilde")]
    pub a_tilde: Vec<Vec<f64>>,
    #[serde(rename = "B_tilde")]
    pub b_tilde: Vec<Vec<f64>>,
    #[serde(rename = "C")]
    pub c: Vec<Vec<f64>>,
    pub activations: Vec<Activation>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub equilibrium: Option<Equilibrium>,
}

impl ModelFile {
    pub fn from_parts(model: &RnnModel, equilibrium: Option<&Equilibrium>) -> Self {
        // Zero-width matrices keep their row count through an explicit
        // empty-row representation.
        let rows_of = |m: &DMatrix<f64>| -> Vec<Vec<f64>> {
            if m.ncols() == 0 {
                vec![Vec::new(); m.nrows()]
            } else {
                mat_to_rows(m)
            }
        };
        ModelFile {
            a_x: rows_of(&model.a_x),
            b_u: rows_of(&model.b_u),
            b_sigma: rows_of(&model.b_sigma),
            a_tilde: rows_of(&model.a_tilde),
            b_tilde: rows_of(&model.b_tilde),
            c: rows_of(&model.c),
            activations: model.activations.clone(),
            equilibrium: equilibrium.cloned(),
        }
    }

    pub fn into_parts(self) -> Result<(RnnModel, Option<Equilibrium>)> {
        let to_mat = |rows: &[Vec<f64>], cols_hint: usize| -> Result<DMatrix<f64>> {
            if rows.iter().all(|r| r.is_empty()) {
                return Ok(DMatrix::zeros(rows.len(), cols_hint));
            }
            rows_to_mat(rows).map_err(crate::error::Error::Invalid)
        };
        let nu = self.activations.len();
        let n_cols = self.a_x.first().map_or(0, |r| r.len());
        let m_cols = self.b_u.first().map_or(0, |r| r.len());
        let model = RnnModel::new(
            to_mat(&self.a_x, n_cols)?,
            to_mat(&self.b_u, m_cols)?,
            to_mat(&self.b_sigma, nu)?,
            to_mat(&self.a_tilde, n_cols)?,
            to_mat(&self.b_tilde, m_cols)?,
            to_mat(&self.c, n_cols)?,
            self.activations,
        )?;
        Ok((model, self.equilibrium))
    }
}

pub fn save_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n")?;
    Ok(())
}

pub fn load_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

pub fn save_model(model: &RnnModel, equilibrium: Option<&Equilibrium>, path: &Path) -> Result<()> {
    save_json(&ModelFile::from_parts(model, equilibrium), path)
}

pub fn load_model(path: &Path) -> Result<(RnnModel, Option<Equilibrium>)> {
    let file: ModelFile = load_json(path)?;
    file.into_parts()
}

pub fn save_constraints(constraints: &ConstraintSets, path: &Path) -> Result<()> {
    save_json(constraints, path)
}

pub fn load_constraints(path: &Path) -> Result<ConstraintSets> {
    load_json(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bench::{generate_benchmark, BenchmarkSpec};

    #[test]
    fn model_json_round_trip() {
        let b = generate_benchmark(&BenchmarkSpec::random_small(3, 3)).unwrap();
        let file = ModelFile::from_parts(&b.model, Some(&b.equilibrium));
        let text = serde_json::to_string(&file).unwrap();
        assert!(text.contains("\"A_x\""));
        assert!(text.contains("\"activations\""));
        let parsed: ModelFile = serde_json::from_str(&text).unwrap();
        let (model, eq) = parsed.into_parts().unwrap();
        assert_eq!(model, b.model);
        assert_eq!(eq.unwrap(), b.equilibrium);
    }

    #[test]
    fn linear_model_with_no_channels_round_trips() {
        use nalgebra::{dmatrix, DMatrix};
        let model = RnnModel::new(
            dmatrix![0.5],
            dmatrix![1.0],
            DMatrix::zeros(1, 0),
            DMatrix::zeros(0, 1),
            DMatrix::zeros(0, 1),
            dmatrix![1.0],
            vec![],
        )
        .unwrap();
        let file = ModelFile::from_parts(&model, None);
        let text = serde_json::to_string(&file).unwrap();
        let parsed: ModelFile = serde_json::from_str(&text).unwrap();
        let (back, _) = parsed.into_parts().unwrap();
        assert_eq!(back, model);
    }
}
