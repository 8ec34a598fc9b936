//! Serde adapters for nalgebra types.
//!
//! Matrices serialize as row-major nested arrays, vectors as flat arrays,
//! so every file format stays readable from any language.

use nalgebra::{DMatrix, DVector};

pub fn mat_to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

pub fn rows_to_mat(rows: &[Vec<f64>]) -> Result<DMatrix<f64>, String> {
    let nr = rows.len();
    if nr == 0 {
        return Ok(DMatrix::zeros(0, 0));
    }
    let nc = rows[0].len();
    for (i, r) in rows.iter().enumerate() {
        if r.len() != nc {
            return Err(format!("ragged matrix: row {i} has {} of {nc} entries", r.len()));
        }
    }
    Ok(DMatrix::from_fn(nr, nc, |i, j| rows[i][j]))
}

/// Serialize a `DVector<f64>` as a plain JSON array.
pub mod vec_f64 {
    use super::*;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &DVector<f64>, s: S) -> Result<S::Ok, S::Error> {
        v.as_slice().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DVector<f64>, D::Error> {
        let data = Vec::<f64>::deserialize(d)?;
        Ok(DVector::from_vec(data))
    }
}

/// Serialize a `DMatrix<f64>` as row-major nested JSON arrays.
pub mod mat_f64 {
    use super::*;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
        mat_to_rows(m).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<f64>, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        rows_to_mat(&rows).map_err(serde::de::Error::custom)
    }
}
