//! Time-indexed closed-loop records and their CSV format.

use std::io::{BufRead, Write};
use std::path::Path;

use nalgebra::DVector;

use crate::error::{Error, Result};

/// One simulation step.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryStep {
    pub k: usize,
    pub x: DVector<f64>,
    pub u: DVector<f64>,
    pub y: DVector<f64>,
    /// Boost input after projection.
    pub u_b: DVector<f64>,
    /// Operator output before projection.
    pub u_b_tilde: DVector<f64>,
    pub w: DVector<f64>,
    /// Reconstructed exogenous sample ŵ_e(k).
    pub w_e_hat: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory {
    pub steps: Vec<TrajectoryStep>,
}

impl Trajectory {
    pub fn horizon(&self) -> usize {
        self.steps.len()
    }

    fn dims(&self) -> Option<(usize, usize, usize)> {
        self.steps
            .first()
            .map(|s| (s.x.len(), s.u.len(), s.y.len()))
    }

    /// Writes the CSV representation: header
    /// `k,x_1..x_n,u_1..u_m,y_1..y_ny,ub_1..ub_m,ubtilde_1..ubtilde_m,w_1..w_n`
    /// and one row per step, full double precision.
    pub fn write_csv<W: Write>(&self, mut out: W, n: usize, m: usize, ny: usize) -> Result<()> {
        let mut header = vec!["k".to_string()];
        let cols = |tag: &str, count: usize| -> Vec<String> {
            (1..=count).map(|i| format!("{tag}_{i}")).collect()
        };
        header.extend(cols("x", n));
        header.extend(cols("u", m));
        header.extend(cols("y", ny));
        header.extend(cols("ub", m));
        header.extend(cols("ubtilde", m));
        header.extend(cols("w", n));
        writeln!(out, "{}", header.join(","))?;

        for s in &self.steps {
            let mut row = vec![s.k.to_string()];
            for v in [&s.x, &s.u, &s.y, &s.u_b, &s.u_b_tilde, &s.w] {
                row.extend(v.iter().map(|x| format!("{x}")));
            }
            writeln!(out, "{}", row.join(","))?;
        }
        Ok(())
    }

    pub fn export_csv(&self, path: &Path, n: usize, m: usize, ny: usize) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(file), n, m, ny)
    }

    /// Parses a CSV produced by [`Trajectory::write_csv`]. The reconstructed
    /// ŵ_e column set is not part of the format and comes back empty.
    pub fn parse_csv<R: BufRead>(input: R) -> Result<Trajectory> {
        let mut lines = input.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Invalid("empty trajectory file".into()))??;
        let names: Vec<&str> = header.split(',').collect();
        let count = |tag: &str| {
            names
                .iter()
                .filter(|h| {
                    h.starts_with(tag)
                        && h[tag.len()..]
                            .strip_prefix('_')
                            .is_some_and(|s| s.chars().all(|c| c.is_ascii_digit()))
                })
                .count()
        };
        let n = count("x");
        let m = count("u") ;
        let ny = count("y");
        let expected = 1 + 2 * n + 3 * m + ny;
        if names.len() != expected {
            return Err(Error::Invalid(format!(
                "trajectory header has {} columns, expected {expected}",
                names.len()
            )));
        }

        let mut steps = Vec::new();
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let vals: Vec<&str> = line.split(',').collect();
            if vals.len() != expected {
                return Err(Error::Invalid(format!(
                    "trajectory row has {} columns, expected {expected}",
                    vals.len()
                )));
            }
            let k: usize = vals[0]
                .parse()
                .map_err(|e| Error::Invalid(format!("bad step index: {e}")))?;
            let mut cursor = 1usize;
            let mut take = |len: usize| -> Result<DVector<f64>> {
                let out = DVector::from_fn(len, |i, _| {
                    vals[cursor + i].parse::<f64>().unwrap_or(f64::NAN)
                });
                if out.iter().any(|v| v.is_nan()) {
                    return Err(Error::Invalid("non-numeric trajectory entry".into()));
                }
                cursor += len;
                Ok(out)
            };
            let x = take(n)?;
            let u = take(m)?;
            let y = take(ny)?;
            let u_b = take(m)?;
            let u_b_tilde = take(m)?;
            let w = take(n)?;
            steps.push(TrajectoryStep {
                k,
                x,
                u,
                y,
                u_b,
                u_b_tilde,
                w,
                w_e_hat: DVector::zeros(0),
            });
        }
        Ok(Trajectory { steps })
    }

    /// Checks the defining relation u(k) = ū + KΔx(k) + u_b(k) at every
    /// step; returns the worst absolute defect.
    pub fn input_consistency(
        &self,
        u_bar: &DVector<f64>,
        x_bar: &DVector<f64>,
        k_gain: &nalgebra::DMatrix<f64>,
    ) -> f64 {
        self.steps
            .iter()
            .map(|s| {
                let want = u_bar + k_gain * (&s.x - x_bar) + &s.u_b;
                (&s.u - want).norm()
            })
            .fold(0.0, f64::max)
    }

    /// Column count of the CSV format for the given dimensions.
    pub fn csv_columns(n: usize, m: usize, ny: usize) -> usize {
        1 + 2 * n + 3 * m + ny
    }

    pub fn expected_dims_match(&self) -> bool {
        match self.dims() {
            None => true,
            Some((n, m, ny)) => self.steps.iter().all(|s| {
                s.x.len() == n
                    && s.u.len() == m
                    && s.y.len() == ny
                    && s.u_b.len() == m
                    && s.u_b_tilde.len() == m
                    && s.w.len() == n
            }),
        }
    }
}
