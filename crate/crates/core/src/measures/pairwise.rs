use rayon::prelude::*;

use super::{Measure, Pt};
use crate::error::{Error, Result};

/// Row-major `n x n` distance matrix. Every supported measure is
/// symmetric, so only the upper triangle is evaluated.
pub fn pairwise_matrix(set: &[Vec<Pt>], measure: &Measure) -> Result<Vec<f64>> {
    let n = set.len();
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            ((i + 1)..n)
                .map(|j| {
                    measure.eval(&set[i], &set[j]).map_err(|e| {
                        Error::Domain(format!("{} between items {i} and {j}: {e}", measure.name()))
                    })
                })
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<_>>()?;
    let mut out = vec![0.0; n * n];
    for (i, row) in rows.into_iter().enumerate() {
        for (k, v) in row.into_iter().enumerate() {
            let j = i + 1 + k;
            out[i * n + j] = v;
            out[j * n + i] = v;
        }
    }
    Ok(out)
}
