//! HMM parameter file.
//!
//! A JSON object with keys
//!
//! * `initial`: initial state law, length `K`;
//! * `transition`: one `K × K` row-stochastic matrix (list of rows) shared by
//!   every gap, or `transitions`: one such matrix per gap (`p − 1` of them);
//! * `emission`: `K × M` matrix, row `u` the genotype law in state `u`.
//!
//! ```json
//! {"initial": [0.5, 0.5],
//!  "transition": [[0.9, 0.1], [0.0, 1.0]],
//!  "emission": [[0.8, 0.2], [0.3, 0.7]]}
//! ```

use crate::error::{CliError, Result};
use nalgebra::DMatrix;
use serde::Deserialize;
use spacrt::hmm::Hmm;
use std::path::Path;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct HmmFile {
    initial: Vec<f64>,
    #[serde(default)]
    transition: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    transitions: Option<Vec<Vec<Vec<f64>>>>,
    emission: Vec<Vec<f64>>,
}

fn matrix(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>> {
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.is_empty() || rows.iter().any(|r| r.len() != ncols) {
        return Err(CliError::Config(format!(
            "HMM {what} must be a non-empty rectangular matrix"
        )));
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

pub fn load_hmm(path: &Path, n_sites: usize) -> Result<Hmm> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::io(format!("cannot read {}", path.display()), e))?;
    let file: HmmFile = serde_json::from_str(&text)
        .map_err(|e| CliError::Config(format!("HMM file {}: {e}", path.display())))?;
    let emission = matrix(&file.emission, "emission")?;
    let hmm = match (file.transition, file.transitions) {
        (Some(q), None) => Hmm::new(file.initial, matrix(&q, "transition")?, emission, n_sites),
        (None, Some(qs)) => {
            if qs.len() + 1 != n_sites {
                return Err(CliError::Config(format!(
                    "HMM file has {} transition matrices for {n_sites} sites",
                    qs.len()
                )));
            }
            let qs = qs
                .iter()
                .map(|q| matrix(q, "transition"))
                .collect::<Result<Vec<_>>>()?;
            Hmm::with_site_transitions(file.initial, qs, emission)
        }
        _ => {
            return Err(CliError::Config(
                "HMM file needs exactly one of 'transition' or 'transitions'".into(),
            ))
        }
    };
    hmm.map_err(|e| CliError::Config(format!("HMM file {}: {e}", path.display())))
}
