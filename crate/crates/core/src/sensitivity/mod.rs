//! Sensitivity coefficients of voltage and current magnitudes with respect to
//! nodal active and reactive injections.
//!
//! Two routes produce the same [`SensitivityMatrix`]: [`analytical_sensitivities`]
//! differentiates the exact power flow of a known grid, and
//! [`estimate_sensitivities`] regresses first-differenced measurements without
//! using any impedance data.

mod analytical;
mod estimate;

use std::io::Write;

use nalgebra::DMatrix;
use thiserror::Error;

use crate::powerflow::PfError;

pub use analytical::{analytical_sensitivities, linearization_error, validity_radius};
pub use estimate::{estimate_sensitivities, excitation_window, Channel, Estimate, ExcitationSpec, Unidentifiable};

/// Worst-case voltage prediction error tolerated inside the validity radius, pu.
pub const LINEARIZATION_BUDGET: f64 = 5e-4;

#[derive(Debug, Error)]
pub enum SensitivityError {
    #[error("power flow at the operating point failed")]
    PowerFlow(#[from] PfError),
    #[error("singular operating point: {0}")]
    Singular(String),
    #[error("regressor is rank deficient (condition number {condition_number:.3e})")]
    RankDeficient { condition_number: f64 },
    #[error("window has {samples} samples, at least {required} needed")]
    ShortWindow { samples: usize, required: usize },
    #[error("measurement window does not match the grid: {0}")]
    Shape(String),
}

/// Linearisation of `|V|` and `|I|` around an operating point.
///
/// Rows of the voltage blocks follow `bus_ids`, rows of the current blocks
/// follow `branch_ids`, and columns follow `injection_buses` (every non-root
/// bus). Entries are in pu per pu on the system base.
#[derive(Clone, Debug, PartialEq)]
pub struct SensitivityMatrix {
    pub bus_ids: Vec<String>,
    pub branch_ids: Vec<String>,
    pub injection_buses: Vec<String>,
    pub k_vp: DMatrix<f64>,
    pub k_vq: DMatrix<f64>,
    pub k_ip: DMatrix<f64>,
    pub k_iq: DMatrix<f64>,
    /// Voltage magnitudes at the operating point.
    pub v0: Vec<f64>,
    /// Current magnitudes at the operating point.
    pub i0: Vec<f64>,
    /// Largest per-bus |dP|, |dQ| (pu) for which predictions stay within
    /// [`LINEARIZATION_BUDGET`].
    pub validity_radius: f64,
}

impl SensitivityMatrix {
    pub fn column_of(&self, bus: &str) -> Option<usize> {
        self.injection_buses.iter().position(|b| b == bus)
    }

    /// Predicted voltage magnitudes for injection deltas indexed by column.
    pub fn predict_v(&self, dp: &[f64], dq: &[f64]) -> Vec<f64> {
        predict(&self.v0, &self.k_vp, &self.k_vq, dp, dq)
    }

    pub fn predict_i(&self, dp: &[f64], dq: &[f64]) -> Vec<f64> {
        predict(&self.i0, &self.k_ip, &self.k_iq, dp, dq)
    }

    /// `||K - K_ref||_F / ||K_ref||_F` over all four blocks stacked.
    pub fn relative_frobenius_error(&self, reference: &SensitivityMatrix) -> f64 {
        let blocks = [
            (&self.k_vp, &reference.k_vp),
            (&self.k_vq, &reference.k_vq),
            (&self.k_ip, &reference.k_ip),
            (&self.k_iq, &reference.k_iq),
        ];
        let diff: f64 = blocks.iter().map(|(a, b)| (*a - *b).norm_squared()).sum();
        let norm: f64 = blocks.iter().map(|(_, b)| b.norm_squared()).sum();
        (diff / norm).sqrt()
    }

    /// Writes `block,row_id,column_id,value` rows.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["block", "row_id", "column_id", "value"])?;
        let blocks = [
            ("K_VP", &self.k_vp, &self.bus_ids),
            ("K_VQ", &self.k_vq, &self.bus_ids),
            ("K_IP", &self.k_ip, &self.branch_ids),
            ("K_IQ", &self.k_iq, &self.branch_ids),
        ];
        for (name, block, rows) in blocks {
            for (r, row_id) in rows.iter().enumerate() {
                for (c, col_id) in self.injection_buses.iter().enumerate() {
                    w.write_record([name, row_id, col_id, &format!("{:e}", block[(r, c)])])?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }
}

fn predict(base: &[f64], kp: &DMatrix<f64>, kq: &DMatrix<f64>, dp: &[f64], dq: &[f64]) -> Vec<f64> {
    base.iter()
        .enumerate()
        .map(|(r, &x0)| {
            x0 + (0..kp.ncols())
                .map(|c| kp[(r, c)] * dp[c] + kq[(r, c)] * dq[c])
                .sum::<f64>()
        })
        .collect()
}
