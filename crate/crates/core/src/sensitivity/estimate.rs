use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{SensitivityError, SensitivityMatrix};
use crate::grid::RadialGrid;
use crate::powerflow::{synthesize_measurements, MeasurementSeries, NoiseSpec};

/// Condition numbers above this are treated as collinear injections.
pub const MAX_CONDITION_NUMBER: f64 = 1e8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Channel {
    P,
    Q,
}

/// An injection column the window never excited.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Unidentifiable {
    pub bus: String,
    pub channel: Channel,
}

#[derive(Clone, Debug)]
pub struct Estimate {
    pub matrix: SensitivityMatrix,
    /// Condition number of the column-normalised regressor that was solved.
    pub condition_number: f64,
    pub r_squared_v: Vec<f64>,
    pub r_squared_i: Vec<f64>,
    /// Columns left at zero because their injections never changed.
    pub unidentifiable: Vec<Unidentifiable>,
}

/// Ordinary least squares on first differences of consecutive samples:
/// `dV = K_VP dP + K_VQ dQ` row by row, and the same for `|I|`.
///
/// The operating point is the last sample of the window. Columns whose
/// injection never moves are reported as unidentifiable; if the remaining
/// columns are collinear the estimate is refused.
pub fn estimate_sensitivities(grid: &RadialGrid, window: &MeasurementSeries) -> Result<Estimate, SensitivityError> {
    let n = grid.n_buses();
    let nb = grid.n_branches();
    let root = grid.root();
    let samples = window.len();
    for (name, rows, width) in [("v_mag", &window.v_mag, n), ("i_mag", &window.i_mag, nb), ("p", &window.p, n), ("q", &window.q, n)] {
        if rows.len() != samples || rows.iter().any(|r| r.len() != width) {
            return Err(SensitivityError::Shape(format!("channel '{name}' must be {samples} x {width}")));
        }
    }

    let injection_idx: Vec<usize> = (0..n).filter(|&i| i != root).collect();
    let cols = injection_idx.len();
    let required = 2 * cols;
    if samples < required.max(2) {
        return Err(SensitivityError::ShortWindow { samples, required });
    }

    let rows = samples - 1;
    let diff = |series: &Vec<Vec<f64>>, j: usize| -> Vec<f64> { (1..samples).map(|t| series[t][j] - series[t - 1][j]).collect() };

    // Candidate regressors: dP for each injection bus, then dQ.
    let mut candidates: Vec<(usize, Channel, Vec<f64>)> = Vec::with_capacity(2 * cols);
    for (c, &bus) in injection_idx.iter().enumerate() {
        candidates.push((c, Channel::P, diff(&window.p, bus)));
    }
    for (c, &bus) in injection_idx.iter().enumerate() {
        candidates.push((c, Channel::Q, diff(&window.q, bus)));
    }
    let norms: Vec<f64> = candidates.iter().map(|(_, _, d)| d.iter().map(|x| x * x).sum::<f64>().sqrt()).collect();
    let largest = norms.iter().cloned().fold(0.0, f64::max);
    let mut unidentifiable = Vec::new();
    let mut kept = Vec::new();
    for (k, (c, ch, _)) in candidates.iter().enumerate() {
        if norms[k] <= 1e-12 || norms[k] <= 1e-9 * largest {
            unidentifiable.push(Unidentifiable {
                bus: grid.buses()[injection_idx[*c]].id.clone(),
                channel: *ch,
            });
        } else {
            kept.push(k);
        }
    }
    if kept.is_empty() || rows < kept.len() {
        return Err(SensitivityError::ShortWindow {
            samples,
            required: kept.len() + 1,
        });
    }

    let mut x = DMatrix::<f64>::zeros(rows, kept.len());
    for (j, &k) in kept.iter().enumerate() {
        for t in 0..rows {
            x[(t, j)] = candidates[k].2[t] / norms[k];
        }
    }
    let svd = x.clone().svd(true, true);
    let s_max = svd.singular_values.max();
    let s_min = svd.singular_values.min();
    let condition_number = if s_min > 0.0 { s_max / s_min } else { f64::INFINITY };
    if !(condition_number <= MAX_CONDITION_NUMBER) {
        return Err(SensitivityError::RankDeficient { condition_number });
    }

    let mut y = DMatrix::<f64>::zeros(rows, n + nb);
    for i in 0..n {
        for (t, d) in diff(&window.v_mag, i).into_iter().enumerate() {
            y[(t, i)] = d;
        }
    }
    for e in 0..nb {
        for (t, d) in diff(&window.i_mag, e).into_iter().enumerate() {
            y[(t, n + e)] = d;
        }
    }
    let coeffs = svd
        .solve(&y, 0.0)
        .map_err(|e| SensitivityError::Singular(e.to_string()))?;
    let residual = &y - &x * &coeffs;

    let r_squared: Vec<f64> = (0..n + nb)
        .map(|j| {
            let col = y.column(j);
            let mean = col.mean();
            let ss_tot: f64 = col.iter().map(|v| (v - mean).powi(2)).sum();
            let ss_res: f64 = residual.column(j).iter().map(|v| v * v).sum();
            if ss_tot > 0.0 {
                1.0 - ss_res / ss_tot
            } else if ss_res == 0.0 {
                1.0
            } else {
                0.0
            }
        })
        .collect();

    let mut k_vp = DMatrix::zeros(n, cols);
    let mut k_vq = DMatrix::zeros(n, cols);
    let mut k_ip = DMatrix::zeros(nb, cols);
    let mut k_iq = DMatrix::zeros(nb, cols);
    for (j, &k) in kept.iter().enumerate() {
        let (c, ch, _) = &candidates[k];
        let (kv, ki) = match ch {
            Channel::P => (&mut k_vp, &mut k_ip),
            Channel::Q => (&mut k_vq, &mut k_iq),
        };
        for i in 0..n {
            kv[(i, *c)] = coeffs[(j, i)] / norms[k];
        }
        for e in 0..nb {
            ki[(e, *c)] = coeffs[(j, n + e)] / norms[k];
        }
    }

    // Deltas seen in the window bound the region the fit describes.
    let validity_radius = kept
        .iter()
        .flat_map(|&k| candidates[k].2.iter().map(|d| d.abs()))
        .fold(0.0, f64::max);

    let last = samples - 1;
    Ok(Estimate {
        matrix: SensitivityMatrix {
            bus_ids: grid.bus_ids(),
            branch_ids: grid.branches().iter().map(|b| b.id.clone()).collect(),
            injection_buses: injection_idx.iter().map(|&i| grid.buses()[i].id.clone()).collect(),
            k_vp,
            k_vq,
            k_ip,
            k_iq,
            v0: window.v_mag[last].clone(),
            i0: window.i_mag[last].clone(),
            validity_radius,
        },
        condition_number,
        r_squared_v: r_squared[..n].to_vec(),
        r_squared_i: r_squared[n..].to_vec(),
        unidentifiable,
    })
}

/// Random excitation around an operating point, as a DERMS probing its grid.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ExcitationSpec {
    pub samples: usize,
    /// Bound on the per-bus P and Q deltas, pu.
    pub amplitude: f64,
    /// Relative measurement noise.
    pub noise_sigma: f64,
    pub seed: u64,
}

/// Measurement window whose injections wander around `operating` by
/// independent deltas, uniform in `±amplitude`, at every non-root bus. The last sample is the
/// operating point itself, so an estimate from the window is linearised there.
pub fn excitation_window(
    grid: &RadialGrid,
    operating: &[Complex64],
    slack_voltage: f64,
    spec: ExcitationSpec,
) -> Result<MeasurementSeries, SensitivityError> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let root = grid.root();
    let mut series = Vec::with_capacity(spec.samples);
    for t in 0..spec.samples {
        let mut inj = operating.to_vec();
        if t + 1 < spec.samples {
            for (i, s) in inj.iter_mut().enumerate() {
                if i != root {
                    let dp = rng.gen_range(-1.0..=1.0);
                    let dq = rng.gen_range(-1.0..=1.0);
                    *s += Complex64::new(dp, dq) * spec.amplitude;
                }
            }
        }
        series.push(inj);
    }
    let noise = NoiseSpec {
        sigma: spec.noise_sigma,
        seed: spec.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(1),
    };
    let (window, _) = synthesize_measurements(grid, &series, &[], slack_voltage, noise)?;
    Ok(window)
}
