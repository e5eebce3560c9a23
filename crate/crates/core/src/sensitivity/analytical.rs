use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use super::{SensitivityError, SensitivityMatrix, LINEARIZATION_BUDGET};
use crate::grid::RadialGrid;
use crate::powerflow::{solve_pf, PfSolution};

/// Exact derivatives of the power-flow solution at `injections`.
///
/// With constant-power injections `I_k = conj(S_k / V_k)` and the radial
/// relation `V = V_s + Z I`, where `Z[i][k]` sums the impedances shared by
/// the root paths of `i` and `k`, a change of one injection obeys
///
/// `dV + Z D conj(dV) = Z b`,  `D = diag(conj(S / V^2))`,
///
/// with `b = e_k conj(1 / V_k)` for `dP_k` and `-j e_k conj(1 / V_k)` for
/// `dQ_k`. This is solved as a real system in `(Re dV, Im dV)` and projected
/// onto magnitudes. Branches carrying no current get a zero row, which is what
/// a central difference of `|I|` returns there.
pub fn analytical_sensitivities(
    grid: &RadialGrid,
    injections: &[Complex64],
    slack_voltage: f64,
) -> Result<SensitivityMatrix, SensitivityError> {
    let pf = solve_pf(grid, injections, slack_voltage)?;
    let mut matrix = jacobian(grid, injections, &pf)?;
    matrix.validity_radius = validity_radius(grid, injections, slack_voltage, &matrix, LINEARIZATION_BUDGET / 2.0)?;
    Ok(matrix)
}

fn shared_path_impedance(grid: &RadialGrid) -> Vec<Vec<Complex64>> {
    let n = grid.n_buses();
    let topo = grid.topology();
    // Impedance from the root down to each bus.
    let mut to_root = vec![Complex64::default(); n];
    for &bus in &topo.order {
        if let Some(e) = topo.parent_edge[bus] {
            let br = &grid.branches()[e];
            to_root[bus] = to_root[br.from] + Complex64::new(br.r, br.x);
        }
    }
    let paths: Vec<Vec<usize>> = (0..n).map(|i| topo.path_from_root(i)).collect();
    let mut z = vec![vec![Complex64::default(); n]; n];
    for i in 0..n {
        for k in 0..n {
            // Deepest common ancestor of i and k.
            let common = paths[i]
                .iter()
                .zip(&paths[k])
                .take_while(|(a, b)| a == b)
                .last()
                .map(|(a, _)| *a)
                .unwrap_or(grid.root());
            z[i][k] = to_root[common];
        }
    }
    z
}

fn jacobian(grid: &RadialGrid, injections: &[Complex64], pf: &PfSolution) -> Result<SensitivityMatrix, SensitivityError> {
    let n = grid.n_buses();
    let root = grid.root();
    let z = shared_path_impedance(grid);
    let v = &pf.voltage;
    let d: Vec<Complex64> = (0..n).map(|k| (injections[k] / (v[k] * v[k])).conj()).collect();

    // System matrix [[I + A, B], [B, I - A]] with A + jB = Z D.
    let mut sys = DMatrix::<f64>::zeros(2 * n, 2 * n);
    for i in 0..n {
        for k in 0..n {
            let m = if i == root { Complex64::default() } else { z[i][k] * d[k] };
            sys[(i, k)] = m.re;
            sys[(i, n + k)] = m.im;
            sys[(n + i, k)] = m.im;
            sys[(n + i, n + k)] = -m.re;
        }
        sys[(i, i)] += 1.0;
        sys[(n + i, n + i)] += 1.0;
    }
    let lu = sys.lu();
    if !lu.is_invertible() {
        return Err(SensitivityError::Singular("voltage Jacobian is not invertible".into()));
    }

    let injection_idx: Vec<usize> = (0..n).filter(|&i| i != root).collect();
    let cols = injection_idx.len();
    let nb = grid.n_branches();
    let mut k_vp = DMatrix::zeros(n, cols);
    let mut k_vq = DMatrix::zeros(n, cols);
    let mut k_ip = DMatrix::zeros(nb, cols);
    let mut k_iq = DMatrix::zeros(nb, cols);

    let topo = grid.topology();
    let subtree_of_edge: Vec<usize> = grid.branches().iter().map(|b| b.to).collect();

    for (c, &m) in injection_idx.iter().enumerate() {
        let inv_conj = (Complex64::new(1.0, 0.0) / v[m]).conj();
        for (is_q, (kv, ki)) in [(false, (&mut k_vp, &mut k_ip)), (true, (&mut k_vq, &mut k_iq))] {
            let b_m = if is_q { Complex64::new(0.0, -1.0) * inv_conj } else { inv_conj };
            let mut rhs = DVector::zeros(2 * n);
            for i in 0..n {
                if i != root {
                    let zb = z[i][m] * b_m;
                    rhs[i] = zb.re;
                    rhs[n + i] = zb.im;
                }
            }
            let sol = lu
                .solve(&rhs)
                .ok_or_else(|| SensitivityError::Singular("voltage Jacobian solve failed".into()))?;
            let dv: Vec<Complex64> = (0..n).map(|i| Complex64::new(sol[i], sol[n + i])).collect();
            for i in 0..n {
                kv[(i, c)] = (v[i].conj() * dv[i]).re / v[i].norm();
            }
            // dI_k = b_k - D_k conj(dV_k); branch current is minus the subtree sum.
            let di: Vec<Complex64> = (0..n)
                .map(|k| {
                    let b = if k == m { b_m } else { Complex64::default() };
                    b - d[k] * dv[k].conj()
                })
                .collect();
            for (e, &child) in subtree_of_edge.iter().enumerate() {
                let current = pf.current[e];
                if current.norm() < 1e-12 {
                    continue;
                }
                let d_branch: Complex64 = (0..n)
                    .filter(|&k| topo.is_descendant(k, child))
                    .map(|k| -di[k])
                    .sum();
                ki[(e, c)] = (current.conj() * d_branch).re / current.norm();
            }
        }
    }

    Ok(SensitivityMatrix {
        bus_ids: grid.bus_ids(),
        branch_ids: grid.branches().iter().map(|b| b.id.clone()).collect(),
        injection_buses: injection_idx.iter().map(|&i| grid.buses()[i].id.clone()).collect(),
        k_vp,
        k_vq,
        k_ip,
        k_iq,
        v0: pf.v_mag(),
        i0: pf.i_mag(),
        validity_radius: 0.0,
    })
}

/// Largest `|V_pred - V_exact|` over buses for the given per-column deltas.
pub fn linearization_error(
    grid: &RadialGrid,
    injections: &[Complex64],
    slack_voltage: f64,
    matrix: &SensitivityMatrix,
    dp: &[f64],
    dq: &[f64],
) -> Result<f64, SensitivityError> {
    let mut perturbed = injections.to_vec();
    for (c, bus) in matrix.injection_buses.iter().enumerate() {
        let i = grid
            .bus_index(bus)
            .ok_or_else(|| SensitivityError::Shape(format!("unknown bus '{bus}'")))?;
        perturbed[i] += Complex64::new(dp[c], dq[c]);
    }
    let exact = solve_pf(grid, &perturbed, slack_voltage)?.v_mag();
    let predicted = matrix.predict_v(dp, dq);
    Ok(exact
        .iter()
        .zip(&predicted)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max))
}

/// Halves a trial radius from 0.05 pu until every probe pattern (uniform and
/// alternating signs on P and Q) predicts voltages within `budget`.
pub fn validity_radius(
    grid: &RadialGrid,
    injections: &[Complex64],
    slack_voltage: f64,
    matrix: &SensitivityMatrix,
    budget: f64,
) -> Result<f64, SensitivityError> {
    let cols = matrix.injection_buses.len();
    if cols == 0 {
        return Ok(f64::INFINITY);
    }
    let sign_patterns: Vec<Vec<f64>> = vec![
        vec![1.0; cols],
        vec![-1.0; cols],
        (0..cols).map(|c| if c % 2 == 0 { 1.0 } else { -1.0 }).collect(),
        (0..cols).map(|c| if c % 2 == 0 { -1.0 } else { 1.0 }).collect(),
    ];
    let mut radius: f64 = 0.05;
    while radius > 1e-6 {
        let mut worst: f64 = 0.0;
        for sp in &sign_patterns {
            for sq in &sign_patterns {
                let dp: Vec<f64> = sp.iter().map(|s| s * radius).collect();
                let dq: Vec<f64> = sq.iter().map(|s| s * radius).collect();
                // A failed power flow means the radius is far too large.
                let err = linearization_error(grid, injections, slack_voltage, matrix, &dp, &dq).unwrap_or(f64::INFINITY);
                worst = worst.max(err);
            }
        }
        if worst <= budget {
            return Ok(radius);
        }
        radius /= 2.0;
    }
    Ok(radius)
}
