mod common;

use std::time::Instant;

use gridflex::grid::{LvGrid, Network};
use gridflex::lvflex::hull::{convex_hull, hausdorff};
use gridflex::lvflex::{build_flex_area, Containment, DerFlexLimits, FlexArea, FlexDirection, OperatingPoint};
use gridflex::powerflow::solve_pf;
use gridflex::scenario::Evaluator;
use gridflex::sensitivity::analytical_sensitivities;
use num_complex::Complex64;

const S_BASE: f64 = 100.0;

/// Four-bus LV feeder with two 10 kW PV units, both exporting at rating.
/// `v_max` is placed just above the operating voltage at the far end so the
/// reactive range is cut by the voltage limit.
fn oracle_grid(v_max: f64) -> Network {
    let json = r#"{
        "s_base_kva": 100,
        "mv": {"v_base_v": 10000, "slack": "S", "buses": [{"id": "S"}, {"id": "M"}],
               "branches": [{"id": "SM", "from": "S", "to": "M", "r_ohm": 0.5, "x_ohm": 0.5, "i_max_a": 100}]},
        "lv_grids": [{
            "id": "O", "v_base_v": 400,
            "transformer": {"mv_bus": "M", "kva_rating": 250},
            "buses": [{"id": "O.0", "v_min": 0.9, "v_max": 1.1}, {"id": "O.1", "v_min": 0.9, "v_max": 1.1},
                      {"id": "O.2", "v_min": 0.9, "v_max": VMAX}, {"id": "O.3", "v_min": 0.9, "v_max": VMAX}],
            "branches": [
                {"id": "O.L1", "from": "O.0", "to": "O.1", "r_ohm": 0.08, "x_ohm": 0.08, "i_max_a": 400},
                {"id": "O.L2", "from": "O.1", "to": "O.2", "r_ohm": 0.08, "x_ohm": 0.08, "i_max_a": 400},
                {"id": "O.L3", "from": "O.2", "to": "O.3", "r_ohm": 0.08, "x_ohm": 0.08, "i_max_a": 400}
            ],
            "ders": [
                {"id": "PV2", "bus": "O.2", "kind": "pv", "p_rating_kw": 10, "curtailment_fraction": 0.1, "pf_min": 0.9},
                {"id": "PV3", "bus": "O.3", "kind": "pv", "p_rating_kw": 10, "curtailment_fraction": 0.1, "pf_min": 0.9}
            ]
        }]
    }"#;
    Network::from_json_str(&json.replace("VMAX", &v_max.to_string())).unwrap()
}

fn operating(lv: &LvGrid) -> Vec<Complex64> {
    lv.grid
        .buses()
        .iter()
        .map(|b| {
            let kw: f64 = lv.ders.iter().filter(|d| d.bus == b.id).map(|d| d.p_rating_kw).sum();
            Complex64::new(kw / S_BASE, 0.0)
        })
        .collect()
}

struct Oracle {
    lv: LvGrid,
    inj: Vec<Complex64>,
    limits: DerFlexLimits,
    op: OperatingPoint,
    matrix: gridflex::sensitivity::SensitivityMatrix,
}

fn oracle() -> Oracle {
    let probe = oracle_grid(1.1);
    let lv = &probe.lv_grids[0];
    let inj = operating(lv);
    let v_end = solve_pf(&lv.grid, &inj, 1.0).unwrap().v_mag()[3];
    let net = oracle_grid(v_end + 0.002);
    let lv = net.lv_grids[0].clone();
    let matrix = analytical_sensitivities(&lv.grid, &inj, 1.0).unwrap();
    let op = OperatingPoint::new(&lv.grid, &matrix, S_BASE).unwrap();
    let limits = DerFlexLimits::from_ders(&lv.ders, &[10.0, 10.0]);
    Oracle {
        lv,
        inj,
        limits,
        op,
        matrix,
    }
}

fn area(o: &Oracle, limits: &DerFlexLimits, directions: &[FlexDirection]) -> FlexArea {
    build_flex_area("O", &o.matrix, &o.op, limits, directions).unwrap()
}

/// Worst limit excess (pu) of the exact power flow with DER deltas applied.
fn exact_excess(o: &Oracle, deltas: &[(f64, f64)]) -> f64 {
    let mut inj = o.inj.clone();
    for (d, &(dp, dq)) in o.lv.ders.iter().zip(deltas) {
        let i = o.lv.grid.bus_index(&d.bus).unwrap();
        inj[i] += Complex64::new(dp, dq) / S_BASE;
    }
    let pf = solve_pf(&o.lv.grid, &inj, 1.0).unwrap();
    let mut worst: f64 = 0.0;
    for (b, v) in o.lv.grid.buses().iter().zip(pf.v_mag()) {
        worst = worst.max(v - b.v_max).max(b.v_min - v);
    }
    for (br, i) in o.lv.grid.branches().iter().zip(pf.i_mag()) {
        worst = worst.max(i - br.i_max);
    }
    worst
}

fn steps(lo: f64, hi: f64, h: f64) -> Vec<f64> {
    let n = ((hi - lo) / h + 1e-9).floor() as usize;
    (0..=n).map(|k| lo + k as f64 * h).collect()
}

#[test]
fn eight_directions_match_brute_force_hull() {
    let o = oracle();
    let started = Instant::now();
    let poly = area(&o, &o.limits, &FlexDirection::eight());

    let l = &o.limits.ders;
    let grids: Vec<(Vec<f64>, Vec<f64>)> = l
        .iter()
        .map(|d| (steps(d.dp_min, d.dp_max, 0.1), steps(d.dq_min, d.dq_max, 0.1)))
        .collect();
    let mut feasible = Vec::new();
    for &p1 in &grids[0].0 {
        for &q1 in &grids[0].1 {
            for &p2 in &grids[1].0 {
                for &q2 in &grids[1].1 {
                    if exact_excess(&o, &[(p1, q1), (p2, q2)]) <= 0.0 {
                        feasible.push([p1 + p2, q1 + q2]);
                    }
                }
            }
        }
    }
    let hull: Vec<[f64; 2]> = convex_hull(&feasible, 1e-9).into_iter().map(|i| feasible[i]).collect();
    let d = hausdorff(&poly.corners(), &hull);
    assert!(d <= 0.2, "Hausdorff distance {d} kW; polygon {:?}, oracle {:?}", poly.corners(), hull);
    // The cut must actually bind, otherwise this only checks the DER box.
    assert!(poly.vertices.len() > 4, "{:?}", poly.corners());
    assert!(started.elapsed().as_secs_f64() < 60.0);
}

#[test]
fn vertex_setpoints_respect_limits_under_exact_power_flow() {
    let o = oracle();
    let poly = area(&o, &o.limits, &FlexDirection::eight());
    assert!(poly.contains(0.0, 0.0).is_inside());
    for v in &poly.vertices {
        let deltas: Vec<(f64, f64)> = o
            .lv
            .ders
            .iter()
            .map(|d| {
                let sp = v.setpoints.iter().find(|s| s.der_id == d.id).unwrap();
                (sp.dp_kw, sp.dq_kvar)
            })
            .collect();
        let excess = exact_excess(&o, &deltas);
        assert!(excess <= 2e-3, "vertex ({}, {}) exceeds a limit by {excess}", v.dp_kw, v.dq_kvar);
    }
}

fn inside_all(inner: &FlexArea, outer: &FlexArea) -> bool {
    inner.corners().iter().all(|&[p, q]| {
        matches!(outer.contains(p, q), Containment::Inside)
            || matches!(outer.contains(p, q), Containment::Outside { excess, .. } if excess <= 1e-7)
    })
}

#[test]
fn larger_der_ranges_never_shrink_the_polygon() {
    let o = oracle();
    let dirs = FlexDirection::eight();
    let nested: Vec<FlexArea> = [0.25, 0.5, 1.0].iter().map(|&f| area(&o, &o.limits.scaled(f), &dirs)).collect();
    for pair in nested.windows(2) {
        assert!(inside_all(&pair[0], &pair[1]));
        assert!(pair[0].area() <= pair[1].area() + 1e-9);
    }
}

#[test]
fn eight_direction_polygon_lies_inside_sixteen() {
    let o = oracle();
    let eight = area(&o, &o.limits, &FlexDirection::angular(8));
    let sixteen = area(&o, &o.limits, &FlexDirection::angular(16));
    assert!(inside_all(&eight, &sixteen));
    assert!(eight.area() <= sixteen.area() + 1e-9);
}

#[test]
fn scaled_vertex_is_outside_and_names_its_cut() {
    let o = oracle();
    let poly = area(&o, &o.limits, &FlexDirection::eight());
    let corners = poly.corners();
    let c = gridflex::lvflex::hull::centroid(&corners);
    for (k, &[p, q]) in corners.iter().enumerate() {
        let (sp, sq) = (c[0] + 1.01 * (p - c[0]), c[1] + 1.01 * (q - c[1]));
        match poly.contains(sp, sq) {
            Containment::Outside { halfplane, excess } => {
                assert!(excess > 0.0);
                // The named cut is an edge incident to the vertex.
                let h = poly.halfplanes[halfplane];
                let slack = (h[0] * p + h[1] * q - h[2]).abs();
                assert!(slack <= 1e-6, "vertex {k} named cut {halfplane}, off by {slack}");
            }
            Containment::Inside => panic!("scaled vertex {k} reported inside"),
        }
    }
}

#[test]
fn fixture_flex_reach_is_ten_percent_of_pv() {
    let fx = common::load();
    let eval = Evaluator::new(&fx.network, &fx.profiles, &fx.config).unwrap();
    let total: f64 = fx
        .network
        .lv_grids
        .iter()
        .map(|lv| eval.flex_area_at(common::NOON, &lv.id).unwrap().p_reach_kw())
        .sum();
    assert!((total - 20.0).abs() <= 1e-6, "{total}");
}
