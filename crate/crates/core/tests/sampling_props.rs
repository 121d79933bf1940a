use gridtopo::grid::{GridGraph, LineStatus};
use gridtopo::power_flow::{recover_injections, LineParams, ModelSolver, PfModel, VoltageVector};
use gridtopo::sampling::{draw_injection, draw_injections, generate_measurements, InjectionConfig, MeasurementMatrix};
use gridtopo::synth::random_grid;
use nalgebra::DMatrix;
use proptest::prelude::*;

fn feeder() -> GridGraph {
    include_str!("../data/feeder19.grid").parse().unwrap()
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let m = v.len() as f64;
    let mean = v.iter().sum::<f64>() / m;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (m - 1.0);
    (mean, var.sqrt())
}

#[test]
fn gaussian_draws_obey_lln_bounds() {
    let loads: Vec<usize> = (1..=19).collect();
    let m = 100_000;
    let draws = draw_injections(&InjectionConfig::default(), &loads, m, 11).unwrap();
    for i in 0..loads.len() {
        for col in [draws.iter().map(|d| d.p[i]).collect::<Vec<_>>(), draws.iter().map(|d| d.q[i]).collect()] {
            let (mean, std) = mean_std(&col);
            assert!(mean.abs() < 4.0 / (m as f64).sqrt(), "mean {mean}");
            assert!((std - 1.0).abs() < 0.02, "std {std}");
        }
    }
}

#[test]
fn cross_node_correlation_vanishes() {
    let loads: Vec<usize> = (1..=12).collect();
    for m in [1_000, 10_000] {
        let draws = draw_injections(&InjectionConfig::default(), &loads, m, 5).unwrap();
        let cols: Vec<Vec<f64>> = (0..loads.len()).map(|i| draws.iter().map(|d| d.p[i]).collect()).collect();
        let stats: Vec<(f64, f64)> = cols.iter().map(|c| mean_std(c)).collect();
        for a in 0..cols.len() {
            for b in a + 1..cols.len() {
                let cov = cols[a].iter().zip(&cols[b]).map(|(x, y)| (x - stats[a].0) * (y - stats[b].0)).sum::<f64>()
                    / (m as f64 - 1.0);
                let rho = cov / (stats[a].1 * stats[b].1);
                assert!(rho.abs() < 5.0 / (m as f64).sqrt(), "m={m} ({a},{b}) rho={rho}");
            }
        }
    }
}

#[test]
fn dc_measurements_are_a_linear_image_of_the_draws() {
    let g = feeder();
    let t = g.operational_tree().unwrap();
    let lp = LineParams::from_grid(&g);
    let cfg = InjectionConfig::default();
    let mm = generate_measurements(&t, &lp, &cfg, PfModel::Dc, 300, 21).unwrap();
    for j in 0..mm.n_rows() {
        let v = VoltageVector { theta: Some(mm.row(j).to_vec()), ..Default::default() };
        let back = recover_injections(&t, &lp, &v, PfModel::Dc, None).unwrap();
        let want = draw_injection(&cfg, t.load_nodes(), 21, j as u64);
        let scale = want.p.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        for (x, y) in back.p.iter().zip(&want.p) {
            assert!((x - y).abs() < 1e-10 * scale);
        }
    }
}

#[test]
fn single_row_is_a_direct_solve() {
    let g = feeder();
    let t = g.operational_tree().unwrap();
    let lp = LineParams::from_grid(&g);
    let cfg = InjectionConfig::default();
    for model in [PfModel::Dc, PfModel::Lc, PfModel::LinDistFlow] {
        let mm = generate_measurements(&t, &lp, &cfg, model, 1, 3).unwrap();
        let mut row = vec![0.0; mm.width()];
        ModelSolver::new(&t, &lp, model)
            .unwrap()
            .solve_row(&draw_injection(&cfg, t.load_nodes(), 3, 0), &mut row)
            .unwrap();
        assert_eq!(mm.row(0), &row[..]);
    }
}

#[test]
fn bundled_feeder_dc_shape() {
    let g = feeder();
    let t = g.operational_tree().unwrap();
    let mm = generate_measurements(&t, &LineParams::from_grid(&g), &InjectionConfig::default(), PfModel::Dc, 500, 0)
        .unwrap();
    assert_eq!((mm.n_rows(), mm.width()), (500, 19));
}

/// `H^-1 H^-1` for unit injection variances, with `H` assembled directly
/// from the operational lines of the file.
fn population_theta_covariance(g: &GridGraph) -> (Vec<usize>, DMatrix<f64>) {
    let loads = g.load_nodes();
    let idx = |n: usize| loads.iter().position(|&l| l == n);
    let n = loads.len();
    let mut h = DMatrix::zeros(n, n);
    for l in g.lines().iter().filter(|l| l.status == LineStatus::Operational) {
        let beta = l.x / (l.x * l.x + l.r * l.r);
        let (i, j) = (idx(l.a), idx(l.b));
        for k in [i, j].into_iter().flatten() {
            h[(k, k)] += beta;
        }
        if let (Some(i), Some(j)) = (i, j) {
            h[(i, j)] -= beta;
            h[(j, i)] -= beta;
        }
    }
    let inv = h.try_inverse().unwrap();
    (loads, &inv * &inv)
}

#[test]
fn empirical_theta_covariance_matches_population() {
    let g = feeder();
    let t = g.operational_tree().unwrap();
    let mm =
        generate_measurements(&t, &LineParams::from_grid(&g), &InjectionConfig::default(), PfModel::Dc, 100_000, 8)
            .unwrap();
    let (loads, pop) = population_theta_covariance(&g);
    assert_eq!(loads, mm.nodes());
    let cols: Vec<Vec<f64>> = (0..mm.width()).map(|c| mm.column(c)).collect();
    let means: Vec<f64> = cols.iter().map(|c| c.iter().sum::<f64>() / c.len() as f64).collect();
    let max = pop.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    for a in 0..cols.len() {
        for b in a..cols.len() {
            if pop[(a, b)].abs() < 0.1 * max {
                continue;
            }
            let emp = cols[a].iter().zip(&cols[b]).map(|(x, y)| (x - means[a]) * (y - means[b])).sum::<f64>()
                / (cols[a].len() as f64 - 1.0);
            let rel = (emp - pop[(a, b)]).abs() / pop[(a, b)].abs();
            assert!(rel < 5e-2, "({a},{b}) {emp} vs {}", pop[(a, b)]);
        }
    }
}

#[test]
fn csv_rejects_truncation_and_model_mismatch() {
    let g = feeder();
    let t = g.operational_tree().unwrap();
    let mm =
        generate_measurements(&t, &LineParams::from_grid(&g), &InjectionConfig::default(), PfModel::Lc, 4, 1).unwrap();
    let doc = mm.to_csv();
    let cut = &doc[..doc.trim_end().rfind(',').unwrap()];
    assert!(MeasurementMatrix::from_csv(cut).is_err());
    assert!(MeasurementMatrix::from_csv("").is_err());
    let back = MeasurementMatrix::from_csv(&doc).unwrap();
    assert!(back.expect_model(PfModel::Lc).is_ok());
    assert!(back.expect_model(PfModel::Dc).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn csv_round_trip(n_loads in 2usize..9, m in 1usize..12, seed in any::<u64>(), which in 0usize..3) {
        let g = random_grid(n_loads, 0, seed).unwrap();
        let t = g.operational_tree().unwrap();
        let model = [PfModel::Dc, PfModel::Lc, PfModel::LinDistFlow][which];
        let mm = generate_measurements(&t, &LineParams::from_grid(&g), &InjectionConfig::default(), model, m, seed)
            .unwrap();
        let back = MeasurementMatrix::from_csv(&mm.to_csv()).unwrap();
        prop_assert_eq!(back, mm);
    }

    #[test]
    fn same_seed_is_bit_identical(n_loads in 2usize..9, seed in any::<u64>()) {
        let g = random_grid(n_loads, 0, seed).unwrap();
        let t = g.operational_tree().unwrap();
        let lp = LineParams::from_grid(&g);
        let a = generate_measurements(&t, &lp, &InjectionConfig::default(), PfModel::Lc, 20, seed).unwrap();
        let b = generate_measurements(&t, &lp, &InjectionConfig::default(), PfModel::Lc, 20, seed).unwrap();
        prop_assert_eq!(a.to_csv(), b.to_csv());
    }
}
