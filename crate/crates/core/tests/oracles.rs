use nalgebra::DMatrix;

use odx::deviations::{ld_curve, Observable, System};
use odx::hitting_stats::{survival_curve_mc, survival_curve_operator, SamplerConfig, SampleSource};
use odx::inducing::{farey_induced, TailClass, TailSpec};
use odx::interval_maps::{doubling, gauss, lsv, ly_tent, IntervalMap};
use odx::open_systems::Hole;
use odx::transfer::{build_ulam, power_leading, puncture, survival_log_series, Partition};

fn dense_spectral_radius(rows: Vec<Vec<f64>>) -> f64 {
    let n = rows.len();
    let m = DMatrix::from_fn(n, n, |i, j| rows[i][j]);
    m.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max)
}

#[test]
fn power_iteration_matches_dense_eigensolve() {
    let cases: Vec<(IntervalMap, Option<Hole>, usize)> = vec![
        (doubling(), Some(Hole::one_sided(0.0, 0.25)), 64),
        (doubling(), Some(Hole::symmetric(0.3, 0.01)), 256),
        (gauss(), Some(Hole::symmetric(0.618, 0.02)), 200),
        (gauss(), None, 128),
        (ly_tent(1.6).unwrap(), Some(Hole::symmetric(0.45, 0.03)), 300),
        (lsv(0.5).unwrap(), Some(Hole::symmetric(0.8, 0.02)), 512),
    ];
    for (map, hole, n) in cases {
        let op = build_ulam(&map, &Partition::uniform(n)).unwrap();
        let p = puncture(&op, hole.as_ref());
        let sd = power_leading(&p, 1e-14, 2_000_000).unwrap();
        let dense = dense_spectral_radius(p.to_dense());
        assert!((sd.lambda - dense).abs() < 1e-8, "{} N={n}: {} vs {dense}", map.name, sd.lambda);
    }
}

#[test]
fn survival_slope_is_log_lambda() {
    let hole = Hole::one_sided(0.0, 0.25);
    let op = build_ulam(&doubling(), &Partition::uniform(256)).unwrap();
    let p = puncture(&op, Some(&hole));
    let lambda = power_leading(&p, 1e-14, 1_000_000).unwrap().lambda;
    let x0 = op.partition.widths();
    let lp = survival_log_series(&p, &x0, &[50, 200], 0.0).unwrap();
    let slope = (lp[1] - lp[0]) / 150.0;
    assert!((slope / lambda.ln() - 1.0).abs() < 0.01, "{slope} vs {}", lambda.ln());
}

fn punctured_lambda(map: &IntervalMap, hole: &Hole, n: usize) -> f64 {
    let op = build_ulam(map, &Partition::uniform(n)).unwrap();
    power_leading(&puncture(&op, Some(hole)), 1e-12, 1_000_000).unwrap().lambda
}

#[test]
fn markov_grid_is_exact_and_dyadic_grids_approach_it() {
    // doubling maps [k/25, (k+1)/25] onto two such cells and the hole is
    // the cell k = 7, so every multiple of 25 gives the exact eigenvalue
    let map = doubling();
    let hole = Hole::symmetric(0.3, 0.02);
    let exact = punctured_lambda(&map, &hole, 25);
    for n in [50, 100, 400, 1600] {
        assert!((punctured_lambda(&map, &hole, n) - exact).abs() < 1e-12);
    }
    let errs: Vec<f64> = (7..=15).map(|k| (punctured_lambda(&map, &hole, 1 << k) - exact).abs()).collect();
    assert!(errs.windows(2).all(|w| w[1] <= w[0]), "{errs:?}");
    assert!(errs[8] < 1e-5);
}

#[test]
fn punctured_eigenvalue_settles_with_refinement() {
    for (map, hole) in [(gauss(), Hole::symmetric(0.618, 0.02)), (ly_tent(1.8).unwrap(), Hole::symmetric(0.4, 0.02))] {
        let ls: Vec<f64> = (7..=15).map(|k| punctured_lambda(&map, &hole, 1 << k)).collect();
        let diffs: Vec<f64> = ls.windows(2).map(|w| (w[1] - w[0]).abs()).collect();
        // successive differences oscillate with where the hole edges fall
        // inside cells, so only the overall decay is checked
        let coarse = diffs[..3].iter().cloned().fold(0.0, f64::max);
        let fine = diffs[5..].iter().cloned().fold(0.0, f64::max);
        assert!(fine < coarse / 3.0, "{}: {diffs:?}", map.name);
    }
}

#[test]
fn operator_and_monte_carlo_agree_on_gauss() {
    let map = gauss();
    let hole = Hole::symmetric(0.3, 0.02);
    let part = Partition::uniform(4096);
    let op = build_ulam(&map, &part).unwrap();
    let g0 = power_leading(&puncture(&op, None), 1e-14, 1_000_000).unwrap().g;
    let grid = [1, 5, 10, 20, 40, 80];
    let oc = survival_curve_operator(&puncture(&op, Some(&hole)), &g0, &grid).unwrap();
    let mc = survival_curve_mc(&map, &hole, &grid, 400_000, &SamplerConfig::new(4, SampleSource::Acip)).unwrap();
    for i in 0..grid.len() {
        let half = 0.5 * (mc.ci_hi[i] - mc.ci_lo[i]);
        // the operator side carries an O(cell width) discretisation bias
        assert!((oc.p_hat[i] - mc.p_hat[i]).abs() <= 3.0 * half + 2e-3, "t={}: {} vs {}", grid[i], oc.p_hat[i], mc.p_hat[i]);
    }
}

#[test]
fn stretched_farey_rate_grows_like_root_n() {
    let spec = TailSpec { class: TailClass::Stretched { c: 1.0, gamma: 0.5 }, depth: 20000 };
    let ind = farey_induced(&spec).unwrap();
    let grid = [50, 100, 150, 200, 250, 300, 350, 400];
    let mean = spec.mean_return().unwrap();
    let c = ld_curve(System::Induced(&ind), &Observable::ReturnTime, 1.0, &grid, Some(mean), 100_000, 17).unwrap();
    let ratios: Vec<f64> = (0..grid.len())
        .map(|i| c.ell_hat[i].expect("exceedances at every n") / (grid[i] as f64).sqrt())
        .collect();
    let (lo, hi) = ratios.iter().fold((f64::MAX, 0.0f64), |(a, b), &r| (a.min(r), b.max(r)));
    assert!(lo > 0.15 && hi < 0.5 && hi / lo < 1.5, "{ratios:?}");
    // a linear rate would make the ratio grow like √n, by a factor of 2.8 here
    assert!(ratios[7] / ratios[0] < 1.4);
}

#[test]
fn sampling_is_deterministic() {
    let map = gauss();
    let hole = Hole::symmetric(0.4, 0.01);
    let cfg = SamplerConfig::new(21, SampleSource::UlamDensityInverseCdf { cells: 1024 });
    let a = survival_curve_mc(&map, &hole, &[10, 50, 100], 50_000, &cfg).unwrap();
    let b = survival_curve_mc(&map, &hole, &[10, 50, 100], 50_000, &cfg).unwrap();
    let (mut wa, mut wb) = (Vec::new(), Vec::new());
    a.write_csv(&mut wa).unwrap();
    b.write_csv(&mut wb).unwrap();
    assert_eq!(wa, wb);
}
