use proptest::prelude::*;

use odx::deviations::{pressure_series_probe, tail_fit, FitClass};
use odx::harness::{apply_override, ExperimentConfig};
use odx::inducing::{build_farey, farey_induced, first_return_map, tower_profile, TailClass, TailSpec};
use odx::interval_maps::{doubling, gauss, lsv, ly_tent, BranchCount, IntervalMap, Potential};
use odx::numeric::wilson;
use odx::open_systems::{escape_time, hitting_time, preimage_set, Hole, HoleShape, IntervalSet};
use odx::transfer::{build_ulam, operator_l1_distance, puncture, Partition};

fn catalogue(i: usize) -> IntervalMap {
    match i {
        0 => doubling(),
        1 => gauss(),
        2 => ly_tent(1.7).unwrap(),
        3 => lsv(0.4).unwrap(),
        _ => build_farey(&TailSpec { class: TailClass::Stretched { c: 1.0, gamma: 0.5 }, depth: 400 }).unwrap(),
    }
}

fn tail_class() -> impl Strategy<Value = TailClass> {
    prop_oneof![
        (0.1f64..0.9).prop_map(|theta| TailClass::Exponential { theta }),
        (0.3f64..2.0, 0.2f64..0.8).prop_map(|(c, gamma)| TailClass::Stretched { c, gamma }),
        (1.5f64..3.5).prop_map(|beta| TailClass::Polynomial { beta }),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn branch_domains_cover_the_interval(i in 0usize..5) {
        let m = catalogue(i);
        let fam = m.family();
        let (n, omitted) = match fam.count() {
            BranchCount::Finite(n) => (n, 0.0),
            BranchCount::Truncated { depth, omitted_mass } => (depth + 1, omitted_mass),
        };
        // deep Gauss tables are too long to sum; the first k branches must
        // then tile [lowest endpoint, 1]
        let k = n.min(1_000_000);
        let total: f64 = (0..k).map(|j| { let (a, b) = fam.domain(j); b - a }).sum();
        if k == n {
            prop_assert!((total - (1.0 - omitted)).abs() < 1e-9, "{} {total} {omitted}", m.name);
        } else {
            let lowest = (0..k).map(|j| fam.domain(j).0).fold(1.0, f64::min);
            prop_assert!((total + lowest - 1.0).abs() < 1e-9, "{} {total} {lowest}", m.name);
            prop_assert!(omitted <= lowest);
        }
        prop_assert!(omitted < 1e-2);
    }

    #[test]
    fn inverse_undoes_forward(i in 0usize..5, u in 0.001f64..0.999) {
        let m = catalogue(i);
        let fam = m.family();
        let n = match fam.count() {
            BranchCount::Finite(n) => n,
            BranchCount::Truncated { depth, .. } => depth.min(50),
        };
        for j in 0..n {
            let (a, b) = fam.domain(j);
            if b <= a {
                continue;
            }
            let x = a + u * (b - a);
            if let Some(back) = fam.inverse(j, fam.forward(j, x)) {
                prop_assert!((back - x).abs() < 1e-12 * (1.0 + 1.0 / (b - a)).min(1e4), "{} branch {j}: {x} -> {back}", m.name);
            }
        }
    }

    #[test]
    fn birkhoff_sums_are_additive(i in 0usize..4, x in 0.01f64..0.99, m in 1usize..8, n in 1usize..8) {
        let map = catalogue(i);
        let pot = Potential::Geometric;
        let whole = map.birkhoff_sum(&pot, x, m + n);
        let head = map.birkhoff_sum(&pot, x, m);
        let mid = map.iterate(x, m);
        prop_assume!(whole.is_ok() && head.is_ok() && mid.is_ok());
        let tail = map.birkhoff_sum(&pot, mid.unwrap(), n);
        prop_assume!(tail.is_ok());
        let (w, h, t) = (whole.unwrap(), head.unwrap(), tail.unwrap());
        prop_assert!((w - h - t).abs() <= 1e-10 * (1.0 + w.abs()), "{w} vs {h} + {t}");
    }

    #[test]
    fn lebesgue_preserved_by_preimages(a in 0.0f64..0.9, w in 0.001f64..0.1, geometric in any::<bool>()) {
        let map = if geometric {
            build_farey(&TailSpec { class: TailClass::Exponential { theta: 0.5 }, depth: 60 }).unwrap()
        } else {
            doubling()
        };
        let s = IntervalSet::single(a, a + w, "probe");
        let pre = preimage_set(&map, &s, 1, 10_000).unwrap();
        prop_assert!((pre.measure() - s.measure()).abs() < 1e-12);
    }

    #[test]
    fn escape_is_hitting_off_the_hole(z in 0.05f64..0.95, r in 1e-3f64..0.05, x in 0.0f64..1.0) {
        let map = doubling();
        let hole = Hole::symmetric(z, r);
        let e = escape_time(&map, &hole, x, 5000).unwrap();
        if hole.contains(x) {
            prop_assert_eq!(e.time(), Some(0));
        } else {
            prop_assert_eq!(e, hitting_time(&map, &hole, x, 5000).unwrap());
        }
    }

    #[test]
    fn smaller_holes_are_hit_later(z in 0.05f64..0.95, r in 1e-3f64..0.05, shrink in 0.1f64..1.0, x in 0.0f64..1.0) {
        let map = gauss();
        let big = Hole::new(z, r, HoleShape::Symmetric);
        let small = Hole::new(z, r * shrink, HoleShape::Symmetric);
        let tb = hitting_time(&map, &big, x, 20_000);
        let ts = hitting_time(&map, &small, x, 20_000);
        prop_assume!(tb.is_ok() && ts.is_ok());
        let (tb, ts) = (tb.unwrap().time().unwrap_or(usize::MAX), ts.unwrap().time().unwrap_or(usize::MAX));
        prop_assert!(ts >= tb);
    }

    #[test]
    fn wilson_interval_contains_the_estimate(n in 1u64..100_000, frac in 0.0f64..1.0) {
        let k = ((n as f64) * frac).floor() as u64;
        let (lo, hi) = wilson(k, n);
        let p = k as f64 / n as f64;
        prop_assert!((0.0..=1.0).contains(&lo) && (0.0..=1.0).contains(&hi));
        prop_assert!(lo <= p + 1e-12 && p <= hi + 1e-12);
    }

    #[test]
    fn dot_path_overrides_land_where_asked(v in -1e6f64..1e6, key in "[a-z]{1,6}") {
        let mut root = serde_json::json!({"map": {"name": "doubling"}});
        apply_override(&mut root, &format!("extra.{key}"), &v.to_string()).unwrap();
        prop_assert_eq!(root["extra"][&key].as_f64(), Some(v));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn ulam_columns_are_stochastic(i in 0usize..5, n in 16usize..600) {
        let m = catalogue(i);
        let op = build_ulam(&m, &Partition::uniform(n)).unwrap();
        for (j, s) in op.column_sums().iter().enumerate() {
            prop_assert!((s - 1.0).abs() < 1e-10 + op.truncation_mass, "{} column {j}: {s}", m.name);
        }
    }

    #[test]
    fn puncturing_removes_at_most_hole_plus_a_cell(i in 0usize..5, n in 32usize..2048, z in 0.02f64..0.98, r in 1e-4f64..0.05) {
        let m = catalogue(i);
        let part = Partition::uniform(n);
        let op = build_ulam(&m, &part).unwrap();
        let hole = Hole::symmetric(z, r);
        let d = operator_l1_distance(&op, &puncture(&op, Some(&hole))).unwrap();
        prop_assert!(d <= hole.measure(None) + part.max_width() + 1e-12, "{d}");
    }

    #[test]
    fn farey_return_law_and_kac(class in tail_class(), depth in 50usize..400) {
        let spec = TailSpec { class, depth };
        let ind = farey_induced(&spec).unwrap();
        let t = spec.sequence().unwrap();
        for u in 1..=depth {
            prop_assert!((ind.tail_at(u).unwrap() - t[u]).abs() < 1e-10);
        }
        let (sum, target) = ind.kac();
        // Σ_{n≤D} n (t_n − t_{n+1}) = Σ_{n≤D} t_n − D t_{D+1}
        let head: f64 = t[1..=depth].iter().sum();
        let abel = head - depth as f64 * t[depth + 1];
        prop_assert!((sum - abel).abs() < 1e-9 * target, "{sum} vs {abel}");
        prop_assert!(target >= head * (1.0 - 1e-12));
        let tower = tower_profile(&ind);
        for (l, level) in tower.levels.iter().enumerate() {
            prop_assert!((level - tower.normalization * ind.tail[l + 1]).abs() == 0.0);
        }
    }

    #[test]
    fn tail_fit_recovers_generated_class(class in tail_class()) {
        let u: Vec<f64> = (1..=300).map(|n| n as f64).collect();
        let v: Vec<f64> = u.iter().map(|&n| class.t(n)).collect();
        let fit = tail_fit(&u, &v).unwrap();
        let best = fit.candidates.iter().map(|c| c.r2).fold(0.0, f64::max);
        prop_assert!(best >= 0.999);
        match (class, fit.selected) {
            (TailClass::Exponential { .. }, FitClass::Exponential { .. }) => {}
            (TailClass::Stretched { gamma, .. }, FitClass::Stretched { gamma: g, .. }) => prop_assert!((g - gamma).abs() < 0.05),
            (TailClass::Polynomial { beta }, FitClass::Polynomial { beta: b }) => prop_assert!((b - beta).abs() < 0.05),
            (c, s) => prop_assert!(false, "{c:?} fitted as {s:?}"),
        }
    }

    #[test]
    fn pressure_partial_sums_grow_with_j_max(t in -1.0f64..1.0, j in 8usize..50) {
        let ind = first_return_map(&doubling(), (0.5, 1.0), 60).unwrap();
        let short = pressure_series_probe(&ind, t, j).unwrap();
        let long = pressure_series_probe(&ind, t, j + 5).unwrap();
        prop_assert!(short.partial_sums.windows(2).all(|w| w[1] >= w[0]));
        let k = short.partial_sums.len();
        prop_assert!(long.partial_sums.len() >= k);
        prop_assert!(long.partial_sums[..k] == short.partial_sums[..]);
        if (short.ratio - 1.0).abs() > 0.1 {
            prop_assert_eq!(short.verdict, long.verdict);
        }
    }

    #[test]
    fn configs_round_trip(seed in any::<u64>(), r in 1e-4f64..0.1, n in 1usize..5000) {
        let v = serde_json::json!({
            "map": {"name": "gauss"},
            "hole": {"centre": 0.5, "radii": [r]},
            "experiment": {"kind": "ulam", "n": n},
            "seed": seed,
        });
        let c = ExperimentConfig::from_value(v).unwrap();
        let back = ExperimentConfig::from_value(serde_json::to_value(&c).unwrap()).unwrap();
        prop_assert_eq!(c, back);
    }
}
