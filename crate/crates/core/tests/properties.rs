use nalgebra::DVector;
use pmn_core::baselines::{binomial, indicator, project_capped_floor, SubsetIter};
use pmn_core::dan::{binarize, dan_layer, DanParams, LayerState};
use pmn_core::fisher::{cost_logdet, fim};
use pmn_core::instances::{random_ctx, random_psd, random_spd, uniform_start};
use pmn_core::mm_admm::{admm_u_update, admm_v_update};
use pmn_core::power::{fixed_point_ratio, rayleigh_bounds, solve_water_level, target_power, PowerProblem, PowerTarget};
use pmn_core::seeds::derive_seed;
use pmn_core::tracker::wrap_angle;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn projection_is_feasible_and_idempotent(x in prop::collection::vec(-5.0f64..5.0, 1..8), lo in 0.01f64..0.5, extra in 0.0f64..3.0) {
        let total = lo * x.len() as f64 + extra;
        let p = project_capped_floor(&x, lo, total);
        prop_assert!(p.iter().all(|v| *v >= lo - 1e-12));
        prop_assert!(p.iter().sum::<f64>() <= total + 1e-9);
        let again = project_capped_floor(&p, lo, total);
        for (a, b) in p.iter().zip(&again) {
            prop_assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn binarize_picks_exactly_nmax_largest(u in prop::collection::vec(0.0f64..1.0, 1..12), k in 1usize..12) {
        let k = k.min(u.len());
        let v = DVector::from_vec(u.clone());
        let b = binarize(&v, k);
        prop_assert_eq!(b.sum() as usize, k);
        let min_in = (0..u.len()).filter(|&i| b[i] == 1.0).map(|i| u[i]).fold(f64::INFINITY, f64::min);
        let max_out = (0..u.len()).filter(|&i| b[i] == 0.0).map(|i| u[i]).fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(min_in >= max_out);
    }

    #[test]
    fn subset_iterator_counts_binomial(n in 1usize..10, k in 0usize..10) {
        let k = k.min(n);
        let all: Vec<Vec<usize>> = SubsetIter::new(n, k).collect();
        prop_assert_eq!(all.len() as u128, binomial(n, k));
        prop_assert!(all.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn admm_u_step_keeps_the_budget(seed in any::<u64>(), n in 2usize..16) {
        let mut r = rng(seed);
        let a = DVector::from_fn(n, |_, _| r.random_range(0.0..1.0));
        let phi = DVector::from_fn(n, |_, _| r.random_range(0.1..100.0));
        let d = DVector::from_fn(n, |_, _| r.random_range(-50.0..50.0));
        let u = admm_u_update(&a, &phi, &d).unwrap();
        prop_assert!((u.sum() - a.sum()).abs() < 1e-9 * (1.0 + a.sum()));
        let z = DVector::from_fn(n, |_, _| r.random_range(-1.0..1.0));
        let g = DVector::from_fn(n, |_, _| r.random_range(0.0..1e4));
        let v = admm_v_update(&u, &z, &g, 1.0, 50.0);
        prop_assert!(v.iter().all(|x| (0.0..=1.0).contains(x)));
    }

    #[test]
    fn information_grows_with_selection(seed in any::<u64>()) {
        let mut r = rng(seed);
        let ctx = random_ctx(&mut r, 8, 2);
        let small = indicator(8, &[0, 3]);
        let large = indicator(8, &[0, 3, 5]);
        let c_small = cost_logdet(&fim(&ctx.jp, &small, ctx.p, &ctx.m).unwrap()).unwrap();
        let c_large = cost_logdet(&fim(&ctx.jp, &large, ctx.p, &ctx.m).unwrap()).unwrap();
        prop_assert!(c_large <= c_small + 1e-12);
    }

    #[test]
    fn dan_layer_outputs_are_feasible(seed in any::<u64>()) {
        let mut r = rng(seed);
        let (n, k) = (10, 3);
        let ctx = random_ctx(&mut r, n, k);
        let params = DanParams::default();
        let mut s = LayerState::start(&uniform_start(n, k));
        for _ in 0..params.layers() {
            let (next, diag) = dan_layer(&s, &ctx, &params).unwrap();
            prop_assert!((next.u.sum() - k as f64).abs() < 1e-8);
            prop_assert!(next.v_hat.iter().all(|x| *x >= 0.0));
            prop_assert!(diag.inner.state.v.iter().all(|x| (0.0..=1.0).contains(x)));
            s = next;
        }
    }

    #[test]
    fn fixed_point_ratio_within_rayleigh_bounds(seed in any::<u64>(), p in 0.0f64..50.0) {
        let mut r = rng(seed);
        let jp = random_spd(&mut r, 0.05);
        let rank = r.random_range(1..=4);
        let st = random_psd(&mut r, rank);
        let (lo, hi) = rayleigh_bounds(&jp, &st).unwrap();
        let ratio = fixed_point_ratio(&jp, &st, p).unwrap();
        prop_assert!(ratio >= lo * (1.0 - 1e-9) && ratio <= hi * (1.0 + 1e-9), "{lo} <= {ratio} <= {hi}");
    }

    #[test]
    fn target_power_is_monotone_in_level(seed in any::<u64>(), mu in 0.0f64..20.0, dmu in 0.0f64..5.0) {
        let mut r = rng(seed);
        let jp = random_spd(&mut r, 0.1);
        let st = random_psd(&mut r, 2) + random_spd(&mut r, 0.01) * 0.01;
        let a = target_power(&jp, &st, mu, 0.1, 0.1).unwrap();
        let b = target_power(&jp, &st, mu + dmu, 0.1, 0.1).unwrap();
        prop_assert!(b >= a - 1e-9);
    }

    #[test]
    fn water_filling_respects_budget_and_floor(seed in any::<u64>(), q in 1usize..7) {
        let mut r = rng(seed);
        let targets: Vec<_> = (0..q).map(|_| PowerTarget { jp: random_spd(&mut r, 0.1), st: random_psd(&mut r, 3) }).collect();
        let pmin = 0.1;
        let pt = pmin * q as f64 + r.random_range(0.0..5.0);
        let wf = solve_water_level(&PowerProblem::new(targets, pt, pmin).unwrap()).unwrap();
        prop_assert!(wf.p.p.iter().all(|p| *p >= pmin * (1.0 - 1e-12)));
        prop_assert!(wf.p.total() <= pt * (1.0 + 1e-9));
        prop_assert!(wf.all_floored || (wf.p.total() - pt).abs() <= 1e-6 * pt);
    }

    #[test]
    fn wrapped_angles_land_in_half_open_interval(a in -100.0f64..100.0) {
        let w = wrap_angle(a);
        prop_assert!(w > -std::f64::consts::PI && w <= std::f64::consts::PI);
        let k = ((a - w) / std::f64::consts::TAU).round();
        prop_assert!((a - w - k * std::f64::consts::TAU).abs() < 1e-9);
    }

    #[test]
    fn derived_seeds_separate_streams(master in any::<u64>(), i in 0u64..1000) {
        prop_assert_eq!(derive_seed(master, "truth", i), derive_seed(master, "truth", i));
        prop_assert_ne!(derive_seed(master, "truth", i), derive_seed(master, "meas", i));
        prop_assert_ne!(derive_seed(master, "truth", i), derive_seed(master, "truth", i + 1));
    }
}
