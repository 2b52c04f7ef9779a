mod common;

use common::{integrate, ks_critical_1pct, ks_statistic, unit_frechet_cdf};
use mesm::gev::{block_maxima, fit_gev_mle, BlockMaximaConfig, GevParams};
use mesm::rng::stream;
use proptest::prelude::*;
use rand::Rng;

fn gev(shape: f64, location: f64, scale: f64) -> GevParams {
    GevParams::new(shape, location, scale).unwrap()
}

fn draws(p: &GevParams, n: usize, seed: u64) -> Vec<f64> {
    let mut r = stream(seed, "gev-suite", 0);
    (0..n).map(|_| p.sample(&mut r)).collect()
}

#[test]
fn cdf_examples() {
    let e1 = (-1.0f64).exp();
    assert!((gev(0.0, 0.0, 1.0).cdf(0.0) - e1).abs() < 1e-15);
    assert!((gev(1.0, 1.0, 1.0).cdf(1.0) - e1).abs() < 1e-15);
    let direct = (-(1.4f64).powf(-5.0)).exp();
    assert!((gev(0.2, 10.0, 2.0).cdf(14.0) - direct).abs() < 1e-14);
}

#[test]
fn cdf_agrees_with_integrated_density() {
    let p = gev(0.2, 10.0, 2.0);
    let (lo, _) = p.support();
    let area = integrate(&|y| p.pdf(y), lo, 14.0, 1e-13);
    assert!((area - p.cdf(14.0)).abs() < 1e-9, "{area}");
}

#[test]
fn quantile_examples() {
    let e1 = (-1.0f64).exp();
    assert!((gev(1.0, 1.0, 1.0).quantile(e1).unwrap() - 1.0).abs() < 1e-12);
    assert!(gev(0.0, 0.0, 1.0).quantile(e1).unwrap().abs() < 1e-12);
    let p = gev(0.2, 10.0, 2.0);
    assert!((p.quantile(0.99).unwrap() - p.return_level(100).unwrap()).abs() < 1e-10);
    assert!(p.quantile(0.0).is_err());
    assert!(p.quantile(1.0).is_err());
}

#[test]
fn density_integrates_to_one() {
    for shape in [-0.3, 0.0, 0.3] {
        let p = gev(shape, 1.5, 0.7);
        let (lo, hi) = p.support();
        let lo = if lo.is_finite() { lo } else { p.location - 60.0 * p.scale };
        // The heavy ξ = 0.3 tail is integrated to its far end in pieces.
        let hi = if hi.is_finite() { hi } else { p.quantile(1.0 - 1e-15).unwrap() };
        let mut total = 0.0;
        let cuts: Vec<f64> = (0..=64).map(|k| lo + (hi - lo) * (k as f64 / 64.0).powi(4)).collect();
        for w in cuts.windows(2) {
            total += integrate(&|y| p.pdf(y), w[0], w[1], 1e-12);
        }
        let tail = if shape > 0.0 { p.sf(hi) } else { 0.0 };
        assert!((total + tail - 1.0).abs() < 1e-6, "ξ = {shape}: {}", total + tail);
    }
}

#[test]
fn gumbel_limit_continuity() {
    for k in 0..=200 {
        let y = -5.0 + 0.075 * k as f64;
        for s in [1e-9, -1e-9] {
            let d = (gev(s, 0.3, 1.2).cdf(y) - gev(0.0, 0.3, 1.2).cdf(y)).abs();
            assert!(d < 1e-7, "y = {y}, ξ = {s}: {d}");
        }
    }
}

#[test]
fn mle_recovers_frechet_type_parameters() {
    let truth = gev(0.2, 10.0, 2.0);
    let fit = fit_gev_mle(&draws(&truth, 5000, 11)).unwrap();
    let p = fit.params;
    assert!((p.shape - 0.2).abs() < 0.08, "{p:?}");
    assert!((p.location - 10.0).abs() < 0.15, "{p:?}");
    assert!((p.scale - 2.0).abs() < 0.15, "{p:?}");
}

#[test]
fn mle_recovers_gumbel_shape() {
    let fit = fit_gev_mle(&draws(&gev(0.0, 0.0, 1.0), 5000, 12)).unwrap();
    assert!(fit.params.shape.abs() < 0.05, "{:?}", fit.params);
}

#[test]
fn mle_rejects_constant_samples() {
    assert!(fit_gev_mle(&[3.0; 40]).is_err());
}

#[test]
fn mle_loglik_matches_recomputation_and_support_covers_data() {
    for (seed, shape) in [(1, -0.3), (2, 0.1), (3, 0.4)] {
        let xs = draws(&gev(shape, 2.0, 1.5), 300, seed);
        let fit = fit_gev_mle(&xs).unwrap();
        assert!((fit.log_likelihood - fit.params.log_likelihood(&xs)).abs() < 1e-8);
        assert!(xs.iter().all(|&x| fit.params.in_support(x)));
    }
}

#[test]
fn mle_standard_errors_track_sampling_spread() {
    let truth = gev(0.1, 5.0, 1.0);
    let fits: Vec<_> = (0..200)
        .map(|r| fit_gev_mle(&draws(&truth, 400, 1000 + r)).unwrap())
        .collect();
    let spread = |f: &dyn Fn(&mesm::gev::GevFit) -> f64| {
        let v: Vec<f64> = fits.iter().map(f).collect();
        let m = v.iter().sum::<f64>() / v.len() as f64;
        (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
    };
    let reported = |k: usize| fits.iter().map(|f| f.std_errors.unwrap()[k]).sum::<f64>() / fits.len() as f64;
    let empirical = [
        spread(&|f| f.params.shape),
        spread(&|f| f.params.location),
        spread(&|f| f.params.scale.ln()),
    ];
    for k in 0..3 {
        let ratio = reported(k) / empirical[k];
        assert!((0.75..1.33).contains(&ratio), "parameter {k}: reported {} vs {}", reported(k), empirical[k]);
    }
}

#[test]
fn block_maxima_examples() {
    let c2 = BlockMaximaConfig::new(2).unwrap();
    assert_eq!(block_maxima(&[1.0, 5.0, 2.0, 4.0, 3.0, 6.0], c2).unwrap(), vec![5.0, 4.0, 6.0]);
    assert_eq!(block_maxima(&[1.0, 2.0, 3.0, 4.0, 5.0], c2).unwrap(), vec![2.0, 4.0, 5.0]);
    let xs = [3.0, -1.0, 2.5];
    assert_eq!(block_maxima(&xs, BlockMaximaConfig::new(1).unwrap()).unwrap(), xs.to_vec());
    assert!(block_maxima(&[], c2).is_err());
}

#[test]
fn return_level_of_unit_frechet_at_one_hundred() {
    let level = gev(1.0, 0.0, 1.0).return_level(100).unwrap();
    let oracle = 1.0 / -(0.99f64).ln() - 1.0;
    assert!((level - 98.4997).abs() < 1e-3, "{level}");
    assert!((level - oracle).abs() < 1e-10);
}

#[test]
fn return_level_equals_upper_quantile() {
    let mut r = stream(5, "return-level-triples", 0);
    for _ in 0..50 {
        let p = gev(r.random_range(-0.45..1.5), r.random_range(-50.0..50.0), r.random_range(0.1..10.0));
        let a = p.return_level(100).unwrap();
        let b = p.quantile(0.99).unwrap();
        assert!((a - b).abs() <= 1e-10 * b.abs().max(1.0), "{p:?}: {a} vs {b}");
    }
}

#[test]
fn transform_examples() {
    let p = gev(0.5, 0.0, 1.0);
    assert!((p.to_unit_frechet(0.0).unwrap() - 1.0).abs() < 1e-15);
    assert!((p.to_unit_frechet(2.0).unwrap() - 4.0).abs() < 1e-14);
    assert!(p.to_unit_frechet(-3.0).is_err());
    assert!(p.from_unit_frechet(0.0).is_err());
    let g = gev(0.0, 1.0, 2.0);
    assert!((g.to_unit_frechet(3.0).unwrap() - 1.0f64.exp()).abs() < 1e-14);
}

#[test]
fn transformed_samples_are_unit_frechet() {
    for (seed, p) in [(21, gev(0.2, 10.0, 2.0)), (22, gev(-0.3, 0.0, 1.0)), (23, gev(0.0, 4.0, 0.5))] {
        let zs: Vec<f64> = draws(&p, 10_000, seed).iter().map(|&y| p.to_unit_frechet(y).unwrap()).collect();
        let d = ks_statistic(&zs, unit_frechet_cdf);
        assert!(d < ks_critical_1pct(zs.len()), "{p:?}: D = {d}");
    }
}

proptest! {
    #[test]
    fn quantile_inverts_cdf(shape in -0.45f64..2.0, loc in -100.0f64..100.0, scale in 0.01f64..50.0, p in 1e-6f64..0.999999) {
        let g = gev(shape, loc, scale);
        let y = g.quantile(p).unwrap();
        prop_assert!((g.cdf(y) - p).abs() <= 1e-10 * p);
    }

    #[test]
    fn unit_frechet_round_trip(shape in -0.45f64..2.0, loc in -100.0f64..100.0, scale in 0.01f64..50.0, p in 1e-6f64..0.999999) {
        let g = gev(shape, loc, scale);
        let y = g.quantile(p).unwrap();
        let z = g.to_unit_frechet(y).unwrap();
        prop_assert!(z > 0.0);
        prop_assert!((unit_frechet_cdf(z) - g.cdf(y)).abs() < 1e-10);
        let back = g.from_unit_frechet(z).unwrap();
        prop_assert!((back - y).abs() <= 1e-10 * y.abs().max(1.0));
    }

    #[test]
    fn cdf_is_monotone(shape in -0.45f64..2.0, a in -20.0f64..20.0, b in -20.0f64..20.0) {
        let g = gev(shape, 0.0, 1.0);
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(g.cdf(lo) <= g.cdf(hi));
    }

    #[test]
    fn frechet_max_stability(z in 1e-3f64..1e3, n in 1u32..50) {
        let lhs = unit_frechet_cdf(n as f64 * z).powi(n as i32);
        prop_assert!((lhs - unit_frechet_cdf(z)).abs() < 1e-12);
    }
}
