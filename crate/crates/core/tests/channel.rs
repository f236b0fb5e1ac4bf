use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use goc_core::channel::{
    dbm_to_watts, mean_snr, path_loss_db, sample_fading_gain, transmission_time, watts_to_dbm,
    ChannelParams, Link,
};

/// Link budget in dB: P_tx - PL - N.
fn snr_db_by_budget(ch: &ChannelParams) -> f64 {
    ch.tx_power_dbm - path_loss_db(ch.distance_m, ch.carrier_ghz).unwrap() - ch.noise_dbm
}

#[test]
fn industrial_link_by_hand() {
    // 18.6 + 35.7 log10(50) + 20 log10(3.5) = 18.6 + 60.6532 + 10.8814
    let pl = path_loss_db(50.0, 3.5).unwrap();
    assert!((pl - 90.1346).abs() < 1e-4, "{pl}");

    let ch = ChannelParams::default();
    let snr_db = 10.0 * mean_snr(&ch).log10();
    assert!((snr_db - 47.8654).abs() < 1e-4, "{snr_db}");
    assert!((snr_db - snr_db_by_budget(&ch)).abs() < 1e-9);

    // 1 Mbit at 1 MHz: 1 / log2(1 + 10^4.78654) s
    let t = transmission_time(1e6, &ch);
    assert!((t - 0.062891).abs() < 1e-5, "{t}");
}

#[test]
fn link_uses_mean_gain_when_deterministic() {
    let ch = ChannelParams::default().with_bandwidth(5e6);
    let mut link: Link<ChaCha8Rng> = Link::deterministic(ch);
    assert_eq!(link.transmit(2e5), transmission_time(2e5, &ch));
    assert_eq!(link.transmit(0.0), 0.0);
}

#[test]
fn monte_carlo_link_is_seeded() {
    let ch = ChannelParams::default();
    let draw = |seed| {
        let mut l = Link::monte_carlo(ch, ChaCha8Rng::seed_from_u64(seed));
        (0..5).map(|_| l.transmit(1e5)).collect::<Vec<_>>()
    };
    assert_eq!(draw(4), draw(4));
    assert_ne!(draw(4), draw(5));
}

#[test]
fn fading_moments_match_gamma_law() {
    for (m, omega) in [(0.5, 1.0), (1.5, 0.5), (4.0, 3.0)] {
        let ch = ChannelParams {
            m,
            omega,
            ..ChannelParams::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let n = 200_000;
        let xs: Vec<f64> = (0..n).map(|_| sample_fading_gain(&ch, &mut rng)).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
        assert!(
            ((mean - omega) / omega).abs() < 0.02,
            "mean {mean} for m={m}"
        );
        let want = omega * omega / m;
        assert!(
            ((var - want) / want).abs() < 0.05,
            "var {var} vs {want} for m={m}"
        );
        assert!(xs.iter().all(|&x| x >= 0.0));
    }
}

#[test]
fn invalid_geometry_is_rejected() {
    assert!(path_loss_db(0.0, 3.5).is_err());
    assert!(path_loss_db(10.0, -1.0).is_err());
    assert!(ChannelParams::new(0.0, 1.0, 50.0, 3.5, 24.0, -114.0, 1e6).is_err());
    assert!(ChannelParams::new(1.0, 1.0, 50.0, 3.5, 24.0, -114.0, 0.0).is_err());
}

proptest! {
    #[test]
    fn dbm_roundtrip(dbm in -150.0f64..60.0) {
        prop_assert!((watts_to_dbm(dbm_to_watts(dbm)) - dbm).abs() < 1e-9);
    }

    #[test]
    fn linear_and_db_routes_agree(d in 1.0f64..500.0, fc in 0.5f64..30.0, p in -10.0f64..40.0) {
        let ch = ChannelParams { distance_m: d, carrier_ghz: fc, tx_power_dbm: p, ..ChannelParams::default() };
        prop_assert!((10.0 * mean_snr(&ch).log10() - snr_db_by_budget(&ch)).abs() < 1e-9);
    }

    #[test]
    fn path_loss_grows_with_distance_and_frequency(d in 1.0f64..500.0, fc in 0.5f64..30.0, k in 1.01f64..4.0) {
        let base = path_loss_db(d, fc).unwrap();
        prop_assert!(path_loss_db(d * k, fc).unwrap() > base);
        prop_assert!(path_loss_db(d, fc * k).unwrap() > base);
    }

    #[test]
    fn transmission_time_scales_inversely_with_bandwidth(bits in 1.0f64..1e9, b in 1e3f64..1e9, k in 1.01f64..100.0) {
        let ch = ChannelParams::default().with_bandwidth(b);
        let t = transmission_time(bits, &ch);
        let t_wide = transmission_time(bits, &ch.with_bandwidth(b * k));
        prop_assert!(t_wide < t);
        prop_assert!((t / t_wide - k).abs() < 1e-9 * k);
    }
}
