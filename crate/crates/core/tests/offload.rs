use proptest::prelude::*;
// the offload enum takes the name; keep the proptest trait's methods in scope
use proptest::strategy::Strategy as _;

use goc_core::channel::ChannelParams;
use goc_core::fault_detect::FaultKind;
use goc_core::harness::{log_space, sweep_bandwidth, write_sweep_csv};
use goc_core::offload::{
    decide, detection_time, detection_time_edge, detection_time_local, thresholds, DataSizes,
    Region, Strategy, TimingProfile,
};

fn other(s: Strategy) -> Strategy {
    match s {
        Strategy::Local => Strategy::Edge,
        Strategy::Edge => Strategy::Local,
    }
}

fn profiles() -> impl proptest::strategy::Strategy<Value = (TimingProfile, DataSizes)> {
    (
        0.0f64..0.2,
        0.0f64..0.2,
        0.0f64..0.1,
        0.0f64..0.1,
        5.0f64..8.0,
        0.001f64..0.5,
        0.001f64..1.0,
    )
        .prop_map(|(sl, dl, se, de, full_exp, e_frac, s_frac)| {
            let full = 10f64.powf(full_exp);
            let edge = full * e_frac;
            (
                TimingProfile::new(sl, dl, se, de).unwrap(),
                DataSizes::new(edge * s_frac, edge, full).unwrap(),
            )
        })
}

#[test]
fn toy_profile_crossovers() {
    let th = thresholds(
        &TimingProfile::crossover_demo(),
        &DataSizes::crossover_demo(),
        &ChannelParams::default(),
    )
    .unwrap();
    // independently: B = ΔΨ / (log2(1 + SNR) Δt), SNR from the dB link budget
    let snr = 10f64.powf((24.0 - 90.134_6 + 114.0) / 10.0);
    let eta = (1.0 + snr).log2();
    let b1 = (16e6 - 400e3) / (eta * (0.050 + 0.07585 - 0.03043 - 0.015));
    let b2 = (16e6 - 16e3) / (eta * (0.050 - 0.03043 - 0.015));
    assert!(((th.b1 - b1) / b1).abs() < 1e-4, "{} vs {b1}", th.b1);
    assert!(((th.b2 - b2) / b2).abs() < 1e-4, "{} vs {b2}", th.b2);
    assert!((th.b1 / 1e6 - 12.2).abs() < 0.05);
    assert!((th.b2 / 1e6 - 220.0).abs() < 1.0);
}

#[test]
fn below_b1_stays_local() {
    let th = thresholds(
        &TimingProfile::crossover_demo(),
        &DataSizes::crossover_demo(),
        &ChannelParams::default(),
    )
    .unwrap();
    let d = decide(th.b1 * 0.5, th);
    assert_eq!((d.task, d.motion), (Strategy::Local, Strategy::Local));
    assert_eq!(decide(th.b1, th).region(), Region::Local);
    assert_eq!(decide((th.b1 + th.b2) / 2.0, th).region(), Region::Hybrid);
    assert_eq!(decide(th.b2 * 2.0, th).region(), Region::Edge);
}

#[test]
fn edge_never_wins_without_a_compute_advantage() {
    let p = TimingProfile::new(0.01, 0.01, 0.02, 0.02).unwrap();
    let th = thresholds(&p, &DataSizes::crossover_demo(), &ChannelParams::default()).unwrap();
    assert!(th.b1.is_infinite() && th.b2.is_infinite());
    assert_eq!(decide(1e12, th).region(), Region::Local);
}

#[test]
fn sweep_csv_is_three_ordered_regions() {
    let rows = sweep_bandwidth(
        &TimingProfile::crossover_demo(),
        &DataSizes::crossover_demo(),
        &ChannelParams::default(),
        &log_space(1e6, 1e9, 100),
    )
    .unwrap();
    assert_eq!(rows.len(), 100);
    assert_eq!(rows[0].bandwidth_hz, 1e6);
    assert_eq!(rows[99].bandwidth_hz, 1e9);
    assert!(rows.windows(2).all(|w| w[0].region <= w[1].region));
    for r in &rows {
        let want = if r.bandwidth_hz <= r.b1 {
            Region::Local
        } else if r.bandwidth_hz <= r.b2 {
            Region::Hybrid
        } else {
            Region::Edge
        };
        assert_eq!(r.region, want);
    }
    // each strategy's detection time falls strictly with bandwidth
    assert!(rows
        .windows(2)
        .all(|w| w[1].t_task_local < w[0].t_task_local
            && w[1].t_motion_local < w[0].t_motion_local
            && w[1].t_edge < w[0].t_edge));
    let mut buf = Vec::new();
    write_sweep_csv(&mut buf, &rows).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert_eq!(text.lines().count(), 101);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn decision_is_never_slower((p, s) in profiles(), b_exp in 4.0f64..10.0) {
        let b = 10f64.powf(b_exp);
        let ch = ChannelParams::default().with_bandwidth(b);
        let d = decide(b, thresholds(&p, &s, &ch).unwrap());
        for kind in [FaultKind::TaskLevel, FaultKind::MotionLevel] {
            let chosen = detection_time(kind, d.strategy(kind), &p, &s, &ch);
            let alt = detection_time(kind, other(d.strategy(kind)), &p, &s, &ch);
            prop_assert!(chosen <= alt, "{kind:?}: {chosen} > {alt} at {b}");
        }
    }

    #[test]
    fn crossovers_equalise_latencies((p, s) in profiles()) {
        let ch = ChannelParams::default();
        let th = thresholds(&p, &s, &ch).unwrap();
        for (kind, b) in [(FaultKind::MotionLevel, th.b1), (FaultKind::TaskLevel, th.b2)] {
            if b.is_finite() {
                let at = ch.with_bandwidth(b);
                let l = detection_time_local(kind, &p, &s, &at);
                let e = detection_time_edge(&p, &s, &at);
                prop_assert!(((l - e) / e).abs() <= 1e-9, "{kind:?}: {l} vs {e}");
            }
        }
        if p.t_dt_local > 0.0 && s.psi_edge_points > s.psi_sg && th.b1.is_finite() {
            prop_assert!(th.b1 < th.b2);
        }
    }

    #[test]
    fn crossovers_ignore_the_configured_bandwidth((p, s) in profiles(), b in 1e3f64..1e10) {
        let a = thresholds(&p, &s, &ChannelParams::default()).unwrap();
        let c = thresholds(&p, &s, &ChannelParams::default().with_bandwidth(b)).unwrap();
        prop_assert_eq!(a, c);
    }
}
