use tblab_core::analytic::{convergence_time, predict, scheduling_turnover};
use tblab_core::estimators::{
    analyze, estimate_beta, estimate_rate, estimate_tau_off, saturation_stats, BetaMethod,
    EstimatorConfig, EstimatorError, RateMethod, TauOffMethod,
};
use tblab_core::scheduler::Fetch;
use tblab_core::sim::{run, SwarmConfig};
use tblab_core::trace::parse_jsonl;

fn cfg(gamma: f64) -> SwarmConfig {
    SwarmConfig {
        gamma_p: gamma,
        ..SwarmConfig::default()
    }
}

#[test]
fn download_head_never_passes_service_head() {
    for gamma in [1.5, 3.0, 6.0] {
        let out = run(&SwarmConfig {
            report_interval: 0.1,
            ..cfg(gamma)
        })
        .unwrap();
        for s in out.host.samples() {
            let head = s.service_head.unwrap().0 as f64;
            assert!(s.u() <= head, "gamma {gamma} t={}", s.t);
            assert!(s.xi() < head);
        }
    }
}

#[test]
fn fetches_come_from_advertised_ranges() {
    let c = SwarmConfig {
        scope_lag: 6,
        report_interval: 0.1,
        duration: 120.0,
        ..cfg(3.0)
    };
    let out = run(&c).unwrap();
    let w = c.w_star_chunks();
    for d in &out.decisions {
        // the service head at decision time is the one sampled at d.t
        let s = out
            .host
            .samples()
            .iter()
            .find(|s| (s.t - d.t).abs() < 1e-9)
            .unwrap()
            .service_head
            .unwrap()
            .0;
        let id = d.fetch.chunk().0;
        match d.fetch {
            Fetch::Tracker(_) => assert_eq!(id, s - 1),
            _ => assert!(id >= s - w && id <= s - 1 - c.scope_lag, "{d:?}"),
        }
    }
    assert!(out.stats.tracker_fetches > 0);
}

#[test]
fn curves_coincide_before_turnover() {
    for gamma in [1.5, 2.0, 3.0, 4.0] {
        let c = SwarmConfig {
            report_interval: 0.5,
            ..cfg(gamma)
        };
        let ts = scheduling_turnover(&c.model_params()).unwrap();
        let out = run(&c).unwrap();
        for s in out.host.samples().iter().filter(|s| s.t < ts) {
            assert_eq!(s.fill, s.playable, "gamma {gamma} t={}", s.t);
            assert_eq!(
                s.width + u64::from(s.fill > 0),
                s.fill,
                "gamma {gamma} t={}",
                s.t
            );
        }
    }
}

#[test]
fn playable_holds_near_threshold_while_draining() {
    let c = SwarmConfig {
        report_interval: 0.1,
        ..cfg(2.0)
    };
    let p = c.model_params();
    let (ts, tc) = (
        scheduling_turnover(&p).unwrap(),
        convergence_time(&p).unwrap(),
    );
    let out = run(&c).unwrap();
    let cs = p.c_sch as u64;
    let drop = (c.r * c.slot).ceil() as u64;
    for s in out.host.samples() {
        if s.t > c.tb.tau_off.max(ts) + c.slot && s.t < tc - c.slot {
            assert!(
                s.playable + drop >= cs && s.playable <= cs + 1,
                "t={} V={}",
                s.t,
                s.playable
            );
        }
    }
}

#[test]
fn unit_rate_fill_plateaus() {
    let out = run(&cfg(1.0)).unwrap();
    let fills: Vec<u64> = out
        .host
        .samples()
        .iter()
        .filter(|s| s.t >= 80.0)
        .map(|s| s.fill)
        .collect();
    let (lo, hi) = (fills.iter().min().unwrap(), fills.iter().max().unwrap());
    assert!(hi - lo <= 1, "fill ranges over [{lo}, {hi}]");
    assert!(out.host.samples().iter().all(|s| s.playable == s.fill));
}

#[test]
fn ideal_estimates_at_default_cadence() {
    let c = cfg(3.0);
    let out = run(&c).unwrap();
    let e = EstimatorConfig::default();
    let li = estimate_tau_off(&out.host, TauOffMethod::Li, c.r, &e).unwrap();
    let aa = estimate_tau_off(&out.host, TauOffMethod::Aa, c.r, &e).unwrap();
    assert_eq!(li, 70.0);
    assert!((aa - 70.0).abs() <= 2.5);
    for m in BetaMethod::ALL {
        let b = estimate_beta(&out.host, m, c.r, &e).unwrap();
        assert!((b - 90.0).abs() <= 2.0, "{m}: {b}");
    }
    for m in [RateMethod::E2e, RateMethod::Seg] {
        let g = estimate_rate(&out.host, m, c.r, &e).unwrap();
        assert!((g - 3.0).abs() <= 0.05, "{m:?}: {g}");
    }
}

#[test]
fn truncated_trace_has_no_turnover() {
    let out = run(&cfg(3.0)).unwrap();
    let short = out.host.truncated(25.0);
    let e = EstimatorConfig::default();
    for m in BetaMethod::ALL {
        assert_eq!(
            estimate_beta(&short, m, 10.0, &e),
            Err(EstimatorError::TurnoverNotObserved),
            "{m}"
        );
    }
    assert_eq!(
        estimate_tau_off(&short, TauOffMethod::Li, 10.0, &e),
        Err(EstimatorError::NoDrainObserved)
    );
}

#[test]
fn saturated_unit_rate_host() {
    let c = SwarmConfig {
        r: 1.0,
        duration: 600.0,
        ..cfg(3.0)
    };
    let out = run(&c).unwrap();
    let st = saturation_stats(&out.host, &EstimatorConfig::default()).unwrap();
    assert!(
        (st.width.mean - 210.0).abs() <= 1.0,
        "mean W {}",
        st.width.mean
    );
    assert!(st.segment.duration >= 300.0);
    let lags = st.lags.unwrap();
    assert!(lags.ordered);
    assert!(lags.offset.mean > lags.playable.mean && lags.playable.mean >= lags.download.mean);
    assert!((lags.offset.mean - 210.0).abs() <= 1.0);

    let short = out.host.truncated(200.0);
    assert!(matches!(
        saturation_stats(&short, &EstimatorConfig::default()),
        Err(EstimatorError::NotSaturated { .. })
    ));
}

#[test]
fn grid_round_trip_recovers_group() {
    for gamma in [1.5, 2.0, 2.5, 3.0, 4.0] {
        let c = SwarmConfig {
            report_interval: 0.5,
            ..cfg(gamma)
        };
        let rep = analyze(&run(&c).unwrap().host, c.r, &EstimatorConfig::default());
        let truth = tblab_core::analytic::classify(&c.model_params()).unwrap();
        assert_eq!(
            rep.group.value,
            Some(truth),
            "gamma {gamma}: {:?}",
            rep.group
        );
        assert!((rep.w_star.value.unwrap() - 210.0).abs() < 1e-9);
        assert!((rep.theta.value.unwrap() - 70.0).abs() < 1e-9);
    }
}

#[test]
fn stable_peers_screen_out() {
    let out = run(&SwarmConfig {
        duration: 400.0,
        ..cfg(3.0)
    })
    .unwrap();
    let rep = analyze(&out.stable[0], 10.0, &EstimatorConfig::default());
    assert!(!rep.host);
    assert!(rep.saturation.valid);
}

#[test]
fn traces_round_trip_through_jsonl() {
    let out = run(&SwarmConfig {
        reject_prob: 0.2,
        duration: 120.0,
        ..cfg(2.5)
    })
    .unwrap();
    let text = out.host.to_jsonl();
    let back = parse_jsonl(&text).unwrap();
    assert_eq!(back, vec![out.host.clone()]);
    assert_eq!(back[0].to_jsonl(), text);
}

#[test]
fn misses_below_minimal_rate() {
    for (tau_off, r_min) in [(70.0, 0.5), (35.0, 2.0 / 3.0)] {
        for (factor, expect) in [(0.8, true), (0.95, true), (1.2, false), (2.0, false)] {
            let c = SwarmConfig {
                gamma_p: factor * r_min,
                tb: tblab_core::TbParams {
                    tau_off,
                    ..Default::default()
                },
                duration: tau_off + 80.0,
                ..SwarmConfig::default()
            };
            let out = run(&c).unwrap();
            let limit = out.theta.plus(700);
            let missed = out.stats.first_miss.is_some_and(|m| m < limit);
            assert_eq!(missed, expect, "tau_off {tau_off} factor {factor}");
        }
    }
}

#[test]
fn model_prediction_tracks_fast_hosts() {
    let c = SwarmConfig {
        report_interval: 1.0,
        ..cfg(3.0)
    };
    let p = c.model_params();
    let out = run(&c).unwrap();
    for s in out.host.samples() {
        let q = predict(&p, s.t);
        let q0 = predict(&p, (s.t - c.slot).max(0.0));
        let u = (s.fill as f64 - q.fill())
            .abs()
            .min((s.fill as f64 - q0.fill()).abs());
        assert!(u <= 3.0, "t={} U={} model {}", s.t, s.fill, q.fill());
    }
}
