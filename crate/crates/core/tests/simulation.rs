use fmc_core::lisp::{dc_rloc, LispPlane};
use fmc_core::sim::{
    measure_downtime, run, run_with, DecisionRule, EventKind, EventLog, Horizon, MobilityModel,
    PlaneKind, ScenarioConfig,
};
use proptest::prelude::*;

fn lisp_pingpong() -> ScenarioConfig {
    let mut cfg = ScenarioConfig {
        plane: PlaneKind::Lisp,
        mobility: MobilityModel::Scripted {
            moves: vec![(2.0, 2), (20.0, 1), (40.0, 2)],
        },
        decision: DecisionRule::Always,
        horizon: Horizon::Time(60.0),
        probe_period: Some(0.5),
        flows: 2,
        flow_period: 0.7,
        ..Default::default()
    };
    cfg.transfer.params.objects_size = 1e6;
    cfg.links
        .set("dc1", "dc2", 0.005)
        .set("ar1", "dcr1", 0.002)
        .set("ar2", "dcr2", 0.002)
        .set("ar1", "dcr2", 0.01)
        .set("ar2", "dcr1", 0.01)
        .set("fmcc", "dcr2", 0.004)
        .set("fmcc", "dcr1", 0.001);
    cfg
}

#[test]
fn lisp_back_and_forth_leaves_no_stale_cache() {
    let cfg = lisp_pingpong();
    let (out, plane) = run_with(&cfg, LispPlane::new(&cfg)).unwrap();
    assert_eq!(out.metrics.migrations_count, 3);
    assert_eq!(plane.check_convergence(), Ok(dc_rloc(2)));
    assert_eq!(plane.service_claims(), 1);
    let vm32 = format!("{}/32", plane.service_eid()).parse().unwrap();
    assert_eq!(plane.map_server.get(vm32).map(|e| e.rloc), Some(dc_rloc(2)));
    let timings = measure_downtime(&out.log).unwrap();
    assert_eq!(timings, out.metrics.migrations);
    assert!(timings.iter().all(|m| m.downtime() > 0.0));
    // Every probe sent after the last migration settled gets a reply.
    let settled = timings.last().unwrap().last_redirect;
    let lost_late = out
        .log
        .of_kind(EventKind::ProbeLost)
        .filter(|r| r.time - cfg.probe_timeout > settled)
        .count();
    assert_eq!(lost_late, 0);
}

#[test]
fn log_text_round_trips() {
    let out = run(&lisp_pingpong()).unwrap();
    let text = out.log.to_text();
    let parsed = EventLog::parse(&text).unwrap();
    assert_eq!(parsed.len(), out.log.len());
    assert_eq!(parsed.to_text(), text);
    let reparsed = measure_downtime(&parsed).unwrap();
    assert_eq!(reparsed.len(), out.metrics.migrations.len());
    for (a, b) in reparsed.iter().zip(&out.metrics.migrations) {
        assert!((a.downtime() - b.downtime()).abs() < 2e-9);
        assert!((a.duration() - b.duration()).abs() < 2e-9);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn same_seed_same_run(seed in any::<u64>(), k in 1u32..5, plane in prop::sample::select(vec![PlaneKind::None, PlaneKind::Lisp, PlaneKind::Sdn])) {
        let mut cfg = ScenarioConfig {
            seed,
            plane,
            mobility: MobilityModel::OneD { p_fwd: 0.6, mu: 0.5 },
            decision: DecisionRule::AtDistance(k),
            horizon: Horizon::Handovers(30),
            probe_period: Some(1.0),
            ..Default::default()
        };
        cfg.transfer.params.objects_size = 1e6;
        let a = run(&cfg).unwrap();
        let b = run(&cfg).unwrap();
        prop_assert_eq!(a.log.to_text(), b.log.to_text());
        prop_assert_eq!(&a.metrics, &b.metrics);
        let total: f64 = a.metrics.occupancy.values().sum();
        prop_assert!((total - a.metrics.end_time).abs() < 1e-9 * a.metrics.end_time.max(1.0));
        prop_assert!(a.log.records().windows(2).all(|w| w[0].time <= w[1].time));
    }
}
