mod common;

use vidstall::baselines::{baseline_init, raw_init, run_baseline, BaselineKind};
use vidstall::cli::default_init;
use vidstall::model::{parse_config, SolverConfig};
use vidstall::optimizer::BlockId;

#[test]
fn equal_access_on_seven_four_code() {
    let inst = common::desk();
    let x = baseline_init(&inst, BaselineKind::PeaQtb).unwrap();
    for (i, v) in inst.videos.iter().enumerate() {
        assert_eq!((v.n, v.k), (7, 4));
        for l in 0..inst.num_qualities() {
            for j in 0..inst.num_servers() {
                let want = if v.is_placed(l, j) { 4.0 / 7.0 } else { 0.0 };
                assert_eq!(x.q[i][l][j], want);
            }
        }
    }
}

#[test]
fn equal_access_starts_are_the_uniform_start() {
    let inst = common::desk();
    let uniform = default_init(&inst).unwrap();
    for kind in [BaselineKind::PeaQtb, BaselineKind::PebQta, BaselineKind::PeqBta] {
        assert_eq!(baseline_init(&inst, kind).unwrap(), uniform);
    }
}

#[test]
fn proportional_access_with_equal_rates_is_equal_access() {
    let inst = parse_config(
        r#"{
        "servers": [
            {"id": 1, "alpha_base": 50.0, "beta_base": 0.01, "num_streams": 2},
            {"id": 2, "alpha_base": 50.0, "beta_base": 0.01, "num_streams": 2},
            {"id": 3, "alpha_base": 50.0, "beta_base": 0.01, "num_streams": 2}
        ],
        "qualities": [1.0, 2.0],
        "videos": [{"id": 0, "lambda": 0.02, "segments": 4, "n": 3, "k": 2, "placement": [1, 2, 3]}],
        "streaming": {"tau": 1.0, "startup_delay": 2.0}
    }"#,
    )
    .unwrap();
    let psp = raw_init(&inst, BaselineKind::PspQtb);
    let pea = raw_init(&inst, BaselineKind::PeaQtb);
    for (a, b) in psp.q.iter().flatten().flatten().zip(pea.q.iter().flatten().flatten()) {
        assert!((a - b).abs() < 1e-15);
    }
}

#[test]
fn frozen_block_keeps_its_initial_value() {
    let mut rng = common::rng(5);
    let (inst, _) = common::random_case(&mut rng);
    let cfg = SolverConfig {
        max_outer_iters: 10,
        ..SolverConfig::default()
    };
    for kind in BaselineKind::ALL {
        let Ok(init) = baseline_init(&inst, kind) else { continue };
        let run = run_baseline(&inst, kind, 1e-3, &cfg).unwrap();
        let frozen = BlockId::ORDER.into_iter().find(|b| !kind.free_blocks().contains(b)).unwrap();
        let x = &run.result.policy;
        match frozen {
            BlockId::QAccess => assert_eq!(x.q, init.q),
            BlockId::WBandwidth => assert_eq!(x.w, init.w),
            BlockId::BQuality => assert_eq!(x.b, init.b),
            _ => unreachable!(),
        }
        assert!(run.report.objective <= run.result.trace.first().map_or(f64::INFINITY, |r| r.objective) + 1e-9);
    }
}

#[test]
fn serde_names() {
    assert_eq!(serde_json::to_string(&BaselineKind::PlqBta).unwrap(), "\"PLQ-BTA\"");
    let k: BaselineKind = serde_json::from_str("\"PSP-QTB\"").unwrap();
    assert_eq!(k, BaselineKind::PspQtb);
}
