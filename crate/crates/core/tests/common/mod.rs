#![allow(dead_code)]

use rand::rngs::StdRng;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use serde_json::json;

use vidstall::analytics::t_feasible_upper;
use vidstall::model::{parse_config, Instance, PolicyVars};
use vidstall::optimizer::{feasibility_repair, project_box_budget, project_capped_simplex};

pub fn rng(seed: u64) -> StdRng {
    StdRng::seed_from_u64(seed)
}

pub fn desk_path() -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("configs/desk.json")
}

pub fn desk() -> Instance {
    vidstall::model::load_config(desk_path()).expect("desk config loads")
}

/// Small random instance: 2-4 servers with 1-3 streams, 1-3 qualities,
/// 2-5 videos with short segment counts.
pub fn random_instance(rng: &mut StdRng) -> Instance {
    let m = rng.random_range(2..=4usize);
    let servers: Vec<_> = (0..m)
        .map(|j| {
            json!({
                "id": j,
                "alpha_base": rng.random_range(30.0..80.0),
                "beta_base": rng.random_range(0.0..0.02),
                "num_streams": rng.random_range(1..=3usize),
            })
        })
        .collect();
    let nq = rng.random_range(1..=3usize);
    let mut sizes = Vec::new();
    let mut a = rng.random_range(0.5..1.5);
    for _ in 0..nq {
        sizes.push(a);
        a += rng.random_range(0.3..1.0);
    }
    let r = rng.random_range(2..=5usize);
    let videos: Vec<_> = (0..r)
        .map(|i| {
            let n = rng.random_range(1..=m);
            let k = rng.random_range(1..=n);
            let placement: Vec<usize> = sample(rng, m, n).into_vec();
            json!({
                "id": i,
                "lambda": rng.random_range(0.005..0.04),
                "segments": rng.random_range(1..=8usize),
                "n": n,
                "k": k,
                "placement": placement,
            })
        })
        .collect();
    let cfg = json!({
        "servers": servers,
        "qualities": sizes,
        "videos": videos,
        "streaming": {
            "tau": rng.random_range(1.0..2.0),
            "startup_delay": rng.random_range(0.0..5.0),
        },
    });
    parse_config(&cfg.to_string()).expect("generated instance is valid")
}

/// Random policy satisfying every constraint; the exponents are drawn inside
/// their feasible interval. Returns `None` if the draw overloads a stream.
pub fn random_policy(inst: &Instance, rng: &mut StdRng) -> Option<PolicyVars> {
    let mut x = PolicyVars::zeros(inst);
    let nq = inst.num_qualities();
    let m = inst.num_servers();
    for (i, v) in inst.videos.iter().enumerate() {
        for l in 0..nq {
            let raw: Vec<f64> = (0..m).map(|_| rng.random_range(0.0..1.0)).collect();
            x.q[i][l] = project_capped_simplex(&raw, v.k as f64, 1.0, &v.placement[l]).unwrap();
        }
        let raw: Vec<f64> = (0..nq).map(|_| rng.random_range(0.05..1.0)).collect();
        let s: f64 = raw.iter().sum();
        x.b[i] = raw.iter().map(|v| v / s).collect();
        x.t[i] = 1e-3;
    }
    for j in 0..m {
        let d = inst.servers[j].num_streams;
        for l in 0..nq {
            let raw: Vec<f64> = (0..d).map(|_| rng.random_range(0.05..1.0)).collect();
            let s: f64 = raw.iter().sum();
            x.p[l][j] = raw.iter().map(|v| v / s).collect();
        }
        let raw: Vec<f64> = (0..d).map(|_| rng.random_range(0.3..1.0)).collect();
        let s: f64 = raw.iter().sum();
        let scale = rng.random_range(0.7..1.0);
        x.w[j] = project_box_budget(&raw.iter().map(|v| scale * v / s).collect::<Vec<_>>());
    }
    let x = feasibility_repair(inst, &x).ok()?;
    let mut out = x.clone();
    for i in 0..inst.num_videos() {
        let upper = t_feasible_upper(inst, &x, i).ok()?;
        out.t[i] = upper * rng.random_range(0.1..0.9);
    }
    Some(out)
}

/// Random instance with a random feasible policy.
pub fn random_case(rng: &mut StdRng) -> (Instance, PolicyVars) {
    loop {
        let inst = random_instance(rng);
        if let Some(x) = random_policy(&inst, rng) {
            return (inst, x);
        }
    }
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
}

/// Brute-force QP oracle for `min |x - v|^2` over `{sum x = total, 0 <= x <=
/// cap}` (or `sum x <= total` when `budget` is set): every assignment of the
/// coordinates to lower bound, upper bound or free is solved in closed form
/// and the best feasible candidate wins.
pub fn qp_oracle(v: &[f64], total: f64, cap: f64, budget: bool) -> Vec<f64> {
    let n = v.len();
    let mut best: Option<(f64, Vec<f64>)> = None;
    let faces = 3usize.pow(n as u32);
    for code in 0..faces {
        let mut c = code;
        let mut state = vec![0u8; n];
        for s in state.iter_mut() {
            *s = (c % 3) as u8;
            c /= 3;
        }
        // with a budget the sum may also be inactive (multiplier zero)
        let modes: &[bool] = if budget { &[true, false] } else { &[true] };
        for &sum_active in modes {
            let fixed: f64 = state
                .iter()
                .map(|&s| match s {
                    1 => cap,
                    _ => 0.0,
                })
                .sum();
            let free: Vec<usize> = (0..n).filter(|&i| state[i] == 2).collect();
            let shift = if sum_active {
                if free.is_empty() {
                    if (fixed - total).abs() > 1e-12 {
                        continue;
                    }
                    0.0
                } else {
                    (free.iter().map(|&i| v[i]).sum::<f64>() + fixed - total) / free.len() as f64
                }
            } else {
                0.0
            };
            let x: Vec<f64> = (0..n)
                .map(|i| match state[i] {
                    0 => 0.0,
                    1 => cap,
                    _ => v[i] - shift,
                })
                .collect();
            let sum: f64 = x.iter().sum();
            let ok = x.iter().all(|&e| e >= -1e-12 && e <= cap + 1e-12)
                && if budget { sum <= total + 1e-12 } else { (sum - total).abs() <= 1e-9 };
            if !ok {
                continue;
            }
            let d: f64 = x.iter().zip(v).map(|(a, b)| (a - b) * (a - b)).sum();
            if best.as_ref().is_none_or(|(bd, _)| d < *bd) {
                best = Some((d, x));
            }
        }
    }
    best.expect("feasible set is non-empty").1
}

pub fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Three servers with two streams each, five files on a (3, 2) code and two
/// qualities, with arrival rates scaled so the busiest stream under the
/// uniform policy runs at utilization `target`.
pub fn queue_instance(target: f64) -> (Instance, PolicyVars) {
    let build = |scale: f64| {
        let videos: Vec<_> = (0..5)
            .map(|i| {
                json!({
                    "id": i,
                    "lambda": scale * (1.0 + 0.25 * i as f64),
                    "segments": 2 + i,
                    "n": 3,
                    "k": 2,
                    "placement": [1, 2, 3],
                })
            })
            .collect();
        let cfg = json!({
            "servers": [
                {"id": 1, "alpha_base": 20.0, "beta_base": 0.01, "num_streams": 2},
                {"id": 2, "alpha_base": 25.0, "beta_base": 0.01, "num_streams": 2},
                {"id": 3, "alpha_base": 30.0, "beta_base": 0.02, "num_streams": 2},
            ],
            "qualities": [1.0, 1.6],
            "videos": videos,
            "streaming": {"tau": 1.0, "startup_delay": 2.0},
        });
        parse_config(&cfg.to_string()).expect("queue instance is valid")
    };
    let unit = build(1.0);
    let x = PolicyVars::uniform(&unit, 0.01);
    let load = vidstall::analytics::stream_arrival_rates(&unit, &x).unwrap();
    let peak = load.rho.iter().flatten().cloned().fold(0.0, f64::max);
    let inst = build(target / peak);
    let x = feasibility_repair(&inst, &PolicyVars::uniform(&inst, 0.01)).expect("stable at target load");
    (inst, x)
}
