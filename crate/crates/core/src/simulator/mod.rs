//! Discrete-event simulation of the streaming system.
//!
//! Requests arrive as a merged Poisson stream. Each picks a quality and `k`
//! (server, stream) pairs; every chosen stream queues the whole chunk job
//! FIFO. The client plays segment `u` once the `u`-th chunk has arrived from
//! all of its streams, and the stall is the playback delay of the last
//! segment beyond the ideal schedule.

mod sampling;
mod validate;

use std::io::Write;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analytics::LoadState;
use crate::error::{Error, Result};
use crate::model::{Instance, PolicyVars};

pub use sampling::{sample_selection, systematic_sample};
pub use validate::{validate_bound, BoundCheck, BoundValidation};

use sampling::Selector;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    /// Arrivals simulated per replication.
    pub num_requests: usize,
    /// Leading share of arrivals left out of the statistics.
    #[serde(default = "default_warmup")]
    pub warmup_fraction: f64,
    pub seed: u64,
    #[serde(default = "default_replications")]
    pub replications: usize,
}

fn default_warmup() -> f64 {
    0.1
}

fn default_replications() -> usize {
    1
}

impl SimConfig {
    pub fn new(num_requests: usize, seed: u64) -> Self {
        Self {
            num_requests,
            warmup_fraction: default_warmup(),
            seed,
            replications: default_replications(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_requests == 0 {
            return Err(Error::Validation("num_requests must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.warmup_fraction) {
            return Err(Error::Validation(format!(
                "warmup_fraction {} outside [0, 1)",
                self.warmup_fraction
            )));
        }
        if self.replications == 0 {
            return Err(Error::Validation("replications must be at least 1".into()));
        }
        Ok(())
    }

    fn warmup(&self) -> usize {
        ((self.warmup_fraction * self.num_requests as f64) as usize).min(self.num_requests - 1)
    }
}

/// Sample mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Estimate {
    pub mean: f64,
    pub std_error: f64,
}

#[derive(Debug, Clone, Copy, Default)]
struct Acc {
    n: usize,
    sum: f64,
    sumsq: f64,
}

impl Acc {
    fn push(&mut self, v: f64) {
        self.n += 1;
        self.sum += v;
        self.sumsq += v * v;
    }

    fn mean(&self) -> f64 {
        self.sum / self.n as f64
    }
}

/// Pooled mean over replications. With several replications the standard
/// error comes from the spread of the replication means, otherwise from the
/// per-sample variance.
fn combine(reps: &[Acc]) -> Option<Estimate> {
    let n: usize = reps.iter().map(|a| a.n).sum();
    if n == 0 {
        return None;
    }
    let mean = reps.iter().map(|a| a.sum).sum::<f64>() / n as f64;
    let with_data: Vec<f64> = reps.iter().filter(|a| a.n > 0).map(Acc::mean).collect();
    let std_error = if with_data.len() >= 2 {
        let r = with_data.len() as f64;
        let mu = with_data.iter().sum::<f64>() / r;
        let var = with_data.iter().map(|m| (m - mu) * (m - mu)).sum::<f64>() / (r - 1.0);
        (var / r).sqrt()
    } else if n >= 2 {
        let sumsq: f64 = reps.iter().map(|a| a.sumsq).sum();
        let var = ((sumsq - n as f64 * mean * mean) / (n as f64 - 1.0)).max(0.0);
        (var / n as f64).sqrt()
    } else {
        f64::NAN
    };
    Some(Estimate { mean, std_error })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellStall {
    pub requests: usize,
    pub mean_stall: Option<f64>,
    pub std_error: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FileStall {
    pub video_id: u32,
    pub requests: usize,
    pub mean_stall: Option<f64>,
    /// Per quality level.
    pub per_quality: Vec<CellStall>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StreamStat {
    pub server_id: u32,
    pub stream: usize,
    pub jobs: usize,
    pub mean_wait: Option<f64>,
    pub wait_std_error: Option<f64>,
    /// Busy fraction over the measurement window.
    pub utilization: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimReport {
    pub seed: u64,
    pub replications: usize,
    pub num_requests: usize,
    pub warmup_fraction: f64,
    /// Some stream is offered a load of at least one.
    pub unstable: bool,
    pub mean_stall: Estimate,
    pub per_file_stall: Vec<FileStall>,
    pub streams: Vec<StreamStat>,
    pub empirical_avg_quality: Estimate,
}

impl SimReport {
    /// One row per (video, quality).
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["video_id", "quality", "requests", "mean_stall", "std_error"])?;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for f in &self.per_file_stall {
            for (l, c) in f.per_quality.iter().enumerate() {
                w.write_record([
                    f.video_id.to_string(),
                    (l + 1).to_string(),
                    c.requests.to_string(),
                    opt(c.mean_stall),
                    opt(c.std_error),
                ])?;
            }
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }
}

/// One simulated request.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RequestRecord {
    pub request: usize,
    pub arrival: f64,
    pub video: usize,
    pub quality: usize,
    /// Chosen (server, stream) pairs.
    pub selection: Vec<(usize, usize)>,
    /// Queueing delay at each chosen stream.
    pub waits: Vec<f64>,
    /// Time from arrival until chunk `u` is available from every stream.
    pub downloads: Vec<f64>,
    pub stall: f64,
}

/// Write request records as CSV; the selection is `server:stream` pairs
/// joined by `;`.
pub fn write_trace_csv<W: Write>(records: &[RequestRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["request", "arrival", "video", "quality", "selection", "stall"])?;
    for r in records {
        let sel: Vec<String> = r.selection.iter().map(|(j, nu)| format!("{j}:{nu}")).collect();
        w.write_record([
            r.request.to_string(),
            r.arrival.to_string(),
            r.video.to_string(),
            (r.quality + 1).to_string(),
            sel.join(";"),
            r.stall.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

/// Play-out of one request from its chunk availability times.
pub fn stall_duration(downloads: &[f64], startup_delay: f64, tau: f64) -> f64 {
    let Some((&first, rest)) = downloads.split_first() else {
        return 0.0;
    };
    let mut play = startup_delay.max(first);
    for &d in rest {
        play = (play + tau).max(d);
    }
    play - startup_delay - (downloads.len() - 1) as f64 * tau
}

struct Replication {
    stall: Acc,
    cells: Vec<Vec<Acc>>,
    waits: Vec<Acc>,
    busy: Vec<f64>,
    window: f64,
    quality: Acc,
}

struct Model<'a> {
    inst: &'a Instance,
    x: &'a PolicyVars,
    selector: Selector,
    videos: WeightedIndex<f64>,
    total_rate: f64,
    /// Chunk service: shift and exponential part per `[s][l]`.
    service: Vec<Vec<Option<(f64, Exp<f64>)>>>,
}

impl<'a> Model<'a> {
    fn new(inst: &'a Instance, x: &'a PolicyVars) -> Result<Self> {
        let rates: Vec<f64> = inst.videos.iter().map(|v| v.arrival_rate).collect();
        let videos = WeightedIndex::new(&rates)
            .map_err(|_| Error::Validation("no video has a positive arrival rate".into()))?;
        let mut service = Vec::with_capacity(inst.num_streams());
        for (j, server) in inst.servers.iter().enumerate() {
            for nu in 0..server.num_streams {
                service.push(
                    inst.qualities
                        .sizes()
                        .iter()
                        .map(|&a| {
                            let alpha = server.alpha_base * x.w[j][nu] / a;
                            Exp::new(alpha).ok().filter(|_| alpha > 0.0).map(|e| (server.beta_base * a, e))
                        })
                        .collect(),
                );
            }
        }
        Ok(Self {
            inst,
            x,
            selector: Selector::new(inst, x)?,
            videos,
            total_rate: inst.total_arrival_rate(),
            service,
        })
    }

    fn run(&self, cfg: &SimConfig, rep: usize, mut trace: Option<&mut Vec<RequestRecord>>) -> Result<Replication> {
        let inst = self.inst;
        let nq = inst.num_qualities();
        let ns = inst.num_streams();
        let tau = inst.streaming.segment_seconds;
        let ds = inst.streaming.startup_delay;
        let total_segments = inst.total_segments() as f64;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(rep as u64);
        let gap = Exp::new(self.total_rate).map_err(|e| Error::Domain(e.to_string()))?;
        let warm = cfg.warmup();

        let mut out = Replication {
            stall: Acc::default(),
            cells: vec![vec![Acc::default(); nq]; inst.num_videos()],
            waits: vec![Acc::default(); ns],
            busy: vec![0.0; ns],
            window: 0.0,
            quality: Acc::default(),
        };
        let mut free = vec![0.0f64; ns];
        let mut now = 0.0;
        let mut window_start = 0.0;
        let mut done = Vec::new();

        for r in 0..cfg.num_requests {
            now += gap.sample(&mut rng);
            let measured = r >= warm;
            if r == warm {
                window_start = now;
                for s in 0..ns {
                    out.busy[s] = (free[s] - now).max(0.0);
                }
            }
            let i = self.videos.sample(&mut rng);
            let len = inst.videos[i].num_segments;
            let l = self.selector.quality(i, &mut rng)?;
            let selection = self.selector.select(inst, self.x, i, l, &mut rng)?;
            done.clear();
            done.resize(len, now);
            let mut waits = Vec::with_capacity(selection.len());
            for &(j, nu) in &selection {
                let s = inst.stream_index(j, nu);
                let (shift, exp) = self.service[s][l].ok_or(Error::ZeroRate { server: j, stream: nu })?;
                let start = now.max(free[s]);
                let mut clock = start;
                for slot in done.iter_mut() {
                    clock += shift + exp.sample(&mut rng);
                    if clock > *slot {
                        *slot = clock;
                    }
                }
                free[s] = clock;
                waits.push(start - now);
                if measured {
                    out.waits[s].push(start - now);
                    out.busy[s] += clock - start;
                }
            }
            let downloads: Vec<f64> = done.iter().map(|d| d - now).collect();
            let stall = stall_duration(&downloads, ds, tau);
            if measured {
                out.stall.push(stall);
                out.cells[i][l].push(stall);
                out.quality.push(len as f64 / total_segments * inst.qualities.size(l));
            }
            if let Some(tr) = trace.as_deref_mut() {
                tr.push(RequestRecord {
                    request: r,
                    arrival: now,
                    video: i,
                    quality: l,
                    selection,
                    waits,
                    downloads,
                    stall,
                });
            }
        }
        let end = free.iter().copied().fold(now, f64::max);
        out.window = end - window_start;
        Ok(out)
    }
}

fn any_overloaded(inst: &Instance, x: &PolicyVars) -> bool {
    let load = LoadState::new(inst, x);
    (0..inst.num_streams()).any(|s| load.lambda[s] > 0.0 && !(load.rho[s] < 1.0))
}

/// Simulate `cfg.replications` independent runs and merge their statistics.
///
/// Overloaded streams do not stop the run; they set [`SimReport::unstable`].
pub fn run_simulation(inst: &Instance, x: &PolicyVars, cfg: &SimConfig) -> Result<SimReport> {
    simulate(inst, x, cfg, None)
}

/// [`run_simulation`] that also returns the request log of the first
/// replication.
pub fn run_simulation_traced(inst: &Instance, x: &PolicyVars, cfg: &SimConfig) -> Result<(SimReport, Vec<RequestRecord>)> {
    let mut trace = Vec::new();
    let report = simulate(inst, x, cfg, Some(&mut trace))?;
    Ok((report, trace))
}

fn simulate(inst: &Instance, x: &PolicyVars, cfg: &SimConfig, trace: Option<&mut Vec<RequestRecord>>) -> Result<SimReport> {
    cfg.validate()?;
    x.check_dims(inst)?;
    let model = Model::new(inst, x)?;
    let first = model.run(cfg, 0, trace)?;
    let rest: Vec<Replication> = (1..cfg.replications)
        .into_par_iter()
        .map(|rep| model.run(cfg, rep, None))
        .collect::<Result<_>>()?;
    let reps: Vec<Replication> = std::iter::once(first).chain(rest).collect();

    let nan = Estimate {
        mean: f64::NAN,
        std_error: f64::NAN,
    };
    let stalls: Vec<Acc> = reps.iter().map(|r| r.stall).collect();
    let quality: Vec<Acc> = reps.iter().map(|r| r.quality).collect();
    let per_file_stall = inst
        .videos
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let per_quality: Vec<CellStall> = (0..inst.num_qualities())
                .map(|l| {
                    let accs: Vec<Acc> = reps.iter().map(|r| r.cells[i][l]).collect();
                    let est = combine(&accs);
                    CellStall {
                        requests: accs.iter().map(|a| a.n).sum(),
                        mean_stall: est.map(|e| e.mean),
                        std_error: est.map(|e| e.std_error).filter(|s| s.is_finite()),
                    }
                })
                .collect();
            let file: Vec<Acc> = reps
                .iter()
                .map(|r| {
                    r.cells[i].iter().fold(Acc::default(), |a, c| Acc {
                        n: a.n + c.n,
                        sum: a.sum + c.sum,
                        sumsq: a.sumsq + c.sumsq,
                    })
                })
                .collect();
            FileStall {
                video_id: v.id,
                requests: file.iter().map(|a| a.n).sum(),
                mean_stall: combine(&file).map(|e| e.mean),
                per_quality,
            }
        })
        .collect();
    let mut streams = Vec::with_capacity(inst.num_streams());
    for (j, server) in inst.servers.iter().enumerate() {
        for nu in 0..server.num_streams {
            let s = inst.stream_index(j, nu);
            let accs: Vec<Acc> = reps.iter().map(|r| r.waits[s]).collect();
            let est = combine(&accs);
            let busy: f64 = reps.iter().map(|r| r.busy[s]).sum();
            let window: f64 = reps.iter().map(|r| r.window).sum();
            streams.push(StreamStat {
                server_id: server.id,
                stream: nu,
                jobs: accs.iter().map(|a| a.n).sum(),
                mean_wait: est.map(|e| e.mean),
                wait_std_error: est.map(|e| e.std_error).filter(|s| s.is_finite()),
                utilization: if window > 0.0 { (busy / window).clamp(0.0, 1.0) } else { 0.0 },
            });
        }
    }
    Ok(SimReport {
        seed: cfg.seed,
        replications: cfg.replications,
        num_requests: cfg.num_requests,
        warmup_fraction: cfg.warmup_fraction,
        unstable: any_overloaded(inst, x),
        mean_stall: combine(&stalls).unwrap_or(nan),
        per_file_stall,
        streams,
        empirical_avg_quality: combine(&quality).unwrap_or(nan),
    })
}
