//! Server and stream selection with prescribed inclusion probabilities.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::model::{Instance, PolicyVars};

const SUM_TOL: f64 = 1e-9;

/// `k` distinct indices from `candidates`, index `j` included with
/// probability `q[j]` (systematic sampling over a random permutation).
///
/// `q` must sum to `k` over the candidates and satisfy `0 <= q <= 1`.
pub fn systematic_sample<R: Rng + ?Sized>(q: &[f64], candidates: &[usize], k: usize, rng: &mut R) -> Result<Vec<usize>> {
    let sum: f64 = candidates.iter().map(|&j| q[j]).sum();
    if (sum - k as f64).abs() > SUM_TOL {
        return Err(Error::SamplingSum { sum, expected: k as f64 });
    }
    let mut order = candidates.to_vec();
    order.shuffle(rng);
    let scale = if sum > 0.0 { k as f64 / sum } else { 0.0 };
    let mut point = rng.random::<f64>();
    let mut cum = 0.0;
    let mut out = Vec::with_capacity(k);
    for &j in &order {
        cum += q[j] * scale;
        if out.len() < k && point < cum {
            out.push(j);
            point += 1.0;
        }
    }
    // rounding can leave the last point a hair past the end
    if out.len() < k {
        if let Some(&j) = order.iter().rev().find(|j| q[**j] > 0.0 && !out.contains(*j)) {
            out.push(j);
        }
    }
    Ok(out)
}

/// Precomputed selection tables for one policy.
#[derive(Debug, Clone)]
pub(crate) struct Selector {
    /// Servers with positive access probability per `[i][l]`.
    candidates: Vec<Vec<Vec<usize>>>,
    /// Stream choice per `[l][j]`; `None` when the server has no stream
    /// weight at that quality.
    streams: Vec<Vec<Option<WeightedIndex<f64>>>>,
    quality: Vec<Option<WeightedIndex<f64>>>,
}

impl Selector {
    pub fn new(inst: &Instance, x: &PolicyVars) -> Result<Self> {
        let nq = inst.num_qualities();
        let m = inst.num_servers();
        let candidates = (0..inst.num_videos())
            .map(|i| {
                (0..nq)
                    .map(|l| (0..m).filter(|&j| x.q[i][l][j] > 0.0).collect())
                    .collect()
            })
            .collect();
        let streams = (0..nq)
            .map(|l| (0..m).map(|j| WeightedIndex::new(&x.p[l][j]).ok()).collect())
            .collect();
        let quality = x.b.iter().map(|b| WeightedIndex::new(b).ok()).collect();
        Ok(Self { candidates, streams, quality })
    }

    pub fn quality<R: Rng + ?Sized>(&self, i: usize, rng: &mut R) -> Result<usize> {
        self.quality[i]
            .as_ref()
            .map(|d| d.sample(rng))
            .ok_or_else(|| Error::Domain(format!("quality probabilities of video {i} are degenerate")))
    }

    pub fn select<R: Rng + ?Sized>(
        &self,
        inst: &Instance,
        x: &PolicyVars,
        i: usize,
        l: usize,
        rng: &mut R,
    ) -> Result<Vec<(usize, usize)>> {
        let k = inst.videos[i].k;
        let servers = systematic_sample(&x.q[i][l], &self.candidates[i][l], k, rng)?;
        servers
            .into_iter()
            .map(|j| {
                let d = self.streams[l][j]
                    .as_ref()
                    .ok_or_else(|| Error::Domain(format!("stream probabilities of server {j} are degenerate")))?;
                Ok((j, d.sample(rng)))
            })
            .collect()
    }
}

/// Draw the `k_i` (server, stream) pairs serving one request of video `i` at
/// quality `l`.
pub fn sample_selection<R: Rng + ?Sized>(
    inst: &Instance,
    x: &PolicyVars,
    i: usize,
    l: usize,
    rng: &mut R,
) -> Result<Vec<(usize, usize)>> {
    x.check_dims(inst)?;
    Selector::new(inst, x)?.select(inst, x, i, l, rng)
}
