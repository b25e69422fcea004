//! Deterministic Monte Carlo averaging over noise trajectories.
//!
//! Every trajectory owns a seed derived from the master seed by a counter-based
//! mix, so trajectory `k` produces the same samples no matter which worker runs
//! it or how many workers exist. Accumulation happens on a fixed chunk grid
//! followed by a fixed-shape pairwise reduction tree, which makes the ensemble
//! mean bit-identical across thread counts.

use num_complex::Complex64;
use rayon::prelude::*;
use std::ops::Range;
use thiserror::Error;

/// Trajectories per accumulation chunk. Part of the deterministic reduction
/// contract: changing it changes rounding at the 1e-16 level, so it is fixed.
pub const CHUNK_TRAJECTORIES: usize = 64;

#[derive(Debug, Error)]
pub enum EnsembleError {
    #[error("ensemble needs at least one trajectory")]
    Empty,
    #[error("trajectory {index} returned {got} samples, expected {expected}")]
    LengthMismatch {
        index: usize,
        got: usize,
        expected: usize,
    },
}

/// How many trajectories to average and where the random streams start.
#[derive(Debug, Clone, Copy)]
pub struct EnsembleSpec {
    pub n_traj: usize,
    pub master_seed: u64,
}

/// An averaged (or single) time series: complex values on a shared time grid.
///
/// `stderr` holds the per-point standard error of the mean (total over real
/// and imaginary parts) when the series came from more than one trajectory.
#[derive(Debug, Clone)]
pub struct TimeSeries {
    pub times: Vec<f64>,
    pub values: Vec<Complex64>,
    pub n_traj: usize,
    pub stderr: Option<Vec<f64>>,
}

impl TimeSeries {
    /// Wrap a single trajectory (no averaging, no error bars).
    pub fn single(times: Vec<f64>, values: Vec<Complex64>) -> Self {
        Self {
            times,
            values,
            n_traj: 1,
            stderr: None,
        }
    }

    /// Sample spacing of the (uniform) time grid.
    pub fn dt(&self) -> f64 {
        if self.times.len() < 2 {
            0.0
        } else {
            self.times[1] - self.times[0]
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// SplitMix64 finalizer: maps (master seed, counter) to a decorrelated stream
/// seed. Counter-based so that seed assignment is independent of scheduling.
pub fn mix_seed(master: u64, k: u64) -> u64 {
    let mut z = master.wrapping_add(k.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Split `n_items` into `n_parts` contiguous ranges, largest first.
/// `partition_plan(10, 3)` yields `[0..4, 4..7, 7..10]`.
pub fn partition_plan(n_items: usize, n_parts: usize) -> Vec<Range<usize>> {
    if n_items == 0 || n_parts == 0 {
        return Vec::new();
    }
    let n_parts = n_parts.min(n_items);
    let base = n_items / n_parts;
    let rem = n_items % n_parts;
    let mut out = Vec::with_capacity(n_parts);
    let mut start = 0;
    for p in 0..n_parts {
        let len = base + usize::from(p < rem);
        out.push(start..start + len);
        start += len;
    }
    out
}

/// Per-chunk accumulator: sum of values and sum of |value|^2 per time point.
struct ChunkSums {
    sum: Vec<Complex64>,
    sum_sq: Vec<f64>,
}

impl ChunkSums {
    fn zeros(n: usize) -> Self {
        Self {
            sum: vec![Complex64::ZERO; n],
            sum_sq: vec![0.0; n],
        }
    }

    fn merge(mut a: Self, b: Self) -> Self {
        for (x, y) in a.sum.iter_mut().zip(&b.sum) {
            *x += y;
        }
        for (x, y) in a.sum_sq.iter_mut().zip(&b.sum_sq) {
            *x += y;
        }
        a
    }
}

/// Fixed-shape pairwise tree over the ordered chunk sums. The tree splits each
/// range at its midpoint, so a run over the first half of the chunks produces
/// exactly the left subtree of the full run — ensemble means are additive in
/// floating point, not just in exact arithmetic.
fn tree_reduce(mut chunks: Vec<ChunkSums>) -> ChunkSums {
    fn combine(chunks: &mut Vec<ChunkSums>, lo: usize, hi: usize) -> ChunkSums {
        debug_assert!(lo < hi);
        if hi - lo == 1 {
            return std::mem::replace(&mut chunks[lo], ChunkSums::zeros(0));
        }
        let mid = lo + (hi - lo) / 2;
        let left = combine(chunks, lo, mid);
        let right = combine(chunks, mid, hi);
        ChunkSums::merge(left, right)
    }
    let n = chunks.len();
    combine(&mut chunks, 0, n)
}

/// Average `spec.n_traj` trajectories of `run_trajectory`, which maps a
/// trajectory seed to samples on the shared `times` grid.
///
/// Trajectory `k` always receives seed `mix_seed(spec.master_seed, k)`.
/// Chunking, reduction order, and therefore every output bit are independent
/// of the rayon worker count.
pub fn simulate_ensemble<F>(
    spec: &EnsembleSpec,
    times: Vec<f64>,
    run_trajectory: F,
) -> Result<TimeSeries, EnsembleError>
where
    F: Fn(u64) -> Vec<Complex64> + Sync,
{
    if spec.n_traj == 0 {
        return Err(EnsembleError::Empty);
    }
    let n_points = times.len();
    let n_chunks = spec.n_traj.div_ceil(CHUNK_TRAJECTORIES);
    let plan = partition_plan(spec.n_traj, n_chunks);

    let chunk_sums = plan
        .into_par_iter()
        .map(|range| {
            let mut acc = ChunkSums::zeros(n_points);
            for k in range {
                let samples = run_trajectory(mix_seed(spec.master_seed, k as u64));
                if samples.len() != n_points {
                    return Err(EnsembleError::LengthMismatch {
                        index: k,
                        got: samples.len(),
                        expected: n_points,
                    });
                }
                for (i, v) in samples.iter().enumerate() {
                    acc.sum[i] += v;
                    acc.sum_sq[i] += v.norm_sqr();
                }
            }
            Ok(acc)
        })
        .collect::<Result<Vec<_>, _>>()?;

    let total = tree_reduce(chunk_sums);
    let n = spec.n_traj as f64;
    let values: Vec<Complex64> = total.sum.iter().map(|s| s / n).collect();

    let stderr = if spec.n_traj > 1 {
        Some(
            total
                .sum_sq
                .iter()
                .zip(&values)
                .map(|(&ss, m)| {
                    let var = ((ss - n * m.norm_sqr()) / (n - 1.0)).max(0.0);
                    (var / n).sqrt()
                })
                .collect(),
        )
    } else {
        None
    };

    Ok(TimeSeries {
        times,
        values,
        n_traj: spec.n_traj,
        stderr,
    })
}
