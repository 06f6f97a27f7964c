//! Hard-sample mining from the training-error histogram and balanced batch
//! sampling over the resulting partition.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{KeplerError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub bin_width: f64,
    /// Lower edge of bin 0; bins are `[origin + k w, origin + (k + 1) w)`.
    pub origin: f64,
    pub counts: Vec<usize>,
}

impl Histogram {
    pub fn edges(&self) -> Vec<f64> {
        (0..=self.counts.len())
            .map(|k| self.origin + k as f64 * self.bin_width)
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MiningPartition {
    pub hard: Vec<usize>,
    pub easy: Vec<usize>,
    /// Centre of the most populated histogram bin.
    pub mode: f64,
    /// Errors strictly above this are hard.
    pub delta: f64,
    pub histogram: Histogram,
}

impl MiningPartition {
    /// Split at a fixed threshold instead of the mined one.
    pub fn with_threshold(errors: &[f64], delta: f64, histogram: Histogram, mode: f64) -> Self {
        let (hard, easy): (Vec<usize>, Vec<usize>) =
            (0..errors.len()).partition(|&i| errors[i] > delta);
        MiningPartition {
            hard,
            easy,
            mode,
            delta,
            histogram,
        }
    }

    pub fn hard_fraction(&self) -> f64 {
        self.hard.len() as f64 / (self.hard.len() + self.easy.len()) as f64
    }
}

fn histogram(errors: &[f64], bin_width: f64) -> Histogram {
    let max = errors.iter().cloned().fold(0.0, f64::max);
    let bins = (max / bin_width).floor() as usize + 1;
    let mut counts = vec![0usize; bins];
    for &e in errors {
        let k = ((e.max(0.0) / bin_width).floor() as usize).min(bins - 1);
        counts[k] += 1;
    }
    Histogram {
        bin_width,
        origin: 0.0,
        counts,
    }
}

/// Partition per-sample errors into hard and easy groups.
///
/// The mode `C` is the centre of the most populated bin (lowest on ties).
/// The threshold is the largest bin edge at or above `C` that still leaves at
/// least `min_hard_fraction` of the samples strictly above it. When even `C`
/// leaves too few samples above it, the largest lower edge that satisfies the
/// fraction is used instead.
pub fn mine_hard_samples(
    errors: &[f64],
    bin_width: f64,
    min_hard_fraction: f64,
) -> Result<MiningPartition> {
    if errors.is_empty() {
        return Err(KeplerError::Degenerate("no errors to mine".into()));
    }
    if !(min_hard_fraction > 0.0 && min_hard_fraction < 1.0) || !(bin_width > 0.0) {
        return Err(KeplerError::InvalidConfig(
            "mining needs min_hard_fraction in (0, 1) and a positive bin width".into(),
        ));
    }
    if errors.iter().any(|e| !e.is_finite()) {
        return Err(KeplerError::NonFinite("mining errors"));
    }
    if errors.iter().all(|&e| e == errors[0]) {
        return Err(KeplerError::Degenerate(
            "all errors are identical; no hard/easy split exists".into(),
        ));
    }
    let hist = histogram(errors, bin_width);
    let modal = hist
        .counts
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))
        .map(|(k, _)| k)
        .unwrap();
    let mode = hist.origin + (modal as f64 + 0.5) * bin_width;

    let n = errors.len() as f64;
    let needed = (min_hard_fraction * n).ceil() as usize;
    let above = |t: f64| errors.iter().filter(|&&e| e > t).count();

    let top = hist.origin + hist.counts.len() as f64 * bin_width;
    let mut delta = None;
    if above(mode) >= needed {
        let mut t = mode;
        let mut k = modal + 1;
        loop {
            let edge = hist.origin + k as f64 * bin_width;
            if edge > top || above(edge) < needed {
                break;
            }
            t = edge;
            k += 1;
        }
        delta = Some(t);
    } else {
        for k in (0..=modal).rev() {
            let edge = hist.origin + k as f64 * bin_width;
            if above(edge) >= needed {
                delta = Some(edge);
                break;
            }
        }
    }
    let delta = delta.ok_or_else(|| {
        KeplerError::Degenerate("no threshold leaves the requested hard fraction".into())
    })?;
    let mut part = MiningPartition::with_threshold(errors, delta, hist, mode);
    if part.easy.is_empty() {
        // Every sample sits above the lowest edge; move the zero-error floor.
        let min = errors.iter().cloned().fold(f64::INFINITY, f64::min);
        part = MiningPartition::with_threshold(errors, min, part.histogram, mode);
    }
    Ok(part)
}

/// Endless stream of batches drawing half from each group. The larger group
/// is walked in reshuffled passes; the smaller one is drawn with replacement.
pub struct BalancedBatches {
    hard: Vec<usize>,
    easy: Vec<usize>,
    half: usize,
    rng: ChaCha8Rng,
    cursor: usize,
    order: Vec<usize>,
    hard_is_larger: bool,
}

pub fn balanced_batches(
    partition: &MiningPartition,
    batch_size: usize,
    seed: u64,
) -> Result<BalancedBatches> {
    if partition.hard.is_empty() || partition.easy.is_empty() {
        return Err(KeplerError::Degenerate(
            "balanced batches need non-empty hard and easy groups".into(),
        ));
    }
    if batch_size == 0 || batch_size % 2 != 0 {
        return Err(KeplerError::InvalidConfig(
            "balanced batch size must be even and positive".into(),
        ));
    }
    let hard_is_larger = partition.hard.len() >= partition.easy.len();
    Ok(BalancedBatches {
        hard: partition.hard.clone(),
        easy: partition.easy.clone(),
        half: batch_size / 2,
        rng: ChaCha8Rng::seed_from_u64(seed),
        cursor: 0,
        order: Vec::new(),
        hard_is_larger,
    })
}

impl BalancedBatches {
    fn next_from_larger(&mut self) -> usize {
        let larger = if self.hard_is_larger { &self.hard } else { &self.easy };
        if self.cursor >= self.order.len() {
            self.order = larger.clone();
            self.order.shuffle(&mut self.rng);
            self.cursor = 0;
        }
        self.cursor += 1;
        self.order[self.cursor - 1]
    }

    fn next_from_smaller(&mut self) -> usize {
        let smaller = if self.hard_is_larger { &self.easy } else { &self.hard };
        smaller[self.rng.gen_range(0..smaller.len())]
    }
}

impl Iterator for BalancedBatches {
    /// Hard indices first, then easy ones.
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        let mut larger = Vec::with_capacity(self.half);
        let mut smaller = Vec::with_capacity(self.half);
        for _ in 0..self.half {
            larger.push(self.next_from_larger());
            smaller.push(self.next_from_smaller());
        }
        let (mut hard, easy) = if self.hard_is_larger {
            (larger, smaller)
        } else {
            (smaller, larger)
        };
        hard.extend(easy);
        Some(hard)
    }
}
