use std::collections::HashSet;

use rand::Rng as _;

use crate::rng::Rng;

/// Marker for padded cells.
pub const PAD: usize = usize::MAX;

/// A training sequence and the items its negatives must avoid.
#[derive(Clone, Copy, Debug)]
pub struct TrainSequence<'a> {
    pub items: &'a [usize],
    pub exclude: &'a [usize],
}

impl<'a> TrainSequence<'a> {
    /// Negatives avoid the sequence's own items.
    pub fn own(items: &'a [usize]) -> Self {
        Self { items, exclude: items }
    }
}

/// Left-padded next-item training batch.
///
/// Row `r`, column `c` holds input item `inputs[r][c]`, the item that
/// follows it (`targets`) and `negatives_per_step` sampled negatives. Valid
/// cells form a suffix of every row so the newest item is always in the last
/// column.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainBatch {
    rows: usize,
    width: usize,
    negatives_per_step: usize,
    inputs: Vec<usize>,
    targets: Vec<usize>,
    negatives: Vec<usize>,
    mask: Vec<bool>,
}

/// Valid part of one batch row.
#[derive(Clone, Copy, Debug)]
pub struct BatchRow<'a> {
    pub inputs: &'a [usize],
    pub targets: &'a [usize],
    /// `inputs.len() x negatives_per_step`, row-major
    pub negatives: &'a [usize],
}

impl TrainBatch {
    /// Sequences longer than `max_len + 1` keep their most recent items.
    /// Negatives are drawn uniformly from the catalog minus `exclude`.
    pub fn build(
        sequences: &[TrainSequence<'_>],
        max_len: usize,
        num_items: usize,
        negatives_per_step: usize,
        rng: &mut Rng,
    ) -> Self {
        let steps = |s: &TrainSequence<'_>| s.items.len().saturating_sub(1).min(max_len);
        let width = sequences.iter().map(steps).max().unwrap_or(0);
        let rows = sequences.len();
        let mut batch = TrainBatch {
            rows,
            width,
            negatives_per_step,
            inputs: vec![PAD; rows * width],
            targets: vec![PAD; rows * width],
            negatives: vec![PAD; rows * width * negatives_per_step],
            mask: vec![false; rows * width],
        };
        for (r, seq) in sequences.iter().enumerate() {
            let m = steps(seq);
            if m == 0 {
                continue;
            }
            let window = &seq.items[seq.items.len() - m - 1..];
            let excluded: HashSet<usize> = seq.exclude.iter().copied().collect();
            let saturated = excluded.iter().filter(|&&i| i < num_items).count() >= num_items;
            for j in 0..m {
                let cell = r * width + (width - m) + j;
                batch.inputs[cell] = window[j];
                batch.targets[cell] = window[j + 1];
                batch.mask[cell] = true;
                for n in 0..negatives_per_step {
                    batch.negatives[cell * negatives_per_step + n] = loop {
                        let k = rng.gen_range(0..num_items);
                        if saturated || !excluded.contains(&k) {
                            break k;
                        }
                    };
                }
            }
        }
        batch
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn negatives_per_step(&self) -> usize {
        self.negatives_per_step
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn inputs(&self) -> &[usize] {
        &self.inputs
    }

    /// Number of unmasked steps.
    pub fn num_steps(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    pub fn row(&self, r: usize) -> BatchRow<'_> {
        let start = r * self.width;
        let row_mask = &self.mask[start..start + self.width];
        let m = row_mask.iter().filter(|&&v| v).count();
        let first = start + self.width - m;
        let end = start + self.width;
        BatchRow {
            inputs: &self.inputs[first..end],
            targets: &self.targets[first..end],
            negatives: &self.negatives[first * self.negatives_per_step..end * self.negatives_per_step],
        }
    }
}
