//! Batch size × learning rate grid search scored by development RTE average.

use serde::{Deserialize, Serialize};

use super::{train, TrainConfig};
use crate::corpus::DatasetSplit;
use crate::error::{Error, Result};

pub const GRID_BATCH_SIZES: [usize; 3] = [16, 32, 64];
pub const GRID_LEARNING_RATES: [f64; 3] = [1e-5, 3e-5, 5e-5];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Best development RTE average of the cell's run; `None` if it failed.
    pub dev_rte_avg: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    /// Row-major over batch sizes, then learning rates.
    pub cells: Vec<GridCell>,
    /// Index of the best successful cell; the first one wins ties.
    pub best: Option<usize>,
}

impl GridResult {
    pub fn best_cell(&self) -> Option<&GridCell> {
        self.best.map(|i| &self.cells[i])
    }
}

/// Rejects batch sizes outside the reference grid when `strict` is set.
pub fn check_grid(batch_sizes: &[usize], learning_rates: &[f64], strict: bool) -> Result<()> {
    if batch_sizes.is_empty() || learning_rates.is_empty() {
        return Err(Error::Config("grid needs at least one batch size and one learning rate".into()));
    }
    if strict {
        if let Some(b) = batch_sizes.iter().find(|b| !GRID_BATCH_SIZES.contains(b)) {
            return Err(Error::Config(format!(
                "batch size {b} is outside the supported grid {GRID_BATCH_SIZES:?}"
            )));
        }
    }
    Ok(())
}

/// Trains one model per cell. A failing cell is recorded and the rest proceed.
pub fn grid_search(
    batch_sizes: &[usize],
    learning_rates: &[f64],
    strict: bool,
    base: &TrainConfig,
    train_split: &DatasetSplit,
    dev: &DatasetSplit,
) -> Result<GridResult> {
    check_grid(batch_sizes, learning_rates, strict)?;
    let mut cells = Vec::with_capacity(batch_sizes.len() * learning_rates.len());
    for &batch_size in batch_sizes {
        for &learning_rate in learning_rates {
            let config = TrainConfig {
                batch_size,
                learning_rate,
                ..base.clone()
            };
            let cell = match train(&config, train_split, dev) {
                Ok(run) => GridCell {
                    batch_size,
                    learning_rate,
                    dev_rte_avg: Some(run.best.dev_metric.dev_rte_avg),
                    error: None,
                },
                Err(e) => {
                    log::warn!("grid cell ({batch_size}, {learning_rate}) failed: {e}");
                    GridCell {
                        batch_size,
                        learning_rate,
                        dev_rte_avg: None,
                        error: Some(e.to_string()),
                    }
                }
            };
            cells.push(cell);
        }
    }
    let mut best: Option<usize> = None;
    for (i, c) in cells.iter().enumerate() {
        if let Some(v) = c.dev_rte_avg {
            if best.is_none_or(|b| v > cells[b].dev_rte_avg.unwrap_or(f64::MIN)) {
                best = Some(i);
            }
        }
    }
    Ok(GridResult { cells, best })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::synthetic::synthetic_splits;
    use crate::encoder::{Architecture, ToyConfig};

    fn base() -> TrainConfig {
        let mut c = TrainConfig::toy(
            Architecture::Cross,
            ToyConfig {
                layers: 1,
                heads: 2,
                hidden: 8,
                ffn: 16,
            },
        );
        c.epochs = 1;
        c.encoder.max_sequence_length = 16;
        c
    }

    #[test]
    fn single_cell_equals_plain_training() {
        let s = synthetic_splits(4, 16, 8, 8, 40).unwrap();
        let base = base();
        let g = grid_search(&[16], &[1e-3], true, &base, &s.train.split, &s.dev.split).unwrap();
        assert_eq!(g.cells.len(), 1);
        assert_eq!(g.best, Some(0));
        let run = train(&TrainConfig { batch_size: 16, learning_rate: 1e-3, ..base }, &s.train.split, &s.dev.split).unwrap();
        assert_eq!(g.cells[0].dev_rte_avg, Some(run.best.dev_metric.dev_rte_avg));
    }

    #[test]
    fn reference_grid_has_nine_cells_and_failures_are_kept() {
        let s = synthetic_splits(5, 8, 4, 4, 40).unwrap();
        let mut base = base();
        base.warmup_fraction = 2.0; // invalid: every cell fails
        let g = grid_search(&GRID_BATCH_SIZES, &GRID_LEARNING_RATES, true, &base, &s.train.split, &s.dev.split).unwrap();
        assert_eq!(g.cells.len(), 9);
        assert_eq!((g.cells[5].batch_size, g.cells[5].learning_rate), (32, 5e-5));
        assert!(g.cells.iter().all(|c| c.error.is_some()));
        assert_eq!(g.best, None);
    }

    #[test]
    fn strict_grid_rejects_other_batch_sizes() {
        assert!(check_grid(&[8], &[1e-3], true).is_err());
        assert!(check_grid(&[8], &[1e-3], false).is_ok());
        assert!(check_grid(&[], &[1e-3], false).is_err());
    }
}
