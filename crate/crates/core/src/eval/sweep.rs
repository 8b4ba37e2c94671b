//! Strategy × ratio grid: pretrain, fine-tune and evaluate every cell over
//! a set of seeds.

use std::fmt::Write as _;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fewshot::{sample_nshot, ShotSpec};
use crate::iqcore::SignalDataset;
use crate::masking::MaskStrategy;
use crate::train::{finetune, pretrain, FinetuneConfig, PretrainConfig};

use super::{evaluate, Confusion, MetricsReport};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepGrid {
    pub strategies: Vec<MaskStrategy>,
    pub ratios: Vec<f64>,
}

impl Default for SweepGrid {
    fn default() -> Self {
        Self {
            strategies: MaskStrategy::ALL.to_vec(),
            ratios: (1..=9).map(|k| f64::from(k) / 10.0).collect(),
        }
    }
}

impl SweepGrid {
    pub fn validate(&self) -> Result<()> {
        if self.strategies.is_empty() || self.ratios.is_empty() {
            return Err(Error::InvalidConfig("sweep grid must be nonempty".into()));
        }
        if let Some(r) = self.ratios.iter().find(|r| !(0.0..=1.0).contains(*r)) {
            return Err(Error::InvalidConfig(format!("sweep ratio {r} outside [0, 1]")));
        }
        Ok(())
    }

    /// Cells in strategy-major order.
    pub fn cells(&self) -> Vec<(MaskStrategy, f64)> {
        self.strategies
            .iter()
            .flat_map(|&s| self.ratios.iter().map(move |&r| (s, r)))
            .collect()
    }
}

/// Inputs shared by every cell. For each seed the same n-shot set is drawn
/// from `target_pool`, so cells are compared on identical shots.
pub struct SweepSetup<'a> {
    pub source: &'a SignalDataset,
    pub target_pool: &'a SignalDataset,
    pub test: &'a SignalDataset,
    pub n_shots: usize,
    /// Template; strategy, ratio and seed are set per run.
    pub pretrain: PretrainConfig,
    /// Template; seed is set per run.
    pub finetune: FinetuneConfig,
    pub seeds: Vec<u64>,
    pub jobs: usize,
    pub config_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub strategy: MaskStrategy,
    pub ratio: f64,
    /// Accuracy of the confusion counts pooled over seeds.
    pub accuracy: Option<f64>,
    /// Mean macro F1 over seeds.
    pub f1: Option<f64>,
    pub seed_mean: Option<f64>,
    /// Sample standard deviation of accuracy over seeds (0 for one seed).
    pub seed_std: Option<f64>,
    pub per_seed: Vec<MetricsReport>,
    pub error: Option<String>,
}

impl CellResult {
    fn failed(strategy: MaskStrategy, ratio: f64, e: &Error) -> Self {
        Self {
            strategy,
            ratio,
            accuracy: None,
            f1: None,
            seed_mean: None,
            seed_std: None,
            per_seed: Vec::new(),
            error: Some(e.to_string()),
        }
    }

    fn from_reports(strategy: MaskStrategy, ratio: f64, reports: Vec<MetricsReport>) -> Result<Self> {
        let n = reports.len() as f64;
        let accs: Vec<f64> = reports.iter().map(|r| r.accuracy).collect();
        let mean = accs.iter().sum::<f64>() / n;
        let std = if reports.len() > 1 {
            (accs.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        let n_cls = reports[0].confusion.len();
        let mut pooled = vec![vec![0u64; n_cls]; n_cls];
        for r in &reports {
            for (p, row) in pooled.iter_mut().zip(&r.confusion) {
                p.iter_mut().zip(row).for_each(|(a, b)| *a += b);
            }
        }
        Ok(Self {
            strategy,
            ratio,
            accuracy: Some(super::accuracy(&Confusion::from_rows(&pooled)?)),
            f1: Some(reports.iter().map(|r| r.macro_f1).sum::<f64>() / n),
            seed_mean: Some(mean),
            seed_std: Some(std),
            per_seed: reports,
            error: None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub cells: Vec<CellResult>,
    /// Index into `cells` of the best seed-mean accuracy.
    pub best: Option<usize>,
}

/// Index of the highest score; ties go to the lower ratio, then to the
/// earlier strategy (A < B < C < D). Cells without a score are skipped.
pub fn argmax_cell(cells: &[(MaskStrategy, f64, Option<f64>)]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &(s, r, score)) in cells.iter().enumerate() {
        let Some(score) = score.filter(|v| v.is_finite()) else { continue };
        let better = match best {
            None => true,
            Some(b) => {
                let (bs, br, bscore) = cells[b];
                let bscore = bscore.expect("scored");
                score > bscore || (score == bscore && (r < br || (r == br && s < bs)))
            }
        };
        if better {
            best = Some(i);
        }
    }
    best
}

fn run_cell(setup: &SweepSetup, strategy: MaskStrategy, ratio: f64) -> Result<CellResult> {
    let mut reports = Vec::with_capacity(setup.seeds.len());
    for &seed in &setup.seeds {
        let pre_cfg = PretrainConfig {
            mask_strategy: strategy,
            mask_ratio: ratio,
            seed,
            ..setup.pretrain.clone()
        };
        let ft_cfg = FinetuneConfig {
            seed,
            ..setup.finetune.clone()
        };
        let shots = sample_nshot(setup.target_pool, &ShotSpec::new(setup.n_shots, seed)?)?;
        let pre = pretrain(setup.source, &pre_cfg, &setup.config_hash, &mut |_| {})?;
        let ft = finetune(&pre.checkpoint, &shots, &ft_cfg, &setup.config_hash, &mut |_| {})?;
        reports.push(evaluate(&ft.checkpoint, setup.test, &setup.config_hash)?);
    }
    CellResult::from_reports(strategy, ratio, reports)
}

/// Runs every cell of `grid` on up to `setup.jobs` threads. A failing cell
/// is recorded with its error and the sweep continues. Results do not
/// depend on the number of jobs.
pub fn sweep(setup: &SweepSetup, grid: &SweepGrid) -> Result<SweepResult> {
    grid.validate()?;
    if setup.seeds.is_empty() {
        return Err(Error::InvalidConfig("sweep needs at least one seed".into()));
    }
    let cells = grid.cells();
    let results: Mutex<Vec<Option<CellResult>>> = Mutex::new(vec![None; cells.len()]);
    let next = AtomicUsize::new(0);
    std::thread::scope(|scope| {
        for _ in 0..setup.jobs.clamp(1, cells.len()) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(&(s, r)) = cells.get(i) else { break };
                let cell = run_cell(setup, s, r).unwrap_or_else(|e| {
                    log::warn!("sweep cell ({s}, {r}) failed: {e}");
                    CellResult::failed(s, r, &e)
                });
                log::info!("sweep cell ({s}, {r}): {:?}", cell.seed_mean);
                results.lock().expect("no panics while held")[i] = Some(cell);
            });
        }
    });
    let cells: Vec<CellResult> = results
        .into_inner()
        .expect("workers finished")
        .into_iter()
        .map(|c| c.expect("every cell ran"))
        .collect();
    let scored: Vec<_> = cells.iter().map(|c| (c.strategy, c.ratio, c.seed_mean)).collect();
    Ok(SweepResult {
        best: argmax_cell(&scored),
        cells,
    })
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "nan".to_string(), |x| x.to_string())
}

/// `strategy,ratio,accuracy,f1,seed_mean,seed_std`; failed cells hold `nan`.
pub fn write_heatmap_csv(result: &SweepResult) -> String {
    let mut out = String::from("strategy,ratio,accuracy,f1,seed_mean,seed_std\n");
    for c in &result.cells {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            c.strategy,
            c.ratio,
            cell(c.accuracy),
            cell(c.f1),
            cell(c.seed_mean),
            cell(c.seed_std)
        );
    }
    out
}
