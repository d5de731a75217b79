use rayon::prelude::*;

use crate::dataio::{subjects, FeatureSample};
use crate::Scalar;

use super::fold::{train_fold, FoldReport};
use super::{TrainConfig, TrainError};

#[derive(Debug, Clone, PartialEq)]
pub struct LosoSummary {
    /// One report per subject, in first-appearance order of the subjects.
    pub folds: Vec<FoldReport>,
    pub mean_accuracy: f64,
    /// Population standard deviation of the fold accuracies.
    pub std_accuracy: f64,
    pub mean_epochs: f64,
}

impl LosoSummary {
    pub fn from_folds(folds: Vec<FoldReport>) -> Self {
        let n = folds.len() as f64;
        let mean = folds.iter().map(|f| f.accuracy).sum::<f64>() / n;
        let var = folds.iter().map(|f| (f.accuracy - mean).powi(2)).sum::<f64>() / n;
        let mean_epochs = folds.iter().map(|f| f.epochs_to_converge as f64).sum::<f64>() / n;
        Self {
            folds,
            mean_accuracy: mean,
            std_accuracy: var.sqrt(),
            mean_epochs,
        }
    }
}

/// Seed for the fold holding out `subject`; independent of fold order.
pub fn fold_seed(seed: u64, subject: &str) -> u64 {
    // FNV-1a over the subject id, then a splitmix64 finalizer
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in subject.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    let mut z = seed ^ h;
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Leave-one-subject-out: every subject is held out once as the unlabeled
/// target domain. Folds run on the current rayon pool.
pub fn loso<T: Scalar>(samples: &[FeatureSample<T>], cfg: &TrainConfig) -> Result<LosoSummary, TrainError> {
    cfg.validate()?;
    let ids = subjects(samples);
    if ids.len() < 2 {
        return Err(TrainError::TooFewSubjects(ids.len()));
    }
    let folds = ids
        .par_iter()
        .map(|id| {
            let (test, train): (Vec<_>, Vec<_>) = samples.iter().cloned().partition(|s| s.subject_id == *id);
            let fold_cfg = TrainConfig {
                seed: fold_seed(cfg.seed, id),
                ..cfg.clone()
            };
            train_fold(&train, &test, &fold_cfg).map(|(_, report)| report)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(LosoSummary::from_folds(folds))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepGrid {
    pub lambdas: Vec<f64>,
    pub alphas: Vec<f64>,
}

impl SweepGrid {
    /// Reads `lambda=0,0.5,1` / `alpha=0.01` lines.
    pub fn parse(text: &str) -> Result<Self, String> {
        let mut grid = SweepGrid {
            lambdas: Vec::new(),
            alphas: Vec::new(),
        };
        for (key, value) in super::parse_key_values(text)? {
            let values = value
                .split(',')
                .map(|v| v.trim().parse::<f64>().map_err(|_| format!("`{key}`: cannot parse `{v}`")))
                .collect::<Result<Vec<_>, _>>()?;
            match key.as_str() {
                "lambda" => grid.lambdas = values,
                "alpha" => grid.alphas = values,
                _ => return Err(format!("unknown key `{key}`")),
            }
        }
        if grid.lambdas.is_empty() || grid.alphas.is_empty() {
            return Err("grid needs non-empty `lambda` and `alpha` lists".into());
        }
        Ok(grid)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub lambda: f64,
    pub alpha: f64,
    pub mean_accuracy: f64,
    pub std_accuracy: f64,
    pub summary: LosoSummary,
}

/// One LOSO run per `(lambda, alpha)` grid point, lambda-major.
pub fn sweep<T: Scalar>(grid: &SweepGrid, samples: &[FeatureSample<T>], cfg: &TrainConfig) -> Result<Vec<SweepRow>, TrainError> {
    if grid.lambdas.is_empty() || grid.alphas.is_empty() {
        return Err(TrainError::InvalidConfig("empty sweep grid".into()));
    }
    let mut rows = Vec::with_capacity(grid.lambdas.len() * grid.alphas.len());
    for &lambda in &grid.lambdas {
        for &alpha in &grid.alphas {
            let point = TrainConfig {
                lambda,
                alpha,
                ..cfg.clone()
            };
            let summary = loso(samples, &point)?;
            rows.push(SweepRow {
                lambda,
                alpha,
                mean_accuracy: summary.mean_accuracy,
                std_accuracy: summary.std_accuracy,
                summary,
            });
        }
    }
    Ok(rows)
}
