//! Objective, gradients, the optimizer loop and the leave-one-subject-out
//! harness.

mod fold;
mod loso;
mod objective;

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::graph::{GraphError, DEFAULT_BINS};
use crate::model::{Hyper, ModelError};
use crate::Scalar;

pub use fold::{train_fold, EpochLoss, FoldReport};
pub use loso::{fold_seed, loso, sweep, LosoSummary, SweepGrid, SweepRow};
pub use objective::{
    backward, domain_gradients, loss, loss_with_attention, predict, source_attention, DomainBatch, Gradients,
    LossParts, Reversal,
};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("source side of the batch is empty")]
    EmptySourceBatch,
    #[error("target side of the batch is empty but lambda > 0")]
    EmptyTargetBatch,
    #[error("no training data")]
    NoTrainingData,
    #[error("no test data")]
    NoTestData,
    #[error("leave-one-subject-out needs at least 2 subjects, found {0}")]
    TooFewSubjects(usize),
    #[error("subject `{0}` appears in both the training and the test split")]
    SubjectOverlap(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// Model/training variants, including the ablation baselines.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Variant {
    /// Node-wise adversarial adaptation with transferable attention.
    #[default]
    TaRgnn,
    /// Node-wise adversarial adaptation, attention fixed at 1.
    RgnnNoAttention,
    /// Adversarial term switched off (`lambda` forced to 0).
    NoDomainAdaptation,
    /// One domain classifier on the mean node representation, no attention.
    GlobalDomainClassifier,
    /// Full model with the adjacency initialized from electrode distances.
    DistanceInitAdjacency,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::TaRgnn,
        Variant::RgnnNoAttention,
        Variant::NoDomainAdaptation,
        Variant::GlobalDomainClassifier,
        Variant::DistanceInitAdjacency,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::TaRgnn => "ta_rgnn",
            Variant::RgnnNoAttention => "rgnn_no_attention",
            Variant::NoDomainAdaptation => "no_domain_adaptation",
            Variant::GlobalDomainClassifier => "global_domain_classifier",
            Variant::DistanceInitAdjacency => "distance_init_adjacency",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.name())
    }
}

impl FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| format!("unknown variant `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum DomainMode {
    NodeWise,
    Global,
}

/// How a variant wires the shared pieces together.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Plan<T> {
    pub lambda: T,
    pub entropy_attention: bool,
    pub domain: DomainMode,
}

/// Training hyperparameters. Field names double as config-file keys.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Adversarial weight.
    pub lambda: f64,
    /// l1 penalty on the adjacency.
    pub alpha: f64,
    pub lr: f64,
    pub max_epochs: usize,
    /// Samples per side (source and target) in each step.
    pub batch_size: usize,
    /// Epochs without `min_delta` improvement of the training loss before stopping.
    pub patience: usize,
    pub min_delta: f64,
    pub seed: u64,
    pub variant: Variant,
    pub layers: usize,
    pub hidden: usize,
    /// Histogram bins for the mutual-information adjacency.
    pub bins: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            alpha: 0.01,
            lr: 0.01,
            max_epochs: 100,
            batch_size: 16,
            patience: 10,
            min_delta: 1e-4,
            seed: 0,
            variant: Variant::TaRgnn,
            layers: 2,
            hidden: 16,
            bins: DEFAULT_BINS,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::InvalidConfig(m.to_string()));
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad("lambda must be >= 0");
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return bad("alpha must be >= 0");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr must be > 0");
        }
        if self.max_epochs == 0 {
            return bad("max_epochs must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if self.patience == 0 {
            return bad("patience must be positive");
        }
        if !(self.min_delta >= 0.0 && self.min_delta.is_finite()) {
            return bad("min_delta must be >= 0");
        }
        if self.layers == 0 || self.hidden == 0 {
            return bad("layers and hidden must be positive");
        }
        if self.bins < 2 {
            return bad("bins must be at least 2");
        }
        Ok(())
    }

    pub fn hyper(&self) -> Hyper {
        Hyper {
            layers: self.layers,
            hidden: self.hidden,
        }
    }

    pub(crate) fn plan<T: Scalar>(&self) -> Plan<T> {
        let lambda = T::lit(self.lambda);
        match self.variant {
            Variant::TaRgnn | Variant::DistanceInitAdjacency => Plan {
                lambda,
                entropy_attention: true,
                domain: DomainMode::NodeWise,
            },
            Variant::RgnnNoAttention => Plan {
                lambda,
                entropy_attention: false,
                domain: DomainMode::NodeWise,
            },
            Variant::NoDomainAdaptation => Plan {
                lambda: T::zero(),
                entropy_attention: true,
                domain: DomainMode::NodeWise,
            },
            Variant::GlobalDomainClassifier => Plan {
                lambda,
                entropy_attention: false,
                domain: DomainMode::Global,
            },
        }
    }

    /// Applies one `key=value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        fn num<V: FromStr>(key: &str, value: &str) -> Result<V, String> {
            value
                .parse()
                .map_err(|_| format!("`{key}`: cannot parse `{value}`"))
        }
        match key {
            "lambda" => self.lambda = num(key, value)?,
            "alpha" => self.alpha = num(key, value)?,
            "lr" => self.lr = num(key, value)?,
            "max_epochs" | "epochs" => self.max_epochs = num(key, value)?,
            "batch_size" => self.batch_size = num(key, value)?,
            "patience" => self.patience = num(key, value)?,
            "min_delta" => self.min_delta = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "variant" => self.variant = value.parse()?,
            "layers" => self.layers = num(key, value)?,
            "hidden" => self.hidden = num(key, value)?,
            "bins" => self.bins = num(key, value)?,
            _ => return Err(format!("unknown key `{key}`")),
        }
        Ok(())
    }

    /// Parses flat `key=value` text; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self, String> {
        let mut cfg = Self::default();
        for (key, value) in parse_key_values(text)? {
            cfg.set(&key, &value)?;
        }
        Ok(cfg)
    }

    pub fn to_text(&self) -> String {
        format!(
            "lambda={}\nalpha={}\nlr={}\nmax_epochs={}\nbatch_size={}\npatience={}\nmin_delta={}\nseed={}\nvariant={}\nlayers={}\nhidden={}\nbins={}\n",
            self.lambda,
            self.alpha,
            self.lr,
            self.max_epochs,
            self.batch_size,
            self.patience,
            self.min_delta,
            self.seed,
            self.variant,
            self.layers,
            self.hidden,
            self.bins
        )
    }
}

/// Splits `key=value` lines, skipping blanks and `#` comments.
pub fn parse_key_values(text: &str) -> Result<Vec<(String, String)>, String> {
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap().trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| format!("line {}: expected key=value", n + 1))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}
