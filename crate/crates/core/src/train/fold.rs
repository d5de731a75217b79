use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dataio::FeatureSample;
use crate::graph::{adjacency_from_features, distance_init_adjacency};
use crate::model::ModelParams;
use crate::montage::electrode_coordinates;
use crate::Scalar;

use super::objective::{backward, predict, DomainBatch, Gradients};
use super::{TrainConfig, TrainError, Variant};

/// Per-epoch means of the objective components over the epoch's steps;
/// `l1` is `‖A‖₁` at the end of the epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLoss {
    pub total: f64,
    pub cls: f64,
    pub domain: f64,
    pub l1: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FoldReport {
    pub held_out_subject: String,
    pub accuracy: f64,
    /// Rows are true classes, columns predicted classes (pleasure, rage).
    pub confusion: [[usize; 2]; 2],
    pub epochs_to_converge: usize,
    pub loss_trace: Vec<EpochLoss>,
}

impl FoldReport {
    pub fn total(&self) -> usize {
        self.confusion.iter().flatten().sum()
    }
}

fn apply_update<T: Scalar>(params: &mut ModelParams<T>, g: &Gradients<T>, lr: T) {
    params.adjacency.a.scaled_add(-lr, &g.adjacency);
    params.adjacency.symmetrize();
    params.w.scaled_add(-lr, &g.w);
    params.emo_weight.scaled_add(-lr, &g.emo_weight);
    params.emo_bias.scaled_add(-lr, &g.emo_bias);
    params.dom_weight.scaled_add(-lr, &g.dom_weight);
    params.dom_bias.scaled_add(-lr, &g.dom_bias);
}

/// Endless reshuffled stream of target indices.
struct TargetStream {
    order: Vec<usize>,
    pos: usize,
}

impl TargetStream {
    fn next_batch(&mut self, size: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
        let mut out = Vec::with_capacity(size);
        while out.len() < size.min(self.order.len()) {
            if self.pos == self.order.len() {
                self.order.shuffle(rng);
                self.pos = 0;
            }
            out.push(self.order[self.pos]);
            self.pos += 1;
        }
        out
    }
}

/// Trains on `train` (labeled source) with `test` as the unlabeled target
/// domain, then scores `test`.
pub fn train_fold<T: Scalar>(
    train: &[FeatureSample<T>],
    test: &[FeatureSample<T>],
    cfg: &TrainConfig,
) -> Result<(ModelParams<T>, FoldReport), TrainError> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(TrainError::NoTrainingData);
    }
    if test.is_empty() {
        return Err(TrainError::NoTestData);
    }
    for s in train {
        if test.iter().any(|t| t.subject_id == s.subject_id) {
            return Err(TrainError::SubjectOverlap(s.subject_id.clone()));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let adjacency = match cfg.variant {
        Variant::DistanceInitAdjacency => distance_init_adjacency(&electrode_coordinates()),
        _ => adjacency_from_features(train, cfg.bins)?,
    };
    let mut params = ModelParams::init(adjacency, cfg.hyper(), &mut rng);
    let lr = T::lit(cfg.lr);

    let mut source_order: Vec<usize> = (0..train.len()).collect();
    let mut targets = TargetStream {
        order: (0..test.len()).collect(),
        pos: test.len(),
    };
    let mut trace = Vec::new();
    let mut best = f64::INFINITY;
    let mut stale = 0;
    let mut epochs_run = 0;

    'epochs: for epoch in 1..=cfg.max_epochs {
        source_order.shuffle(&mut rng);
        let mut sums = [0.0f64; 3];
        let mut steps = 0usize;
        for chunk in source_order.chunks(cfg.batch_size) {
            let tgt = targets.next_batch(cfg.batch_size, &mut rng);
            let batch = DomainBatch::new(chunk.iter().map(|&i| &train[i]), tgt.iter().map(|&j| &test[j]));
            let (parts, grads) = backward(&params, &batch, cfg)?;
            if !(parts.total.is_finite() && grads.all_finite()) {
                // keep the last finite parameters and stop
                break 'epochs;
            }
            apply_update(&mut params, &grads, lr);
            sums[0] += parts.cls.as_f64();
            sums[1] += parts.domain.as_f64();
            sums[2] += parts.total.as_f64() - cfg.alpha * parts.l1.as_f64();
            steps += 1;
        }
        epochs_run = epoch;
        let l1 = params.adjacency.l1_norm().as_f64();
        let n = steps as f64;
        let record = EpochLoss {
            // the l1 term uses the end-of-epoch adjacency
            total: sums[2] / n + cfg.alpha * l1,
            cls: sums[0] / n,
            domain: sums[1] / n,
            l1,
        };
        trace.push(record);
        if record.total < best - cfg.min_delta {
            best = record.total;
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                break;
            }
        }
    }

    let inputs: Vec<&FeatureSample<T>> = test.iter().collect();
    let predictions = predict(&params, &inputs, cfg)?;
    let mut confusion = [[0usize; 2]; 2];
    for (s, &p) in test.iter().zip(&predictions) {
        confusion[s.label.index()][p] += 1;
    }
    let correct = confusion[0][0] + confusion[1][1];
    let report = FoldReport {
        held_out_subject: test[0].subject_id.clone(),
        accuracy: correct as f64 / test.len() as f64,
        confusion,
        epochs_to_converge: epochs_run,
        loss_trace: trace,
    };
    Ok((params, report))
}
