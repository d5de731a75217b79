//! Shared fixtures and the finite-difference oracle for the integration
//! suites.
#![allow(dead_code)]

use eeggraph::dataio::{Emotion, FeatureSample};
use eeggraph::graph::AdjacencyState;
use eeggraph::model::{Hyper, ModelParams};
use eeggraph::montage::{N_BANDS, N_CHANNELS};
use eeggraph::train::{loss_with_attention, source_attention, DomainBatch, Gradients, TrainConfig};
use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub const FD_STEP: f64 = 1e-5;
pub const FD_REL_TOL: f64 = 1e-4;
pub const FD_ABS_TOL: f64 = 1e-7;

pub struct Instance {
    pub params: ModelParams<f64>,
    pub source: Vec<FeatureSample<f64>>,
    pub target: Vec<FeatureSample<f64>>,
}

impl Instance {
    pub fn batch(&self) -> DomainBatch<'_, f64> {
        DomainBatch::new(&self.source, &self.target)
    }
}

fn normal(rng: &mut ChaCha8Rng, scale: f64) -> f64 {
    scale * rng.sample::<f64, _>(StandardNormal)
}

/// Random symmetric adjacency with no entry closer to zero than 0.05, so the
/// absolute values stay differentiable under a 1e-5 perturbation.
pub fn random_adjacency(rng: &mut ChaCha8Rng) -> AdjacencyState<f64> {
    let mut a = Array2::zeros((N_CHANNELS, N_CHANNELS));
    for i in 0..N_CHANNELS {
        for j in i..N_CHANNELS {
            let mag = rng.random_range(0.05..1.0);
            let v = if i == j || rng.random_bool(0.7) { mag } else { -mag };
            a[[i, j]] = v;
            a[[j, i]] = v;
        }
    }
    AdjacencyState::new(a).unwrap()
}

pub fn random_samples(rng: &mut ChaCha8Rng, subject: &str, count: usize) -> Vec<FeatureSample<f64>> {
    (0..count)
        .map(|_| FeatureSample {
            subject_id: subject.to_string(),
            label: if rng.random_bool(0.5) { Emotion::Rage } else { Emotion::Pleasure },
            features: Array2::from_shape_simple_fn((N_CHANNELS, N_BANDS), || normal(rng, 1.0)),
        })
        .collect()
}

pub fn random_instance(seed: u64, hyper: Hyper, n_source: usize, n_target: usize) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let adjacency = random_adjacency(&mut rng);
    let mut params = ModelParams::init(adjacency, hyper, &mut rng);
    params.w.mapv_inplace(|_| normal(&mut rng, 0.5));
    params.emo_weight.mapv_inplace(|_| normal(&mut rng, 0.5));
    params.emo_bias.mapv_inplace(|_| normal(&mut rng, 0.3));
    params.dom_weight.mapv_inplace(|_| normal(&mut rng, 0.5));
    params.dom_bias.mapv_inplace(|_| normal(&mut rng, 0.3));
    let source = random_samples(&mut rng, "src", n_source);
    let target = random_samples(&mut rng, "tgt", n_target);
    Instance { params, source, target }
}

/// Which scalar a parameter group's gradient differentiates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Objective {
    /// `cls + alpha·l1 - lambda·domain` with attention held fixed.
    FrozenTotal,
    /// `lambda·domain`: what the domain heads descend.
    ScaledDomain,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Group {
    Adjacency,
    W,
    EmoWeight,
    EmoBias,
    DomWeight,
    DomBias,
}

impl Group {
    pub const ALL: [Group; 6] = [
        Group::Adjacency,
        Group::W,
        Group::EmoWeight,
        Group::EmoBias,
        Group::DomWeight,
        Group::DomBias,
    ];

    pub fn objective(self) -> Objective {
        match self {
            Group::DomWeight | Group::DomBias => Objective::ScaledDomain,
            _ => Objective::FrozenTotal,
        }
    }

    pub fn values_mut(self, p: &mut ModelParams<f64>) -> &mut [f64] {
        match self {
            Group::Adjacency => p.adjacency.a.as_slice_mut().unwrap(),
            Group::W => p.w.as_slice_mut().unwrap(),
            Group::EmoWeight => p.emo_weight.as_slice_mut().unwrap(),
            Group::EmoBias => p.emo_bias.as_slice_mut().unwrap(),
            Group::DomWeight => p.dom_weight.as_slice_mut().unwrap(),
            Group::DomBias => p.dom_bias.as_slice_mut().unwrap(),
        }
    }

    pub fn grads(self, g: &Gradients<f64>) -> Vec<f64> {
        match self {
            Group::Adjacency => g.adjacency.iter().copied().collect(),
            Group::W => g.w.iter().copied().collect(),
            Group::EmoWeight => g.emo_weight.iter().copied().collect(),
            Group::EmoBias => g.emo_bias.to_vec(),
            Group::DomWeight => g.dom_weight.iter().copied().collect(),
            Group::DomBias => g.dom_bias.to_vec(),
        }
    }
}

/// Central-difference gradient of one parameter group.
pub fn finite_difference(inst: &Instance, cfg: &TrainConfig, group: Group) -> Vec<f64> {
    let batch = inst.batch();
    let frozen: Vec<Array1<f64>> = source_attention(&inst.params, &batch, cfg).unwrap();
    let eval = |p: &ModelParams<f64>| -> f64 {
        let parts = loss_with_attention(p, &batch, cfg, &frozen).unwrap();
        match group.objective() {
            Objective::FrozenTotal => parts.total,
            Objective::ScaledDomain => cfg.lambda_effective() * parts.domain,
        }
    };
    let mut p = inst.params.clone();
    let n = group.values_mut(&mut p).len();
    (0..n)
        .map(|k| {
            let orig = group.values_mut(&mut p)[k];
            group.values_mut(&mut p)[k] = orig + FD_STEP;
            let up = eval(&p);
            group.values_mut(&mut p)[k] = orig - FD_STEP;
            let down = eval(&p);
            group.values_mut(&mut p)[k] = orig;
            (up - down) / (2.0 * FD_STEP)
        })
        .collect()
}

pub fn close(analytic: f64, numeric: f64) -> bool {
    let diff = (analytic - numeric).abs();
    diff < FD_ABS_TOL || diff / analytic.abs().max(numeric.abs()) < FD_REL_TOL
}

/// Largest `(abs error, rel error)` over entries that fail [`close`], if any.
pub fn first_mismatch(analytic: &[f64], numeric: &[f64]) -> Option<(usize, f64, f64)> {
    analytic
        .iter()
        .zip(numeric)
        .enumerate()
        .find(|(_, (a, n))| !close(**a, **n))
        .map(|(k, (a, n))| (k, *a, *n))
}

trait EffectiveLambda {
    fn lambda_effective(&self) -> f64;
}

impl EffectiveLambda for TrainConfig {
    fn lambda_effective(&self) -> f64 {
        match self.variant {
            eeggraph::train::Variant::NoDomainAdaptation => 0.0,
            _ => self.lambda,
        }
    }
}
