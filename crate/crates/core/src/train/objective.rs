//! The joint objective and its analytic gradients.
//!
//! `loss` evaluates the objective sample by sample through
//! [`crate::model::forward_with`]. `backward` runs a batched forward and the
//! reverse pass in one sweep; the two paths share no code beyond the
//! parameter types.

use ndarray::{Array1, Array2, Axis, Zip};

use crate::dataio::{Emotion, FeatureSample};
use crate::model::{
    binary_entropy, clamp_probability, forward_with, sigmoid, Attention, Grl, ModelParams, Propagator,
};
use crate::montage::N_CHANNELS;
use crate::Scalar;

use super::{DomainMode, Plan, TrainConfig, TrainError};

/// One optimization step's worth of data: labeled source samples and
/// unlabeled target samples. Target labels are dropped on construction.
#[derive(Debug, Clone)]
pub struct DomainBatch<'a, T> {
    source: Vec<(&'a Array2<T>, Emotion)>,
    target: Vec<&'a Array2<T>>,
}

impl<'a, T> DomainBatch<'a, T> {
    pub fn new<S, U>(source: S, target: U) -> Self
    where
        S: IntoIterator<Item = &'a FeatureSample<T>>,
        U: IntoIterator<Item = &'a FeatureSample<T>>,
    {
        Self {
            source: source.into_iter().map(|s| (&s.features, s.label)).collect(),
            target: target.into_iter().map(|s| &s.features).collect(),
        }
    }

    pub fn n_source(&self) -> usize {
        self.source.len()
    }

    pub fn n_target(&self) -> usize {
        self.target.len()
    }

    fn inputs(&self) -> impl Iterator<Item = (&'a Array2<T>, bool)> + '_ {
        self.source
            .iter()
            .map(|(x, _)| (*x, true))
            .chain(self.target.iter().map(|x| (*x, false)))
    }
}

/// Components of the objective. `total = cls + alpha·l1 - lambda·domain`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossParts<T> {
    pub total: T,
    /// Mean source cross-entropy.
    pub cls: T,
    /// Mean per-node domain binary cross-entropy over source and target.
    pub domain: T,
    /// `‖A‖₁`.
    pub l1: T,
}

/// Gradient for every tensor in [`ModelParams`].
///
/// `adjacency` is the raw entrywise gradient; the update projects it onto
/// symmetric matrices (see [`Gradients::symmetrized_adjacency`]). The domain
/// heads carry the gradient of `lambda·domain`; every parameter upstream of
/// the reversal layer carries `-lambda` times the domain-loss gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    pub adjacency: Array2<T>,
    pub w: Array2<T>,
    pub emo_weight: Array2<T>,
    pub emo_bias: Array1<T>,
    pub dom_weight: Array2<T>,
    pub dom_bias: Array1<T>,
}

impl<T: Scalar> Gradients<T> {
    pub fn zeros_like(p: &ModelParams<T>) -> Self {
        Self {
            adjacency: Array2::zeros(p.adjacency.a.dim()),
            w: Array2::zeros(p.w.dim()),
            emo_weight: Array2::zeros(p.emo_weight.dim()),
            emo_bias: Array1::zeros(p.emo_bias.len()),
            dom_weight: Array2::zeros(p.dom_weight.dim()),
            dom_bias: Array1::zeros(p.dom_bias.len()),
        }
    }

    pub fn symmetrized_adjacency(&self) -> Array2<T> {
        (&self.adjacency + &self.adjacency.t()) * T::lit(0.5)
    }

    pub fn all_finite(&self) -> bool {
        self.adjacency.iter().all(|v| v.is_finite())
            && self.w.iter().all(|v| v.is_finite())
            && self.emo_weight.iter().all(|v| v.is_finite())
            && self.emo_bias.iter().all(|v| v.is_finite())
            && self.dom_weight.iter().all(|v| v.is_finite())
            && self.dom_bias.iter().all(|v| v.is_finite())
    }
}

/// What sits between `Z` and the domain classifiers in the backward pass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Reversal<T> {
    Grl(Grl<T>),
    Identity,
}

impl<T: Scalar> Reversal<T> {
    fn apply(self, g: T) -> T {
        match self {
            Reversal::Grl(grl) => grl.backward_scalar(g),
            Reversal::Identity => g,
        }
    }
}

fn check_batch<T>(batch: &DomainBatch<'_, T>, plan: &Plan<T>) -> Result<(), TrainError>
where
    T: Scalar,
{
    if batch.n_source() == 0 {
        return Err(TrainError::EmptySourceBatch);
    }
    if batch.n_target() == 0 && plan.lambda != T::zero() {
        return Err(TrainError::EmptyTargetBatch);
    }
    Ok(())
}

fn log_sum_exp<T: Scalar>(v: impl Iterator<Item = T> + Clone) -> T {
    let m = v.clone().fold(T::neg_infinity(), T::max);
    m + v.map(|x| (x - m).exp()).fold(T::zero(), |a, b| a + b).ln()
}

fn bce<T: Scalar>(p: T, source: bool) -> T {
    if source {
        -p.ln()
    } else {
        -(T::one() - p).ln()
    }
}

fn global_probability<T: Scalar>(z: &Array2<T>, params: &ModelParams<T>) -> (T, T) {
    let mean = z.mean_axis(Axis(0)).unwrap();
    let a = mean.dot(&params.dom_weight.row(0)) + params.dom_bias[0];
    (a, clamp_probability(sigmoid(a)))
}

fn reference_loss<T: Scalar>(
    params: &ModelParams<T>,
    batch: &DomainBatch<'_, T>,
    cfg: &TrainConfig,
    frozen: Option<&[Array1<T>]>,
) -> Result<LossParts<T>, TrainError> {
    let plan = cfg.plan::<T>();
    check_batch(batch, &plan)?;
    if let Some(f) = frozen {
        if f.len() != batch.n_source() {
            return Err(TrainError::InvalidConfig(format!(
                "{} attention vectors for {} source samples",
                f.len(),
                batch.n_source()
            )));
        }
    }
    let prop = Propagator::new(&params.adjacency, params.hyper.layers)?;
    let grl = Grl::new(plan.lambda);

    let mut ce_sum = T::zero();
    let mut dom_sum = T::zero();
    for (i, (x, is_source)) in batch.inputs().enumerate() {
        let attention = match (frozen, plan.entropy_attention) {
            (Some(f), _) if is_source => Attention::Fixed(&f[i]),
            (_, true) => Attention::Entropy,
            (_, false) => Attention::Uniform,
        };
        let trace = forward_with(&prop, params, x, grl, attention)?;
        if is_source {
            let y = batch.source[i].1.index();
            ce_sum = ce_sum + log_sum_exp(trace.logits.iter().copied()) - trace.logits[y];
        }
        dom_sum = dom_sum
            + match plan.domain {
                DomainMode::NodeWise => trace.dhat.iter().fold(T::zero(), |acc, &p| acc + bce(p, is_source)),
                DomainMode::Global => bce(global_probability(&trace.z, params).1, is_source),
            };
    }
    let n_all = T::from_usize_lossy(batch.n_source() + batch.n_target());
    let per_sample = match plan.domain {
        DomainMode::NodeWise => T::from_usize_lossy(N_CHANNELS),
        DomainMode::Global => T::one(),
    };
    let cls = ce_sum / T::from_usize_lossy(batch.n_source());
    let domain = dom_sum / (n_all * per_sample);
    let l1 = params.adjacency.l1_norm();
    let alpha = T::lit(cfg.alpha);
    Ok(LossParts {
        total: cls + alpha * l1 - plan.lambda * domain,
        cls,
        domain,
        l1,
    })
}

/// Objective value, evaluated sample by sample.
pub fn loss<T: Scalar>(params: &ModelParams<T>, batch: &DomainBatch<'_, T>, cfg: &TrainConfig) -> Result<LossParts<T>, TrainError> {
    reference_loss(params, batch, cfg, None)
}

/// Objective value with the source samples' attention weights held at the
/// supplied values (one vector per source sample, batch order).
pub fn loss_with_attention<T: Scalar>(
    params: &ModelParams<T>,
    batch: &DomainBatch<'_, T>,
    cfg: &TrainConfig,
    attention: &[Array1<T>],
) -> Result<LossParts<T>, TrainError> {
    reference_loss(params, batch, cfg, Some(attention))
}

/// Attention weights the forward pass currently assigns to each source sample.
pub fn source_attention<T: Scalar>(
    params: &ModelParams<T>,
    batch: &DomainBatch<'_, T>,
    cfg: &TrainConfig,
) -> Result<Vec<Array1<T>>, TrainError> {
    let plan = cfg.plan::<T>();
    let prop = Propagator::new(&params.adjacency, params.hyper.layers)?;
    let attention = if plan.entropy_attention {
        Attention::Entropy
    } else {
        Attention::Uniform
    };
    batch
        .source
        .iter()
        .map(|(x, _)| Ok(forward_with(&prop, params, x, Grl::new(plan.lambda), attention)?.attn))
        .collect()
}

/// Batched forward state kept for the reverse pass. Sample `i` occupies
/// column block `i` of `x_cols` and row block `i` of `p_rows`/`z_rows`.
struct BatchForward<T> {
    n_source: usize,
    x_cols: Array2<T>,
    p_rows: Array2<T>,
    z_rows: Array2<T>,
    /// `∂(domain)/∂(domain logit)` for each head evaluation, already divided
    /// by the averaging constant; zero where the probability clamp is active.
    dom_logit_grad: Vec<T>,
    attn: Array2<T>,
    pooled: Array2<T>,
    logits: Array2<T>,
    parts: LossParts<T>,
}

fn batched_forward<T: Scalar>(
    params: &ModelParams<T>,
    prop: &Propagator<T>,
    batch: &DomainBatch<'_, T>,
    plan: &Plan<T>,
    alpha: T,
) -> BatchForward<T> {
    let n = N_CHANNELS;
    let d = params.w.nrows();
    let h = params.w.ncols();
    let n_s = batch.n_source();
    let n_all = n_s + batch.n_target();

    let mut x_cols = Array2::zeros((n, d * n_all));
    for (i, (x, _)) in batch.inputs().enumerate() {
        x_cols.slice_mut(ndarray::s![.., i * d..(i + 1) * d]).assign(x);
    }
    let p_cols = prop.s_power().dot(&x_cols);
    let mut p_rows = Array2::zeros((n * n_all, d));
    for i in 0..n_all {
        p_rows
            .slice_mut(ndarray::s![i * n..(i + 1) * n, ..])
            .assign(&p_cols.slice(ndarray::s![.., i * d..(i + 1) * d]));
    }
    let z_rows = p_rows.dot(&params.w);

    // domain heads
    let (heads_per_sample, scale) = match plan.domain {
        DomainMode::NodeWise => (n, T::one() / T::from_usize_lossy(n_all * n)),
        DomainMode::Global => (1, T::one() / T::from_usize_lossy(n_all)),
    };
    let mut dom_logit_grad = Vec::with_capacity(n_all * heads_per_sample);
    let mut dhat = Array2::zeros((n_all, n));
    let mut dom_sum = T::zero();
    let inv_n = T::one() / T::from_usize_lossy(n);
    for i in 0..n_all {
        let is_source = i < n_s;
        let target = if is_source { T::one() } else { T::zero() };
        let block = z_rows.slice(ndarray::s![i * n..(i + 1) * n, ..]);
        let mut push = |a: T| -> T {
            let s = sigmoid(a);
            let p = clamp_probability(s);
            dom_sum = dom_sum + bce(p, is_source);
            dom_logit_grad.push(if p == s { (p - target) * scale } else { T::zero() });
            p
        };
        match plan.domain {
            DomainMode::NodeWise => {
                for k in 0..n {
                    let a = block.row(k).dot(&params.dom_weight.row(k)) + params.dom_bias[k];
                    dhat[[i, k]] = push(a);
                }
            }
            DomainMode::Global => {
                let mean = block.sum_axis(Axis(0)) * inv_n;
                push(mean.dot(&params.dom_weight.row(0)) + params.dom_bias[0]);
            }
        }
    }

    // attention, pooling, emotion logits
    let mut attn = Array2::ones((n_s, n));
    if plan.entropy_attention {
        for i in 0..n_s {
            for k in 0..n {
                attn[[i, k]] = T::one() + binary_entropy(dhat[[i, k]]);
            }
        }
    }
    let mut pooled = Array2::zeros((n_s, h));
    for i in 0..n_s {
        let mut row = pooled.row_mut(i);
        for k in 0..n {
            row.scaled_add(attn[[i, k]], &z_rows.row(i * n + k));
        }
    }
    let logits = pooled.dot(&params.emo_weight) + &params.emo_bias;
    let mut ce_sum = T::zero();
    for (i, (_, y)) in batch.source.iter().enumerate() {
        let row = logits.row(i);
        ce_sum = ce_sum + log_sum_exp(row.iter().copied()) - row[y.index()];
    }
    let cls = ce_sum / T::from_usize_lossy(n_s);
    let domain = dom_sum * scale;
    let l1 = params.adjacency.l1_norm();
    BatchForward {
        n_source: n_s,
        x_cols,
        p_rows,
        z_rows,
        dom_logit_grad,
        attn,
        pooled,
        logits,
        parts: LossParts {
            total: cls + alpha * l1 - plan.lambda * domain,
            cls,
            domain,
            l1,
        },
    }
}

/// Which terms the reverse pass propagates.
#[derive(Clone, Copy)]
struct Terms<T> {
    emotion: bool,
    l1_alpha: T,
    reversal: Reversal<T>,
    /// Factor on the domain heads' own gradient.
    head_scale: T,
}

fn reverse<T: Scalar>(
    params: &ModelParams<T>,
    prop: &Propagator<T>,
    batch: &DomainBatch<'_, T>,
    plan: &Plan<T>,
    fw: &BatchForward<T>,
    terms: Terms<T>,
) -> Gradients<T> {
    let n = N_CHANNELS;
    let d = params.w.nrows();
    let h = params.w.ncols();
    let n_s = fw.n_source;
    let n_all = fw.x_cols.ncols() / d;
    let mut g = Gradients::zeros_like(params);
    let mut g_z = Array2::<T>::zeros((n * n_all, h));

    if terms.emotion {
        let inv_ns = T::one() / T::from_usize_lossy(n_s);
        let mut g_logits = Array2::zeros(fw.logits.dim());
        for (i, (_, y)) in batch.source.iter().enumerate() {
            let row = fw.logits.row(i);
            let lse = log_sum_exp(row.iter().copied());
            for c in 0..row.len() {
                let onehot = if c == y.index() { T::one() } else { T::zero() };
                g_logits[[i, c]] = ((row[c] - lse).exp() - onehot) * inv_ns;
            }
        }
        g.emo_weight = fw.pooled.t().dot(&g_logits);
        g.emo_bias = g_logits.sum_axis(Axis(0));
        let g_pooled = g_logits.dot(&params.emo_weight.t());
        for i in 0..n_s {
            for k in 0..n {
                g_z.row_mut(i * n + k).scaled_add(fw.attn[[i, k]], &g_pooled.row(i));
            }
        }
    }

    // domain heads and the reversal into Z
    let inv_n = T::one() / T::from_usize_lossy(n);
    for i in 0..n_all {
        match plan.domain {
            DomainMode::NodeWise => {
                for k in 0..n {
                    let ga = fw.dom_logit_grad[i * n + k];
                    if ga == T::zero() {
                        continue;
                    }
                    let zr = fw.z_rows.row(i * n + k);
                    g.dom_weight.row_mut(k).scaled_add(ga * terms.head_scale, &zr);
                    g.dom_bias[k] = g.dom_bias[k] + ga * terms.head_scale;
                    let upstream = terms.reversal.apply(ga);
                    g_z.row_mut(i * n + k).scaled_add(upstream, &params.dom_weight.row(k));
                }
            }
            DomainMode::Global => {
                let ga = fw.dom_logit_grad[i];
                if ga == T::zero() {
                    continue;
                }
                let mean = fw.z_rows.slice(ndarray::s![i * n..(i + 1) * n, ..]).sum_axis(Axis(0)) * inv_n;
                g.dom_weight.row_mut(0).scaled_add(ga * terms.head_scale, &mean);
                g.dom_bias[0] = g.dom_bias[0] + ga * terms.head_scale;
                let upstream = terms.reversal.apply(ga) * inv_n;
                for k in 0..n {
                    g_z.row_mut(i * n + k).scaled_add(upstream, &params.dom_weight.row(0));
                }
            }
        }
    }

    // Z = P W
    g.w = fw.p_rows.t().dot(&g_z);
    let g_p_rows = g_z.dot(&params.w.t());
    let mut g_p_cols = Array2::zeros((n, d * n_all));
    for i in 0..n_all {
        g_p_cols
            .slice_mut(ndarray::s![.., i * d..(i + 1) * d])
            .assign(&g_p_rows.slice(ndarray::s![i * n..(i + 1) * n, ..]));
    }
    // P = M X, M = S^L
    let g_m = g_p_cols.dot(&fw.x_cols.t());
    let layers = prop.powers.len() - 1;
    let mut g_s = Array2::<T>::zeros((n, n));
    for l in 0..layers {
        g_s = g_s + prop.powers[l].t().dot(&g_m).dot(&prop.powers[layers - 1 - l].t());
    }
    g.adjacency = normalization_backward(&params.adjacency.a, &prop.norm.inv_sqrt_degree, &g_s);
    if terms.l1_alpha != T::zero() {
        Zip::from(&mut g.adjacency)
            .and(&params.adjacency.a)
            .for_each(|ga, &a| *ga = *ga + terms.l1_alpha * sign(a));
    }
    g
}

/// Subgradient of `|a|` with value 0 at 0.
fn sign<T: Scalar>(a: T) -> T {
    if a > T::zero() {
        T::one()
    } else if a < T::zero() {
        -T::one()
    } else {
        T::zero()
    }
}

/// Pulls `∂/∂S` back through `S_ij = r_i A_ij r_j`, `r_i = (Σ_j |A_ij|)^{-1/2}`.
fn normalization_backward<T: Scalar>(a: &Array2<T>, r: &Array1<T>, g_s: &Array2<T>) -> Array2<T> {
    let n = a.nrows();
    let mut g_a = Array2::from_shape_fn((n, n), |(i, j)| g_s[[i, j]] * r[i] * r[j]);
    let mut g_r = Array1::<T>::zeros(n);
    for i in 0..n {
        for j in 0..n {
            let t = g_s[[i, j]] * a[[i, j]];
            g_r[i] = g_r[i] + t * r[j];
            g_r[j] = g_r[j] + t * r[i];
        }
    }
    let half = T::lit(0.5);
    for i in 0..n {
        let g_degree = -half * r[i] * r[i] * r[i] * g_r[i];
        for j in 0..n {
            g_a[[i, j]] = g_a[[i, j]] + g_degree * sign(a[[i, j]]);
        }
    }
    g_a
}

/// Objective value and analytic gradients for one batch.
///
/// Attention weights are treated as constants. The domain heads receive
/// `lambda·∂domain`, and every parameter upstream of the reversal layer
/// receives `∂cls + alpha·∂‖A‖₁ - lambda·∂domain`.
pub fn backward<T: Scalar>(
    params: &ModelParams<T>,
    batch: &DomainBatch<'_, T>,
    cfg: &TrainConfig,
) -> Result<(LossParts<T>, Gradients<T>), TrainError> {
    let plan = cfg.plan::<T>();
    check_batch(batch, &plan)?;
    let prop = Propagator::new(&params.adjacency, params.hyper.layers)?;
    let fw = batched_forward(params, &prop, batch, &plan, T::lit(cfg.alpha));
    let terms = Terms {
        emotion: true,
        l1_alpha: T::lit(cfg.alpha),
        reversal: Reversal::Grl(Grl::new(plan.lambda)),
        head_scale: plan.lambda,
    };
    let g = reverse(params, &prop, batch, &plan, &fw, terms);
    Ok((fw.parts, g))
}

/// Gradients of the domain loss alone. The heads receive the plain
/// `∂domain`; parameters upstream of `Z` receive it through `reversal`.
pub fn domain_gradients<T: Scalar>(
    params: &ModelParams<T>,
    batch: &DomainBatch<'_, T>,
    cfg: &TrainConfig,
    reversal: Reversal<T>,
) -> Result<Gradients<T>, TrainError> {
    let plan = cfg.plan::<T>();
    if batch.n_source() + batch.n_target() == 0 {
        return Err(TrainError::EmptySourceBatch);
    }
    let prop = Propagator::new(&params.adjacency, params.hyper.layers)?;
    let fw = batched_forward(params, &prop, batch, &plan, T::zero());
    let terms = Terms {
        emotion: false,
        l1_alpha: T::zero(),
        reversal,
        head_scale: T::one(),
    };
    Ok(reverse(params, &prop, batch, &plan, &fw, terms))
}

/// Batched logits for unlabeled inputs, used for evaluation.
pub fn predict<T: Scalar>(params: &ModelParams<T>, inputs: &[&FeatureSample<T>], cfg: &TrainConfig) -> Result<Vec<usize>, TrainError> {
    let plan = cfg.plan::<T>();
    let prop = Propagator::new(&params.adjacency, params.hyper.layers)?;
    let attention = if plan.entropy_attention {
        Attention::Entropy
    } else {
        Attention::Uniform
    };
    inputs
        .iter()
        .map(|s| Ok(forward_with(&prop, params, &s.features, Grl::new(plan.lambda), attention)?.predicted_class()))
        .collect()
}
