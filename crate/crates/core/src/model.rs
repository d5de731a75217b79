//! Forward pass: graph propagation, gradient reversal, node-wise domain
//! heads, entropy attention and the emotion classifier.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::Rng;
use thiserror::Error;

use crate::graph::{normalize, AdjacencyState, GraphError, PropagationMatrix};
use crate::montage::{N_BANDS, N_CHANNELS};
use crate::Scalar;

/// Clamp applied to domain probabilities before the entropy.
pub const PROB_EPS: f64 = 1e-7;

pub const N_CLASSES: usize = 2;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("{path}: {detail}")]
    Checkpoint { path: String, detail: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, ModelError>;

fn shape_err(what: &str, got: (usize, usize), want: (usize, usize)) -> ModelError {
    ModelError::ShapeMismatch(format!("{what}: got {got:?}, expected {want:?}"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Hyper {
    /// Propagation depth `L`.
    pub layers: usize,
    /// Output width `d'` of the graph convolution.
    pub hidden: usize,
}

impl Default for Hyper {
    fn default() -> Self {
        Self { layers: 2, hidden: 16 }
    }
}

/// Every trainable tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T> {
    pub adjacency: AdjacencyState<T>,
    /// `[d × d']`
    pub w: Array2<T>,
    /// `[d' × 2]`
    pub emo_weight: Array2<T>,
    pub emo_bias: Array1<T>,
    /// Row `k` is the weight vector of node `k`'s domain classifier, `[n × d']`.
    pub dom_weight: Array2<T>,
    pub dom_bias: Array1<T>,
    pub hyper: Hyper,
}

fn uniform_matrix<T: Scalar, R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize, fan_in: usize) -> Array2<T> {
    let bound = 1.0 / (fan_in as f64).sqrt();
    Array2::from_shape_simple_fn((rows, cols), || T::lit(rng.random_range(-bound..bound)))
}

impl<T: Scalar> ModelParams<T> {
    /// Weights uniform in `±1/√fan_in`, biases zero.
    pub fn init<R: Rng + ?Sized>(adjacency: AdjacencyState<T>, hyper: Hyper, rng: &mut R) -> Self {
        let h = hyper.hidden;
        let w = uniform_matrix(rng, N_BANDS, h, N_BANDS);
        let emo_weight = uniform_matrix(rng, h, N_CLASSES, h);
        let dom_weight = uniform_matrix(rng, N_CHANNELS, h, h);
        Self {
            adjacency,
            w,
            emo_weight,
            emo_bias: Array1::zeros(N_CLASSES),
            dom_weight,
            dom_bias: Array1::zeros(N_CHANNELS),
            hyper,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let h = self.hyper.hidden;
        if self.hyper.layers == 0 {
            return Err(ModelError::ShapeMismatch("layer count must be at least 1".into()));
        }
        let checks = [
            ("adjacency", self.adjacency.a.dim(), (N_CHANNELS, N_CHANNELS)),
            ("w", self.w.dim(), (N_BANDS, h)),
            ("emo_weight", self.emo_weight.dim(), (h, N_CLASSES)),
            ("emo_bias", (1, self.emo_bias.len()), (1, N_CLASSES)),
            ("dom_weight", self.dom_weight.dim(), (N_CHANNELS, h)),
            ("dom_bias", (1, self.dom_bias.len()), (1, N_CHANNELS)),
        ];
        for (name, got, want) in checks {
            if got != want {
                return Err(shape_err(name, got, want));
            }
        }
        if !self.all_finite() {
            return Err(ModelError::ShapeMismatch("non-finite parameter".into()));
        }
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.adjacency.a.iter().all(|v| v.is_finite())
            && self.w.iter().all(|v| v.is_finite())
            && self.emo_weight.iter().all(|v| v.is_finite())
            && self.emo_bias.iter().all(|v| v.is_finite())
            && self.dom_weight.iter().all(|v| v.is_finite())
            && self.dom_bias.iter().all(|v| v.is_finite())
    }
}

/// `S` together with its `L`-th power.
#[derive(Debug, Clone)]
pub struct Propagator<T> {
    pub norm: PropagationMatrix<T>,
    /// `S^l` for `l = 0..=L`.
    pub powers: Vec<Array2<T>>,
}

impl<T: Scalar> Propagator<T> {
    pub fn new(adjacency: &AdjacencyState<T>, layers: usize) -> Result<Self> {
        let norm = normalize(&adjacency.a)?;
        let mut powers = vec![Array2::eye(norm.s.nrows())];
        for l in 0..layers {
            powers.push(powers[l].dot(&norm.s));
        }
        Ok(Self { norm, powers })
    }

    pub fn s_power(&self) -> &Array2<T> {
        self.powers.last().unwrap()
    }
}

/// `Z = S^L X W`, applying `S` `layers` times.
pub fn sgc_forward<T: Scalar>(s: &Array2<T>, x: &Array2<T>, w: &Array2<T>, layers: usize) -> Result<Array2<T>> {
    let n = s.nrows();
    if s.ncols() != n {
        return Err(shape_err("S", s.dim(), (n, n)));
    }
    if x.nrows() != n {
        return Err(shape_err("X", x.dim(), (n, x.ncols())));
    }
    if w.nrows() != x.ncols() {
        return Err(shape_err("W", w.dim(), (x.ncols(), w.ncols())));
    }
    if layers == 0 {
        return Err(ModelError::ShapeMismatch("layer count must be at least 1".into()));
    }
    let mut p = x.to_owned();
    for _ in 0..layers {
        p = s.dot(&p);
    }
    Ok(p.dot(w))
}

/// Gradient-reversal layer: identity forward, `g ↦ -λ·g` backward.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grl<T> {
    pub lambda: T,
}

impl<T: Scalar> Grl<T> {
    pub fn new(lambda: T) -> Self {
        Self { lambda }
    }

    pub fn forward<A: Clone>(&self, x: &A) -> A {
        x.clone()
    }

    pub fn backward(&self, grad: &Array2<T>) -> Array2<T> {
        grad.mapv(|g| -(self.lambda * g))
    }

    pub fn backward_scalar(&self, grad: T) -> T {
        -(self.lambda * grad)
    }
}

#[inline]
pub fn sigmoid<T: Scalar>(a: T) -> T {
    if a >= T::zero() {
        T::one() / (T::one() + (-a).exp())
    } else {
        let e = a.exp();
        e / (T::one() + e)
    }
}

#[inline]
pub fn clamp_probability<T: Scalar>(p: T) -> T {
    let eps = T::lit(PROB_EPS);
    p.max(eps).min(T::one() - eps)
}

/// Pre-sigmoid output of every node's domain classifier.
pub fn domain_logits<T: Scalar>(z: &Array2<T>, dom_weight: &Array2<T>, dom_bias: &Array1<T>) -> Result<Array1<T>> {
    if z.dim() != dom_weight.dim() {
        return Err(shape_err("dom_weight", dom_weight.dim(), z.dim()));
    }
    if dom_bias.len() != z.nrows() {
        return Err(shape_err("dom_bias", (1, dom_bias.len()), (1, z.nrows())));
    }
    Ok(Array1::from_shape_fn(z.nrows(), |k| {
        z.row(k).dot(&dom_weight.row(k)) + dom_bias[k]
    }))
}

/// Source-domain probability of each node, `sigmoid(w_k·z_k + b_k)` clamped to
/// `[ε, 1-ε]`.
pub fn domain_heads<T: Scalar>(z_reversed: &Array2<T>, dom_weight: &Array2<T>, dom_bias: &Array1<T>) -> Result<Array1<T>> {
    Ok(domain_logits(z_reversed, dom_weight, dom_bias)?.mapv(|a| clamp_probability(sigmoid(a))))
}

/// Binary entropy in nats.
#[inline]
pub fn binary_entropy<T: Scalar>(p: T) -> T {
    let q = T::one() - p;
    -(p * p.ln()) - q * q.ln()
}

/// `1 + H(d̂_k)` per node.
pub fn attention_weights<T: Scalar>(dhat: ArrayView1<'_, T>) -> Array1<T> {
    dhat.mapv(|p| T::one() + binary_entropy(p))
}

/// Sum-pools node rows then applies the affine classifier. Returns
/// `(pooled, logits)`.
pub fn emotion_head<T: Scalar>(f: &Array2<T>, emo_weight: &Array2<T>, emo_bias: &Array1<T>) -> Result<(Array1<T>, Array1<T>)> {
    if emo_weight.nrows() != f.ncols() {
        return Err(shape_err("emo_weight", emo_weight.dim(), (f.ncols(), emo_bias.len())));
    }
    if emo_bias.len() != emo_weight.ncols() {
        return Err(shape_err("emo_bias", (1, emo_bias.len()), (1, emo_weight.ncols())));
    }
    let pooled = f.sum_axis(Axis(0));
    let logits = pooled.dot(emo_weight) + emo_bias;
    Ok((pooled, logits))
}

/// Every intermediate of one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace<T> {
    /// `S^L X W`, `[n × d']`.
    pub z: Array2<T>,
    pub dom_logits: Array1<T>,
    pub dhat: Array1<T>,
    pub attn: Array1<T>,
    /// Attention-scaled node features.
    pub f: Array2<T>,
    pub pooled: Array1<T>,
    pub logits: Array1<T>,
}

impl<T: Scalar> ForwardTrace<T> {
    pub fn predicted_class(&self) -> usize {
        argmax(self.logits.view())
    }
}

/// Index of the largest entry; ties (and NaN) resolve to the lower index.
pub fn argmax<T: Scalar>(v: ArrayView1<'_, T>) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate().skip(1) {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

/// Where the per-node attention weights come from.
#[derive(Debug, Clone, Copy)]
pub enum Attention<'a, T> {
    /// `1 + H(d̂)` from the domain heads.
    Entropy,
    /// All ones: no transferable attention.
    Uniform,
    /// Externally supplied weights (held constant, e.g. for differentiation).
    Fixed(&'a Array1<T>),
}

/// Forward pass against a prepared propagator.
pub fn forward_with<T: Scalar>(
    prop: &Propagator<T>,
    params: &ModelParams<T>,
    x: &Array2<T>,
    grl: Grl<T>,
    attention: Attention<'_, T>,
) -> Result<ForwardTrace<T>> {
    if x.dim() != (N_CHANNELS, params.w.nrows()) {
        return Err(shape_err("X", x.dim(), (N_CHANNELS, params.w.nrows())));
    }
    let z = prop.s_power().dot(x).dot(&params.w);
    let z_rev = grl.forward(&z);
    let dom_logits = domain_logits(&z_rev, &params.dom_weight, &params.dom_bias)?;
    let dhat = dom_logits.mapv(|a| clamp_probability(sigmoid(a)));
    let attn = match attention {
        Attention::Entropy => attention_weights(dhat.view()),
        Attention::Uniform => Array1::ones(z.nrows()),
        Attention::Fixed(a) => {
            if a.len() != z.nrows() {
                return Err(shape_err("attention", (1, a.len()), (1, z.nrows())));
            }
            a.clone()
        }
    };
    let f = &z * &attn.view().insert_axis(Axis(1));
    let (pooled, logits) = emotion_head(&f, &params.emo_weight, &params.emo_bias)?;
    Ok(ForwardTrace {
        z,
        dom_logits,
        dhat,
        attn,
        f,
        pooled,
        logits,
    })
}

/// Full forward pass with transferable attention. `lambda` only affects the
/// backward pass through the reversal layer, so it does not change the trace.
pub fn forward<T: Scalar>(params: &ModelParams<T>, x: &Array2<T>, lambda: T) -> Result<ForwardTrace<T>> {
    params.validate()?;
    let prop = Propagator::new(&params.adjacency, params.hyper.layers)?;
    forward_with(&prop, params, x, Grl::new(lambda), Attention::Entropy)
}

const CHECKPOINT_MAGIC: &str = "eeggraph-checkpoint 1";

fn write_tensor<T: Scalar, W: Write>(w: &mut W, name: &str, rows: usize, cols: usize, values: impl Iterator<Item = T>) -> std::io::Result<()> {
    writeln!(w, "{name} {rows} {cols}")?;
    let values: Vec<T> = values.collect();
    for r in 0..rows {
        let line: Vec<String> = values[r * cols..(r + 1) * cols].iter().map(|v| v.to_string()).collect();
        writeln!(w, "{}", line.join(" "))?;
    }
    Ok(())
}

/// Writes every parameter as a named, shape-prefixed block of shortest
/// round-trip decimals. Order: adjacency, w, emo_weight, emo_bias,
/// dom_weight, dom_bias.
pub fn save_checkpoint<T: Scalar>(path: &Path, params: &ModelParams<T>) -> Result<()> {
    let io = |source| ModelError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    let h = params.hyper.hidden;
    (|| -> std::io::Result<()> {
        writeln!(w, "{CHECKPOINT_MAGIC}")?;
        writeln!(w, "layers {}", params.hyper.layers)?;
        writeln!(w, "hidden {h}")?;
        write_tensor(&mut w, "adjacency", N_CHANNELS, N_CHANNELS, params.adjacency.a.iter().copied())?;
        write_tensor(&mut w, "w", params.w.nrows(), params.w.ncols(), params.w.iter().copied())?;
        write_tensor(&mut w, "emo_weight", params.emo_weight.nrows(), params.emo_weight.ncols(), params.emo_weight.iter().copied())?;
        write_tensor(&mut w, "emo_bias", 1, params.emo_bias.len(), params.emo_bias.iter().copied())?;
        write_tensor(&mut w, "dom_weight", params.dom_weight.nrows(), params.dom_weight.ncols(), params.dom_weight.iter().copied())?;
        write_tensor(&mut w, "dom_bias", 1, params.dom_bias.len(), params.dom_bias.iter().copied())?;
        w.flush()
    })()
    .map_err(io)
}

pub fn load_checkpoint<T: Scalar>(path: &Path) -> Result<ModelParams<T>> {
    let name = path.display().to_string();
    let bad = |detail: String| ModelError::Checkpoint {
        path: name.clone(),
        detail,
    };
    let file = File::open(path).map_err(|source| ModelError::Io {
        path: name.clone(),
        source,
    })?;
    let lines: Vec<String> = BufReader::new(file)
        .lines()
        .collect::<std::io::Result<_>>()
        .map_err(|source| ModelError::Io {
            path: name.clone(),
            source,
        })?;
    let mut it = lines.iter().map(|l| l.trim()).filter(|l| !l.is_empty());
    if it.next() != Some(CHECKPOINT_MAGIC) {
        return Err(bad("missing checkpoint header".into()));
    }
    let mut scalar_field = |key: &str| -> Result<usize> {
        let line = it.next().ok_or_else(|| bad(format!("missing `{key}`")))?;
        let mut parts = line.split_whitespace();
        if parts.next() != Some(key) {
            return Err(bad(format!("expected `{key}`, found `{line}`")));
        }
        parts
            .next()
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| bad(format!("bad value for `{key}`")))
    };
    let hyper = Hyper {
        layers: scalar_field("layers")?,
        hidden: scalar_field("hidden")?,
    };
    let mut read_tensor = |key: &str| -> Result<Array2<T>> {
        let line = it.next().ok_or_else(|| bad(format!("missing tensor `{key}`")))?;
        let parts: Vec<&str> = line.split_whitespace().collect();
        if parts.len() != 3 || parts[0] != key {
            return Err(bad(format!("expected tensor header `{key} rows cols`, found `{line}`")));
        }
        let rows: usize = parts[1].parse().map_err(|_| bad(format!("bad rows for `{key}`")))?;
        let cols: usize = parts[2].parse().map_err(|_| bad(format!("bad cols for `{key}`")))?;
        let mut values = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            let row = it.next().ok_or_else(|| bad(format!("`{key}` truncated at row {r}")))?;
            let before = values.len();
            for tok in row.split_whitespace() {
                values.push(tok.parse::<T>().map_err(|_| bad(format!("`{key}` row {r}: `{tok}`")))?);
            }
            if values.len() - before != cols {
                return Err(bad(format!("`{key}` row {r} has {} values", values.len() - before)));
            }
        }
        Ok(Array2::from_shape_vec((rows, cols), values).unwrap())
    };
    let adjacency = AdjacencyState::new(read_tensor("adjacency")?)?;
    let w = read_tensor("w")?;
    let emo_weight = read_tensor("emo_weight")?;
    let emo_bias = read_tensor("emo_bias")?.into_shape_with_order(N_CLASSES).map_err(|_| bad("emo_bias shape".into()))?;
    let dom_weight = read_tensor("dom_weight")?;
    let dom_bias = read_tensor("dom_bias")?.into_shape_with_order(N_CHANNELS).map_err(|_| bad("dom_bias shape".into()))?;
    let params = ModelParams {
        adjacency,
        w,
        emo_weight,
        emo_bias,
        dom_weight,
        dom_bias,
        hyper,
    };
    params.validate()?;
    Ok(params)
}
