//! Histogram mutual information, adjacency initialization, and the
//! symmetric degree normalization used by graph propagation.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use ndarray::{Array1, Array2};
use thiserror::Error;

use crate::dataio::{Epoch, FeatureSample};
use crate::features::band_limit;
use crate::montage::{global_pair_indices, CHANNELS, N_BANDS, N_CHANNELS};
use crate::Scalar;

pub const DEFAULT_BINS: usize = 16;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("series lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("need at least 2 observations, got {0}")]
    TooFewSamples(usize),
    #[error("need at least 2 histogram bins, got {0}")]
    TooFewBins(usize),
    #[error("no samples to build an adjacency from")]
    EmptyInput,
    #[error("node {0} has zero absolute degree")]
    IsolatedNode(usize),
    #[error("expected a {expected}x{expected} matrix, got {rows}x{cols}")]
    Shape { expected: usize, rows: usize, cols: usize },
    #[error("{path}: {detail}")]
    Format { path: String, detail: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, GraphError>;

/// Equal-width bin index of every observation over `[min, max]`; `None` for a
/// constant series.
fn bin_indices<T: Scalar>(x: &[T], bins: usize) -> Option<Vec<usize>> {
    let (lo, hi) = x.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
        let v = v.as_f64();
        (lo.min(v), hi.max(v))
    });
    let width = hi - lo;
    if !(width > 0.0 && width.is_finite()) {
        return None;
    }
    let scale = bins as f64 / width;
    Some(
        x.iter()
            .map(|v| (((v.as_f64() - lo) * scale) as usize).min(bins - 1))
            .collect(),
    )
}

/// Plug-in entropy (bits) of a histogram. Counts are summed in sorted order so
/// the result depends only on the multiset of counts.
fn entropy_bits(counts: &mut [u64], total: u64) -> f64 {
    counts.sort_unstable();
    let weighted: f64 = counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| c as f64 * (c as f64).log2())
        .sum();
    (total as f64).log2() - weighted / total as f64
}

/// Marginal and joint entropies `(H(X), H(Y), H(X,Y))` over pre-binned series.
fn entropies(bx: &[usize], by: &[usize], bins: usize) -> (f64, f64, f64) {
    let n = bx.len() as u64;
    let mut cx = vec![0u64; bins];
    let mut cy = vec![0u64; bins];
    let mut cxy = vec![0u64; bins * bins];
    for (&i, &j) in bx.iter().zip(by) {
        cx[i] += 1;
        cy[j] += 1;
        cxy[i * bins + j] += 1;
    }
    (
        entropy_bits(&mut cx, n),
        entropy_bits(&mut cy, n),
        entropy_bits(&mut cxy, n),
    )
}

fn mi_from_entropies(hx: f64, hy: f64, hxy: f64) -> f64 {
    (hx + hy - hxy).max(0.0)
}

fn nmi_from_entropies(hx: f64, hy: f64, hxy: f64) -> f64 {
    let denom = hx + hy;
    if denom <= 0.0 {
        0.0
    } else {
        2.0 * mi_from_entropies(hx, hy, hxy) / denom
    }
}

fn check_pair<T>(x: &[T], y: &[T], bins: usize) -> Result<()> {
    if x.len() != y.len() {
        return Err(GraphError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 2 {
        return Err(GraphError::TooFewSamples(x.len()));
    }
    if bins < 2 {
        return Err(GraphError::TooFewBins(bins));
    }
    Ok(())
}

fn pair_entropies<T: Scalar>(x: &[T], y: &[T], bins: usize) -> Result<Option<(f64, f64, f64)>> {
    check_pair(x, y, bins)?;
    Ok(match (bin_indices(x, bins), bin_indices(y, bins)) {
        (Some(bx), Some(by)) => Some(entropies(&bx, &by, bins)),
        _ => None,
    })
}

/// Histogram estimate of `I(X; Y)` in bits with `bins` equal-width bins per
/// axis. A constant series carries no information and yields 0.
pub fn mutual_information<T: Scalar>(x: &[T], y: &[T], bins: usize) -> Result<T> {
    Ok(T::lit(
        pair_entropies(x, y, bins)?.map_or(0.0, |(hx, hy, hxy)| mi_from_entropies(hx, hy, hxy)),
    ))
}

/// `2·I(X;Y) / (H(X) + H(Y))` before clamping; may overshoot 1 by rounding.
pub fn normalized_mi_unclamped<T: Scalar>(x: &[T], y: &[T], bins: usize) -> Result<T> {
    Ok(T::lit(
        pair_entropies(x, y, bins)?.map_or(0.0, |(hx, hy, hxy)| nmi_from_entropies(hx, hy, hxy)),
    ))
}

/// Normalized mutual information clamped to `[0, 1]`.
pub fn normalized_mi<T: Scalar>(x: &[T], y: &[T], bins: usize) -> Result<T> {
    normalized_mi_unclamped(x, y, bins).map(|v| v.max(T::zero()).min(T::one()))
}

/// The learnable adjacency together with its global-connection bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjacencyState<T> {
    pub a: Array2<T>,
}

impl<T: Scalar> AdjacencyState<T> {
    pub fn new(a: Array2<T>) -> Result<Self> {
        if a.dim() != (N_CHANNELS, N_CHANNELS) {
            return Err(GraphError::Shape {
                expected: N_CHANNELS,
                rows: a.nrows(),
                cols: a.ncols(),
            });
        }
        Ok(Self { a })
    }

    /// Installs self-loops of 1 and shifts each global pair by -1, starting
    /// from a symmetric connectivity matrix with entries in [0, 1].
    pub fn from_connectivity(mut conn: Array2<T>) -> Result<Self> {
        let n = conn.nrows();
        if conn.dim() != (N_CHANNELS, N_CHANNELS) {
            return Err(GraphError::Shape {
                expected: N_CHANNELS,
                rows: n,
                cols: conn.ncols(),
            });
        }
        for i in 0..n {
            conn[[i, i]] = T::one();
        }
        for (i, j) in global_pair_indices() {
            conn[[i, j]] = conn[[i, j]] - T::one();
            conn[[j, i]] = conn[[i, j]];
        }
        Ok(Self { a: conn })
    }

    pub fn global_pairs(&self) -> [(usize, usize); 4] {
        global_pair_indices()
    }

    /// `A ← (A + Aᵀ) / 2`.
    pub fn symmetrize(&mut self) {
        let t = self.a.t().to_owned();
        self.a = (&self.a + &t) * T::lit(0.5);
    }

    pub fn is_symmetric(&self) -> bool {
        let n = self.a.nrows();
        (0..n).all(|i| (0..i).all(|j| self.a[[i, j]] == self.a[[j, i]]))
    }

    pub fn l1_norm(&self) -> T {
        self.a.iter().fold(T::zero(), |acc, v| acc + v.abs())
    }
}

/// `S = D^{-1/2} A D^{-1/2}` and the degree factors it was built from.
#[derive(Debug, Clone, PartialEq)]
pub struct PropagationMatrix<T> {
    pub s: Array2<T>,
    /// `D_ii^{-1/2}` with `D_ii = Σ_j |A_ij|`.
    pub inv_sqrt_degree: Array1<T>,
}

/// Symmetric normalization with absolute-value degrees.
pub fn normalize<T: Scalar>(a: &Array2<T>) -> Result<PropagationMatrix<T>> {
    let n = a.nrows();
    let mut r = Array1::zeros(n);
    for (i, row) in a.outer_iter().enumerate() {
        let d = row.iter().fold(T::zero(), |acc, v| acc + v.abs());
        if d.is_nan() || d <= T::zero() {
            return Err(GraphError::IsolatedNode(i));
        }
        r[i] = T::one() / d.sqrt();
    }
    // fixed factor order keeps S exactly symmetric whenever A is
    let s = Array2::from_shape_fn((n, a.ncols()), |(i, j)| {
        let (lo, hi) = if i <= j { (r[i], r[j]) } else { (r[j], r[i]) };
        lo * hi * a[[i, j]]
    });
    Ok(PropagationMatrix { s, inv_sqrt_degree: r })
}

impl<T: Scalar> AdjacencyState<T> {
    pub fn propagation(&self) -> Result<PropagationMatrix<T>> {
        normalize(&self.a)
    }
}

fn mean_sorted(mut values: Vec<f64>) -> f64 {
    values.sort_by(f64::total_cmp);
    values.iter().sum::<f64>() / values.len() as f64
}

fn nmi_over_binned(binned: &[Option<Vec<usize>>], bins: usize, i: usize, j: usize) -> f64 {
    match (&binned[i], &binned[j]) {
        (Some(bx), Some(by)) => {
            let (hx, hy, hxy) = entropies(bx, by, bins);
            nmi_from_entropies(hx, hy, hxy).min(1.0)
        }
        _ => 0.0,
    }
}

/// Initial adjacency from band-limited (0.5–50 Hz) raw epochs: channel-pair
/// normalized MI within each epoch, averaged over epochs.
pub fn adjacency_from_epochs<T: Scalar>(
    epochs: &[Epoch<T>],
    sample_rate_hz: f64,
    bins: usize,
) -> Result<AdjacencyState<T>> {
    if epochs.is_empty() {
        return Err(GraphError::EmptyInput);
    }
    if bins < 2 {
        return Err(GraphError::TooFewBins(bins));
    }
    let mut per_pair: Vec<Vec<f64>> = (0..N_CHANNELS * N_CHANNELS)
        .map(|_| Vec::with_capacity(epochs.len()))
        .collect();
    for epoch in epochs {
        if epoch.window.nrows() != N_CHANNELS {
            return Err(GraphError::Shape {
                expected: N_CHANNELS,
                rows: epoch.window.nrows(),
                cols: epoch.window.ncols(),
            });
        }
        if epoch.window_len() < 2 {
            return Err(GraphError::TooFewSamples(epoch.window_len()));
        }
        let binned: Vec<Option<Vec<usize>>> = epoch
            .window
            .outer_iter()
            .map(|row| bin_indices(&band_limit(row, sample_rate_hz), bins))
            .collect();
        for i in 0..N_CHANNELS {
            for j in i + 1..N_CHANNELS {
                per_pair[i * N_CHANNELS + j].push(nmi_over_binned(&binned, bins, i, j));
            }
        }
    }
    Ok(assemble(per_pair))
}

/// Initial adjacency from DE feature rows: for each band, normalized MI
/// between two channels' values across all samples, averaged over bands.
pub fn adjacency_from_features<T: Scalar>(
    samples: &[FeatureSample<T>],
    bins: usize,
) -> Result<AdjacencyState<T>> {
    if samples.is_empty() {
        return Err(GraphError::EmptyInput);
    }
    if samples.len() < 2 {
        return Err(GraphError::TooFewSamples(samples.len()));
    }
    if bins < 2 {
        return Err(GraphError::TooFewBins(bins));
    }
    let mut per_pair: Vec<Vec<f64>> = (0..N_CHANNELS * N_CHANNELS)
        .map(|_| Vec::with_capacity(N_BANDS))
        .collect();
    for b in 0..N_BANDS {
        let binned: Vec<Option<Vec<usize>>> = (0..N_CHANNELS)
            .map(|c| {
                let series: Vec<T> = samples.iter().map(|s| s.features[[c, b]]).collect();
                bin_indices(&series, bins)
            })
            .collect();
        for i in 0..N_CHANNELS {
            for j in i + 1..N_CHANNELS {
                per_pair[i * N_CHANNELS + j].push(nmi_over_binned(&binned, bins, i, j));
            }
        }
    }
    Ok(assemble(per_pair))
}

fn assemble<T: Scalar>(per_pair: Vec<Vec<f64>>) -> AdjacencyState<T> {
    let mut conn = Array2::<T>::zeros((N_CHANNELS, N_CHANNELS));
    for i in 0..N_CHANNELS {
        for j in i + 1..N_CHANNELS {
            let v = T::lit(mean_sorted(per_pair[i * N_CHANNELS + j].clone()));
            conn[[i, j]] = v;
            conn[[j, i]] = v;
        }
    }
    AdjacencyState::from_connectivity(conn).expect("14x14 by construction")
}

/// Distance-function initialization: `A_ij = min(1, δ²/d_ij²)` with δ chosen
/// so the median off-diagonal entry is 0.5, then the global-pair shift.
pub fn distance_init_adjacency<T: Scalar>(coords: &[[f64; 3]; N_CHANNELS]) -> AdjacencyState<T> {
    let dist2 = |i: usize, j: usize| -> f64 {
        (0..3).map(|k| (coords[i][k] - coords[j][k]).powi(2)).sum()
    };
    let mut off: Vec<f64> = (0..N_CHANNELS)
        .flat_map(|i| (i + 1..N_CHANNELS).map(move |j| (i, j)))
        .map(|(i, j)| dist2(i, j))
        .collect();
    off.sort_by(f64::total_cmp);
    let m = off.len();
    let median = if m % 2 == 1 {
        off[m / 2]
    } else {
        0.5 * (off[m / 2 - 1] + off[m / 2])
    };
    let delta2 = 0.5 * median;
    let conn = Array2::from_shape_fn((N_CHANNELS, N_CHANNELS), |(i, j)| {
        let d2 = dist2(i, j);
        T::lit(if d2 <= 0.0 { 1.0 } else { (delta2 / d2).min(1.0) })
    });
    AdjacencyState::from_connectivity(conn).expect("14x14 by construction")
}

/// Writes `A` as a 14×14 CSV with a channel-name header and row labels.
pub fn save_adjacency<T: Scalar>(path: &Path, adj: &AdjacencyState<T>) -> Result<()> {
    let io = |source| GraphError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    writeln!(w, "channel,{}", CHANNELS.join(",")).map_err(io)?;
    for (i, row) in adj.a.outer_iter().enumerate() {
        let cells: Vec<String> = row.iter().map(|v| format!("{:.16e}", v.as_f64())).collect();
        writeln!(w, "{},{}", CHANNELS[i], cells.join(",")).map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn load_adjacency<T: Scalar>(path: &Path) -> Result<AdjacencyState<T>> {
    let name = path.display().to_string();
    let io = |source| GraphError::Io {
        path: name.clone(),
        source,
    };
    let fmt = |detail: String| GraphError::Format {
        path: name.clone(),
        detail,
    };
    let reader = BufReader::new(File::open(path).map_err(io)?);
    let mut lines = reader.lines();
    let header = lines.next().ok_or_else(|| fmt("empty file".into()))?.map_err(io)?;
    if header.trim() != format!("channel,{}", CHANNELS.join(",")) {
        return Err(fmt("header does not list the 14 channels in montage order".into()));
    }
    let mut a = Array2::zeros((N_CHANNELS, N_CHANNELS));
    let mut rows = 0;
    for (i, line) in lines.enumerate() {
        let line = line.map_err(io)?;
        if line.trim().is_empty() {
            continue;
        }
        if i >= N_CHANNELS {
            return Err(fmt("more than 14 rows".into()));
        }
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != N_CHANNELS + 1 || cells[0].trim() != CHANNELS[i] {
            return Err(fmt(format!("row {} malformed", i + 1)));
        }
        for (j, c) in cells[1..].iter().enumerate() {
            let v: f64 = c
                .trim()
                .parse()
                .map_err(|_| fmt(format!("row {}, column {}: `{c}`", i + 1, j + 1)))?;
            a[[i, j]] = T::lit(v);
        }
        rows += 1;
    }
    if rows != N_CHANNELS {
        return Err(fmt(format!("expected 14 rows, found {rows}")));
    }
    AdjacencyState::new(a)
}
