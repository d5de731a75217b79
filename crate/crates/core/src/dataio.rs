//! Recording and feature-file ingestion, epoch slicing, and the synthetic
//! multi-subject feature generator.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::montage::{channel_index, Band, CHANNELS, N_BANDS, N_CHANNELS};
use crate::Scalar;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: malformed CSV: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("{0}: file is empty")]
    EmptyFile(PathBuf),
    #[error("{path}: channel set does not match the 14-channel montage ({detail})")]
    MissingChannel { path: PathBuf, detail: String },
    #[error("{path}: row {row}, column `{column}`: `{value}` is not a finite number")]
    NonNumericSample {
        path: PathBuf,
        row: usize,
        column: String,
        value: String,
    },
    #[error("{path}: row {row}: unknown label `{value}`")]
    UnknownLabel { path: PathBuf, row: usize, value: String },
    #[error("{path}: schema mismatch: {detail}")]
    SchemaMismatch { path: PathBuf, detail: String },
    #[error("recording has {len} samples, fewer than one {window}-sample window")]
    TooShort { len: usize, window: usize },
    #[error("invalid recording: {0}")]
    InvalidRecording(String),
    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),
}

pub type Result<T> = std::result::Result<T, DataError>;

/// Binary emotion class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Emotion {
    Pleasure = 0,
    Rage = 1,
}

impl Emotion {
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        match i {
            0 => Some(Emotion::Pleasure),
            1 => Some(Emotion::Rage),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Emotion::Pleasure => "pleasure",
            Emotion::Rage => "rage",
        }
    }
}

impl fmt::Display for Emotion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Emotion {
    type Err = ();

    fn from_str(s: &str) -> std::result::Result<Self, ()> {
        match s {
            "pleasure" => Ok(Emotion::Pleasure),
            "rage" => Ok(Emotion::Rage),
            _ => Err(()),
        }
    }
}

/// One subject's continuous 14-channel signal.
#[derive(Debug, Clone, PartialEq)]
pub struct RawRecording<T> {
    pub subject_id: String,
    pub sample_rate_hz: f64,
    /// `[14 × time]`, rows in montage order.
    pub samples: Array2<T>,
    /// One label per time sample.
    pub labels: Vec<Emotion>,
}

impl<T: Scalar> RawRecording<T> {
    pub fn new(
        subject_id: impl Into<String>,
        sample_rate_hz: f64,
        samples: Array2<T>,
        labels: Vec<Emotion>,
    ) -> Result<Self> {
        if !(sample_rate_hz > 0.0 && sample_rate_hz.is_finite()) {
            return Err(DataError::InvalidRecording(format!(
                "sample rate must be positive, got {sample_rate_hz}"
            )));
        }
        if samples.nrows() != N_CHANNELS {
            return Err(DataError::InvalidRecording(format!(
                "expected {N_CHANNELS} channels, got {}",
                samples.nrows()
            )));
        }
        if labels.len() != samples.ncols() {
            return Err(DataError::InvalidRecording(format!(
                "{} labels for {} samples",
                labels.len(),
                samples.ncols()
            )));
        }
        if samples.iter().any(|v| !v.is_finite()) {
            return Err(DataError::InvalidRecording("non-finite sample".into()));
        }
        Ok(Self {
            subject_id: subject_id.into(),
            sample_rate_hz,
            samples,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn duration_s(&self) -> f64 {
        self.len() as f64 / self.sample_rate_hz
    }

    /// Samples per one-second window.
    pub fn window_len(&self) -> usize {
        (self.sample_rate_hz * 1.0).round() as usize
    }
}

/// A one-second window cut from a recording.
#[derive(Debug, Clone, PartialEq)]
pub struct Epoch<T> {
    pub subject_id: String,
    pub label: Emotion,
    /// Sample offset of the window's first column in the source recording.
    pub offset: usize,
    /// `[14 × window_len]`.
    pub window: Array2<T>,
}

impl<T> Epoch<T> {
    pub fn window_len(&self) -> usize {
        self.window.ncols()
    }
}

/// One epoch's differential-entropy feature matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSample<T> {
    pub subject_id: String,
    pub label: Emotion,
    /// `[14 × 5]` DE values in nats.
    pub features: Array2<T>,
}

/// Parameters of the synthetic feature-space generator.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub n_subjects: usize,
    pub samples_per_subject_per_class: usize,
    pub class_separation: f64,
    pub subject_shift: f64,
    pub noise_scale: f64,
    pub rng_seed: u64,
}

impl SyntheticSpec {
    /// Parses flat `key=value` text with the field names as keys. Missing
    /// keys are an error; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut fields = BTreeMap::new();
        for (k, v) in crate::train::parse_key_values(text).map_err(DataError::InvalidSpec)? {
            fields.insert(k, v);
        }
        fn take<V: FromStr>(fields: &mut BTreeMap<String, String>, key: &str) -> Result<V> {
            let raw = fields
                .remove(key)
                .ok_or_else(|| DataError::InvalidSpec(format!("missing `{key}`")))?;
            raw.parse()
                .map_err(|_| DataError::InvalidSpec(format!("`{key}`: cannot parse `{raw}`")))
        }
        let spec = Self {
            n_subjects: take(&mut fields, "n_subjects")?,
            samples_per_subject_per_class: take(&mut fields, "samples_per_subject_per_class")?,
            class_separation: take(&mut fields, "class_separation")?,
            subject_shift: take(&mut fields, "subject_shift")?,
            noise_scale: take(&mut fields, "noise_scale")?,
            rng_seed: take(&mut fields, "rng_seed")?,
        };
        if let Some(key) = fields.keys().next() {
            return Err(DataError::InvalidSpec(format!("unknown key `{key}`")));
        }
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_subjects < 2 {
            return Err(DataError::InvalidSpec("n_subjects must be at least 2".into()));
        }
        if self.samples_per_subject_per_class == 0 {
            return Err(DataError::InvalidSpec(
                "samples_per_subject_per_class must be positive".into(),
            ));
        }
        if !(self.class_separation >= 0.0 && self.class_separation.is_finite()) {
            return Err(DataError::InvalidSpec("class_separation must be >= 0".into()));
        }
        if !(self.subject_shift >= 0.0 && self.subject_shift.is_finite()) {
            return Err(DataError::InvalidSpec("subject_shift must be >= 0".into()));
        }
        if !(self.noise_scale > 0.0 && self.noise_scale.is_finite()) {
            return Err(DataError::InvalidSpec("noise_scale must be > 0".into()));
        }
        Ok(())
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn csv_err(path: &Path) -> impl FnOnce(csv::Error) -> DataError + '_ {
    move |source| match source.kind() {
        csv::ErrorKind::Io(_) => match source.into_kind() {
            csv::ErrorKind::Io(e) => DataError::Io {
                path: path.to_path_buf(),
                source: e,
            },
            _ => unreachable!(),
        },
        _ => DataError::Csv {
            path: path.to_path_buf(),
            source,
        },
    }
}

fn parse_sample<T: Scalar>(path: &Path, row: usize, column: &str, raw: &str) -> Result<T> {
    raw.trim()
        .parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .and_then(T::from_f64)
        .ok_or_else(|| DataError::NonNumericSample {
            path: path.to_path_buf(),
            row,
            column: column.to_string(),
            value: raw.to_string(),
        })
}

/// Subject identifier derived from a file name (`s01.csv` → `s01`).
pub fn subject_from_path(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

/// Reads a raw CSV: 14 channel columns (any order) plus `label`; one row per
/// time sample.
pub fn load_raw<T: Scalar>(path: &Path, sample_rate_hz: f64) -> Result<RawRecording<T>> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    let headers = reader.headers().map_err(csv_err(path))?.clone();
    if headers.is_empty() {
        return Err(DataError::EmptyFile(path.to_path_buf()));
    }

    let mut label_col = None;
    let mut channel_cols = [usize::MAX; N_CHANNELS];
    let mut extra = Vec::new();
    for (col, name) in headers.iter().enumerate() {
        let name = name.trim();
        if name == "label" {
            label_col = Some(col);
        } else if let Some(ch) = channel_index(name) {
            if channel_cols[ch] != usize::MAX {
                return Err(DataError::MissingChannel {
                    path: path.to_path_buf(),
                    detail: format!("duplicate channel {name}"),
                });
            }
            channel_cols[ch] = col;
        } else {
            extra.push(name.to_string());
        }
    }
    let missing: Vec<&str> = CHANNELS
        .iter()
        .zip(channel_cols)
        .filter(|(_, c)| *c == usize::MAX)
        .map(|(n, _)| *n)
        .collect();
    if !missing.is_empty() || !extra.is_empty() {
        return Err(DataError::MissingChannel {
            path: path.to_path_buf(),
            detail: format!("missing [{}], unexpected [{}]", missing.join(","), extra.join(",")),
        });
    }
    let label_col = label_col.ok_or_else(|| DataError::SchemaMismatch {
        path: path.to_path_buf(),
        detail: "no `label` column".into(),
    })?;

    let mut columns: Vec<Vec<T>> = vec![Vec::new(); N_CHANNELS];
    let mut labels = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(csv_err(path))?;
        let row = row + 1;
        for (ch, &col) in channel_cols.iter().enumerate() {
            let raw = record.get(col).unwrap_or("");
            columns[ch].push(parse_sample(path, row, CHANNELS[ch], raw)?);
        }
        let raw_label = record.get(label_col).unwrap_or("").trim();
        let label = raw_label.parse().map_err(|_| DataError::UnknownLabel {
            path: path.to_path_buf(),
            row,
            value: raw_label.to_string(),
        })?;
        labels.push(label);
    }
    if labels.is_empty() {
        return Err(DataError::EmptyFile(path.to_path_buf()));
    }
    let n = labels.len();
    let flat: Vec<T> = columns.into_iter().flatten().collect();
    let samples = Array2::from_shape_vec((N_CHANNELS, n), flat).expect("column lengths agree");
    RawRecording::new(subject_from_path(path), sample_rate_hz, samples, labels)
}

/// Writes a recording in the raw CSV layout.
pub fn save_raw<T: Scalar>(path: &Path, rec: &RawRecording<T>) -> Result<()> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    let mut line = CHANNELS.join(",");
    line.push_str(",label\n");
    w.write_all(line.as_bytes()).map_err(io_err(path))?;
    for t in 0..rec.len() {
        line.clear();
        for ch in 0..N_CHANNELS {
            line.push_str(&format_value(rec.samples[[ch, t]]));
            line.push(',');
        }
        line.push_str(rec.labels[t].name());
        line.push('\n');
        w.write_all(line.as_bytes()).map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

/// Cuts one-second windows at offsets `0, hop, 2·hop, …` (`hop` = half a
/// window). Windows that straddle a label change are dropped.
pub fn slice_epochs<T: Scalar>(rec: &RawRecording<T>) -> Result<Vec<Epoch<T>>> {
    let window = rec.window_len();
    let n = rec.len();
    if window == 0 || n < window {
        return Err(DataError::TooShort { len: n, window });
    }
    let hop = (window / 2).max(1);

    // run_end[t] = one past the last index of the constant-label run containing t
    let mut run_end = vec![n; n];
    for t in (0..n.saturating_sub(1)).rev() {
        run_end[t] = if rec.labels[t] == rec.labels[t + 1] {
            run_end[t + 1]
        } else {
            t + 1
        };
    }

    let mut epochs = Vec::new();
    let mut offset = 0;
    while offset + window <= n {
        if run_end[offset] >= offset + window {
            epochs.push(Epoch {
                subject_id: rec.subject_id.clone(),
                label: rec.labels[offset],
                offset,
                window: rec.samples.slice(ndarray::s![.., offset..offset + window]).to_owned(),
            });
        }
        offset += hop;
    }
    Ok(epochs)
}

/// Weight of the per-band subject tilt relative to the per-channel gain.
pub const SPECTRAL_TILT: f64 = 0.25;

/// Draws DE-space feature matrices for a set of synthetic subjects.
///
/// Each sample is `base_c + offset_s + noise_scale · N(0, 1)` per entry. The
/// class pattern `base_1 - base_0` is a unit-Frobenius-norm channel-profile ×
/// band-profile matrix scaled by `class_separation`. The subject offset is a
/// per-channel constant across bands (a per-electrode gain shifts every band's
/// DE by the same log factor) plus a smaller per-band tilt shared by all
/// channels, both scaled by `subject_shift`.
pub fn generate_synthetic<T: Scalar>(spec: &SyntheticSpec) -> Result<Vec<FeatureSample<T>>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.rng_seed);
    let mut normal = move || -> f64 { rng.sample(StandardNormal) };

    let channel_profile: Vec<f64> = (0..N_CHANNELS).map(|_| 1.0 + 0.3 * normal()).collect();
    let band_profile: Vec<f64> = (0..N_BANDS).map(|_| normal()).collect();
    let mut pattern = Array2::<f64>::from_shape_fn((N_CHANNELS, N_BANDS), |(c, b)| {
        channel_profile[c] * band_profile[b]
    });
    let norm = pattern.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > 0.0 {
        pattern /= norm;
    }

    let width = spec.n_subjects.to_string().len().max(2);
    let mut out = Vec::with_capacity(spec.n_subjects * 2 * spec.samples_per_subject_per_class);
    for s in 0..spec.n_subjects {
        let subject_id = format!("s{:0width$}", s + 1, width = width);
        let gains: Vec<f64> = (0..N_CHANNELS).map(|_| spec.subject_shift * normal()).collect();
        let tilt: Vec<f64> = (0..N_BANDS)
            .map(|_| SPECTRAL_TILT * spec.subject_shift * normal())
            .collect();
        for label in [Emotion::Pleasure, Emotion::Rage] {
            let sign = if label == Emotion::Rage { 0.5 } else { -0.5 };
            for _ in 0..spec.samples_per_subject_per_class {
                let features = Array2::from_shape_fn((N_CHANNELS, N_BANDS), |(c, b)| {
                    let v = sign * spec.class_separation * pattern[[c, b]]
                        + gains[c] + tilt[b]
                        + spec.noise_scale * normal();
                    T::lit(v)
                });
                out.push(FeatureSample {
                    subject_id: subject_id.clone(),
                    label,
                    features,
                });
            }
        }
    }
    Ok(out)
}

/// Column names of the feature CSV after `subject,label`.
pub fn feature_columns() -> Vec<String> {
    CHANNELS
        .iter()
        .flat_map(|ch| Band::ALL.iter().map(move |b| format!("{ch}_{b}")))
        .collect()
}

/// Decimal text with 17 significant digits; round-trips every `f64`.
pub fn format_value<T: Scalar>(v: T) -> String {
    format!("{:.16e}", v.as_f64())
}

pub fn save_features<T: Scalar>(path: &Path, samples: &[FeatureSample<T>]) -> Result<()> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    let mut line = String::from("subject,label,");
    line.push_str(&feature_columns().join(","));
    line.push('\n');
    w.write_all(line.as_bytes()).map_err(io_err(path))?;
    for s in samples {
        if s.features.dim() != (N_CHANNELS, N_BANDS) {
            return Err(DataError::SchemaMismatch {
                path: path.to_path_buf(),
                detail: format!("sample feature shape {:?}", s.features.dim()),
            });
        }
        line.clear();
        line.push_str(&s.subject_id);
        line.push(',');
        line.push_str(s.label.name());
        for v in s.features.iter() {
            line.push(',');
            line.push_str(&format_value(*v));
        }
        line.push('\n');
        w.write_all(line.as_bytes()).map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

pub fn load_features<T: Scalar>(path: &Path) -> Result<Vec<FeatureSample<T>>> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(file);
    let headers = reader.headers().map_err(csv_err(path))?.clone();
    if headers.is_empty() {
        return Err(DataError::EmptyFile(path.to_path_buf()));
    }
    let expected: Vec<String> = ["subject".to_string(), "label".to_string()]
        .into_iter()
        .chain(feature_columns())
        .collect();
    let got: Vec<&str> = headers.iter().map(str::trim).collect();
    if got.len() != expected.len() || got.iter().zip(&expected).any(|(g, e)| g != e) {
        return Err(DataError::SchemaMismatch {
            path: path.to_path_buf(),
            detail: format!(
                "expected {} columns `subject,label,AF3_delta,…`, found {}",
                expected.len(),
                got.len()
            ),
        });
    }

    let mut out = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(csv_err(path))?;
        let row = row + 1;
        if record.len() != expected.len() {
            return Err(DataError::SchemaMismatch {
                path: path.to_path_buf(),
                detail: format!("row {row} has {} fields", record.len()),
            });
        }
        let raw_label = record[1].trim();
        let label = raw_label.parse().map_err(|_| DataError::UnknownLabel {
            path: path.to_path_buf(),
            row,
            value: raw_label.to_string(),
        })?;
        let mut values = Vec::with_capacity(N_CHANNELS * N_BANDS);
        for (k, raw) in record.iter().skip(2).enumerate() {
            values.push(parse_sample(path, row, &expected[k + 2], raw)?);
        }
        out.push(FeatureSample {
            subject_id: record[0].trim().to_string(),
            label,
            features: Array2::from_shape_vec((N_CHANNELS, N_BANDS), values).unwrap(),
        });
    }
    Ok(out)
}

/// Distinct subject ids in first-appearance order.
pub fn subjects<T>(samples: &[FeatureSample<T>]) -> Vec<String> {
    let mut seen: Vec<String> = Vec::new();
    for s in samples {
        if !seen.contains(&s.subject_id) {
            seen.push(s.subject_id.clone());
        }
    }
    seen
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
        let p = dir.join(name);
        std::fs::File::create(&p).unwrap().write_all(body.as_bytes()).unwrap();
        p
    }

    fn raw_csv(rows: usize, header: &str, cell: impl Fn(usize, usize) -> String) -> String {
        let mut s = format!("{header}\n");
        let ncols = header.split(',').count() - 1;
        for r in 0..rows {
            let cells: Vec<String> = (0..ncols).map(|c| cell(r, c)).collect();
            s.push_str(&cells.join(","));
            s.push_str(if r < rows / 2 { ",pleasure\n" } else { ",rage\n" });
        }
        s
    }

    fn header() -> String {
        format!("{},label", CHANNELS.join(","))
    }

    fn single_label(n: usize) -> RawRecording<f64> {
        let samples = Array2::from_shape_fn((N_CHANNELS, n), |(c, t)| (c * n + t) as f64);
        RawRecording::new("s", 128.0, samples, vec![Emotion::Rage; n]).unwrap()
    }

    #[test]
    fn load_raw_reads_duration() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "s07.csv", &raw_csv(1280, &header(), |r, c| format!("{}", r + c)));
        let rec: RawRecording<f64> = load_raw(&p, 128.0).unwrap();
        assert_eq!(rec.subject_id, "s07");
        assert_eq!(rec.len(), 1280);
        assert_eq!(rec.duration_s(), 10.0);
        assert_eq!(rec.samples[[3, 5]], 8.0);
        assert_eq!(rec.labels[0], Emotion::Pleasure);
        assert_eq!(rec.labels[1279], Emotion::Rage);
    }

    #[test]
    fn load_raw_reorders_columns() {
        let dir = tempfile::tempdir().unwrap();
        let mut names: Vec<&str> = CHANNELS.to_vec();
        names.reverse();
        let hdr = format!("{},label", names.join(","));
        let p = write(dir.path(), "r.csv", &raw_csv(4, &hdr, |_, c| format!("{c}")));
        let rec: RawRecording<f64> = load_raw(&p, 128.0).unwrap();
        // AF3 was the last column
        assert_eq!(rec.samples[[0, 0]], 13.0);
        assert_eq!(rec.samples[[13, 0]], 0.0);
    }

    #[test]
    fn load_raw_missing_channel() {
        let dir = tempfile::tempdir().unwrap();
        let names: Vec<&str> = CHANNELS.iter().copied().filter(|c| *c != "O2").collect();
        let hdr = format!("{},label", names.join(","));
        let p = write(dir.path(), "m.csv", &raw_csv(4, &hdr, |_, _| "1".into()));
        match load_raw::<f64>(&p, 128.0) {
            Err(DataError::MissingChannel { detail, .. }) => assert!(detail.contains("O2")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn load_raw_rejects_nan_and_text() {
        let dir = tempfile::tempdir().unwrap();
        for bad in ["NaN", "inf", "abc", ""] {
            let p = write(
                dir.path(),
                "n.csv",
                &raw_csv(4, &header(), |r, c| if r == 2 && c == 6 { bad.into() } else { "0.5".into() }),
            );
            match load_raw::<f64>(&p, 128.0) {
                Err(DataError::NonNumericSample { row, column, .. }) => {
                    assert_eq!(row, 3);
                    assert_eq!(column, "O1");
                }
                other => panic!("{bad}: {other:?}"),
            }
        }
    }

    #[test]
    fn load_raw_empty_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "e.csv", "");
        assert!(matches!(load_raw::<f64>(&p, 128.0), Err(DataError::EmptyFile(_))));
        let p = write(dir.path(), "h.csv", &format!("{}\n", header()));
        assert!(matches!(load_raw::<f64>(&p, 128.0), Err(DataError::EmptyFile(_))));
    }

    #[test]
    fn slice_counts() {
        let count = |n: usize| slice_epochs(&single_label(n)).map(|e| e.len());
        assert_eq!(count(1280).unwrap(), 19);
        assert_eq!(count(128).unwrap(), 1);
        assert!(matches!(count(127), Err(DataError::TooShort { len: 127, window: 128 })));
    }

    #[test]
    fn slice_offsets_match_enumeration() {
        for n in [128usize, 191, 192, 1000, 1280, 1343] {
            let epochs = slice_epochs(&single_label(n)).unwrap();
            let enumerated: Vec<usize> = (0..n).filter(|o| o % 64 == 0 && o + 128 <= n).collect();
            let got: Vec<usize> = epochs.iter().map(|e| e.offset).collect();
            assert_eq!(got, enumerated, "n = {n}");
            for e in &epochs {
                assert_eq!(e.window_len(), 128);
                assert_eq!(e.window[[2, 0]], (2 * n + e.offset) as f64);
            }
        }
    }

    #[test]
    fn slice_drops_straddling_windows() {
        let n = 640;
        let samples = Array2::zeros((N_CHANNELS, n));
        // label change at 300: windows starting at 192, 256 straddle it
        let labels = (0..n)
            .map(|t| if t < 300 { Emotion::Pleasure } else { Emotion::Rage })
            .collect();
        let rec = RawRecording::<f64>::new("s", 128.0, samples, labels).unwrap();
        let epochs = slice_epochs(&rec).unwrap();
        let offsets: Vec<usize> = epochs.iter().map(|e| e.offset).collect();
        assert_eq!(offsets, vec![0, 64, 128, 320, 384, 448, 512]);
        assert!(epochs[..3].iter().all(|e| e.label == Emotion::Pleasure));
        assert!(epochs[3..].iter().all(|e| e.label == Emotion::Rage));
    }

    fn spec(n_subjects: usize, per: usize) -> SyntheticSpec {
        SyntheticSpec {
            n_subjects,
            samples_per_subject_per_class: per,
            class_separation: 2.0,
            subject_shift: 1.0,
            noise_scale: 1.0,
            rng_seed: 7,
        }
    }

    #[test]
    fn synthetic_counts_and_determinism() {
        let a: Vec<FeatureSample<f64>> = generate_synthetic(&spec(3, 10)).unwrap();
        assert_eq!(a.len(), 60);
        for s in subjects(&a) {
            assert_eq!(a.iter().filter(|x| x.subject_id == s).count(), 20);
        }
        let b: Vec<FeatureSample<f64>> = generate_synthetic(&spec(3, 10)).unwrap();
        assert_eq!(a, b);
        let mut other = spec(3, 10);
        other.rng_seed = 8;
        assert_ne!(a, generate_synthetic::<f64>(&other).unwrap());
    }

    #[test]
    fn synthetic_spec_validation() {
        let mut s = spec(1, 10);
        assert!(generate_synthetic::<f64>(&s).is_err());
        s = spec(2, 10);
        s.noise_scale = 0.0;
        assert!(generate_synthetic::<f64>(&s).is_err());
    }

    #[test]
    fn synthetic_null_spec_has_equal_class_means() {
        let s = SyntheticSpec {
            class_separation: 0.0,
            subject_shift: 0.0,
            ..spec(2, 4000)
        };
        let data: Vec<FeatureSample<f64>> = generate_synthetic(&s).unwrap();
        let mean = |label| {
            let xs: Vec<_> = data.iter().filter(|x| x.label == label).collect();
            xs.iter().map(|x| x.features.sum()).sum::<f64>() / xs.len() as f64
        };
        // sum of 70 unit normals: std of the mean ≈ sqrt(70 / 8000)
        assert!((mean(Emotion::Pleasure) - mean(Emotion::Rage)).abs() < 0.5);
    }

    #[test]
    fn features_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.csv");
        let data: Vec<FeatureSample<f64>> = generate_synthetic(&spec(5, 10)).unwrap();
        save_features(&p, &data).unwrap();
        let back: Vec<FeatureSample<f64>> = load_features(&p).unwrap();
        assert_eq!(back.len(), 100);
        for (a, b) in data.iter().zip(&back) {
            assert_eq!(a.subject_id, b.subject_id);
            assert_eq!(a.label, b.label);
            for (x, y) in a.features.iter().zip(b.features.iter()) {
                assert!((x - y).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn features_schema_errors() {
        let dir = tempfile::tempdir().unwrap();
        let four_bands: Vec<String> = CHANNELS
            .iter()
            .flat_map(|c| ["delta", "theta", "alpha", "beta"].map(|b| format!("{c}_{b}")))
            .collect();
        let p = write(
            dir.path(),
            "a.csv",
            &format!("subject,label,{}\ns1,rage,{}\n", four_bands.join(","), vec!["1"; 56].join(",")),
        );
        assert!(matches!(load_features::<f64>(&p), Err(DataError::SchemaMismatch { .. })));

        let p = write(
            dir.path(),
            "b.csv",
            &format!("subject,label,{}\ns1,fear,{}\n", feature_columns().join(","), vec!["1"; 70].join(",")),
        );
        match load_features::<f64>(&p) {
            Err(DataError::UnknownLabel { value, .. }) => assert_eq!(value, "fear"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn synthetic_spec_parse() {
        let text = "n_subjects=3\nsamples_per_subject_per_class=5\nclass_separation=2\n\
                    subject_shift=1 # offsets\nnoise_scale=1\nrng_seed=7\n";
        let spec = SyntheticSpec::parse(text).unwrap();
        assert_eq!(spec.n_subjects, 3);
        assert_eq!(spec.rng_seed, 7);
        assert!(SyntheticSpec::parse("n_subjects=3").is_err());
        assert!(SyntheticSpec::parse(&format!("{text}extra=1\n")).is_err());
        assert!(SyntheticSpec::parse(&text.replace("n_subjects=3", "n_subjects=1")).is_err());
    }
}
