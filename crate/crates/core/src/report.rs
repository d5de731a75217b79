//! Plot-ready result tables: per-fold results, λ/α sweeps, loss traces and
//! the pooled confusion matrix.

use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::dataio::Emotion;
use crate::train::{EpochLoss, FoldReport, SweepRow};

pub const RESULTS_HEADER: &str = "subject,accuracy,tp,fp,fn,tn,epochs";
pub const SWEEP_HEADER: &str = "lambda,alpha,mean_acc,std_acc";
pub const LOSS_HEADER: &str = "subject,epoch,total,cls,domain,l1";

#[derive(Debug, Error)]
pub enum ReportError {
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
    #[error("{path}: {detail}")]
    Format { path: PathBuf, detail: String },
    #[error("no fold reports to summarize")]
    Empty,
}

pub type Result<T> = std::result::Result<T, ReportError>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ReportError + '_ {
    move |source| ReportError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Confusion counts pooled over folds. Rows are true classes, columns
/// predicted classes, both in label order (pleasure, rage).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConfusionTable {
    pub counts: [[usize; 2]; 2],
}

impl ConfusionTable {
    /// Row-normalized percentages. A row with no samples stays at zero.
    pub fn percentages(&self) -> [[f64; 2]; 2] {
        let mut out = [[0.0; 2]; 2];
        for (row, counts) in out.iter_mut().zip(self.counts.iter()) {
            let n: usize = counts.iter().sum();
            if n > 0 {
                for (p, &c) in row.iter_mut().zip(counts.iter()) {
                    *p = 100.0 * c as f64 / n as f64;
                }
            }
        }
        out
    }

    pub fn total(&self) -> usize {
        self.counts.iter().flatten().sum()
    }

    pub fn accuracy(&self) -> f64 {
        let n = self.total();
        if n == 0 {
            return 0.0;
        }
        (self.counts[0][0] + self.counts[1][1]) as f64 / n as f64
    }
}

impl fmt::Display for ConfusionTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let labels = [Emotion::Pleasure.name(), Emotion::Rage.name()];
        let pct = self.percentages();
        writeln!(f, "counts (rows = true, columns = predicted)")?;
        writeln!(f, "{:<10}{:>10}{:>10}", "", labels[0], labels[1])?;
        for (i, label) in labels.iter().enumerate() {
            writeln!(f, "{:<10}{:>10}{:>10}", label, self.counts[i][0], self.counts[i][1])?;
        }
        writeln!(f, "percent of true class")?;
        writeln!(f, "{:<10}{:>10}{:>10}", "", labels[0], labels[1])?;
        for (i, label) in labels.iter().enumerate() {
            writeln!(
                f,
                "{:<10}{:>10}{:>10}",
                label,
                format!("{:.2}", pct[i][0]),
                format!("{:.2}", pct[i][1])
            )?;
        }
        Ok(())
    }
}

/// Sums the per-fold confusion matrices.
pub fn emit_confusion(reports: &[FoldReport]) -> Result<ConfusionTable> {
    if reports.is_empty() {
        return Err(ReportError::Empty);
    }
    let mut counts = [[0usize; 2]; 2];
    for r in reports {
        for (row, fold_row) in counts.iter_mut().zip(r.confusion.iter()) {
            for (c, f) in row.iter_mut().zip(fold_row) {
                *c += f;
            }
        }
    }
    Ok(ConfusionTable { counts })
}

/// `(tp, fp, fn, tn)` with rage as the positive class.
pub fn rates(confusion: &[[usize; 2]; 2]) -> (usize, usize, usize, usize) {
    let p = Emotion::Rage.index();
    let n = Emotion::Pleasure.index();
    (confusion[p][p], confusion[n][p], confusion[p][n], confusion[n][n])
}

fn write_lines(path: &Path, header: &str, rows: impl Iterator<Item = String>) -> Result<()> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    writeln!(w, "{header}").map_err(io_err(path))?;
    for row in rows {
        writeln!(w, "{row}").map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

pub fn save_results(path: &Path, folds: &[FoldReport]) -> Result<()> {
    write_lines(
        path,
        RESULTS_HEADER,
        folds.iter().map(|f| {
            let (tp, fp, fn_, tn) = rates(&f.confusion);
            format!(
                "{},{},{tp},{fp},{fn_},{tn},{}",
                f.held_out_subject, f.accuracy, f.epochs_to_converge
            )
        }),
    )
}

fn read_records(path: &Path, header: &str) -> Result<Vec<csv::StringRecord>> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    let csv_err = |source| ReportError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let found = reader.headers().map_err(csv_err)?.iter().collect::<Vec<_>>().join(",");
    if found != header {
        return Err(ReportError::Format {
            path: path.to_path_buf(),
            detail: format!("expected header `{header}`, found `{found}`"),
        });
    }
    reader.records().map(|r| r.map_err(csv_err)).collect()
}

fn field<F: std::str::FromStr>(path: &Path, rec: &csv::StringRecord, i: usize, name: &str) -> Result<F> {
    rec.get(i)
        .and_then(|v| v.trim().parse().ok())
        .ok_or_else(|| ReportError::Format {
            path: path.to_path_buf(),
            detail: format!("line {}: bad `{name}` value", rec.position().map_or(0, |p| p.line())),
        })
}

/// Reads a results file back into fold reports. Loss traces are not part of
/// the results file and come back empty.
pub fn load_results(path: &Path) -> Result<Vec<FoldReport>> {
    let mut out = Vec::new();
    for rec in read_records(path, RESULTS_HEADER)? {
        let tp: usize = field(path, &rec, 2, "tp")?;
        let fp: usize = field(path, &rec, 3, "fp")?;
        let fn_: usize = field(path, &rec, 4, "fn")?;
        let tn: usize = field(path, &rec, 5, "tn")?;
        let mut confusion = [[0; 2]; 2];
        let p = Emotion::Rage.index();
        let n = Emotion::Pleasure.index();
        confusion[p][p] = tp;
        confusion[n][p] = fp;
        confusion[p][n] = fn_;
        confusion[n][n] = tn;
        out.push(FoldReport {
            held_out_subject: rec[0].to_string(),
            accuracy: field(path, &rec, 1, "accuracy")?,
            confusion,
            epochs_to_converge: field(path, &rec, 6, "epochs")?,
            loss_trace: Vec::new(),
        });
    }
    Ok(out)
}

pub fn save_sweep(path: &Path, rows: &[SweepRow]) -> Result<()> {
    write_lines(
        path,
        SWEEP_HEADER,
        rows.iter().map(|r| format!("{},{},{},{}", r.lambda, r.alpha, r.mean_accuracy, r.std_accuracy)),
    )
}

/// `(lambda, alpha, mean_acc, std_acc)` rows of a sweep file.
pub fn load_sweep(path: &Path) -> Result<Vec<[f64; 4]>> {
    read_records(path, SWEEP_HEADER)?
        .iter()
        .map(|rec| {
            Ok([
                field(path, rec, 0, "lambda")?,
                field(path, rec, 1, "alpha")?,
                field(path, rec, 2, "mean_acc")?,
                field(path, rec, 3, "std_acc")?,
            ])
        })
        .collect()
}

/// One row per fold and epoch, epochs counted from 1.
pub fn save_loss_traces(path: &Path, folds: &[FoldReport]) -> Result<()> {
    let rows = folds.iter().flat_map(|f| {
        f.loss_trace.iter().enumerate().map(move |(e, l): (usize, &EpochLoss)| {
            format!("{},{},{},{},{},{}", f.held_out_subject, e + 1, l.total, l.cls, l.domain, l.l1)
        })
    });
    write_lines(path, LOSS_HEADER, rows)
}

/// The aggregate line printed after a LOSO run.
pub fn aggregate_line(mean_acc: f64, std_acc: f64, mean_epochs: f64) -> String {
    format!("mean_acc={mean_acc:.4} std={std_acc:.4} mean_epochs={mean_epochs:.2}")
}

pub fn fold_line(f: &FoldReport) -> String {
    format!(
        "fold {} accuracy={:.4} epochs={} n={}",
        f.held_out_subject,
        f.accuracy,
        f.epochs_to_converge,
        f.total()
    )
}
