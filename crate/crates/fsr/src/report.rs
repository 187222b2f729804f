//! CSV output for loss logs and evaluation tables.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use fsr_core::eval::EvalReport;
use fsr_core::trainer::LossRecord;

use crate::error::{Error, Result};

pub const LOSS_HEADER: [&str; 5] = ["iteration", "epoch", "scale_y", "scale_x", "loss"];
pub const EVAL_HEADER: [&str; 4] = ["image", "scale", "psnr_db", "ssim"];

/// Row label used for per-scale averages in evaluation tables.
pub const MEAN_ROW: &str = "mean";

/// Appends one loss row per iteration, flushing as it goes so a crashed run
/// still leaves a readable log.
pub struct LossLog<W: Write> {
    out: csv::Writer<W>,
}

impl LossLog<File> {
    /// Creates the file, or appends to it without a new header when `append`.
    pub fn create(path: impl AsRef<Path>, append: bool) -> Result<Self> {
        let path = path.as_ref();
        let exists = append && path.exists();
        let file = std::fs::OpenOptions::new()
            .create(true)
            .write(true)
            .append(append)
            .truncate(!append)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        if exists {
            Ok(LossLog {
                out: csv::WriterBuilder::new().has_headers(false).from_writer(file),
            })
        } else {
            LossLog::new(file)
        }
    }
}

impl<W: Write> LossLog<W> {
    pub fn new(w: W) -> Result<Self> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(LOSS_HEADER)?;
        Ok(LossLog { out })
    }

    pub fn record(&mut self, r: &LossRecord) -> Result<()> {
        self.out.write_record([
            r.iteration.to_string(),
            r.epoch.to_string(),
            r.scale_y.to_string(),
            r.scale_x.to_string(),
            r.loss.to_string(),
        ])?;
        self.out.flush().map_err(|e| Error::Csv(e.into()))
    }
}

fn eval_rows(report: &EvalReport) -> Vec<[String; 4]> {
    let mut rows: Vec<[String; 4]> = report
        .rows
        .iter()
        .map(|r| {
            [
                r.image.clone(),
                r.scale.to_string(),
                r.psnr.to_string(),
                r.ssim.to_string(),
            ]
        })
        .collect();
    for s in report.scales() {
        if let Some((p, q)) = report.mean_at(s) {
            rows.push([MEAN_ROW.to_string(), s.to_string(), p.to_string(), q.to_string()]);
        }
    }
    rows
}

/// Per-image rows followed by one mean row per scale.
pub fn write_eval<W: Write>(w: W, report: &EvalReport) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(EVAL_HEADER)?;
    for row in eval_rows(report) {
        out.write_record(&row)?;
    }
    out.flush().map_err(|e| Error::Csv(e.into()))
}

/// Same columns as [`write_eval`] behind a leading `variant` column.
pub fn write_ablation<W: Write>(w: W, reports: &[EvalReport]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(std::iter::once("variant").chain(EVAL_HEADER))?;
    for report in reports {
        for row in eval_rows(report) {
            out.write_record(std::iter::once(report.label.as_str()).chain(row.iter().map(String::as_str)))?;
        }
    }
    out.flush().map_err(|e| Error::Csv(e.into()))
}

pub fn write_file(path: impl AsRef<Path>, f: impl FnOnce(&mut File) -> Result<()>) -> Result<()> {
    let path = path.as_ref();
    let mut file = File::create(path).map_err(|e| Error::io(path, e))?;
    f(&mut file)
}
