//! Headered delimited-text table writers. Floats use Rust's shortest
//! round-trip formatting, so identical runs produce byte-identical files;
//! writes go through a temp-then-rename so readers never see partials.

use std::fmt::Write as _;
use std::path::Path;

use tscert_core::attacks::AsrRow;
use tscert_core::certmath::SurfaceRow;
use tscert_core::evalkit::{CertificationRecord, EnsembleSizeRow, KeepRatioRow};
use tscert_core::masks::MaskKind;

use crate::error::CliError;

/// Write bytes via a temp file and rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes)
        .map_err(|e| CliError::data(format!("writing {}: {e}", tmp.display())))?;
    std::fs::rename(&tmp, path)
        .map_err(|e| CliError::data(format!("renaming into {}: {e}", path.display())))?;
    Ok(())
}

pub fn write_records(path: &Path, records: &[CertificationRecord]) -> Result<(), CliError> {
    let mut out = String::from("index,true,pred,radius,abstained,pa_lower,pb_upper\n");
    for r in records {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.index, r.true_label, r.predicted, r.radius, r.abstained, r.pa_lower, r.pb_upper
        )
        .expect("string write");
    }
    write_atomic(path, out.as_bytes())
}

/// Parse a records table written by [`write_records`].
pub fn read_records(path: &Path) -> Result<Vec<CertificationRecord>, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::data(format!("cannot read {}: {e}", path.display())))?;
    let mut lines = text.lines();
    let header = lines.next().unwrap_or_default();
    if header != "index,true,pred,radius,abstained,pa_lower,pb_upper" {
        return Err(CliError::data(format!("{}: unexpected header {header:?}", path.display())));
    }
    lines
        .enumerate()
        .map(|(i, line)| {
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 7 {
                return Err(CliError::data(format!(
                    "{}:{}: expected 7 fields",
                    path.display(),
                    i + 2
                )));
            }
            let parse_err =
                |what: &str| CliError::data(format!("{}:{}: bad {what}", path.display(), i + 2));
            Ok(CertificationRecord {
                index: fields[0].parse().map_err(|_| parse_err("index"))?,
                true_label: fields[1].parse().map_err(|_| parse_err("true"))?,
                predicted: fields[2].parse().map_err(|_| parse_err("pred"))?,
                radius: fields[3].parse().map_err(|_| parse_err("radius"))?,
                abstained: fields[4].parse().map_err(|_| parse_err("abstained"))?,
                pa_lower: fields[5].parse().map_err(|_| parse_err("pa_lower"))?,
                pb_upper: fields[6].parse().map_err(|_| parse_err("pb_upper"))?,
            })
        })
        .collect()
}

pub fn write_curve(path: &Path, curve: &[(f64, f64)]) -> Result<(), CliError> {
    let mut out = String::from("radius,certified_accuracy\n");
    for (r, acc) in curve {
        writeln!(out, "{r},{acc}").expect("string write");
    }
    write_atomic(path, out.as_bytes())
}

pub fn write_asr(path: &Path, rows: &[AsrRow]) -> Result<(), CliError> {
    let mut out = String::from("setup,epsilon,asr,n_samples\n");
    for r in rows {
        writeln!(out, "{},{},{},{}", r.setup, r.epsilon, r.asr, r.n_samples).expect("string write");
    }
    write_atomic(path, out.as_bytes())
}

pub fn write_surface(path: &Path, rows: &[SurfaceRow]) -> Result<(), CliError> {
    let mut out = String::from("alpha,p_a,l_squared\n");
    for r in rows {
        writeln!(out, "{},{},{}", r.alpha, r.p_a, r.l_squared).expect("string write");
    }
    write_atomic(path, out.as_bytes())
}

pub fn write_loss_trace(path: &Path, trace: &[f64]) -> Result<(), CliError> {
    let mut out = String::from("epoch,mean_cross_entropy\n");
    for (epoch, loss) in trace.iter().enumerate() {
        writeln!(out, "{epoch},{loss}").expect("string write");
    }
    write_atomic(path, out.as_bytes())
}

pub fn write_ensemble_size_rows(path: &Path, rows: &[EnsembleSizeRow]) -> Result<(), CliError> {
    let mut out = String::from("m,acr,certified_accuracy_at_0\n");
    for r in rows {
        writeln!(out, "{},{},{}", r.m, r.acr, r.certified_accuracy_at_0).expect("string write");
    }
    write_atomic(path, out.as_bytes())
}

fn kind_name(kind: MaskKind) -> &'static str {
    match kind {
        MaskKind::Binomial => "binomial",
        MaskKind::Continuous => "continuous",
    }
}

pub fn write_keep_ratio_rows(path: &Path, rows: &[KeepRatioRow]) -> Result<(), CliError> {
    let mut out = String::from("kind,keep_ratio,acr,certified_accuracy_at_0\n");
    for r in rows {
        writeln!(
            out,
            "{},{},{},{}",
            kind_name(r.kind),
            r.keep_ratio,
            r.acr,
            r.certified_accuracy_at_0
        )
        .expect("string write");
    }
    write_atomic(path, out.as_bytes())
}

/// One row of the report summary.
pub struct SummaryRow {
    pub dataset: String,
    pub sigma: f64,
    pub mode: String,
    pub acr: f64,
    pub certified_accuracy_at_0: f64,
    pub clean_accuracy: f64,
}

pub fn write_summary(path: &Path, rows: &[SummaryRow]) -> Result<(), CliError> {
    let mut out = String::from("dataset,sigma,mode,acr,certified_accuracy_at_0,clean_accuracy\n");
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            r.dataset, r.sigma, r.mode, r.acr, r.certified_accuracy_at_0, r.clean_accuracy
        )
        .expect("string write");
    }
    write_atomic(path, out.as_bytes())
}
