//! Labeled univariate time-series datasets: UCR-format ingestion and
//! synthetic desk-scale generators with controlled difficulty.
//!
//! UCR text format: one record per line, first field an integer label,
//! remaining `T` fields real values, tab- or comma-delimited. Labels are
//! remapped to contiguous `0..k` preserving their sorted original order so
//! downstream count vectors can index by label.

use rand::Rng;
use rand_distr::StandardNormal;
use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;
use thiserror::Error;

use crate::seeds;

/// Errors from loading or generating datasets.
#[derive(Debug, Error)]
pub enum DataError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}: file contains no records")]
    EmptyInput { path: String },
    #[error("{path}:{line}: row has {got} fields, expected {expected}")]
    RaggedRow {
        path: String,
        line: usize,
        expected: usize,
        got: usize,
    },
    #[error("{path}:{line}: field {field} is not numeric: {text:?}")]
    ParseField {
        path: String,
        line: usize,
        field: usize,
        text: String,
    },
    #[error("{path}:{line}: label {value} is not an integer")]
    NonIntegerLabel {
        path: String,
        line: usize,
        value: f64,
    },
    #[error("series length {got} below minimum {min}")]
    InvalidLength { got: usize, min: usize },
    #[error("invalid argument: {0}")]
    InvalidArg(String),
}

/// Which split a dataset belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Split::Train => write!(f, "train"),
            Split::Test => write!(f, "test"),
        }
    }
}

/// Field delimiter for UCR text files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Delimiter {
    Tab,
    Comma,
}

impl Delimiter {
    fn as_char(self) -> char {
        match self {
            Delimiter::Tab => '\t',
            Delimiter::Comma => ',',
        }
    }
}

/// One labeled series of fixed length `T`.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeries {
    pub values: Vec<f64>,
    pub label: usize,
}

/// A labeled dataset: every series has the same length and labels are
/// contiguous in `0..num_labels`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub series: Vec<TimeSeries>,
    pub num_labels: usize,
    pub length: usize,
    pub split: Split,
}

impl Dataset {
    /// Number of series.
    pub fn len(&self) -> usize {
        self.series.len()
    }

    pub fn is_empty(&self) -> bool {
        self.series.is_empty()
    }

    /// Check the structural invariants: constant length, labels in range,
    /// all values finite.
    pub fn validate(&self) -> Result<(), DataError> {
        for (i, s) in self.series.iter().enumerate() {
            if s.values.len() != self.length {
                return Err(DataError::InvalidArg(format!(
                    "series {i} has length {}, dataset length is {}",
                    s.values.len(),
                    self.length
                )));
            }
            if s.label >= self.num_labels {
                return Err(DataError::InvalidArg(format!(
                    "series {i} has label {} but num_labels is {}",
                    s.label, self.num_labels
                )));
            }
            if let Some(v) = s.values.iter().find(|v| !v.is_finite()) {
                return Err(DataError::InvalidArg(format!(
                    "series {i} contains non-finite value {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Load a UCR-format text file.
///
/// Labels may be written as integers or integral floats (`"1"` or
/// `"1.0"`); they are remapped to `0..k` in sorted original order.
/// Blank lines are skipped, surrounding whitespace per field is tolerated.
pub fn load_ucr_file(
    path: &Path,
    delimiter: Delimiter,
    split: Split,
) -> Result<Dataset, DataError> {
    let display = path.display().to_string();
    let text = std::fs::read_to_string(path).map_err(|source| DataError::Io {
        path: display.clone(),
        source,
    })?;

    let mut raw: Vec<(i64, Vec<f64>)> = Vec::new();
    let mut expected_fields: Option<usize> = None;

    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(delimiter.as_char()).map(str::trim).collect();
        match expected_fields {
            None => {
                if fields.len() < 2 {
                    return Err(DataError::RaggedRow {
                        path: display,
                        line: line_no,
                        expected: 2,
                        got: fields.len(),
                    });
                }
                expected_fields = Some(fields.len());
            }
            Some(n) if fields.len() != n => {
                return Err(DataError::RaggedRow {
                    path: display,
                    line: line_no,
                    expected: n,
                    got: fields.len(),
                });
            }
            Some(_) => {}
        }

        let parse = |field: usize, text: &str| -> Result<f64, DataError> {
            text.parse::<f64>().map_err(|_| DataError::ParseField {
                path: display.clone(),
                line: line_no,
                field,
                text: text.to_string(),
            })
        };

        let label_val = parse(1, fields[0])?;
        if label_val.fract() != 0.0 || !label_val.is_finite() {
            return Err(DataError::NonIntegerLabel {
                path: display,
                line: line_no,
                value: label_val,
            });
        }
        let mut values = Vec::with_capacity(fields.len() - 1);
        for (j, f) in fields[1..].iter().enumerate() {
            values.push(parse(j + 2, f)?);
        }
        raw.push((label_val as i64, values));
    }

    if raw.is_empty() {
        return Err(DataError::EmptyInput { path: display });
    }

    let labels: BTreeSet<i64> = raw.iter().map(|(l, _)| *l).collect();
    let remap: Vec<i64> = labels.into_iter().collect();
    let length = raw[0].1.len();
    let series = raw
        .into_iter()
        .map(|(l, values)| TimeSeries {
            values,
            label: remap.binary_search(&l).expect("label present"),
        })
        .collect();

    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "ucr".to_string());

    Ok(Dataset {
        name,
        series,
        num_labels: remap.len(),
        length,
        split,
    })
}

/// Generate the cylinder–bell–funnel dataset: three shapes of amplitude
/// `6 + η` on a random window, plus unit Gaussian noise.
///
/// The window start is uniform on `[T/8, T/4]` and its width uniform on
/// `[T/4, 3T/4]`. Cylinder is a plateau, bell a rising ramp, funnel a
/// falling ramp. Deterministic given `seed`.
pub fn generate_cbf(
    n_per_label: usize,
    length: usize,
    seed: u64,
    split: Split,
) -> Result<Dataset, DataError> {
    const MIN_LEN: usize = 64;
    if length < MIN_LEN {
        return Err(DataError::InvalidLength {
            got: length,
            min: MIN_LEN,
        });
    }
    let t = length as f64;
    let mut series = Vec::with_capacity(3 * n_per_label);
    for label in 0..3usize {
        for i in 0..n_per_label {
            let mut rng = seeds::rng_from(seeds::derive2(seed, label as u64, i as u64));
            let eta: f64 = rng.sample(StandardNormal);
            let amplitude = 6.0 + eta;
            let a = rng.gen_range(t / 8.0..t / 4.0);
            let width = rng.gen_range(t / 4.0..3.0 * t / 4.0);
            let b = (a + width).min(t - 1.0);
            let mut values = Vec::with_capacity(length);
            for ti in 0..length {
                let x = ti as f64;
                let shape = if x >= a && x <= b {
                    match label {
                        0 => 1.0,
                        1 => (x - a) / (b - a),
                        _ => (b - x) / (b - a),
                    }
                } else {
                    0.0
                };
                let noise: f64 = rng.sample(StandardNormal);
                values.push(amplitude * shape + noise);
            }
            series.push(TimeSeries { values, label });
        }
    }
    Ok(Dataset {
        name: "cbf".to_string(),
        series,
        num_labels: 3,
        length,
        split,
    })
}

/// Gaussian-bump prototypes scaled so any two are exactly `sep` apart
/// in ℓ2: one shared Gaussian envelope centered mid-series carrying a
/// class-specific oscillation frequency. Same-shape bumps at shifted
/// positions would be invisible to translation-invariant classifiers, so
/// classes differ in local pattern instead; Gram–Schmidt makes the set
/// exactly orthonormal before scaling by `sep / √2`.
pub fn overlap_prototypes(num_labels: usize, length: usize, sep: f64) -> Vec<Vec<f64>> {
    if sep == 0.0 || length == 0 {
        return vec![vec![0.0; length]; num_labels];
    }
    let t_mid = (length as f64 - 1.0) / 2.0;
    let env_sigma = length as f64 / 6.0;
    let mut protos: Vec<Vec<f64>> = (0..num_labels)
        .map(|c| {
            let cycles = 2.0 * (c as f64 + 1.0);
            (0..length)
                .map(|ti| {
                    let z = (ti as f64 - t_mid) / env_sigma;
                    let envelope = (-0.5 * z * z).exp();
                    let phase = std::f64::consts::TAU * cycles * ti as f64 / length as f64;
                    envelope * phase.cos()
                })
                .collect()
        })
        .collect();
    // Gram–Schmidt, then scale to pairwise distance sep.
    for c in 0..num_labels {
        for prev in 0..c {
            let dot: f64 = protos[c].iter().zip(&protos[prev]).map(|(a, b)| a * b).sum();
            let prev_row = protos[prev].clone();
            for (v, p) in protos[c].iter_mut().zip(&prev_row) {
                *v -= dot * p;
            }
        }
        let norm = protos[c].iter().map(|v| v * v).sum::<f64>().sqrt();
        let scale = if norm > 0.0 { 1.0 / norm } else { 0.0 };
        for v in protos[c].iter_mut() {
            *v *= scale;
        }
    }
    let amplitude = sep / std::f64::consts::SQRT_2;
    for proto in protos.iter_mut() {
        for v in proto.iter_mut() {
            *v *= amplitude;
        }
    }
    protos
}

/// Generate a k-label dataset of Gaussian-bump prototypes plus unit noise.
///
/// Prototypes are pairwise `sep` apart in ℓ2, so smaller `sep` gives a
/// harder dataset; `sep = 0` collapses all labels onto pure noise.
pub fn generate_overlap(
    n_per_label: usize,
    length: usize,
    num_labels: usize,
    sep: f64,
    seed: u64,
    split: Split,
) -> Result<Dataset, DataError> {
    if sep < 0.0 {
        return Err(DataError::InvalidArg(format!("sep must be >= 0, got {sep}")));
    }
    if num_labels < 2 {
        return Err(DataError::InvalidArg(format!(
            "need at least 2 labels, got {num_labels}"
        )));
    }
    // Below ~8 samples per oscillation cycle the prototype set degenerates.
    if length < 8 * num_labels {
        return Err(DataError::InvalidLength {
            got: length,
            min: 8 * num_labels,
        });
    }
    let prototypes = overlap_prototypes(num_labels, length, sep);
    let mut series = Vec::with_capacity(num_labels * n_per_label);
    for (label, proto) in prototypes.iter().enumerate() {
        for i in 0..n_per_label {
            let mut rng = seeds::rng_from(seeds::derive2(seed, label as u64, i as u64));
            let values = proto
                .iter()
                .map(|&p| p + rng.sample::<f64, _>(StandardNormal))
                .collect();
            series.push(TimeSeries { values, label });
        }
    }
    Ok(Dataset {
        name: "overlap".to_string(),
        series,
        num_labels,
        length,
        split,
    })
}

/// Shift/scale each series independently to mean 0, standard deviation 1
/// (population convention). Constant series map to all-zeros.
pub fn znormalize(dataset: &Dataset) -> Dataset {
    let series = dataset
        .series
        .iter()
        .map(|s| {
            let n = s.values.len() as f64;
            let min = s.values.iter().cloned().fold(f64::INFINITY, f64::min);
            let max = s.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            if min == max {
                return TimeSeries {
                    values: vec![0.0; s.values.len()],
                    label: s.label,
                };
            }
            let mean = s.values.iter().sum::<f64>() / n;
            let var = s.values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            let std = var.sqrt();
            TimeSeries {
                values: s.values.iter().map(|v| (v - mean) / std).collect(),
                label: s.label,
            }
        })
        .collect();
    Dataset {
        name: dataset.name.clone(),
        series,
        num_labels: dataset.num_labels,
        length: dataset.length,
        split: dataset.split,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::io::Write;

    fn write_temp(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn load_two_line_comma_file() {
        let f = write_temp("1,0.0,1.0\n2,1.0,0.0\n");
        let d = load_ucr_file(f.path(), Delimiter::Comma, Split::Train).unwrap();
        assert_eq!(d.num_labels, 2);
        assert_eq!(d.length, 2);
        assert_eq!(d.len(), 2);
        assert_eq!(d.series[0].label, 0);
        assert_eq!(d.series[1].label, 1);
        assert_eq!(d.series[0].values, vec![0.0, 1.0]);
        d.validate().unwrap();
    }

    #[test]
    fn ragged_rows_name_the_line() {
        let f = write_temp("1,0.0,1.0\n2,1.0,0.0,9.0\n");
        let err = load_ucr_file(f.path(), Delimiter::Comma, Split::Train).unwrap_err();
        match err {
            DataError::RaggedRow { line, expected, got, .. } => {
                assert_eq!(line, 2);
                assert_eq!(expected, 3);
                assert_eq!(got, 4);
            }
            other => panic!("expected RaggedRow, got {other:?}"),
        }
    }

    #[test]
    fn non_numeric_field_is_a_parse_error() {
        let f = write_temp("1,0.0,oops\n");
        let err = load_ucr_file(f.path(), Delimiter::Comma, Split::Train).unwrap_err();
        assert!(matches!(err, DataError::ParseField { line: 1, field: 3, .. }));
    }

    #[test]
    fn empty_file_is_an_error() {
        let f = write_temp("\n\n");
        let err = load_ucr_file(f.path(), Delimiter::Comma, Split::Train).unwrap_err();
        assert!(matches!(err, DataError::EmptyInput { .. }));
    }

    #[test]
    fn labels_remap_to_contiguous_sorted_order() {
        let f = write_temp("7\t0.0\t1.0\n1\t1.0\t0.0\n3\t0.5\t0.5\n7\t0.1\t0.2\n");
        let d = load_ucr_file(f.path(), Delimiter::Tab, Split::Test).unwrap();
        assert_eq!(d.num_labels, 3);
        let labels: Vec<usize> = d.series.iter().map(|s| s.label).collect();
        assert_eq!(labels, vec![2, 0, 1, 2]);
    }

    #[test]
    fn float_formatted_labels_are_accepted() {
        let f = write_temp("1.0000000e+00,0.0,1.0\n2.0,1.0,0.0\n");
        let d = load_ucr_file(f.path(), Delimiter::Comma, Split::Train).unwrap();
        assert_eq!(d.num_labels, 2);
    }

    #[test]
    fn cbf_shape_contract() {
        let d = generate_cbf(10, 128, 7, Split::Train).unwrap();
        assert_eq!(d.len(), 30);
        assert_eq!(d.length, 128);
        for label in 0..3 {
            assert_eq!(d.series.iter().filter(|s| s.label == label).count(), 10);
        }
        d.validate().unwrap();
    }

    #[test]
    fn cbf_is_deterministic_in_seed() {
        let a = generate_cbf(10, 128, 7, Split::Train).unwrap();
        let b = generate_cbf(10, 128, 7, Split::Train).unwrap();
        assert_eq!(a, b);
        let c = generate_cbf(10, 128, 8, Split::Train).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn cbf_rejects_short_series() {
        let err = generate_cbf(10, 32, 7, Split::Train).unwrap_err();
        assert!(matches!(err, DataError::InvalidLength { got: 32, min: 64 }));
    }

    #[test]
    fn overlap_shape_contract() {
        let d = generate_overlap(50, 60, 3, 4.0, 1, Split::Train).unwrap();
        assert_eq!(d.len(), 150);
        assert_eq!(d.length, 60);
        assert_eq!(d.num_labels, 3);
        d.validate().unwrap();
    }

    #[test]
    fn overlap_sep_zero_has_identical_prototypes() {
        let protos = overlap_prototypes(3, 60, 0.0);
        assert!(protos.iter().all(|p| p.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn overlap_prototypes_are_sep_apart() {
        for &sep in &[0.5, 2.0, 20.0] {
            let protos = overlap_prototypes(4, 80, sep);
            for i in 0..4 {
                for j in (i + 1)..4 {
                    let d2: f64 = protos[i]
                        .iter()
                        .zip(&protos[j])
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum();
                    assert!((d2.sqrt() - sep).abs() < 1e-9, "pair ({i},{j}) at sep {sep}");
                }
            }
        }
    }

    #[test]
    fn overlap_large_sep_nearest_prototype_accuracy() {
        // Nearest-prototype oracle on 1000 generated samples at sep = 20.
        let d = generate_overlap(250, 60, 4, 20.0, 99, Split::Test).unwrap();
        assert_eq!(d.len(), 1000);
        let protos = overlap_prototypes(4, 60, 20.0);
        let mut correct = 0usize;
        for s in &d.series {
            let best = protos
                .iter()
                .enumerate()
                .map(|(c, p)| {
                    let d2: f64 = p
                        .iter()
                        .zip(&s.values)
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum();
                    (c, d2)
                })
                .min_by(|a, b| a.1.total_cmp(&b.1))
                .unwrap()
                .0;
            if best == s.label {
                correct += 1;
            }
        }
        assert!(correct as f64 / 1000.0 >= 0.99, "accuracy {}", correct as f64 / 1000.0);
    }

    #[test]
    fn znormalize_closed_form() {
        let d = Dataset {
            name: "t".into(),
            series: vec![TimeSeries { values: vec![1.0, 2.0, 3.0], label: 0 }],
            num_labels: 1,
            length: 3,
            split: Split::Train,
        };
        let z = znormalize(&d);
        let want = [-1.224744871391589, 0.0, 1.224744871391589];
        for (got, want) in z.series[0].values.iter().zip(want) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn znormalize_constant_series_to_zeros() {
        let d = Dataset {
            name: "t".into(),
            series: vec![TimeSeries { values: vec![5.0, 5.0, 5.0], label: 0 }],
            num_labels: 1,
            length: 3,
            split: Split::Train,
        };
        let z = znormalize(&d);
        assert_eq!(z.series[0].values, vec![0.0, 0.0, 0.0]);
    }

    #[test]
    fn znormalize_is_idempotent() {
        let d = generate_cbf(5, 64, 3, Split::Train).unwrap();
        let once = znormalize(&d);
        let twice = znormalize(&once);
        for (a, b) in once.series.iter().zip(&twice.series) {
            for (x, y) in a.values.iter().zip(&b.values) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    proptest! {
        #[test]
        fn generators_produce_finite_values(seed in 0u64..1000, n in 1usize..5) {
            let d = generate_cbf(n, 64, seed, Split::Train).unwrap();
            prop_assert!(d.validate().is_ok());
            let o = generate_overlap(n, 24, 3, 2.5, seed, Split::Test).unwrap();
            prop_assert!(o.validate().is_ok());
        }

        #[test]
        fn znormalize_preserves_structure(seed in 0u64..100) {
            let d = generate_overlap(3, 30, 3, 1.0, seed, Split::Train).unwrap();
            let z = znormalize(&d);
            prop_assert_eq!(z.len(), d.len());
            prop_assert_eq!(z.length, d.length);
            for (a, b) in z.series.iter().zip(&d.series) {
                prop_assert_eq!(a.label, b.label);
            }
            prop_assert!(z.validate().is_ok());
        }
    }
}
