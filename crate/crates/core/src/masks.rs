//! Keep-masks for self-ensembling: binomial per-timestep masks and
//! continuous segment masks, plus the fixed mask sets used at
//! certification time.
//!
//! Masks are never stored on disk; a [`MaskSet`] regenerates bit-identically
//! from `(base_seed, m, spec)`, which is what run manifests record.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seeds;

#[derive(Debug, Error)]
pub enum MaskError {
    #[error("keep ratio must be in [0, 1], got {0}")]
    KeepRatioOutOfRange(f64),
    #[error("mask length must be at least 1")]
    ZeroLength,
    #[error("mask set needs at least one mask")]
    EmptySet,
}

/// Mask construction family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaskKind {
    /// Each timestep kept independently with probability `p`.
    Binomial,
    /// `round((1-p)·T)` zeros laid out as separated segments.
    Continuous,
}

/// Parameters of one mask draw.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaskSpec {
    pub kind: MaskKind,
    pub keep_ratio: f64,
    pub length: usize,
}

impl MaskSpec {
    pub fn new(kind: MaskKind, keep_ratio: f64, length: usize) -> Result<Self, MaskError> {
        if !(0.0..=1.0).contains(&keep_ratio) || keep_ratio.is_nan() {
            return Err(MaskError::KeepRatioOutOfRange(keep_ratio));
        }
        if length == 0 {
            return Err(MaskError::ZeroLength);
        }
        Ok(Self { kind, keep_ratio, length })
    }
}

/// A binary keep-vector: 1 keeps the timestep, 0 zeroes it out.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    bits: Vec<u8>,
}

impl Mask {
    /// All-ones mask (identity).
    pub fn ones(length: usize) -> Self {
        Mask { bits: vec![1; length] }
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    pub fn keep_count(&self) -> usize {
        self.bits.iter().map(|&b| b as usize).sum()
    }

    pub fn zero_count(&self) -> usize {
        self.len() - self.keep_count()
    }

    /// Longest run of zeros.
    pub fn max_zero_run(&self) -> usize {
        let mut best = 0;
        let mut run = 0;
        for &b in &self.bits {
            if b == 0 {
                run += 1;
                best = best.max(run);
            } else {
                run = 0;
            }
        }
        best
    }

    /// Elementwise product of the mask with `src`, written to `dst`.
    pub fn apply_to(&self, src: &[f64], dst: &mut [f64]) {
        debug_assert_eq!(src.len(), self.bits.len());
        debug_assert_eq!(dst.len(), self.bits.len());
        for ((d, &s), &b) in dst.iter_mut().zip(src).zip(&self.bits) {
            *d = if b == 0 { 0.0 } else { s };
        }
    }

    pub fn apply(&self, src: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; src.len()];
        self.apply_to(src, &mut out);
        out
    }
}

/// Draw a mask according to `spec` with the given seed.
pub fn generate_mask(spec: &MaskSpec, seed: u64) -> Mask {
    match spec.kind {
        MaskKind::Binomial => binomial_mask(spec.length, spec.keep_ratio, seed),
        MaskKind::Continuous => continuous_mask(spec.length, spec.keep_ratio, seed),
    }
}

/// Binomial mask: each bit independently 1 with probability `keep_ratio`.
pub fn binomial_mask(length: usize, keep_ratio: f64, seed: u64) -> Mask {
    let mut rng = seeds::rng_from(seed);
    let bits = (0..length)
        .map(|_| u8::from(rng.gen::<f64>() < keep_ratio))
        .collect();
    Mask { bits }
}

/// Continuous mask: exactly `Z = round((1-keep_ratio)·T)` zeros, split
/// into runs of length at most `ceil(Z/2)` and placed uniformly with at
/// least one kept timestep between runs.
pub fn continuous_mask(length: usize, keep_ratio: f64, seed: u64) -> Mask {
    let zeros = ((1.0 - keep_ratio) * length as f64).round() as usize;
    if zeros == 0 {
        return Mask::ones(length);
    }
    if zeros >= length {
        // Degenerate keep_ratio ~ 0: the whole series is masked.
        return Mask { bits: vec![0; length] };
    }
    let max_run = zeros.div_ceil(2);
    let mut rng = seeds::rng_from(seed);

    // Stick-breaking for run lengths, capped at max_run. Resample when the
    // runs plus their separating gaps cannot fit in `length`.
    let mut lens: Vec<usize> = Vec::new();
    for _ in 0..10_000 {
        lens.clear();
        let mut remaining = zeros;
        while remaining > 0 {
            let cap = max_run.min(remaining);
            let len = rng.gen_range(1..=cap);
            lens.push(len);
            remaining -= len;
        }
        if zeros + lens.len() - 1 <= length {
            break;
        }
    }
    if zeros + lens.len() - 1 > length {
        // Minimal-run-count partition always fits for zeros < length.
        lens.clear();
        let mut remaining = zeros;
        while remaining > 0 {
            let len = max_run.min(remaining);
            lens.push(len);
            remaining -= len;
        }
    }
    lens.shuffle(&mut rng);

    // Seeded rejection placement: a run occupies [start, start+len) and
    // must leave a gap of one kept timestep to every other run.
    let mut bits = vec![1u8; length];
    'placement: for _ in 0..10_000 {
        bits.iter_mut().for_each(|b| *b = 1);
        let mut ok = true;
        for &len in &lens {
            let mut placed = false;
            for _ in 0..200 {
                let start = rng.gen_range(0..=(length - len));
                let lo = start.saturating_sub(1);
                let hi = (start + len + 1).min(length);
                if bits[lo..hi].iter().all(|&b| b == 1) {
                    bits[start..start + len].iter_mut().for_each(|b| *b = 0);
                    placed = true;
                    break;
                }
            }
            if !placed {
                ok = false;
                break;
            }
        }
        if ok {
            break 'placement;
        }
    }
    if bits.iter().filter(|&&b| b == 0).count() != zeros {
        // Rejection ran out of luck on a crowded layout; fall back to
        // deterministic left-to-right placement with single gaps.
        bits.iter_mut().for_each(|b| *b = 1);
        let mut pos = 0;
        for &len in &lens {
            bits[pos..pos + len].iter_mut().for_each(|b| *b = 0);
            pos += len + 1;
        }
    }
    Mask { bits }
}

/// A fixed set of `m` masks derived from one base seed.
///
/// The per-mask seeds are `derive(base_seed, i)`, so the set is identical
/// across process restarts and across every input it certifies.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskSet {
    masks: Vec<Mask>,
    base_seed: u64,
    spec: MaskSpec,
}

impl MaskSet {
    pub fn masks(&self) -> &[Mask] {
        &self.masks
    }

    pub fn len(&self) -> usize {
        self.masks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masks.is_empty()
    }

    pub fn base_seed(&self) -> u64 {
        self.base_seed
    }

    pub fn spec(&self) -> &MaskSpec {
        &self.spec
    }
}

/// Build the fixed mask set used for self-ensemble certification.
pub fn fixed_mask_set(base_seed: u64, m: usize, spec: &MaskSpec) -> Result<MaskSet, MaskError> {
    if m == 0 {
        return Err(MaskError::EmptySet);
    }
    let masks = (0..m)
        .map(|i| generate_mask(spec, seeds::derive(base_seed, i as u64)))
        .collect();
    Ok(MaskSet { masks, base_seed, spec: *spec })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn binomial_degenerate_probabilities() {
        assert_eq!(binomial_mask(64, 1.0, 5).keep_count(), 64);
        assert_eq!(binomial_mask(64, 0.0, 5).keep_count(), 0);
    }

    #[test]
    fn binomial_keep_fraction_concentrates() {
        // T = 10^4, p = 0.9: ±3.3σ is just under 0.01.
        let m = binomial_mask(10_000, 0.9, 123);
        let frac = m.keep_count() as f64 / 10_000.0;
        assert!((0.88..=0.92).contains(&frac), "keep fraction {frac}");
    }

    #[test]
    fn binomial_aggregate_keep_fraction_matches_p() {
        // 3.3σ band at T·trials = 2·10^5 draws.
        let p = 0.7;
        let trials = 20;
        let t = 10_000;
        let total: usize = (0..trials)
            .map(|i| binomial_mask(t, p, seeds::derive(9, i)).keep_count())
            .sum();
        let n = (t * trials as usize) as f64;
        let frac = total as f64 / n;
        let band = 3.3 * (p * (1.0 - p) / n).sqrt();
        assert!((frac - p).abs() <= band, "frac {frac} vs p {p} ± {band}");
    }

    #[test]
    fn continuous_exact_zero_budget() {
        let m = continuous_mask(100, 0.9, 7);
        assert_eq!(m.zero_count(), 10);
        assert!(m.max_zero_run() <= 5, "max run {}", m.max_zero_run());
    }

    #[test]
    fn continuous_keep_all_when_p_is_one() {
        assert_eq!(continuous_mask(100, 1.0, 7).keep_count(), 100);
    }

    #[test]
    fn continuous_is_deterministic() {
        let a = continuous_mask(128, 0.8, 42);
        let b = continuous_mask(128, 0.8, 42);
        assert_eq!(a, b);
    }

    #[test]
    fn mask_set_identity_configuration() {
        let spec = MaskSpec::new(MaskKind::Binomial, 1.0, 32).unwrap();
        let set = fixed_mask_set(1, 1, &spec).unwrap();
        assert_eq!(set.len(), 1);
        assert_eq!(set.masks()[0], Mask::ones(32));
    }

    #[test]
    fn mask_set_regenerates_bit_identically() {
        let spec = MaskSpec::new(MaskKind::Continuous, 0.9, 166).unwrap();
        let a = fixed_mask_set(77, 5, &spec).unwrap();
        let b = fixed_mask_set(77, 5, &spec).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn mask_set_members_are_pairwise_distinct() {
        let spec = MaskSpec::new(MaskKind::Binomial, 0.9, 166).unwrap();
        let set = fixed_mask_set(3, 5, &spec).unwrap();
        for i in 0..set.len() {
            for j in (i + 1)..set.len() {
                assert_ne!(set.masks()[i], set.masks()[j], "masks {i} and {j} collide");
            }
        }
    }

    #[test]
    fn apply_zeroes_masked_positions() {
        let m = continuous_mask(20, 0.5, 3);
        let x: Vec<f64> = (0..20).map(|i| i as f64 + 1.0).collect();
        let y = m.apply(&x);
        for (i, (&b, &v)) in m.bits().iter().zip(&y).enumerate() {
            if b == 0 {
                assert_eq!(v, 0.0, "position {i}");
            } else {
                assert_eq!(v, x[i], "position {i}");
            }
        }
    }

    proptest! {
        #[test]
        fn continuous_invariants_hold(t in 4usize..300, p in 0.05f64..1.0, seed in 0u64..500) {
            let m = continuous_mask(t, p, seed);
            let zeros = ((1.0 - p) * t as f64).round() as usize;
            if zeros >= t {
                prop_assert_eq!(m.keep_count(), 0);
            } else {
                prop_assert_eq!(m.zero_count(), zeros);
                if zeros > 0 {
                    prop_assert!(m.max_zero_run() <= zeros.div_ceil(2));
                }
            }
        }

        #[test]
        fn binomial_masks_regenerate(t in 1usize..200, p in 0.0f64..=1.0, seed in 0u64..500) {
            prop_assert_eq!(binomial_mask(t, p, seed), binomial_mask(t, p, seed));
        }
    }
}
