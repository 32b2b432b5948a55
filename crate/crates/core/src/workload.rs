//! Variable-length sequence batches and synthetic sampling from dataset
//! length histograms.

use std::collections::HashSet;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type SequenceId = u64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Sequence {
    pub id: SequenceId,
    pub len: u64,
}

/// The sequences of one training iteration. Serialized as a JSON array of
/// `{id, len}` objects.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Sequence>", into = "Vec<Sequence>")]
pub struct SequenceBatch {
    sequences: Vec<Sequence>,
    total_tokens: u64,
}

impl SequenceBatch {
    pub fn new(sequences: Vec<Sequence>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(sequences.len());
        for s in &sequences {
            if s.len == 0 {
                return Err(Error::InvalidBatch(format!("sequence {} has zero length", s.id)));
            }
            if !seen.insert(s.id) {
                return Err(Error::InvalidBatch(format!("duplicate sequence id {}", s.id)));
            }
        }
        let total_tokens = sequences.iter().map(|s| s.len).sum();
        Ok(SequenceBatch { sequences, total_tokens })
    }

    /// Batch with ids `0..lengths.len()`.
    pub fn from_lengths(lengths: &[u64]) -> Result<Self> {
        Self::new(
            lengths
                .iter()
                .enumerate()
                .map(|(i, &len)| Sequence { id: i as SequenceId, len })
                .collect(),
        )
    }

    pub fn empty() -> Self {
        SequenceBatch { sequences: Vec::new(), total_tokens: 0 }
    }

    pub fn sequences(&self) -> &[Sequence] {
        &self.sequences
    }

    pub fn total_tokens(&self) -> u64 {
        self.total_tokens
    }

    pub fn len(&self) -> usize {
        self.sequences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("batch serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let batch: Self = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let message = e.into_inner().to_string();
            Error::Malformed { what: "batch file", message: if path == "." { message } else { format!("{path}: {message}") } }
        })?;
        Ok(batch)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

impl TryFrom<Vec<Sequence>> for SequenceBatch {
    type Error = Error;

    fn try_from(sequences: Vec<Sequence>) -> Result<Self> {
        SequenceBatch::new(sequences)
    }
}

impl From<SequenceBatch> for Vec<Sequence> {
    fn from(batch: SequenceBatch) -> Self {
        batch.sequences
    }
}

/// Half-open length bin `[lo, hi)` with its probability mass.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LengthBin {
    pub lo: u64,
    pub hi: u64,
    pub probability: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LengthDistribution {
    bins: Vec<LengthBin>,
}

impl LengthDistribution {
    pub fn new(bins: Vec<LengthBin>) -> Result<Self> {
        if bins.is_empty() {
            return Err(Error::invalid("bins", "at least one bin is required"));
        }
        let mut prev_hi = 0;
        for b in &bins {
            if b.lo == 0 || b.lo >= b.hi {
                return Err(Error::invalid("bins", format!("bad bin [{}, {})", b.lo, b.hi)));
            }
            if b.lo < prev_hi {
                return Err(Error::invalid("bins", "bins overlap or are out of order"));
            }
            if !(b.probability.is_finite() && b.probability >= 0.0) {
                return Err(Error::invalid("bins", "probabilities must be non-negative"));
            }
            prev_hi = b.hi;
        }
        let total: f64 = bins.iter().map(|b| b.probability).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::invalid("bins", format!("probabilities sum to {total}")));
        }
        Ok(LengthDistribution { bins })
    }

    /// Rescales arbitrary non-negative masses so they sum to one.
    pub fn normalized(mut bins: Vec<LengthBin>) -> Result<Self> {
        let total: f64 = bins.iter().map(|b| b.probability).sum();
        if total.is_nan() || total <= 0.0 {
            return Err(Error::invalid("bins", "total probability mass is zero"));
        }
        for b in &mut bins {
            b.probability /= total;
        }
        Self::new(bins)
    }

    pub fn bins(&self) -> &[LengthBin] {
        &self.bins
    }

    pub fn min_length(&self) -> u64 {
        self.bins.iter().find(|b| b.probability > 0.0).map_or(1, |b| b.lo)
    }

    /// Index of the bin containing `len`, if any.
    pub fn bin_of(&self, len: u64) -> Option<usize> {
        self.bins.iter().position(|b| b.lo <= len && len < b.hi)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dataset {
    Arxiv,
    Github,
    Prolong64k,
}

impl Dataset {
    pub const ALL: [Dataset; 3] = [Dataset::Arxiv, Dataset::Github, Dataset::Prolong64k];

    pub fn name(self) -> &'static str {
        match self {
            Dataset::Arxiv => "arxiv",
            Dataset::Github => "github",
            Dataset::Prolong64k => "prolong64k",
        }
    }

    /// Published bin masses over `<1k, 1-2k, ..., 128-256k`. Rows that do not
    /// sum to one (github sums to 0.945) are renormalized by [`preset`].
    pub fn raw_masses(self) -> [f64; 9] {
        match self {
            Dataset::Arxiv => [0.032, 0.03, 0.08, 0.219, 0.338, 0.224, 0.077, 0.0, 0.0],
            Dataset::Github => [0.0, 0.34, 0.095, 0.104, 0.107, 0.102, 0.088, 0.064, 0.045],
            Dataset::Prolong64k => [0.231, 0.042, 0.021, 0.012, 0.013, 0.008, 0.673, 0.0, 0.0],
        }
    }
}

impl fmt::Display for Dataset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Dataset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Dataset::ALL
            .into_iter()
            .find(|d| d.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::UnknownPreset(s.to_string()))
    }
}

pub const KILO: u64 = 1024;

/// Bin edges `1, 1k, 2k, 4k, ..., 256k`.
pub fn preset_bin_edges() -> [(u64, u64); 9] {
    let mut edges = [(0, 0); 9];
    edges[0] = (1, KILO);
    for (i, edge) in edges.iter_mut().enumerate().skip(1) {
        *edge = (KILO << (i - 1), KILO << i);
    }
    edges
}

pub fn preset(dataset: Dataset) -> LengthDistribution {
    let bins = preset_bin_edges()
        .into_iter()
        .zip(dataset.raw_masses())
        .map(|((lo, hi), probability)| LengthBin { lo, hi, probability })
        .collect();
    LengthDistribution::normalized(bins).expect("preset masses are valid")
}

pub fn preset_by_name(name: &str) -> Result<LengthDistribution> {
    Ok(preset(name.parse()?))
}

/// Draws lengths (bin by mass, uniform within the bin) until the running
/// total reaches `target_total`, truncating the last sequence so the batch
/// holds exactly `target_total` tokens.
pub fn sample_batch(dist: &LengthDistribution, target_total: u64, seed: u64) -> SequenceBatch {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let weights = WeightedIndex::new(dist.bins().iter().map(|b| b.probability))
        .expect("distribution has positive mass");
    let mut sequences = Vec::new();
    let mut total = 0;
    while total < target_total {
        let bin = dist.bins()[weights.sample(&mut rng)];
        let len = rng.gen_range(bin.lo..bin.hi).min(target_total - total);
        sequences.push(Sequence { id: sequences.len() as SequenceId, len });
        total += len;
    }
    SequenceBatch::new(sequences).expect("sampled lengths are positive and ids unique")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preset_values() {
        let arxiv = preset(Dataset::Arxiv);
        let idx = arxiv.bin_of(8 * KILO).unwrap();
        assert_eq!((arxiv.bins()[idx].lo, arxiv.bins()[idx].hi), (8 * KILO, 16 * KILO));
        assert!((arxiv.bins()[idx].probability - 0.338).abs() < 1e-9);

        let prolong = preset(Dataset::Prolong64k);
        let idx = prolong.bin_of(32 * KILO).unwrap();
        assert!((prolong.bins()[idx].probability - 0.673).abs() < 1e-9);

        let github = preset(Dataset::Github);
        assert_eq!(github.bins()[0].probability, 0.0);
        let sum: f64 = github.bins().iter().map(|b| b.probability).sum();
        assert!((sum - 1.0).abs() < 1e-12);
        assert!((github.bins()[1].probability - 0.34 / 0.945).abs() < 1e-12);
        assert_eq!(github.min_length(), KILO);
    }

    #[test]
    fn unknown_preset_is_an_error() {
        assert!(matches!(preset_by_name("wiki"), Err(Error::UnknownPreset(_))));
        assert_eq!(preset_by_name("ProLong64k").unwrap(), preset(Dataset::Prolong64k));
    }

    #[test]
    fn zero_target_gives_empty_batch() {
        let b = sample_batch(&preset(Dataset::Arxiv), 0, 1);
        assert!(b.is_empty());
        assert_eq!(b.total_tokens(), 0);
    }

    #[test]
    fn sampling_is_deterministic_and_exact() {
        let d = preset(Dataset::Github);
        let a = sample_batch(&d, 65536, 42);
        let b = sample_batch(&d, 65536, 42);
        assert_eq!(a, b);
        assert_eq!(a.total_tokens(), 65536);
        assert_ne!(a, sample_batch(&d, 65536, 43));
    }

    #[test]
    fn empirical_bin_frequencies_converge() {
        let d = preset(Dataset::Arxiv);
        let mut counts = vec![0usize; d.bins().len()];
        let mut drawn = 0;
        let mut seed = 7;
        while drawn < 1000 {
            let batch = sample_batch(&d, 64 * KILO, seed);
            // The last sequence is truncated, so it does not follow the histogram.
            let full = &batch.sequences()[..batch.len() - 1];
            for s in full {
                counts[d.bin_of(s.len).unwrap()] += 1;
            }
            drawn += full.len();
            seed += 1;
        }
        for (bin, &c) in d.bins().iter().zip(&counts) {
            let freq = c as f64 / drawn as f64;
            assert!(
                (freq - bin.probability).abs() <= 0.05,
                "bin [{}, {}): {freq} vs {}",
                bin.lo,
                bin.hi,
                bin.probability
            );
        }
    }

    #[test]
    fn batch_json_format() {
        let b = SequenceBatch::from_lengths(&[5, 7]).unwrap();
        let json = serde_json::to_value(&b).unwrap();
        assert_eq!(json, serde_json::json!([{"id": 0, "len": 5}, {"id": 1, "len": 7}]));
        assert_eq!(SequenceBatch::from_json(&b.to_json()).unwrap(), b);
        assert!(SequenceBatch::from_json(r#"[{"id": 0, "len": 0}]"#).is_err());
        assert!(SequenceBatch::from_json(r#"[{"id": 0, "len": 1}, {"id": 0, "len": 2}]"#).is_err());
    }

    #[test]
    fn distribution_validation() {
        let bin = |lo, hi, p| LengthBin { lo, hi, probability: p };
        assert!(LengthDistribution::new(vec![bin(1, 10, 0.5), bin(5, 20, 0.5)]).is_err());
        assert!(LengthDistribution::new(vec![bin(1, 10, 0.5), bin(10, 20, 0.4)]).is_err());
        assert!(LengthDistribution::new(vec![bin(1, 10, 0.5), bin(10, 20, 0.5)]).is_ok());
    }
}
