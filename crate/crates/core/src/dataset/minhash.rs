//! MinHash signatures over token n-grams and greedy near-duplicate clustering.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DedupParams {
    pub n: usize,
    pub k: usize,
    pub threshold: f64,
    pub seed: u64,
}

impl Default for DedupParams {
    fn default() -> Self {
        DedupParams {
            n: 3,
            k: 128,
            threshold: 0.85,
            seed: 0,
        }
    }
}

impl DedupParams {
    pub fn validate(&self) -> Result<(), String> {
        if self.n < 1 {
            return Err("dedup n must be at least 1".into());
        }
        if self.k < 16 {
            return Err("dedup k must be at least 16".into());
        }
        if !(self.threshold > 0.0 && self.threshold <= 1.0) {
            return Err("dedup threshold must lie in (0, 1]".into());
        }
        Ok(())
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fnv1a(bytes: impl IntoIterator<Item = u8>, mut h: u64) -> u64 {
    for b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    h
}

/// Whitespace tokens, lowercased.
pub fn tokens(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_lowercase).collect()
}

/// The set of token n-grams; a text shorter than `n` tokens is one gram.
pub fn ngrams(text: &str, n: usize) -> BTreeSet<Vec<String>> {
    let toks = tokens(text);
    if toks.is_empty() {
        return BTreeSet::new();
    }
    if toks.len() < n {
        return BTreeSet::from([toks]);
    }
    toks.windows(n).map(<[String]>::to_vec).collect()
}

fn gram_hash(gram: &[String]) -> u64 {
    let mut h = 0xCBF2_9CE4_8422_2325;
    for (i, t) in gram.iter().enumerate() {
        if i > 0 {
            h = fnv1a([0x1F], h);
        }
        h = fnv1a(t.bytes(), h);
    }
    h
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MinHashSignature {
    pub n: usize,
    pub seed: u64,
    pub minima: Vec<u64>,
}

impl MinHashSignature {
    pub fn compute(text: &str, params: &DedupParams) -> Self {
        let grams: Vec<u64> = ngrams(text, params.n).iter().map(|g| gram_hash(g)).collect();
        let minima = (0..params.k as u64)
            .map(|i| {
                let salt = splitmix(params.seed ^ splitmix(i));
                grams.iter().map(|&g| splitmix(g ^ salt)).min().unwrap_or(u64::MAX)
            })
            .collect();
        MinHashSignature {
            n: params.n,
            seed: params.seed,
            minima,
        }
    }

    /// Fraction of agreeing positions.
    pub fn similarity(&self, other: &MinHashSignature) -> f64 {
        debug_assert_eq!(self.minima.len(), other.minima.len());
        if self.minima.is_empty() {
            return 1.0;
        }
        let same = self.minima.iter().zip(&other.minima).filter(|(a, b)| a == b).count();
        same as f64 / self.minima.len() as f64
    }
}

/// Smallest number of agreeing positions that reaches the threshold.
fn min_agreeing(k: usize, threshold: f64) -> usize {
    (0..=k).find(|&m| m as f64 / k as f64 >= threshold).unwrap_or(k)
}

/// Greedy clustering in input order: an item joins the first retained
/// representative whose estimated similarity reaches the threshold.
/// Returns the indices of the representatives.
///
/// Candidate lookup bands the signature into `k - m + 1` slices, where `m`
/// is the minimum number of agreeing positions; any pair at or above the
/// threshold then agrees on at least one whole band, so the lookup is exact.
pub fn dedup_indices<S: AsRef<str>>(texts: &[S], params: &DedupParams) -> Vec<usize> {
    let sigs: Vec<MinHashSignature> = texts
        .iter()
        .map(|t| MinHashSignature::compute(t.as_ref(), params))
        .collect();
    let k = params.k;
    let bands = (k - min_agreeing(k, params.threshold) + 1).min(k);
    let bounds: Vec<(usize, usize)> = (0..bands).map(|b| (b * k / bands, (b + 1) * k / bands)).collect();
    let band_key = |sig: &MinHashSignature, b: usize| {
        let (lo, hi) = bounds[b];
        let h = sig.minima[lo..hi].iter().fold(b as u64, |acc, &m| splitmix(acc ^ m));
        (b, h)
    };
    let mut index: HashMap<(usize, u64), Vec<usize>> = HashMap::new();
    let mut reps: Vec<usize> = Vec::new();
    for (i, sig) in sigs.iter().enumerate() {
        let keys: Vec<(usize, u64)> = (0..bands).map(|b| band_key(sig, b)).collect();
        let mut cands: Vec<usize> = keys
            .iter()
            .filter_map(|key| index.get(key))
            .flatten()
            .copied()
            .collect();
        cands.sort_unstable();
        cands.dedup();
        if cands.iter().any(|&r| sigs[r].similarity(sig) >= params.threshold) {
            continue;
        }
        for key in keys {
            index.entry(key).or_default().push(i);
        }
        reps.push(i);
    }
    reps
}

/// Reference implementation: compares against every representative.
pub fn dedup_indices_brute<S: AsRef<str>>(texts: &[S], params: &DedupParams) -> Vec<usize> {
    let sigs: Vec<MinHashSignature> = texts
        .iter()
        .map(|t| MinHashSignature::compute(t.as_ref(), params))
        .collect();
    let mut reps: Vec<usize> = Vec::new();
    for (i, sig) in sigs.iter().enumerate() {
        if !reps.iter().any(|&r| sigs[r].similarity(sig) >= params.threshold) {
            reps.push(i);
        }
    }
    reps
}
