//! Hashed bag-of-words features for the small text models.
//!
//! Tokens are lowercase alphanumeric runs. Unigrams and bigrams are hashed
//! (FNV-1a) into a fixed number of buckets, prefixed by the prompt section
//! they came from, and the vector is L2-normalized.

use super::prompt::{parse_sections, SectionKind};

pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

fn fnv1a(parts: &[&str]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for (i, p) in parts.iter().enumerate() {
        if i > 0 {
            h ^= 0x1f;
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
        for b in p.bytes() {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
    }
    h
}

fn prefix(kind: SectionKind) -> &'static str {
    match kind {
        SectionKind::Narrative => "n",
        SectionKind::Predictions => "p",
        SectionKind::Options => "o",
    }
}

/// Dense feature vector of length `buckets` for a prompt's text.
pub fn featurize(text: &str, buckets: usize) -> Vec<f32> {
    let mut v = vec![0f32; buckets];
    for section in parse_sections(text) {
        let ns = prefix(section.kind);
        let toks = tokenize(&section.text);
        for (i, t) in toks.iter().enumerate() {
            v[(fnv1a(&[ns, t]) % buckets as u64) as usize] += 1.0;
            if let Some(next) = toks.get(i + 1) {
                v[(fnv1a(&[ns, t, next]) % buckets as u64) as usize] += 1.0;
            }
        }
    }
    let norm = v.iter().map(|x| x * x).sum::<f32>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    v
}
