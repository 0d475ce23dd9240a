//! OCR quality metrics.
//!
//! Edit-distance metrics operate on token sequences: word level splits on
//! whitespace runs, character level uses Unicode code points (whitespace
//! included). The normalized-distance report follows the lower-is-better
//! convention of the benchmark tables: mean normalized Levenshtein distance
//! scaled by 100. No similarity threshold is applied.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("empty reference")]
    EmptyReference,
    #[error("empty pair list")]
    EmptyPairList,
    #[error("missing field key \"{0}\"")]
    MissingFieldKey(String),
    #[error("field map must have exactly the keys {expected:?}, got {got:?}")]
    WrongFieldKeys {
        expected: [&'static str; 4],
        got: Vec<String>,
    },
}

/// Token granularity for sequence metrics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricLevel {
    Word,
    Char,
}

impl std::fmt::Display for MetricLevel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            MetricLevel::Word => write!(f, "word"),
            MetricLevel::Char => write!(f, "char"),
        }
    }
}

/// Aggregated per-sample metric values; `mean_value` is the arithmetic mean
/// of `per_sample` on the x100 scale.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricReport {
    pub level: MetricLevel,
    pub mean_value: f64,
    pub per_sample: Vec<f64>,
    pub sample_count: usize,
}

/// Minimum number of single-token insertions, deletions, and substitutions
/// turning `a` into `b`. Two-row dynamic program.
pub fn levenshtein<T: Eq>(a: &[T], b: &[T]) -> usize {
    if a.is_empty() {
        return b.len();
    }
    if b.is_empty() {
        return a.len();
    }
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0usize; b.len() + 1];
    for (i, ai) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, bj) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ai != bj);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Levenshtein distance divided by the longer sequence length, in [0, 1].
/// Two empty sequences are distance 0.
pub fn normalized_lev_distance<T: Eq>(a: &[T], b: &[T]) -> f64 {
    let denom = a.len().max(b.len());
    if denom == 0 {
        return 0.0;
    }
    levenshtein(a, b) as f64 / denom as f64
}

fn word_tokens(s: &str) -> Vec<&str> {
    s.split_whitespace().collect()
}

fn char_tokens(s: &str) -> Vec<char> {
    s.chars().collect()
}

fn normalized_distance_at(level: MetricLevel, gt: &str, ocr: &str) -> f64 {
    match level {
        MetricLevel::Word => normalized_lev_distance(&word_tokens(gt), &word_tokens(ocr)),
        MetricLevel::Char => normalized_lev_distance(&char_tokens(gt), &char_tokens(ocr)),
    }
}

/// Mean normalized Levenshtein distance over (ground truth, OCR) pairs,
/// reported on the x100 lower-is-better scale.
pub fn anls_report(
    pairs: &[(String, String)],
    level: MetricLevel,
) -> Result<MetricReport, MetricsError> {
    if pairs.is_empty() {
        return Err(MetricsError::EmptyPairList);
    }
    let per_sample: Vec<f64> = pairs
        .iter()
        .map(|(gt, ocr)| 100.0 * normalized_distance_at(level, gt, ocr))
        .collect();
    let mean_value = per_sample.iter().sum::<f64>() / per_sample.len() as f64;
    Ok(MetricReport {
        level,
        mean_value,
        sample_count: per_sample.len(),
        per_sample,
    })
}

/// Word error rate: word-token edit distance over the reference word count.
/// Can exceed 1 when the hypothesis is much longer than the reference.
pub fn wer(reference: &str, hypothesis: &str) -> Result<f64, MetricsError> {
    let ref_tokens = word_tokens(reference);
    if ref_tokens.is_empty() {
        return Err(MetricsError::EmptyReference);
    }
    let hyp_tokens = word_tokens(hypothesis);
    Ok(levenshtein(&ref_tokens, &hyp_tokens) as f64 / ref_tokens.len() as f64)
}

/// Character error rate over Unicode code points, whitespace included.
pub fn cer(reference: &str, hypothesis: &str) -> Result<f64, MetricsError> {
    let ref_chars = char_tokens(reference);
    if ref_chars.is_empty() {
        return Err(MetricsError::EmptyReference);
    }
    let hyp_chars = char_tokens(hypothesis);
    Ok(levenshtein(&ref_chars, &hyp_chars) as f64 / ref_chars.len() as f64)
}

/// The four receipt fields scored by the structured benchmark.
pub const REQUIRED_FIELDS: [&str; 4] = ["company", "date", "address", "total"];

/// Lowercase, trim, and collapse internal whitespace runs to single spaces.
pub fn normalize_field_text(s: &str) -> String {
    s.to_lowercase().split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Fraction of the four fields whose normalized ground-truth value occurs as
/// a substring of the normalized predicted text, each field weighted 25%,
/// averaged over documents and scaled x100.
pub fn field_accuracy(
    docs: &[(String, BTreeMap<String, String>)],
) -> Result<f64, MetricsError> {
    if docs.is_empty() {
        return Err(MetricsError::EmptyPairList);
    }
    let mut total = 0.0;
    for (predicted, fields) in docs {
        let got: Vec<String> = fields.keys().cloned().collect();
        if got.len() != REQUIRED_FIELDS.len() {
            return Err(MetricsError::WrongFieldKeys {
                expected: REQUIRED_FIELDS,
                got,
            });
        }
        let normalized_pred = normalize_field_text(predicted);
        let mut matched = 0usize;
        for key in REQUIRED_FIELDS {
            let value = fields
                .get(key)
                .ok_or_else(|| MetricsError::MissingFieldKey(key.to_string()))?;
            if normalized_pred.contains(&normalize_field_text(value)) {
                matched += 1;
            }
        }
        total += matched as f64 / REQUIRED_FIELDS.len() as f64;
    }
    Ok(100.0 * total / docs.len() as f64)
}

/// Longest matching block between `a[alo..ahi]` and `b[blo..bhi]`:
/// `(start_a, start_b, length)`, ties resolved to the earliest start in `a`,
/// then in `b`.
fn longest_match<T: Eq>(
    a: &[T],
    b: &[T],
    alo: usize,
    ahi: usize,
    blo: usize,
    bhi: usize,
) -> (usize, usize, usize) {
    let (mut best_i, mut best_j, mut best_len) = (alo, blo, 0usize);
    // lengths[j] = length of match ending at (i, j)
    let mut prev = vec![0usize; bhi - blo];
    let mut cur = vec![0usize; bhi - blo];
    for i in alo..ahi {
        for j in blo..bhi {
            let len = if a[i] == b[j] {
                if j == blo {
                    1
                } else {
                    prev[j - blo - 1] + 1
                }
            } else {
                0
            };
            cur[j - blo] = len;
            if len > 0 {
                let (si, sj) = (i + 1 - len, j + 1 - len);
                if len > best_len || (len == best_len && (si, sj) < (best_i, best_j)) {
                    (best_i, best_j, best_len) = (si, sj, len);
                }
            }
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    (best_i, best_j, best_len)
}

/// Total matched element count over recursively longest matching blocks
/// (gestalt pattern matching).
fn gestalt_matches<T: Eq>(a: &[T], b: &[T]) -> usize {
    let mut total = 0usize;
    let mut stack = vec![(0usize, a.len(), 0usize, b.len())];
    while let Some((alo, ahi, blo, bhi)) = stack.pop() {
        if alo >= ahi || blo >= bhi {
            continue;
        }
        let (i, j, len) = longest_match(a, b, alo, ahi, blo, bhi);
        if len == 0 {
            continue;
        }
        total += len;
        stack.push((alo, i, blo, j));
        stack.push((i + len, ahi, j + len, bhi));
    }
    total
}

/// Gestalt similarity ratio `2M / (|a| + |b|)` over token sequences.
///
/// The block-matching recursion is not symmetric in its arguments in
/// general; callers pass the ground truth first. Two empty sequences are
/// fully similar (ratio 1).
pub fn similarity_ratio_seq<T: Eq>(a: &[T], b: &[T]) -> f64 {
    let denom = a.len() + b.len();
    if denom == 0 {
        return 1.0;
    }
    2.0 * gestalt_matches(a, b) as f64 / denom as f64
}

/// Character-level gestalt similarity; ground truth first.
pub fn similarity_ratio(gt: &str, other: &str) -> f64 {
    similarity_ratio_seq(&char_tokens(gt), &char_tokens(other))
}

/// Word-level gestalt similarity; ground truth first.
pub fn similarity_ratio_words(gt: &str, other: &str) -> f64 {
    similarity_ratio_seq(&word_tokens(gt), &word_tokens(other))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    /// Full-matrix DP written independently of the two-row implementation.
    fn levenshtein_oracle(a: &[u8], b: &[u8]) -> usize {
        let mut d = vec![vec![0usize; b.len() + 1]; a.len() + 1];
        for (i, row) in d.iter_mut().enumerate() {
            row[0] = i;
        }
        for j in 0..=b.len() {
            d[0][j] = j;
        }
        for i in 1..=a.len() {
            for j in 1..=b.len() {
                let cost = usize::from(a[i - 1] != b[j - 1]);
                d[i][j] = (d[i - 1][j] + 1)
                    .min(d[i][j - 1] + 1)
                    .min(d[i - 1][j - 1] + cost);
            }
        }
        d[a.len()][b.len()]
    }

    fn chars(s: &str) -> Vec<char> {
        s.chars().collect()
    }

    #[test]
    fn levenshtein_fixed_cases() {
        assert_eq!(levenshtein(&chars(""), &chars("abc")), 3);
        assert_eq!(levenshtein(&chars("abc"), &chars("abc")), 0);
        assert_eq!(levenshtein(&chars("kitten"), &chars("sitting")), 3);
    }

    #[test]
    fn levenshtein_matches_oracle_on_random_pairs() {
        let mut rng = crate::rng::derive(21, "metrics");
        for _ in 0..1000 {
            let len_a = rng.gen_range(0..=12);
            let len_b = rng.gen_range(0..=12);
            let a: Vec<u8> = (0..len_a).map(|_| rng.gen_range(0..4)).collect();
            let b: Vec<u8> = (0..len_b).map(|_| rng.gen_range(0..4)).collect();
            assert_eq!(levenshtein(&a, &b), levenshtein_oracle(&a, &b));
        }
    }

    #[test]
    fn levenshtein_symmetry_and_triangle() {
        let mut rng = crate::rng::derive(22, "metrics");
        for _ in 0..1000 {
            let mk = |rng: &mut rand_chacha::ChaCha8Rng| -> Vec<u8> {
                let n = rng.gen_range(0..=12);
                (0..n).map(|_| rng.gen_range(0..4)).collect()
            };
            let (a, b, c) = (mk(&mut rng), mk(&mut rng), mk(&mut rng));
            assert_eq!(levenshtein(&a, &b), levenshtein(&b, &a));
            assert!(levenshtein(&a, &c) <= levenshtein(&a, &b) + levenshtein(&b, &c));
        }
    }

    #[test]
    fn normalized_distance_bounds() {
        assert_eq!(normalized_lev_distance(&chars(""), &chars("")), 0.0);
        assert!((normalized_lev_distance(&chars("abc"), &chars("abd")) - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(normalized_lev_distance(&chars("abcd"), &chars("wxyz")), 1.0);
        let mut rng = crate::rng::derive(23, "metrics");
        for _ in 0..200 {
            let a: Vec<u8> = (0..rng.gen_range(0..10)).map(|_| rng.gen_range(0..3)).collect();
            let b: Vec<u8> = (0..rng.gen_range(0..10)).map(|_| rng.gen_range(0..3)).collect();
            let d = normalized_lev_distance(&a, &b);
            assert!((0.0..=1.0).contains(&d));
            assert_eq!(d == 0.0, a == b);
        }
    }

    #[test]
    fn anls_report_cases() {
        let identical = vec![("same text".to_string(), "same text".to_string())];
        assert_eq!(anls_report(&identical, MetricLevel::Word).unwrap().mean_value, 0.0);

        let pairs = vec![("a b c".to_string(), "a b".to_string())];
        let report = anls_report(&pairs, MetricLevel::Word).unwrap();
        assert!((report.mean_value - 100.0 / 3.0).abs() < 1e-9);

        // Mean is order-invariant.
        let mut many = vec![
            ("abc".to_string(), "abd".to_string()),
            ("xy".to_string(), "xy".to_string()),
            ("hello".to_string(), "hallo".to_string()),
        ];
        let forward = anls_report(&many, MetricLevel::Char).unwrap().mean_value;
        many.reverse();
        let backward = anls_report(&many, MetricLevel::Char).unwrap().mean_value;
        assert!((forward - backward).abs() < 1e-12);

        assert!(matches!(
            anls_report(&[], MetricLevel::Word),
            Err(MetricsError::EmptyPairList)
        ));
    }

    #[test]
    fn wer_cases() {
        assert!((wer("the cat sat", "the cat").unwrap() - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(wer("same words", "same words").unwrap(), 0.0);
        assert_eq!(wer("a", "b c d").unwrap(), 3.0);
        assert!(matches!(wer("   ", "x"), Err(MetricsError::EmptyReference)));
    }

    #[test]
    fn cer_cases() {
        assert_eq!(cer("abc", "abc").unwrap(), 0.0);
        assert!((cer("abc", "axc").unwrap() - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(cer("ab", "").unwrap(), 1.0);
        assert!(matches!(cer("", "x"), Err(MetricsError::EmptyReference)));
    }

    fn fields(company: &str, date: &str, address: &str, total: &str) -> BTreeMap<String, String> {
        [
            ("company", company),
            ("date", date),
            ("address", address),
            ("total", total),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect()
    }

    #[test]
    fn field_accuracy_cases() {
        let gt = fields("ACME Corp", "2024-01-02", "1 Main St", "9.99");
        let full = "acme corp bought on 2024-01-02 at 1 main st for 9.99".to_string();
        assert_eq!(field_accuracy(&[(full, gt.clone())]).unwrap(), 100.0);

        let half = "2024-01-02 total 9.99".to_string();
        assert_eq!(field_accuracy(&[(half, gt.clone())]).unwrap(), 50.0);

        // Whitespace collapse and case folding make "acme   corp" match.
        let messy = "receipt from ACME   CORP".to_string();
        assert_eq!(field_accuracy(&[(messy, gt)]).unwrap(), 25.0);

        let mut wrong = fields("a", "b", "c", "d");
        wrong.remove("total");
        wrong.insert("sum".to_string(), "d".to_string());
        assert!(field_accuracy(&[("x".to_string(), wrong)]).is_err());
    }

    #[test]
    fn similarity_fixed_cases() {
        assert_eq!(similarity_ratio("same", "same"), 1.0);
        assert_eq!(similarity_ratio("abc", "xyz"), 0.0);
        // Block "bcd": M = 3, ratio 6/8.
        assert!((similarity_ratio("abcd", "bcde") - 0.75).abs() < 1e-12);
        assert_eq!(similarity_ratio("", ""), 1.0);
        assert_eq!(similarity_ratio_words("a b c", "a b c"), 1.0);
        assert!((similarity_ratio_words("a b c d", "a b x d") - 0.75).abs() < 1e-12);
    }

    #[test]
    fn similarity_argument_order_convention() {
        // The gestalt recursion is order-sensitive: a witness pair where
        // swapping arguments changes the matched total. Callers must pass
        // the ground truth first; this pins that convention.
        let forward = similarity_ratio("tide", "diet");
        let backward = similarity_ratio("diet", "tide");
        assert!((forward - 0.25).abs() < 1e-12, "got {forward}");
        assert!((backward - 0.5).abs() < 1e-12, "got {backward}");
        assert!(forward != backward, "expected an order-sensitive witness");
        let mut rng = crate::rng::derive(24, "metrics");
        for _ in 0..200 {
            let mk = |rng: &mut rand_chacha::ChaCha8Rng| -> Vec<u8> {
                let n = rng.gen_range(0..10);
                (0..n).map(|_| rng.gen_range(0..3)).collect()
            };
            let (a, b) = (mk(&mut rng), mk(&mut rng));
            let r = similarity_ratio_seq(&a, &b);
            assert!((0.0..=1.0).contains(&r));
        }
    }
}
