//! Metric definitions: Path%, Accuracy%, Correctness% and the cumulative
//! curves over a scenario order.

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;
use toolcoder_core::RequestRecord;

const REL_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MetricError {
    #[error("ground truth is empty")]
    EmptyGroundTruth,
}

/// Fraction of ground-truth tools that were actually called.
pub fn path_rate<S: AsRef<str>, T: AsRef<str>>(called: &[S], ground_truth: &[T]) -> Result<f64, MetricError> {
    let gt: HashSet<&str> = ground_truth.iter().map(AsRef::as_ref).collect();
    if gt.is_empty() {
        return Err(MetricError::EmptyGroundTruth);
    }
    let called: HashSet<&str> = called.iter().map(AsRef::as_ref).collect();
    Ok(gt.intersection(&called).count() as f64 / gt.len() as f64)
}

fn normalize(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

/// A plain decimal number (no `inf`/`nan`, which `f64::from_str` would take).
fn parse_number(text: &str) -> Option<f64> {
    let t = text.trim();
    let ok = !t.is_empty()
        && t.chars().any(|c| c.is_ascii_digit())
        && t.chars().all(|c| c.is_ascii_digit() || matches!(c, '+' | '-' | '.' | 'e' | 'E'));
    ok.then(|| t.parse().ok()).flatten()
}

/// The last number in a text, e.g. `8` in "directed by Sofia Coppola: 8".
pub fn trailing_number(text: &str) -> Option<f64> {
    let bytes = text.as_bytes();
    let mut end = bytes.len();
    while end > 0 && !bytes[end - 1].is_ascii_digit() {
        end -= 1;
    }
    if end == 0 {
        return None;
    }
    let mut start = end;
    while start > 0 && (bytes[start - 1].is_ascii_digit() || bytes[start - 1] == b'.') {
        start -= 1;
    }
    if start > 0 && bytes[start - 1] == b'-' {
        start -= 1;
    }
    parse_number(text[start..end].trim_start_matches('.'))
}

fn numbers_equal(a: f64, b: f64) -> bool {
    a == b || (a - b).abs() <= REL_TOLERANCE * a.abs().max(b.abs())
}

/// Answer match: whitespace- and case-insensitive, numeric with a relative
/// tolerance when both sides are numbers. With `trailing_number_extraction`,
/// a numeric ground truth is compared with the last number of the answer.
pub fn accuracy(final_answer: Option<&str>, ground_truth: &str, trailing_number_extraction: bool) -> bool {
    let Some(answer) = final_answer else { return false };
    let (a, g) = (normalize(answer), normalize(ground_truth));
    if let Some(gn) = parse_number(&g) {
        let an = if trailing_number_extraction { trailing_number(&a) } else { parse_number(&a) };
        return an.is_some_and(|an| numbers_equal(an, gn));
    }
    a == g
}

/// One API interaction a correct run must make.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruthCall {
    pub path: String,
    #[serde(default)]
    pub params: BTreeMap<String, String>,
}

/// Fraction of ground-truth calls found in the request log with the same path
/// template and every required parameter equal after trimming.
pub fn correctness(log: &[RequestRecord], ground_truth: &[GroundTruthCall]) -> Result<f64, MetricError> {
    if ground_truth.is_empty() {
        return Err(MetricError::EmptyGroundTruth);
    }
    let hits = ground_truth
        .iter()
        .filter(|call| {
            log.iter().any(|r| {
                r.path == call.path
                    && call
                        .params
                        .iter()
                        .all(|(k, v)| r.params.get(k).is_some_and(|got| got.trim() == v.trim()))
            })
        })
        .count();
    Ok(hits as f64 / ground_truth.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CumulativePoint {
    pub proportion: f64,
    pub cum_success: f64,
    /// Mean accuracy over the prefix scenarios that have a ground-truth answer.
    pub cum_accuracy: Option<f64>,
}

/// Running means at each decile of the scenario order: the point for
/// proportion `p` covers the first `ceil(p * n)` scenarios.
pub fn cumulative_series(success: &[bool], accuracy: &[Option<bool>]) -> Vec<CumulativePoint> {
    assert_eq!(success.len(), accuracy.len(), "one accuracy slot per scenario");
    let n = success.len();
    if n == 0 {
        return Vec::new();
    }
    (1..=10)
        .map(|d| {
            let k = (d * n).div_ceil(10);
            let ok = success[..k].iter().filter(|&&s| s).count();
            let scored: Vec<bool> = accuracy[..k].iter().flatten().copied().collect();
            CumulativePoint {
                proportion: d as f64 / 10.0,
                cum_success: ok as f64 / k as f64,
                cum_accuracy: (!scored.is_empty())
                    .then(|| scored.iter().filter(|&&a| a).count() as f64 / scored.len() as f64),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const SEARCH: &str = "/3/search/person";
    const CREDITS: &str = "/3/person/{person_id}/movie_credits";

    #[test]
    fn path_rate_examples() {
        assert_eq!(path_rate(&[SEARCH, CREDITS], &[SEARCH, CREDITS]), Ok(1.0));
        assert_eq!(path_rate(&[SEARCH], &[SEARCH, CREDITS]), Ok(0.5));
        assert_eq!(path_rate::<&str, _>(&[], &[SEARCH, CREDITS]), Ok(0.0));
        assert_eq!(path_rate::<_, &str>(&[SEARCH], &[]), Err(MetricError::EmptyGroundTruth));
    }

    #[test]
    fn accuracy_examples() {
        assert!(accuracy(Some("8"), "8", false));
        let line = "Number of movies directed by Sofia Coppola: 8";
        assert!(accuracy(Some(line), "8", true));
        assert!(!accuracy(Some(line), "8", false));
        assert!(!accuracy(None, "8", true));
        assert!(accuracy(Some("  Lost   in TRANSLATION "), "lost in translation", true));
        assert!(accuracy(Some("0.30000000000000004"), "0.3", false));
        assert!(!accuracy(Some("0.31"), "0.3", false));
        assert!(!accuracy(Some("inf"), "8", false));
        assert_eq!(trailing_number("rating: -7.5."), Some(-7.5));
    }

    fn rec(path: &str, params: &[(&str, &str)]) -> RequestRecord {
        RequestRecord {
            path: path.into(),
            matched: true,
            params: params.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect(),
            status: 200,
            timestamp_ms: 0,
        }
    }

    fn call(path: &str, params: &[(&str, &str)]) -> GroundTruthCall {
        GroundTruthCall {
            path: path.into(),
            params: params.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect(),
        }
    }

    #[test]
    fn correctness_examples() {
        let gt = [call(SEARCH, &[("query", "Sofia Coppola")]), call(CREDITS, &[("person_id", "1769")])];
        let both = [rec(SEARCH, &[("query", " Sofia Coppola"), ("page", "1")]), rec(CREDITS, &[("person_id", "1769")])];
        assert_eq!(correctness(&both, &gt), Ok(1.0));
        assert_eq!(correctness(&both[..1], &gt), Ok(0.5));
        let wrong = [rec(SEARCH, &[("query", "Sofia Coppola")]), rec(CREDITS, &[("person_id", "1")])];
        assert_eq!(correctness(&wrong, &gt), Ok(0.5));
        assert_eq!(correctness(&both, &[]), Err(MetricError::EmptyGroundTruth));
    }

    #[test]
    fn cumulative_examples() {
        let all = cumulative_series(&[true; 10], &[Some(true); 10]);
        let last = all.last().unwrap();
        assert_eq!((last.proportion, last.cum_success, last.cum_accuracy), (1.0, 1.0, Some(1.0)));

        let alternating: Vec<bool> = (0..10).map(|i| i % 2 == 0).collect();
        let acc: Vec<Option<bool>> = alternating.iter().map(|&b| Some(b)).collect();
        let series = cumulative_series(&alternating, &acc);
        assert_eq!(series[0].cum_success, 1.0);
        assert_eq!(series[9].cum_success, 0.5);
        for p in &series {
            assert!(p.cum_success >= 0.5);
        }
        assert!(series.windows(2).all(|w| w[0].proportion < w[1].proportion));

        let small = cumulative_series(&[false, true, true], &[None, None, Some(false)]);
        assert_eq!(small.len(), 10);
        assert_eq!(small[0].cum_success, 0.0);
        assert_eq!(small[0].cum_accuracy, None);
        assert_eq!(small[9].cum_accuracy, Some(0.0));
    }
}
