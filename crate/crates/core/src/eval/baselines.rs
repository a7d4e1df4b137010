use std::path::Path;

use regex::Regex;

use super::EvalError;
use crate::nn::softmax;

/// Pattern file shipped with the crate, one `r"..."` literal per line.
pub const DEFAULT_PATTERNS: &str = include_str!("../../data/dissatisfaction_patterns.txt");

/// Flags a reply as dissatisfied when any pattern matches anywhere in its
/// lowercased text.
#[derive(Debug, Clone)]
pub struct DissatisfactionRegex {
    patterns: Vec<Regex>,
}

fn unwrap_literal(line: &str) -> &str {
    line.strip_prefix("r\"")
        .and_then(|l| l.strip_suffix('"'))
        .unwrap_or(line)
}

impl DissatisfactionRegex {
    pub fn parse(source: &str) -> Result<Self, EvalError> {
        let patterns = source
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .map(|l| {
                let pattern = unwrap_literal(l);
                Regex::new(pattern).map_err(|e| EvalError::Pattern {
                    pattern: pattern.to_string(),
                    message: e.to_string(),
                })
            })
            .collect::<Result<_, _>>()?;
        Ok(Self { patterns })
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, EvalError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn len(&self) -> usize {
        self.patterns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patterns.is_empty()
    }

    /// 1-based numbers of the matching patterns.
    pub fn matching(&self, text: &str) -> Vec<usize> {
        let lowered = text.to_lowercase();
        self.patterns
            .iter()
            .enumerate()
            .filter(|(_, p)| p.is_match(&lowered))
            .map(|(i, _)| i + 1)
            .collect()
    }

    pub fn is_dissatisfied(&self, text: &str) -> bool {
        let lowered = text.to_lowercase();
        self.patterns.iter().any(|p| p.is_match(&lowered))
    }
}

impl Default for DissatisfactionRegex {
    fn default() -> Self {
        Self::parse(DEFAULT_PATTERNS).expect("bundled patterns compile")
    }
}

/// Outcome of an uncertainty detector: `score` is higher when the model is
/// less sure, `flag` compares the raw quantity against the threshold.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Flag {
    pub flag: bool,
    pub score: f64,
}

fn sorted_probs(scores: &[f64]) -> Vec<f64> {
    let mut probs = softmax(scores);
    probs.sort_by(|a, b| b.total_cmp(a));
    probs
}

/// Softmax confidence of the top candidate; flags when below `threshold`.
pub fn uncertainty_top(scores: &[f64], threshold: f64) -> Result<Flag, EvalError> {
    if scores.is_empty() {
        return Err(EvalError::TooFewCandidates(1));
    }
    let top = sorted_probs(scores)[0];
    Ok(Flag {
        flag: top < threshold,
        score: -top,
    })
}

/// Gap between the two most probable candidates; flags when below `threshold`.
pub fn uncertainty_gap(scores: &[f64], threshold: f64) -> Result<Flag, EvalError> {
    if scores.len() < 2 {
        return Err(EvalError::TooFewCandidates(2));
    }
    let probs = sorted_probs(scores);
    let gap = probs[0] - probs[1];
    Ok(Flag {
        flag: gap < threshold,
        score: -gap,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_file_has_six_patterns() {
        assert_eq!(DissatisfactionRegex::default().len(), 6);
        assert_eq!(unwrap_literal(r#"r"a\?""#), r"a\?");
    }

    #[test]
    fn bad_pattern_is_reported() {
        assert!(matches!(
            DissatisfactionRegex::parse("r\"(\"\n"),
            Err(EvalError::Pattern { .. })
        ));
    }

    #[test]
    fn uncertainty_detectors() {
        let even = uncertainty_top(&[0.3, 0.3], 0.6).unwrap();
        assert_eq!(
            even,
            Flag {
                flag: true,
                score: -0.5
            }
        );
        assert!(!uncertainty_top(&[800.0, 0.0], 0.99).unwrap().flag);
        assert!(uncertainty_top(&[5.0, 0.0], 1.0).unwrap().flag);
        let tied = uncertainty_gap(&[1.0, 1.0, 0.0], 1e-9).unwrap();
        assert!(tied.flag && tied.score == 0.0);
        assert!(!uncertainty_gap(&[1.0, 1.0], 0.0).unwrap().flag);
        assert!(!uncertainty_gap(&[900.0, 0.0], 0.5).unwrap().flag);
        assert!(uncertainty_gap(&[1.0], 0.5).is_err());
        assert!(uncertainty_top(&[], 0.5).is_err());
        let shifted = uncertainty_top(&[3.0, 1.0, 2.0], 0.5).unwrap();
        let base = uncertainty_top(&[103.0, 101.0, 102.0], 0.5).unwrap();
        assert!((shifted.score - base.score).abs() < 1e-12);
    }
}
