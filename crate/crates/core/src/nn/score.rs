use super::tensor::dot;
use super::NnError;

/// Dot-product scores with a descending order; ties keep ascending index.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredCandidates {
    pub scores: Vec<f64>,
    pub order: Vec<usize>,
}

impl ScoredCandidates {
    pub fn from_scores(scores: Vec<f64>) -> Self {
        let order = rank_order(&scores);
        Self { scores, order }
    }

    pub fn top(&self) -> Option<usize> {
        self.order.first().copied()
    }

    /// 1-based rank of candidate `index`.
    pub fn rank_of(&self, index: usize) -> Option<usize> {
        self.order.iter().position(|&i| i == index).map(|p| p + 1)
    }
}

/// Indices sorted by descending score, ties by ascending index.
pub fn rank_order(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order
}

pub fn score_candidates(
    context: &[f64],
    candidates: &[Vec<f64>],
) -> Result<ScoredCandidates, NnError> {
    let mut scores = Vec::with_capacity(candidates.len());
    for c in candidates {
        if c.len() != context.len() {
            return Err(NnError::DimensionMismatch {
                expected: context.len(),
                found: c.len(),
            });
        }
        scores.push(dot(context, c));
    }
    Ok(ScoredCandidates::from_scores(scores))
}
