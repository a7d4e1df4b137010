use super::EvalError;

/// Precision, recall and F1 for predicting "dissatisfied" when
/// `score >= threshold`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct F1Point {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Precision is 0 when nothing is predicted positive.
pub fn f1_at(scores: &[f64], labels: &[u8], threshold: f64) -> F1Point {
    let (mut tp, mut fp, mut fneg) = (0usize, 0usize, 0usize);
    for (&s, &y) in scores.iter().zip(labels) {
        match (s >= threshold, y == 1) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fneg += 1,
            (false, false) => {}
        }
    }
    point(threshold, tp, fp, fneg)
}

fn point(threshold: f64, tp: usize, fp: usize, fneg: usize) -> F1Point {
    let precision = if tp + fp == 0 {
        0.0
    } else {
        tp as f64 / (tp + fp) as f64
    };
    let recall = if tp + fneg == 0 {
        0.0
    } else {
        tp as f64 / (tp + fneg) as f64
    };
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    F1Point {
        threshold,
        precision,
        recall,
        f1,
    }
}

/// Every operating point: thresholds at `+inf`, at midpoints between
/// consecutive distinct scores, and at `-inf`, highest threshold first.
fn sweep(scores: &[f64], labels: &[u8]) -> Vec<F1Point> {
    let mut pairs: Vec<(f64, u8)> = scores.iter().copied().zip(labels.iter().copied()).collect();
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0));
    let positives = labels.iter().filter(|&&y| y == 1).count();
    let mut points = vec![point(f64::INFINITY, 0, 0, positives)];
    let (mut tp, mut fp) = (0, 0);
    let mut i = 0;
    while i < pairs.len() {
        let value = pairs[i].0;
        while i < pairs.len() && pairs[i].0 == value {
            if pairs[i].1 == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let threshold = match pairs.get(i) {
            Some(&(next, _)) => (value + next) / 2.0,
            None => f64::NEG_INFINITY,
        };
        points.push(point(threshold, tp, fp, positives - tp));
    }
    points
}

fn check(scores: &[f64], labels: &[u8]) -> Result<(), EvalError> {
    if scores.len() != labels.len() {
        return Err(EvalError::LengthMismatch {
            assigned: labels.len(),
            examples: scores.len(),
        });
    }
    if !labels.contains(&1) {
        return Err(EvalError::NoPositives);
    }
    Ok(())
}

/// Highest-F1 operating point; ties keep the higher threshold.
pub fn max_f1_sweep(scores: &[f64], labels: &[u8]) -> Result<F1Point, EvalError> {
    check(scores, labels)?;
    Ok(best(sweep(scores, labels).into_iter()))
}

/// Highest-F1 point among those with precision at least `min_precision`.
pub fn max_f1_with_min_precision(
    scores: &[f64],
    labels: &[u8],
    min_precision: f64,
) -> Result<Option<F1Point>, EvalError> {
    check(scores, labels)?;
    let eligible: Vec<F1Point> = sweep(scores, labels)
        .into_iter()
        .filter(|p| p.precision >= min_precision)
        .collect();
    Ok((!eligible.is_empty()).then(|| best(eligible.into_iter())))
}

fn best(points: impl Iterator<Item = F1Point>) -> F1Point {
    points
        .reduce(|a, b| if b.f1 > a.f1 { b } else { a })
        .expect("sweep always has the +inf point")
}
