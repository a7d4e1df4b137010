/// Matches produced by Python's `re.search` on the lowercased strings.
pub const REGEX_SUITE: &[(&str, &[usize])] = &[
    ("i said hello", &[1]),
    ("that makes no sense", &[2]),
    ("i love pizza", &[]),
    ("i asked you about your job", &[1]),
    ("i told you already", &[1]),
    ("hi said the man", &[1]),
    ("that doesn't make sense", &[2]),
    ("it dont make any sense", &[2]),
    ("you're not making sense", &[2]),
    ("umm, what?", &[3]),
    ("uh huh.", &[3]),
    ("uhhh...", &[3]),
    ("um", &[]),
    ("yum!", &[3]),
    ("humm ok", &[3]),
    ("you said what?", &[4]),
    ("you did what", &[]),
    ("what do you mean?", &[5]),
    ("what are you talking about?", &[5]),
    ("what do you refer to", &[]),
    ("what does that have to do with anything?", &[6]),
    ("what to do with it", &[]),
    ("that has nothing to do with what i said.", &[1]),
    ("you make no sense.", &[2]),
    ("doesnt make sense", &[2]),
    ("that's not what i asked.", &[1]),
    ("no it's not", &[]),
    ("i never said i speak spanish, what are you doing?", &[1]),
    ("I SAID HELLO", &[1]),
    ("what?", &[]),
];

/// Max F1 over every observed threshold plus one above all scores.
pub fn brute_max_f1(scores: &[f64], labels: &[u8]) -> f64 {
    let mut thresholds: Vec<f64> = scores.to_vec();
    thresholds.push(f64::INFINITY);
    thresholds
        .into_iter()
        .map(|th| {
            let tp = scores
                .iter()
                .zip(labels)
                .filter(|(s, y)| **s >= th && **y == 1)
                .count() as f64;
            let pp = scores.iter().filter(|s| **s >= th).count() as f64;
            let pos = labels.iter().filter(|y| **y == 1).count() as f64;
            let p = if pp == 0.0 { 0.0 } else { tp / pp };
            let r = if pos == 0.0 { 0.0 } else { tp / pos };
            if p + r == 0.0 {
                0.0
            } else {
                2.0 * p * r / (p + r)
            }
        })
        .fold(0.0, f64::max)
}

/// 1-based rank of `gold` by counting candidates that beat it; equal scores
/// at lower indices beat it too.
pub fn brute_rank(scores: &[f64], gold: usize) -> usize {
    1 + scores
        .iter()
        .enumerate()
        .filter(|&(i, &s)| s > scores[gold] || (s == scores[gold] && i < gold))
        .count()
}
