mod support;

use support::gradcheck::{classification_check, ranking_check, CoordinateCheck};

fn assert_all_close(checks: &[CoordinateCheck]) {
    assert!(checks.iter().filter(|c| c.is_informative()).count() >= 50);
    let worst = checks
        .iter()
        .max_by(|a, b| a.relative_error().total_cmp(&b.relative_error()))
        .unwrap();
    assert!(
        worst.relative_error() <= 1e-4,
        "worst coordinate {worst:?} rel err {}",
        worst.relative_error()
    );
}

#[test]
fn ranking_gradients_two_layers() {
    let checks = ranking_check(2, 120, 21);
    assert!(checks.len() >= 120);
    assert_all_close(&checks);
}

#[test]
fn classification_gradients_two_layers() {
    assert_all_close(&classification_check(2, 120, 22));
}

#[test]
fn gradients_hold_across_seeds() {
    for seed in 100..104 {
        assert_all_close(&ranking_check(1, 80, seed));
        assert_all_close(&classification_check(1, 80, seed));
    }
}
