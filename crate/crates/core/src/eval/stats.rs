use statrs::distribution::{ContinuousCDF, StudentsT};

use super::EvalError;

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TTest {
    pub t: f64,
    pub df: f64,
    /// One-tailed p-value for `mean(treatment) > mean(control)`.
    pub p: f64,
}

/// Sample mean and unbiased standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Student's two-sample t-test with pooled variance, alternative
/// `mean(treatment) > mean(control)`.
pub fn one_tailed_t_test(control: &[f64], treatment: &[f64]) -> Result<TTest, EvalError> {
    let (na, nb) = (control.len(), treatment.len());
    if na < 2 || nb < 2 {
        return Err(EvalError::TooFewSamples);
    }
    let (ma, sa) = mean_std(control);
    let (mb, sb) = mean_std(treatment);
    let df = (na + nb - 2) as f64;
    let pooled = (((na - 1) as f64 * sa * sa + (nb - 1) as f64 * sb * sb) / df).sqrt();
    let diff = mb - ma;
    let se = pooled * (1.0 / na as f64 + 1.0 / nb as f64).sqrt();
    if se == 0.0 {
        let (t, p) = match diff.partial_cmp(&0.0) {
            Some(std::cmp::Ordering::Greater) => (f64::INFINITY, 0.0),
            Some(std::cmp::Ordering::Less) => (f64::NEG_INFINITY, 1.0),
            _ => (0.0, 0.5),
        };
        return Ok(TTest { t, df, p });
    }
    let t = diff / se;
    let dist = StudentsT::new(0.0, 1.0, df).expect("df is positive");
    Ok(TTest {
        t,
        df,
        p: dist.sf(t),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn degenerate_variance() {
        let a = [1.0, 1.0];
        assert_eq!(one_tailed_t_test(&a, &[2.0, 2.0]).unwrap().p, 0.0);
        assert_eq!(one_tailed_t_test(&a, &[0.0, 0.0]).unwrap().p, 1.0);
        assert_eq!(one_tailed_t_test(&a, &a).unwrap().p, 0.5);
        assert!(one_tailed_t_test(&[1.0], &a).is_err());
    }

    #[test]
    fn mean_std_known() {
        let (m, s) = mean_std(&[2.0, 4.0, 4.0, 4.0, 5.0, 5.0, 7.0, 9.0]);
        assert_eq!(m, 5.0);
        assert!((s - (32.0f64 / 7.0).sqrt()).abs() < 1e-12);
    }
}
