//! Small descriptive statistics and the exact Wilcoxon signed-rank test.

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation (`n - 1` denominator); 0 for fewer than two values.
pub fn std_dev(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

/// Standard error of the mean.
pub fn sem(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    std_dev(xs) / (xs.len() as f64).sqrt()
}

/// One-sided exact Wilcoxon signed-rank test of `x > y` on paired samples.
///
/// Zero differences are dropped; tied magnitudes get average ranks and the
/// null distribution is enumerated over the actual (tied) ranks. Returns
/// `P(W+ >= observed)`, which is 1 when every difference is zero.
pub fn wilcoxon_greater(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len(), "paired samples");
    let mut d: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).filter(|v| *v != 0.0).collect();
    if d.is_empty() {
        return 1.0;
    }
    d.sort_by(|a, b| a.abs().total_cmp(&b.abs()));
    // Doubled average ranks stay integral.
    let mut ranks2 = vec![0usize; d.len()];
    let mut i = 0;
    while i < d.len() {
        let mut j = i;
        while j + 1 < d.len() && d[j + 1].abs() == d[i].abs() {
            j += 1;
        }
        // ranks i+1..=j+1 averaged, doubled
        let r2 = i + j + 2;
        ranks2[i..=j].iter_mut().for_each(|r| *r = r2);
        i = j + 1;
    }
    let observed: usize = d.iter().zip(&ranks2).filter(|(v, _)| **v > 0.0).map(|(_, r)| r).sum();
    let total: usize = ranks2.iter().sum();
    // counts[s] = number of sign patterns with doubled W+ = s
    let mut counts = vec![0f64; total + 1];
    counts[0] = 1.0;
    for &r in &ranks2 {
        for s in (r..=total).rev() {
            counts[s] += counts[s - r];
        }
    }
    let tail: f64 = counts[observed..].iter().sum();
    tail / 2f64.powi(d.len() as i32)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn descriptive() {
        assert_eq!(mean(&[1.0, 2.0, 3.0]), 2.0);
        assert_eq!(std_dev(&[4.0, 4.0]), 0.0);
        assert_eq!(std_dev(&[7.0]), 0.0);
        assert!((std_dev(&[1.0, 3.0]) - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn all_positive_differences() {
        // 10 positive differences: p = 2^-10
        let x: Vec<f64> = (1..=10).map(|i| i as f64).collect();
        let y = vec![0.0; 10];
        assert!((wilcoxon_greater(&x, &y) - 1.0 / 1024.0).abs() < 1e-15);
        assert_eq!(wilcoxon_greater(&y, &y), 1.0);
    }

    #[test]
    fn small_table_value() {
        // n = 5, W+ = 12 of 15: P(W+ >= 12) = 5/32
        let x = [1.0, 2.0, -3.0, 4.0, 5.0];
        let p = wilcoxon_greater(&x, &[0.0; 5]);
        assert!((p - 5.0 / 32.0).abs() < 1e-15, "{p}");
    }
}
