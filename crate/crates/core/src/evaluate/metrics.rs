use crate::error::{Error, Result};

fn check_lengths(a: usize, b: usize, what: &str) -> Result<()> {
    if a != b {
        return Err(Error::LengthMismatch { what: what.into(), got: b, expected: a });
    }
    Ok(())
}

fn check_binary(labels: &[f64]) -> Result<()> {
    match labels.iter().find(|&&v| v != 0.0 && v != 1.0) {
        Some(v) => Err(Error::Metric(format!("labels must be 0 or 1, found {v}"))),
        None => Ok(()),
    }
}

/// Area under the cumulative uplift curve.
///
/// Rows are ranked by score, highest first (ties keep row order). For each
/// prefix of size `k` the cumulative uplift is `(mean_treated - mean_control) * k`;
/// a prefix missing one group repeats the previous value (0 before any is
/// defined). The result is the sum of the `n` prefix values divided by `n^2`.
pub fn auuc(scores: &[f64], outcome: &[f64], treated: &[bool]) -> Result<f64> {
    let n = scores.len();
    check_lengths(n, outcome.len(), "outcome")?;
    check_lengths(n, treated.len(), "treated mask")?;
    if scores.iter().chain(outcome).any(|v| !v.is_finite()) {
        return Err(Error::Metric("non-finite score or outcome".into()));
    }
    let n_treated = treated.iter().filter(|&&t| t).count();
    if n_treated == 0 || n_treated == n {
        return Err(Error::Metric("both treated and control rows are required".into()));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let (mut nt, mut nc, mut yt, mut yc) = (0usize, 0usize, 0.0, 0.0);
    let mut last = 0.0;
    let mut area = 0.0;
    for (pos, &i) in order.iter().enumerate() {
        if treated[i] {
            nt += 1;
            yt += outcome[i];
        } else {
            nc += 1;
            yc += outcome[i];
        }
        if nt > 0 && nc > 0 {
            last = (yt / nt as f64 - yc / nc as f64) * (pos + 1) as f64;
        }
        area += last;
    }
    Ok(area / (n as f64 * n as f64))
}

/// Probability that a random positive outscores a random negative (ties count half).
pub fn auc(scores: &[f64], labels: &[f64]) -> Result<f64> {
    let n = scores.len();
    check_lengths(n, labels.len(), "labels")?;
    check_binary(labels)?;
    if scores.iter().any(|v| !v.is_finite()) {
        return Err(Error::Metric("non-finite score".into()));
    }
    let n_pos = labels.iter().filter(|&&v| v == 1.0).count();
    let n_neg = n - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Metric("both classes are required".into()));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // 1-based average ranks over tie groups
    let mut rank_sum_pos = 0.0;
    let mut start = 0;
    while start < n {
        let mut end = start + 1;
        while end < n && scores[order[end]] == scores[order[start]] {
            end += 1;
        }
        let avg_rank = (start + 1 + end) as f64 / 2.0;
        let pos_in_group = order[start..end].iter().filter(|&&i| labels[i] == 1.0).count();
        rank_sum_pos += avg_rank * pos_in_group as f64;
        start = end;
    }
    let u = rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pair_count_auc(scores: &[f64], labels: &[f64]) -> f64 {
        let mut wins = 0.0;
        let mut pairs = 0.0;
        for i in 0..scores.len() {
            for j in 0..scores.len() {
                if labels[i] == 1.0 && labels[j] == 0.0 {
                    pairs += 1.0;
                    wins += if scores[i] > scores[j] {
                        1.0
                    } else if scores[i] == scores[j] {
                        0.5
                    } else {
                        0.0
                    };
                }
            }
        }
        wins / pairs
    }

    #[test]
    fn auc_perfect_and_reversed() {
        let labels = [0.0, 0.0, 1.0, 1.0];
        assert_eq!(auc(&[0.1, 0.2, 0.8, 0.9], &labels).unwrap(), 1.0);
        assert_eq!(auc(&[0.9, 0.8, 0.2, 0.1], &labels).unwrap(), 0.0);
        assert_eq!(auc(&[0.5; 4], &labels).unwrap(), 0.5);
    }

    #[test]
    fn auc_five_points_with_tie() {
        // positives 0.7, 0.4; negatives 0.4, 0.2, 0.9: wins 1 + 1 + 0 + 0.5 + 1 + 0 = 3.5 of 6
        let scores = [0.7, 0.4, 0.4, 0.2, 0.9];
        let labels = [1.0, 1.0, 0.0, 0.0, 0.0];
        let got = auc(&scores, &labels).unwrap();
        assert!((got - 3.5 / 6.0).abs() < 1e-15);
        assert_eq!(got, pair_count_auc(&scores, &labels));
    }

    #[test]
    fn auc_errors() {
        assert!(auc(&[0.1, 0.2], &[1.0, 1.0]).is_err());
        assert!(auc(&[0.1, 0.2], &[1.0, 2.0]).is_err());
        assert!(auc(&[0.1], &[1.0, 0.0]).is_err());
    }

    #[test]
    fn auuc_four_row_toy() {
        // order: T1 (0.9,y=1), C1 (0.8,y=0), C2 (0.2,y=1), T2 (0.1,y=0)
        // k=1: only treated, 0; k=2: (1 - 0)*2 = 2; k=3: (1 - 0.5)*3 = 1.5; k=4: (0.5 - 0.5)*4 = 0
        let scores = [0.9, 0.1, 0.8, 0.2];
        let y = [1.0, 0.0, 0.0, 1.0];
        let treated = [true, true, false, false];
        let got = auuc(&scores, &y, &treated).unwrap();
        assert!((got - 3.5 / 16.0).abs() < 1e-15);
    }

    #[test]
    fn auuc_ties_follow_row_order() {
        let y = [1.0, 0.0, 0.0, 1.0];
        let treated = [true, false, true, false];
        // all tied: order 0,1,2,3; k=1 -> 0; k=2 -> 2; k=3 -> (0.5-0)*3 = 1.5; k=4 -> 0
        assert!((auuc(&[0.0; 4], &y, &treated).unwrap() - 3.5 / 16.0).abs() < 1e-15);
    }

    #[test]
    fn auuc_errors() {
        assert!(auuc(&[0.1, 0.2], &[1.0, 0.0], &[true, true]).is_err());
        assert!(auuc(&[0.1, 0.2], &[1.0], &[true, false]).is_err());
        assert!(auuc(&[f64::NAN, 0.2], &[1.0, 0.0], &[true, false]).is_err());
    }
}
