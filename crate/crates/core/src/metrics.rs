//! Topic evaluation: top-codes, entropy, Jensen-Shannon divergence and the
//! topic-specific versus corpus-wide occurrence split.
//!
//! Entropy is reported in bits, JSD in nats (bounded by ln 2).

use serde::Serialize;

use crate::error::{Error, Result};

pub const DEFAULT_TOP_CODE_THRESHOLD: f64 = 0.01;

const NORMALIZATION_TOL: f64 = 1e-6;

fn check_distribution(p: &[f64], what: &str) -> Result<()> {
    if p.is_empty() {
        return Err(Error::invalid(format!("{what} is empty")));
    }
    if let Some(x) = p.iter().find(|x| !(x.is_finite() && **x >= 0.0)) {
        return Err(Error::invalid(format!("{what} has invalid entry {x}")));
    }
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > NORMALIZATION_TOL {
        return Err(Error::invalid(format!("{what} sums to {sum}, not 1")));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TopCodes {
    pub topic: usize,
    /// `(code index, probability)`, descending by probability.
    pub entries: Vec<(usize, f64)>,
    pub threshold: f64,
    pub cumulative: f64,
}

/// Codes of a topic whose probability strictly exceeds `threshold`.
pub fn top_codes(topic: usize, phi_row: &[f64], threshold: f64) -> Result<TopCodes> {
    check_distribution(phi_row, "topic distribution")?;
    if !(0.0..1.0).contains(&threshold) {
        return Err(Error::invalid(format!(
            "threshold must lie in [0, 1), got {threshold}"
        )));
    }
    let mut entries: Vec<(usize, f64)> = phi_row
        .iter()
        .copied()
        .enumerate()
        .filter(|&(_, p)| p > threshold)
        .collect();
    entries.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let cumulative = entries.iter().map(|&(_, p)| p).sum();
    Ok(TopCodes {
        topic,
        entries,
        threshold,
        cumulative,
    })
}

/// Shannon entropy in bits, with `0 · log 0 = 0`.
pub fn topic_entropy(phi_row: &[f64]) -> Result<f64> {
    check_distribution(phi_row, "topic distribution")?;
    let h: f64 = -phi_row
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| p * p.log2())
        .sum::<f64>();
    Ok(h.max(0.0))
}

/// Jensen-Shannon divergence in nats.
///
/// Each coordinate contributes `½ x ln(x/m) + ½ y ln(y/m)`, evaluated so that
/// swapping `x` and `y` gives a bit-identical result.
pub fn jsd(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::invalid(format!(
            "distributions differ in dimension ({} vs {})",
            x.len(),
            y.len()
        )));
    }
    check_distribution(x, "first distribution")?;
    check_distribution(y, "second distribution")?;
    Ok(jsd_unchecked(x, y))
}

fn jsd_unchecked(x: &[f64], y: &[f64]) -> f64 {
    let term = |p: f64, m: f64| if p > 0.0 { p * (p / m).ln() } else { 0.0 };
    let mut total = 0.0;
    for (&a, &b) in x.iter().zip(y) {
        let m = 0.5 * (a + b);
        if m == 0.0 {
            continue;
        }
        total += 0.5 * (term(a, m) + term(b, m));
    }
    total.clamp(0.0, std::f64::consts::LN_2)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct JsdSummary {
    /// K × K, symmetric with a zero diagonal.
    pub matrix: Vec<Vec<f64>>,
    pub mean: f64,
    /// Population standard deviation over the distinct pairs.
    pub sd: f64,
    pub median: f64,
    pub min: f64,
}

/// Pairwise JSD between topics, summarized over the K(K−1)/2 distinct pairs.
pub fn jsd_matrix(phi: &[Vec<f64>]) -> Result<JsdSummary> {
    let k = phi.len();
    if k < 2 {
        return Err(Error::invalid(
            "need at least two topics for pairwise divergence",
        ));
    }
    for (t, row) in phi.iter().enumerate() {
        check_distribution(row, &format!("topic {t}"))?;
        if row.len() != phi[0].len() {
            return Err(Error::invalid(format!(
                "topic {t} has a different dimension"
            )));
        }
    }
    let mut matrix = vec![vec![0.0; k]; k];
    let mut pairs = Vec::with_capacity(k * (k - 1) / 2);
    for a in 0..k {
        for b in a + 1..k {
            let d = jsd_unchecked(&phi[a], &phi[b]);
            matrix[a][b] = d;
            matrix[b][a] = d;
            pairs.push(d);
        }
    }
    let n = pairs.len() as f64;
    let mean = pairs.iter().sum::<f64>() / n;
    let sd = (pairs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / n).sqrt();
    pairs.sort_by(f64::total_cmp);
    let mid = pairs.len() / 2;
    let median = if pairs.len() % 2 == 0 {
        0.5 * (pairs[mid - 1] + pairs[mid])
    } else {
        pairs[mid]
    };
    Ok(JsdSummary {
        matrix,
        mean,
        sd,
        median,
        min: pairs[0],
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OccurrenceRow {
    pub code: usize,
    pub probability: f64,
    /// Tokens of this code assigned to the topic.
    pub topic_count: u64,
    /// Tokens of this code over all topics.
    pub corpus_count: u64,
}

/// Topic-specific and corpus-wide occurrence counts for each top-code of
/// `topic`, using the final-state topic-code counts.
pub fn occurrence_split(
    n_tc: &[Vec<u64>],
    phi: &[Vec<f64>],
    topic: usize,
    threshold: f64,
) -> Result<Vec<OccurrenceRow>> {
    if topic >= n_tc.len() || topic >= phi.len() {
        return Err(Error::invalid(format!(
            "topic {topic} out of range (K = {})",
            n_tc.len()
        )));
    }
    let top = top_codes(topic, &phi[topic], threshold)?;
    top.entries
        .iter()
        .map(|&(c, p)| {
            if c >= n_tc[topic].len() {
                return Err(Error::invalid(format!("code {c} outside the count table")));
            }
            Ok(OccurrenceRow {
                code: c,
                probability: p,
                topic_count: n_tc[topic][c],
                corpus_count: n_tc.iter().map(|row| row[c]).sum(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::LN_2;

    use proptest::prelude::*;

    fn uniform(n: usize) -> Vec<f64> {
        vec![1.0 / n as f64; n]
    }

    #[test]
    fn top_codes_filter_and_sum() {
        let t = top_codes(0, &[0.5, 0.3, 0.19, 0.008, 0.002], 0.01).unwrap();
        assert_eq!(
            t.entries.iter().map(|e| e.0).collect::<Vec<_>>(),
            vec![0, 1, 2]
        );
        assert!((t.cumulative - 0.99).abs() < 1e-12);

        let t = top_codes(0, &uniform(180), 0.01).unwrap();
        assert!(t.entries.is_empty());
        assert_eq!(t.cumulative, 0.0);
    }

    #[test]
    fn top_codes_rejects_unnormalized() {
        assert!(top_codes(0, &[0.5, 0.3], 0.01).is_err());
        assert!(top_codes(0, &[0.5, 0.5], 1.0).is_err());
    }

    #[test]
    fn entropy_values() {
        assert!((topic_entropy(&uniform(180)).unwrap() - 7.491).abs() < 1e-3);
        assert_eq!(topic_entropy(&[0.0, 1.0, 0.0]).unwrap(), 0.0);
        assert!((topic_entropy(&[0.5, 0.25, 0.25]).unwrap() - 1.5).abs() < 1e-15);
        assert!(topic_entropy(&[0.5, 0.6]).is_err());
    }

    #[test]
    fn jsd_closed_forms() {
        let p = [0.2, 0.3, 0.5];
        assert_eq!(jsd(&p, &p).unwrap(), 0.0);
        assert!((jsd(&[1.0, 0.0], &[0.0, 1.0]).unwrap() - LN_2).abs() < 1e-12);
        // ½ ln(4/3) + ¼ ln(2/3) + ¼ ln 2
        assert!((jsd(&[1.0, 0.0], &[0.5, 0.5]).unwrap() - 0.215762).abs() < 1e-6);
    }

    #[test]
    fn jsd_validation() {
        assert!(jsd(&[1.0], &[0.5, 0.5]).is_err());
        assert!(jsd(&[0.9, 0.0], &[0.5, 0.5]).is_err());
        assert!(jsd(&[1.5, -0.5], &[0.5, 0.5]).is_err());
    }

    #[test]
    fn jsd_matrix_summaries() {
        let s = jsd_matrix(&[vec![0.3, 0.7], vec![0.3, 0.7]]).unwrap();
        assert_eq!((s.mean, s.median, s.min), (0.0, 0.0, 0.0));

        let s = jsd_matrix(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        for v in [s.mean, s.median, s.min] {
            assert!((v - LN_2).abs() < 1e-12);
        }
        assert_eq!(s.sd, 0.0);

        // pairs: (a,b) = ln2, (a,c) = 0, (b,c) = ln2 → median ln2, min 0
        let s = jsd_matrix(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        assert!((s.median - LN_2).abs() < 1e-12);
        assert_eq!(s.min, 0.0);
        assert!((s.mean - 2.0 * LN_2 / 3.0).abs() < 1e-12);

        // even number of pairs: median is the mean of the two central values
        let rows = vec![
            vec![1.0, 0.0],
            vec![0.0, 1.0],
            vec![0.5, 0.5],
            vec![1.0, 0.0],
        ];
        let s = jsd_matrix(&rows).unwrap();
        let mut pairs = Vec::new();
        for a in 0..4 {
            for b in a + 1..4 {
                pairs.push(s.matrix[a][b]);
            }
        }
        pairs.sort_by(f64::total_cmp);
        assert_eq!(s.median, 0.5 * (pairs[2] + pairs[3]));
        assert!(jsd_matrix(&[vec![1.0]]).is_err());
    }

    #[test]
    fn occurrence_split_concentrated_code() {
        let n_tc = vec![vec![0, 5], vec![0, 7], vec![0, 0], vec![100, 0]];
        let phi = vec![
            vec![0.01, 0.99],
            vec![0.01, 0.99],
            vec![0.5, 0.5],
            vec![0.99, 0.01],
        ];
        let rows = occurrence_split(&n_tc, &phi, 3, 0.01).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(
            (rows[0].code, rows[0].topic_count, rows[0].corpus_count),
            (0, 100, 100)
        );
        assert!(occurrence_split(&n_tc, &phi, 4, 0.01).is_err());
    }

    fn distribution(n: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(prop_oneof![Just(0.0), 1e-9f64..1.0], n).prop_filter_map(
            "all zero",
            |w| {
                let s: f64 = w.iter().sum();
                (s > 0.0).then(|| w.iter().map(|x| x / s).collect())
            },
        )
    }

    proptest! {
        #[test]
        fn jsd_symmetric_and_bounded((x, y) in (1usize..20).prop_flat_map(|n| (distribution(n), distribution(n)))) {
            let a = jsd(&x, &y).unwrap();
            let b = jsd(&y, &x).unwrap();
            prop_assert_eq!(a.to_bits(), b.to_bits());
            prop_assert!((0.0..=LN_2 + 1e-12).contains(&a));
            prop_assert_eq!(jsd(&x, &x).unwrap(), 0.0);
        }

        #[test]
        fn disjoint_supports_saturate(n in 2usize..30, split in 1usize..29) {
            let split = split.min(n - 1);
            let mut x = vec![0.0; n];
            let mut y = vec![0.0; n];
            for v in x.iter_mut().take(split) { *v = 1.0 / split as f64; }
            for v in y.iter_mut().skip(split) { *v = 1.0 / (n - split) as f64; }
            prop_assert!((jsd(&x, &y).unwrap() - LN_2).abs() < 1e-12);
        }

        #[test]
        fn entropy_bounded(p in (1usize..200).prop_flat_map(distribution)) {
            let h = topic_entropy(&p).unwrap();
            prop_assert!(h >= 0.0 && h <= (p.len() as f64).log2() + 1e-12);
        }

        #[test]
        fn top_code_mass_respects_threshold(p in (1usize..100).prop_flat_map(distribution), th in 0.0f64..0.5) {
            let t = top_codes(0, &p, th).unwrap();
            prop_assert!(t.cumulative <= 1.0 + 1e-9);
            prop_assert!(t.entries.iter().all(|&(_, q)| q > th));
            prop_assert!(t.entries.windows(2).all(|w| w[0].1 >= w[1].1));
        }

        #[test]
        fn split_conserves_counts(counts in prop::collection::vec(prop::collection::vec(0u64..50, 6), 2..5)) {
            let phi = crate::sampler::phi_from_counts(&counts, 0.1);
            for t in 0..counts.len() {
                for row in occurrence_split(&counts, &phi, t, 0.0).unwrap() {
                    let total: u64 = counts.iter().map(|r| r[row.code]).sum();
                    prop_assert_eq!(row.corpus_count, total);
                }
            }
        }
    }

    #[test]
    fn entropy_of_uniform_hits_the_bound() {
        for n in [2usize, 7, 180, 250] {
            let h = topic_entropy(&uniform(n)).unwrap();
            assert!((h - (n as f64).log2()).abs() < 1e-9);
        }
    }
}
