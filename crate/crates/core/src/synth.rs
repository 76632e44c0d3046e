//! Synthetic corpora drawn from the LDA generative process, an exhaustive
//! posterior oracle for tiny instances, and topic matching for scoring
//! recovery up to label permutation.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Poisson};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::corpus::{CorpusMatrix, RecordSet};
use crate::error::{Error, Result};
use crate::metrics::jsd;
use crate::sampler::{GibbsState, Hyperparams};

/// Largest number of joint assignments [`exact_posterior`] will enumerate.
pub const MAX_ENUMERATION: u64 = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub k_true: usize,
    pub n_codes: usize,
    pub n_patients: usize,
    /// Mean of the Poisson document length, truncated to at least one token.
    pub mean_length: f64,
    pub topic_code_concentration: f64,
    pub doc_topic_concentration: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            k_true: 5,
            n_codes: 100,
            n_patients: 1000,
            mean_length: 40.0,
            topic_code_concentration: 0.01,
            doc_topic_concentration: 0.1,
            seed: 1,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k_true == 0 || self.n_codes == 0 || self.n_patients == 0 {
            return Err(Error::invalid("K, V and M must all be positive"));
        }
        for (name, v) in [
            ("mean_length", self.mean_length),
            ("topic_code_concentration", self.topic_code_concentration),
            ("doc_topic_concentration", self.doc_topic_concentration),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::invalid(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub codes: Vec<String>,
    pub patients: Vec<String>,
    /// K × V true topic-code distributions.
    pub phi: Vec<Vec<f64>>,
    /// M × K true patient-topic distributions.
    pub theta: Vec<Vec<f64>>,
    /// Topic of every generated token, per patient, in generation order.
    pub z: Vec<Vec<u32>>,
    /// Code of every generated token, aligned with `z`.
    pub tokens: Vec<Vec<u32>>,
    pub config: SynthConfig,
}

impl GroundTruth {
    pub fn write_json<W: Write>(&self, mut out: W) -> Result<()> {
        serde_json::to_writer(&mut out, self)?;
        writeln!(out)?;
        Ok(())
    }
}

/// Symmetric Dirichlet draw done in log space so very small concentrations
/// do not underflow to an all-zero vector.
fn sample_dirichlet<R: Rng>(rng: &mut R, concentration: f64, n: usize) -> Vec<f64> {
    // For a < 1: G(a) = G(a + 1) · U^(1/a).
    let boosted = Gamma::new(concentration + 1.0, 1.0).expect("positive shape");
    let logs: Vec<f64> = (0..n)
        .map(|_| {
            let g: f64 = boosted.sample(rng);
            let u: f64 = rng.random::<f64>();
            g.ln() + (1.0 - u).ln() / concentration
        })
        .collect();
    let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = weights.iter().sum();
    weights.iter().map(|w| w / sum).collect()
}

fn sample_categorical<R: Rng>(rng: &mut R, p: &[f64]) -> usize {
    let u = rng.random::<f64>();
    let mut acc = 0.0;
    for (i, &w) in p.iter().enumerate() {
        acc += w;
        if u < acc {
            return i;
        }
    }
    // Rounding left the total a hair under one; fall back to the last
    // category with positive mass.
    p.iter().rposition(|&w| w > 0.0).unwrap_or(p.len() - 1)
}

fn label(prefix: char, i: usize, n: usize) -> String {
    let width = n.saturating_sub(1).to_string().len();
    format!("{prefix}{i:0width$}")
}

/// Draws Φ*, θ*, document lengths, topics and codes, in that order.
pub fn generate_corpus(cfg: &SynthConfig) -> Result<(CorpusMatrix, GroundTruth)> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (k, v, m) = (cfg.k_true, cfg.n_codes, cfg.n_patients);
    let phi: Vec<Vec<f64>> = (0..k)
        .map(|_| sample_dirichlet(&mut rng, cfg.topic_code_concentration, v))
        .collect();
    let theta: Vec<Vec<f64>> = (0..m)
        .map(|_| sample_dirichlet(&mut rng, cfg.doc_topic_concentration, k))
        .collect();
    let lengths = Poisson::new(cfg.mean_length).map_err(|e| Error::invalid(e.to_string()))?;

    let mut rows = Vec::with_capacity(m);
    let mut z = Vec::with_capacity(m);
    let mut tokens = Vec::with_capacity(m);
    for theta_i in &theta {
        let n = loop {
            let n = lengths.sample(&mut rng) as usize;
            if n >= 1 {
                break n;
            }
        };
        let mut counts = vec![0u64; v];
        let mut zi = Vec::with_capacity(n);
        let mut ci = Vec::with_capacity(n);
        for _ in 0..n {
            let t = sample_categorical(&mut rng, theta_i);
            let c = sample_categorical(&mut rng, &phi[t]);
            counts[c] += 1;
            zi.push(t as u32);
            ci.push(c as u32);
        }
        rows.push(
            counts
                .iter()
                .enumerate()
                .filter(|(_, &n)| n > 0)
                .map(|(c, &n)| (c, n))
                .collect(),
        );
        z.push(zi);
        tokens.push(ci);
    }
    let codes: Vec<String> = (0..v).map(|c| label('C', c, v)).collect();
    let patients: Vec<String> = (0..m).map(|i| label('P', i, m)).collect();
    let matrix = CorpusMatrix::from_rows(
        codes.clone(),
        patients.clone(),
        rows,
        crate::corpus::Weighting::Count,
    )?;
    let truth = GroundTruth {
        codes,
        patients,
        phi,
        theta,
        z,
        tokens,
        config: *cfg,
    };
    Ok((matrix, truth))
}

/// Converts a matrix back to records so it can be written as record CSV.
pub fn to_records(matrix: &CorpusMatrix) -> RecordSet {
    let mut records = RecordSet::new();
    for (i, patient) in matrix.patients().iter().enumerate() {
        for &(c, n) in matrix.row(i) {
            records.add(patient, &matrix.codes()[c], n);
        }
    }
    records
}

/// Exact posterior quantities of a tiny instance, per token in sweep order.
#[derive(Debug, Clone, PartialEq)]
pub struct ExactPosterior {
    /// `marginals[j][t] = P(z_j = t | codes)`.
    pub marginals: Vec<Vec<f64>>,
    /// `coassignment[a][b] = P(z_a = z_b | codes)`; label-switching invariant.
    pub coassignment: Vec<Vec<f64>>,
}

/// Enumerates every joint assignment, scoring each with the collapsed joint
/// `P(codes, z)` (both Dirichlet-multinomial factors).
pub fn exact_posterior(matrix: &CorpusMatrix, hp: Hyperparams) -> Result<ExactPosterior> {
    hp.validate()?;
    // token list: (patient, code) in sweep order
    let mut tokens: Vec<(usize, usize)> = Vec::new();
    for i in 0..matrix.n_patients() {
        for &(c, n) in matrix.row(i) {
            for _ in 0..n {
                tokens.push((i, c));
            }
        }
    }
    let k = hp.k;
    let n_tok = tokens.len();
    let size = (k as f64).powi(n_tok as i32);
    if size > MAX_ENUMERATION as f64 {
        return Err(Error::TooLarge {
            size,
            limit: MAX_ENUMERATION,
        });
    }
    let (v, m) = (matrix.n_codes(), matrix.n_patients());
    let (alpha, eta) = (hp.doc_topic_prior, hp.topic_code_prior);

    let log_joint = |z: &[usize]| -> f64 {
        let mut n_tc = vec![vec![0usize; v]; k];
        let mut n_it = vec![vec![0usize; k]; m];
        for (&(i, c), &t) in tokens.iter().zip(z) {
            n_tc[t][c] += 1;
            n_it[i][t] += 1;
        }
        let dm = |counts: &[usize], prior: f64| -> f64 {
            let total: usize = counts.iter().sum();
            let dim = counts.len() as f64;
            let mut s = ln_gamma(dim * prior) - ln_gamma(total as f64 + dim * prior);
            for &n in counts {
                s += ln_gamma(n as f64 + prior) - ln_gamma(prior);
            }
            s
        };
        n_tc.iter().map(|r| dm(r, eta)).sum::<f64>()
            + n_it.iter().map(|r| dm(r, alpha)).sum::<f64>()
    };

    let total = size as usize;
    let mut z = vec![0usize; n_tok];
    let mut scores = Vec::with_capacity(total);
    let mut states = Vec::with_capacity(total);
    for _ in 0..total {
        scores.push(log_joint(&z));
        states.push(z.clone());
        // mixed-radix increment
        for digit in z.iter_mut() {
            *digit += 1;
            if *digit < k {
                break;
            }
            *digit = 0;
        }
    }
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let norm: f64 = weights.iter().sum();

    let mut marginals = vec![vec![0.0; k]; n_tok];
    let mut coassignment = vec![vec![0.0; n_tok]; n_tok];
    for (z, w) in states.iter().zip(&weights) {
        let p = w / norm;
        for (j, &t) in z.iter().enumerate() {
            marginals[j][t] += p;
            for b in 0..n_tok {
                if z[b] == t {
                    coassignment[j][b] += p;
                }
            }
        }
    }
    Ok(ExactPosterior {
        marginals,
        coassignment,
    })
}

/// Per-token label frequencies and pairwise co-assignment frequencies of a
/// Gibbs chain, tallied over `sweeps` sweeps after `burn_in`.
pub fn sampled_posterior(
    matrix: &CorpusMatrix,
    hp: Hyperparams,
    seed: u64,
    burn_in: u64,
    sweeps: u64,
) -> Result<ExactPosterior> {
    if sweeps == 0 {
        return Err(Error::invalid("need at least one sampling sweep"));
    }
    let mut state = GibbsState::init(matrix, hp, seed)?;
    for _ in 0..burn_in {
        state.sweep()?;
    }
    let n = state.n_tokens();
    let k = hp.k;
    let mut label_counts = vec![vec![0u64; k]; n];
    let mut same = vec![vec![0u64; n]; n];
    for _ in 0..sweeps {
        state.sweep()?;
        let z = state.assignments();
        for a in 0..n {
            label_counts[a][z[a] as usize] += 1;
            for b in 0..n {
                same[a][b] += (z[a] == z[b]) as u64;
            }
        }
    }
    let f = |x: u64| x as f64 / sweeps as f64;
    Ok(ExactPosterior {
        marginals: label_counts
            .iter()
            .map(|r| r.iter().map(|&x| f(x)).collect())
            .collect(),
        coassignment: same
            .iter()
            .map(|r| r.iter().map(|&x| f(x)).collect())
            .collect(),
    })
}

/// Largest absolute entry-wise difference between two posterior summaries.
pub fn max_deviation(a: &ExactPosterior, b: &ExactPosterior) -> (f64, f64) {
    let diff = |x: &[Vec<f64>], y: &[Vec<f64>]| {
        x.iter()
            .flatten()
            .zip(y.iter().flatten())
            .map(|(p, q)| (p - q).abs())
            .fold(0.0, f64::max)
    };
    (
        diff(&a.marginals, &b.marginals),
        diff(&a.coassignment, &b.coassignment),
    )
}

/// The tiny instance used by the oracle check: two patients with two tokens
/// each over three codes.
pub fn tiny_instance() -> CorpusMatrix {
    CorpusMatrix::from_dense(
        vec!["a".into(), "b".into(), "c".into()],
        &[vec![2, 0, 0], vec![0, 1, 1]],
    )
    .expect("valid tiny instance")
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TopicMatching {
    /// `permutation[i]` is the true topic matched to estimated topic `i`.
    pub permutation: Vec<usize>,
    pub costs: Vec<f64>,
    pub mean: f64,
}

/// Optimal one-to-one matching of estimated to true topics under JSD cost.
pub fn match_topics(phi_est: &[Vec<f64>], phi_true: &[Vec<f64>]) -> Result<TopicMatching> {
    if phi_est.len() != phi_true.len() || phi_est.is_empty() {
        return Err(Error::invalid(format!(
            "topic counts differ or are zero ({} vs {})",
            phi_est.len(),
            phi_true.len()
        )));
    }
    let cost = phi_est
        .iter()
        .map(|e| {
            phi_true
                .iter()
                .map(|t| jsd(e, t))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let permutation = min_cost_assignment(&cost);
    let costs: Vec<f64> = permutation
        .iter()
        .enumerate()
        .map(|(i, &j)| cost[i][j])
        .collect();
    let mean = costs.iter().sum::<f64>() / costs.len() as f64;
    Ok(TopicMatching {
        permutation,
        costs,
        mean,
    })
}

/// Hungarian algorithm (shortest augmenting paths with potentials) on a
/// square cost matrix; returns the column assigned to each row.
pub fn min_cost_assignment(cost: &[Vec<f64>]) -> Vec<usize> {
    let n = cost.len();
    // 1-based arrays; index 0 is the virtual root.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut row_of_col = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        row_of_col[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = row_of_col[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[row_of_col[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if row_of_col[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            row_of_col[j0] = row_of_col[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0; n];
    for j in 1..=n {
        if row_of_col[j] > 0 {
            assignment[row_of_col[j] - 1] = j - 1;
        }
    }
    assignment
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn permutations(n: usize) -> Vec<Vec<usize>> {
        if n == 0 {
            return vec![vec![]];
        }
        let mut out = Vec::new();
        for p in permutations(n - 1) {
            for pos in 0..=p.len() {
                let mut q = p.clone();
                q.insert(pos, n - 1);
                out.push(q);
            }
        }
        out
    }

    fn total(cost: &[Vec<f64>], perm: &[usize]) -> f64 {
        perm.iter().enumerate().map(|(i, &j)| cost[i][j]).sum()
    }

    proptest! {
        #[test]
        fn assignment_is_optimal(cost in (1usize..6).prop_flat_map(|n| prop::collection::vec(prop::collection::vec(0.0f64..10.0, n), n))) {
            let perm = min_cost_assignment(&cost);
            let mut seen = perm.clone();
            seen.sort_unstable();
            prop_assert_eq!(seen, (0..cost.len()).collect::<Vec<_>>());
            let best = permutations(cost.len())
                .iter()
                .map(|p| total(&cost, p))
                .fold(f64::INFINITY, f64::min);
            prop_assert!((total(&cost, &perm) - best).abs() < 1e-9);
            let identity: Vec<usize> = (0..cost.len()).collect();
            prop_assert!(total(&cost, &perm) <= total(&cost, &identity) + 1e-9);
        }
    }

    #[test]
    fn matching_recovers_row_permutation() {
        let truth = vec![
            vec![0.7, 0.2, 0.1, 0.0],
            vec![0.0, 0.1, 0.2, 0.7],
            vec![0.25, 0.25, 0.25, 0.25],
        ];
        let est = vec![truth[2].clone(), truth[0].clone(), truth[1].clone()];
        let m = match_topics(&est, &truth).unwrap();
        assert_eq!(m.permutation, vec![2, 0, 1]);
        assert_eq!(m.mean, 0.0);

        let m = match_topics(&[vec![1.0, 0.0]], &[vec![0.5, 0.5]]).unwrap();
        assert_eq!(m.permutation, vec![0]);
        assert!((m.costs[0] - jsd(&[1.0, 0.0], &[0.5, 0.5]).unwrap()).abs() < 1e-15);
        assert!(match_topics(&truth, &truth[..2]).is_err());
    }

    #[test]
    fn generation_is_deterministic_and_consistent() {
        let cfg = SynthConfig {
            n_patients: 50,
            n_codes: 20,
            k_true: 3,
            mean_length: 8.0,
            seed: 5,
            ..SynthConfig::default()
        };
        let (m1, t1) = generate_corpus(&cfg).unwrap();
        let (m2, t2) = generate_corpus(&cfg).unwrap();
        assert_eq!(m1, m2);
        assert_eq!(t1, t2);
        let lengths: usize = t1.z.iter().map(Vec::len).sum();
        assert_eq!(m1.total_tokens() as usize, lengths);
        assert!(t1.z.iter().all(|z| !z.is_empty()));
        for row in t1.phi.iter().chain(&t1.theta) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        assert_eq!(m1.codes()[7], "C07");
        assert_eq!(m1.patients()[3], "P03");
    }

    #[test]
    fn sparse_dirichlet_never_collapses() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let p = sample_dirichlet(&mut rng, 0.001, 50);
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(p.iter().all(|x| x.is_finite() && *x >= 0.0));
        }
    }

    /// Chi-square statistic and the 1% critical value for its degrees of
    /// freedom (Wilson–Hilferty approximation).
    fn chi_square(observed: &[u64], expected_p: &[f64]) -> (f64, f64) {
        let n: u64 = observed.iter().sum();
        // pool cells with expected count < 5 into one bin
        let mut stat = 0.0;
        let mut bins = 0usize;
        let (mut pool_o, mut pool_e) = (0.0, 0.0);
        for (&o, &p) in observed.iter().zip(expected_p) {
            let e = p * n as f64;
            if e < 5.0 {
                pool_o += o as f64;
                pool_e += e;
            } else {
                stat += (o as f64 - e).powi(2) / e;
                bins += 1;
            }
        }
        if pool_e > 0.0 {
            stat += (pool_o - pool_e).powi(2) / pool_e.max(1e-300);
            bins += 1;
        }
        let df = (bins - 1) as f64;
        let z = 2.326_347_874_040_841; // 0.99 normal quantile
        let h = 2.0 / (9.0 * df);
        let crit = df * (1.0 - h + z * h.sqrt()).powi(3);
        (stat, crit)
    }

    #[test]
    fn single_topic_frequencies_follow_phi() {
        let cfg = SynthConfig {
            k_true: 1,
            n_codes: 30,
            n_patients: 1250,
            mean_length: 40.0,
            topic_code_concentration: 1.0,
            seed: 17,
            ..SynthConfig::default()
        };
        let (m, truth) = generate_corpus(&cfg).unwrap();
        assert!(truth.z.iter().flatten().all(|&t| t == 0));
        assert!(m.total_tokens() >= 45_000);
        let (stat, crit) = chi_square(&m.column_totals(), &truth.phi[0]);
        assert!(stat < crit, "chi-square {stat} ≥ critical {crit}");
    }

    #[test]
    fn exact_posterior_lone_token() {
        let m = CorpusMatrix::from_dense(vec!["a".into()], &[vec![1]]).unwrap();
        let post = exact_posterior(&m, Hyperparams::with_priors(2, 0.3, 0.1)).unwrap();
        assert_eq!(post.marginals, vec![vec![0.5, 0.5]]);
    }

    #[test]
    fn exact_posterior_properties() {
        let m = tiny_instance();
        let post = exact_posterior(&m, Hyperparams::with_priors(2, 25.0, 0.1)).unwrap();
        for row in &post.marginals {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            // symmetric priors: labels are exchangeable
            assert!((row[0] - row[1]).abs() < 1e-12);
        }
        // two copies of code a in patient 0
        assert!(post.marginals[0]
            .iter()
            .zip(&post.marginals[1])
            .all(|(a, b)| (a - b).abs() < 1e-12));
        assert!((post.coassignment[0][0] - 1.0).abs() < 1e-12);
        // sparse topic-code prior: identical codes pair up more often than chance
        assert!(post.coassignment[0][1] > 0.5);
    }

    #[test]
    fn exact_posterior_guard() {
        let m = CorpusMatrix::from_dense(vec!["a".into()], &[vec![21]]).unwrap();
        match exact_posterior(&m, Hyperparams::new(2)) {
            Err(Error::TooLarge { size, .. }) => assert_eq!(size, 2f64.powi(21)),
            other => panic!("expected guard error, got {other:?}"),
        }
    }

    #[test]
    fn records_round_trip_through_matrix() {
        let cfg = SynthConfig {
            n_patients: 10,
            n_codes: 6,
            k_true: 2,
            mean_length: 5.0,
            ..SynthConfig::default()
        };
        let (m, _) = generate_corpus(&cfg).unwrap();
        let r = to_records(&m);
        assert_eq!(r.n_patients(), 10);
        let total: u64 = r.iter().flat_map(|(_, c)| c.values()).sum();
        assert_eq!(total, m.total_tokens());
    }
}
