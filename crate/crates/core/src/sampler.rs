//! Collapsed Gibbs sampling for LDA over a patient × code count matrix.
//!
//! Each occurrence of a code in a patient file is one token carrying a topic
//! label. A sweep visits every token once, in a fixed order (patients
//! ascending, then columns ascending, then repetitions), removes it from the
//! count tables and redraws its label from
//!
//! ```text
//! P(z = t | rest) ∝ (n_tc[t][c] + η) / (n_t[t] + V·η) · (n_it[i][t] + α)
//! ```
//!
//! where η is the topic-code prior and α the patient-topic prior. Topic
//! labels are 0-based internally.

use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::corpus::CorpusMatrix;
use crate::error::{Error, Result};
use crate::model::TopicModel;

/// Name of the generator recorded in model files.
pub const RNG_NAME: &str = "chacha8";

pub const DEFAULT_BURN_IN: u64 = 4000;
pub const DEFAULT_KEEP: u64 = 1;
pub const DEFAULT_TOPIC_CODE_PRIOR: f64 = 0.1;
/// Numerator of the patient-topic prior; the prior itself is this over K (or M).
pub const DEFAULT_DOC_TOPIC_SCALE: f64 = 50.0;

/// Builds the generator for a chain. Chains of a sweep use `master + index`.
pub fn chain_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub k: usize,
    /// Symmetric Dirichlet concentration over topics, per patient.
    pub doc_topic_prior: f64,
    /// Symmetric Dirichlet concentration over codes, per topic.
    pub topic_code_prior: f64,
}

impl Hyperparams {
    /// Defaults: patient-topic prior 50/K, topic-code prior 0.1.
    pub fn new(k: usize) -> Self {
        PriorTemplate::default().resolve(k, 0)
    }

    pub fn with_priors(k: usize, doc_topic_prior: f64, topic_code_prior: f64) -> Self {
        Self {
            k,
            doc_topic_prior,
            topic_code_prior,
        }
    }

    /// K = 1 is accepted as a degenerate single-topic model.
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::invalid("number of topics must be at least 1"));
        }
        if self.k > u32::MAX as usize {
            return Err(Error::invalid("number of topics too large"));
        }
        for (name, v) in [
            ("doc_topic_prior", self.doc_topic_prior),
            ("topic_code_prior", self.topic_code_prior),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::invalid(format!(
                    "{name} must be positive and finite, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// How the patient-topic prior depends on K and on the number of patients.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum DocTopicPrior {
    Fixed(f64),
    /// `scale / K`
    OverTopics(f64),
    /// `scale / M`
    OverPatients(f64),
}

/// Hyperparameters with K left open, for sweeping over a grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriorTemplate {
    pub doc_topic: DocTopicPrior,
    pub topic_code_prior: f64,
}

impl Default for PriorTemplate {
    fn default() -> Self {
        Self {
            doc_topic: DocTopicPrior::OverTopics(DEFAULT_DOC_TOPIC_SCALE),
            topic_code_prior: DEFAULT_TOPIC_CODE_PRIOR,
        }
    }
}

impl PriorTemplate {
    /// The `50/M` preset.
    pub fn per_patient() -> Self {
        Self {
            doc_topic: DocTopicPrior::OverPatients(DEFAULT_DOC_TOPIC_SCALE),
            ..Self::default()
        }
    }

    pub fn resolve(&self, k: usize, n_patients: usize) -> Hyperparams {
        let doc_topic_prior = match self.doc_topic {
            DocTopicPrior::Fixed(v) => v,
            DocTopicPrior::OverTopics(s) => s / k as f64,
            DocTopicPrior::OverPatients(s) => s / n_patients as f64,
        };
        Hyperparams {
            k,
            doc_topic_prior,
            topic_code_prior: self.topic_code_prior,
        }
    }
}

/// Token assignments and the count tables they induce.
#[derive(Debug, Clone)]
pub struct GibbsState {
    hp: Hyperparams,
    n_codes: usize,
    /// Token range of patient i is `offsets[i]..offsets[i + 1]`.
    offsets: Vec<usize>,
    token_code: Vec<u32>,
    z: Vec<u32>,
    /// Code-major: `n_ct[c * K + t]`.
    n_ct: Vec<u32>,
    /// `n_it[i * K + t]`.
    n_it: Vec<u32>,
    n_t: Vec<u64>,
    seed: u64,
    sweeps: u64,
    rng: ChaCha8Rng,
    weights: Vec<f64>,
}

impl PartialEq for GibbsState {
    fn eq(&self, other: &Self) -> bool {
        self.hp == other.hp
            && self.n_codes == other.n_codes
            && self.offsets == other.offsets
            && self.token_code == other.token_code
            && self.z == other.z
            && self.n_ct == other.n_ct
            && self.n_it == other.n_it
            && self.n_t == other.n_t
            && self.seed == other.seed
            && self.sweeps == other.sweeps
            && self.rng == other.rng
    }
}

impl GibbsState {
    /// Expands the matrix into tokens and draws every label uniformly.
    pub fn init(matrix: &CorpusMatrix, hp: Hyperparams, seed: u64) -> Result<Self> {
        hp.validate()?;
        let total = matrix.total_tokens();
        if total > u32::MAX as u64 {
            return Err(Error::invalid(format!(
                "{total} tokens exceed the supported maximum"
            )));
        }
        if hp.k as u64 > total {
            warn!("K = {} exceeds the number of tokens ({total})", hp.k);
        }
        let k = hp.k;
        let v = matrix.n_codes();
        let m = matrix.n_patients();
        let mut rng = chain_rng(seed);

        let mut offsets = Vec::with_capacity(m + 1);
        let mut token_code = Vec::with_capacity(total as usize);
        offsets.push(0);
        for row in matrix.rows() {
            for &(c, n) in row {
                token_code.extend(std::iter::repeat_n(c as u32, n as usize));
            }
            offsets.push(token_code.len());
        }

        let mut state = Self {
            hp,
            n_codes: v,
            offsets,
            z: Vec::with_capacity(token_code.len()),
            token_code,
            n_ct: vec![0; v * k],
            n_it: vec![0; m * k],
            n_t: vec![0; k],
            seed,
            sweeps: 0,
            rng: chain_rng(0),
            weights: vec![0.0; k],
        };
        for i in 0..m {
            for j in state.offsets[i]..state.offsets[i + 1] {
                let t = rng.random_range(0..k as u32);
                let c = state.token_code[j] as usize;
                state.z.push(t);
                state.n_ct[c * k + t as usize] += 1;
                state.n_it[i * k + t as usize] += 1;
                state.n_t[t as usize] += 1;
            }
        }
        state.rng = rng;
        Ok(state)
    }

    pub fn hyperparams(&self) -> Hyperparams {
        self.hp
    }

    pub fn n_topics(&self) -> usize {
        self.hp.k
    }

    pub fn n_codes(&self) -> usize {
        self.n_codes
    }

    pub fn n_patients(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn n_tokens(&self) -> usize {
        self.z.len()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn sweeps(&self) -> u64 {
        self.sweeps
    }

    /// Topic labels in sweep order.
    pub fn assignments(&self) -> &[u32] {
        &self.z
    }

    /// Code of every token, in sweep order.
    pub fn token_codes(&self) -> &[u32] {
        &self.token_code
    }

    pub fn patient_tokens(&self, i: usize) -> std::ops::Range<usize> {
        self.offsets[i]..self.offsets[i + 1]
    }

    pub fn topic_code_count(&self, t: usize, c: usize) -> u64 {
        self.n_ct[c * self.hp.k + t] as u64
    }

    pub fn patient_topic_count(&self, i: usize, t: usize) -> u64 {
        self.n_it[i * self.hp.k + t] as u64
    }

    pub fn topic_totals(&self) -> &[u64] {
        &self.n_t
    }

    /// K × V topic-code counts.
    pub fn topic_code_counts(&self) -> Vec<Vec<u64>> {
        let k = self.hp.k;
        (0..k)
            .map(|t| {
                (0..self.n_codes)
                    .map(|c| self.n_ct[c * k + t] as u64)
                    .collect()
            })
            .collect()
    }

    /// M × K patient-topic counts.
    pub fn patient_topic_counts(&self) -> Vec<Vec<u64>> {
        self.n_it
            .chunks(self.hp.k)
            .map(|row| row.iter().map(|&n| n as u64).collect())
            .collect()
    }

    /// Resamples every token once.
    pub fn sweep(&mut self) -> Result<()> {
        let k = self.hp.k;
        let eta = self.hp.topic_code_prior;
        let v_eta = self.n_codes as f64 * eta;
        let alpha = self.hp.doc_topic_prior;

        for i in 0..self.n_patients() {
            let doc = &mut self.n_it[i * k..(i + 1) * k];
            for j in self.offsets[i]..self.offsets[i + 1] {
                let c = self.token_code[j] as usize;
                let old = self.z[j] as usize;
                let words = &mut self.n_ct[c * k..(c + 1) * k];
                if words[old] == 0 || doc[old] == 0 || self.n_t[old] == 0 {
                    return Err(Error::Inconsistent(format!(
                        "token {j} (patient {i}, code {c}) labelled {old} but its counts are zero"
                    )));
                }
                words[old] -= 1;
                doc[old] -= 1;
                self.n_t[old] -= 1;

                let mut total = 0.0;
                for t in 0..k {
                    total += (words[t] as f64 + eta) / (self.n_t[t] as f64 + v_eta)
                        * (doc[t] as f64 + alpha);
                    self.weights[t] = total;
                }
                let u = self.rng.random::<f64>() * total;
                let new = self.weights.iter().position(|&w| u < w).unwrap_or(k - 1);

                words[new] += 1;
                doc[new] += 1;
                self.n_t[new] += 1;
                self.z[j] = new as u32;
            }
        }
        self.sweeps += 1;
        Ok(())
    }

    /// Recounts every table from the assignments and compares.
    pub fn check_invariants(&self) -> Result<()> {
        let k = self.hp.k;
        let mut n_ct = vec![0u32; self.n_ct.len()];
        let mut n_it = vec![0u32; self.n_it.len()];
        let mut n_t = vec![0u64; k];
        for i in 0..self.n_patients() {
            for j in self.patient_tokens(i) {
                let t = self.z[j] as usize;
                if t >= k {
                    return Err(Error::Inconsistent(format!("token {j} has label {t} ≥ K")));
                }
                n_ct[self.token_code[j] as usize * k + t] += 1;
                n_it[i * k + t] += 1;
                n_t[t] += 1;
            }
        }
        if n_ct != self.n_ct {
            return Err(Error::Inconsistent(
                "topic-code counts disagree with labels".into(),
            ));
        }
        if n_it != self.n_it {
            return Err(Error::Inconsistent(
                "patient-topic counts disagree with labels".into(),
            ));
        }
        if n_t != self.n_t {
            return Err(Error::Inconsistent(
                "topic totals disagree with labels".into(),
            ));
        }
        Ok(())
    }

    /// log P(codes | z) with the topic-code distributions integrated out.
    pub fn log_likelihood(&self) -> f64 {
        let k = self.hp.k;
        let eta = self.hp.topic_code_prior;
        let v_eta = self.n_codes as f64 * eta;
        let ln_gamma_eta = ln_gamma(eta);
        let ln_gamma_v_eta = ln_gamma(v_eta);
        let mut ll = 0.0;
        for t in 0..k {
            let mut topic = ln_gamma_v_eta - ln_gamma(self.n_t[t] as f64 + v_eta);
            for c in 0..self.n_codes {
                let n = self.n_ct[c * k + t];
                if n > 0 {
                    topic += ln_gamma(n as f64 + eta) - ln_gamma_eta;
                }
            }
            ll += topic;
        }
        ll
    }

    /// Smoothed topic-code estimate, K × V.
    pub fn estimate_phi(&self) -> Vec<Vec<f64>> {
        phi_from_counts(&self.topic_code_counts(), self.hp.topic_code_prior)
    }

    /// Smoothed patient-topic estimate, M × K.
    pub fn estimate_theta(&self) -> Vec<Vec<f64>> {
        theta_from_counts(&self.patient_topic_counts(), self.hp.doc_topic_prior)
    }
}

/// `log P(codes | z)` from a K × V count table; zero cells contribute nothing.
pub fn log_likelihood_from_counts(n_tc: &[Vec<u64>], topic_code_prior: f64) -> f64 {
    let eta = topic_code_prior;
    let Some(v) = n_tc.first().map(Vec::len) else {
        return 0.0;
    };
    let v_eta = v as f64 * eta;
    let ln_gamma_eta = ln_gamma(eta);
    let ln_gamma_v_eta = ln_gamma(v_eta);
    n_tc.iter()
        .map(|row| {
            let n_t: u64 = row.iter().sum();
            let mut topic = ln_gamma_v_eta - ln_gamma(n_t as f64 + v_eta);
            for &n in row.iter().filter(|&&n| n > 0) {
                topic += ln_gamma(n as f64 + eta) - ln_gamma_eta;
            }
            topic
        })
        .sum()
}

/// `Φ(t, c) = (n_tc + η) / (n_t + V·η)`.
pub fn phi_from_counts(n_tc: &[Vec<u64>], topic_code_prior: f64) -> Vec<Vec<f64>> {
    n_tc.iter()
        .map(|row| smooth_row(row, topic_code_prior))
        .collect()
}

/// `θ(i, t) = (n_it + α) / (N_i + K·α)`.
pub fn theta_from_counts(n_it: &[Vec<u64>], doc_topic_prior: f64) -> Vec<Vec<f64>> {
    n_it.iter()
        .map(|row| smooth_row(row, doc_topic_prior))
        .collect()
}

fn smooth_row(row: &[u64], prior: f64) -> Vec<f64> {
    let denom = row.iter().sum::<u64>() as f64 + row.len() as f64 * prior;
    row.iter().map(|&n| (n as f64 + prior) / denom).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainConfig {
    pub burn_in: u64,
    pub keep: u64,
    /// Average Φ over the `keep` final sweeps instead of using the last state.
    pub average_phi: bool,
}

impl Default for ChainConfig {
    fn default() -> Self {
        Self {
            burn_in: DEFAULT_BURN_IN,
            keep: DEFAULT_KEEP,
            average_phi: false,
        }
    }
}

impl ChainConfig {
    pub fn new(burn_in: u64, keep: u64) -> Self {
        Self {
            burn_in,
            keep,
            average_phi: false,
        }
    }
}

/// Runs `burn_in + keep` sweeps from a fresh state and returns both the
/// fitted model and the final state.
pub fn run_chain_with_state(
    matrix: &CorpusMatrix,
    hp: Hyperparams,
    seed: u64,
    cfg: ChainConfig,
) -> Result<(TopicModel, GibbsState)> {
    if cfg.keep == 0 {
        return Err(Error::invalid("keep must be at least 1"));
    }
    let mut state = GibbsState::init(matrix, hp, seed)?;
    for _ in 0..cfg.burn_in {
        state.sweep()?;
    }
    let mut phi_sum: Option<Vec<Vec<f64>>> = None;
    for _ in 0..cfg.keep {
        state.sweep()?;
        if cfg.average_phi {
            let phi = state.estimate_phi();
            match phi_sum.as_mut() {
                None => phi_sum = Some(phi),
                Some(acc) => {
                    for (a, p) in acc.iter_mut().flatten().zip(phi.iter().flatten()) {
                        *a += p;
                    }
                }
            }
        }
    }
    let phi = match phi_sum {
        Some(mut acc) => {
            for row in &mut acc {
                let s: f64 = row.iter().sum();
                row.iter_mut().for_each(|x| *x /= s);
            }
            acc
        }
        None => state.estimate_phi(),
    };
    let model = TopicModel {
        hyperparams: hp,
        seed,
        chain: cfg,
        rng: RNG_NAME.to_owned(),
        vocabulary: matrix.codes().to_vec(),
        phi,
        theta: Some(state.estimate_theta()),
        n_tc: Some(state.topic_code_counts()),
        log_likelihood: state.log_likelihood(),
        sweeps: state.sweeps(),
        config: None,
    };
    Ok((model, state))
}

pub fn run_chain(
    matrix: &CorpusMatrix,
    hp: Hyperparams,
    seed: u64,
    cfg: ChainConfig,
) -> Result<TopicModel> {
    run_chain_with_state(matrix, hp, seed, cfg).map(|(model, _)| model)
}
