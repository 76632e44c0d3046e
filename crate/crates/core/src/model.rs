//! Fitted topic model and its JSON file format.
//!
//! Reals are written with 17 significant digits so a model file reloads to
//! the identical bit patterns.

use std::io::{Read, Write};

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::value::RawValue;

use crate::error::{Error, Result};
use crate::sampler::{ChainConfig, Hyperparams};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct TopicModel {
    pub hyperparams: Hyperparams,
    pub seed: u64,
    pub chain: ChainConfig,
    pub rng: String,
    /// Codes in column order.
    pub vocabulary: Vec<String>,
    /// K × V, rows sum to one.
    pub phi: Vec<Vec<f64>>,
    /// M × K, rows sum to one.
    pub theta: Option<Vec<Vec<f64>>>,
    /// Final-state topic-code counts.
    pub n_tc: Option<Vec<Vec<u64>>>,
    pub log_likelihood: f64,
    pub sweeps: u64,
    /// Resolved run configuration of whatever produced the model.
    pub config: Option<serde_json::Value>,
}

impl TopicModel {
    pub fn n_topics(&self) -> usize {
        self.phi.len()
    }

    pub fn n_codes(&self) -> usize {
        self.vocabulary.len()
    }

    pub fn code_index(&self, code: &str) -> Option<usize> {
        self.vocabulary.iter().position(|c| c == code)
    }

    /// Total tokens per topic from the stored counts.
    pub fn topic_mass(&self) -> Option<Vec<u64>> {
        self.n_tc
            .as_ref()
            .map(|n| n.iter().map(|row| row.iter().sum()).collect())
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(&ModelFile::from(self))?;
        s.push('\n');
        Ok(s)
    }

    pub fn write_json<W: Write>(&self, mut out: W) -> Result<()> {
        out.write_all(self.to_json()?.as_bytes())?;
        Ok(())
    }

    pub fn read_json<R: Read>(input: R) -> Result<Self> {
        let file: ModelFile = serde_json::from_reader(input)?;
        file.try_into()
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Self::read_json(text.as_bytes())
    }
}

/// Formats a finite real with 17 significant digits.
pub fn format_real(x: f64) -> String {
    format!("{x:.16e}")
}

mod real17 {
    use super::*;

    pub fn raw<E: serde::ser::Error>(x: f64) -> std::result::Result<Box<RawValue>, E> {
        if !x.is_finite() {
            return Err(E::custom(format!("cannot serialize non-finite real {x}")));
        }
        RawValue::from_string(format_real(x)).map_err(E::custom)
    }

    pub fn serialize<S: Serializer>(x: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
        raw::<S::Error>(*x)?.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
        f64::deserialize(d)
    }
}

mod real17_matrix {
    use super::*;

    pub fn serialize<S: Serializer>(m: &[Vec<f64>], s: S) -> std::result::Result<S::Ok, S::Error> {
        let raw = m
            .iter()
            .map(|row| row.iter().map(|&x| real17::raw::<S::Error>(x)).collect())
            .collect::<std::result::Result<Vec<Vec<_>>, _>>()?;
        raw.serialize(s)
    }

    pub fn serialize_opt<S: Serializer>(
        m: &Option<Vec<Vec<f64>>>,
        s: S,
    ) -> std::result::Result<S::Ok, S::Error> {
        match m {
            Some(m) => serialize(m, s),
            None => s.serialize_none(),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format_version: u32,
    #[serde(rename = "K")]
    k: usize,
    #[serde(with = "real17")]
    doc_topic_prior: f64,
    #[serde(with = "real17")]
    topic_code_prior: f64,
    seed: u64,
    burn_in: u64,
    keep: u64,
    #[serde(default)]
    average_phi: bool,
    rng: String,
    vocabulary: Vec<String>,
    #[serde(serialize_with = "real17_matrix::serialize")]
    phi: Vec<Vec<f64>>,
    #[serde(serialize_with = "real17_matrix::serialize_opt", default)]
    theta: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    n_tc: Option<Vec<Vec<u64>>>,
    #[serde(with = "real17")]
    log_likelihood: f64,
    sweeps: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    config: Option<serde_json::Value>,
}

impl From<&TopicModel> for ModelFile {
    fn from(m: &TopicModel) -> Self {
        ModelFile {
            format_version: FORMAT_VERSION,
            k: m.hyperparams.k,
            doc_topic_prior: m.hyperparams.doc_topic_prior,
            topic_code_prior: m.hyperparams.topic_code_prior,
            seed: m.seed,
            burn_in: m.chain.burn_in,
            keep: m.chain.keep,
            average_phi: m.chain.average_phi,
            rng: m.rng.clone(),
            vocabulary: m.vocabulary.clone(),
            phi: m.phi.clone(),
            theta: m.theta.clone(),
            n_tc: m.n_tc.clone(),
            log_likelihood: m.log_likelihood,
            sweeps: m.sweeps,
            config: m.config.clone(),
        }
    }
}

impl TryFrom<ModelFile> for TopicModel {
    type Error = Error;

    fn try_from(f: ModelFile) -> Result<Self> {
        if f.format_version != FORMAT_VERSION {
            return Err(Error::invalid(format!(
                "unsupported model format_version {}",
                f.format_version
            )));
        }
        let v = f.vocabulary.len();
        if f.phi.len() != f.k || f.phi.iter().any(|r| r.len() != v) {
            return Err(Error::invalid("phi must be K rows of V reals"));
        }
        if let Some(n) = &f.n_tc {
            if n.len() != f.k || n.iter().any(|r| r.len() != v) {
                return Err(Error::invalid("n_tc must be K rows of V integers"));
            }
        }
        if let Some(theta) = &f.theta {
            if theta.iter().any(|r| r.len() != f.k) {
                return Err(Error::invalid("theta rows must have K entries"));
            }
        }
        let hyperparams = Hyperparams::with_priors(f.k, f.doc_topic_prior, f.topic_code_prior);
        hyperparams.validate()?;
        Ok(TopicModel {
            hyperparams,
            seed: f.seed,
            chain: ChainConfig {
                burn_in: f.burn_in,
                keep: f.keep,
                average_phi: f.average_phi,
            },
            rng: f.rng,
            vocabulary: f.vocabulary,
            phi: f.phi,
            theta: f.theta,
            n_tc: f.n_tc,
            log_likelihood: f.log_likelihood,
            sweeps: f.sweeps,
            config: f.config,
        })
    }
}
