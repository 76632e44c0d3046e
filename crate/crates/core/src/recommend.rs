//! Suggesting co-occurring codes for a query code through the topic it is
//! most strongly associated with.

use std::fmt;
use std::str::FromStr;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::metrics::top_codes;
use crate::model::TopicModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum RankingMode {
    /// `Φ(t, c) · w_t`, normalized, with `w_t` the topic's share of all tokens.
    #[default]
    Posterior,
    /// `Φ(t, c)`.
    Likelihood,
}

impl fmt::Display for RankingMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RankingMode::Posterior => "posterior",
            RankingMode::Likelihood => "likelihood",
        })
    }
}

impl FromStr for RankingMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "posterior" => Ok(RankingMode::Posterior),
            "likelihood" => Ok(RankingMode::Likelihood),
            other => Err(Error::invalid(format!("unknown ranking mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TopicScore {
    pub id: usize,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Suggestion {
    pub code: String,
    pub probability: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Recommendation {
    pub query: String,
    pub mode: RankingMode,
    /// Every topic, by descending score (ties: lower id first).
    pub topics: Vec<TopicScore>,
    pub suggestions: Vec<Suggestion>,
}

impl Recommendation {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

fn nearest_codes(model: &TopicModel, code: &str, n: usize) -> Vec<String> {
    let mut scored: Vec<(usize, &String)> = model
        .vocabulary
        .iter()
        .map(|c| (strsim::levenshtein(code, c), c))
        .collect();
    scored.sort();
    scored.into_iter().take(n).map(|(_, c)| c.clone()).collect()
}

pub fn recommend(
    model: &TopicModel,
    code: &str,
    mode: RankingMode,
    threshold: f64,
) -> Result<Recommendation> {
    let c = model.code_index(code).ok_or_else(|| Error::UnknownCode {
        code: code.to_owned(),
        nearest: nearest_codes(model, code, 3),
    })?;
    let likelihood: Vec<f64> = model.phi.iter().map(|row| row[c]).collect();
    let scores = match mode {
        RankingMode::Likelihood => likelihood,
        RankingMode::Posterior => {
            let mass = model.topic_mass().ok_or(Error::MissingStatistics)?;
            let total: u64 = mass.iter().sum();
            if total == 0 {
                return Err(Error::MissingStatistics);
            }
            let joint: Vec<f64> = likelihood
                .iter()
                .zip(&mass)
                .map(|(p, &n)| p * (n as f64 / total as f64))
                .collect();
            let norm: f64 = joint.iter().sum();
            if norm > 0.0 {
                joint.iter().map(|x| x / norm).collect()
            } else {
                vec![1.0 / joint.len() as f64; joint.len()]
            }
        }
    };
    let mut topics: Vec<TopicScore> = scores
        .iter()
        .enumerate()
        .map(|(id, &score)| TopicScore { id, score })
        .collect();
    topics.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.id.cmp(&b.id)));

    let best = topics[0].id;
    let suggestions = top_codes(best, &model.phi[best], threshold)?
        .entries
        .into_iter()
        .filter(|&(idx, _)| idx != c)
        .map(|(idx, p)| Suggestion {
            code: model.vocabulary[idx].clone(),
            probability: p,
        })
        .collect();
    Ok(Recommendation {
        query: code.to_owned(),
        mode,
        topics,
        suggestions,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampler::{ChainConfig, Hyperparams};

    fn model(phi: Vec<Vec<f64>>, n_tc: Option<Vec<Vec<u64>>>) -> TopicModel {
        let k = phi.len();
        let v = phi[0].len();
        TopicModel {
            hyperparams: Hyperparams::new(k),
            seed: 0,
            chain: ChainConfig::default(),
            rng: "chacha8".into(),
            vocabulary: [
                "Anemia",
                "Goiter",
                "Hypothyroidism",
                "Hypertension",
                "Cough",
            ]
            .iter()
            .take(v)
            .map(|s| s.to_string())
            .collect(),
            phi,
            theta: None,
            n_tc,
            log_likelihood: 0.0,
            sweeps: 1,
            config: None,
        }
    }

    fn three_topics() -> TopicModel {
        model(
            vec![
                vec![0.0, 0.0, 0.0, 0.1, 0.9],
                vec![0.0, 0.5, 0.0, 0.5, 0.0],
                vec![0.4, 0.3, 0.2, 0.095, 0.005],
            ],
            Some(vec![
                vec![0, 0, 0, 1, 9],
                vec![0, 5, 0, 5, 0],
                vec![8, 6, 4, 2, 0],
            ]),
        )
    }

    #[test]
    fn concentrated_code_picks_its_topic() {
        let m = three_topics();
        for mode in [RankingMode::Posterior, RankingMode::Likelihood] {
            let r = recommend(&m, "Anemia", mode, 0.01).unwrap();
            assert_eq!(r.topics[0].id, 2);
            let codes: Vec<&str> = r.suggestions.iter().map(|s| s.code.as_str()).collect();
            assert_eq!(codes, ["Goiter", "Hypothyroidism", "Hypertension"]);
        }
    }

    #[test]
    fn posterior_scores_normalize() {
        let m = three_topics();
        let r = recommend(&m, "Hypertension", RankingMode::Posterior, 0.01).unwrap();
        let s: f64 = r.topics.iter().map(|t| t.score).sum();
        assert!((s - 1.0).abs() < 1e-9);
        assert!(r.suggestions.iter().all(|s| s.code != "Hypertension"));
        assert!(r.topics.windows(2).all(|w| w[0].score >= w[1].score));
    }

    #[test]
    fn single_topic_model() {
        let m = model(vec![vec![0.5, 0.3, 0.2]], Some(vec![vec![5, 3, 2]]));
        let r = recommend(&m, "Goiter", RankingMode::Posterior, 0.01).unwrap();
        assert_eq!(r.topics, vec![TopicScore { id: 0, score: 1.0 }]);
        let codes: Vec<&str> = r.suggestions.iter().map(|s| s.code.as_str()).collect();
        assert_eq!(codes, ["Anemia", "Hypothyroidism"]);
    }

    #[test]
    fn errors() {
        let m = three_topics();
        match recommend(&m, "Anemai", RankingMode::Likelihood, 0.01) {
            Err(Error::UnknownCode { nearest, .. }) => assert_eq!(nearest[0], "Anemia"),
            other => panic!("{other:?}"),
        }
        let bare = model(three_topics().phi, None);
        assert!(matches!(
            recommend(&bare, "Anemia", RankingMode::Posterior, 0.01),
            Err(Error::MissingStatistics)
        ));
        assert!(recommend(&bare, "Anemia", RankingMode::Likelihood, 0.01).is_ok());
    }

    #[test]
    fn json_shape() {
        let r = recommend(&three_topics(), "Anemia", RankingMode::Posterior, 0.01).unwrap();
        let v: serde_json::Value = serde_json::from_str(&r.to_json().unwrap()).unwrap();
        assert_eq!(v["query"], "Anemia");
        assert_eq!(v["mode"], "posterior");
        assert_eq!(v["topics"][0]["id"], 2);
        assert_eq!(v["suggestions"][0]["code"], "Goiter");
    }
}
