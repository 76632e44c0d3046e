//! Browser bindings for the interactive page in `www/`.
//!
//! Three operations are exported: fit a model to a planted-topic corpus and
//! compare it with the truth, evaluate JSD and entropy for two hand-edited
//! distributions, and trace the log-likelihood curve over a K range. Each
//! returns a JSON string for the page script to draw.

use cotopic::sampler::{DocTopicPrior, PriorTemplate};
use cotopic::selection::{select_k, sweep_k};
use cotopic::{
    generate_corpus, jsd, jsd_matrix, match_topics, run_chain, topic_entropy, ChainConfig,
    Hyperparams, SynthConfig,
};
use serde::Serialize;
use wasm_bindgen::prelude::*;

#[derive(Debug, Serialize)]
pub struct RecoveryView {
    pub tokens: u64,
    /// True topics, in their original order.
    pub phi_true: Vec<Vec<f64>>,
    /// Estimated topics, reordered so row `t` is matched to true topic `t`.
    pub phi_est: Vec<Vec<f64>>,
    pub matched_jsd: Vec<f64>,
    pub mean_matched_jsd: f64,
    pub entropy_bits: Vec<f64>,
    pub jsd_between_topics: Vec<Vec<f64>>,
    pub log_likelihood: f64,
}

#[allow(clippy::too_many_arguments)]
pub fn recovery(
    k_true: usize,
    n_codes: usize,
    n_patients: usize,
    mean_length: f64,
    concentration: f64,
    sweeps: u64,
    topic_code_prior: f64,
    seed: u64,
) -> Result<RecoveryView, String> {
    let cfg = SynthConfig {
        k_true,
        n_codes,
        n_patients,
        mean_length,
        topic_code_concentration: concentration,
        seed,
        ..SynthConfig::default()
    };
    let (matrix, truth) = generate_corpus(&cfg).map_err(|e| e.to_string())?;
    let hp = Hyperparams::with_priors(k_true, 50.0 / k_true as f64, topic_code_prior);
    let model = run_chain(&matrix, hp, seed, ChainConfig::new(sweeps.max(1) - 1, 1))
        .map_err(|e| e.to_string())?;
    let matching = match_topics(&model.phi, &truth.phi).map_err(|e| e.to_string())?;

    let mut phi_est = vec![Vec::new(); k_true];
    let mut matched_jsd = vec![0.0; k_true];
    for (est, &t) in matching.permutation.iter().enumerate() {
        phi_est[t] = model.phi[est].clone();
        matched_jsd[t] = matching.costs[est];
    }
    let entropy_bits = phi_est
        .iter()
        .map(|row| topic_entropy(row))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| e.to_string())?;
    let jsd_between_topics = if k_true >= 2 {
        jsd_matrix(&phi_est).map_err(|e| e.to_string())?.matrix
    } else {
        vec![vec![0.0]]
    };
    Ok(RecoveryView {
        tokens: matrix.total_tokens(),
        phi_true: truth.phi,
        phi_est,
        matched_jsd,
        mean_matched_jsd: matching.mean,
        entropy_bits,
        jsd_between_topics,
        log_likelihood: model.log_likelihood,
    })
}

#[derive(Debug, Serialize)]
pub struct DivergenceView {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub jsd_nats: f64,
    pub entropy_x_bits: f64,
    pub entropy_y_bits: f64,
    pub max_entropy_bits: f64,
}

fn normalize(w: &[f64]) -> Result<Vec<f64>, String> {
    if w.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
        return Err("weights must be non-negative".into());
    }
    let s: f64 = w.iter().sum();
    if s <= 0.0 {
        return Err("weights must not all be zero".into());
    }
    Ok(w.iter().map(|x| x / s).collect())
}

/// JSD and entropies of two weight vectors after normalizing each to sum to one.
pub fn divergence(x: &[f64], y: &[f64]) -> Result<DivergenceView, String> {
    let x = normalize(x)?;
    let y = normalize(y)?;
    let jsd_nats = jsd(&x, &y).map_err(|e| e.to_string())?;
    Ok(DivergenceView {
        jsd_nats,
        entropy_x_bits: topic_entropy(&x).map_err(|e| e.to_string())?,
        entropy_y_bits: topic_entropy(&y).map_err(|e| e.to_string())?,
        max_entropy_bits: (x.len() as f64).log2(),
        x,
        y,
    })
}

#[derive(Debug, Serialize)]
pub struct CurveView {
    pub grid: Vec<usize>,
    pub mean_log_likelihood: Vec<f64>,
    pub selected_k: usize,
}

#[allow(clippy::too_many_arguments)]
pub fn likelihood_curve(
    k_true: usize,
    n_codes: usize,
    n_patients: usize,
    mean_length: f64,
    k_min: usize,
    k_max: usize,
    sweeps: u64,
    topic_code_prior: f64,
    seed: u64,
) -> Result<CurveView, String> {
    if k_min < 2 || k_max < k_min {
        return Err("need 2 ≤ K min ≤ K max".into());
    }
    let cfg = SynthConfig {
        k_true,
        n_codes,
        n_patients,
        mean_length,
        seed,
        ..SynthConfig::default()
    };
    let (matrix, _) = generate_corpus(&cfg).map_err(|e| e.to_string())?;
    let priors = PriorTemplate {
        doc_topic: DocTopicPrior::OverTopics(50.0),
        topic_code_prior,
    };
    let grid: Vec<usize> = (k_min..=k_max).collect();
    let result = sweep_k(
        &matrix,
        priors,
        &grid,
        1,
        seed,
        ChainConfig::new(sweeps.max(1) - 1, 1),
    )
    .map_err(|e| e.to_string())?;
    Ok(CurveView {
        selected_k: select_k(&result).map_err(|e| e.to_string())?,
        grid,
        mean_log_likelihood: result.means,
    })
}

fn to_js<T: Serialize>(r: Result<T, String>) -> Result<String, JsValue> {
    r.and_then(|v| serde_json::to_string(&v).map_err(|e| e.to_string()))
        .map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen(js_name = recoverPlantedTopics)]
#[allow(clippy::too_many_arguments)]
pub fn recover_planted_topics(
    k_true: usize,
    n_codes: usize,
    n_patients: usize,
    mean_length: f64,
    concentration: f64,
    sweeps: u32,
    topic_code_prior: f64,
    seed: u32,
) -> Result<String, JsValue> {
    to_js(recovery(
        k_true,
        n_codes,
        n_patients,
        mean_length,
        concentration,
        sweeps as u64,
        topic_code_prior,
        seed as u64,
    ))
}

#[wasm_bindgen(js_name = compareDistributions)]
pub fn compare_distributions(x: Vec<f64>, y: Vec<f64>) -> Result<String, JsValue> {
    to_js(divergence(&x, &y))
}

#[wasm_bindgen(js_name = likelihoodCurve)]
#[allow(clippy::too_many_arguments)]
pub fn likelihood_curve_js(
    k_true: usize,
    n_codes: usize,
    n_patients: usize,
    mean_length: f64,
    k_min: usize,
    k_max: usize,
    sweeps: u32,
    topic_code_prior: f64,
    seed: u32,
) -> Result<String, JsValue> {
    to_js(likelihood_curve(
        k_true,
        n_codes,
        n_patients,
        mean_length,
        k_min,
        k_max,
        sweeps as u64,
        topic_code_prior,
        seed as u64,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recovery_view_is_aligned() {
        let v = recovery(3, 20, 150, 20.0, 0.05, 150, 0.1, 4).unwrap();
        assert_eq!(v.phi_est.len(), 3);
        assert_eq!(v.phi_true.len(), 3);
        assert!(v.mean_matched_jsd < 0.1, "{}", v.mean_matched_jsd);
        for (t, row) in v.phi_est.iter().enumerate() {
            let d = jsd(row, &v.phi_true[t]).unwrap();
            assert!((d - v.matched_jsd[t]).abs() < 1e-12);
        }
    }

    #[test]
    fn divergence_normalizes_inputs() {
        let v = divergence(&[2.0, 0.0], &[1.0, 1.0]).unwrap();
        assert_eq!(v.x, vec![1.0, 0.0]);
        assert!((v.jsd_nats - 0.215762).abs() < 1e-6);
        assert_eq!(v.entropy_y_bits, 1.0);
        assert!(divergence(&[0.0, 0.0], &[1.0, 1.0]).is_err());
        assert!(divergence(&[1.0], &[1.0, 1.0]).is_err());
    }

    #[test]
    fn curve_covers_the_range() {
        let v = likelihood_curve(2, 15, 60, 15.0, 2, 4, 50, 1.0, 9).unwrap();
        assert_eq!(v.grid, vec![2, 3, 4]);
        assert_eq!(v.mean_log_likelihood.len(), 3);
        assert!(v.grid.contains(&v.selected_k));
        assert!(likelihood_curve(2, 15, 60, 15.0, 1, 4, 50, 1.0, 9).is_err());
    }
}
