//! Planted-topic recovery and K selection on a synthetic 5-topic corpus.
//!
//! ```text
//! cargo run --release --example planted -- [synth_seed] [topic_code_prior] [doc prior]
//! ```
//!
//! The doc prior is `topics` (50/K, the default), `patients` (50/M) or a
//! fixed number.

use cotopic::sampler::{DocTopicPrior, PriorTemplate};
use cotopic::selection::{select_k, sweep_k};
use cotopic::{generate_corpus, match_topics, run_chain, ChainConfig, SynthConfig};

fn main() -> cotopic::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let arg = |i: usize| args.get(i).map(String::as_str);
    let synth_seed = arg(0).map_or(Ok(1), str::parse).expect("synth seed");
    let mut priors = match arg(2) {
        None | Some("topics") => PriorTemplate::default(),
        Some("patients") => PriorTemplate::per_patient(),
        Some(x) => PriorTemplate {
            doc_topic: DocTopicPrior::Fixed(x.parse().expect("fixed doc prior")),
            ..PriorTemplate::default()
        },
    };
    if let Some(eta) = arg(1) {
        priors.topic_code_prior = eta.parse().expect("topic-code prior");
    }

    let cfg = SynthConfig {
        seed: synth_seed,
        ..SynthConfig::default()
    };
    let (matrix, truth) = generate_corpus(&cfg)?;
    println!(
        "{} patients, {} tokens",
        matrix.n_patients(),
        matrix.total_tokens()
    );

    let chain = ChainConfig::new(1000, 1);
    for seed in 0..5 {
        let hp = priors.resolve(5, matrix.n_patients());
        let model = run_chain(&matrix, hp, seed, chain)?;
        let m = match_topics(&model.phi, &truth.phi)?;
        println!("K = 5, chain seed {seed}: mean matched JSD {:.4}", m.mean);
    }

    let grid: Vec<usize> = (2..=10).collect();
    let result = sweep_k(&matrix, priors, &grid, 3, 100, chain)?;
    for (k, mean) in grid.iter().zip(&result.means) {
        println!("K = {k:2}: mean log-likelihood {mean:.1}");
    }
    println!("selected K = {}", select_k(&result)?);
    Ok(())
}
