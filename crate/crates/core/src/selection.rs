//! Choosing the number of topics by average data log-likelihood over
//! several seeded chains per candidate K.

use std::io::Write;

#[cfg(feature = "parallel")]
use rayon::prelude::*;
use serde::Serialize;

use crate::corpus::CorpusMatrix;
use crate::error::{Error, Result};
use crate::model::format_real;
use crate::sampler::{run_chain, ChainConfig, PriorTemplate};

pub const DEFAULT_CHAINS: usize = 5;

/// `5, 10, …, 100`.
pub fn default_grid() -> Vec<usize> {
    (5..=100).step_by(5).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ChainRun {
    pub chain: usize,
    pub seed: u64,
    pub log_likelihood: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KSweepResult {
    pub grid: Vec<usize>,
    pub chains: usize,
    /// `runs[g]` holds the chains for `grid[g]`, by chain index.
    pub runs: Vec<Vec<ChainRun>>,
    pub means: Vec<f64>,
}

impl KSweepResult {
    /// Assembles a result from per-K chain runs, computing the means.
    pub fn from_runs(grid: Vec<usize>, runs: Vec<Vec<ChainRun>>) -> Result<Self> {
        if grid.is_empty() || grid.len() != runs.len() {
            return Err(Error::invalid("grid and runs must be nonempty and aligned"));
        }
        let chains = runs[0].len();
        if chains == 0 || runs.iter().any(|r| r.len() != chains) {
            return Err(Error::invalid(
                "every K needs the same positive number of chains",
            ));
        }
        let means = runs
            .iter()
            .map(|r| r.iter().map(|c| c.log_likelihood).sum::<f64>() / chains as f64)
            .collect();
        Ok(Self {
            grid,
            chains,
            runs,
            means,
        })
    }

    /// `K<TAB>chain<TAB>seed<TAB>log_likelihood` per chain, then a
    /// `K<TAB>mean_ll` summary block.
    pub fn write_tsv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "K\tchain\tseed\tlog_likelihood")?;
        for (k, runs) in self.grid.iter().zip(&self.runs) {
            for r in runs {
                writeln!(
                    out,
                    "{k}\t{}\t{}\t{}",
                    r.chain,
                    r.seed,
                    format_real(r.log_likelihood)
                )?;
            }
        }
        writeln!(out)?;
        writeln!(out, "K\tmean_ll")?;
        for (k, mean) in self.grid.iter().zip(&self.means) {
            writeln!(out, "{k}\t{}", format_real(*mean))?;
        }
        Ok(())
    }
}

/// Seed of chain `index`: the master seed offset by the chain index. Every
/// K reuses the same chain seeds.
pub fn chain_seed(master_seed: u64, index: usize) -> u64 {
    master_seed.wrapping_add(index as u64)
}

/// Fits `chains` independent chains at every K of the grid.
pub fn sweep_k(
    matrix: &CorpusMatrix,
    priors: PriorTemplate,
    grid: &[usize],
    chains: usize,
    master_seed: u64,
    chain_cfg: ChainConfig,
) -> Result<KSweepResult> {
    if grid.is_empty() {
        return Err(Error::invalid("K grid is empty"));
    }
    if grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::invalid("K grid must be strictly increasing"));
    }
    if let Some(k) = grid.iter().find(|&&k| k < 2) {
        return Err(Error::invalid(format!("grid value K = {k} is below 2")));
    }
    if chains == 0 {
        return Err(Error::invalid("need at least one chain per K"));
    }
    let jobs: Vec<(usize, usize)> = (0..grid.len())
        .flat_map(|g| (0..chains).map(move |c| (g, c)))
        .collect();
    let run_one = |&(g, chain): &(usize, usize)| {
        let k = grid[g];
        let seed = chain_seed(master_seed, chain);
        let hp = priors.resolve(k, matrix.n_patients());
        run_chain(matrix, hp, seed, chain_cfg)
            .map(|model| ChainRun {
                chain,
                seed,
                log_likelihood: model.log_likelihood,
            })
            .map_err(|e| Error::Chain {
                k,
                seed,
                source: Box::new(e),
            })
    };
    #[cfg(feature = "parallel")]
    let results: Vec<Result<ChainRun>> = jobs.par_iter().map(run_one).collect();
    #[cfg(not(feature = "parallel"))]
    let results: Vec<Result<ChainRun>> = jobs.iter().map(run_one).collect();

    let mut runs = vec![Vec::with_capacity(chains); grid.len()];
    for (&(g, _), r) in jobs.iter().zip(results) {
        runs[g].push(r?);
    }
    KSweepResult::from_runs(grid.to_vec(), runs)
}

/// K with the highest mean log-likelihood; ties go to the smaller K.
pub fn select_k(result: &KSweepResult) -> Result<usize> {
    result
        .grid
        .iter()
        .zip(&result.means)
        .fold(None::<(usize, f64)>, |best, (&k, &mean)| match best {
            Some((bk, bm)) if bm > mean || (bm == mean && bk < k) => Some((bk, bm)),
            _ => Some((k, mean)),
        })
        .map(|(k, _)| k)
        .ok_or_else(|| Error::invalid("sweep result is empty"))
}
