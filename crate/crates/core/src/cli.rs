//! Command-line front end: ingest → fit / sweep-k → report / recommend,
//! plus synthetic data generation and the exact-posterior oracle check.
//!
//! Exit status is 0 on success, 2 on usage errors and 1 on data or
//! validation errors. Every output file starts with (or, for JSON, embeds)
//! the resolved run configuration; input files are identified by base name
//! and SHA-256 so the configuration does not depend on where files live.

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::corpus::{
    build_matrix, build_vocabulary, corpus_stats, parse_records, CorpusMatrix, Vocabulary,
    Weighting,
};
use crate::error::{Error, Result};
use crate::metrics::{
    jsd_matrix, occurrence_split, top_codes, topic_entropy, DEFAULT_TOP_CODE_THRESHOLD,
};
use crate::model::{format_real, TopicModel};
use crate::recommend::{recommend, RankingMode};
use crate::sampler::{
    run_chain, ChainConfig, DocTopicPrior, PriorTemplate, DEFAULT_BURN_IN, DEFAULT_DOC_TOPIC_SCALE,
    DEFAULT_KEEP, DEFAULT_TOPIC_CODE_PRIOR,
};
use crate::selection::{select_k, sweep_k, DEFAULT_CHAINS};
use crate::synth::{
    exact_posterior, generate_corpus, max_deviation, sampled_posterior, tiny_instance, to_records,
    SynthConfig,
};

#[derive(Debug, Parser)]
#[command(
    name = "cotopic",
    version,
    about = "Topic modeling of coded medical conditions"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build vocabulary, count matrix and corpus statistics from record CSV.
    Ingest(IngestArgs),
    /// Fit one LDA model by collapsed Gibbs sampling.
    Fit(FitArgs),
    /// Fit several chains per K over a grid and select K by log-likelihood.
    #[command(name = "sweep-k")]
    SweepK(SweepArgs),
    /// Write topic, entropy, divergence and occurrence reports for a model.
    Report(ReportArgs),
    /// Suggest co-occurring codes for a query code.
    Recommend(RecommendArgs),
    /// Generate a synthetic corpus with planted topics.
    Synth(SynthArgs),
    /// Compare Gibbs marginals with exhaustive enumeration on a tiny instance.
    #[command(name = "oracle-check")]
    OracleCheck(OracleArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum WeightingArg {
    Count,
    Binary,
}

impl From<WeightingArg> for Weighting {
    fn from(w: WeightingArg) -> Self {
        match w {
            WeightingArg::Count => Weighting::Count,
            WeightingArg::Binary => Weighting::Binary,
        }
    }
}

#[derive(Debug, Args, Serialize)]
struct IngestArgs {
    /// Record CSV (`patient_id,code[,count]`).
    #[arg(long)]
    records: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    /// Fraction of all occurrences the vocabulary must cover.
    #[arg(long, default_value_t = 0.8)]
    cutoff: f64,
    #[arg(long, value_enum, default_value_t = WeightingArg::Count)]
    weighting: WeightingArg,
    /// Also write diagnostic tf-idf weights.
    #[arg(long)]
    tfidf: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum PriorPreset {
    /// doc-topic prior = 50 / K
    PerTopic,
    /// doc-topic prior = 50 / M
    PerPatient,
}

#[derive(Debug, Args, Serialize)]
struct PriorArgs {
    /// Fixed patient-topic prior; overrides the preset.
    #[arg(long)]
    doc_topic_prior: Option<f64>,
    #[arg(long, value_enum, default_value_t = PriorPreset::PerTopic)]
    prior_preset: PriorPreset,
    #[arg(long, default_value_t = DEFAULT_TOPIC_CODE_PRIOR)]
    topic_code_prior: f64,
}

impl PriorArgs {
    fn template(&self) -> PriorTemplate {
        let doc_topic = match (self.doc_topic_prior, self.prior_preset) {
            (Some(v), _) => DocTopicPrior::Fixed(v),
            (None, PriorPreset::PerTopic) => DocTopicPrior::OverTopics(DEFAULT_DOC_TOPIC_SCALE),
            (None, PriorPreset::PerPatient) => DocTopicPrior::OverPatients(DEFAULT_DOC_TOPIC_SCALE),
        };
        PriorTemplate {
            doc_topic,
            topic_code_prior: self.topic_code_prior,
        }
    }
}

#[derive(Debug, Args, Serialize)]
struct CorpusArgs {
    /// Sparse triplet matrix written by `ingest`.
    #[arg(long)]
    matrix: PathBuf,
    /// Vocabulary TSV written by `ingest` (column labels).
    #[arg(long)]
    vocab: PathBuf,
}

#[derive(Debug, Args, Serialize)]
struct FitArgs {
    #[command(flatten)]
    corpus: CorpusArgs,
    #[arg(short = 'k', long = "topics")]
    k: usize,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = DEFAULT_BURN_IN)]
    burn_in: u64,
    #[arg(long, default_value_t = DEFAULT_KEEP)]
    keep: u64,
    /// Average Φ over the kept sweeps instead of using the final state.
    #[arg(long)]
    average_phi: bool,
    /// Leave the patient-topic matrix out of the model file.
    #[arg(long)]
    no_theta: bool,
    #[command(flatten)]
    priors: PriorArgs,
}

#[derive(Debug, Args, Serialize)]
struct SweepArgs {
    #[command(flatten)]
    corpus: CorpusArgs,
    /// `start:end:step` or a comma-separated list.
    #[arg(long, default_value = "5:100:5", value_parser = parse_grid)]
    grid: Grid,
    #[arg(long, default_value_t = DEFAULT_CHAINS)]
    chains: usize,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = DEFAULT_BURN_IN)]
    burn_in: u64,
    #[arg(long, default_value_t = DEFAULT_KEEP)]
    keep: u64,
    #[command(flatten)]
    priors: PriorArgs,
}

/// Parsed `--grid`; a newtype so clap treats the list as one value.
#[derive(Debug, Clone, Serialize)]
#[serde(transparent)]
struct Grid(Vec<usize>);

fn parse_grid(s: &str) -> std::result::Result<Grid, String> {
    parse_grid_values(s).map(Grid)
}

fn parse_grid_values(s: &str) -> std::result::Result<Vec<usize>, String> {
    let bad = || format!("bad K grid {s:?}; use start:end:step or a comma list");
    if s.contains(':') {
        let parts: Vec<usize> = s
            .split(':')
            .map(|p| p.trim().parse().map_err(|_| bad()))
            .collect::<std::result::Result<_, _>>()?;
        match parts[..] {
            [start, end, step] if step > 0 && start <= end => {
                Ok((start..=end).step_by(step).collect())
            }
            [start, end] if start <= end => Ok((start..=end).collect()),
            _ => Err(bad()),
        }
    } else {
        s.split(',')
            .map(|p| p.trim().parse().map_err(|_| bad()))
            .collect()
    }
}

#[derive(Debug, Args, Serialize)]
struct ReportArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value_t = DEFAULT_TOP_CODE_THRESHOLD)]
    threshold: f64,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum ModeArg {
    Posterior,
    Likelihood,
}

#[derive(Debug, Args, Serialize)]
struct RecommendArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    code: String,
    #[arg(long, value_enum, default_value_t = ModeArg::Posterior)]
    mode: ModeArg,
    #[arg(long, default_value_t = DEFAULT_TOP_CODE_THRESHOLD)]
    threshold: f64,
}

#[derive(Debug, Args, Serialize)]
struct SynthArgs {
    /// Record CSV to write.
    #[arg(long)]
    records: PathBuf,
    /// Ground-truth JSON to write.
    #[arg(long)]
    truth: PathBuf,
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value_t = 5)]
    k_true: usize,
    #[arg(long, default_value_t = 100)]
    codes: usize,
    #[arg(long, default_value_t = 1000)]
    patients: usize,
    #[arg(long, default_value_t = 40.0)]
    mean_length: f64,
    #[arg(long, default_value_t = 0.01)]
    topic_code_concentration: f64,
    #[arg(long, default_value_t = 0.1)]
    doc_topic_concentration: f64,
}

#[derive(Debug, Args, Serialize)]
struct OracleArgs {
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 200_000)]
    sweeps: u64,
    #[arg(long, default_value_t = 1_000)]
    burn_in: u64,
    #[arg(long, default_value_t = 0.02)]
    tolerance: f64,
}

/// Runs the CLI on `argv` (including the program name) and returns the exit
/// status.
pub fn run<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            let text = e.to_string();
            let line = text.lines().next().unwrap_or("usage error");
            eprintln!("{line}");
            return 2;
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            2
        }
        Err(Failure::Data(e)) => {
            eprintln!("error: {e}");
            1
        }
    }
}

enum Failure {
    Usage(String),
    Data(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Data(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Data(e.into())
    }
}

type CmdResult = std::result::Result<(), Failure>;

fn dispatch(command: Command) -> CmdResult {
    match command {
        Command::Ingest(a) => ingest(a),
        Command::Fit(a) => fit(a),
        Command::SweepK(a) => sweep(a),
        Command::Report(a) => report(a),
        Command::Recommend(a) => recommend_cmd(a),
        Command::Synth(a) => synth(a),
        Command::OracleCheck(a) => oracle(a),
    }
}

/// Base name and SHA-256 of an input file.
fn describe_input(path: &Path) -> Result<Value> {
    let bytes = fs::read(path)?;
    let digest = Sha256::digest(&bytes);
    let hex: String = digest.iter().map(|b| format!("{b:02x}")).collect();
    Ok(json!({
        "file": path.file_name().map(|n| n.to_string_lossy().into_owned()),
        "sha256": hex,
    }))
}

fn run_config(command: &str, params: &impl Serialize, inputs: &[(&str, &Path)]) -> Result<Value> {
    let mut params = serde_json::to_value(params)?;
    // Paths are environment-specific; inputs are pinned by content instead.
    strip_paths(&mut params);
    let mut described = serde_json::Map::new();
    for (name, path) in inputs {
        described.insert((*name).to_owned(), describe_input(path)?);
    }
    Ok(json!({
        "command": command,
        "version": env!("CARGO_PKG_VERSION"),
        "params": params,
        "inputs": described,
    }))
}

const PATH_KEYS: [&str; 9] = [
    "records",
    "out_dir",
    "matrix",
    "vocab",
    "out",
    "model",
    "truth",
    "corpus",
    "patients_file",
];

fn strip_paths(v: &mut Value) {
    if let Value::Object(map) = v {
        for key in PATH_KEYS {
            if map.get(key).is_some_and(Value::is_string) {
                map.remove(key);
            }
        }
        for child in map.values_mut() {
            strip_paths(child);
        }
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::invalid(format!("cannot open {}: {e}", path.display())))
}

fn config_line<W: Write>(out: &mut W, config: &Value) -> Result<()> {
    writeln!(out, "# config {config}")?;
    Ok(())
}

fn ingest(a: IngestArgs) -> CmdResult {
    if !(a.cutoff > 0.0 && a.cutoff <= 1.0) {
        return Err(Failure::Usage(format!(
            "--cutoff must lie in (0, 1], got {}",
            a.cutoff
        )));
    }
    let config = run_config("ingest", &a, &[("records", &a.records)])?;
    let records = parse_records(open(&a.records)?)?;
    let vocab = build_vocabulary(&records, a.cutoff)?;
    let matrix = build_matrix(&records, &vocab, a.weighting.into())?;
    let stats = corpus_stats(&matrix, &vocab);

    fs::create_dir_all(&a.out_dir)?;
    let mut out = create(&a.out_dir.join("vocab.tsv"))?;
    config_line(&mut out, &config)?;
    vocab.write_tsv(&mut out)?;
    out.flush()?;

    let mut out = create(&a.out_dir.join("matrix.tsv"))?;
    config_line(&mut out, &config)?;
    matrix.write_tsv(&mut out)?;
    out.flush()?;

    let mut out = create(&a.out_dir.join("patients.tsv"))?;
    config_line(&mut out, &config)?;
    writeln!(out, "patient_index\tpatient_id")?;
    for (i, p) in matrix.patients().iter().enumerate() {
        writeln!(out, "{i}\t{p}")?;
    }
    out.flush()?;

    let mut out = create(&a.out_dir.join("stats.tsv"))?;
    config_line(&mut out, &config)?;
    stats.write_tsv(&mut out)?;
    out.flush()?;

    if a.tfidf {
        let mut out = create(&a.out_dir.join("tfidf.tsv"))?;
        config_line(&mut out, &config)?;
        writeln!(out, "patient_index\tcode_index\ttfidf")?;
        for (i, row) in matrix.tfidf().iter().enumerate() {
            for &(c, w) in row {
                writeln!(out, "{i}\t{c}\t{}", format_real(w))?;
            }
        }
        out.flush()?;
    }
    println!(
        "patients {} (dropped {}), codes {} of {}, tokens {}",
        matrix.n_patients(),
        matrix.dropped_patients(),
        vocab.len(),
        vocab.distinct,
        matrix.total_tokens()
    );
    Ok(())
}

fn load_corpus(c: &CorpusArgs) -> Result<CorpusMatrix> {
    let vocab = Vocabulary::read_tsv(open(&c.vocab)?)?;
    let patients = c
        .matrix
        .parent()
        .map(|d| d.join("patients.tsv"))
        .filter(|p| p.exists())
        .map(|p| read_patients(&p))
        .transpose()?;
    CorpusMatrix::read_tsv(open(&c.matrix)?, vocab.codes, patients)
}

fn read_patients(path: &Path) -> Result<Vec<String>> {
    let mut out = Vec::new();
    for line in open(path)?.lines() {
        let line = line?;
        if line.starts_with('#') || line.starts_with("patient_index") || line.is_empty() {
            continue;
        }
        let (_, id) = line
            .split_once('\t')
            .ok_or_else(|| Error::invalid(format!("malformed patients line {line:?}")))?;
        out.push(id.to_owned());
    }
    Ok(out)
}

fn fit(a: FitArgs) -> CmdResult {
    if a.k < 2 {
        return Err(Failure::Usage(format!(
            "--topics must be at least 2, got {}",
            a.k
        )));
    }
    if a.keep == 0 {
        return Err(Failure::Usage("--keep must be at least 1".into()));
    }
    let matrix = load_corpus(&a.corpus)?;
    let hp = a.priors.template().resolve(a.k, matrix.n_patients());
    let mut config = run_config(
        "fit",
        &a,
        &[("matrix", &a.corpus.matrix), ("vocab", &a.corpus.vocab)],
    )?;
    config["resolved_priors"] = json!({
        "doc_topic_prior": format_real(hp.doc_topic_prior),
        "topic_code_prior": format_real(hp.topic_code_prior),
    });
    let chain = ChainConfig {
        burn_in: a.burn_in,
        keep: a.keep,
        average_phi: a.average_phi,
    };
    let mut model = run_chain(&matrix, hp, a.seed, chain)?;
    if a.no_theta {
        model.theta = None;
    }
    model.config = Some(config);
    let mut out = create(&a.out)?;
    model.write_json(&mut out)?;
    out.flush()?;
    println!("log_likelihood {}", format_real(model.log_likelihood));
    Ok(())
}

fn sweep(a: SweepArgs) -> CmdResult {
    if a.grid.0.is_empty() || a.grid.0.windows(2).any(|w| w[0] >= w[1]) || a.grid.0[0] < 2 {
        return Err(Failure::Usage(
            "--grid must be strictly increasing with every K ≥ 2".into(),
        ));
    }
    if a.chains == 0 || a.keep == 0 {
        return Err(Failure::Usage(
            "--chains and --keep must be at least 1".into(),
        ));
    }
    let matrix = load_corpus(&a.corpus)?;
    let config = run_config(
        "sweep-k",
        &a,
        &[("matrix", &a.corpus.matrix), ("vocab", &a.corpus.vocab)],
    )?;
    let result = sweep_k(
        &matrix,
        a.priors.template(),
        &a.grid.0,
        a.chains,
        a.seed,
        ChainConfig::new(a.burn_in, a.keep),
    )?;
    let best = select_k(&result)?;
    let mut out = create(&a.out)?;
    config_line(&mut out, &config)?;
    result.write_tsv(&mut out)?;
    writeln!(out, "#selected_K\t{best}")?;
    out.flush()?;
    println!("selected K = {best}");
    Ok(())
}

fn report(a: ReportArgs) -> CmdResult {
    if !(0.0..1.0).contains(&a.threshold) {
        return Err(Failure::Usage(format!(
            "--threshold must lie in [0, 1), got {}",
            a.threshold
        )));
    }
    let config = run_config("report", &a, &[("model", &a.model)])?;
    let model = TopicModel::read_json(open(&a.model)?)?;
    let dir = &a.out_dir;
    fs::create_dir_all(dir)?;
    let k = model.n_topics();
    let v = model.n_codes();
    let width = k.saturating_sub(1).to_string().len();

    let mut entropy = create(&dir.join("entropy.tsv"))?;
    config_line(&mut entropy, &config)?;
    writeln!(entropy, "topic\tentropy_bits")?;
    for (t, row) in model.phi.iter().enumerate() {
        let top = top_codes(t, row, a.threshold)?;
        let mut out = create(&dir.join(format!("topic_{t:0width$}.tsv")))?;
        config_line(&mut out, &config)?;
        writeln!(out, "code\tprobability")?;
        for &(c, p) in &top.entries {
            writeln!(out, "{}\t{}", model.vocabulary[c], format_real(p))?;
        }
        writeln!(out, "#cumulative {}", format_real(top.cumulative))?;
        out.flush()?;

        let mut out = create(&dir.join(format!("phi_topic_{t:0width$}.tsv")))?;
        config_line(&mut out, &config)?;
        writeln!(out, "code_index\tprobability")?;
        for (c, p) in row.iter().enumerate() {
            writeln!(out, "{c}\t{}", format_real(*p))?;
        }
        out.flush()?;

        if let Some(n_tc) = &model.n_tc {
            let mut out = create(&dir.join(format!("split_topic_{t:0width$}.tsv")))?;
            config_line(&mut out, &config)?;
            writeln!(out, "code\ttopic_count\tcorpus_count")?;
            for r in occurrence_split(n_tc, &model.phi, t, a.threshold)? {
                writeln!(
                    out,
                    "{}\t{}\t{}",
                    model.vocabulary[r.code], r.topic_count, r.corpus_count
                )?;
            }
            out.flush()?;
        }

        writeln!(entropy, "{t}\t{}", format_real(topic_entropy(row)?))?;
    }
    writeln!(entropy, "#uniform {}", format_real((v as f64).log2()))?;
    entropy.flush()?;

    if k >= 2 {
        let summary = jsd_matrix(&model.phi)?;
        let mut out = create(&dir.join("jsd_matrix.tsv"))?;
        config_line(&mut out, &config)?;
        writeln!(out, "# units: nats")?;
        for row in &summary.matrix {
            let line: Vec<String> = row.iter().map(|x| format_real(*x)).collect();
            writeln!(out, "{}", line.join("\t"))?;
        }
        out.flush()?;
        let mut out = create(&dir.join("jsd_summary.tsv"))?;
        config_line(&mut out, &config)?;
        writeln!(
            out,
            "# units: nats; statistics over {} distinct pairs",
            k * (k - 1) / 2
        )?;
        writeln!(out, "mean\tsd\tmedian\tmin")?;
        writeln!(
            out,
            "{}\t{}\t{}\t{}",
            format_real(summary.mean),
            format_real(summary.sd),
            format_real(summary.median),
            format_real(summary.min)
        )?;
        out.flush()?;
    }
    println!("wrote reports for {k} topics to {}", dir.display());
    Ok(())
}

fn recommend_cmd(a: RecommendArgs) -> CmdResult {
    if !(0.0..1.0).contains(&a.threshold) {
        return Err(Failure::Usage(format!(
            "--threshold must lie in [0, 1), got {}",
            a.threshold
        )));
    }
    let model = TopicModel::read_json(open(&a.model)?)?;
    let mode = match a.mode {
        ModeArg::Posterior => RankingMode::Posterior,
        ModeArg::Likelihood => RankingMode::Likelihood,
    };
    let rec = recommend(&model, &a.code, mode, a.threshold)?;
    println!("{}", rec.to_json()?);
    Ok(())
}

fn synth(a: SynthArgs) -> CmdResult {
    let cfg = SynthConfig {
        k_true: a.k_true,
        n_codes: a.codes,
        n_patients: a.patients,
        mean_length: a.mean_length,
        topic_code_concentration: a.topic_code_concentration,
        doc_topic_concentration: a.doc_topic_concentration,
        seed: a.seed,
    };
    cfg.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    let (matrix, truth) = generate_corpus(&cfg)?;
    let mut out = create(&a.records)?;
    crate::corpus::write_records(&to_records(&matrix), &mut out)?;
    out.flush()?;
    let mut out = create(&a.truth)?;
    truth.write_json(&mut out)?;
    out.flush()?;
    println!(
        "patients {}, codes {}, tokens {}",
        matrix.n_patients(),
        matrix.n_codes(),
        matrix.total_tokens()
    );
    Ok(())
}

fn oracle(a: OracleArgs) -> CmdResult {
    if a.sweeps == 0 {
        return Err(Failure::Usage("--sweeps must be at least 1".into()));
    }
    let matrix = tiny_instance();
    let hp = crate::sampler::Hyperparams::with_priors(2, 25.0, 0.1);
    let exact = exact_posterior(&matrix, hp)?;
    let sampled = sampled_posterior(&matrix, hp, a.seed, a.burn_in, a.sweeps)?;
    let (marginal, pairwise) = max_deviation(&exact, &sampled);
    println!("max_abs_marginal_deviation {marginal:.6}");
    println!("max_abs_coassignment_deviation {pairwise:.6}");
    if marginal > a.tolerance || pairwise > a.tolerance {
        return Err(Failure::Data(Error::invalid(format!(
            "deviation exceeds tolerance {}",
            a.tolerance
        ))));
    }
    Ok(())
}
