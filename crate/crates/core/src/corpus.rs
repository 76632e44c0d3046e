//! Diagnosis-event ingestion, frequency-truncated vocabulary and the
//! patient × code count matrix.
//!
//! Records arrive as flat `patient_id,code[,count]` lines. The vocabulary
//! keeps the shortest prefix of codes (by descending corpus frequency) that
//! covers a requested fraction of all occurrences; the matrix is then the
//! bag-of-codes representation of every patient over that vocabulary.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Aggregated occurrence counts, keyed by patient then code.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RecordSet {
    entries: BTreeMap<String, BTreeMap<String, u64>>,
}

impl RecordSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds `count` occurrences of `code` to `patient`. Zero counts are ignored.
    pub fn add(&mut self, patient: &str, code: &str, count: u64) {
        if count == 0 {
            return;
        }
        *self
            .entries
            .entry(patient.to_owned())
            .or_default()
            .entry(code.to_owned())
            .or_insert(0) += count;
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn n_patients(&self) -> usize {
        self.entries.len()
    }

    pub fn get(&self, patient: &str) -> Option<&BTreeMap<String, u64>> {
        self.entries.get(patient)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &BTreeMap<String, u64>)> {
        self.entries.iter().map(|(p, codes)| (p.as_str(), codes))
    }

    /// Total occurrences per code over all patients.
    pub fn code_totals(&self) -> BTreeMap<&str, u64> {
        let mut totals = BTreeMap::new();
        for codes in self.entries.values() {
            for (code, &n) in codes {
                *totals.entry(code.as_str()).or_insert(0) += n;
            }
        }
        totals
    }
}

/// Parses the record CSV. A header line (`patient_id,code[,count]`) is
/// optional, blank lines are skipped and repeated (patient, code) pairs are
/// summed.
pub fn parse_records<R: BufRead>(input: R) -> Result<RecordSet> {
    let mut records = RecordSet::new();
    let mut seen_data = false;
    for (idx, line) in input.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|e| Error::Parse {
            line: lineno,
            reason: e.to_string(),
        })?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if !seen_data && fields.len() >= 2 && fields[0] == "patient_id" && fields[1] == "code" {
            seen_data = true;
            continue;
        }
        seen_data = true;
        let count = match fields.len() {
            2 => 1,
            3 => parse_count(fields[2]).map_err(|reason| Error::Parse {
                line: lineno,
                reason,
            })?,
            n => {
                return Err(Error::Parse {
                    line: lineno,
                    reason: format!("expected 2 or 3 fields, found {n}"),
                })
            }
        };
        if fields[0].is_empty() || fields[1].is_empty() {
            return Err(Error::Parse {
                line: lineno,
                reason: "empty patient identifier or code".into(),
            });
        }
        records.add(fields[0], fields[1], count);
    }
    if records.is_empty() {
        return Err(Error::EmptyCorpus("no data rows in record input".into()));
    }
    Ok(records)
}

fn parse_count(field: &str) -> std::result::Result<u64, String> {
    match field.parse::<i64>() {
        Ok(n) if n >= 1 => Ok(n as u64),
        Ok(n) => Err(format!("count must be a positive integer, found {n}")),
        Err(_) => Err(format!("count is not an integer: {field:?}")),
    }
}

/// Writes records back out in the CSV format accepted by [`parse_records`].
pub fn write_records<W: Write>(records: &RecordSet, mut out: W) -> Result<()> {
    writeln!(out, "patient_id,code,count")?;
    for (patient, codes) in records.iter() {
        for (code, n) in codes {
            writeln!(out, "{patient},{code},{n}")?;
        }
    }
    Ok(())
}

/// Retained codes in descending frequency order (ties: ascending code).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vocabulary {
    pub codes: Vec<String>,
    pub frequencies: Vec<u64>,
    pub cutoff: f64,
    /// Occurrences over every code, retained or not.
    pub total: u64,
    /// Number of distinct codes before truncation.
    pub distinct: usize,
}

impl Vocabulary {
    pub fn len(&self) -> usize {
        self.codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }

    pub fn index_of(&self, code: &str) -> Option<usize> {
        self.codes.iter().position(|c| c == code)
    }

    /// Cumulative fraction of all occurrences covered by the first `i + 1` codes.
    pub fn cumulative_fractions(&self) -> Vec<f64> {
        let mut acc = 0u64;
        self.frequencies
            .iter()
            .map(|&f| {
                acc += f;
                acc as f64 / self.total as f64
            })
            .collect()
    }

    /// `rank<TAB>code<TAB>count<TAB>cumulative_fraction`, ranks from 1.
    pub fn write_tsv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "rank\tcode\tcount\tcumulative_fraction")?;
        for (i, ((code, f), cum)) in self
            .codes
            .iter()
            .zip(&self.frequencies)
            .zip(self.cumulative_fractions())
            .enumerate()
        {
            writeln!(out, "{}\t{}\t{}\t{:.17}", i + 1, code, f, cum)?;
        }
        Ok(())
    }

    /// Reads the column labels back from a vocabulary TSV, in rank order.
    ///
    /// Only `codes` and `frequencies` are recovered; `total` is taken as
    /// the sum of retained frequencies.
    pub fn read_tsv<R: BufRead>(input: R) -> Result<Vocabulary> {
        let mut codes = Vec::new();
        let mut frequencies = Vec::new();
        for (idx, line) in input.lines().enumerate() {
            let line = line?;
            if line.starts_with('#') || line.starts_with("rank\t") || line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 4 {
                return Err(Error::Parse {
                    line: idx + 1,
                    reason: format!("expected 4 tab-separated fields, found {}", fields.len()),
                });
            }
            let rank: usize = fields[0].parse().map_err(|_| Error::Parse {
                line: idx + 1,
                reason: format!("bad rank {:?}", fields[0]),
            })?;
            if rank != codes.len() + 1 {
                return Err(Error::Parse {
                    line: idx + 1,
                    reason: format!("rank {rank} out of sequence"),
                });
            }
            let count: u64 = fields[2].parse().map_err(|_| Error::Parse {
                line: idx + 1,
                reason: format!("bad count {:?}", fields[2]),
            })?;
            codes.push(fields[1].to_owned());
            frequencies.push(count);
        }
        if codes.is_empty() {
            return Err(Error::EmptyCorpus("vocabulary file lists no codes".into()));
        }
        let total = frequencies.iter().sum();
        let distinct = codes.len();
        Ok(Vocabulary {
            codes,
            frequencies,
            cutoff: 1.0,
            total,
            distinct,
        })
    }
}

/// All codes sorted by descending total, ties by ascending code.
fn ranked_codes(records: &RecordSet) -> Vec<(String, u64)> {
    let mut ranked: Vec<(String, u64)> = records
        .code_totals()
        .into_iter()
        .map(|(c, n)| (c.to_owned(), n))
        .collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    ranked
}

/// Keeps the minimal frequency-ranked prefix covering `cutoff` of all
/// occurrences.
pub fn build_vocabulary(records: &RecordSet, cutoff: f64) -> Result<Vocabulary> {
    if !(cutoff > 0.0 && cutoff <= 1.0) {
        return Err(Error::invalid(format!(
            "cutoff must lie in (0, 1], got {cutoff}"
        )));
    }
    if records.is_empty() {
        return Err(Error::EmptyCorpus("record set has no patients".into()));
    }
    let ranked = ranked_codes(records);
    let total: u64 = ranked.iter().map(|(_, n)| n).sum();
    let distinct = ranked.len();

    let mut acc = 0u64;
    let mut keep = ranked.len();
    for (i, (_, n)) in ranked.iter().enumerate() {
        acc += n;
        if acc as f64 / total as f64 >= cutoff {
            keep = i + 1;
            break;
        }
    }
    let (codes, frequencies) = ranked.into_iter().take(keep).unzip();
    Ok(Vocabulary {
        codes,
        frequencies,
        cutoff,
        total,
        distinct,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Weighting {
    #[default]
    Count,
    Binary,
}

impl fmt::Display for Weighting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Weighting::Count => "count",
            Weighting::Binary => "binary",
        })
    }
}

impl FromStr for Weighting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "count" => Ok(Weighting::Count),
            "binary" => Ok(Weighting::Binary),
            other => Err(Error::invalid(format!("unknown weighting mode {other:?}"))),
        }
    }
}

/// Sparse patient × code count matrix. Rows hold `(column, count)` pairs in
/// ascending column order with no zero cells.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusMatrix {
    codes: Vec<String>,
    patients: Vec<String>,
    rows: Vec<Vec<(usize, u64)>>,
    weighting: Weighting,
    dropped_patients: usize,
}

impl CorpusMatrix {
    /// Builds a matrix from already-indexed rows. Every row must be nonempty
    /// with strictly increasing, in-range columns and positive counts.
    pub fn from_rows(
        codes: Vec<String>,
        patients: Vec<String>,
        rows: Vec<Vec<(usize, u64)>>,
        weighting: Weighting,
    ) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::EmptyCorpus("matrix has no rows".into()));
        }
        if patients.len() != rows.len() {
            return Err(Error::invalid(format!(
                "{} patient labels for {} rows",
                patients.len(),
                rows.len()
            )));
        }
        for (i, row) in rows.iter().enumerate() {
            if row.is_empty() {
                return Err(Error::invalid(format!("row {i} has no tokens")));
            }
            let mut prev = None;
            for &(c, n) in row {
                if c >= codes.len() {
                    return Err(Error::invalid(format!("row {i}: column {c} out of range")));
                }
                if n == 0 {
                    return Err(Error::invalid(format!(
                        "row {i}: zero cell stored at column {c}"
                    )));
                }
                if weighting == Weighting::Binary && n > 1 {
                    return Err(Error::invalid(format!(
                        "row {i}: binary matrix holds count {n}"
                    )));
                }
                if prev.is_some_and(|p| p >= c) {
                    return Err(Error::invalid(format!(
                        "row {i}: columns not strictly increasing"
                    )));
                }
                prev = Some(c);
            }
        }
        Ok(Self {
            codes,
            patients,
            rows,
            weighting,
            dropped_patients: 0,
        })
    }

    /// Builds a matrix from dense rows; all-zero rows are rejected.
    pub fn from_dense(codes: Vec<String>, dense: &[Vec<u64>]) -> Result<Self> {
        let rows = dense
            .iter()
            .map(|r| {
                r.iter()
                    .enumerate()
                    .filter(|(_, &n)| n > 0)
                    .map(|(c, &n)| (c, n))
                    .collect()
            })
            .collect();
        let patients = (0..dense.len()).map(|i| i.to_string()).collect();
        Self::from_rows(codes, patients, rows, Weighting::Count)
    }

    pub fn n_patients(&self) -> usize {
        self.rows.len()
    }

    pub fn n_codes(&self) -> usize {
        self.codes.len()
    }

    pub fn codes(&self) -> &[String] {
        &self.codes
    }

    pub fn patients(&self) -> &[String] {
        &self.patients
    }

    pub fn weighting(&self) -> Weighting {
        self.weighting
    }

    pub fn dropped_patients(&self) -> usize {
        self.dropped_patients
    }

    pub fn row(&self, i: usize) -> &[(usize, u64)] {
        &self.rows[i]
    }

    pub fn rows(&self) -> &[Vec<(usize, u64)>] {
        &self.rows
    }

    /// N_i, the number of tokens of patient `i`.
    pub fn row_total(&self, i: usize) -> u64 {
        self.rows[i].iter().map(|&(_, n)| n).sum()
    }

    pub fn total_tokens(&self) -> u64 {
        self.rows.iter().flatten().map(|&(_, n)| n).sum()
    }

    pub fn column_totals(&self) -> Vec<u64> {
        let mut totals = vec![0u64; self.codes.len()];
        for &(c, n) in self.rows.iter().flatten() {
            totals[c] += n;
        }
        totals
    }

    pub fn dense_row(&self, i: usize) -> Vec<u64> {
        let mut row = vec![0; self.codes.len()];
        for &(c, n) in &self.rows[i] {
            row[c] = n;
        }
        row
    }

    /// Diagnostic tf-idf weights, `count × ln(M / df(c))`, in the same
    /// sparse layout as the counts. Not usable as sampler input.
    pub fn tfidf(&self) -> Vec<Vec<(usize, f64)>> {
        let mut df = vec![0u64; self.codes.len()];
        for &(c, _) in self.rows.iter().flatten() {
            df[c] += 1;
        }
        let m = self.rows.len() as f64;
        self.rows
            .iter()
            .map(|row| {
                row.iter()
                    .map(|&(c, n)| (c, n as f64 * (m / df[c] as f64).ln()))
                    .collect()
            })
            .collect()
    }

    /// Sparse triplet TSV: a `#M=..<TAB>V=..<TAB>mode=..` header then
    /// `patient_index<TAB>code_index<TAB>count` lines.
    pub fn write_tsv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(
            out,
            "#M={}\tV={}\tmode={}",
            self.n_patients(),
            self.n_codes(),
            self.weighting
        )?;
        writeln!(out, "patient_index\tcode_index\tcount")?;
        for (i, row) in self.rows.iter().enumerate() {
            for &(c, n) in row {
                writeln!(out, "{i}\t{c}\t{n}")?;
            }
        }
        Ok(())
    }

    /// Reads a triplet TSV written by [`CorpusMatrix::write_tsv`]. Column
    /// labels come from the vocabulary; patient labels, when not supplied,
    /// are the row indices.
    pub fn read_tsv<R: BufRead>(
        input: R,
        codes: Vec<String>,
        patients: Option<Vec<String>>,
    ) -> Result<Self> {
        let mut header: Option<(usize, usize, Weighting)> = None;
        let mut cells: Vec<(usize, usize, u64)> = Vec::new();
        for (idx, line) in input.lines().enumerate() {
            let lineno = idx + 1;
            let line = line?;
            let bad = |reason: String| Error::Parse {
                line: lineno,
                reason,
            };
            if let Some(rest) = line.strip_prefix("#M=") {
                let parts: Vec<&str> = rest.split('\t').collect();
                let parsed = (|| {
                    let m = parts.first()?.parse().ok()?;
                    let v = parts.get(1)?.strip_prefix("V=")?.parse().ok()?;
                    let mode = parts.get(2)?.strip_prefix("mode=")?.parse().ok()?;
                    Some((m, v, mode))
                })();
                header = Some(parsed.ok_or_else(|| bad("malformed matrix header".into()))?);
                continue;
            }
            if line.starts_with('#') || line.starts_with("patient_index") || line.trim().is_empty()
            {
                continue;
            }
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 3 {
                return Err(bad(format!("expected 3 fields, found {}", f.len())));
            }
            let p = f[0]
                .parse()
                .map_err(|_| bad(format!("bad patient index {:?}", f[0])))?;
            let c = f[1]
                .parse()
                .map_err(|_| bad(format!("bad code index {:?}", f[1])))?;
            let n = f[2]
                .parse()
                .map_err(|_| bad(format!("bad count {:?}", f[2])))?;
            cells.push((p, c, n));
        }
        let (m, v, weighting) =
            header.ok_or_else(|| Error::invalid("matrix file lacks its #M=..\\tV=.. header"))?;
        if v != codes.len() {
            return Err(Error::invalid(format!(
                "matrix has V = {v} but the vocabulary lists {} codes",
                codes.len()
            )));
        }
        let mut rows = vec![Vec::new(); m];
        for (p, c, n) in cells {
            if p >= m {
                return Err(Error::invalid(format!(
                    "patient index {p} out of range (M = {m})"
                )));
            }
            rows[p].push((c, n));
        }
        for row in &mut rows {
            row.sort_unstable();
        }
        let patients = match patients {
            Some(p) => p,
            None => (0..m).map(|i| i.to_string()).collect(),
        };
        Self::from_rows(codes, patients, rows, weighting)
    }
}

/// Projects each patient onto the vocabulary. Out-of-vocabulary codes are
/// dropped, as are patients left without any token.
pub fn build_matrix(
    records: &RecordSet,
    vocab: &Vocabulary,
    mode: Weighting,
) -> Result<CorpusMatrix> {
    let index: HashMap<&str, usize> = vocab
        .codes
        .iter()
        .enumerate()
        .map(|(i, c)| (c.as_str(), i))
        .collect();
    let mut rows = Vec::new();
    let mut patients = Vec::new();
    let mut dropped = 0;
    for (patient, codes) in records.iter() {
        let mut row: Vec<(usize, u64)> = codes
            .iter()
            .filter_map(|(code, &n)| index.get(code.as_str()).map(|&c| (c, n)))
            .map(|(c, n)| match mode {
                Weighting::Count => (c, n),
                Weighting::Binary => (c, n.min(1)),
            })
            .collect();
        if row.is_empty() {
            dropped += 1;
            continue;
        }
        row.sort_unstable();
        rows.push(row);
        patients.push(patient.to_owned());
    }
    if rows.is_empty() {
        return Err(Error::EmptyCorpus(format!(
            "all {dropped} patients were left without in-vocabulary codes"
        )));
    }
    let mut matrix = CorpusMatrix::from_rows(vocab.codes.clone(), patients, rows, mode)?;
    matrix.dropped_patients = dropped;
    Ok(matrix)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorpusStats {
    /// `(code, count)` sorted by descending count, ties by ascending code.
    pub ranked: Vec<(String, u64)>,
    /// Cumulative fraction of occurrences after each rank; ends at 1.0.
    pub cumulative: Vec<f64>,
    pub dropped_patients: usize,
    pub dropped_codes: usize,
}

impl CorpusStats {
    /// The `n` most frequent codes.
    pub fn top(&self, n: usize) -> &[(String, u64)] {
        &self.ranked[..n.min(self.ranked.len())]
    }

    /// `rank<TAB>code<TAB>count<TAB>cumulative_fraction`, one line per code.
    pub fn write_tsv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "#dropped_patients\t{}", self.dropped_patients)?;
        writeln!(out, "#dropped_codes\t{}", self.dropped_codes)?;
        writeln!(out, "rank\tcode\tcount\tcumulative_fraction")?;
        for (i, ((code, n), cum)) in self.ranked.iter().zip(&self.cumulative).enumerate() {
            writeln!(out, "{}\t{}\t{}\t{:.17}", i + 1, code, n, cum)?;
        }
        Ok(())
    }
}

/// Frequency-rank curve of the in-vocabulary occurrences of the matrix.
pub fn corpus_stats(matrix: &CorpusMatrix, vocab: &Vocabulary) -> CorpusStats {
    let totals = matrix.column_totals();
    let mut ranked: Vec<(String, u64)> = matrix
        .codes()
        .iter()
        .cloned()
        .zip(totals)
        .filter(|(_, n)| *n > 0)
        .collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    let sum: u64 = ranked.iter().map(|(_, n)| n).sum();
    let mut acc = 0u64;
    let cumulative = ranked
        .iter()
        .map(|(_, n)| {
            acc += n;
            acc as f64 / sum as f64
        })
        .collect();
    CorpusStats {
        ranked,
        cumulative,
        dropped_patients: matrix.dropped_patients(),
        dropped_codes: vocab.distinct.saturating_sub(vocab.len()),
    }
}
