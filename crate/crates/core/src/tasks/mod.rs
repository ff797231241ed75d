//! Long Lookup Tables generators: Standard, Reversed and Noisy-Start
//! variants with gold attention annotations.

pub mod fixtures;
mod io;
mod tables;
mod vocab;

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

pub use io::{read_split, read_splits, write_splits, DatasetMeta, META_FILE};
pub use tables::{apply_tables, fixture_tables, sample_tables, LookupTable, TableSet};
pub use vocab::{Vocab, BIT_STRINGS, EOS, PAD, SOS, START, STOP, TABLE_NAMES};

use crate::error::{Error, Result};
use crate::numcore::rng::substream;
use vocab::{bit_index, table_index};

/// Number of composed tables in the training / interpolation space.
pub const TRAIN_TABLES: std::ops::RangeInclusive<usize> = 1..=4;
pub const INTERPOLATION_SIZE: usize = 3000;
pub const LONG_SPLITS: usize = 5;
pub const LONG_SIZE: usize = 5000;
/// Noise tables before `!` are drawn from `0..=MAX_NOISE`.
pub const MAX_NOISE: usize = 10;

pub const SPLIT_NAMES: [&str; 7] = ["train", "interpolation", "long1", "long2", "long3", "long4", "long5"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Standard,
    Reversed,
    #[serde(rename = "noisy")]
    NoisyStart,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Standard => "standard",
            Variant::Reversed => "reversed",
            Variant::NoisyStart => "noisy",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "standard" => Ok(Variant::Standard),
            "reversed" => Ok(Variant::Reversed),
            "noisy" | "noisy_start" => Ok(Variant::NoisyStart),
            _ => Err(Error::invalid(format!("unknown variant `{s}` (expected standard, reversed or noisy)"))),
        }
    }
}

/// One source/target pair with its gold attention.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TaskExample {
    pub input: Vec<String>,
    /// Ends with `<eos>`.
    pub target: Vec<String>,
    /// One source index per target token.
    pub gold: Vec<usize>,
}

impl TaskExample {
    /// Checks the structural invariants (terminators, gold range and length,
    /// vocabulary membership).
    pub fn validate(&self) -> Result<()> {
        let vocab = Vocab::new();
        vocab.encode(&self.input)?;
        vocab.encode(&self.target)?;
        if self.input.last().map(String::as_str) != Some(STOP) {
            return Err(Error::invalid("input must end with `.`"));
        }
        if self.target.last().map(String::as_str) != Some(EOS) {
            return Err(Error::invalid("target must end with <eos>"));
        }
        if self.target[..self.target.len() - 1].iter().any(|t| t == EOS) {
            return Err(Error::invalid("<eos> may only end the target"));
        }
        if self.gold.len() != self.target.len() {
            return Err(Error::invalid(format!(
                "gold attention has {} entries for {} target tokens",
                self.gold.len(),
                self.target.len()
            )));
        }
        if let Some(&g) = self.gold.iter().find(|&&g| g >= self.input.len()) {
            return Err(Error::invalid(format!(
                "gold index {g} out of range for input of length {}",
                self.input.len()
            )));
        }
        Ok(())
    }
}

/// The input bit string and the table names that determine the target.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Program {
    pub input: String,
    pub tables: Vec<String>,
    /// Noise tables before `!` (Noisy-Start only).
    pub noise: Vec<String>,
}

impl Program {
    fn standard_example(&self, set: &TableSet) -> Result<TaskExample> {
        let mut input = Vec::with_capacity(self.tables.len() + 2);
        input.push(self.input.clone());
        input.extend(self.tables.iter().cloned());
        input.push(STOP.to_string());
        let mut target = set.apply(&self.input, &self.tables)?;
        target.push(EOS.to_string());
        let gold = (0..input.len()).collect();
        Ok(TaskExample { input, target, gold })
    }
}

/// Recovers the program encoded by a source sequence of `variant`.
pub fn parse_program<S: AsRef<str>>(input: &[S], variant: Variant) -> Result<Program> {
    let toks: Vec<&str> = input.iter().map(|t| t.as_ref()).collect();
    let malformed = || Error::invalid(format!("malformed {variant} input `{}`", toks.join(" ")));
    let (&last, body) = toks.split_last().ok_or_else(malformed)?;
    if last != STOP || body.is_empty() {
        return Err(malformed());
    }
    let all_tables = |ts: &[&str]| ts.iter().all(|t| table_index(t).is_some());
    let owned = |ts: &[&str]| ts.iter().map(|t| t.to_string()).collect::<Vec<_>>();
    match variant {
        Variant::Standard => {
            let (&bits, tables) = body.split_first().ok_or_else(malformed)?;
            if bit_index(bits).is_none() || !all_tables(tables) {
                return Err(malformed());
            }
            Ok(Program {
                input: bits.to_string(),
                tables: owned(tables),
                noise: Vec::new(),
            })
        }
        Variant::Reversed => {
            let (&bits, rev) = body.split_last().ok_or_else(malformed)?;
            if bit_index(bits).is_none() || !all_tables(rev) {
                return Err(malformed());
            }
            Ok(Program {
                input: bits.to_string(),
                tables: rev.iter().rev().map(|t| t.to_string()).collect(),
                noise: Vec::new(),
            })
        }
        Variant::NoisyStart => {
            let (&bits, rest) = body.split_first().ok_or_else(malformed)?;
            let bang = rest.iter().position(|&t| t == START).ok_or_else(malformed)?;
            let (noise, tables) = (&rest[..bang], &rest[bang + 1..]);
            if bit_index(bits).is_none() || !all_tables(noise) || !all_tables(tables) {
                return Err(malformed());
            }
            Ok(Program {
                input: bits.to_string(),
                tables: owned(tables),
                noise: owned(noise),
            })
        }
    }
}

/// Gold attention: one source index per target token, ending on `.` for
/// `<eos>`.
pub fn gold_attention<S: AsRef<str>>(input: &[S], variant: Variant) -> Result<Vec<usize>> {
    let prog = parse_program(input, variant)?;
    let n = input.len();
    let k = prog.tables.len();
    let mut gold = Vec::with_capacity(k + 2);
    match variant {
        Variant::Standard => gold.extend(0..=k),
        Variant::Reversed => gold.extend((0..=k).rev()),
        Variant::NoisyStart => {
            let first = prog.noise.len() + 2;
            gold.push(0);
            gold.extend(first..first + k);
        }
    }
    gold.push(n - 1);
    Ok(gold)
}

/// Rewrites a Standard example as `variant`; targets are unchanged.
pub fn make_variant<R: Rng>(example: &TaskExample, variant: Variant, rng: &mut R) -> Result<TaskExample> {
    let prog = parse_program(&example.input, Variant::Standard)?;
    let mut input: Vec<String> = Vec::with_capacity(example.input.len() + MAX_NOISE + 1);
    match variant {
        Variant::Standard => return Ok(example.clone()),
        Variant::Reversed => {
            input.extend(prog.tables.iter().rev().cloned());
            input.push(prog.input.clone());
        }
        Variant::NoisyStart => {
            let m = rng.gen_range(0..=MAX_NOISE);
            input.push(prog.input.clone());
            input.extend((0..m).map(|_| TABLE_NAMES[rng.gen_range(0..TABLE_NAMES.len())].to_string()));
            input.push(START.to_string());
            input.extend(prog.tables.iter().cloned());
        }
    }
    input.push(STOP.to_string());
    let gold = gold_attention(&input, variant)?;
    Ok(TaskExample {
        input,
        target: example.target.clone(),
        gold,
    })
}

/// Program number `index` among the `8 * 6^k` programs with `k` tables.
fn program_at(index: usize, k: usize) -> Program {
    let mut rest = index / BIT_STRINGS.len();
    let mut tables = vec![String::new(); k];
    for slot in tables.iter_mut().rev() {
        *slot = TABLE_NAMES[rest % TABLE_NAMES.len()].to_string();
        rest /= TABLE_NAMES.len();
    }
    Program {
        input: BIT_STRINGS[index % BIT_STRINGS.len()].to_string(),
        tables,
        noise: Vec::new(),
    }
}

fn programs_with(k: usize) -> usize {
    BIT_STRINGS.len() * TABLE_NAMES.len().pow(k as u32)
}

/// All train/interpolation programs, ordered by table count then index.
pub fn enumerate_base_programs() -> Vec<Program> {
    TRAIN_TABLES
        .flat_map(|k| (0..programs_with(k)).map(move |i| program_at(i, k)))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplits {
    pub variant: Variant,
    pub seed: u64,
    pub tables: TableSet,
    pub train: Vec<TaskExample>,
    pub interpolation: Vec<TaskExample>,
    /// `long[K - 1]` holds examples with `4 + K` tables.
    pub long: Vec<Vec<TaskExample>>,
}

impl DatasetSplits {
    pub fn split(&self, name: &str) -> Option<&[TaskExample]> {
        match name {
            "train" => Some(&self.train),
            "interpolation" => Some(&self.interpolation),
            _ => {
                let k: usize = name.strip_prefix("long")?.parse().ok()?;
                self.long.get(k.checked_sub(1)?).map(Vec::as_slice)
            }
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&'static str, &[TaskExample])> {
        SPLIT_NAMES.iter().filter_map(move |&n| self.split(n).map(|s| (n, s)))
    }
}

/// Generates every split for `variant` with tables sampled from `seed`.
pub fn generate_splits(variant: Variant, seed: u64) -> Result<DatasetSplits> {
    generate_splits_with_tables(variant, seed, sample_tables(seed))
}

pub fn generate_splits_with_tables(variant: Variant, seed: u64, tables: TableSet) -> Result<DatasetSplits> {
    let base = enumerate_base_programs();
    let candidates: Vec<usize> = (0..base.len()).filter(|&i| base[i].tables.len() >= 2).collect();
    let mut rng = substream(seed, "split.interpolation");
    let mut picked: Vec<usize> = sample(&mut rng, candidates.len(), INTERPOLATION_SIZE)
        .into_iter()
        .map(|i| candidates[i])
        .collect();
    picked.sort_unstable();
    let held: HashSet<usize> = picked.iter().copied().collect();

    let finish = |progs: Vec<&Program>, name: &str| -> Result<Vec<TaskExample>> {
        let mut rng = substream(seed, &format!("noise.{name}"));
        progs
            .into_iter()
            .map(|p| make_variant(&p.standard_example(&tables)?, variant, &mut rng))
            .collect()
    };
    let train = finish(
        (0..base.len()).filter(|i| !held.contains(i)).map(|i| &base[i]).collect(),
        "train",
    )?;
    let interpolation = finish(picked.iter().map(|&i| &base[i]).collect(), "interpolation")?;

    let mut long = Vec::with_capacity(LONG_SPLITS);
    for extra in 1..=LONG_SPLITS {
        let k = TRAIN_TABLES.end() + extra;
        let mut rng = substream(seed, &format!("split.long{extra}"));
        let mut idx = sample(&mut rng, programs_with(k), LONG_SIZE).into_vec();
        idx.sort_unstable();
        let progs: Vec<Program> = idx.into_iter().map(|i| program_at(i, k)).collect();
        long.push(finish(progs.iter().collect(), &format!("long{extra}"))?);
    }
    Ok(DatasetSplits {
        variant,
        seed,
        tables,
        train,
        interpolation,
        long,
    })
}

/// Summary of an independent re-check of generated splits.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub examples: usize,
    pub oracle_mismatches: usize,
    pub gold_mismatches: usize,
    pub train_interpolation_overlap: usize,
    /// Long examples not strictly longer (in true tables) than every train
    /// example.
    pub long_not_longer: usize,
}

impl VerifyReport {
    pub fn is_clean(&self) -> bool {
        self.oracle_mismatches == 0
            && self.gold_mismatches == 0
            && self.train_interpolation_overlap == 0
            && self.long_not_longer == 0
    }
}

/// Re-derives every target with the table oracle and every gold sequence
/// from the source, and checks split disjointness and lengths.
pub fn verify_splits(splits: &DatasetSplits) -> Result<VerifyReport> {
    let mut report = VerifyReport::default();
    let mut max_train_tables = 0;
    for (name, examples) in splits.iter() {
        for ex in examples {
            ex.validate()?;
            report.examples += 1;
            let prog = parse_program(&ex.input, splits.variant)?;
            let mut expected = splits.tables.apply(&prog.input, &prog.tables)?;
            expected.push(EOS.to_string());
            if expected != ex.target {
                report.oracle_mismatches += 1;
            }
            if gold_attention(&ex.input, splits.variant)? != ex.gold {
                report.gold_mismatches += 1;
            }
            if name == "train" {
                max_train_tables = max_train_tables.max(prog.tables.len());
            }
        }
    }
    let train: HashSet<(&[String], &[String])> = splits
        .train
        .iter()
        .map(|e| (e.input.as_slice(), e.target.as_slice()))
        .collect();
    report.train_interpolation_overlap = splits
        .interpolation
        .iter()
        .filter(|e| train.contains(&(e.input.as_slice(), e.target.as_slice())))
        .count();
    for ex in splits.long.iter().flatten() {
        if parse_program(&ex.input, splits.variant)?.tables.len() <= max_train_tables {
            report.long_not_longer += 1;
        }
    }
    Ok(report)
}
