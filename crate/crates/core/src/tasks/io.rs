use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::vocab::{BIT_STRINGS, EOS};
use super::{parse_program, DatasetSplits, LookupTable, TableSet, TaskExample, Variant, SPLIT_NAMES};
use crate::error::{Error, Result};

pub const META_FILE: &str = "meta.json";

/// Contents of `meta.json`: table mappings are written as
/// `{"t1": {"000": "110", ...}, ...}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub variant: Variant,
    pub seed: u64,
    pub tables: BTreeMap<String, BTreeMap<String, String>>,
    pub sizes: BTreeMap<String, usize>,
}

impl DatasetMeta {
    fn from_splits(splits: &DatasetSplits) -> Self {
        let tables = splits
            .tables
            .tables()
            .iter()
            .map(|t| {
                let map = BIT_STRINGS
                    .iter()
                    .zip(t.mapping)
                    .map(|(b, m)| (b.to_string(), BIT_STRINGS[m as usize].to_string()))
                    .collect();
                (t.name.clone(), map)
            })
            .collect();
        let sizes = splits.iter().map(|(n, s)| (n.to_string(), s.len())).collect();
        DatasetMeta {
            variant: splits.variant,
            seed: splits.seed,
            tables,
            sizes,
        }
    }

    pub fn table_set(&self) -> Result<TableSet> {
        let tables = self
            .tables
            .iter()
            .map(|(name, map)| {
                let mut mapping = [0u8; 8];
                for (i, b) in BIT_STRINGS.iter().enumerate() {
                    let out = map
                        .get(*b)
                        .ok_or_else(|| Error::invalid(format!("table {name} has no entry for {b}")))?;
                    mapping[i] = BIT_STRINGS
                        .iter()
                        .position(|x| x == out)
                        .ok_or_else(|| Error::invalid(format!("table {name} maps {b} to `{out}`")))?
                        as u8;
                }
                LookupTable::new(name.clone(), mapping)
            })
            .collect::<Result<Vec<_>>>()?;
        TableSet::new(tables)
    }
}

fn line_of(ex: &TaskExample) -> String {
    let gold: Vec<String> = ex.gold.iter().map(usize::to_string).collect();
    format!("{}\t{}\t{}\n", ex.input.join(" "), ex.target.join(" "), gold.join(" "))
}

/// Writes `<split>.tsv` for every split plus `meta.json`.
pub fn write_splits(splits: &DatasetSplits, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    for (name, examples) in splits.iter() {
        let body: String = examples.iter().map(line_of).collect();
        fs::write(dir.join(format!("{name}.tsv")), body)?;
    }
    let meta = serde_json::to_string_pretty(&DatasetMeta::from_splits(splits))?;
    fs::write(dir.join(META_FILE), meta + "\n")?;
    Ok(())
}

/// Reads and validates a dataset directory written by [`write_splits`].
pub fn read_splits(dir: &Path) -> Result<DatasetSplits> {
    let meta_path = dir.join(META_FILE);
    let meta: DatasetMeta = serde_json::from_str(&fs::read_to_string(&meta_path)?).map_err(|e| Error::Parse {
        path: meta_path.clone(),
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    let tables = meta.table_set()?;
    let mut parts: BTreeMap<&str, Vec<TaskExample>> = BTreeMap::new();
    for name in SPLIT_NAMES {
        let path = dir.join(format!("{name}.tsv"));
        parts.insert(name, read_split(&path, meta.variant)?);
    }
    let mut take = |n: &str| parts.remove(n).unwrap_or_default();
    Ok(DatasetSplits {
        variant: meta.variant,
        seed: meta.seed,
        tables,
        train: take("train"),
        interpolation: take("interpolation"),
        long: (1..=super::LONG_SPLITS).map(|k| take(&format!("long{k}"))).collect(),
    })
}

/// Parses one TSV split; errors carry the file, line and column.
pub fn read_split(path: &Path, variant: Variant) -> Result<Vec<TaskExample>> {
    let text = fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let err = |column: usize, message: String| Error::Parse {
            path: path.to_path_buf(),
            line: ln + 1,
            column,
            message,
        };
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(err(1, format!("expected 3 tab-separated columns, found {}", fields.len())));
        }
        let starts = [0, fields[0].len() + 1, fields[0].len() + fields[1].len() + 2];
        let tokens = |f: usize| -> Vec<(usize, &str)> {
            let base = fields[f].as_ptr() as usize - line.as_ptr() as usize;
            fields[f]
                .split(' ')
                .filter(|t| !t.is_empty())
                .map(|t| (t.as_ptr() as usize - line.as_ptr() as usize - base + starts[f] + 1, t))
                .collect()
        };
        let vocab = super::Vocab::new();
        let check = |f: usize| -> Result<Vec<String>> {
            tokens(f)
                .into_iter()
                .map(|(col, t)| match vocab.id(t) {
                    Ok(_) => Ok(t.to_string()),
                    Err(_) => Err(err(col, format!("unknown token `{t}`"))),
                })
                .collect()
        };
        let input = check(0)?;
        let target = check(1)?;
        if target.last().map(String::as_str) != Some(EOS) {
            return Err(err(starts[1] + 1, "target must end with <eos>".into()));
        }
        let gold = tokens(2)
            .into_iter()
            .map(|(col, t)| t.parse::<usize>().map_err(|e| err(col, format!("bad gold index `{t}`: {e}"))))
            .collect::<Result<Vec<_>>>()?;
        let ex = TaskExample { input, target, gold };
        ex.validate().map_err(|e| err(1, e.to_string()))?;
        parse_program(&ex.input, variant).map_err(|e| err(starts[0] + 1, e.to_string()))?;
        out.push(ex);
    }
    Ok(out)
}
