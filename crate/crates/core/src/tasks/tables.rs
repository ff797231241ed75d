use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::vocab::{bit_index, table_index, BIT_STRINGS, TABLE_NAMES};
use crate::error::{Error, Result};
use crate::numcore::rng::substream;

/// A bijection on the eight 3-bit strings.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LookupTable {
    pub name: String,
    /// `mapping[i]` is the image of `BIT_STRINGS[i]`, as an index.
    pub mapping: [u8; 8],
}

impl LookupTable {
    pub fn new(name: impl Into<String>, mapping: [u8; 8]) -> Result<Self> {
        let mut seen = [false; 8];
        for &m in &mapping {
            if m >= 8 || std::mem::replace(&mut seen[m as usize], true) {
                return Err(Error::invalid(format!("lookup table mapping {mapping:?} is not a permutation")));
            }
        }
        Ok(LookupTable {
            name: name.into(),
            mapping,
        })
    }

    pub fn apply(&self, input: &str) -> Result<&'static str> {
        let i = bit_index(input).ok_or_else(|| Error::invalid(format!("`{input}` is not a 3-bit string")))?;
        Ok(BIT_STRINGS[self.mapping[i] as usize])
    }

    pub fn inverse(&self) -> LookupTable {
        let mut inv = [0u8; 8];
        for (i, &m) in self.mapping.iter().enumerate() {
            inv[m as usize] = i as u8;
        }
        LookupTable {
            name: format!("{}^-1", self.name),
            mapping: inv,
        }
    }

    /// Re-labels outputs so that `self(from) == to`, by swapping two images.
    pub fn force(&mut self, from: &str, to: &str) -> Result<()> {
        let (f, t) = match (bit_index(from), bit_index(to)) {
            (Some(f), Some(t)) => (f, t as u8),
            _ => return Err(Error::invalid(format!("`{from}` -> `{to}` is not a bit-string pair"))),
        };
        let other = self.mapping.iter().position(|&m| m == t).expect("bijection");
        self.mapping.swap(f, other);
        Ok(())
    }
}

/// The six tables `t1..t6` of one dataset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TableSet(Vec<LookupTable>);

impl TableSet {
    pub fn new(tables: Vec<LookupTable>) -> Result<Self> {
        let names: Vec<&str> = tables.iter().map(|t| t.name.as_str()).collect();
        if names != TABLE_NAMES {
            return Err(Error::invalid(format!("expected tables {TABLE_NAMES:?}, got {names:?}")));
        }
        for t in &tables {
            LookupTable::new(t.name.clone(), t.mapping)?;
        }
        Ok(TableSet(tables))
    }

    pub fn tables(&self) -> &[LookupTable] {
        &self.0
    }

    pub fn get(&self, name: &str) -> Result<&LookupTable> {
        table_index(name)
            .map(|i| &self.0[i])
            .ok_or_else(|| Error::UnknownTable(name.to_string()))
    }

    /// Oracle target (without `<eos>`) for an input and named tables.
    pub fn apply<S: AsRef<str>>(&self, input: &str, names: &[S]) -> Result<Vec<String>> {
        let tables = names.iter().map(|n| self.get(n.as_ref())).collect::<Result<Vec<_>>>()?;
        apply_tables(input, &tables)
    }
}

/// `[x, t_a(x), t_b(t_a(x)), ...]`: the input followed by every
/// intermediate result, applying tables left to right.
pub fn apply_tables(input: &str, tables: &[&LookupTable]) -> Result<Vec<String>> {
    if bit_index(input).is_none() {
        return Err(Error::invalid(format!("`{input}` is not a 3-bit string")));
    }
    let mut out = Vec::with_capacity(tables.len() + 1);
    let mut cur: &str = input;
    out.push(cur.to_string());
    for t in tables {
        cur = t.apply(cur)?;
        out.push(cur.to_string());
    }
    Ok(out)
}

/// Six independent uniform permutations, a pure function of the seed.
pub fn sample_tables(seed: u64) -> TableSet {
    let mut rng = substream(seed, "tables");
    let tables = TABLE_NAMES
        .iter()
        .map(|&name| {
            let mut mapping: [u8; 8] = [0, 1, 2, 3, 4, 5, 6, 7];
            mapping.shuffle(&mut rng);
            LookupTable {
                name: name.to_string(),
                mapping,
            }
        })
        .collect();
    TableSet(tables)
}

/// Tables for `seed`, relabeled so the worked example holds:
/// `t1(000) = 110` and `t2(110) = 100`.
pub fn fixture_tables(seed: u64) -> TableSet {
    let mut set = sample_tables(seed);
    set.0[0].force("000", "110").expect("valid bit strings");
    set.0[1].force("110", "100").expect("valid bit strings");
    set
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sampled_tables_are_bijections() {
        for seed in 0..20 {
            for t in sample_tables(seed).tables() {
                let mut images: Vec<&str> = BIT_STRINGS.iter().map(|b| t.apply(b).unwrap()).collect();
                images.sort();
                assert_eq!(images, BIT_STRINGS);
            }
        }
    }

    #[test]
    fn sampling_is_deterministic() {
        assert_eq!(sample_tables(5), sample_tables(5));
        assert_ne!(sample_tables(5), sample_tables(6));
    }

    #[test]
    fn worked_example() {
        let set = fixture_tables(0);
        assert_eq!(set.apply("000", &["t1", "t2"]).unwrap(), ["000", "110", "100"]);
        let empty: [&str; 0] = [];
        assert_eq!(set.apply("011", &empty).unwrap(), ["011"]);
    }

    #[test]
    fn inverse_composition_returns_input() {
        let set = sample_tables(3);
        let t1 = set.get("t1").unwrap();
        let inv = t1.inverse();
        for b in BIT_STRINGS {
            let out = apply_tables(b, &[t1, &inv]).unwrap();
            assert_eq!(out[2], b);
            assert_eq!(out[1], t1.apply(b).unwrap());
        }
    }

    #[test]
    fn unknown_table_is_an_error() {
        let set = sample_tables(0);
        assert!(matches!(set.apply("000", &["t9"]), Err(Error::UnknownTable(n)) if n == "t9"));
        assert!(apply_tables("0000", &[]).is_err());
        assert!(LookupTable::new("t1", [0, 0, 1, 2, 3, 4, 5, 6]).is_err());
    }
}
