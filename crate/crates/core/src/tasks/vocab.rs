use crate::error::{Error, Result};

pub const PAD: &str = "<pad>";
pub const SOS: &str = "<sos>";
pub const EOS: &str = "<eos>";
pub const STOP: &str = ".";
pub const START: &str = "!";

/// The eight 3-bit strings, in numeric order.
pub const BIT_STRINGS: [&str; 8] = ["000", "001", "010", "011", "100", "101", "110", "111"];

pub const TABLE_NAMES: [&str; 6] = ["t1", "t2", "t3", "t4", "t5", "t6"];

const TOKENS: [&str; 19] = [
    PAD, SOS, EOS, "000", "001", "010", "011", "100", "101", "110", "111", "t1", "t2", "t3", "t4", "t5", "t6",
    STOP, START,
];

/// Fixed 19-symbol vocabulary shared by every task variant.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Vocab;

impl Vocab {
    pub const PAD_ID: usize = 0;
    pub const SOS_ID: usize = 1;
    pub const EOS_ID: usize = 2;

    pub fn new() -> Self {
        Vocab
    }

    pub fn len(&self) -> usize {
        TOKENS.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn tokens(&self) -> &'static [&'static str] {
        &TOKENS
    }

    pub fn id(&self, token: &str) -> Result<usize> {
        TOKENS
            .iter()
            .position(|&t| t == token)
            .ok_or_else(|| Error::UnknownToken(token.to_string()))
    }

    pub fn token(&self, id: usize) -> Result<&'static str> {
        TOKENS
            .get(id)
            .copied()
            .ok_or_else(|| Error::UnknownToken(format!("#{id}")))
    }

    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Result<Vec<usize>> {
        tokens.iter().map(|t| self.id(t.as_ref())).collect()
    }

    pub fn decode(&self, ids: &[usize]) -> Result<Vec<String>> {
        ids.iter().map(|&i| self.token(i).map(str::to_string)).collect()
    }
}

pub(crate) fn bit_index(token: &str) -> Option<usize> {
    BIT_STRINGS.iter().position(|&b| b == token)
}

pub(crate) fn table_index(token: &str) -> Option<usize> {
    TABLE_NAMES.iter().position(|&t| t == token)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ids_round_trip() {
        let v = Vocab::new();
        assert_eq!(v.len(), 19);
        for (i, t) in v.tokens().iter().enumerate() {
            assert_eq!(v.id(t).unwrap(), i);
            assert_eq!(v.token(i).unwrap(), *t);
        }
        assert_eq!(v.id(EOS).unwrap(), Vocab::EOS_ID);
        assert!(matches!(v.id("t7"), Err(Error::UnknownToken(t)) if t == "t7"));
    }
}
