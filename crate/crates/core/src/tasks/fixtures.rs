//! Example rows printed with the task description, kept verbatim.
//!
//! Not every row agrees with the generator: some targets require
//! `t1(110) = 110` together with `t1(000) = 110` (impossible for a
//! bijection), and three of the four Noisy-Start rows print one more gold
//! index than there are target tokens. Such rows are quarantined: tests
//! check that they disagree for exactly the documented reason.

use super::Variant;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PrintedRow {
    pub variant: Variant,
    pub input: &'static str,
    pub target: &'static str,
    pub gold: &'static [usize],
}

pub const LOOKUP_ROWS: [PrintedRow; 4] = [
    PrintedRow {
        variant: Variant::Standard,
        input: "000 t1 .",
        target: "000 110 <eos>",
        gold: &[0, 1, 2],
    },
    PrintedRow {
        variant: Variant::Standard,
        input: "110 t1 .",
        target: "110 110 <eos>",
        gold: &[0, 1, 2],
    },
    PrintedRow {
        variant: Variant::Standard,
        input: "110 t2 .",
        target: "110 100 <eos>",
        gold: &[0, 1, 2],
    },
    PrintedRow {
        variant: Variant::Standard,
        input: "000 t1 t1 t2 .",
        target: "000 110 110 100 <eos>",
        gold: &[0, 1, 2, 3, 4],
    },
];

pub const NOISY_ROWS: [PrintedRow; 4] = [
    PrintedRow {
        variant: Variant::NoisyStart,
        input: "000 t2 ! t1 .",
        target: "000 110 <eos>",
        gold: &[0, 2, 3, 4],
    },
    PrintedRow {
        variant: Variant::NoisyStart,
        input: "110 t5 t3 t1 ! t1 .",
        target: "110 110 <eos>",
        gold: &[0, 4, 5, 6],
    },
    PrintedRow {
        variant: Variant::NoisyStart,
        input: "110 ! t2 .",
        target: "110 100 <eos>",
        gold: &[0, 2, 3],
    },
    PrintedRow {
        variant: Variant::NoisyStart,
        input: "000 t6 t3 ! t1 t1 t2 .",
        target: "000 110 110 100 <eos>",
        gold: &[0, 3, 4, 5, 6, 7],
    },
];

/// The printed Noisy-Start gold rule: `[0, pos(!), true tables..., pos(.)]`.
pub fn printed_noisy_gold(input: &[&str]) -> Option<Vec<usize>> {
    let bang = input.iter().position(|&t| t == super::START)?;
    let mut gold = vec![0];
    gold.extend(bang..input.len());
    Some(gold)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tasks::{fixture_tables, gold_attention, parse_program, EOS};

    fn target_matches(row: &PrintedRow) -> bool {
        let toks: Vec<&str> = row.input.split(' ').collect();
        let prog = parse_program(&toks, row.variant).unwrap();
        let mut t = fixture_tables(0).apply(&prog.input, &prog.tables).unwrap();
        t.push(EOS.to_string());
        t.join(" ") == row.target
    }

    #[test]
    fn consistent_lookup_rows_reproduce() {
        for row in [&LOOKUP_ROWS[0], &LOOKUP_ROWS[2]] {
            assert!(target_matches(row), "{row:?}");
            let toks: Vec<&str> = row.input.split(' ').collect();
            assert_eq!(gold_attention(&toks, row.variant).unwrap(), row.gold);
        }
    }

    #[test]
    fn quarantined_rows_need_a_non_bijective_t1() {
        for row in [&LOOKUP_ROWS[1], &LOOKUP_ROWS[3], &NOISY_ROWS[1], &NOISY_ROWS[3]] {
            assert!(!target_matches(row), "{row:?}");
            assert!(row.target.contains("110 110"));
        }
    }

    #[test]
    fn printed_noisy_gold_mostly_has_one_extra_entry() {
        for (i, row) in NOISY_ROWS.iter().enumerate() {
            let toks: Vec<&str> = row.input.split(' ').collect();
            let ours = gold_attention(&toks, row.variant).unwrap();
            assert_eq!(ours.len(), row.target.split(' ').count());
            if i == 2 {
                // Printed without the extra `!` step.
                assert_eq!(ours, row.gold);
            } else {
                assert_eq!(row.gold.len(), ours.len() + 1);
                assert_eq!(printed_noisy_gold(&toks).unwrap(), row.gold);
            }
        }
        assert!(target_matches(&NOISY_ROWS[0]) && target_matches(&NOISY_ROWS[2]));
    }
}
