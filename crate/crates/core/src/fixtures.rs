//! Planted-structure classrooms.
//!
//! The surrogate classroom has five planted blocks: 4 girls, 4 boys, 7 boys,
//! 7 girls and 3 girls. Heather is named four times with each of the two
//! girls' blocks and never with both; she is planted in the larger one. Ken
//! is named twice with the 7 boys and once with the 4 boys; he is planted
//! with the 7 boys.

use rand::seq::index::sample;

use crate::error::Result;
use crate::null_models::rng_from_seed;
use crate::recall::{parse_reports, ChildId, RecallMatrix};

/// The committed surrogate report list.
pub const SURROGATE_REPORTS: &str = include_str!("../fixtures/surrogate_classroom.txt");

const GIRLS_SMALL: [&str; 4] = ["Amy", "Beth", "Cara", "Dana"];
const BOYS_SMALL: [&str; 4] = ["Eli", "Finn", "Gus", "Hal"];
const BOYS_LARGE: [&str; 7] = ["Arn", "Ken", "Ivan", "Jack", "Leo", "Max", "Ned"];
const GIRLS_LARGE: [&str; 7] = ["Olga", "Pia", "Quin", "Rosa", "Sue", "Tia", "Uma"];
const GIRLS_TRIO: [&str; 3] = ["Val", "Wren", "Zoe"];
const HEATHER: &str = "Heather";
const KEN: &str = "Ken";

/// `size` consecutive members of `block` starting at `offset`, wrapping, in block order.
fn rotation<'a>(block: &[&'a str], size: usize, offset: usize) -> Vec<&'a str> {
    let n = block.len();
    let mut picked: Vec<usize> = (0..size).map(|i| (offset + i) % n).collect();
    picked.sort_unstable();
    picked.into_iter().map(|i| block[i]).collect()
}

fn surrogate_report_lists() -> Vec<Vec<&'static str>> {
    let mut reports: Vec<Vec<&str>> = Vec::new();
    let boys_large_core: Vec<&str> = BOYS_LARGE.iter().copied().filter(|c| *c != KEN).collect();
    let boys_large_rest = &boys_large_core[1..];

    for k in 0..7 {
        reports.push(GIRLS_SMALL.to_vec());
        if k < 3 {
            reports.push(rotation(&GIRLS_SMALL, 3, k));
        }
    }
    for k in 0..6 {
        reports.push(BOYS_SMALL.to_vec());
        if k < 3 {
            reports.push(rotation(&BOYS_SMALL, 3, k + 1));
        }
    }
    let mut with_ken = BOYS_SMALL.to_vec();
    with_ken.push(KEN);
    reports.push(with_ken);

    // Arn is named in all 15 of these
    for _ in 0..2 {
        reports.push(BOYS_LARGE.to_vec());
    }
    for k in 0..8 {
        let mut r = vec!["Arn"];
        r.extend(rotation(boys_large_rest, 3, k));
        reports.push(r);
    }
    for _ in 0..4 {
        reports.push(boys_large_core.clone());
    }
    let mut r = vec!["Arn"];
    r.extend(rotation(boys_large_rest, 4, 2));
    reports.push(r);

    for _ in 0..4 {
        let mut r = vec![HEATHER];
        r.extend(GIRLS_LARGE);
        reports.push(r);
        let mut r = vec![HEATHER];
        r.extend(GIRLS_TRIO);
        reports.push(r);
    }
    for k in 0..3 {
        reports.push(rotation(&GIRLS_LARGE, 4, 2 * k));
    }
    for k in 0..10 {
        reports.push(rotation(&GIRLS_LARGE, 5 + k % 3, k));
    }
    for _ in 0..4 {
        reports.push(GIRLS_TRIO.to_vec());
    }

    let mut big: Vec<&str> = GIRLS_LARGE.to_vec();
    big.extend(GIRLS_TRIO);
    big.extend(["Cara", "Dana"]);
    reports.push(big);
    reports
}

/// Renders the surrogate report list; the committed fixture is this text.
pub fn generate_surrogate_text() -> String {
    let mut out = String::from(
        "# planted-structure classroom: 26 children, 61 reports, 5 planted blocks\n\
         # one report per line, members comma-separated\n",
    );
    for r in surrogate_report_lists() {
        out.push_str(&r.join(","));
        out.push('\n');
    }
    out
}

pub fn surrogate_classroom() -> Result<RecallMatrix> {
    parse_reports(SURROGATE_REPORTS)
}

/// Planted blocks of the surrogate as child indices of `r`, Heather in the larger girls' block.
pub fn surrogate_blocks(r: &RecallMatrix) -> Vec<Vec<usize>> {
    let mut girls_large: Vec<&str> = GIRLS_LARGE.to_vec();
    girls_large.push(HEATHER);
    let blocks: [&[&str]; 5] = [&GIRLS_SMALL, &BOYS_SMALL, &BOYS_LARGE, &girls_large, &GIRLS_TRIO];
    blocks
        .iter()
        .map(|b| {
            let mut ix: Vec<usize> = b.iter().filter_map(|c| r.index_of(c)).collect();
            ix.sort_unstable();
            ix
        })
        .collect()
}

/// A classroom whose reports each name a random subset of one block.
/// Every report names between `min_size` and the whole block.
pub fn planted_classroom(
    block_sizes: &[usize],
    reports_per_block: usize,
    min_size: usize,
    seed: u64,
) -> Result<(RecallMatrix, Vec<Vec<usize>>)> {
    let mut rng = rng_from_seed(seed);
    let mut children = Vec::new();
    let mut blocks = Vec::new();
    for (b, &size) in block_sizes.iter().enumerate() {
        let start = children.len();
        for k in 0..size {
            children.push(ChildId::new(format!("b{b}c{k}"))?);
        }
        blocks.push((start..start + size).collect::<Vec<_>>());
    }
    let mut reports = Vec::new();
    for block in &blocks {
        // first report names the whole block so nobody is left out
        reports.push(block.clone());
        for _ in 1..reports_per_block {
            let lo = min_size.clamp(1, block.len());
            let size = rand::Rng::random_range(&mut rng, lo..=block.len());
            let mut members: Vec<usize> = sample(&mut rng, block.len(), size).iter().map(|i| block[i]).collect();
            members.sort_unstable();
            reports.push(members);
        }
    }
    Ok((RecallMatrix::from_reports(children, &reports)?, blocks))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn committed_fixture_matches_generator() {
        assert_eq!(SURROGATE_REPORTS, generate_surrogate_text());
    }

    #[test]
    fn surrogate_shape() {
        let r = surrogate_classroom().unwrap();
        assert_eq!((r.n_children(), r.n_reports()), (26, 61));
        let m = r.margins();
        assert_eq!(m.col_sums.iter().filter(|&&s| s == 4).count(), 28);
        assert_eq!(m.col_sums.iter().filter(|&&s| s == 12).count(), 1);
        assert_eq!(*m.col_sums.iter().max().unwrap(), 12);
        assert_eq!(m.row_sums[r.index_of("Arn").unwrap()], 15);
        assert_eq!(m.row_sums[r.index_of("Ken").unwrap()], 3);
        assert_eq!(m.row_sums[r.index_of("Heather").unwrap()], 8);
        assert!(r.validate_scm_limits().is_empty());
        let blocks = surrogate_blocks(&r);
        assert_eq!(blocks.iter().map(Vec::len).collect::<Vec<_>>(), vec![4, 4, 7, 8, 3]);
        let mut all: Vec<usize> = blocks.concat();
        all.sort_unstable();
        assert_eq!(all, (0..26).collect::<Vec<_>>());
    }

    #[test]
    fn heather_is_never_named_with_both_girls_blocks() {
        let r = surrogate_classroom().unwrap();
        let h = r.index_of(HEATHER).unwrap();
        let olga = r.index_of("Olga").unwrap();
        let val = r.index_of("Val").unwrap();
        for j in 0..r.n_reports() {
            if r.get(h, j) == 1 {
                assert!(r.get(olga, j) + r.get(val, j) == 1);
            }
        }
    }

    #[test]
    fn planted_classroom_is_seeded() {
        let (a, blocks) = planted_classroom(&[5, 6, 4], 8, 3, 11).unwrap();
        let (b, _) = planted_classroom(&[5, 6, 4], 8, 3, 11).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.n_reports(), 24);
        assert_eq!(blocks[2], vec![11, 12, 13, 14]);
    }
}
