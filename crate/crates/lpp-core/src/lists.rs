use crate::error::{LppError, Result};
use std::fmt;

/// A letter of the alphabet `{1, 2, 3, 12, 23, 123}`: a run of consecutive levels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Symbol {
    S123,
    S12,
    S23,
    S1,
    S2,
    S3,
}

impl Symbol {
    /// Canonical order used by type vectors.
    pub const ALL: [Symbol; 6] = [Symbol::S123, Symbol::S12, Symbol::S23, Symbol::S1, Symbol::S2, Symbol::S3];

    pub fn slot(self) -> usize {
        self as usize
    }

    /// First and last level covered, 1-based.
    pub fn levels(self) -> (usize, usize) {
        match self {
            Symbol::S1 => (1, 1),
            Symbol::S2 => (2, 2),
            Symbol::S3 => (3, 3),
            Symbol::S12 => (1, 2),
            Symbol::S23 => (2, 3),
            Symbol::S123 => (1, 3),
        }
    }

    pub fn from_levels(lo: usize, hi: usize) -> Option<Symbol> {
        match (lo, hi) {
            (1, 1) => Some(Symbol::S1),
            (2, 2) => Some(Symbol::S2),
            (3, 3) => Some(Symbol::S3),
            (1, 2) => Some(Symbol::S12),
            (2, 3) => Some(Symbol::S23),
            (1, 3) => Some(Symbol::S123),
            _ => None,
        }
    }

    pub fn covers(self, level: usize) -> bool {
        let (lo, hi) = self.levels();
        lo <= level && level <= hi
    }

    /// The merged symbol when the two letters form a pole pair, i.e. their level
    /// ranges abut.
    pub fn merge(self, other: Symbol) -> Option<Symbol> {
        let (a, b) = (self.levels(), other.levels());
        if a.1 + 1 == b.0 {
            Symbol::from_levels(a.0, b.1)
        } else if b.1 + 1 == a.0 {
            Symbol::from_levels(b.0, a.1)
        } else {
            None
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Symbol::S1 => "1",
            Symbol::S2 => "2",
            Symbol::S3 => "3",
            Symbol::S12 => "12",
            Symbol::S23 => "23",
            Symbol::S123 => "123",
        }
    }

    fn from_label(s: &str) -> Option<Symbol> {
        Symbol::ALL.into_iter().find(|x| x.label() == s)
    }
}

impl fmt::Display for Symbol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let l = self.label();
        if l.len() == 1 {
            f.write_str(l)
        } else {
            write!(f, "({l})")
        }
    }
}

/// An ordered list of symbols. Position `k` corresponds to the `k`-th circle
/// counted from the inside.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct IndexList {
    pub entries: Vec<Symbol>,
}

impl IndexList {
    pub fn new(entries: Vec<Symbol>) -> Self {
        IndexList { entries }
    }

    /// Parses strings such as `"(23)12"` or `"3122"`.
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        let mut chars = text.chars().filter(|c| !c.is_whitespace());
        while let Some(c) = chars.next() {
            match c {
                '(' => {
                    let mut inner = String::new();
                    loop {
                        match chars.next() {
                            Some(')') => break,
                            Some(d) => inner.push(d),
                            None => return Err(LppError::Domain(format!("unclosed parenthesis in {text:?}"))),
                        }
                    }
                    let sym = Symbol::from_label(&inner)
                        .ok_or_else(|| LppError::Domain(format!("unknown symbol ({inner}) in {text:?}")))?;
                    entries.push(sym);
                }
                '1' => entries.push(Symbol::S1),
                '2' => entries.push(Symbol::S2),
                '3' => entries.push(Symbol::S3),
                other => return Err(LppError::Domain(format!("unexpected character {other:?} in {text:?}"))),
            }
        }
        Ok(IndexList { entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Counts `(a123, a12, a23, a1, a2, a3)`.
    pub fn type_vector(&self) -> [usize; 6] {
        let mut t = [0usize; 6];
        for s in &self.entries {
            t[s.slot()] += 1;
        }
        t
    }

    /// Multiplicities `(n1, n2, n3)`: how many entries cover each level.
    pub fn multiplicity(&self) -> [usize; 3] {
        let mut n = [0usize; 3];
        for s in &self.entries {
            for (lvl, slot) in n.iter_mut().enumerate() {
                if s.covers(lvl + 1) {
                    *slot += 1;
                }
            }
        }
        n
    }

    /// Maximal runs `(symbol, length)`.
    pub fn blocks(&self) -> Vec<(Symbol, usize)> {
        let mut out: Vec<(Symbol, usize)> = Vec::new();
        for &s in &self.entries {
            match out.last_mut() {
                Some((t, c)) if *t == s => *c += 1,
                _ => out.push((s, 1)),
            }
        }
        out
    }

    fn from_blocks(blocks: &[(Symbol, usize)]) -> Self {
        IndexList {
            entries: blocks
                .iter()
                .flat_map(|&(s, c)| std::iter::repeat(s).take(c))
                .collect(),
        }
    }
}

impl fmt::Display for IndexList {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for s in &self.entries {
            write!(f, "{s}")?;
        }
        Ok(())
    }
}

/// Sign of a rewrite term. Merged terms carry signs that depend on the
/// kernel ordering and are left for the numerical verifier to settle.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SignMarker {
    Plus,
    Minus,
    Unknown,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RewriteTerm {
    pub coefficient: u64,
    pub sign: SignMarker,
    pub list: IndexList,
}

fn binomial(n: usize, k: usize) -> u64 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u64 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u64 / (i + 1) as u64;
    }
    acc
}

/// `i! * C(m, i) * C(n, i)`.
pub fn merge_coefficient(m: usize, n: usize, i: usize) -> u64 {
    let fact: u64 = (1..=i as u64).product();
    fact * binomial(m, i) * binomial(n, i)
}

/// Moves block `block` (say `alpha^m`) past the next block (`beta^n`).
///
/// Without a pole between the two letters this is a plain swap `beta^n alpha^m`.
/// For a pole pair the result is the sum over `i` of
/// `merge_coefficient(m, n, i)` times the list with `beta^{n-i} (alpha beta)^i alpha^{m-i}`.
pub fn list_rewrite(list: &IndexList, block: usize) -> Result<Vec<RewriteTerm>> {
    let blocks = list.blocks();
    if block + 1 >= blocks.len() {
        return Err(LppError::Rule(format!(
            "list {list} has {} blocks; no block follows block {block}",
            blocks.len()
        )));
    }
    let (alpha, m) = blocks[block];
    let (beta, n) = blocks[block + 1];
    let splice = |middle: Vec<(Symbol, usize)>| {
        let mut all: Vec<(Symbol, usize)> = blocks[..block].to_vec();
        all.extend(middle.into_iter().filter(|&(_, c)| c > 0));
        all.extend_from_slice(&blocks[block + 2..]);
        IndexList::from_blocks(&all)
    };
    match alpha.merge(beta) {
        None => Ok(vec![RewriteTerm {
            coefficient: 1,
            sign: SignMarker::Plus,
            list: splice(vec![(beta, n), (alpha, m)]),
        }]),
        Some(merged) => Ok((0..=m.min(n))
            .map(|i| RewriteTerm {
                coefficient: merge_coefficient(m, n, i),
                sign: if i == 0 { SignMarker::Plus } else { SignMarker::Unknown },
                list: splice(vec![(beta, n - i), (merged, i), (alpha, m - i)]),
            })
            .collect()),
    }
}

/// Every list of the given multiplicity, in lexicographic order of entries.
pub fn lists_with_multiplicity(n: [usize; 3]) -> Vec<IndexList> {
    let mut out = Vec::new();
    let mut current = Vec::new();
    fn rec(remaining: [usize; 3], current: &mut Vec<Symbol>, out: &mut Vec<IndexList>) {
        if remaining == [0, 0, 0] {
            out.push(IndexList::new(current.clone()));
            return;
        }
        for s in [Symbol::S1, Symbol::S2, Symbol::S3, Symbol::S12, Symbol::S23, Symbol::S123] {
            let (lo, hi) = s.levels();
            if (lo..=hi).all(|l| remaining[l - 1] > 0) {
                let mut r = remaining;
                (lo..=hi).for_each(|l| r[l - 1] -= 1);
                current.push(s);
                rec(r, current, out);
                current.pop();
            }
        }
    }
    rec(n, &mut current, &mut out);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_display_round_trip() {
        for s in ["(23)12", "3122", "(123)2", "33(23)112", "(12)3"] {
            assert_eq!(IndexList::parse(s).unwrap().to_string(), s);
        }
        assert!(IndexList::parse("(13)").is_err());
        assert!(IndexList::parse("(12").is_err());
    }

    #[test]
    fn type_and_multiplicity() {
        let l = IndexList::parse("33(23)112").unwrap();
        assert_eq!(l.type_vector(), [0, 0, 1, 2, 1, 2]);
        assert_eq!(l.multiplicity(), [2, 2, 3]);
        let l = IndexList::parse("33(12)(12)3").unwrap();
        assert_eq!(l.type_vector(), [0, 2, 0, 0, 0, 3]);
        assert_eq!(l.multiplicity(), [2, 2, 3]);
    }

    #[test]
    fn eleven_lists_of_unit_multiplicity() {
        let all = lists_with_multiplicity([1, 1, 1]);
        assert_eq!(all.len(), 11);
        assert!(all.contains(&IndexList::parse("(23)1").unwrap()));
    }

    #[test]
    fn swap_rule_commutes_non_adjacent_levels() {
        let out = list_rewrite(&IndexList::parse("132").unwrap(), 0).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].list.to_string(), "312");
        assert_eq!((out[0].coefficient, out[0].sign), (1, SignMarker::Plus));
    }

    #[test]
    fn merge_rule_on_single_letters() {
        let out = list_rewrite(&IndexList::parse("12").unwrap(), 0).unwrap();
        let lists: Vec<String> = out.iter().map(|t| t.list.to_string()).collect();
        assert_eq!(lists, vec!["21", "(12)"]);
        assert_eq!(out[1].coefficient, 1);
        assert_eq!(out[1].sign, SignMarker::Unknown);
    }

    #[test]
    fn merge_rule_with_powers() {
        let l = IndexList::parse("33(12)(12)").unwrap();
        let out = list_rewrite(&l, 0).unwrap();
        let lists: Vec<String> = out.iter().map(|t| t.list.to_string()).collect();
        assert_eq!(lists, vec!["(12)(12)33", "(12)(123)3", "(123)(123)"]);
        let coeffs: Vec<u64> = out.iter().map(|t| t.coefficient).collect();
        assert_eq!(coeffs, vec![1, 4, 2]);
        for t in &out {
            assert_eq!(t.list.multiplicity(), l.multiplicity());
        }
    }

    #[test]
    fn rewrite_needs_a_following_block() {
        assert!(matches!(
            list_rewrite(&IndexList::parse("22").unwrap(), 0),
            Err(LppError::Rule(_))
        ));
    }
}
