//! Text helpers shared across stages: the normalization used by every
//! substring check, whitespace tokenization, and the word-level alignment
//! that locates the substituted entity in a counter-memory answer.

use std::collections::HashMap;

/// Canonical form for substring checks: lowercased with runs of whitespace
/// collapsed to single spaces. Deliberately no stemming and no punctuation
/// stripping — "Lyon," and "Lyon" are different strings on purpose, since the
/// checks are about literal spans.
pub fn normalize(s: &str) -> String {
    s.split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}

/// Case-insensitive, whitespace-normalized containment. Empty needles never
/// match.
pub fn contains_normalized(haystack: &str, needle: &str) -> bool {
    let n = normalize(needle);
    if n.is_empty() {
        return false;
    }
    normalize(haystack).contains(&n)
}

/// Whitespace tokens with their original spelling.
pub fn tokens(s: &str) -> Vec<&str> {
    s.split_whitespace().collect()
}

/// A token folded for comparison: lowercased with non-alphanumeric edges
/// trimmed ("Lyon," == "lyon", "'23'" == "23"). Interior punctuation stays.
pub fn fold_token(t: &str) -> String {
    t.trim_matches(|c: char| !c.is_alphanumeric())
        .to_lowercase()
}

/// Multiset of folded tokens; empty tokens (pure punctuation) are dropped.
pub fn token_bag(s: &str) -> HashMap<String, usize> {
    let mut bag = HashMap::new();
    for t in s.split_whitespace() {
        let f = fold_token(t);
        if !f.is_empty() {
            *bag.entry(f).or_insert(0) += 1;
        }
    }
    bag
}

/// True when `inner` is contained in `outer` as a multiset.
pub fn bag_subsumes(outer: &HashMap<String, usize>, inner: &HashMap<String, usize>) -> bool {
    inner
        .iter()
        .all(|(t, &c)| outer.get(t).copied().unwrap_or(0) >= c)
}

/// A contiguous token run, by index into the token list it came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Span {
    pub start: usize,
    pub len: usize,
}

/// Aligns two token lists by longest common subsequence (folded comparison)
/// and returns the unaligned runs on each side. Matching prefers the earliest
/// positions, so an entity swap like "Paris" -> "Lyon in France" surfaces as
/// one gap on each side rather than a scatter of fragments.
pub fn align_gaps(a: &[&str], b: &[&str]) -> (Vec<Span>, Vec<Span>) {
    let fa: Vec<String> = a.iter().map(|t| fold_token(t)).collect();
    let fb: Vec<String> = b.iter().map(|t| fold_token(t)).collect();
    let (n, m) = (fa.len(), fb.len());

    // dp[i][j] = LCS length of fa[i..] vs fb[j..]
    let mut dp = vec![vec![0usize; m + 1]; n + 1];
    for i in (0..n).rev() {
        for j in (0..m).rev() {
            dp[i][j] = if fa[i] == fb[j] {
                dp[i + 1][j + 1] + 1
            } else {
                dp[i + 1][j].max(dp[i][j + 1])
            };
        }
    }

    let mut matched_a = vec![false; n];
    let mut matched_b = vec![false; m];
    let (mut i, mut j) = (0, 0);
    while i < n && j < m {
        if fa[i] == fb[j] && dp[i][j] == dp[i + 1][j + 1] + 1 {
            matched_a[i] = true;
            matched_b[j] = true;
            i += 1;
            j += 1;
        } else if dp[i + 1][j] >= dp[i][j + 1] {
            i += 1;
        } else {
            j += 1;
        }
    }

    (runs_of_unmatched(&matched_a), runs_of_unmatched(&matched_b))
}

fn runs_of_unmatched(matched: &[bool]) -> Vec<Span> {
    let mut spans = Vec::new();
    let mut start = None;
    for (idx, &hit) in matched.iter().enumerate() {
        match (hit, start) {
            (false, None) => start = Some(idx),
            (true, Some(s)) => {
                spans.push(Span {
                    start: s,
                    len: idx - s,
                });
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        spans.push(Span {
            start: s,
            len: matched.len() - s,
        });
    }
    spans
}
