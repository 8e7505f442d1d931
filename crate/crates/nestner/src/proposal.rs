//! Span-proposal combinatorics: centered enumeration, gold labeling,
//! balanced sampling for training, and non-maximum suppression.
//!
//! Everything here is pure and thread-safe. Token indices are 0-based and
//! spans are inclusive on both ends.

use rand::Rng;

/// A candidate entity span anchored at a center token.
///
/// Geometry: `start = center − floor((length−1)/2)`, `end = start + length − 1`.
/// For odd lengths the window is symmetric around the center; for even
/// lengths the extra token falls on the right.
#[derive(Debug, Clone, PartialEq)]
pub struct Proposal {
    pub center: usize,
    pub length: usize,
    pub start: usize,
    pub end: usize,
    /// Entity probability, absent until scored.
    pub p_entity: Option<f64>,
}

impl Proposal {
    pub fn span(&self) -> (usize, usize) {
        (self.start, self.end)
    }

    pub fn overlaps(&self, other: &Proposal) -> bool {
        self.start <= other.end && other.start <= self.end
    }
}

/// Resolve a (center, length) pair to signed span bounds. Negative or
/// past-the-end indices mean the proposal is invalid for the sentence;
/// the caller decides (enumeration simply skips them).
pub fn span_of(center: usize, length: usize) -> (i64, i64) {
    debug_assert!(length >= 1);
    let start = center as i64 - ((length as i64 - 1) / 2);
    (start, start + length as i64 - 1)
}

/// All in-bounds proposals for a sentence of `n` tokens with max length `r`,
/// ordered by (center ascending, length ascending). Distinct (center, length)
/// pairs always resolve to distinct spans, so the output has no duplicates.
pub fn enumerate_proposals(n: usize, r: usize) -> Vec<Proposal> {
    let mut out = Vec::new();
    for center in 0..n {
        for length in 1..=r {
            let (s, e) = span_of(center, length);
            if s >= 0 && (e as usize) < n {
                out.push(Proposal {
                    center,
                    length,
                    start: s as usize,
                    end: e as usize,
                    p_entity: None,
                });
            }
        }
    }
    out
}

/// Number of in-bounds proposals for `n` tokens and max length `r`:
/// each length L contributes one span per valid start, n − L + 1 of them.
pub fn proposal_count(n: usize, r: usize) -> usize {
    (1..=r.min(n)).map(|len| n - len + 1).sum()
}

/// Binary boundary labels: 1 iff the proposal's (start, end) exactly matches
/// a gold span. Entity types play no part at this stage.
pub fn label_proposals(proposals: &[Proposal], gold: &[(usize, usize)]) -> Vec<bool> {
    proposals
        .iter()
        .map(|p| gold.contains(&(p.start, p.end)))
        .collect()
}

/// Training-batch subsampling over labeled proposals, by index.
///
/// Every positive is kept. Negatives are drawn uniformly without replacement
/// until the total reaches `n_b` (or negatives run out). When positives alone
/// reach `n_b`, they are all kept and no negative is added. The returned
/// indices are sorted ascending.
pub fn sample_batch_proposals<R: Rng>(labels: &[bool], n_b: usize, rng: &mut R) -> Vec<usize> {
    let positives: Vec<usize> = (0..labels.len()).filter(|&i| labels[i]).collect();
    let negatives: Vec<usize> = (0..labels.len()).filter(|&i| !labels[i]).collect();
    let mut chosen = positives;
    if chosen.len() < n_b {
        let want = (n_b - chosen.len()).min(negatives.len());
        let picks = rand::seq::index::sample(rng, negatives.len(), want);
        chosen.extend(picks.iter().map(|i| negatives[i]));
    }
    chosen.sort_unstable();
    chosen
}

/// Greedy non-maximum suppression.
///
/// Repeatedly select the highest-probability proposal (ties broken toward
/// the shorter span, then the smaller start), drop everything sharing a
/// token with it, and continue until no proposal remains. The survivors are
/// returned sorted by start; they are pairwise non-overlapping.
///
/// Every proposal must already carry `p_entity`.
pub fn nms(proposals: &[Proposal]) -> Vec<Proposal> {
    let mut pool: Vec<&Proposal> = proposals.iter().collect();
    let mut kept: Vec<Proposal> = Vec::new();
    while !pool.is_empty() {
        let mut best = 0;
        for i in 1..pool.len() {
            let (a, b) = (pool[i], pool[best]);
            let pa = a.p_entity.expect("nms requires scored proposals");
            let pb = b.p_entity.expect("nms requires scored proposals");
            let better = pa > pb
                || (pa == pb
                    && (a.length < b.length || (a.length == b.length && a.start < b.start)));
            if better {
                best = i;
            }
        }
        let winner = pool.swap_remove(best).clone();
        pool.retain(|p| !p.overlaps(&winner));
        kept.push(winner);
    }
    kept.sort_by_key(|p| p.start);
    kept
}
