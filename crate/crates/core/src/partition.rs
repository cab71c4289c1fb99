//! Size-bounded segmentation of hash buckets.
//!
//! Buckets are ordered by code ordinal. One left-to-right pass merges every
//! undersized bucket into a neighbour (the one closer in Hamming distance,
//! ties to the lower ordinal) until it reaches `s_min`; a second pass splits
//! anything above `s_max` into `ceil(m / s_max)` contiguous runs whose sizes
//! differ by at most one.

use std::collections::{BTreeMap, VecDeque};

use crate::error::{Error, Result};
use crate::graph::{IdAllocator, NodeId};
use crate::lsh::{hamming_distance, HashCode};

/// Inclusive segment size bounds.
///
/// Besides `1 < s_min <= s_max`, the bounds must satisfy `s_max >= 2 * s_min - 1`:
/// below that, some totals (e.g. 5 with bounds 4..=4) admit no partition at all.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SizeBounds {
    s_min: usize,
    s_max: usize,
}

impl SizeBounds {
    pub fn new(s_min: usize, s_max: usize) -> Result<Self> {
        if s_min <= 1 {
            return Err(Error::Config(format!("s_min must be greater than 1 (got {s_min})")));
        }
        if s_max < s_min {
            return Err(Error::Config(format!("s_max ({s_max}) is below s_min ({s_min})")));
        }
        if s_max < 2 * s_min - 1 {
            return Err(Error::Config(format!(
                "s_max ({s_max}) must be at least 2*s_min-1 ({}) so every layer can be partitioned",
                2 * s_min - 1
            )));
        }
        Ok(Self { s_min, s_max })
    }

    pub fn s_min(&self) -> usize {
        self.s_min
    }

    pub fn s_max(&self) -> usize {
        self.s_max
    }

    pub fn contains(&self, n: usize) -> bool {
        (self.s_min..=self.s_max).contains(&n)
    }
}

/// Nodes of one layer sharing a hash code.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Bucket {
    pub code: HashCode,
    pub members: Vec<NodeId>,
    pub affected: bool,
}

/// A bounded, ordered group of sibling nodes that becomes one parent.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Segment {
    pub id: NodeId,
    pub member_ids: Vec<NodeId>,
    pub source_codes: Vec<HashCode>,
    pub affected: bool,
}

/// Groups nodes by code: one bucket per distinct code, ascending by ordinal,
/// members in input order.
pub fn assign_buckets(nodes: &[(NodeId, HashCode)]) -> Result<Vec<Bucket>> {
    if let Some((_, first)) = nodes.first() {
        if let Some((id, bad)) = nodes.iter().find(|(_, c)| c.len() != first.len()) {
            return Err(Error::Input(format!(
                "node {id} has a {}-bit code, expected {} bits",
                bad.len(),
                first.len()
            )));
        }
    }
    let mut by_code: BTreeMap<&HashCode, Vec<NodeId>> = BTreeMap::new();
    for (id, code) in nodes {
        by_code.entry(code).or_default().push(*id);
    }
    Ok(by_code
        .into_iter()
        .map(|(code, members)| Bucket {
            code: code.clone(),
            members,
            affected: false,
        })
        .collect())
}

/// Merge-then-split over ordered buckets; segment ids come from `ids`.
pub fn repartition(buckets: &[Bucket], bounds: SizeBounds, ids: &mut IdAllocator) -> Vec<Segment> {
    let groups = buckets
        .iter()
        .map(|b| Group {
            members: b.members.iter().map(|m| (*m, b.code.clone())).collect(),
            affected: b.affected,
            origin: None,
        })
        .collect();
    rebalance(groups, bounds)
        .into_iter()
        .map(|g| Segment {
            id: ids.allocate(),
            source_codes: g.codes(),
            member_ids: g.members.into_iter().map(|(id, _)| id).collect(),
            affected: g.affected,
        })
        .collect()
}

/// Working unit of the merge/split passes. `origin` names the parent node a
/// group was loaded from; it survives only while the group is untouched.
#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct Group {
    pub members: Vec<(NodeId, HashCode)>,
    pub affected: bool,
    pub origin: Option<NodeId>,
}

impl Group {
    fn len(&self) -> usize {
        self.members.len()
    }

    /// Distinct member codes in ascending order.
    pub fn codes(&self) -> Vec<HashCode> {
        let mut codes: Vec<HashCode> = self.members.iter().map(|(_, c)| c.clone()).collect();
        codes.sort();
        codes.dedup();
        codes
    }

    fn distance(&self, other: &Group) -> u32 {
        let mine = self.codes();
        let theirs = other.codes();
        mine.iter()
            .flat_map(|a| theirs.iter().map(move |b| hamming_distance(a, b).unwrap_or(u32::MAX)))
            .min()
            .unwrap_or(u32::MAX)
    }

    /// `left` followed by `right`, stably ordered by code.
    fn join(left: Group, right: Group) -> Group {
        let mut members = left.members;
        members.extend(right.members);
        members.sort_by(|a, b| a.1.cmp(&b.1));
        Group {
            members,
            affected: true,
            origin: None,
        }
    }
}

/// Merge pass then split pass over groups in adjacency order.
///
/// Merging or splitting marks the result affected and clears its origin.
pub(crate) fn rebalance(groups: Vec<Group>, bounds: SizeBounds) -> Vec<Group> {
    let mut queue: VecDeque<Group> = groups.into_iter().filter(|g| g.len() > 0).collect();
    let mut merged: Vec<Group> = Vec::with_capacity(queue.len());
    while let Some(mut g) = queue.pop_front() {
        while g.len() < bounds.s_min {
            let take_prev = match (merged.last(), queue.front()) {
                (None, None) => break,
                (Some(_), None) => true,
                (None, Some(_)) => false,
                (Some(prev), Some(next)) => g.distance(prev) <= g.distance(next),
            };
            g = if take_prev {
                Group::join(merged.pop().unwrap(), g)
            } else {
                Group::join(g, queue.pop_front().unwrap())
            };
        }
        merged.push(g);
    }

    let mut out = Vec::with_capacity(merged.len());
    for g in merged {
        if g.len() <= bounds.s_max {
            out.push(g);
            continue;
        }
        let mut rest = g.members.as_slice();
        for size in split_sizes(g.len(), bounds.s_max) {
            let (run, tail) = rest.split_at(size);
            out.push(Group {
                members: run.to_vec(),
                affected: true,
                origin: None,
            });
            rest = tail;
        }
    }
    out
}

/// `ceil(m / s_max)` near-equal run lengths summing to `m`, larger runs first.
pub fn split_sizes(m: usize, s_max: usize) -> Vec<usize> {
    let runs = m.div_ceil(s_max).max(1);
    let base = m / runs;
    let extra = m % runs;
    (0..runs).map(|i| base + usize::from(i < extra)).collect()
}
