//! Depth-first enumeration of metapath instances.
//!
//! Instances are walks: nodes may repeat. Parallel edges collapse into one
//! neighbor entry, and neighbors are visited in account-id order, so the
//! output order is fully determined by the graph. When a pattern has no
//! complete instance around the anchor, the non-extendable partial walks
//! are returned instead.

use std::collections::HashMap;

use rayon::prelude::*;
use serde::Serialize;

use super::{MetapathError, MetapathPattern};
use crate::graph::{AccountId, HetGraph, NodeIx};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct MatchLimits {
    pub max_instances: usize,
}

impl Default for MatchLimits {
    fn default() -> Self {
        MatchLimits {
            max_instances: 1_000,
        }
    }
}

impl MatchLimits {
    pub fn unlimited() -> Self {
        MatchLimits {
            max_instances: usize::MAX,
        }
    }
}

/// A concrete walk realizing the pattern positions `offset..offset + nodes.len()`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct MatchInstance {
    pub offset: usize,
    pub nodes: Vec<NodeIx>,
    pub complete: bool,
}

impl MatchInstance {
    pub fn ids<'g>(&self, g: &'g HetGraph) -> Vec<&'g AccountId> {
        self.nodes.iter().map(|v| g.nodes().id(*v)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MatchOutcome {
    pub instances: Vec<MatchInstance>,
    /// Number of instances that exist (complete ones, or partial ones when
    /// no complete instance exists), independent of the limit.
    pub available: u128,
}

impl MatchOutcome {
    pub fn truncated(&self) -> bool {
        (self.instances.len() as u128) < self.available
    }

    /// Instances that exist but were not returned because of the limit.
    pub fn overflow(&self) -> u128 {
        self.available - self.instances.len() as u128
    }

    pub fn has_complete(&self) -> bool {
        self.instances.iter().any(|i| i.complete)
    }
}

/// One line of the `metapath match` JSONL output.
#[derive(Debug, Clone, Serialize)]
pub struct InstanceRecord {
    pub start: AccountId,
    pub pattern: String,
    pub nodes: Vec<AccountId>,
    pub complete: bool,
    pub offset: usize,
}

impl InstanceRecord {
    pub fn new(g: &HetGraph, start: NodeIx, pattern: &MetapathPattern, inst: &MatchInstance) -> Self {
        InstanceRecord {
            start: g.nodes().id(start).clone(),
            pattern: pattern.name.clone(),
            nodes: inst.ids(g).into_iter().cloned().collect(),
            complete: inst.complete,
            offset: inst.offset,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Side {
    Forward,
    Backward,
}

/// Walks from the anchor towards one end of the pattern.
struct HalfWalker<'a> {
    g: &'a HetGraph,
    p: &'a MetapathPattern,
    side: Side,
    anchor: usize,
    memo_complete: HashMap<(usize, u32), u128>,
    memo_leaves: HashMap<(usize, u32), u128>,
}

impl<'a> HalfWalker<'a> {
    fn new(g: &'a HetGraph, p: &'a MetapathPattern, side: Side, anchor: usize) -> Self {
        HalfWalker {
            g,
            p,
            side,
            anchor,
            memo_complete: HashMap::new(),
            memo_leaves: HashMap::new(),
        }
    }

    /// Number of hops from the anchor to the end of this side.
    fn depth(&self) -> usize {
        match self.side {
            Side::Forward => self.p.steps.len() - self.anchor,
            Side::Backward => self.anchor,
        }
    }

    /// Admissible next nodes after `v` at hop `hop` (counted from the anchor).
    fn next(&self, hop: usize, v: NodeIx) -> impl Iterator<Item = NodeIx> + 'a {
        let (pos_kind, nbrs) = match self.side {
            Side::Forward => {
                let step = &self.p.steps[self.anchor + hop];
                (step.dst_kind, self.g.out_neighbors(v, step.edge_type))
            }
            Side::Backward => {
                let s = self.anchor - hop - 1;
                (self.p.kind_at(s), self.g.in_neighbors(v, self.p.steps[s].edge_type))
            }
        };
        let g = self.g;
        nbrs.iter()
            .map(|n| NodeIx(*n))
            .filter(move |n| g.kind(*n) == pos_kind)
    }

    fn count_complete(&mut self, hop: usize, v: NodeIx) -> u128 {
        if hop == self.depth() {
            return 1;
        }
        if let Some(c) = self.memo_complete.get(&(hop, v.0)) {
            return *c;
        }
        let nexts: Vec<NodeIx> = self.next(hop, v).collect();
        let total = nexts
            .into_iter()
            .fold(0u128, |acc, n| acc.saturating_add(self.count_complete(hop + 1, n)));
        self.memo_complete.insert((hop, v.0), total);
        total
    }

    /// Number of walks that cannot be extended (including complete ones).
    fn count_leaves(&mut self, hop: usize, v: NodeIx) -> u128 {
        if hop == self.depth() {
            return 1;
        }
        if let Some(c) = self.memo_leaves.get(&(hop, v.0)) {
            return *c;
        }
        let nexts: Vec<NodeIx> = self.next(hop, v).collect();
        let total = if nexts.is_empty() {
            1
        } else {
            nexts
                .into_iter()
                .fold(0u128, |acc, n| acc.saturating_add(self.count_leaves(hop + 1, n)))
        };
        self.memo_leaves.insert((hop, v.0), total);
        total
    }

    /// Collects up to `limit` walks starting at the anchor node, in DFS order.
    /// With `complete_only` only full-depth walks are kept, otherwise the
    /// non-extendable ones.
    fn collect(&mut self, start: NodeIx, complete_only: bool, limit: usize) -> Vec<Vec<NodeIx>> {
        let mut out = Vec::new();
        let mut path = vec![start];
        self.dfs(0, &mut path, complete_only, limit, &mut out);
        out
    }

    fn dfs(
        &mut self,
        hop: usize,
        path: &mut Vec<NodeIx>,
        complete_only: bool,
        limit: usize,
        out: &mut Vec<Vec<NodeIx>>,
    ) -> bool {
        if out.len() >= limit {
            return false;
        }
        if hop == self.depth() {
            out.push(path.clone());
            return out.len() < limit;
        }
        let cur = *path.last().expect("path starts with the anchor");
        let nexts: Vec<NodeIx> = self.next(hop, cur).collect();
        let extended = !nexts.is_empty();
        for n in nexts {
            // prune subtrees without a complete walk
            if complete_only && self.count_complete(hop + 1, n) == 0 {
                continue;
            }
            path.push(n);
            let more = self.dfs(hop + 1, path, complete_only, limit, out);
            path.pop();
            if !more {
                return false;
            }
        }
        if !extended && !complete_only {
            out.push(path.clone());
        }
        out.len() < limit
    }
}

/// Enumerates instances whose node at `anchor` is `target`.
///
/// Positions before the anchor are found by following the pattern's edges
/// backwards, positions after it by following them forwards. Complete
/// instances are the cross product of the two sides' complete walks. If
/// none exist, each side independently falls back to its non-extendable
/// walks and the cross product of those is returned, marked incomplete.
pub fn match_anchored(
    g: &HetGraph,
    target: &AccountId,
    p: &MetapathPattern,
    anchor: usize,
    limits: MatchLimits,
) -> Result<MatchOutcome, MetapathError> {
    let v = g
        .nodes()
        .lookup(target)
        .ok_or_else(|| MetapathError::UnknownAccount(target.clone()))?;
    match_anchored_ix(g, v, p, anchor, limits)
}

/// Instances rooted at `start`, which must sit at pattern position 0.
pub fn match_from(
    g: &HetGraph,
    start: &AccountId,
    p: &MetapathPattern,
    limits: MatchLimits,
) -> Result<MatchOutcome, MetapathError> {
    match_anchored(g, start, p, 0, limits)
}

pub(crate) fn match_anchored_ix(
    g: &HetGraph,
    v: NodeIx,
    p: &MetapathPattern,
    anchor: usize,
    limits: MatchLimits,
) -> Result<MatchOutcome, MetapathError> {
    if anchor >= p.positions() {
        return Err(MetapathError::AnchorOutOfRange {
            anchor,
            positions: p.positions(),
        });
    }
    let expected = p.kind_at(anchor);
    if g.kind(v) != expected {
        return Err(MetapathError::KindMismatchAtStart {
            account: g.nodes().id(v).clone(),
            position: anchor,
            expected,
            found: g.kind(v),
        });
    }
    let limit = limits.max_instances;
    let mut back = HalfWalker::new(g, p, Side::Backward, anchor);
    let mut fwd = HalfWalker::new(g, p, Side::Forward, anchor);
    let back_complete = back.count_complete(0, v);
    let fwd_complete = fwd.count_complete(0, v);
    let complete = back_complete > 0 && fwd_complete > 0;

    let (back_total, back_complete_only) = if back_complete > 0 {
        (back_complete, true)
    } else {
        (back.count_leaves(0, v), false)
    };
    let (fwd_total, fwd_complete_only) = if fwd_complete > 0 {
        (fwd_complete, true)
    } else {
        (fwd.count_leaves(0, v), false)
    };
    let available = back_total.saturating_mul(fwd_total);

    if limit == 0 {
        return Ok(MatchOutcome {
            instances: Vec::new(),
            available,
        });
    }
    let back_walks = back.collect(v, back_complete_only, limit);
    let fwd_walks = fwd.collect(v, fwd_complete_only, limit);

    let mut instances = Vec::with_capacity(limit.min(back_walks.len() * fwd_walks.len()));
    'outer: for b in &back_walks {
        for f in &fwd_walks {
            if instances.len() >= limit {
                break 'outer;
            }
            let offset = anchor + 1 - b.len();
            let mut nodes: Vec<NodeIx> = b.iter().rev().copied().collect();
            nodes.extend_from_slice(&f[1..]);
            instances.push(MatchInstance {
                offset,
                nodes,
                complete,
            });
        }
    }
    Ok(MatchOutcome {
        instances,
        available,
    })
}

/// Matches many anchors in parallel; results follow the input order.
pub fn match_many(
    g: &HetGraph,
    targets: &[NodeIx],
    p: &MetapathPattern,
    anchor: usize,
    limits: MatchLimits,
) -> Vec<Result<MatchOutcome, MetapathError>> {
    targets
        .par_iter()
        .map(|v| match_anchored_ix(g, *v, p, anchor, limits))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_het_graph, AccountKind, BuildOptions, InteractionEdge, LabelSet};

    fn build(accounts: &[(&str, AccountKind)], edges: Vec<InteractionEdge>) -> HetGraph {
        let accounts = accounts.iter().map(|(id, k)| ((*id).into(), *k)).collect();
        build_het_graph(accounts, edges, LabelSet::new(), BuildOptions::default())
            .unwrap()
            .0
    }

    /// eoa1 -call-> cat -trans-> eoa2 -trans-> ca2
    fn chain() -> HetGraph {
        use AccountKind::*;
        build(
            &[("eoa1", Eoa), ("cat", Ca), ("eoa2", Eoa), ("ca2", Ca)],
            vec![
                InteractionEdge::call("eoa1", "cat", 1),
                InteractionEdge::trans("cat", "eoa2", 5, 2),
                InteractionEdge::trans("eoa2", "ca2", 5, 3),
            ],
        )
    }

    fn names(g: &HetGraph, inst: &MatchInstance) -> Vec<String> {
        inst.ids(g).iter().map(|id| id.to_string()).collect()
    }

    #[test]
    fn chain_complete_from_head() {
        let g = chain();
        let out = match_from(&g, &"eoa1".into(), &MetapathPattern::p2(), MatchLimits::default()).unwrap();
        assert_eq!(out.instances.len(), 1);
        assert!(out.instances[0].complete);
        assert_eq!(names(&g, &out.instances[0]), ["eoa1", "cat", "eoa2", "ca2"]);
        assert_eq!(out.available, 1);
    }

    #[test]
    fn missing_first_hop_gives_trivial_partial() {
        let g = chain();
        let out = match_from(&g, &"cat".into(), &MetapathPattern::p1(), MatchLimits::default()).unwrap();
        assert_eq!(out.instances.len(), 1);
        let inst = &out.instances[0];
        assert!(!inst.complete);
        assert_eq!(names(&g, inst), ["cat"]);
    }

    #[test]
    fn star_counts_three_by_two() {
        use AccountKind::*;
        let mut accounts = vec![("t".to_string(), Ca)];
        let mut edges = Vec::new();
        for i in 0..3 {
            let c = format!("c{i}");
            accounts.push((c.clone(), Ca));
            edges.push(InteractionEdge::call("t", &c, 0));
            for j in 0..2 {
                let e = format!("e{i}{j}");
                let d = format!("d{i}{j}");
                accounts.push((e.clone(), Eoa));
                accounts.push((d.clone(), Ca));
                edges.push(InteractionEdge::trans(&c, &e, 1, 0));
                edges.push(InteractionEdge::call(&e, &d, 0));
            }
        }
        let refs: Vec<(&str, AccountKind)> = accounts.iter().map(|(a, k)| (a.as_str(), *k)).collect();
        let g = build(&refs, edges);
        let out = match_from(&g, &"t".into(), &MetapathPattern::p1(), MatchLimits::default()).unwrap();
        assert_eq!(out.instances.len(), 6);
        assert!(out.instances.iter().all(|i| i.complete));
        // DFS order follows sorted ids.
        assert_eq!(names(&g, &out.instances[0]), ["t", "c0", "e00", "d00"]);
        assert_eq!(names(&g, &out.instances[5]), ["t", "c2", "e21", "d21"]);

        let capped = match_from(&g, &"t".into(), &MetapathPattern::p1(), MatchLimits { max_instances: 4 }).unwrap();
        assert_eq!(capped.instances[..], out.instances[..4]);
        assert!(capped.truncated());
        assert_eq!(capped.overflow(), 2);
    }

    #[test]
    fn anchored_p2_on_target() {
        let g = chain();
        let out = match_anchored(&g, &"cat".into(), &MetapathPattern::p2(), 1, MatchLimits::default()).unwrap();
        assert_eq!(out.instances.len(), 1);
        assert!(out.instances[0].complete);
        assert_eq!(out.instances[0].offset, 0);
        assert_eq!(names(&g, &out.instances[0]), ["eoa1", "cat", "eoa2", "ca2"]);
    }

    #[test]
    fn anchored_without_incoming_call_is_suffix_only() {
        use AccountKind::*;
        let g = build(
            &[("cat", Ca), ("eoa2", Eoa), ("ca2", Ca)],
            vec![
                InteractionEdge::trans("cat", "eoa2", 5, 2),
                InteractionEdge::trans("eoa2", "ca2", 5, 3),
            ],
        );
        let out = match_anchored(&g, &"cat".into(), &MetapathPattern::p2(), 1, MatchLimits::default()).unwrap();
        assert_eq!(out.instances.len(), 1);
        let inst = &out.instances[0];
        assert!(!inst.complete);
        assert_eq!(inst.offset, 1);
        assert_eq!(names(&g, inst), ["cat", "eoa2", "ca2"]);
    }

    #[test]
    fn anchor_zero_equals_match_from() {
        let g = chain();
        for (id, p) in [("eoa1", MetapathPattern::p2()), ("cat", MetapathPattern::p1())] {
            let a = match_from(&g, &id.into(), &p, MatchLimits::default()).unwrap();
            let b = match_anchored(&g, &id.into(), &p, 0, MatchLimits::default()).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn errors() {
        let g = chain();
        let p2 = MetapathPattern::p2();
        assert!(matches!(
            match_from(&g, &"cat".into(), &p2, MatchLimits::default()),
            Err(MetapathError::KindMismatchAtStart { position: 0, .. })
        ));
        assert!(matches!(
            match_from(&g, &"zzz".into(), &p2, MatchLimits::default()),
            Err(MetapathError::UnknownAccount(_))
        ));
        assert!(matches!(
            match_anchored(&g, &"cat".into(), &p2, 4, MatchLimits::default()),
            Err(MetapathError::AnchorOutOfRange { anchor: 4, positions: 4 })
        ));
    }

    #[test]
    fn walks_may_revisit_nodes() {
        use AccountKind::*;
        // a -call-> t -trans-> a -trans-> t
        let g = build(
            &[("a", Eoa), ("t", Ca)],
            vec![
                InteractionEdge::call("a", "t", 0),
                InteractionEdge::trans("t", "a", 1, 0),
                InteractionEdge::trans("a", "t", 1, 0),
            ],
        );
        let out = match_from(&g, &"a".into(), &MetapathPattern::p2(), MatchLimits::default()).unwrap();
        assert_eq!(out.instances.len(), 1);
        assert_eq!(names(&g, &out.instances[0]), ["a", "t", "a", "t"]);
    }

    #[test]
    fn partial_leaves_of_different_depths() {
        use AccountKind::*;
        // t calls c1 (dead end) and c2 -trans-> e (dead end): no complete P1.
        let g = build(
            &[("t", Ca), ("c1", Ca), ("c2", Ca), ("e", Eoa)],
            vec![
                InteractionEdge::call("t", "c1", 0),
                InteractionEdge::call("t", "c2", 0),
                InteractionEdge::trans("c2", "e", 1, 0),
            ],
        );
        let out = match_from(&g, &"t".into(), &MetapathPattern::p1(), MatchLimits::default()).unwrap();
        let got: Vec<Vec<String>> = out.instances.iter().map(|i| names(&g, i)).collect();
        assert_eq!(got, vec![vec!["t", "c1"], vec!["t", "c2", "e"]]);
        assert!(out.instances.iter().all(|i| !i.complete));
        assert_eq!(out.available, 2);
    }
}
