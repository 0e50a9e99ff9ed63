//! Brute-force oracles shared by the integration tests. They work from the
//! raw edge list only, scanning it for every hop, and never touch the
//! graph's adjacency structures.
#![allow(dead_code)]

use std::collections::BTreeSet;

use hfaug::graph::{
    build_het_graph, AccountId, AccountKind, BuildOptions, EdgeType, HetGraph, InteractionEdge,
    LabelSet,
};
use hfaug::metapath::MetapathPattern;
use rand::Rng;

/// Instances as (offset, nodes, complete).
pub type InstanceSet = BTreeSet<(usize, Vec<usize>, bool)>;

/// (anchor position, instances) for each pattern.
pub type PatternPlan = Vec<(usize, InstanceSet)>;

pub struct RawGraph {
    pub kinds: Vec<AccountKind>,
    pub edges: Vec<(usize, usize, EdgeType)>,
}

pub fn node_id(i: usize) -> String {
    format!("n{i:03}")
}

impl RawGraph {
    /// Random graph with 2..=max_nodes nodes. Call edges only point at
    /// contracts; parallel edges and self-loops occur naturally.
    pub fn random<R: Rng>(rng: &mut R, max_nodes: usize) -> RawGraph {
        let n = rng.random_range(2..=max_nodes);
        let kinds: Vec<AccountKind> = (0..n)
            .map(|_| {
                if rng.random_bool(0.45) {
                    AccountKind::Ca
                } else {
                    AccountKind::Eoa
                }
            })
            .collect();
        let m = rng.random_range(0..=3 * n);
        let edges = (0..m)
            .map(|_| {
                let s = rng.random_range(0..n);
                let d = rng.random_range(0..n);
                let t = if kinds[d] == AccountKind::Ca && rng.random_bool(0.5) {
                    EdgeType::Call
                } else {
                    EdgeType::Trans
                };
                (s, d, t)
            })
            .collect();
        RawGraph { kinds, edges }
    }

    /// Builds the library graph; node `i` gets index `i`.
    pub fn build(&self) -> HetGraph {
        let accounts = self
            .kinds
            .iter()
            .enumerate()
            .map(|(i, k)| (AccountId::from(node_id(i).as_str()), *k))
            .collect();
        let edges = self
            .edges
            .iter()
            .enumerate()
            .map(|(j, (s, d, t))| match t {
                EdgeType::Trans => {
                    InteractionEdge::trans(&node_id(*s), &node_id(*d), 1 + j as u128, j as u64)
                }
                EdgeType::Call => InteractionEdge::call(&node_id(*s), &node_id(*d), j as u64),
            })
            .collect();
        build_het_graph(accounts, edges, LabelSet::new(), BuildOptions::default())
            .expect("valid random graph")
            .0
    }

    fn successors(&self, a: usize, etype: EdgeType, kind: AccountKind) -> BTreeSet<usize> {
        self.edges
            .iter()
            .filter(|(s, d, t)| *s == a && *t == etype && self.kinds[*d] == kind)
            .map(|(_, d, _)| *d)
            .collect()
    }

    fn predecessors(&self, b: usize, etype: EdgeType, kind: AccountKind) -> BTreeSet<usize> {
        self.edges
            .iter()
            .filter(|(s, d, t)| *d == b && *t == etype && self.kinds[*s] == kind)
            .map(|(s, _, _)| *s)
            .collect()
    }

    /// Walks from `v` covering positions `anchor..=last` (forward) or
    /// `0..=anchor` (backward, listed from `v` outwards). Returns the
    /// complete halves, or the non-extendable ones when there are none,
    /// with a flag telling which.
    fn half(&self, p: &MetapathPattern, anchor: usize, v: usize, forward: bool) -> (Vec<Vec<usize>>, bool) {
        let hops = if forward { p.positions() - 1 - anchor } else { anchor };
        let mut frontier = vec![vec![v]];
        let mut leaves = Vec::new();
        for h in 0..hops {
            let mut next = Vec::new();
            for walk in frontier {
                let last = *walk.last().unwrap();
                let ext = if forward {
                    let step = &p.steps[anchor + h];
                    self.successors(last, step.edge_type, step.dst_kind)
                } else {
                    let pos = anchor - h;
                    let step = &p.steps[pos - 1];
                    self.predecessors(last, step.edge_type, p.kind_at(pos - 1))
                };
                if ext.is_empty() {
                    leaves.push(walk.clone());
                }
                for x in ext {
                    let mut w = walk.clone();
                    w.push(x);
                    next.push(w);
                }
            }
            frontier = next;
        }
        if frontier.is_empty() {
            (leaves, false)
        } else {
            (frontier, true)
        }
    }

    /// Instances around `v` placed at `anchor`, as (offset, nodes, complete).
    /// `None` when `v` has the wrong kind for the anchor position.
    pub fn instances(
        &self,
        p: &MetapathPattern,
        anchor: usize,
        v: usize,
    ) -> Option<InstanceSet> {
        if self.kinds[v] != p.kind_at(anchor) {
            return None;
        }
        let (back, back_done) = self.half(p, anchor, v, false);
        let (fwd, fwd_done) = self.half(p, anchor, v, true);
        let mut out = BTreeSet::new();
        for b in &back {
            for f in &fwd {
                let mut nodes: Vec<usize> = b.iter().rev().copied().collect();
                nodes.extend(&f[1..]);
                out.insert((anchor + 1 - b.len(), nodes, back_done && fwd_done));
            }
        }
        Some(out)
    }

    /// Every complete walk of the pattern anywhere in the graph, grown
    /// from all heads at once.
    pub fn all_complete_walks(&self, p: &MetapathPattern) -> BTreeSet<Vec<usize>> {
        let mut walks: Vec<Vec<usize>> = (0..self.kinds.len())
            .filter(|v| self.kinds[*v] == p.head_kind)
            .map(|v| vec![v])
            .collect();
        for step in &p.steps {
            walks = walks
                .iter()
                .flat_map(|w| {
                    self.successors(*w.last().unwrap(), step.edge_type, step.dst_kind)
                        .into_iter()
                        .map(move |x| {
                            let mut w2 = w.clone();
                            w2.push(x);
                            w2
                        })
                })
                .collect();
        }
        walks.into_iter().collect()
    }
}

/// Aggregated vector for `v` given its instances per pattern.
///
/// With `dedupe`, every distinct node of every instance plus `v` counts
/// once. Without it, `v`'s own row is added once and each instance adds all
/// of its positions except the anchor.
pub fn brute_aggregate(
    feats: &[Option<Vec<f64>>],
    v: usize,
    per_pattern: &[(usize, InstanceSet)],
    dedupe: bool,
) -> Vec<f64> {
    let dim = feats[v].as_ref().unwrap().len();
    let mut acc = vec![0.0; dim];
    let mut add = |u: usize| {
        if let Some(row) = &feats[u] {
            for (a, x) in acc.iter_mut().zip(row) {
                *a += x;
            }
        }
    };
    if dedupe {
        let mut nodes: BTreeSet<usize> = BTreeSet::new();
        nodes.insert(v);
        for (_, insts) in per_pattern {
            for (_, ns, _) in insts {
                nodes.extend(ns.iter().copied());
            }
        }
        nodes.into_iter().for_each(&mut add);
    } else {
        add(v);
        for (anchor, insts) in per_pattern {
            for (offset, ns, _) in insts {
                for (j, u) in ns.iter().enumerate() {
                    if offset + j != *anchor {
                        add(*u);
                    }
                }
            }
        }
    }
    acc
}

/// Number of instances reaching beyond `v` itself.
pub fn matched_count(per_pattern: &[(usize, InstanceSet)]) -> usize {
    per_pattern
        .iter()
        .map(|(_, s)| s.iter().filter(|(_, ns, _)| ns.len() > 1).count())
        .sum()
}
