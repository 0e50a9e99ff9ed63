//! Metapath-based feature augmentation.
//!
//! A node's updated vector is the sum of the feature vectors of the nodes
//! that appear in the metapath instances matched around it, including the
//! node itself. In target mode the node is a contract anchored at each
//! pattern's target position; in head mode it is the first node of every
//! pattern whose head kind matches its own kind.
//!
//! Updates always read the original matrix, so the result does not depend
//! on the order in which targets are processed.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::graph::{AccountId, AccountKind, HetGraph, NodeIx};
use crate::matrix::FeatureMatrix;
use crate::metapath::{self, MatchLimits, MetapathError, MetapathPattern};

#[derive(Debug, Error)]
pub enum AugmentError {
    #[error("unknown account {0}")]
    UnknownAccount(AccountId),
    #[error("account {account} is {kind}; {mode} mode cannot update it")]
    KindIncompatible {
        account: AccountId,
        kind: AccountKind,
        mode: AugmentMode,
    },
    #[error("augmentation needs at least one metapath")]
    NoPatterns,
    #[error("pattern `{0}` has no contract position to anchor the target on")]
    NoTargetPosition(String),
    #[error(transparent)]
    Match(#[from] MetapathError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum AugmentMode {
    /// Anchor each pattern on its target contract position.
    TargetCa,
    /// Anchor patterns on their head node, chosen by the node's kind.
    HeadNode,
}

impl fmt::Display for AugmentMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AugmentMode::TargetCa => "target-ca",
            AugmentMode::HeadNode => "head-node",
        })
    }
}

impl FromStr for AugmentMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "target-ca" => Ok(AugmentMode::TargetCa),
            "head-node" => Ok(AugmentMode::HeadNode),
            other => Err(format!("unknown augmentation mode `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregator {
    #[default]
    Sum,
    Mean,
}

impl FromStr for Aggregator {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "sum" => Ok(Aggregator::Sum),
            "mean" => Ok(Aggregator::Mean),
            other => Err(format!("unknown aggregator `{other}`")),
        }
    }
}

#[derive(Debug, Clone)]
pub struct AugmentationConfig {
    pub mode: AugmentMode,
    pub patterns: Vec<MetapathPattern>,
    pub limits: MatchLimits,
    /// Count each node once across all instances; otherwise every
    /// non-anchor occurrence contributes.
    pub dedupe: bool,
    pub aggregator: Aggregator,
}

impl AugmentationConfig {
    pub fn new(mode: AugmentMode, patterns: Vec<MetapathPattern>) -> Self {
        AugmentationConfig {
            mode,
            patterns,
            limits: MatchLimits::default(),
            dedupe: true,
            aggregator: Aggregator::Sum,
        }
    }

    pub fn validate(&self) -> Result<(), AugmentError> {
        if self.patterns.is_empty() {
            return Err(AugmentError::NoPatterns);
        }
        if self.mode == AugmentMode::TargetCa {
            for p in &self.patterns {
                match p.target_position() {
                    Some(pos) if p.kind_at(pos) == AccountKind::Ca => {}
                    _ => return Err(AugmentError::NoTargetPosition(p.name.clone())),
                }
            }
        }
        Ok(())
    }

    /// (pattern, anchor) pairs applied to a node of the given kind.
    fn plan(&self, kind: AccountKind) -> Vec<(&MetapathPattern, usize)> {
        match self.mode {
            AugmentMode::TargetCa => self
                .patterns
                .iter()
                .map(|p| (p, p.target_position().expect("validated")))
                .collect(),
            AugmentMode::HeadNode => self
                .patterns
                .iter()
                .filter(|p| p.head_kind == kind)
                .map(|p| (p, 0))
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct NodeDiagnostics {
    pub account: String,
    /// Matched instances that reach beyond the node itself.
    pub instances: usize,
    pub complete_instances: usize,
    pub truncated: bool,
    /// Instances dropped by the per-pattern limit.
    pub overflow: u64,
    /// Distinct nodes aggregated, including the node itself.
    pub aggregated_nodes: usize,
    /// Aggregated nodes without a feature row (contributing zero).
    pub missing_features: usize,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct AugmentReport {
    pub mode: Option<AugmentMode>,
    pub patterns: Vec<String>,
    pub dedupe: bool,
    pub aggregator: Aggregator,
    pub max_instances: usize,
    pub targets: usize,
    pub unmatched_targets: usize,
    pub truncated_targets: usize,
    pub missing_feature_rows: usize,
    pub nodes: Vec<NodeDiagnostics>,
}

/// Maps graph nodes to their feature rows.
struct RowIndex<'a> {
    feats: &'a FeatureMatrix,
    rows: Vec<Option<usize>>,
}

impl<'a> RowIndex<'a> {
    fn new(g: &HetGraph, feats: &'a FeatureMatrix) -> Self {
        let rows = g.nodes().ids().iter().map(|id| feats.position(id)).collect();
        RowIndex { feats, rows }
    }

    fn row(&self, v: NodeIx) -> Option<&'a [f64]> {
        self.rows[v.index()].map(|r| self.feats.row(r))
    }
}

fn augment_ix(
    g: &HetGraph,
    index: &RowIndex<'_>,
    v: NodeIx,
    cfg: &AugmentationConfig,
) -> Result<(Vec<f64>, NodeDiagnostics), AugmentError> {
    let id = g.nodes().id(v);
    let own = index
        .row(v)
        .ok_or_else(|| AugmentError::UnknownAccount(id.clone()))?;
    let kind = g.kind(v);
    if cfg.mode == AugmentMode::TargetCa && kind != AccountKind::Ca {
        return Err(AugmentError::KindIncompatible {
            account: id.clone(),
            kind,
            mode: cfg.mode,
        });
    }

    let mut diag = NodeDiagnostics {
        account: id.to_string(),
        ..Default::default()
    };
    // Nodes to add on top of the node's own vector.
    let mut extra: Vec<NodeIx> = Vec::new();
    let mut seen: BTreeSet<NodeIx> = BTreeSet::new();
    for (pattern, anchor) in cfg.plan(kind) {
        let outcome = metapath::match_anchored_ix(g, v, pattern, anchor, cfg.limits)?;
        diag.truncated |= outcome.truncated();
        diag.overflow = diag
            .overflow
            .saturating_add(u64::try_from(outcome.overflow()).unwrap_or(u64::MAX));
        for inst in &outcome.instances {
            if inst.nodes.len() > 1 {
                diag.instances += 1;
            }
            if inst.complete {
                diag.complete_instances += 1;
            }
            let anchor_slot = anchor - inst.offset;
            for (j, u) in inst.nodes.iter().enumerate() {
                if cfg.dedupe {
                    if *u != v && seen.insert(*u) {
                        extra.push(*u);
                    }
                } else if j != anchor_slot {
                    extra.push(*u);
                }
            }
        }
    }

    if cfg.dedupe {
        extra.sort_unstable();
    }
    diag.aggregated_nodes = 1 + if cfg.dedupe { extra.len() } else { seen_count(&extra) };
    let mut acc = own.to_vec();
    for u in &extra {
        match index.row(*u) {
            Some(row) => acc.iter_mut().zip(row).for_each(|(a, x)| *a += x),
            None => diag.missing_features += 1,
        }
    }
    if cfg.aggregator == Aggregator::Mean && !extra.is_empty() {
        let count = (1 + extra.len()) as f64;
        acc.iter_mut().for_each(|a| *a /= count);
    }
    Ok((acc, diag))
}

fn seen_count(nodes: &[NodeIx]) -> usize {
    nodes.iter().collect::<BTreeSet<_>>().len()
}

/// Augmented vector of a single account.
pub fn augment_node(
    g: &HetGraph,
    feats: &FeatureMatrix,
    v: &AccountId,
    cfg: &AugmentationConfig,
) -> Result<(Vec<f64>, NodeDiagnostics), AugmentError> {
    cfg.validate()?;
    let ix = g
        .nodes()
        .lookup(v)
        .ok_or_else(|| AugmentError::UnknownAccount(v.clone()))?;
    let index = RowIndex::new(g, feats);
    augment_ix(g, &index, ix, cfg)
}

/// Updates the rows of `targets`; every other row is copied through.
pub fn augment_matrix(
    g: &HetGraph,
    feats: &FeatureMatrix,
    targets: &[AccountId],
    cfg: &AugmentationConfig,
) -> Result<(FeatureMatrix, AugmentReport), AugmentError> {
    cfg.validate()?;
    let ixs = targets
        .iter()
        .map(|id| {
            if !feats.contains(id) {
                return Err(AugmentError::UnknownAccount(id.clone()));
            }
            g.nodes()
                .lookup(id)
                .ok_or_else(|| AugmentError::UnknownAccount(id.clone()))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let index = RowIndex::new(g, feats);
    let results = ixs
        .par_iter()
        .map(|v| augment_ix(g, &index, *v, cfg))
        .collect::<Result<Vec<_>, _>>()?;

    let mut out = feats.clone();
    let mut report = AugmentReport {
        mode: Some(cfg.mode),
        patterns: cfg.patterns.iter().map(|p| p.name.clone()).collect(),
        dedupe: cfg.dedupe,
        aggregator: cfg.aggregator,
        max_instances: cfg.limits.max_instances,
        targets: targets.len(),
        ..Default::default()
    };
    let mut rows_by_id: std::collections::HashMap<&AccountId, Vec<usize>> = Default::default();
    for (i, id) in feats.ids().iter().enumerate() {
        rows_by_id.entry(id).or_default().push(i);
    }
    for (id, (vector, diag)) in targets.iter().zip(results) {
        for &r in &rows_by_id[id] {
            out.row_mut(r).copy_from_slice(&vector);
        }
        if diag.instances == 0 {
            report.unmatched_targets += 1;
        }
        if diag.truncated {
            report.truncated_targets += 1;
        }
        report.missing_feature_rows += diag.missing_features;
        report.nodes.push(diag);
    }
    Ok((out, report))
}
