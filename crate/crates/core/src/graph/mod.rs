//! Account interaction graphs.
//!
//! A [`HetGraph`] keeps both account kinds (EOA / CA) and both interaction
//! types (transaction / contract call). [`HomGraph`] is its transaction-only
//! projection with kinds erased. Both share one [`NodeTable`], so node
//! indices are aligned between the two by construction.

mod csr;
pub mod io;

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use csr::Csr;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("line {line}: malformed row: {reason}")]
    MalformedRow { line: u64, reason: String },
    #[error("line {line}: unknown edge type `{value}`")]
    UnknownEdgeType { line: u64, value: String },
    #[error("line {line}: negative amount `{value}`")]
    NegativeAmount { line: u64, value: String },
    #[error("edge {src} -> {dst} ({etype}) references unknown account {missing}")]
    DanglingEndpoint {
        src: AccountId,
        dst: AccountId,
        etype: EdgeType,
        missing: AccountId,
    },
    #[error("call edge {src} -> {dst} targets an externally owned account")]
    CallIntoEoa { src: AccountId, dst: AccountId },
    #[error("account {0} declared with conflicting kinds")]
    ConflictingKind(AccountId),
    #[error("account {0} is labeled ponzi but is not a contract account")]
    PonziNotContract(AccountId),
    #[error("account {0} labeled twice with different labels")]
    ConflictingLabel(AccountId),
    #[error("unknown account {0}")]
    UnknownAccount(AccountId),
    #[error("need {needed} negative candidates but only {available} eligible contract accounts exist")]
    InsufficientCandidates { needed: usize, available: usize },
    #[error("empty account id")]
    EmptyAccountId,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl GraphError {
    /// Line number for row-level parse errors.
    pub fn line(&self) -> Option<u64> {
        match self {
            GraphError::MalformedRow { line, .. }
            | GraphError::UnknownEdgeType { line, .. }
            | GraphError::NegativeAmount { line, .. } => Some(*line),
            _ => None,
        }
    }
}

/// Account address, normalized to lowercase.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AccountId(String);

impl AccountId {
    pub fn new(raw: &str) -> Result<Self, GraphError> {
        let trimmed = raw.trim();
        if trimmed.is_empty() {
            return Err(GraphError::EmptyAccountId);
        }
        Ok(AccountId(trimmed.to_lowercase()))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for AccountId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for AccountId {
    /// Panics on empty input; use [`AccountId::new`] for untrusted data.
    fn from(raw: &str) -> Self {
        AccountId::new(raw).expect("account id must be non-empty")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum AccountKind {
    #[serde(rename = "EOA")]
    Eoa,
    #[serde(rename = "CA")]
    Ca,
}

impl AccountKind {
    pub fn parse(raw: &str) -> Option<Self> {
        match raw.trim().to_ascii_uppercase().as_str() {
            "EOA" => Some(AccountKind::Eoa),
            "CA" => Some(AccountKind::Ca),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            AccountKind::Eoa => "EOA",
            AccountKind::Ca => "CA",
        }
    }
}

impl fmt::Display for AccountKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EdgeType {
    Trans,
    Call,
}

impl EdgeType {
    pub fn parse(raw: &str) -> Option<Self> {
        match raw.trim().to_ascii_lowercase().as_str() {
            "trans" => Some(EdgeType::Trans),
            "call" => Some(EdgeType::Call),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            EdgeType::Trans => "trans",
            EdgeType::Call => "call",
        }
    }
}

impl fmt::Display for EdgeType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One raw interaction record. Amounts are in wei.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct InteractionEdge {
    pub src: AccountId,
    pub dst: AccountId,
    pub etype: EdgeType,
    pub amount: u128,
    pub timestamp: u64,
}

impl InteractionEdge {
    pub fn trans(src: &str, dst: &str, amount: u128, timestamp: u64) -> Self {
        InteractionEdge {
            src: src.into(),
            dst: dst.into(),
            etype: EdgeType::Trans,
            amount,
            timestamp,
        }
    }

    pub fn call(src: &str, dst: &str, timestamp: u64) -> Self {
        InteractionEdge {
            src: src.into(),
            dst: dst.into(),
            etype: EdgeType::Call,
            amount: 0,
            timestamp,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Ponzi,
    #[serde(rename = "nonponzi")]
    NonPonzi,
}

impl Label {
    pub fn parse(raw: &str) -> Option<Self> {
        match raw.trim().to_ascii_lowercase().as_str() {
            "ponzi" => Some(Label::Ponzi),
            "nonponzi" => Some(Label::NonPonzi),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Ponzi => "ponzi",
            Label::NonPonzi => "nonponzi",
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LabelSet {
    entries: BTreeMap<AccountId, Label>,
}

impl LabelSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts a label; relabeling an account with a different label is an error.
    pub fn insert(&mut self, id: AccountId, label: Label) -> Result<(), GraphError> {
        match self.entries.get(&id) {
            Some(existing) if *existing != label => Err(GraphError::ConflictingLabel(id)),
            _ => {
                self.entries.insert(id, label);
                Ok(())
            }
        }
    }

    pub fn get(&self, id: &AccountId) -> Option<Label> {
        self.entries.get(id).copied()
    }

    pub fn is_ponzi(&self, id: &AccountId) -> bool {
        self.get(id) == Some(Label::Ponzi)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&AccountId, Label)> {
        self.entries.iter().map(|(id, l)| (id, *l))
    }

    pub fn ponzi(&self) -> impl Iterator<Item = &AccountId> {
        self.iter()
            .filter(|(_, l)| *l == Label::Ponzi)
            .map(|(id, _)| id)
    }

    pub fn ponzi_count(&self) -> usize {
        self.ponzi().count()
    }
}

impl FromIterator<(AccountId, Label)> for LabelSet {
    /// Later entries win on conflict.
    fn from_iter<I: IntoIterator<Item = (AccountId, Label)>>(iter: I) -> Self {
        LabelSet {
            entries: iter.into_iter().collect(),
        }
    }
}

/// Dense node index; ordering matches the lexicographic order of account ids.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeIx(pub u32);

impl NodeIx {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// Node universe shared by the heterogeneous graph and its projection.
#[derive(Debug)]
pub struct NodeTable {
    ids: Vec<AccountId>,
    kinds: Vec<AccountKind>,
    lookup: HashMap<AccountId, NodeIx>,
}

impl NodeTable {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn id(&self, v: NodeIx) -> &AccountId {
        &self.ids[v.index()]
    }

    pub fn ids(&self) -> &[AccountId] {
        &self.ids
    }

    pub fn lookup(&self, id: &AccountId) -> Option<NodeIx> {
        self.lookup.get(id).copied()
    }

    pub fn require(&self, id: &AccountId) -> Result<NodeIx, GraphError> {
        self.lookup(id)
            .ok_or_else(|| GraphError::UnknownAccount(id.clone()))
    }

    pub fn nodes(&self) -> impl ExactSizeIterator<Item = NodeIx> {
        (0..self.ids.len() as u32).map(NodeIx)
    }
}

/// Edge with resolved endpoints.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EdgeRecord {
    pub src: NodeIx,
    pub dst: NodeIx,
    pub etype: EdgeType,
    pub amount: u128,
    pub timestamp: u64,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct BuildOptions {
    /// Drop call edges whose destination is an EOA instead of failing.
    pub drop_call_into_eoa: bool,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct BuildReport {
    pub dropped_call_into_eoa: usize,
    pub duplicate_account_rows: usize,
}

/// Counts reported for a dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphStats {
    pub nodes: usize,
    pub edges: usize,
    pub ca: usize,
    pub eoa: usize,
    pub call_edges: usize,
    pub trans_edges: usize,
    pub ponzi_labels: usize,
}

impl GraphStats {
    /// Counts of the published labeled Ethereum dataset.
    pub const REFERENCE_DATASET: GraphStats = GraphStats {
        nodes: 57_130,
        edges: 156_255,
        ca: 4_616,
        eoa: 52_514,
        call_edges: 69_653,
        trans_edges: 86_602,
        ponzi_labels: 191,
    };

    /// Names and values of every count that differs from `expected`.
    pub fn mismatches(&self, expected: &GraphStats) -> Vec<(&'static str, usize, usize)> {
        let pairs = [
            ("nodes", self.nodes, expected.nodes),
            ("edges", self.edges, expected.edges),
            ("ca", self.ca, expected.ca),
            ("eoa", self.eoa, expected.eoa),
            ("call_edges", self.call_edges, expected.call_edges),
            ("trans_edges", self.trans_edges, expected.trans_edges),
            ("ponzi_labels", self.ponzi_labels, expected.ponzi_labels),
        ];
        pairs
            .into_iter()
            .filter(|(_, got, want)| got != want)
            .collect()
    }
}

/// Read-only access to transaction edges, shared by both graph flavours.
pub trait TransactionView {
    fn node_table(&self) -> &NodeTable;
    fn edge(&self, e: u32) -> &EdgeRecord;
    /// Edge indices of outgoing transaction edges (parallel edges included).
    fn trans_out(&self, v: NodeIx) -> &[u32];
    fn trans_in(&self, v: NodeIx) -> &[u32];
}

/// Typed multigraph over EOA/CA accounts with trans and call edges.
#[derive(Debug, Clone)]
pub struct HetGraph {
    nodes: Arc<NodeTable>,
    edges: Vec<EdgeRecord>,
    labels: LabelSet,
    // indexed by EdgeType as usize: [trans, call]
    out_edges: [Csr; 2],
    in_edges: [Csr; 2],
    out_nbrs: [Csr; 2],
    in_nbrs: [Csr; 2],
}

#[inline]
fn slot(etype: EdgeType) -> usize {
    match etype {
        EdgeType::Trans => 0,
        EdgeType::Call => 1,
    }
}

/// Builds the heterogeneous graph after validating endpoints, kinds and labels.
pub fn build_het_graph(
    accounts: Vec<(AccountId, AccountKind)>,
    edges: Vec<InteractionEdge>,
    labels: LabelSet,
    opts: BuildOptions,
) -> Result<(HetGraph, BuildReport), GraphError> {
    let mut report = BuildReport::default();
    let mut kinds_by_id: BTreeMap<AccountId, AccountKind> = BTreeMap::new();
    for (id, kind) in accounts {
        match kinds_by_id.get(&id) {
            Some(k) if *k != kind => return Err(GraphError::ConflictingKind(id)),
            Some(_) => report.duplicate_account_rows += 1,
            None => {
                kinds_by_id.insert(id, kind);
            }
        }
    }

    let mut ids = Vec::with_capacity(kinds_by_id.len());
    let mut kinds = Vec::with_capacity(kinds_by_id.len());
    for (id, kind) in kinds_by_id {
        ids.push(id);
        kinds.push(kind);
    }
    let lookup = ids
        .iter()
        .enumerate()
        .map(|(i, id)| (id.clone(), NodeIx(i as u32)))
        .collect();
    let nodes = NodeTable { ids, kinds, lookup };

    for (id, label) in labels.iter() {
        let v = nodes.require(id)?;
        if label == Label::Ponzi && nodes.kinds[v.index()] != AccountKind::Ca {
            return Err(GraphError::PonziNotContract(id.clone()));
        }
    }

    let mut records = Vec::with_capacity(edges.len());
    for edge in edges {
        let resolve = |id: &AccountId| {
            nodes.lookup(id).ok_or_else(|| GraphError::DanglingEndpoint {
                src: edge.src.clone(),
                dst: edge.dst.clone(),
                etype: edge.etype,
                missing: id.clone(),
            })
        };
        let src = resolve(&edge.src)?;
        let dst = resolve(&edge.dst)?;
        if edge.etype == EdgeType::Call && nodes.kinds[dst.index()] == AccountKind::Eoa {
            if opts.drop_call_into_eoa {
                report.dropped_call_into_eoa += 1;
                continue;
            }
            return Err(GraphError::CallIntoEoa {
                src: edge.src,
                dst: edge.dst,
            });
        }
        records.push(EdgeRecord {
            src,
            dst,
            etype: edge.etype,
            amount: edge.amount,
            timestamp: edge.timestamp,
        });
    }

    Ok((HetGraph::index(Arc::new(nodes), records, labels), report))
}

impl HetGraph {
    fn index(nodes: Arc<NodeTable>, edges: Vec<EdgeRecord>, labels: LabelSet) -> Self {
        let n = nodes.len();
        let by_type = |etype: EdgeType| {
            edges
                .iter()
                .enumerate()
                .filter(move |(_, e)| e.etype == etype)
        };
        let mut out_edges = [Csr::default(), Csr::default()];
        let mut in_edges = [Csr::default(), Csr::default()];
        let mut out_nbrs = [Csr::default(), Csr::default()];
        let mut in_nbrs = [Csr::default(), Csr::default()];
        for etype in [EdgeType::Trans, EdgeType::Call] {
            let s = slot(etype);
            out_edges[s] = Csr::from_pairs(n, by_type(etype).map(|(i, e)| (e.src.0, i as u32)));
            in_edges[s] = Csr::from_pairs(n, by_type(etype).map(|(i, e)| (e.dst.0, i as u32)));
            out_nbrs[s] = Csr::from_pairs(n, by_type(etype).map(|(_, e)| (e.src.0, e.dst.0)))
                .sorted_unique();
            in_nbrs[s] = Csr::from_pairs(n, by_type(etype).map(|(_, e)| (e.dst.0, e.src.0)))
                .sorted_unique();
        }
        HetGraph {
            nodes,
            edges,
            labels,
            out_edges,
            in_edges,
            out_nbrs,
            in_nbrs,
        }
    }

    pub fn nodes(&self) -> &NodeTable {
        &self.nodes
    }

    pub fn edges(&self) -> &[EdgeRecord] {
        &self.edges
    }

    pub fn labels(&self) -> &LabelSet {
        &self.labels
    }

    pub fn kind(&self, v: NodeIx) -> AccountKind {
        self.nodes.kinds[v.index()]
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    /// Distinct successors over edges of `etype`, sorted by account id.
    pub fn out_neighbors(&self, v: NodeIx, etype: EdgeType) -> &[u32] {
        self.out_nbrs[slot(etype)].row(v.index())
    }

    /// Distinct predecessors over edges of `etype`, sorted by account id.
    pub fn in_neighbors(&self, v: NodeIx, etype: EdgeType) -> &[u32] {
        self.in_nbrs[slot(etype)].row(v.index())
    }

    pub fn out_edges(&self, v: NodeIx, etype: EdgeType) -> &[u32] {
        self.out_edges[slot(etype)].row(v.index())
    }

    pub fn in_edges(&self, v: NodeIx, etype: EdgeType) -> &[u32] {
        self.in_edges[slot(etype)].row(v.index())
    }

    pub fn nodes_of_kind(&self, kind: AccountKind) -> impl Iterator<Item = NodeIx> + '_ {
        self.nodes.nodes().filter(move |v| self.kind(*v) == kind)
    }

    pub fn stats(&self) -> GraphStats {
        let ca = self.nodes_of_kind(AccountKind::Ca).count();
        let trans = self.out_edges[0].total();
        let call = self.out_edges[1].total();
        GraphStats {
            nodes: self.node_count(),
            edges: self.edges.len(),
            ca,
            eoa: self.node_count() - ca,
            call_edges: call,
            trans_edges: trans,
            ponzi_labels: self.labels.ponzi_count(),
        }
    }

    /// Account rows in node order.
    pub fn accounts(&self) -> impl Iterator<Item = (&AccountId, AccountKind)> {
        self.nodes.ids.iter().zip(self.nodes.kinds.iter().copied())
    }

    /// Edges converted back to id-keyed records, in ingestion order.
    pub fn interaction_edges(&self) -> impl Iterator<Item = InteractionEdge> + '_ {
        self.edges.iter().map(|e| InteractionEdge {
            src: self.nodes.id(e.src).clone(),
            dst: self.nodes.id(e.dst).clone(),
            etype: e.etype,
            amount: e.amount,
            timestamp: e.timestamp,
        })
    }

    /// Returns the kind-erased, transaction-only projection.
    pub fn project_hom(&self) -> HomGraph {
        let edges: Vec<EdgeRecord> = self
            .edges
            .iter()
            .filter(|e| e.etype == EdgeType::Trans)
            .copied()
            .collect();
        HomGraph::index(Arc::clone(&self.nodes), edges, self.labels.clone())
    }
}

impl TransactionView for HetGraph {
    fn node_table(&self) -> &NodeTable {
        &self.nodes
    }
    fn edge(&self, e: u32) -> &EdgeRecord {
        &self.edges[e as usize]
    }
    fn trans_out(&self, v: NodeIx) -> &[u32] {
        self.out_edges(v, EdgeType::Trans)
    }
    fn trans_in(&self, v: NodeIx) -> &[u32] {
        self.in_edges(v, EdgeType::Trans)
    }
}

/// Free-function form of [`HetGraph::project_hom`].
pub fn project_hom_graph(het: &HetGraph) -> HomGraph {
    het.project_hom()
}

/// Directed transaction graph; node set identical to its source [`HetGraph`].
#[derive(Debug, Clone)]
pub struct HomGraph {
    nodes: Arc<NodeTable>,
    edges: Vec<EdgeRecord>,
    labels: LabelSet,
    out_edges: Csr,
    in_edges: Csr,
    out_nbrs: Csr,
    undirected_nbrs: Csr,
}

impl HomGraph {
    fn index(nodes: Arc<NodeTable>, edges: Vec<EdgeRecord>, labels: LabelSet) -> Self {
        let n = nodes.len();
        let enumerated = || edges.iter().enumerate();
        let out_edges = Csr::from_pairs(n, enumerated().map(|(i, e)| (e.src.0, i as u32)));
        let in_edges = Csr::from_pairs(n, enumerated().map(|(i, e)| (e.dst.0, i as u32)));
        let out_nbrs = Csr::from_pairs(n, edges.iter().map(|e| (e.src.0, e.dst.0))).sorted_unique();
        let undirected_nbrs = Csr::from_pairs(
            n,
            edges
                .iter()
                .flat_map(|e| [(e.src.0, e.dst.0), (e.dst.0, e.src.0)]),
        )
        .sorted_unique();
        HomGraph {
            nodes,
            edges,
            labels,
            out_edges,
            in_edges,
            out_nbrs,
            undirected_nbrs,
        }
    }

    pub fn nodes(&self) -> &NodeTable {
        &self.nodes
    }

    pub fn edges(&self) -> &[EdgeRecord] {
        &self.edges
    }

    pub fn labels(&self) -> &LabelSet {
        &self.labels
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    /// Distinct successors, sorted.
    pub fn out_neighbors(&self, v: NodeIx) -> &[u32] {
        self.out_nbrs.row(v.index())
    }

    /// Distinct neighbors ignoring direction, sorted.
    pub fn undirected_neighbors(&self, v: NodeIx) -> &[u32] {
        self.undirected_nbrs.row(v.index())
    }

    /// True when both graphs share the same node table.
    pub fn is_aligned_with(&self, het: &HetGraph) -> bool {
        Arc::ptr_eq(&self.nodes, &het.nodes)
    }
}

impl TransactionView for HomGraph {
    fn node_table(&self) -> &NodeTable {
        &self.nodes
    }
    fn edge(&self, e: u32) -> &EdgeRecord {
        &self.edges[e as usize]
    }
    fn trans_out(&self, v: NodeIx) -> &[u32] {
        self.out_edges.row(v.index())
    }
    fn trans_in(&self, v: NodeIx) -> &[u32] {
        self.in_edges.row(v.index())
    }
}

/// Draws as many non-Ponzi contract accounts as there are Ponzi labels,
/// uniformly without replacement. Output is sorted by account id.
pub fn sample_negatives(het: &HetGraph, seed: u64) -> Result<Vec<AccountId>, GraphError> {
    let needed = het.labels().ponzi_count();
    let candidates: Vec<NodeIx> = het
        .nodes_of_kind(AccountKind::Ca)
        .filter(|v| !het.labels().is_ponzi(het.nodes().id(*v)))
        .collect();
    if candidates.len() < needed {
        return Err(GraphError::InsufficientCandidates {
            needed,
            available: candidates.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked: Vec<NodeIx> = rand::seq::index::sample(&mut rng, candidates.len(), needed)
        .into_iter()
        .map(|i| candidates[i])
        .collect();
    picked.sort_unstable();
    Ok(picked
        .into_iter()
        .map(|v| het.nodes().id(v).clone())
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn acct(id: &str, kind: AccountKind) -> (AccountId, AccountKind) {
        (id.into(), kind)
    }

    fn toy() -> HetGraph {
        let accounts = vec![
            acct("eoa1", AccountKind::Eoa),
            acct("eoa2", AccountKind::Eoa),
            acct("ca", AccountKind::Ca),
        ];
        let edges = vec![
            InteractionEdge::trans("eoa1", "ca", 5, 10),
            InteractionEdge::call("eoa1", "ca", 10),
        ];
        build_het_graph(accounts, edges, LabelSet::new(), BuildOptions::default())
            .unwrap()
            .0
    }

    #[test]
    fn counts_on_two_eoa_one_ca() {
        let g = toy();
        let s = g.stats();
        assert_eq!((s.ca, s.eoa, s.call_edges, s.trans_edges), (1, 2, 1, 1));
        assert_eq!(s.edges, 2);
    }

    #[test]
    fn dangling_endpoint_rejected() {
        let err = build_het_graph(
            vec![acct("a", AccountKind::Eoa)],
            vec![InteractionEdge::trans("a", "ghost", 1, 1)],
            LabelSet::new(),
            BuildOptions::default(),
        )
        .unwrap_err();
        assert!(matches!(err, GraphError::DanglingEndpoint { missing, .. } if missing.as_str() == "ghost"));
    }

    #[test]
    fn call_into_eoa_is_error_unless_lenient() {
        let accounts = vec![acct("a", AccountKind::Eoa), acct("b", AccountKind::Eoa)];
        let edges = vec![InteractionEdge::call("a", "b", 1)];
        let err = build_het_graph(
            accounts.clone(),
            edges.clone(),
            LabelSet::new(),
            BuildOptions::default(),
        )
        .unwrap_err();
        assert!(matches!(err, GraphError::CallIntoEoa { .. }));

        let (g, report) = build_het_graph(
            accounts,
            edges,
            LabelSet::new(),
            BuildOptions {
                drop_call_into_eoa: true,
            },
        )
        .unwrap();
        assert_eq!(report.dropped_call_into_eoa, 1);
        assert_eq!(g.edges().len(), 0);
    }

    #[test]
    fn ponzi_label_on_eoa_rejected() {
        let labels: LabelSet = [(AccountId::from("a"), Label::Ponzi)].into_iter().collect();
        let err = build_het_graph(
            vec![acct("a", AccountKind::Eoa)],
            vec![],
            labels,
            BuildOptions::default(),
        )
        .unwrap_err();
        assert!(matches!(err, GraphError::PonziNotContract(_)));
    }

    #[test]
    fn conflicting_kinds_rejected_duplicates_counted() {
        let err = build_het_graph(
            vec![acct("a", AccountKind::Eoa), acct("A", AccountKind::Ca)],
            vec![],
            LabelSet::new(),
            BuildOptions::default(),
        )
        .unwrap_err();
        assert!(matches!(err, GraphError::ConflictingKind(_)));

        let (g, report) = build_het_graph(
            vec![acct("a", AccountKind::Eoa), acct("A", AccountKind::Eoa)],
            vec![],
            LabelSet::new(),
            BuildOptions::default(),
        )
        .unwrap();
        assert_eq!(g.node_count(), 1);
        assert_eq!(report.duplicate_account_rows, 1);
    }

    #[test]
    fn projection_keeps_nodes_drops_calls() {
        let accounts = vec![
            acct("x", AccountKind::Eoa),
            acct("y", AccountKind::Ca),
            acct("z", AccountKind::Ca),
        ];
        let edges = vec![
            InteractionEdge::trans("x", "y", 1, 1),
            InteractionEdge::trans("y", "z", 1, 2),
            InteractionEdge::call("x", "z", 3),
        ];
        let (g, _) =
            build_het_graph(accounts, edges, LabelSet::new(), BuildOptions::default()).unwrap();
        let h = project_hom_graph(&g);
        assert_eq!(h.node_count(), 3);
        assert_eq!(h.edges().len(), 2);
        assert!(h.is_aligned_with(&g));
        assert_eq!(h.nodes().ids(), g.nodes().ids());
    }

    #[test]
    fn projection_of_call_only_graph_is_edgeless() {
        let accounts = vec![acct("x", AccountKind::Eoa), acct("y", AccountKind::Ca)];
        let edges = vec![InteractionEdge::call("x", "y", 3)];
        let (g, _) =
            build_het_graph(accounts, edges, LabelSet::new(), BuildOptions::default()).unwrap();
        let h = g.project_hom();
        assert_eq!(h.node_count(), 2);
        assert!(h.edges().is_empty());
    }

    #[test]
    fn parallel_edges_kept_in_multiset_but_not_neighbor_lists() {
        let accounts = vec![acct("x", AccountKind::Eoa), acct("y", AccountKind::Ca)];
        let edges = vec![
            InteractionEdge::trans("x", "y", 7, 1),
            InteractionEdge::trans("x", "y", 7, 1),
        ];
        let (g, _) =
            build_het_graph(accounts, edges, LabelSet::new(), BuildOptions::default()).unwrap();
        let x = g.nodes().lookup(&"x".into()).unwrap();
        assert_eq!(g.out_edges(x, EdgeType::Trans).len(), 2);
        assert_eq!(g.out_neighbors(x, EdgeType::Trans).len(), 1);
    }

    fn ca_graph(n_ca: usize, n_ponzi: usize) -> HetGraph {
        let accounts: Vec<_> = (0..n_ca)
            .map(|i| acct(&format!("ca{i:03}"), AccountKind::Ca))
            .collect();
        let labels: LabelSet = (0..n_ponzi)
            .map(|i| (AccountId::from(format!("ca{i:03}").as_str()), Label::Ponzi))
            .collect();
        build_het_graph(accounts, vec![], labels, BuildOptions::default())
            .unwrap()
            .0
    }

    #[test]
    fn negatives_exclude_ponzi_and_are_deterministic() {
        let g = ca_graph(10, 3);
        let a = sample_negatives(&g, 7).unwrap();
        let b = sample_negatives(&g, 7).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 3);
        assert!(a.iter().all(|id| !g.labels().is_ponzi(id)));
    }

    #[test]
    fn negatives_need_enough_candidates() {
        let g = ca_graph(5, 5);
        assert!(matches!(
            sample_negatives(&g, 1),
            Err(GraphError::InsufficientCandidates {
                needed: 5,
                available: 0
            })
        ));
    }

    #[test]
    fn negatives_cover_every_candidate_across_seeds() {
        let g = ca_graph(100, 5);
        let mut seen = std::collections::HashSet::new();
        for seed in 0..1000 {
            seen.extend(sample_negatives(&g, seed).unwrap());
        }
        assert_eq!(seen.len(), 95);
    }

    #[test]
    fn reference_stats_are_self_consistent() {
        let s = GraphStats::REFERENCE_DATASET;
        assert_eq!(s.ca + s.eoa, s.nodes);
        assert_eq!(s.call_edges + s.trans_edges, s.edges);
        assert!(s.mismatches(&s).is_empty());
    }
}
