//! The fifteen manual account features.
//!
//! All statistics are computed over transaction edges only, so a
//! heterogeneous graph and its projection yield identical features.
//! Sums, maxima and the balance use integer wei arithmetic; each feature is
//! converted to `f64` once at the end.

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::graph::{AccountId, NodeIx, TransactionView};
use crate::matrix::FeatureMatrix;

pub const MANUAL_DIM: usize = 15;

/// Column order used by [`ManualFeatures::to_vec`] and the manual CSV format.
pub const MANUAL_FEATURE_NAMES: [&str; MANUAL_DIM] = [
    "income_total",
    "income_avg",
    "income_max",
    "income_var",
    "expend_total",
    "expend_avg",
    "expend_max",
    "expend_var",
    "expend_income_ratio",
    "balance",
    "n_sent",
    "n_received",
    "gini_invest",
    "gini_return",
    "lifecycle",
];

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("gini input contains a negative or non-finite value: {0}")]
    NegativeValue(f64),
    #[error("unknown account {0}")]
    UnknownAccount(AccountId),
}

fn resolve<G: TransactionView + ?Sized>(g: &G, id: &AccountId) -> Result<NodeIx, FeatureError> {
    g.node_table()
        .lookup(id)
        .ok_or_else(|| FeatureError::UnknownAccount(id.clone()))
}

/// Gini coefficient in mean-absolute-difference form,
/// `sum_i sum_j |x_i - x_j| / (2 n^2 mean)`.
///
/// Empty and all-zero inputs give 0.
pub fn gini(values: &[f64]) -> Result<f64, FeatureError> {
    if let Some(bad) = values.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
        return Err(FeatureError::NegativeValue(*bad));
    }
    let n = values.len();
    let total: f64 = values.iter().sum();
    if n == 0 || total == 0.0 {
        return Ok(0.0);
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    // With ascending order, sum_i sum_j |x_i - x_j| = 2 * sum_i (2i - n + 1) x_i.
    let weighted: f64 = sorted
        .iter()
        .enumerate()
        .map(|(i, x)| (2.0 * i as f64 - n as f64 + 1.0) * x)
        .sum();
    Ok((weighted / (n as f64 * total)).clamp(0.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct ManualFeatures {
    pub income_total: u128,
    pub income_avg: f64,
    pub income_max: u128,
    pub income_var: f64,
    pub expend_total: u128,
    pub expend_avg: f64,
    pub expend_max: u128,
    pub expend_var: f64,
    pub expend_income_ratio: f64,
    pub balance: i128,
    pub n_sent: u64,
    pub n_received: u64,
    pub gini_invest: f64,
    pub gini_return: f64,
    pub lifecycle: u64,
}

impl ManualFeatures {
    pub fn to_vec(&self) -> [f64; MANUAL_DIM] {
        [
            self.income_total as f64,
            self.income_avg,
            self.income_max as f64,
            self.income_var,
            self.expend_total as f64,
            self.expend_avg,
            self.expend_max as f64,
            self.expend_var,
            self.expend_income_ratio,
            self.balance as f64,
            self.n_sent as f64,
            self.n_received as f64,
            self.gini_invest,
            self.gini_return,
            self.lifecycle as f64,
        ]
    }
}

struct FlowStats {
    total: u128,
    max: u128,
    avg: f64,
    var: f64,
    gini: f64,
}

fn flow_stats(amounts: &[u128]) -> FlowStats {
    if amounts.is_empty() {
        return FlowStats {
            total: 0,
            max: 0,
            avg: 0.0,
            var: 0.0,
            gini: 0.0,
        };
    }
    let total = amounts.iter().fold(0u128, |acc, a| acc.saturating_add(*a));
    let max = amounts.iter().copied().max().unwrap_or(0);
    let n = amounts.len() as f64;
    let avg = total as f64 / n;
    let var = amounts
        .iter()
        .map(|a| {
            let d = *a as f64 - avg;
            d * d
        })
        .sum::<f64>()
        / n;
    let as_f64: Vec<f64> = amounts.iter().map(|a| *a as f64).collect();
    let gini = gini(&as_f64).expect("wei amounts are non-negative");
    FlowStats {
        total,
        max,
        avg,
        var,
        gini,
    }
}

/// Features of node `v` by index.
pub fn node_features<G: TransactionView + ?Sized>(g: &G, v: NodeIx) -> ManualFeatures {
    let incoming: Vec<u128> = g.trans_in(v).iter().map(|e| g.edge(*e).amount).collect();
    let outgoing: Vec<u128> = g.trans_out(v).iter().map(|e| g.edge(*e).amount).collect();
    let timestamps = g
        .trans_in(v)
        .iter()
        .chain(g.trans_out(v))
        .map(|e| g.edge(*e).timestamp);
    let (lo, hi, count) = timestamps.fold((u64::MAX, 0u64, 0usize), |(lo, hi, c), t| {
        (lo.min(t), hi.max(t), c + 1)
    });
    let lifecycle = if count < 2 { 0 } else { hi - lo };

    let income = flow_stats(&incoming);
    let expend = flow_stats(&outgoing);
    let ratio = if income.total == 0 {
        0.0
    } else {
        expend.total as f64 / income.total as f64
    };
    ManualFeatures {
        income_total: income.total,
        income_avg: income.avg,
        income_max: income.max,
        income_var: income.var,
        expend_total: expend.total,
        expend_avg: expend.avg,
        expend_max: expend.max,
        expend_var: expend.var,
        expend_income_ratio: ratio,
        balance: income.total as i128 - expend.total as i128,
        n_sent: outgoing.len() as u64,
        n_received: incoming.len() as u64,
        gini_invest: income.gini,
        gini_return: expend.gini,
        lifecycle,
    }
}

pub fn account_features<G: TransactionView + ?Sized>(
    g: &G,
    v: &AccountId,
) -> Result<ManualFeatures, FeatureError> {
    let ix = resolve(g, v)?;
    Ok(node_features(g, ix))
}

/// One manual feature row per requested account, in the given order.
pub fn feature_matrix<G: TransactionView + Sync + ?Sized>(
    g: &G,
    nodes: &[AccountId],
) -> Result<FeatureMatrix, FeatureError> {
    let ixs = nodes
        .iter()
        .map(|id| resolve(g, id))
        .collect::<Result<Vec<_>, _>>()?;
    let data: Vec<f64> = ixs
        .par_iter()
        .flat_map_iter(|v| node_features(g, *v).to_vec())
        .collect();
    Ok(FeatureMatrix::from_flat(
        nodes.to_vec(),
        MANUAL_DIM,
        data,
        FeatureMatrix::MANUAL_PREFIX,
    ))
}

/// Manual features for every node of the graph, in node order.
pub fn all_node_features<G: TransactionView + Sync + ?Sized>(g: &G) -> FeatureMatrix {
    let ids = g.node_table().ids().to_vec();
    feature_matrix(g, &ids).expect("every node id resolves")
}
