//! Seeded synthetic interaction data with planted investment schemes.
//!
//! Every contract, scheme or not, draws its user count, deposit amounts,
//! refunds, owner withdrawal and library calls from the same distributions,
//! so a contract's own transaction statistics say little about its label.
//! What differs is who the users are. Scheme contracts are funded by a
//! shared pool of serial investors who put money into several schemes and
//! receive paybacks; ordinary contracts are used by occasional users who
//! mostly touch one contract. Each scheme also pays its creator, who moves
//! the funds on to another contract, so every investor call starts a
//! complete `EOA -call-> CA -trans-> EOA -trans-> CA` walk through the
//! scheme.

use std::collections::HashSet;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::io::{write_accounts_csv, write_edges_csv, write_labels_csv};
use crate::graph::{AccountId, AccountKind, InteractionEdge, Label, LabelSet};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("payback_fraction must lie in [0, 1], got {0}")]
    InvalidFraction(f64),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n_ponzi: usize,
    pub n_background: usize,
    pub investors_per_ponzi: usize,
    pub payback_fraction: f64,
    pub noise_edges: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            n_ponzi: 50,
            n_background: 500,
            investors_per_ponzi: 8,
            payback_fraction: 0.6,
            noise_edges: 2000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub accounts: Vec<(AccountId, AccountKind)>,
    pub edges: Vec<InteractionEdge>,
    pub labels: LabelSet,
    pub ponzi: Vec<AccountId>,
}

#[derive(Debug, Clone)]
pub struct SyntheticFiles {
    pub accounts: PathBuf,
    pub edges: PathBuf,
    pub labels: PathBuf,
}

const T0: u64 = 1_500_000_000;
const DAY: u64 = 86_400;

struct Builder {
    rng: ChaCha8Rng,
    used: HashSet<String>,
    accounts: Vec<(AccountId, AccountKind)>,
    edges: Vec<InteractionEdge>,
    amount: LogNormal<f64>,
}

impl Builder {
    fn account(&mut self, kind: AccountKind) -> AccountId {
        loop {
            let bytes: [u8; 20] = self.rng.random();
            let raw: String = std::iter::once("0x".to_string())
                .chain(bytes.iter().map(|b| format!("{b:02x}")))
                .collect();
            if self.used.insert(raw.clone()) {
                let id = AccountId::from(raw.as_str());
                self.accounts.push((id.clone(), kind));
                return id;
            }
        }
    }

    fn wei(&mut self) -> u128 {
        self.amount.sample(&mut self.rng).max(1.0) as u128
    }

    fn trans(&mut self, src: &AccountId, dst: &AccountId, amount: u128, ts: u64) {
        self.edges.push(InteractionEdge::trans(src.as_str(), dst.as_str(), amount, ts));
    }

    fn call(&mut self, src: &AccountId, dst: &AccountId, ts: u64) {
        self.edges.push(InteractionEdge::call(src.as_str(), dst.as_str(), ts));
    }

    fn time(&mut self, start: u64, span_days: u64) -> u64 {
        start + self.rng.random_range(0..span_days.max(1) * DAY)
    }
}

/// Users of one contract: at least `base`, up to 50% more.
fn user_count(rng: &mut ChaCha8Rng, base: usize) -> usize {
    base + rng.random_range(0..=base / 2)
}

pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SyntheticData, SynthError> {
    if !(0.0..=1.0).contains(&spec.payback_fraction) {
        return Err(SynthError::InvalidFraction(spec.payback_fraction));
    }
    let mut b = Builder {
        rng: ChaCha8Rng::seed_from_u64(spec.seed),
        used: HashSet::new(),
        accounts: Vec::new(),
        edges: Vec::new(),
        // median one ether
        amount: LogNormal::new((1e18f64).ln(), 1.0).expect("valid parameters"),
    };
    let base = spec.investors_per_ponzi.max(1);

    let ponzi: Vec<AccountId> = (0..spec.n_ponzi).map(|_| b.account(AccountKind::Ca)).collect();
    let background: Vec<AccountId> =
        (0..spec.n_background).map(|_| b.account(AccountKind::Ca)).collect();
    let libraries: Vec<AccountId> = (0..(spec.n_ponzi + spec.n_background) / 20 + 1)
        .map(|_| b.account(AccountKind::Ca))
        .collect();
    let all_ca: Vec<AccountId> = ponzi
        .iter()
        .chain(&background)
        .chain(&libraries)
        .cloned()
        .collect();

    // Serial investors join about three schemes each.
    let pool_size = (spec.n_ponzi * base / 3).max(base + base / 2);
    let investors: Vec<AccountId> = if spec.n_ponzi > 0 {
        (0..pool_size).map(|_| b.account(AccountKind::Eoa)).collect()
    } else {
        Vec::new()
    };

    let mut labels = LabelSet::new();
    let contracts: Vec<(AccountId, bool)> = ponzi
        .iter()
        .map(|c| (c.clone(), true))
        .chain(background.iter().map(|c| (c.clone(), false)))
        .collect();
    let mut ordinary: Vec<AccountId> = Vec::new();
    for (ca, is_ponzi) in &contracts {
        labels
            .insert(ca.clone(), if *is_ponzi { Label::Ponzi } else { Label::NonPonzi })
            .expect("fresh id");
        let launch = b.time(T0, 300);
        let owner = b.account(AccountKind::Eoa);
        b.call(&owner, ca, launch);

        let m = user_count(&mut b.rng, base);
        let users: Vec<AccountId> = if *is_ponzi {
            investors
                .choose_multiple(&mut b.rng, m.min(investors.len()))
                .cloned()
                .collect()
        } else {
            (0..m)
                .map(|_| {
                    // a few returning users shared between ordinary contracts
                    if !ordinary.is_empty() && b.rng.random_bool(0.1) {
                        ordinary[b.rng.random_range(0..ordinary.len())].clone()
                    } else {
                        let u = b.account(AccountKind::Eoa);
                        ordinary.push(u.clone());
                        u
                    }
                })
                .collect()
        };

        let mut deposited = 0u128;
        for u in &users {
            let ts = b.time(launch, 60);
            let amt = b.wei();
            deposited += amt;
            b.call(u, ca, ts);
            b.trans(u, ca, amt, ts);
            if b.rng.random_bool(spec.payback_fraction) {
                let back = (amt as f64 * b.rng.random_range(0.5..1.5)) as u128;
                let later = b.time(ts + DAY, 30);
                b.trans(ca, u, back, later);
            }
        }
        // owner withdrawal, then the funds move on to some other contract
        let cut = (deposited as f64 * b.rng.random_range(0.05..0.3)) as u128;
        let ts = b.time(launch + 60 * DAY, 30);
        b.trans(ca, &owner, cut.max(1), ts);
        let next = all_ca.choose(&mut b.rng).expect("at least one contract").clone();
        let ts2 = b.time(ts + DAY, 10);
        b.trans(&owner, &next, cut.max(1), ts2);

        if b.rng.random_bool(0.2) {
            let lib = libraries.choose(&mut b.rng).expect("libraries exist").clone();
            let ts = b.time(launch, 60);
            b.call(ca, &lib, ts);
        }
    }

    // Serial investors also pay into ordinary contracts now and then.
    for inv in &investors {
        let n = b.rng.random_range(1..=3);
        for _ in 0..n {
            let dst = background.choose(&mut b.rng).or_else(|| all_ca.first()).cloned();
            if let Some(dst) = dst {
                let amt = b.wei();
                let ts = b.time(T0, 400);
                b.trans(inv, &dst, amt, ts);
            }
        }
    }

    let eoas: Vec<AccountId> = b
        .accounts
        .iter()
        .filter(|(_, k)| *k == AccountKind::Eoa)
        .map(|(id, _)| id.clone())
        .collect();
    for _ in 0..spec.noise_edges {
        if eoas.is_empty() {
            break;
        }
        let src = eoas.choose(&mut b.rng).expect("non-empty").clone();
        let dst = if b.rng.random_bool(0.5) {
            eoas.choose(&mut b.rng).expect("non-empty").clone()
        } else {
            all_ca.choose(&mut b.rng).expect("non-empty").clone()
        };
        let amt = b.wei() / 10;
        let ts = b.time(T0, 400);
        b.trans(&src, &dst, amt, ts);
    }

    Ok(SyntheticData {
        accounts: b.accounts,
        edges: b.edges,
        labels,
        ponzi,
    })
}

impl SyntheticData {
    /// Writes `accounts.csv`, `edges.csv` and `labels.csv` into `dir`.
    pub fn write_to_dir(&self, dir: &Path) -> Result<SyntheticFiles, SynthError> {
        let io = |path: &Path| {
            let path = path.to_path_buf();
            move |source| SynthError::Io { path, source }
        };
        std::fs::create_dir_all(dir).map_err(io(dir))?;
        let files = SyntheticFiles {
            accounts: dir.join("accounts.csv"),
            edges: dir.join("edges.csv"),
            labels: dir.join("labels.csv"),
        };
        let create = |p: &Path| File::create(p).map(BufWriter::new).map_err(io(p));
        write_accounts_csv(
            create(&files.accounts)?,
            self.accounts.iter().map(|(id, k)| (id, *k)),
        )
        .map_err(io(&files.accounts))?;
        write_edges_csv(create(&files.edges)?, self.edges.iter().cloned())
            .map_err(io(&files.edges))?;
        write_labels_csv(create(&files.labels)?, self.labels.iter()).map_err(io(&files.labels))?;
        Ok(files)
    }
}
