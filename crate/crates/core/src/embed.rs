//! Random-walk corpora on the transaction graph and skip-gram embeddings.
//!
//! Walks follow outgoing transaction edges unless `undirected` is set, and
//! stop early at nodes without a successor. Parallel edges do not change
//! transition probabilities: a step picks uniformly among distinct
//! neighbours, reweighted by the second-order bias in node2vec mode.

use std::io::{BufRead, Write};
use std::sync::atomic::{AtomicU32, AtomicUsize, Ordering};

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{AccountId, HomGraph, NodeIx};
use crate::matrix::FeatureMatrix;
use crate::seed::derive_indexed;

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("walk corpus is empty")]
    EmptyCorpus,
    #[error("corpus line {line}: {reason}")]
    MalformedCorpus { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum WalkStrategy {
    Uniform,
    Node2Vec { p: f64, q: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WalkConfig {
    pub walks_per_node: usize,
    /// Maximum number of nodes in a walk, start included.
    pub walk_length: usize,
    pub strategy: WalkStrategy,
    pub seed: u64,
    pub undirected: bool,
}

impl Default for WalkConfig {
    fn default() -> Self {
        WalkConfig {
            walks_per_node: 5,
            walk_length: 50,
            strategy: WalkStrategy::Uniform,
            seed: 0,
            undirected: false,
        }
    }
}

impl WalkConfig {
    pub fn validate(&self) -> Result<(), EmbedError> {
        if self.walks_per_node == 0 || self.walk_length == 0 {
            return Err(EmbedError::InvalidConfig(
                "walks_per_node and walk_length must be at least 1".into(),
            ));
        }
        if let WalkStrategy::Node2Vec { p, q } = self.strategy {
            if !(p > 0.0 && q > 0.0 && p.is_finite() && q.is_finite()) {
                return Err(EmbedError::InvalidConfig(format!(
                    "p and q must be positive, got p = {p}, q = {q}"
                )));
            }
        }
        Ok(())
    }
}

/// Walks over a fixed vocabulary; tokens index into `vocab`.
#[derive(Debug, Clone, PartialEq)]
pub struct WalkCorpus {
    pub vocab: Vec<AccountId>,
    pub walks: Vec<Vec<u32>>,
}

impl WalkCorpus {
    pub fn total_tokens(&self) -> usize {
        self.walks.iter().map(Vec::len).sum()
    }

    /// One walk per line, ids separated by single spaces.
    pub fn write_text<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for walk in &self.walks {
            let line: Vec<&str> = walk.iter().map(|t| self.vocab[*t as usize].as_str()).collect();
            writeln!(w, "{}", line.join(" "))?;
        }
        Ok(())
    }

    /// Reads whitespace-separated id lines. The vocabulary is ordered by
    /// first appearance; blank lines are skipped.
    pub fn read_text<R: BufRead>(r: R) -> Result<WalkCorpus, EmbedError> {
        let mut vocab = Vec::new();
        let mut index = std::collections::HashMap::new();
        let mut walks = Vec::new();
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            let mut walk = Vec::new();
            for tok in line.split_whitespace() {
                let id = AccountId::new(tok).map_err(|e| EmbedError::MalformedCorpus {
                    line: i + 1,
                    reason: e.to_string(),
                })?;
                let t = *index.entry(id.clone()).or_insert_with(|| {
                    vocab.push(id);
                    vocab.len() as u32 - 1
                });
                walk.push(t);
            }
            if !walk.is_empty() {
                walks.push(walk);
            }
        }
        Ok(WalkCorpus { vocab, walks })
    }
}

fn neighbors(g: &HomGraph, v: u32, undirected: bool) -> &[u32] {
    if undirected {
        g.undirected_neighbors(NodeIx(v))
    } else {
        g.out_neighbors(NodeIx(v))
    }
}

/// Draws the next node after `prev -> cur` by rejection sampling against
/// the unnormalized node2vec weights.
fn node2vec_step<R: Rng>(
    g: &HomGraph,
    prev: u32,
    cur: u32,
    p: f64,
    q: f64,
    undirected: bool,
    rng: &mut R,
) -> Option<u32> {
    let nbrs = neighbors(g, cur, undirected);
    if nbrs.is_empty() {
        return None;
    }
    let (w_back, w_near, w_far) = (1.0 / p, 1.0, 1.0 / q);
    let w_max = w_back.max(w_near).max(w_far);
    let prev_nbrs = neighbors(g, prev, undirected);
    loop {
        let x = nbrs[rng.random_range(0..nbrs.len())];
        let w = if x == prev {
            w_back
        } else if prev_nbrs.binary_search(&x).is_ok() {
            w_near
        } else {
            w_far
        };
        if rng.random::<f64>() * w_max < w {
            return Some(x);
        }
    }
}

fn walk_from<R: Rng>(g: &HomGraph, start: u32, cfg: &WalkConfig, rng: &mut R) -> Vec<u32> {
    let mut walk = Vec::with_capacity(cfg.walk_length);
    walk.push(start);
    while walk.len() < cfg.walk_length {
        let cur = *walk.last().expect("non-empty");
        let next = match (cfg.strategy, walk.len()) {
            (WalkStrategy::Node2Vec { p, q }, n) if n >= 2 => {
                node2vec_step(g, walk[n - 2], cur, p, q, cfg.undirected, rng)
            }
            _ => {
                let nbrs = neighbors(g, cur, cfg.undirected);
                (!nbrs.is_empty()).then(|| nbrs[rng.random_range(0..nbrs.len())])
            }
        };
        match next {
            Some(x) => walk.push(x),
            None => break,
        }
    }
    walk
}

/// `walks_per_node` walks from every node. Each start node draws from its
/// own derived stream, so the corpus does not depend on thread count.
/// Walks are ordered by round, then by node.
pub fn generate_walks(g: &HomGraph, cfg: &WalkConfig) -> Result<WalkCorpus, EmbedError> {
    cfg.validate()?;
    let n = g.node_count();
    let per_node: Vec<Vec<Vec<u32>>> = (0..n as u32)
        .into_par_iter()
        .map(|v| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_indexed(cfg.seed, "walks", v as u64));
            (0..cfg.walks_per_node)
                .map(|_| walk_from(g, v, cfg, &mut rng))
                .collect()
        })
        .collect();
    let mut walks = Vec::with_capacity(n * cfg.walks_per_node);
    for r in 0..cfg.walks_per_node {
        for node_walks in &per_node {
            walks.push(node_walks[r].clone());
        }
    }
    Ok(WalkCorpus {
        vocab: g.nodes().ids().to_vec(),
        walks,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SkipGramConfig {
    pub dim: usize,
    pub window: usize,
    pub negatives: usize,
    pub epochs: usize,
    /// Initial step size, decayed linearly to zero over training.
    pub learning_rate: f64,
    pub seed: u64,
    /// 1 gives reproducible training; more workers update shared
    /// parameters without locks.
    pub workers: usize,
    pub normalize: bool,
}

impl Default for SkipGramConfig {
    fn default() -> Self {
        SkipGramConfig {
            dim: 128,
            window: 10,
            negatives: 5,
            epochs: 5,
            learning_rate: 0.025,
            seed: 0,
            workers: 1,
            normalize: false,
        }
    }
}

impl SkipGramConfig {
    pub fn validate(&self) -> Result<(), EmbedError> {
        if self.dim == 0 || self.window == 0 || self.negatives == 0 || self.epochs == 0 {
            return Err(EmbedError::InvalidConfig(
                "dim, window, negatives and epochs must be at least 1".into(),
            ));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(EmbedError::InvalidConfig(format!(
                "learning_rate = {}",
                self.learning_rate
            )));
        }
        if self.workers == 0 {
            return Err(EmbedError::InvalidConfig("workers must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Embedding {
    /// One row per vocabulary entry; entries absent from the corpus are zero.
    pub matrix: FeatureMatrix,
    /// Mean loss per (center, context) pair for each epoch.
    pub epoch_loss: Vec<f64>,
    pub absent: Vec<AccountId>,
}

impl Embedding {
    pub fn final_loss(&self) -> f64 {
        self.epoch_loss.last().copied().unwrap_or(f64::NAN)
    }
}

/// Shared f32 parameters updated with relaxed atomics.
struct Params(Vec<AtomicU32>);

impl Params {
    fn new(values: impl Iterator<Item = f32>) -> Self {
        Params(values.map(|v| AtomicU32::new(v.to_bits())).collect())
    }

    fn get(&self, i: usize) -> f32 {
        f32::from_bits(self.0[i].load(Ordering::Relaxed))
    }

    fn add(&self, i: usize, delta: f32) {
        let v = self.get(i) + delta;
        self.0[i].store(v.to_bits(), Ordering::Relaxed);
    }
}

fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

struct Trainer<'a> {
    cfg: &'a SkipGramConfig,
    input: Params,
    output: Params,
    noise: WeightedIndex<f64>,
    processed: AtomicUsize,
    total: usize,
}

impl Trainer<'_> {
    /// One (center, context) update with negative samples; returns the loss.
    fn pair<R: Rng>(&self, center: usize, context: usize, lr: f32, grad: &mut [f32], rng: &mut R) -> f64 {
        let d = self.cfg.dim;
        let ci = center * d;
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut loss = 0.0;
        for k in 0..=self.cfg.negatives {
            let (target, label) = if k == 0 {
                (context, 1.0)
            } else {
                let t = self.noise.sample(rng);
                if t == context {
                    continue;
                }
                (t, 0.0)
            };
            let ti = target * d;
            let mut z = 0.0f64;
            for j in 0..d {
                z += (self.input.get(ci + j) * self.output.get(ti + j)) as f64;
            }
            loss -= if label == 1.0 { log_sigmoid(z) } else { log_sigmoid(-z) };
            let g = (label - sigmoid(z)) as f32 * lr;
            for (j, gj) in grad.iter_mut().enumerate() {
                *gj += g * self.output.get(ti + j);
                self.output.add(ti + j, g * self.input.get(ci + j));
            }
        }
        for (j, g) in grad.iter().enumerate() {
            self.input.add(ci + j, *g);
        }
        loss
    }

    /// Trains on `walks`; returns (summed loss, pair count).
    fn run(&self, walks: &[Vec<u32>], rng: &mut ChaCha8Rng) -> (f64, usize) {
        let mut grad = vec![0.0f32; self.cfg.dim];
        let mut loss = 0.0;
        let mut pairs = 0usize;
        for walk in walks {
            let done = self.processed.fetch_add(walk.len(), Ordering::Relaxed);
            let frac = done as f64 / self.total.max(1) as f64;
            let lr = (self.cfg.learning_rate * (1.0 - frac).max(1e-4)) as f32;
            for (i, &center) in walk.iter().enumerate() {
                let b = rng.random_range(1..=self.cfg.window);
                let lo = i.saturating_sub(b);
                let hi = (i + b).min(walk.len() - 1);
                for (j, &context) in walk.iter().enumerate().take(hi + 1).skip(lo) {
                    if j == i {
                        continue;
                    }
                    loss += self.pair(center as usize, context as usize, lr, &mut grad, rng);
                    pairs += 1;
                }
            }
        }
        (loss, pairs)
    }
}

/// Skip-gram with negative sampling. Noise is drawn from the unigram
/// distribution raised to 0.75.
pub fn train_skipgram(corpus: &WalkCorpus, cfg: &SkipGramConfig) -> Result<Embedding, EmbedError> {
    cfg.validate()?;
    let total_tokens = corpus.total_tokens();
    if total_tokens == 0 {
        return Err(EmbedError::EmptyCorpus);
    }
    let n = corpus.vocab.len();
    let mut counts = vec![0usize; n];
    for walk in &corpus.walks {
        for t in walk {
            counts[*t as usize] += 1;
        }
    }
    let noise = WeightedIndex::new(counts.iter().map(|c| (*c as f64).powf(0.75)))
        .map_err(|e| EmbedError::InvalidConfig(e.to_string()))?;

    let d = cfg.dim;
    let mut init_rng = ChaCha8Rng::seed_from_u64(derive_indexed(cfg.seed, "skipgram-init", 0));
    let input = Params::new((0..n * d).map(|_| (init_rng.random::<f32>() - 0.5) / d as f32));
    let output = Params::new(std::iter::repeat_n(0.0f32, n * d));
    let trainer = Trainer {
        cfg,
        input,
        output,
        noise,
        processed: AtomicUsize::new(0),
        total: total_tokens * cfg.epochs,
    };

    let mut epoch_loss = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let chunk = corpus.walks.len().div_ceil(cfg.workers).max(1);
        let parts: Vec<(f64, usize)> = if cfg.workers == 1 {
            let mut rng =
                ChaCha8Rng::seed_from_u64(derive_indexed(cfg.seed, "skipgram", epoch as u64));
            vec![trainer.run(&corpus.walks, &mut rng)]
        } else {
            corpus
                .walks
                .par_chunks(chunk)
                .enumerate()
                .map(|(w, walks)| {
                    let stream = (epoch * cfg.workers + w) as u64;
                    let mut rng =
                        ChaCha8Rng::seed_from_u64(derive_indexed(cfg.seed, "skipgram", stream));
                    trainer.run(walks, &mut rng)
                })
                .collect()
        };
        let (loss, pairs) = parts
            .into_iter()
            .fold((0.0, 0usize), |(l, p), (l2, p2)| (l + l2, p + p2));
        epoch_loss.push(if pairs == 0 { 0.0 } else { loss / pairs as f64 });
    }

    let mut data = Vec::with_capacity(n * d);
    let mut absent = Vec::new();
    for (t, id) in corpus.vocab.iter().enumerate() {
        if counts[t] == 0 {
            absent.push(id.clone());
            data.extend(std::iter::repeat_n(0.0, d));
        } else {
            data.extend((0..d).map(|j| trainer.input.get(t * d + j) as f64));
        }
    }
    let mut matrix = FeatureMatrix::from_flat(
        corpus.vocab.clone(),
        d,
        data,
        FeatureMatrix::EMBEDDING_PREFIX,
    );
    if cfg.normalize {
        matrix = matrix.l2_normalized();
    }
    Ok(Embedding {
        matrix,
        epoch_loss,
        absent,
    })
}

/// Corpus generation followed by training, rows in graph node order.
pub fn embed_graph(
    g: &HomGraph,
    walk: &WalkConfig,
    sg: &SkipGramConfig,
) -> Result<Embedding, EmbedError> {
    let corpus = generate_walks(g, walk)?;
    train_skipgram(&corpus, sg)
}

pub const PQ_GRID: [f64; 3] = [0.5, 1.0, 2.0];

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GridPoint {
    pub p: f64,
    pub q: f64,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridResult {
    pub best: GridPoint,
    pub table: Vec<GridPoint>,
}

/// Highest score; ties go to the smaller p, then the smaller q.
pub fn select_best(table: &[GridPoint]) -> Option<GridPoint> {
    table.iter().copied().reduce(|best, c| {
        let better = c.score > best.score
            || (c.score == best.score && (c.p, c.q) < (best.p, best.q));
        if better {
            c
        } else {
            best
        }
    })
}

/// Scores every (p, q) pair of `grid × grid` with `score` and picks the best.
pub fn grid_search<E>(
    grid: &[f64],
    mut score: impl FnMut(f64, f64) -> Result<f64, E>,
) -> Result<GridResult, E> {
    let mut table = Vec::with_capacity(grid.len() * grid.len());
    for &p in grid {
        for &q in grid {
            table.push(GridPoint {
                p,
                q,
                score: score(p, q)?,
            });
        }
    }
    let best = select_best(&table).expect("non-empty grid");
    Ok(GridResult { best, table })
}

#[derive(Debug, Error)]
pub enum GridError {
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Ml(#[from] crate::mlkit::MlError),
}

/// Node2vec (p, q) selection by mean cross-validated micro-F1 of the
/// embeddings of `samples`.
#[allow(clippy::too_many_arguments)]
pub fn grid_pq(
    g: &HomGraph,
    samples: &[(AccountId, u8)],
    walk: &WalkConfig,
    sg: &SkipGramConfig,
    model: crate::mlkit::ModelKind,
    hyper: &crate::mlkit::Hyper,
    cv: &crate::mlkit::CvConfig,
    grid: &[f64],
) -> Result<GridResult, GridError> {
    grid_search(grid, |p, q| {
        let wc = WalkConfig {
            strategy: WalkStrategy::Node2Vec { p, q },
            ..*walk
        };
        let emb = embed_graph(g, &wc, sg)?;
        let ds = crate::mlkit::Dataset::from_samples(&emb.matrix, samples)?;
        Ok(crate::mlkit::cross_validate(&ds, model, hyper, cv)?.mean)
    })
}
