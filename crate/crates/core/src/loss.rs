//! InfoNCE with a max-subtracted log-sum-exp and analytic gradients.

use rand::seq::index;

use crate::nn::EmbeddingSet;
use crate::seed;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LossError {
    #[error("temperature {0} outside (0, 1]")]
    BadTemperature(f64),
    #[error("{set} row {row} has norm {norm}, expected unit length")]
    NotNormalized { set: &'static str, row: usize, norm: f64 },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("explicit negative count must be at least 1")]
    NoNegatives,
}

/// How many negatives each query is contrasted against.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NegativeCount {
    /// Every available candidate.
    AllInBatch,
    /// A uniform sample of this many candidates per query, without replacement (all of
    /// them if fewer are available).
    PerQuery(usize),
}

/// Which in-batch rows may serve as negatives for query `i`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NegativePool {
    /// All other queries and all other positives.
    QueriesAndPositives,
    /// All other queries only.
    QueriesOnly,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossConfig {
    pub tau: f64,
    pub negatives: NegativeCount,
}

impl LossConfig {
    pub fn new(tau: f64, negatives: NegativeCount) -> Result<Self, LossError> {
        let c = Self { tau, negatives };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<(), LossError> {
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return Err(LossError::BadTemperature(self.tau));
        }
        if self.negatives == NegativeCount::PerQuery(0) {
            return Err(LossError::NoNegatives);
        }
        Ok(())
    }
}

impl Default for LossConfig {
    fn default() -> Self {
        Self { tau: 0.4, negatives: NegativeCount::AllInBatch }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossOutput {
    pub total: f64,
    pub per_query: Vec<f64>,
    /// Gradients with the layout of the corresponding inputs.
    pub grad_queries: Vec<f64>,
    pub grad_positives: Vec<f64>,
    /// Gradient w.r.t. an explicit negative pool; empty for in-batch variants, whose
    /// negatives are the query and positive rows themselves.
    pub grad_negatives: Vec<f64>,
    /// Mean cosine of matched pairs.
    pub mean_positive_sim: f64,
    /// Mean cosine over every (query, negative) term used.
    pub mean_negative_sim: f64,
}

impl LossOutput {
    /// Mean positive cosine minus mean negative cosine.
    pub fn alignment_gap(&self) -> f64 {
        self.mean_positive_sim - self.mean_negative_sim
    }

    pub fn mean(&self) -> f64 {
        if self.per_query.is_empty() { 0.0 } else { self.total / self.per_query.len() as f64 }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(acc: &mut [f64], a: f64, x: &[f64]) {
    for (o, v) in acc.iter_mut().zip(x) {
        *o += a * v;
    }
}

fn check_unit(set: &'static str, e: &EmbeddingSet) -> Result<(), LossError> {
    match e.first_non_unit(EmbeddingSet::UNIT_TOL) {
        Some(row) => Err(LossError::NotNormalized { set, row, norm: e.norm(row) }),
        None => Ok(()),
    }
}

/// Rows addressed by a flat index across up to three embedding sets.
struct Rows<'a> {
    sets: [&'a EmbeddingSet; 3],
    offsets: [usize; 3],
}

impl<'a> Rows<'a> {
    fn new(q: &'a EmbeddingSet, p: &'a EmbeddingSet, n: &'a EmbeddingSet) -> Self {
        Self { sets: [q, p, n], offsets: [0, q.rows, q.rows + p.rows] }
    }

    fn locate(&self, i: usize) -> (usize, usize) {
        let s = if i >= self.offsets[2] { 2 } else if i >= self.offsets[1] { 1 } else { 0 };
        (s, i - self.offsets[s])
    }

    fn row(&self, i: usize) -> &'a [f64] {
        let (s, r) = self.locate(i);
        self.sets[s].row(r)
    }
}

/// Evaluates the loss for query rows `0..n` with positives `n..2n` of `rows` and
/// per-query negative index lists produced by `negatives_of`.
fn evaluate(
    rows: &Rows,
    n: usize,
    tau: f64,
    mut negatives_of: impl FnMut(usize, &mut Vec<usize>),
) -> LossOutput {
    let dim = rows.sets[0].dim;
    let mut grads = [
        vec![0.0; rows.sets[0].data.len()],
        vec![0.0; rows.sets[1].data.len()],
        vec![0.0; rows.sets[2].data.len()],
    ];
    let mut per_query = Vec::with_capacity(n);
    let mut pos_sum = 0.0;
    let (mut neg_sum, mut neg_count) = (0.0, 0usize);
    let mut negs = Vec::new();
    let mut logits = Vec::new();
    let mut gq = vec![0.0; dim];

    for i in 0..n {
        negs.clear();
        negatives_of(i, &mut negs);
        let q = rows.row(i);
        let p = rows.row(n + i);
        let sp = dot(q, p);
        pos_sum += sp;
        logits.clear();
        logits.push(sp / tau);
        for &j in negs.iter() {
            let s = dot(q, rows.row(j));
            neg_sum += s;
            logits.push(s / tau);
        }
        neg_count += negs.len();

        let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lp = logits[0];
        for l in logits.iter_mut() {
            *l = (*l - m).exp();
        }
        let rest: f64 = logits[1..].iter().sum();
        let z = logits[0] + rest;
        // When the positive is the max its shifted term is exactly 1; ln_1p keeps small
        // losses accurate.
        let li = if lp == m { rest.ln_1p() } else { z.ln() + (m - lp) };
        per_query.push(li);

        // weights w = softmax(logits); dL/dlogit = w - onehot(positive)
        gq.iter_mut().for_each(|x| *x = 0.0);
        let wp = logits[0] / z - 1.0;
        axpy(&mut gq, wp / tau, p);
        let (ps, pr) = rows.locate(n + i);
        axpy(&mut grads[ps][pr * dim..][..dim], wp / tau, q);
        for (k, &j) in negs.iter().enumerate() {
            let w = logits[k + 1] / z;
            if w == 0.0 {
                continue;
            }
            let nj = rows.row(j);
            axpy(&mut gq, w / tau, nj);
            let (s, r) = rows.locate(j);
            axpy(&mut grads[s][r * dim..][..dim], w / tau, q);
        }
        let (qs, qr) = rows.locate(i);
        axpy(&mut grads[qs][qr * dim..][..dim], 1.0, &gq);
    }

    let total = per_query.iter().sum();
    let [grad_queries, grad_positives, grad_negatives] = grads;
    LossOutput {
        total,
        per_query,
        grad_queries,
        grad_positives,
        grad_negatives,
        mean_positive_sim: if n > 0 { pos_sum / n as f64 } else { 0.0 },
        mean_negative_sim: if neg_count > 0 { neg_sum / neg_count as f64 } else { 0.0 },
    }
}

fn check_pairs(queries: &EmbeddingSet, positives: &EmbeddingSet) -> Result<(), LossError> {
    if queries.rows != positives.rows || queries.dim != positives.dim {
        return Err(LossError::Shape(format!(
            "{}x{} queries vs {}x{} positives",
            queries.rows, queries.dim, positives.rows, positives.dim
        )));
    }
    check_unit("query", queries)?;
    check_unit("positive", positives)
}

/// InfoNCE where every query is contrasted against the whole explicit `negatives` pool.
/// The pool must not contain any query's own positive.
pub fn info_nce(
    queries: &EmbeddingSet,
    positives: &EmbeddingSet,
    negatives: &EmbeddingSet,
    cfg: &LossConfig,
) -> Result<LossOutput, LossError> {
    cfg.validate()?;
    check_pairs(queries, positives)?;
    if negatives.rows > 0 && negatives.dim != queries.dim {
        return Err(LossError::Shape(format!("negative dim {} vs {}", negatives.dim, queries.dim)));
    }
    check_unit("negative", negatives)?;
    let empty = EmbeddingSet::empty(queries.dim);
    let negatives = if negatives.rows == 0 { &empty } else { negatives };
    let rows = Rows::new(queries, positives, negatives);
    let n = queries.rows;
    let base = 2 * n;
    Ok(evaluate(&rows, n, cfg.tau, |_, out| out.extend(base..base + negatives.rows)))
}

/// InfoNCE over a batch of matched rows, with negatives for query `i` drawn from the
/// other rows of the batch as selected by `pool` and `cfg.negatives`. Sampling (when
/// `PerQuery`) is deterministic in `seed`.
pub fn info_nce_in_batch(
    queries: &EmbeddingSet,
    positives: &EmbeddingSet,
    pool: NegativePool,
    cfg: &LossConfig,
    seed: u64,
) -> Result<LossOutput, LossError> {
    cfg.validate()?;
    check_pairs(queries, positives)?;
    let empty = EmbeddingSet::empty(queries.dim);
    let rows = Rows::new(queries, positives, &empty);
    let n = queries.rows;
    let span = match pool {
        NegativePool::QueriesAndPositives => 2 * n,
        NegativePool::QueriesOnly => n,
    };
    // Candidates for query i are 0..span minus {i, n + i}, enumerated in index order.
    let skip = |i: usize, c: usize| -> usize {
        let mut j = c;
        if j >= i {
            j += 1;
        }
        if span == 2 * n && j >= n + i {
            j += 1;
        }
        j
    };
    let n_cand = |_: usize| if span == 2 * n { 2 * n.saturating_sub(1) } else { n.saturating_sub(1) };
    let mut rng = seed::rng(seed);
    let out = evaluate(&rows, n, cfg.tau, |i, out| {
        let m = n_cand(i);
        match cfg.negatives {
            NegativeCount::PerQuery(k) if k < m => {
                let mut picked = index::sample(&mut rng, m, k).into_vec();
                picked.sort_unstable();
                out.extend(picked.into_iter().map(|c| skip(i, c)));
            }
            _ => out.extend((0..m).map(|c| skip(i, c))),
        }
    });
    Ok(out)
}
