//! Linear-chain CRF over per-token unary scores.
//!
//! Tags are indexed `0..V`; the transition matrix is `(V + 2) x (V + 2)` with
//! two synthetic states, `START = V` and `STOP = V + 1`. Entries equal to
//! `-inf` are forbidden transitions.

use ndarray::{Array1, Array2, ArrayView1};

use crate::error::{Error, Result};
use crate::labels::{LabelSet, TagId};

/// log(exp(a) + exp(b) + ...) that tolerates `-inf` entries.
pub fn log_sum_exp<I>(values: I) -> f64
where
    I: IntoIterator<Item = f64>,
    I::IntoIter: Clone,
{
    let values = values.into_iter();
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Builds the transition mask for a label set: `true` where a transition is
/// BIO-legal. Rows/columns follow the `START = V`, `STOP = V + 1` layout.
pub fn bio_mask(labels: &LabelSet) -> Array2<bool> {
    let v = labels.num_tags();
    let (start, stop) = (v, v + 1);
    Array2::from_shape_fn((v + 2, v + 2), |(from, to)| {
        if to == start || from == stop {
            return false;
        }
        if to == stop {
            return from != start;
        }
        let prev = if from == start { None } else { Some(from) };
        labels.transition_allowed(prev, to)
    })
}

/// Unary scores and transition scores for one sentence.
#[derive(Debug, Clone, PartialEq)]
pub struct CrfOutputs {
    /// `K x V` per-token tag scores.
    pub unary: Array2<f64>,
    /// `(V + 2) x (V + 2)` transition scores, `-inf` where masked.
    pub transitions: Array2<f64>,
}

/// Posterior quantities from the forward-backward pass.
#[derive(Debug, Clone)]
pub struct Marginals {
    pub log_partition: f64,
    /// `K x V` node marginals.
    pub nodes: Array2<f64>,
    /// Expected usage count of each transition, including START/STOP rows.
    pub transitions: Array2<f64>,
}

impl CrfOutputs {
    pub fn new(unary: Array2<f64>, transitions: Array2<f64>) -> Result<Self> {
        let v = unary.ncols();
        if unary.nrows() == 0 {
            return Err(Error::Shape("unary scores need at least one token".into()));
        }
        if transitions.dim() != (v + 2, v + 2) {
            return Err(Error::Shape(format!(
                "transition matrix is {:?}, expected {:?} for {v} tags",
                transitions.dim(),
                (v + 2, v + 2)
            )));
        }
        Ok(Self { unary, transitions })
    }

    pub fn len(&self) -> usize {
        self.unary.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.unary.nrows() == 0
    }

    pub fn num_tags(&self) -> usize {
        self.unary.ncols()
    }

    pub fn start(&self) -> usize {
        self.num_tags()
    }

    pub fn stop(&self) -> usize {
        self.num_tags() + 1
    }

    /// Total score of a tag path: unaries plus START, inner and STOP transitions.
    pub fn sequence_score(&self, path: &[TagId]) -> Result<f64> {
        if path.len() != self.len() {
            return Err(Error::Shape(format!(
                "path has {} tags for {} tokens",
                path.len(),
                self.len()
            )));
        }
        if let Some(&bad) = path.iter().find(|&&t| t >= self.num_tags()) {
            return Err(Error::Shape(format!("tag {bad} is outside {} tags", self.num_tags())));
        }
        let unary: f64 = path.iter().enumerate().map(|(i, &t)| self.unary[[i, t]]).sum();
        let mut trans = self.transitions[[self.start(), path[0]]];
        for pair in path.windows(2) {
            trans += self.transitions[[pair[0], pair[1]]];
        }
        trans += self.transitions[[path[path.len() - 1], self.stop()]];
        Ok(unary + trans)
    }

    /// Forward log-scores: `alpha[i][v]` covers tokens `0..=i` ending in `v`.
    fn forward(&self) -> Array2<f64> {
        let (k, v) = self.unary.dim();
        let mut alpha = Array2::from_elem((k, v), f64::NEG_INFINITY);
        for t in 0..v {
            alpha[[0, t]] = self.transitions[[self.start(), t]] + self.unary[[0, t]];
        }
        for i in 1..k {
            for t in 0..v {
                let incoming = (0..v).map(|p| alpha[[i - 1, p]] + self.transitions[[p, t]]);
                alpha[[i, t]] = log_sum_exp(incoming) + self.unary[[i, t]];
            }
        }
        alpha
    }

    /// Backward log-scores: `beta[i][v]` covers tokens `i+1..K` and STOP given `v` at `i`.
    fn backward(&self) -> Array2<f64> {
        let (k, v) = self.unary.dim();
        let mut beta = Array2::from_elem((k, v), f64::NEG_INFINITY);
        for t in 0..v {
            beta[[k - 1, t]] = self.transitions[[t, self.stop()]];
        }
        for i in (0..k - 1).rev() {
            for t in 0..v {
                let outgoing = (0..v).map(|n| {
                    self.transitions[[t, n]] + self.unary[[i + 1, n]] + beta[[i + 1, n]]
                });
                beta[[i, t]] = log_sum_exp(outgoing);
            }
        }
        beta
    }

    /// Log of the summed exponentiated scores of every path (forward algorithm).
    pub fn log_partition(&self) -> f64 {
        let alpha = self.forward();
        let last = alpha.row(self.len() - 1);
        log_sum_exp((0..self.num_tags()).map(|t| last[t] + self.transitions[[t, self.stop()]]))
    }

    pub fn marginals(&self) -> Marginals {
        let (k, v) = self.unary.dim();
        let alpha = self.forward();
        let beta = self.backward();
        let log_z = log_sum_exp((0..v).map(|t| alpha[[k - 1, t]] + self.transitions[[t, self.stop()]]));
        let prob = |log_p: f64| if log_p == f64::NEG_INFINITY { 0.0 } else { (log_p - log_z).exp() };

        let nodes = Array2::from_shape_fn((k, v), |(i, t)| prob(alpha[[i, t]] + beta[[i, t]]));
        let mut transitions = Array2::zeros((v + 2, v + 2));
        for t in 0..v {
            transitions[[self.start(), t]] = nodes[[0, t]];
            transitions[[t, self.stop()]] = nodes[[k - 1, t]];
        }
        for i in 0..k - 1 {
            for a in 0..v {
                if alpha[[i, a]] == f64::NEG_INFINITY {
                    continue;
                }
                for b in 0..v {
                    transitions[[a, b]] += prob(
                        alpha[[i, a]] + self.transitions[[a, b]] + self.unary[[i + 1, b]] + beta[[i + 1, b]],
                    );
                }
            }
        }
        Marginals { log_partition: log_z, nodes, transitions }
    }

    /// Highest-scoring path. Among equal-scoring paths the lexicographically
    /// smallest tag-index sequence wins.
    pub fn viterbi(&self) -> Vec<TagId> {
        let (k, v) = self.unary.dim();
        // best[i][t]: best score of tokens i+1..K plus STOP given tag t at i.
        let mut best = Array2::from_elem((k, v), f64::NEG_INFINITY);
        for t in 0..v {
            best[[k - 1, t]] = self.transitions[[t, self.stop()]];
        }
        for i in (0..k - 1).rev() {
            for t in 0..v {
                best[[i, t]] = (0..v)
                    .map(|n| self.transitions[[t, n]] + self.unary[[i + 1, n]] + best[[i + 1, n]])
                    .fold(f64::NEG_INFINITY, f64::max);
            }
        }
        // Forward greedy pass, scanning tags in ascending order and keeping
        // the first maximum.
        let mut path = Vec::with_capacity(k);
        let mut prev = self.start();
        for i in 0..k {
            let mut arg = 0;
            let mut top = f64::NEG_INFINITY;
            for t in 0..v {
                let s = self.transitions[[prev, t]] + self.unary[[i, t]] + best[[i, t]];
                if s > top {
                    top = s;
                    arg = t;
                }
            }
            path.push(arg);
            prev = arg;
        }
        path
    }

    /// `max over paths of log P(path)`; always `<= 0`.
    pub fn max_log_prob(&self) -> f64 {
        let path = self.viterbi();
        let score = self.sequence_score(&path).expect("viterbi path has matching length");
        (score - self.log_partition()).min(0.0)
    }

    /// Negative log-likelihood of `gold`. Returns `+inf` if the gold path
    /// uses a forbidden transition.
    pub fn nll(&self, gold: &[TagId]) -> Result<f64> {
        let score = self.sequence_score(gold)?;
        if score == f64::NEG_INFINITY {
            return Ok(f64::INFINITY);
        }
        Ok((self.log_partition() - score).max(0.0))
    }

    /// NLL with its gradient w.r.t. the unary scores and the transition matrix.
    pub fn nll_with_grad(&self, gold: &[TagId]) -> Result<(f64, Array2<f64>, Array2<f64>)> {
        let score = self.sequence_score(gold)?;
        if score == f64::NEG_INFINITY {
            return Err(Error::Data {
                sentence_id: None,
                message: "gold path uses a masked transition".into(),
            });
        }
        let m = self.marginals();
        let mut d_unary = m.nodes;
        let mut d_trans = m.transitions;
        for (i, &t) in gold.iter().enumerate() {
            d_unary[[i, t]] -= 1.0;
        }
        d_trans[[self.start(), gold[0]]] -= 1.0;
        for pair in gold.windows(2) {
            d_trans[[pair[0], pair[1]]] -= 1.0;
        }
        d_trans[[gold[gold.len() - 1], self.stop()]] -= 1.0;
        Ok((m.log_partition - score, d_unary, d_trans))
    }
}

/// Row-wise softmax.
pub fn softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|x| (x - max).exp());
        let total = row.sum();
        row /= total;
    }
    out
}

/// Row-wise log-softmax.
pub fn log_softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let norm = log_sum_exp(row.iter().copied());
        row.mapv_inplace(|x| x - norm);
    }
    out
}

/// Pulls a gradient w.r.t. log-softmax outputs back to the logits.
pub fn log_softmax_backward(probs: &Array2<f64>, d_log_probs: &Array2<f64>) -> Array2<f64> {
    let mut out = d_log_probs.clone();
    for (mut row, p) in out.rows_mut().into_iter().zip(probs.rows()) {
        let total = row.sum();
        row.scaled_add(-total, &p);
    }
    out
}

/// Pulls a gradient w.r.t. softmax outputs back to the logits.
pub fn softmax_backward(probs: &Array2<f64>, d_probs: &Array2<f64>) -> Array2<f64> {
    let mut out = Array2::zeros(probs.dim());
    for (i, (p, dp)) in probs.rows().into_iter().zip(d_probs.rows()).enumerate() {
        let inner: f64 = p.dot(&dp);
        out.row_mut(i).assign(&(&p * &(&dp - inner)));
    }
    out
}

/// Shannon entropy in nats.
pub fn entropy(dist: ArrayView1<f64>) -> f64 {
    -dist.iter().filter(|&&p| p > 0.0).map(|p| p * p.ln()).sum::<f64>()
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(row: ArrayView1<f64>) -> usize {
    let mut arg = 0;
    for (i, &x) in row.iter().enumerate() {
        if x > row[arg] {
            arg = i;
        }
    }
    arg
}

pub fn one_hot(len: usize, hot: usize) -> Array1<f64> {
    let mut v = Array1::zeros(len);
    v[hot] = 1.0;
    v
}
