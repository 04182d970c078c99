//! Momentum (EMA) key branch, the FIFO key bank and the InfoNCE loss.

use std::collections::VecDeque;

use masa_autograd::{Graph, ParamStore, Tensor, Var};

use crate::error::{Error, Result};

/// Prefixes shared by the online store and the momentum store.
pub const SHARED_PREFIXES: [&str; 2] = ["embed.", "encoder."];

/// Checkpoint prefix for the momentum copies of the shared prefixes.
pub const MOMENTUM_PREFIX: &str = "momentum.";

const UNIT_TOLERANCE: f64 = 1e-6;

fn key_path(query_path: &str) -> Option<String> {
    if let Some(rest) = query_path.strip_prefix("proj_q.") {
        return Some(format!("proj_k.{rest}"));
    }
    SHARED_PREFIXES
        .iter()
        .any(|p| query_path.starts_with(p))
        .then(|| query_path.to_string())
}

fn query_path(key_path: &str) -> String {
    match key_path.strip_prefix("proj_k.") {
        Some(rest) => format!("proj_q.{rest}"),
        None => key_path.to_string(),
    }
}

/// Online parameters plus the EMA-tracked key branch.
///
/// `key` holds `embed.*`, `encoder.*` and `proj_k.*`; each key entry tracks the
/// same path in `query`, with `proj_k` following `proj_q`.
#[derive(Clone, Debug)]
pub struct MomentumPair {
    pub query: ParamStore,
    pub key: ParamStore,
    pub mu: f64,
}

impl MomentumPair {
    /// Key branch initialized as a verbatim copy of the query branch.
    pub fn new(query: ParamStore, mu: f64) -> Result<Self> {
        check_mu(mu)?;
        let mut key = ParamStore::new();
        for (path, p) in query.iter() {
            if let Some(k) = key_path(path) {
                key.insert(k, p.value.clone())?;
            }
        }
        if key.is_empty() {
            return Err(Error::invalid("query store has no embed/encoder/proj_q parameters"));
        }
        Ok(Self { query, key, mu })
    }

    /// `theta_k <- mu * theta_k + (1 - mu) * theta_q` for every key entry.
    pub fn ema_update(&mut self) -> Result<()> {
        let tracked = self.query.paths().filter(|p| key_path(p).is_some()).count();
        if tracked != self.key.len() {
            return Err(Error::Shape(format!(
                "key store has {} entries, query tracks {tracked}",
                self.key.len()
            )));
        }
        let mu = self.mu;
        for (path, k) in self.key.iter_mut() {
            let q = self
                .query
                .get(&query_path(path))
                .ok_or_else(|| Error::Shape(format!("no query counterpart for `{path}`")))?;
            if q.value.shape() != k.value.shape() {
                return Err(Error::Shape(format!("`{path}` differs in shape between branches")));
            }
            for (kv, &qv) in k.value.data_mut().iter_mut().zip(q.value.data()) {
                *kv = mu * *kv + (1.0 - mu) * qv;
            }
        }
        Ok(())
    }

    /// Largest absolute gap between a key entry and its query counterpart.
    pub fn max_gap(&self) -> f64 {
        self.key
            .iter()
            .filter_map(|(path, k)| {
                self.query
                    .get(&query_path(path))
                    .map(|q| k.value.max_abs_diff(&q.value))
            })
            .fold(0.0, f64::max)
    }

    /// Key entries renamed for checkpoints: `momentum.embed.*`,
    /// `momentum.encoder.*` and `proj_k.*`.
    pub fn key_for_checkpoint(&self) -> Result<ParamStore> {
        Ok(self.key.renamed(|p| {
            if p.starts_with("proj_k.") {
                p.to_string()
            } else {
                format!("{MOMENTUM_PREFIX}{p}")
            }
        })?)
    }

    /// Splits a checkpoint store back into online and key parameters.
    pub fn from_checkpoint(store: &ParamStore, mu: f64) -> Result<Self> {
        check_mu(mu)?;
        let (mut query, mut key) = (ParamStore::new(), ParamStore::new());
        for (path, p) in store.iter() {
            if let Some(rest) = path.strip_prefix(MOMENTUM_PREFIX) {
                key.insert(rest, p.value.clone())?;
            } else if path.starts_with("proj_k.") {
                key.insert(path, p.value.clone())?;
            } else {
                query.insert(path, p.value.clone())?;
            }
        }
        let pair = Self { query, key, mu };
        let tracked = pair.query.paths().filter(|p| key_path(p).is_some()).count();
        if tracked != pair.key.len() || pair.key.paths().any(|k| !pair.query.contains(&query_path(k))) {
            return Err(Error::Shape("checkpoint key branch does not mirror the query branch".into()));
        }
        Ok(pair)
    }
}

fn check_mu(mu: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&mu) {
        return Err(Error::invalid(format!("momentum {mu} outside [0, 1]")));
    }
    Ok(())
}

fn check_unit(v: &[f64], what: &str) -> Result<()> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if (n - 1.0).abs() > UNIT_TOLERANCE || !n.is_finite() {
        return Err(Error::invalid(format!("{what} has norm {n}, expected 1")));
    }
    Ok(())
}

/// Fixed-capacity FIFO of unit key vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct MemoryBank {
    capacity: usize,
    dim: usize,
    keys: VecDeque<Vec<f64>>,
}

impl MemoryBank {
    pub fn new(capacity: usize, dim: usize) -> Result<Self> {
        if capacity == 0 || dim == 0 {
            return Err(Error::invalid("memory bank needs positive capacity and width"));
        }
        Ok(Self {
            capacity,
            dim,
            keys: VecDeque::with_capacity(capacity),
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    /// Stored keys, oldest first.
    pub fn keys(&self) -> impl Iterator<Item = &[f64]> {
        self.keys.iter().map(Vec::as_slice)
    }

    /// Appends `batch` in order, evicting the oldest keys beyond capacity.
    /// The whole batch is validated before anything is stored.
    pub fn enqueue(&mut self, batch: &[Vec<f64>]) -> Result<()> {
        if batch.len() > self.capacity {
            return Err(Error::invalid(format!(
                "batch of {} keys exceeds bank capacity {}",
                batch.len(),
                self.capacity
            )));
        }
        for k in batch {
            if k.len() != self.dim {
                return Err(Error::Shape(format!("key of width {} in a bank of width {}", k.len(), self.dim)));
            }
            check_unit(k, "key")?;
        }
        for k in batch {
            if self.keys.len() == self.capacity {
                self.keys.pop_front();
            }
            self.keys.push_back(k.clone());
        }
        Ok(())
    }
}

/// InfoNCE of the query row `q` (`[1, d]`, on the graph) against the detached
/// positive `k_pos` and the bank's keys as negatives, at temperature `tau`.
/// An empty bank gives a constant zero.
pub fn info_nce(g: &mut Graph, q: Var, k_pos: &[f64], bank: &MemoryBank, tau: f64) -> Result<Var> {
    if !(tau > 0.0) {
        return Err(Error::invalid(format!("temperature {tau} must be positive")));
    }
    let d = k_pos.len();
    if g.shape(q) != [1, d] || d != bank.dim() {
        return Err(Error::Shape(format!(
            "query {:?}, positive width {d}, bank width {}",
            g.shape(q),
            bank.dim()
        )));
    }
    check_unit(g.value(q).data(), "query")?;
    check_unit(k_pos, "positive key")?;
    if bank.is_empty() {
        return Ok(g.constant(Tensor::scalar(0.0)));
    }
    // keys as columns: [d, 1 + n]
    let n = 1 + bank.len();
    let mut kt = vec![0.0; d * n];
    for (c, key) in std::iter::once(k_pos).chain(bank.keys()).enumerate() {
        for (r, &v) in key.iter().enumerate() {
            kt[r * n + c] = v;
        }
    }
    let keys = g.constant(Tensor::matrix(d, n, kt)?);
    let logits = g.matmul(q, keys)?;
    let logits = g.scale(logits, 1.0 / tau);
    let lp = g.log_softmax(logits);
    let first = g.slice_cols(lp, 0, 1)?;
    let s = g.sum(first);
    Ok(g.scale(s, -1.0))
}

/// Plain-value InfoNCE with max-logit subtraction.
pub fn info_nce_value(q: &[f64], k_pos: &[f64], negatives: &[&[f64]], tau: f64) -> f64 {
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / tau;
    let pos = dot(q, k_pos);
    let logits: Vec<f64> = negatives.iter().map(|k| dot(q, k)).collect();
    let max = logits.iter().copied().fold(pos, f64::max);
    let z: f64 = (pos - max).exp() + logits.iter().map(|l| (l - max).exp()).sum::<f64>();
    -(pos - max - z.ln())
}
