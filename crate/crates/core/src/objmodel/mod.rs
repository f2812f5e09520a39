//! Auxiliary object-representation objectives: the attentive contrastive
//! object-model, the OCN and COBRA baselines, and oracle features.

pub mod oracle;

use std::collections::hash_map::DefaultHasher;
use std::collections::VecDeque;
use std::hash::{Hash, Hasher};

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::agent::{attend, mlp, AttendMode, AttentionPolicy, Forward, NetConfig, ObsBatch, Switch};
use crate::sim::{ActionSpec, NUM_NAV};
use crate::tensor::{Graph, NodeId, ParamGroup, Result, Tensor, TensorError, NORM_EPS};
use crate::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Negatives per anchor.
    pub k: usize,
    pub tau: f64,
    /// Capacity of the FIFO negative pool.
    pub pool_cap: usize,
    pub tau_ocn: f64,
    pub beta_kl: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            k: 20,
            tau: 8.75e-5,
            pool_cap: 85,
            tau_ocn: 5e-5,
            beta_kl: 26.0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.k == 0 {
            return Err("k must be at least 1".into());
        }
        if !(self.tau > 0.0) || !(self.tau_ocn > 0.0) {
            return Err("temperatures must be positive".into());
        }
        if !(self.beta_kl >= 0.0) {
            return Err("beta_kl must be non-negative".into());
        }
        Ok(())
    }
}

/// `z^a = (z_chosen W^o) ⊙ (base W^b)` for `m` rows; `base` must be one-hot.
pub fn action_encode<T: Scalar>(
    g: &mut Graph<T>,
    p: &ParamGroup<T>,
    z_chosen: NodeId,
    base: NodeId,
) -> Result<NodeId> {
    let bv = g.value(base);
    for r in 0..bv.rows() {
        let row = bv.row(r);
        let ones = row.iter().filter(|&&v| v == T::one()).count();
        let zeros = row.iter().filter(|&&v| v == T::zero()).count();
        if ones != 1 || ones + zeros != row.len() {
            return Err(TensorError::Invalid(format!("action row {r} is not one-hot")));
        }
    }
    let wo = g.param(p, "model.wo")?;
    let wb = g.param(p, "model.wb")?;
    let a = g.matmul(z_chosen, wo)?;
    let b = g.matmul(base, wb)?;
    g.mul(a, b)
}

/// `m x NUM_NAV` one-hot rows of base actions.
pub fn base_one_hot<T: Scalar>(actions: &[ActionSpec]) -> Tensor<T> {
    let mut t = Tensor::zeros(&[actions.len(), NUM_NAV]);
    for (r, a) in actions.iter().enumerate() {
        t.set(r, a.base_index(), T::one());
    }
    t
}

/// `D = f_model([z, attention, z^a])`.
pub fn predict_next<T: Scalar>(
    g: &mut Graph<T>,
    p: &ParamGroup<T>,
    z: NodeId,
    att: NodeId,
    za: NodeId,
) -> Result<NodeId> {
    let x = g.concat_cols(&[z, att, za])?;
    mlp(g, p, "model", x, 2)
}

fn cosine<T: Scalar>(a: &[T], b: &[T]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x.f64() * y.f64()).sum();
    let na = a.iter().map(|x| x.f64().powi(2)).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x.f64().powi(2)).sum::<f64>().sqrt();
    dot / (na.max(NORM_EPS) * nb.max(NORM_EPS))
}

/// Row of `candidates` with the highest cosine similarity to `query`;
/// lowest row on ties.
pub fn match_positive<T: Scalar>(query: &[T], candidates: &Tensor<T>) -> usize {
    match_in_rows(query, candidates, 0, candidates.rows())
}

fn match_in_rows<T: Scalar>(query: &[T], m: &Tensor<T>, start: usize, len: usize) -> usize {
    let mut best = 0;
    let mut best_cos = f64::NEG_INFINITY;
    for j in 0..len {
        let c = cosine(query, m.row(start + j));
        if c > best_cos {
            best = j;
            best_cos = c;
        }
    }
    best
}

fn nearest_l2<T: Scalar>(query: &[T], m: &Tensor<T>, start: usize, len: usize) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for j in 0..len {
        let d: f64 = query
            .iter()
            .zip(m.row(start + j))
            .map(|(a, b)| (a.f64() - b.f64()).powi(2))
            .sum();
        if d < best_d {
            best = j;
            best_d = d;
        }
    }
    best
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
#[error("no negative candidates left after exclusion")]
pub struct EmptyPool;

/// Draws `k` negatives: uniformly without replacement from `primary`,
/// topped up from `pool` when `primary` is too small, and with replacement
/// (logged) when both together still fall short.
pub fn sample_negatives(
    primary: &[usize],
    pool: &[usize],
    k: usize,
    rng: &mut impl Rng,
) -> std::result::Result<Vec<usize>, EmptyPool> {
    if primary.len() >= k {
        return Ok(index::sample(rng, primary.len(), k)
            .into_iter()
            .map(|i| primary[i])
            .collect());
    }
    let mut out = primary.to_vec();
    let need = k - out.len();
    if pool.len() >= need {
        out.extend(index::sample(rng, pool.len(), need).into_iter().map(|i| pool[i]));
        return Ok(out);
    }
    out.extend_from_slice(pool);
    if out.is_empty() {
        return Err(EmptyPool);
    }
    log::warn!(
        "only {} negative candidates for k = {k}; sampling with replacement",
        out.len()
    );
    let have = out.len();
    while out.len() < k {
        let i = rng.gen_range(0..have);
        out.push(out[i]);
    }
    Ok(out)
}

/// FIFO of recent detached encodings used to top up negatives.
#[derive(Clone, Debug)]
pub struct NegativePool<T> {
    cap: usize,
    rows: VecDeque<Vec<T>>,
}

impl<T: Scalar> NegativePool<T> {
    pub fn new(cap: usize) -> Self {
        Self {
            cap,
            rows: VecDeque::with_capacity(cap),
        }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn push(&mut self, row: &[T]) {
        if self.cap == 0 {
            return;
        }
        if self.rows.len() == self.cap {
            self.rows.pop_front();
        }
        self.rows.push_back(row.to_vec());
    }

    /// Pushes the visible-object rows of a forward pass.
    pub fn push_forward(&mut self, g: &Graph<T>, fwd: &Forward) {
        let z = g.value(fwd.z);
        for s in &fwd.rows {
            for r in s.start..s.start + s.real {
                self.push(z.row(r));
            }
        }
    }

    fn as_tensor(&self) -> Option<Tensor<T>> {
        let d = self.rows.front()?.len();
        let data = self.rows.iter().flatten().copied().collect();
        Tensor::matrix(self.rows.len(), d, data).ok()
    }
}

fn row_class<T: Scalar>(row: &[T]) -> u64 {
    let mut h = DefaultHasher::new();
    for v in row {
        v.f64().to_bits().hash(&mut h);
    }
    h.finish()
}

/// Attention used inside the object-model: shared with the policy when it
/// already computes full attention, zeros when the ablation switches it off.
fn model_attention<T: Scalar>(
    g: &mut Graph<T>,
    p: &ParamGroup<T>,
    net: &NetConfig,
    fwd: &Forward,
) -> Result<NodeId> {
    if net.attention_model == Switch::Off {
        let shape = g.value(fwd.z).shape().to_vec();
        return Ok(g.input(Tensor::zeros(&shape)));
    }
    if net.attention_policy == AttentionPolicy::Full {
        return Ok(fwd.att);
    }
    let mut parts = Vec::with_capacity(fwd.rows.len());
    for s in &fwd.rows {
        let zb = g.slice_rows(fwd.z, s.start, s.len)?;
        parts.push(attend(g, p, zb, zb, AttendMode::Object)?.0);
    }
    if parts.len() == 1 {
        Ok(parts[0])
    } else {
        g.stack_rows(&parts)
    }
}

/// Object-model predictions for every visible object at `t` whose sample
/// also sees something at `t+1`.
#[derive(Clone, Debug)]
pub struct Predictions {
    /// `m x d_o` predicted next-step encodings.
    pub d: NodeId,
    /// z-row of each anchor in the `t` forward pass.
    pub anchors: Vec<usize>,
    /// Sample index of each anchor.
    pub owner: Vec<usize>,
}

pub fn model_predictions<T: Scalar>(
    g: &mut Graph<T>,
    p: &ParamGroup<T>,
    net: &NetConfig,
    fwd_t: &Forward,
    fwd_n: &Forward,
    actions: &[ActionSpec],
) -> Result<Option<Predictions>> {
    let batch = fwd_t.rows.len();
    if actions.len() != batch || fwd_n.rows.len() != batch {
        return Err(TensorError::Invalid("model loss batch sizes disagree".into()));
    }
    let r_t = g.shape(fwd_t.z).0;
    let mut anchors = Vec::new();
    let mut chosen = Vec::new();
    let mut anchor_actions = Vec::new();
    let mut owner = Vec::new();
    for b in 0..batch {
        let (st, sn) = (fwd_t.rows[b], fwd_n.rows[b]);
        if st.real == 0 || sn.real == 0 {
            continue;
        }
        let c = match actions[b] {
            ActionSpec::Interact(_, patch) if patch < st.real => st.start + patch,
            ActionSpec::Interact(_, patch) => {
                return Err(TensorError::OutOfRange {
                    op: "model_predictions",
                    index: patch,
                    bound: st.real,
                })
            }
            ActionSpec::Navigate(_) => r_t,
        };
        for r in st.start..st.start + st.real {
            anchors.push(r);
            chosen.push(c);
            anchor_actions.push(actions[b]);
            owner.push(b);
        }
    }
    if anchors.is_empty() {
        return Ok(None);
    }
    let att = model_attention(g, p, net, fwd_t)?;
    let z_and_null = g.stack_rows(&[fwd_t.z, fwd_t.null])?;
    let zc = g.gather_rows(z_and_null, &chosen)?;
    let base = g.input(base_one_hot(&anchor_actions));
    let za = action_encode(g, p, zc, base)?;
    let z_anchor = g.gather_rows(fwd_t.z, &anchors)?;
    let att_anchor = g.gather_rows(att, &anchors)?;
    let d = predict_next(g, p, z_anchor, att_anchor, za)?;
    Ok(Some(Predictions { d, anchors, owner }))
}

/// Contrastive object-model loss. Each visible object at `t` predicts its
/// next-step encoding (matched by cosine similarity) against `k` negatives
/// drawn from the batch's encodings at `t` and `t+1`, topped up from `pool`.
/// Negatives never share the positive's exact value. Summed over anchors,
/// averaged over the batch.
#[allow(clippy::too_many_arguments)]
pub fn attentive_model_loss<T: Scalar>(
    g: &mut Graph<T>,
    p: &ParamGroup<T>,
    net: &NetConfig,
    mc: &ModelConfig,
    fwd_t: &Forward,
    fwd_n: &Forward,
    actions: &[ActionSpec],
    pool: &NegativePool<T>,
    rng: &mut impl Rng,
) -> Result<NodeId> {
    let batch = fwd_t.rows.len();
    let Some(Predictions { d, anchors, owner }) =
        model_predictions(g, p, net, fwd_t, fwd_n, actions)?
    else {
        return Ok(g.input(Tensor::scalar(T::zero())));
    };
    let r_t = g.shape(fwd_t.z).0;
    let r_n = g.shape(fwd_n.z).0;

    let pool_t = pool.as_tensor();
    let mut parts = vec![fwd_t.z, fwd_n.z];
    if let Some(t) = pool_t.clone() {
        parts.push(g.input(t));
    }
    let cands = g.stack_rows(&parts)?;
    let cv = g.value(cands).clone();
    let classes: Vec<u64> = (0..cv.rows()).map(|r| row_class(cv.row(r))).collect();
    let mut batch_rows = Vec::new();
    for s in &fwd_t.rows {
        batch_rows.extend(s.start..s.start + s.real);
    }
    for s in &fwd_n.rows {
        batch_rows.extend(r_t + s.start..r_t + s.start + s.real);
    }
    let pool_rows: Vec<usize> = (r_t + r_n..cv.rows()).collect();

    let zn = g.value(fwd_n.z).clone();
    let zt = g.value(fwd_t.z).clone();
    let k = mc.k;
    let mut idx = Vec::with_capacity(anchors.len() * (k + 1));
    let mut primary = Vec::with_capacity(batch_rows.len());
    let mut extra = Vec::with_capacity(pool_rows.len());
    let mut kept = Vec::with_capacity(anchors.len());
    for (i, (&a, &b)) in anchors.iter().zip(&owner).enumerate() {
        let sn = fwd_n.rows[b];
        let pos = r_t + sn.start + match_in_rows(zt.row(a), &zn, sn.start, sn.real);
        let pc = classes[pos];
        primary.clear();
        primary.extend(batch_rows.iter().copied().filter(|&r| classes[r] != pc));
        extra.clear();
        extra.extend(pool_rows.iter().copied().filter(|&r| classes[r] != pc));
        let Ok(negs) = sample_negatives(&primary, &extra, k, rng) else {
            // every candidate equals the positive: no contrast to learn from
            log::debug!("anchor {a}: no distinct negatives, skipped");
            continue;
        };
        kept.push(i);
        idx.push(pos);
        idx.extend(negs);
    }
    let m = kept.len();
    if m == 0 {
        return Ok(g.input(Tensor::scalar(T::zero())));
    }
    let picked = g.gather_rows(cands, &idx)?;
    let rep: Vec<usize> = kept.iter().flat_map(|&i| std::iter::repeat(i).take(k + 1)).collect();
    let d_rep = g.gather_rows(d, &rep)?;
    let dots = g.row_dot(d_rep, picked)?;
    let logits = g.reshape(dots, m, k + 1)?;
    let logits = g.scale(logits, T::c(1.0 / mc.tau));
    let lsm = g.log_softmax_rows(logits);
    let first: Vec<(usize, usize)> = (0..m).map(|i| (i, 0)).collect();
    let pos = g.select_elems(lsm, &first)?;
    let total = g.sum(pos);
    Ok(g.scale(total, T::c(-1.0 / batch as f64)))
}

/// `-log softmax_0(logits)` for one row of logits, computed stably.
pub fn contrastive_term(logits: &[f64]) -> f64 {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|l| (l - m).exp()).sum::<f64>().ln();
    lse - logits[0]
}

/// OCN n-tuplet loss: each object at `t` must pick out its L2-nearest
/// next-step encoding among all next-step encodings of the same sample.
pub fn ocn_loss<T: Scalar>(
    g: &mut Graph<T>,
    tau: f64,
    fwd_t: &Forward,
    fwd_n: &Forward,
) -> Result<NodeId> {
    let batch = fwd_t.rows.len();
    let zt = g.value(fwd_t.z).clone();
    let zn = g.value(fwd_n.z).clone();
    let mut terms = Vec::new();
    for b in 0..batch {
        let (st, sn) = (fwd_t.rows[b], fwd_n.rows[b]);
        if st.real == 0 || sn.real < 2 {
            continue;
        }
        let a = g.slice_rows(fwd_t.z, st.start, st.real)?;
        let c = g.slice_rows(fwd_n.z, sn.start, sn.real)?;
        let ct = g.transpose(c);
        let logits = g.matmul(a, ct)?;
        let logits = g.scale(logits, T::c(1.0 / tau));
        let lsm = g.log_softmax_rows(logits);
        let at: Vec<(usize, usize)> = (0..st.real)
            .map(|i| (i, nearest_l2(zt.row(st.start + i), &zn, sn.start, sn.real)))
            .collect();
        let sel = g.select_elems(lsm, &at)?;
        terms.push(g.sum(sel));
    }
    if terms.is_empty() {
        return Ok(g.input(Tensor::scalar(T::zero())));
    }
    let all = if terms.len() == 1 {
        terms[0]
    } else {
        g.stack_rows(&terms)?
    };
    let total = g.sum(all);
    Ok(g.scale(total, T::c(-1.0 / batch as f64)))
}

/// `KL(N(mu, sigma^2) || N(0, I)) = 1/2 Σ (mu² + sigma² − 1 − ln sigma²)`.
pub fn gaussian_kl(mu: &[f64], log_std: &[f64]) -> f64 {
    mu.iter()
        .zip(log_std)
        .map(|(m, s)| 0.5 * (m * m + (2.0 * s).exp() - 1.0 - 2.0 * s))
        .sum()
}

/// Standard normal draw (Box–Muller).
pub fn standard_normal(rng: &mut impl Rng) -> f64 {
    let u1: f64 = 1.0 - rng.gen::<f64>();
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 2.0;

/// Row of the stacked object input that backs z-row `r` of `fwd`.
fn input_rows(fwd: &Forward) -> Vec<Option<usize>> {
    let total = fwd.rows.last().map(|s| s.start + s.len).unwrap_or(0);
    let mut out = vec![None; total];
    let mut k = 0;
    for s in &fwd.rows {
        for r in s.start..s.start + s.real {
            out[r] = Some(k);
            k += 1;
        }
    }
    out
}

/// COBRA baseline: a variational patch autoencoder over object encodings
/// plus an action-free latent predictor decoded against the matched
/// next-step patch.
#[allow(clippy::too_many_arguments)]
pub fn cobra_loss<T: Scalar>(
    g: &mut Graph<T>,
    p: &ParamGroup<T>,
    beta_kl: f64,
    fwd_t: &Forward,
    fwd_n: &Forward,
    batch_t: &ObsBatch<T>,
    batch_n: &ObsBatch<T>,
    rng: &mut impl Rng,
) -> Result<NodeId> {
    let batch = fwd_t.rows.len();
    let (Some(xt), xn) = (&batch_t.objects, &batch_n.objects) else {
        return Ok(g.input(Tensor::scalar(T::zero())));
    };
    let map_t = input_rows(fwd_t);
    let map_n = input_rows(fwd_n);
    let zt = g.value(fwd_t.z).clone();
    let zn = g.value(fwd_n.z).clone();

    let mut anchors = Vec::new();
    let mut targets = Vec::new();
    let mut pred_rows = Vec::new();
    let mut pred_targets = Vec::new();
    for b in 0..batch {
        let (st, sn) = (fwd_t.rows[b], fwd_n.rows[b]);
        for r in st.start..st.start + st.real {
            let i = anchors.len();
            anchors.push(r);
            targets.extend_from_slice(xt.row(map_t[r].expect("real row")));
            if let (true, Some(xn)) = (sn.real > 0, xn) {
                let j = sn.start + match_in_rows(zt.row(r), &zn, sn.start, sn.real);
                pred_rows.push(i);
                pred_targets.extend_from_slice(xn.row(map_n[j].expect("real row")));
            }
        }
    }
    if anchors.is_empty() {
        return Ok(g.input(Tensor::scalar(T::zero())));
    }
    let m = anchors.len();
    let d_o = zt.cols();
    let dim = xt.cols();
    let mu = g.gather_rows(fwd_t.z, &anchors)?;
    let w = g.param(p, "cobra.logstd.w")?;
    let bias = g.param(p, "cobra.logstd.b")?;
    let ls = g.linear(mu, w, bias)?;
    let ls = g.clamp(ls, T::c(LOG_STD_MIN), T::c(LOG_STD_MAX));
    let sigma = g.exp(ls);
    let noise = (0..m * d_o).map(|_| T::c(standard_normal(rng))).collect();
    let eps = g.input(Tensor::matrix(m, d_o, noise)?);
    let spread = g.mul(sigma, eps)?;
    let z = g.add(mu, spread)?;

    let recon = mlp(g, p, "cobra.recon", z, 2)?;
    let target = g.input(Tensor::matrix(m, dim, targets)?);
    let mut loss = g.squared_error(recon, target)?;

    if !pred_rows.is_empty() {
        let zp = g.gather_rows(z, &pred_rows)?;
        let next = mlp(g, p, "cobra.pred", zp, 2)?;
        let decoded = mlp(g, p, "cobra.recon", next, 2)?;
        let tn = g.input(Tensor::matrix(pred_rows.len(), dim, pred_targets)?);
        let pred = g.squared_error(decoded, tn)?;
        loss = g.add(loss, pred)?;
    }

    // 1/2 Σ (mu² + sigma² − 1 − 2 log sigma)
    let mu2 = g.mul(mu, mu)?;
    let ls2 = g.scale(ls, T::c(2.0));
    let var = g.exp(ls2);
    let a = g.add(mu2, var)?;
    let a = g.sub(a, ls2)?;
    let a = g.add_scalar(a, -T::one());
    let kl = g.sum(a);
    let kl = g.scale(kl, T::c(0.5 * beta_kl));
    let loss = g.add(loss, kl)?;
    Ok(g.scale(loss, T::c(1.0 / batch as f64)))
}
