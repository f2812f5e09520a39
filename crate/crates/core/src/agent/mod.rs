//! Attentive object Q-network: per-object and context encoders, inter-object
//! attention, and separate interaction / navigation heads over the
//! variable-size action set.

use std::str::FromStr;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::objmodel::oracle::{oracle_objects, write_features, OracleObject, ORACLE_DIM};
use crate::sim::{
    ActionSpec, ObservationBundle, SimError, WorldState, EGO, NUM_INTERACTIONS, NUM_NAV, PATCH,
};
use crate::tensor::{Graph, NodeId, ParamGroup, Result, Tensor, TensorError};
use crate::Scalar;

pub const PATCH_DIM: usize = PATCH * PATCH;
pub const EGO_DIM: usize = EGO * EGO;
pub const LOC_DIM: usize = 6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttentionPolicy {
    Full,
    /// Unweighted mean of the object rows.
    Average,
    /// Zeros in place of the attention output.
    None,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Switch {
    On,
    Off,
}

/// Auxiliary objective, or the oracle input that replaces patch encoding.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AuxMode {
    None,
    Load,
    Ocn,
    Cobra,
    Oracle,
    OracleCategoryOnly,
}

impl AuxMode {
    pub const ALL: [AuxMode; 6] = [
        AuxMode::None,
        AuxMode::Load,
        AuxMode::Ocn,
        AuxMode::Cobra,
        AuxMode::Oracle,
        AuxMode::OracleCategoryOnly,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AuxMode::None => "none",
            AuxMode::Load => "load",
            AuxMode::Ocn => "ocn",
            AuxMode::Cobra => "cobra",
            AuxMode::Oracle => "oracle",
            AuxMode::OracleCategoryOnly => "oracle_category_only",
        }
    }

    pub fn uses_oracle(self) -> bool {
        matches!(self, AuxMode::Oracle | AuxMode::OracleCategoryOnly)
    }
}

fn parse_named<E: Copy>(s: &str, all: &[E], name: impl Fn(E) -> &'static str) -> Option<E> {
    all.iter().copied().find(|&e| name(e) == s)
}

impl FromStr for AuxMode {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        parse_named(s, &Self::ALL, Self::name).ok_or_else(|| {
            let names: Vec<_> = Self::ALL.iter().map(|a| a.name()).collect();
            format!("unknown aux mode `{s}` (expected one of {})", names.join(", "))
        })
    }
}

impl AttentionPolicy {
    pub const ALL: [AttentionPolicy; 3] = [Self::Full, Self::Average, Self::None];

    pub fn name(self) -> &'static str {
        match self {
            Self::Full => "full",
            Self::Average => "average",
            Self::None => "none",
        }
    }
}

impl FromStr for AttentionPolicy {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        parse_named(s, &Self::ALL, Self::name)
            .ok_or_else(|| format!("unknown attention policy `{s}` (expected full, average, none)"))
    }
}

impl FromStr for Switch {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "on" => Ok(Switch::On),
            "off" => Ok(Switch::Off),
            _ => Err(format!("expected on or off, got `{s}`")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetConfig {
    pub d_o: usize,
    pub d_ego: usize,
    pub d_loc: usize,
    pub d_k: usize,
    pub hidden: usize,
    pub d_a: usize,
    pub attention_policy: AttentionPolicy,
    pub attention_model: Switch,
    pub aux: AuxMode,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            d_o: 64,
            d_ego: 64,
            d_loc: 32,
            d_k: 16,
            hidden: 128,
            d_a: 32,
            attention_policy: AttentionPolicy::Full,
            attention_model: Switch::On,
            aux: AuxMode::Load,
        }
    }
}

impl NetConfig {
    pub fn d_ctx(&self) -> usize {
        self.d_ego + self.d_loc
    }

    pub fn object_input_dim(&self) -> usize {
        if self.aux.uses_oracle() {
            ORACLE_DIM
        } else {
            PATCH_DIM
        }
    }

    pub fn validate(&self) -> std::result::Result<(), String> {
        for (name, v) in [
            ("d_o", self.d_o),
            ("d_ego", self.d_ego),
            ("d_loc", self.d_loc),
            ("d_k", self.d_k),
            ("hidden", self.hidden),
            ("d_a", self.d_a),
        ] {
            if v == 0 {
                return Err(format!("{name} must be positive"));
            }
        }
        Ok(())
    }
}

fn insert_matrix<T: Scalar>(
    p: &mut ParamGroup<T>,
    name: &str,
    fan_in: usize,
    fan_out: usize,
    rng: &mut impl Rng,
) {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let w = (0..fan_in * fan_out)
        .map(|_| T::c(rng.gen_range(-limit..limit)))
        .collect();
    p.insert(name, Tensor::matrix(fan_in, fan_out, w).expect("positive dims"));
}

fn insert_mlp<T: Scalar>(p: &mut ParamGroup<T>, prefix: &str, dims: &[usize], rng: &mut impl Rng) {
    for (i, w) in dims.windows(2).enumerate() {
        p.insert_dense(&format!("{prefix}.l{i}"), w[0], w[1], rng);
    }
}

/// Fresh parameters for the Q-network plus whatever the auxiliary mode needs.
pub fn init_params<T: Scalar>(cfg: &NetConfig, rng: &mut impl Rng) -> ParamGroup<T> {
    let h = cfg.hidden;
    let (d_o, dc) = (cfg.d_o, cfg.d_ctx());
    let mut p = ParamGroup::new();
    if cfg.aux.uses_oracle() {
        p.insert_dense("oracle.embed", ORACLE_DIM, d_o, rng);
    } else {
        insert_mlp(&mut p, "enc_o", &[PATCH_DIM, h, d_o], rng);
    }
    insert_mlp(&mut p, "enc_ego", &[EGO_DIM, h, cfg.d_ego], rng);
    insert_mlp(&mut p, "enc_loc", &[LOC_DIM, 32, cfg.d_loc], rng);
    insert_matrix(&mut p, "att.wq_o", d_o, cfg.d_k, rng);
    insert_matrix(&mut p, "att.wk", d_o, cfg.d_k, rng);
    insert_matrix(&mut p, "att.wq_ctx", dc, cfg.d_k, rng);
    insert_mlp(&mut p, "q_int", &[2 * d_o + dc, h, h, NUM_INTERACTIONS], rng);
    insert_mlp(&mut p, "q_nav", &[dc + d_o, h, h, NUM_NAV], rng);
    let null = (0..d_o).map(|_| T::c(rng.gen_range(-0.1..0.1))).collect();
    p.insert("null_obj", Tensor::matrix(1, d_o, null).expect("d_o > 0"));
    match cfg.aux {
        AuxMode::Load => {
            insert_mlp(&mut p, "model", &[2 * d_o + cfg.d_a, h, d_o], rng);
            insert_matrix(&mut p, "model.wo", d_o, cfg.d_a, rng);
            insert_matrix(&mut p, "model.wb", NUM_NAV, cfg.d_a, rng);
        }
        AuxMode::Cobra => {
            p.insert_dense("cobra.logstd", d_o, d_o, rng);
            insert_mlp(&mut p, "cobra.recon", &[d_o, h, PATCH_DIM], rng);
            insert_mlp(&mut p, "cobra.pred", &[d_o, h, d_o], rng);
        }
        _ => {}
    }
    p
}

/// Checks that a loaded parameter set has exactly the tensors and shapes
/// `cfg` would create.
pub fn check_compatible<T: Scalar>(params: &ParamGroup<T>, cfg: &NetConfig) -> std::result::Result<(), String> {
    let mut rng = rand::rngs::mock::StepRng::new(0, 1);
    let want: ParamGroup<f64> = init_params(cfg, &mut rng);
    for (name, e) in want.iter() {
        match params.get(name) {
            None => return Err(format!("checkpoint lacks parameter `{name}`")),
            Some(t) if t.shape() != e.value.shape() => {
                return Err(format!(
                    "parameter `{name}` has shape {:?}, configuration expects {:?}",
                    t.shape(),
                    e.value.shape()
                ))
            }
            _ => {}
        }
    }
    if let Some(extra) = params.names().find(|n| !want.contains(n)) {
        return Err(format!("checkpoint has unexpected parameter `{extra}`"));
    }
    Ok(())
}

/// Dense stack `{prefix}.l0 .. l{layers-1}` with leaky rectifiers between layers.
pub fn mlp<T: Scalar>(
    g: &mut Graph<T>,
    p: &ParamGroup<T>,
    prefix: &str,
    x: NodeId,
    layers: usize,
) -> Result<NodeId> {
    let mut h = x;
    for i in 0..layers {
        let w = g.param(p, &format!("{prefix}.l{i}.w"))?;
        let b = g.param(p, &format!("{prefix}.l{i}.b"))?;
        h = g.linear(h, w, b)?;
        if i + 1 < layers {
            h = g.leaky_relu(h);
        }
    }
    Ok(h)
}

/// One observation as the network sees it. Oracle runs carry ground-truth
/// rows aligned with the patches.
#[derive(Clone, Debug, PartialEq)]
pub struct Percept {
    pub obs: ObservationBundle,
    pub oracle: Option<Arc<[OracleObject]>>,
}

impl Percept {
    pub fn new(
        world: &WorldState,
        obs: ObservationBundle,
        aux: AuxMode,
    ) -> std::result::Result<Self, SimError> {
        let oracle = if aux.uses_oracle() {
            Some(oracle_objects(world, &obs.patch_ids)?.into())
        } else {
            None
        };
        Ok(Self { obs, oracle })
    }

    pub fn num_objects(&self) -> usize {
        self.obs.num_patches()
    }
}

/// Network inputs for a batch of percepts, objects stacked sample by sample.
#[derive(Clone, Debug)]
pub struct ObsBatch<T> {
    /// `N x input_dim`, absent when no sample has a visible object.
    pub objects: Option<Tensor<T>>,
    pub counts: Vec<usize>,
    pub ego: Tensor<T>,
    pub loc: Tensor<T>,
}

impl<T: Scalar> ObsBatch<T> {
    pub fn new(percepts: &[&Percept], cfg: &NetConfig) -> Result<Self> {
        if percepts.is_empty() {
            return Err(TensorError::Invalid("empty observation batch".into()));
        }
        let dim = cfg.object_input_dim();
        let counts: Vec<usize> = percepts.iter().map(|p| p.num_objects()).collect();
        let total: usize = counts.iter().sum();
        let objects = if total == 0 {
            None
        } else {
            let mut data = Vec::with_capacity(total * dim);
            let mut row = vec![0.0; ORACLE_DIM];
            for p in percepts {
                match (&p.oracle, cfg.aux.uses_oracle()) {
                    (_, false) => {
                        for patch in &p.obs.patches {
                            data.extend(patch.data().iter().map(|&v| T::c(v)));
                        }
                    }
                    (Some(rows), true) => {
                        let cat_only = cfg.aux == AuxMode::OracleCategoryOnly;
                        for o in rows.iter() {
                            write_features(o, cat_only, &mut row);
                            data.extend(row.iter().map(|&v| T::c(v)));
                        }
                    }
                    (None, true) => {
                        return Err(TensorError::Invalid(
                            "oracle input requested but percept has no oracle rows".into(),
                        ))
                    }
                }
            }
            Some(Tensor::matrix(total, dim, data)?)
        };
        let b = percepts.len();
        let ego = percepts
            .iter()
            .flat_map(|p| p.obs.ego.data().iter().map(|&v| T::c(v)))
            .collect();
        let loc = percepts
            .iter()
            .flat_map(|p| p.obs.loc.iter().map(|&v| T::c(v)))
            .collect();
        Ok(Self {
            objects,
            counts,
            ego: Tensor::matrix(b, EGO_DIM, ego)?,
            loc: Tensor::matrix(b, LOC_DIM, loc)?,
        })
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }
}

/// Object rows of one sample inside the stacked matrices of a [`Forward`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RowSpan {
    pub start: usize,
    /// Rows used for attention: `real`, or 1 for the null object.
    pub len: usize,
    /// Visible objects, i.e. rows that carry interaction actions.
    pub real: usize,
}

/// Graph nodes produced by [`forward`].
#[derive(Clone, Debug)]
pub struct Forward {
    /// `R x d_o` object encodings, with a null row for samples seeing nothing.
    pub z: NodeId,
    /// `R x d_o` attention output used by the interaction head.
    pub att: NodeId,
    /// `B x d_ctx` context encodings.
    pub zk: NodeId,
    /// `R x 8`.
    pub q_int: NodeId,
    /// `B x 8`.
    pub q_nav: NodeId,
    pub null: NodeId,
    pub rows: Vec<RowSpan>,
}

/// Encodes a row-stacked object input (`n x input_dim`) to `n x d_o`.
pub fn encode_object_rows<T: Scalar>(
    g: &mut Graph<T>,
    p: &ParamGroup<T>,
    cfg: &NetConfig,
    x: NodeId,
) -> Result<NodeId> {
    if cfg.aux.uses_oracle() {
        let w = g.param(p, "oracle.embed.w")?;
        let b = g.param(p, "oracle.embed.b")?;
        g.linear(x, w, b)
    } else {
        mlp(g, p, "enc_o", x, 2)
    }
}

/// Encodes a list of 16x16 patches; row `i` belongs to patch `i`.
pub fn encode_objects<T: Scalar>(
    g: &mut Graph<T>,
    p: &ParamGroup<T>,
    cfg: &NetConfig,
    patches: &[&Tensor<f64>],
) -> Result<NodeId> {
    if patches.is_empty() {
        return Err(TensorError::Invalid(
            "encode_objects needs at least one patch".into(),
        ));
    }
    let data = patches
        .iter()
        .flat_map(|t| t.data().iter().map(|&v| T::c(v)))
        .collect();
    let x = g.input(Tensor::matrix(patches.len(), PATCH_DIM, data)?);
    encode_object_rows(g, p, cfg, x)
}

/// `B x d_ctx` context encoding `[f_ego(ego), f_loc(loc)]`.
pub fn encode_context<T: Scalar>(
    g: &mut Graph<T>,
    p: &ParamGroup<T>,
    ego: NodeId,
    loc: NodeId,
) -> Result<NodeId> {
    let e = mlp(g, p, "enc_ego", ego, 2)?;
    let l = mlp(g, p, "enc_loc", loc, 2)?;
    g.concat_cols(&[e, l])
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AttendMode {
    /// Queries are object encodings, projected by `att.wq_o`.
    Object,
    /// Queries are context encodings, projected by `att.wq_ctx`.
    Context,
}

/// Scaled dot-product attention of each query row over the rows of `z`.
/// Returns `(m x d_o output, m x n weights)`.
pub fn attend<T: Scalar>(
    g: &mut Graph<T>,
    p: &ParamGroup<T>,
    query: NodeId,
    z: NodeId,
    mode: AttendMode,
) -> Result<(NodeId, NodeId)> {
    let wq = g.param(
        p,
        match mode {
            AttendMode::Object => "att.wq_o",
            AttendMode::Context => "att.wq_ctx",
        },
    )?;
    let wk = g.param(p, "att.wk")?;
    let d_k = g.shape(wk).1;
    let q = g.matmul(query, wq)?;
    let k = g.matmul(z, wk)?;
    let kt = g.transpose(k);
    let logits = g.matmul(q, kt)?;
    let logits = g.scale(logits, T::c(1.0 / (d_k as f64).sqrt()));
    let w = g.softmax_rows(logits);
    let out = g.matmul(w, z)?;
    Ok((out, w))
}

/// `m`-row attention substitute under the given policy.
fn pooled<T: Scalar>(
    g: &mut Graph<T>,
    p: &ParamGroup<T>,
    policy: AttentionPolicy,
    query: NodeId,
    z: NodeId,
    mode: AttendMode,
) -> Result<NodeId> {
    let m = g.shape(query).0;
    let (n, d) = g.shape(z);
    match policy {
        AttentionPolicy::Full => Ok(attend(g, p, query, z, mode)?.0),
        AttentionPolicy::Average => {
            let avg = g.input(Tensor::full(&[m, n], T::c(1.0 / n as f64)));
            g.matmul(avg, z)
        }
        AttentionPolicy::None => Ok(g.input(Tensor::zeros(&[m, d]))),
    }
}

fn stack<T: Scalar>(g: &mut Graph<T>, parts: &[NodeId]) -> Result<NodeId> {
    if parts.len() == 1 {
        Ok(parts[0])
    } else {
        g.stack_rows(parts)
    }
}

/// Full Q-network forward pass over a batch.
pub fn forward<T: Scalar>(
    g: &mut Graph<T>,
    p: &ParamGroup<T>,
    cfg: &NetConfig,
    batch: &ObsBatch<T>,
) -> Result<Forward> {
    let null = g.param(p, "null_obj")?;
    let enc = match &batch.objects {
        Some(t) => {
            let x = g.input(t.clone());
            Some(encode_object_rows(g, p, cfg, x)?)
        }
        None => None,
    };
    let mut rows = Vec::with_capacity(batch.len());
    let mut r = 0;
    for &n in &batch.counts {
        let len = n.max(1);
        rows.push(RowSpan {
            start: r,
            len,
            real: n,
        });
        r += len;
    }
    let z = match enc {
        Some(e) if batch.counts.iter().all(|&n| n > 0) => e,
        _ => {
            let mut parts = Vec::with_capacity(batch.len());
            let mut off = 0;
            for &n in &batch.counts {
                if n == 0 {
                    parts.push(null);
                } else {
                    parts.push(g.slice_rows(enc.expect("objects present"), off, n)?);
                    off += n;
                }
            }
            stack(g, &parts)?
        }
    };
    let ego = g.input(batch.ego.clone());
    let loc = g.input(batch.loc.clone());
    let zk = encode_context(g, p, ego, loc)?;

    let single = batch.len() == 1;
    let mut att_parts = Vec::with_capacity(batch.len());
    let mut ctx_parts = Vec::with_capacity(batch.len());
    for (b, span) in rows.iter().enumerate() {
        let zb = if single {
            z
        } else {
            g.slice_rows(z, span.start, span.len)?
        };
        let kb = if single { zk } else { g.slice_rows(zk, b, 1)? };
        att_parts.push(pooled(g, p, cfg.attention_policy, zb, zb, AttendMode::Object)?);
        ctx_parts.push(pooled(g, p, cfg.attention_policy, kb, zb, AttendMode::Context)?);
    }
    let att = stack(g, &att_parts)?;
    let ctx = stack(g, &ctx_parts)?;

    let owner: Vec<usize> = rows
        .iter()
        .enumerate()
        .flat_map(|(b, s)| std::iter::repeat(b).take(s.len))
        .collect();
    let zk_rows = if single && rows[0].len == 1 {
        zk
    } else {
        g.gather_rows(zk, &owner)?
    };
    let int_in = g.concat_cols(&[z, att, zk_rows])?;
    let q_int = mlp(g, p, "q_int", int_in, 3)?;
    let nav_in = g.concat_cols(&[zk, ctx])?;
    let q_nav = mlp(g, p, "q_nav", nav_in, 3)?;
    Ok(Forward {
        z,
        att,
        zk,
        q_int,
        q_nav,
        null,
        rows,
    })
}

impl Forward {
    /// Q-values of sample `b` in flat action order: navigation, then
    /// eight interactions per visible patch.
    pub fn flat_q<T: Scalar>(&self, g: &Graph<T>, b: usize) -> Vec<f64> {
        let span = self.rows[b];
        let qn = g.value(self.q_nav).row(b).iter().map(|v| v.f64());
        let qi = g.value(self.q_int).data()
            [span.start * NUM_INTERACTIONS..(span.start + span.real) * NUM_INTERACTIONS]
            .iter()
            .map(|v| v.f64());
        qn.chain(qi).collect()
    }

    /// `B x 1` column of Q(s_b, a_b).
    pub fn q_taken<T: Scalar>(&self, g: &mut Graph<T>, actions: &[ActionSpec]) -> Result<NodeId> {
        if actions.len() != self.rows.len() {
            return Err(TensorError::Invalid(format!(
                "{} actions for a batch of {}",
                actions.len(),
                self.rows.len()
            )));
        }
        let mut nav = Vec::new();
        let mut int = Vec::new();
        let mut order = Vec::with_capacity(actions.len());
        for (b, a) in actions.iter().enumerate() {
            match *a {
                ActionSpec::Navigate(n) => {
                    order.push((false, nav.len()));
                    nav.push((b, n.index()));
                }
                ActionSpec::Interact(base, patch) => {
                    let span = self.rows[b];
                    if patch >= span.real {
                        return Err(TensorError::OutOfRange {
                            op: "q_taken",
                            index: patch,
                            bound: span.real,
                        });
                    }
                    order.push((true, int.len()));
                    int.push((span.start + patch, base.index()));
                }
            }
        }
        let nav_q = if nav.is_empty() {
            None
        } else {
            Some(g.select_elems(self.q_nav, &nav)?)
        };
        let int_q = if int.is_empty() {
            None
        } else {
            Some(g.select_elems(self.q_int, &int)?)
        };
        match (nav_q, int_q) {
            (Some(q), None) | (None, Some(q)) => Ok(q),
            (Some(nq), Some(iq)) => {
                let both = g.stack_rows(&[nq, iq])?;
                let idx: Vec<usize> = order
                    .iter()
                    .map(|&(is_int, k)| if is_int { nav.len() + k } else { k })
                    .collect();
                g.gather_rows(both, &idx)
            }
            (None, None) => unreachable!("batch is non-empty"),
        }
    }
}

/// Index of the largest value, lowest index on ties.
pub fn argmax(q: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in q.iter().enumerate() {
        if v > q[best] {
            best = i;
        }
    }
    best
}

/// Epsilon-greedy choice over `[qn, qi]` in flat action order.
pub fn select_action(qi: &[f64], qn: &[f64], epsilon: f64, rng: &mut impl Rng) -> ActionSpec {
    let total = qn.len() + qi.len();
    if epsilon > 0.0 && rng.gen::<f64>() < epsilon {
        return ActionSpec::from_flat(rng.gen_range(0..total));
    }
    let flat: Vec<f64> = qn.iter().chain(qi).copied().collect();
    ActionSpec::from_flat(argmax(&flat))
}

/// Flat Q-values for one percept.
pub fn q_values<T: Scalar>(p: &ParamGroup<T>, cfg: &NetConfig, percept: &Percept) -> Result<Vec<f64>> {
    let batch = ObsBatch::new(&[percept], cfg)?;
    let mut g = Graph::new();
    let fwd = forward(&mut g, p, cfg, &batch)?;
    Ok(fwd.flat_q(&g, 0))
}

/// Epsilon-greedy action for one percept.
pub fn act<T: Scalar>(
    p: &ParamGroup<T>,
    cfg: &NetConfig,
    percept: &Percept,
    epsilon: f64,
    rng: &mut impl Rng,
) -> Result<ActionSpec> {
    let total = NUM_NAV + NUM_INTERACTIONS * percept.num_objects();
    if epsilon > 0.0 && rng.gen::<f64>() < epsilon {
        return Ok(ActionSpec::from_flat(rng.gen_range(0..total)));
    }
    let q = q_values(p, cfg, percept)?;
    Ok(ActionSpec::from_flat(argmax(&q)))
}
