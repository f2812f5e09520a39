//! Replay, Double-Q targets, the combined objective and the training loop.

pub mod eval;
pub mod replay;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::agent::{
    self, forward, init_params, AuxMode, Forward, NetConfig, ObsBatch, Percept,
};
use crate::objmodel::{attentive_model_loss, cobra_loss, ocn_loss, ModelConfig, NegativePool};
use crate::sim::{ActionSpec, Kitchen, SimError, TaskSpec};
use crate::tensor::{
    adam_step, clip_global_norm, write_checkpoint, AdamConfig, Graph, NodeId, ParamGroup, Tensor,
    TensorError,
};
use crate::Scalar;

pub use eval::{
    episode_seed, eval_threads, evaluate, evaluate_policy, run_episode, EvalResult, Policy,
    QPolicy, RandomPolicy,
};
pub use replay::{Buffers, EmptyBuffer, ReplayBuffer, Transition};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Precision {
    F32,
    F64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: f64,
    pub clip_norm: f64,
    pub gamma: f64,
    /// Target smoothing coefficient.
    pub eta2: f64,
    pub regular_capacity: usize,
    pub sil_capacity: usize,
    /// Regular:SIL replay ratio, e.g. 7 for 7:1.
    pub replay_ratio: f64,
    pub batch_size: usize,
    pub beta_model: f64,
    pub beta_cobra: f64,
    pub beta_ocn: f64,
    pub eps_start: f64,
    pub eps_end: f64,
    pub anneal_steps: u64,
    pub eval_epsilon: f64,
    pub eval_frames: u64,
    pub eval_every: u64,
    pub checkpoint_every: u64,
    pub warmup: u64,
    /// Environment steps per gradient step.
    pub train_every: u64,
    pub budget: u64,
    pub precision: Precision,
    /// Write measured wall time into the metrics CSV (otherwise 0, keeping
    /// the file byte-identical across runs).
    pub record_wall_time: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1.8e-5,
            clip_norm: 0.076,
            gamma: 0.99,
            eta2: 0.00067,
            regular_capacity: 150_000,
            sil_capacity: 50_000,
            replay_ratio: 7.0,
            batch_size: 50,
            beta_model: 1e-3,
            beta_cobra: 0.0032,
            beta_ocn: 0.0047,
            eps_start: 1.0,
            eps_end: 0.1,
            anneal_steps: 50_000,
            eval_epsilon: 0.1,
            eval_frames: 5_000,
            eval_every: 25_000,
            checkpoint_every: 25_000,
            warmup: 1_000,
            train_every: 1,
            budget: 200_000,
            precision: Precision::F64,
            record_wall_time: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), String> {
        let pos = [
            ("lr", self.lr),
            ("clip_norm", self.clip_norm),
            ("replay_ratio", self.replay_ratio),
        ];
        for (name, v) in pos {
            if !(v > 0.0 && v.is_finite()) {
                return Err(format!("{name} must be positive and finite, got {v}"));
            }
        }
        let unit = [
            ("gamma", self.gamma),
            ("eta2", self.eta2),
            ("eps_start", self.eps_start),
            ("eps_end", self.eps_end),
            ("eval_epsilon", self.eval_epsilon),
        ];
        for (name, v) in unit {
            if !(0.0..=1.0).contains(&v) {
                return Err(format!("{name} must lie in [0, 1], got {v}"));
            }
        }
        for (name, v) in [
            ("beta_model", self.beta_model),
            ("beta_cobra", self.beta_cobra),
            ("beta_ocn", self.beta_ocn),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(format!("{name} must be non-negative, got {v}"));
            }
        }
        for (name, v) in [
            ("regular_capacity", self.regular_capacity as u64),
            ("sil_capacity", self.sil_capacity as u64),
            ("batch_size", self.batch_size as u64),
            ("eval_frames", self.eval_frames),
            ("eval_every", self.eval_every),
            ("checkpoint_every", self.checkpoint_every),
            ("train_every", self.train_every),
            ("budget", self.budget),
        ] {
            if v == 0 {
                return Err(format!("{name} must be positive"));
            }
        }
        Ok(())
    }

    pub fn sil_fraction(&self) -> f64 {
        1.0 / (self.replay_ratio + 1.0)
    }

    /// Linear anneal from `eps_start` to `eps_end` over `anneal_steps`.
    pub fn epsilon(&self, step: u64) -> f64 {
        if step >= self.anneal_steps {
            return self.eps_end;
        }
        let frac = step as f64 / self.anneal_steps as f64;
        self.eps_start + frac * (self.eps_end - self.eps_start)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Replay(#[from] EmptyBuffer),
    #[error("non-finite loss at step {step} (dqn {loss_dqn}, model {loss_model}); batch episodes {episodes:?}")]
    NonFinite {
        step: u64,
        loss_dqn: f64,
        loss_model: f64,
        episodes: Vec<u64>,
    },
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

/// Double-Q targets: the online network picks `a*` at `s'`, the target
/// network evaluates it; terminal transitions use the reward alone.
pub fn td_targets<T: Scalar>(
    online_next: &[Vec<f64>],
    target_next: &[Vec<f64>],
    rewards: &[f64],
    dones: &[bool],
    gamma: f64,
) -> Vec<f64> {
    rewards
        .iter()
        .enumerate()
        .map(|(b, &r)| {
            if dones[b] {
                r
            } else {
                let a = agent::argmax(&online_next[b]);
                r + gamma * target_next[b][a]
            }
        })
        .collect()
}

/// Flat Q-values of every sample under `params`, forward only.
pub fn batch_q<T: Scalar>(
    params: &ParamGroup<T>,
    net: &NetConfig,
    batch: &ObsBatch<T>,
) -> crate::tensor::Result<Vec<Vec<f64>>> {
    let mut g = Graph::new();
    let f = forward(&mut g, params, net, batch)?;
    Ok((0..batch.len()).map(|b| f.flat_q(&g, b)).collect())
}

/// Losses reported by one optimisation step.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StepLosses {
    pub dqn: f64,
    pub model: f64,
}

/// Graph of the combined objective for one batch.
pub struct Objective {
    pub total: NodeId,
    pub dqn: NodeId,
    pub model: Option<NodeId>,
    pub fwd_next: Option<Forward>,
}

/// Auxiliary-loss settings needed to build the objective.
#[derive(Clone, Debug)]
pub struct AuxSettings<'a> {
    pub net: &'a NetConfig,
    pub model: &'a ModelConfig,
    pub beta_model: f64,
    pub beta_cobra: f64,
    pub beta_ocn: f64,
}

impl AuxSettings<'_> {
    fn beta(&self) -> f64 {
        match self.net.aux {
            AuxMode::Load => self.beta_model,
            AuxMode::Cobra => self.beta_cobra,
            AuxMode::Ocn => self.beta_ocn,
            _ => 0.0,
        }
    }

    fn needs_next(&self) -> bool {
        matches!(self.net.aux, AuxMode::Load | AuxMode::Cobra | AuxMode::Ocn)
    }
}

/// Builds `L = L_DQN + beta * L_aux` for a batch with precomputed targets.
#[allow(clippy::too_many_arguments)]
pub fn build_objective<T: Scalar>(
    g: &mut Graph<T>,
    params: &ParamGroup<T>,
    aux: &AuxSettings,
    obs: &ObsBatch<T>,
    next: &ObsBatch<T>,
    actions: &[ActionSpec],
    targets: &[f64],
    pool: &NegativePool<T>,
    rng: &mut impl Rng,
) -> crate::tensor::Result<Objective> {
    let b = actions.len();
    let fwd = forward(g, params, aux.net, obs)?;
    let q = fwd.q_taken(g, actions)?;
    let y = g.input(Tensor::matrix(b, 1, targets.iter().map(|&v| T::c(v)).collect())?);
    let se = g.squared_error(q, y)?;
    let dqn = g.scale(se, T::c(1.0 / b as f64));
    if !aux.needs_next() {
        return Ok(Objective {
            total: dqn,
            dqn,
            model: None,
            fwd_next: None,
        });
    }
    let fwd_next = forward(g, params, aux.net, next)?;
    let model = match aux.net.aux {
        AuxMode::Load => {
            attentive_model_loss(g, params, aux.net, aux.model, &fwd, &fwd_next, actions, pool, rng)?
        }
        AuxMode::Ocn => ocn_loss(g, aux.model.tau_ocn, &fwd, &fwd_next)?,
        AuxMode::Cobra => {
            cobra_loss(g, params, aux.model.beta_kl, &fwd, &fwd_next, obs, next, rng)?
        }
        _ => unreachable!("needs_next covers the auxiliary modes"),
    };
    let weighted = g.scale(model, T::c(aux.beta()));
    let total = g.add(dqn, weighted)?;
    Ok(Objective {
        total,
        dqn,
        model: Some(model),
        fwd_next: Some(fwd_next),
    })
}

/// One row of the metrics CSV.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    pub step: u64,
    pub episodes: u64,
    pub train_sr: f64,
    pub eval_sr: f64,
    pub loss_dqn: f64,
    pub loss_model: f64,
    pub epsilon: f64,
    pub seconds: f64,
}

pub const METRICS_HEADER: &str = "step,episodes,train_sr,eval_sr,loss_dqn,loss_model,epsilon,seconds";

impl MetricsRow {
    pub fn csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.step,
            self.episodes,
            self.train_sr,
            self.eval_sr,
            self.loss_dqn,
            self.loss_model,
            self.epsilon,
            self.seconds
        )
    }

    pub fn parse(line: &str) -> Option<Self> {
        let f: Vec<&str> = line.trim().split(',').collect();
        if f.len() != 8 {
            return None;
        }
        Some(Self {
            step: f[0].parse().ok()?,
            episodes: f[1].parse().ok()?,
            train_sr: f[2].parse().ok()?,
            eval_sr: f[3].parse().ok()?,
            loss_dqn: f[4].parse().ok()?,
            loss_model: f[5].parse().ok()?,
            epsilon: f[6].parse().ok()?,
            seconds: f[7].parse().ok()?,
        })
    }
}

pub fn read_metrics(path: &Path) -> std::io::Result<Vec<MetricsRow>> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim() == METRICS_HEADER => {}
        _ => {
            return Err(std::io::Error::new(
                std::io::ErrorKind::InvalidData,
                format!("{}: missing metrics header", path.display()),
            ))
        }
    }
    lines
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            MetricsRow::parse(l).ok_or_else(|| {
                std::io::Error::new(
                    std::io::ErrorKind::InvalidData,
                    format!("{}: bad metrics row `{l}`", path.display()),
                )
            })
        })
        .collect()
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum AucError {
    #[error("curves sampled on different step grids")]
    GridMismatch,
    #[error("oracle curve has zero area")]
    ZeroOracle,
}

/// Trapezoidal area under `(step, value)` points.
pub fn trapezoid_auc(curve: &[(f64, f64)]) -> f64 {
    curve
        .windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[0].1 + w[1].1) / 2.0)
        .sum()
}

/// Method AUC as a percentage of the oracle AUC.
pub fn auc_percent(method: &[(f64, f64)], oracle: &[(f64, f64)]) -> Result<f64, AucError> {
    if method.len() != oracle.len() || method.iter().zip(oracle).any(|(a, b)| a.0 != b.0) {
        return Err(AucError::GridMismatch);
    }
    let o = trapezoid_auc(oracle);
    if o == 0.0 {
        return Err(AucError::ZeroOracle);
    }
    Ok(trapezoid_auc(method) / o * 100.0)
}

/// Independent random streams derived from the master seed.
fn stream(seed: u64, tag: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(episode_seed(seed, tag.wrapping_mul(0x1_0000_0001)))
}

/// Everything a run needs besides the output location.
#[derive(Clone, Debug, PartialEq)]
pub struct RunSpec {
    pub task: TaskSpec,
    pub seed: u64,
    pub net: NetConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

/// Single-threaded trainer owning parameters, buffers and optimiser state.
pub struct Trainer<T: Scalar> {
    pub spec: RunSpec,
    pub params: ParamGroup<T>,
    pub target: ParamGroup<T>,
    pub buffers: Buffers,
    pub pool: NegativePool<T>,
    pub step: u64,
    pub episodes: u64,
    act_rng: ChaCha8Rng,
    sample_rng: ChaCha8Rng,
    loss_rng: ChaCha8Rng,
    env: Kitchen,
    current: Vec<Transition>,
    percept: Arc<Percept>,
    window: Window,
    adam: AdamConfig,
}

#[derive(Default)]
struct Window {
    episodes: u64,
    successes: u64,
    dqn: f64,
    model: f64,
    updates: u64,
}

impl<T: Scalar> Trainer<T> {
    pub fn new(spec: RunSpec) -> Result<Self, TrainError> {
        let mut init = stream(spec.seed, 1);
        let params: ParamGroup<T> = init_params(&spec.net, &mut init);
        let target = params.clone();
        let env_seed = episode_seed(spec.seed, 0x5EED);
        let env = Kitchen::new(spec.task.clone(), env_seed);
        let percept = Arc::new(Percept::new(
            env.world(),
            env.observation().clone(),
            spec.net.aux,
        )?);
        Ok(Self {
            buffers: Buffers::new(
                spec.train.regular_capacity,
                spec.train.sil_capacity,
                spec.train.sil_fraction(),
            ),
            pool: NegativePool::new(spec.model.pool_cap),
            act_rng: stream(spec.seed, 2),
            sample_rng: stream(spec.seed, 3),
            loss_rng: stream(spec.seed, 4),
            params,
            target,
            step: 0,
            episodes: 0,
            env,
            current: Vec::new(),
            percept,
            window: Window::default(),
            adam: AdamConfig::default(),
            spec,
        })
    }

    /// One environment step with the epsilon-greedy behaviour policy.
    pub fn env_step(&mut self) -> Result<(), TrainError> {
        let eps = self.spec.train.epsilon(self.step);
        let action = agent::act(&self.params, &self.spec.net, &self.percept, eps, &mut self.act_rng)?;
        let out = self.env.step(action)?;
        self.env.trim_cache(50_000);
        let next = Arc::new(Percept::new(self.env.world(), out.obs, self.spec.net.aux)?);
        let t = Transition {
            obs: self.percept.clone(),
            action,
            reward: out.reward,
            next: next.clone(),
            done: out.done,
            episode_id: self.episodes,
        };
        self.buffers.push_step(t.clone());
        self.current.push(t);
        self.step += 1;
        if out.done {
            self.buffers.finish_episode(&self.current, out.success);
            self.current.clear();
            self.episodes += 1;
            self.window.episodes += 1;
            self.window.successes += out.success as u64;
            let seed = episode_seed(self.spec.seed ^ 0x5EED, self.episodes);
            let obs = self.env.reset(seed);
            self.percept = Arc::new(Percept::new(self.env.world(), obs, self.spec.net.aux)?);
        } else {
            self.percept = next;
        }
        Ok(())
    }

    /// Samples a batch and applies one clipped Adam update plus the target
    /// network's soft update.
    pub fn train_step(&mut self) -> Result<StepLosses, TrainError> {
        let batch: Vec<Transition> = self
            .buffers
            .sample_mixed(self.spec.train.batch_size, &mut self.sample_rng)?
            .into_iter()
            .cloned()
            .collect();
        self.update(&batch)
    }

    /// Gradient update on an explicit batch.
    pub fn update(&mut self, batch: &[Transition]) -> Result<StepLosses, TrainError> {
        let net = &self.spec.net;
        let obs_refs: Vec<&Percept> = batch.iter().map(|t| t.obs.as_ref()).collect();
        let next_refs: Vec<&Percept> = batch.iter().map(|t| t.next.as_ref()).collect();
        let obs = ObsBatch::<T>::new(&obs_refs, net)?;
        let next = ObsBatch::<T>::new(&next_refs, net)?;
        let online_next = batch_q(&self.params, net, &next)?;
        let target_next = batch_q(&self.target, net, &next)?;
        let rewards: Vec<f64> = batch.iter().map(|t| t.reward).collect();
        let dones: Vec<bool> = batch.iter().map(|t| t.done).collect();
        let y = td_targets::<T>(&online_next, &target_next, &rewards, &dones, self.spec.train.gamma);
        let actions: Vec<ActionSpec> = batch.iter().map(|t| t.action).collect();

        let mut g = Graph::new();
        let t = &self.spec.train;
        let aux = AuxSettings {
            net,
            model: &self.spec.model,
            beta_model: t.beta_model,
            beta_cobra: t.beta_cobra,
            beta_ocn: t.beta_ocn,
        };
        let obj = build_objective(
            &mut g,
            &self.params,
            &aux,
            &obs,
            &next,
            &actions,
            &y,
            &self.pool,
            &mut self.loss_rng,
        )?;
        let losses = StepLosses {
            dqn: g.value(obj.dqn).item().f64(),
            model: obj.model.map_or(0.0, |m| g.value(m).item().f64()),
        };
        if !g.value(obj.total).item().f64().is_finite() {
            let mut episodes: Vec<u64> = batch.iter().map(|t| t.episode_id).collect();
            episodes.sort();
            episodes.dedup();
            return Err(TrainError::NonFinite {
                step: self.step,
                loss_dqn: losses.dqn,
                loss_model: losses.model,
                episodes,
            });
        }
        let mut grads = g.backward(obj.total)?.param_grads(&self.params);
        clip_global_norm(&mut grads, T::c(self.spec.train.clip_norm));
        adam_step(&mut self.params, &grads, T::c(self.spec.train.lr), self.adam)?;
        self.target
            .soft_update_from(&self.params, T::c(self.spec.train.eta2))?;
        if let Some(f) = &obj.fwd_next {
            if net.aux == AuxMode::Load {
                self.pool.push_forward(&g, f);
            }
        }
        self.window.dqn += losses.dqn;
        self.window.model += losses.model;
        self.window.updates += 1;
        Ok(losses)
    }

    pub fn evaluate(&self) -> Result<EvalResult, TrainError> {
        let t = &self.spec.train;
        Ok(evaluate_policy(
            &self.params,
            &self.spec.net,
            &self.spec.task,
            t.eval_frames,
            t.eval_epsilon,
            episode_seed(self.spec.seed ^ 0xE7A1, self.step),
        )?)
    }

    /// Evaluates and closes the current metrics window.
    pub fn metrics_row(&mut self, seconds: f64) -> Result<MetricsRow, TrainError> {
        let eval = self.evaluate()?;
        let w = std::mem::take(&mut self.window);
        let mean = |s: f64| if w.updates == 0 { 0.0 } else { s / w.updates as f64 };
        Ok(MetricsRow {
            step: self.step,
            episodes: self.episodes,
            train_sr: if w.episodes == 0 {
                0.0
            } else {
                w.successes as f64 / w.episodes as f64
            },
            eval_sr: eval.success_rate,
            loss_dqn: mean(w.dqn),
            loss_model: mean(w.model),
            epsilon: self.spec.train.epsilon(self.step),
            seconds,
        })
    }

    /// Runs to the step budget, writing `metrics.csv` and checkpoints into
    /// `out` when given. Evaluation happens at step 0, every `eval_every`
    /// steps, and at the end of the budget.
    pub fn run(
        &mut self,
        out: Option<&Path>,
        mut on_row: impl FnMut(&MetricsRow),
    ) -> Result<Vec<MetricsRow>, TrainError> {
        let t = self.spec.train.clone();
        let started = Instant::now();
        let mut csv = match out {
            Some(dir) => {
                std::fs::create_dir_all(dir)?;
                let mut f = std::fs::File::create(dir.join("metrics.csv"))?;
                writeln!(f, "{METRICS_HEADER}")?;
                Some(f)
            }
            None => None,
        };
        let mut rows = Vec::new();
        let mut emit = |trainer: &mut Self, rows: &mut Vec<MetricsRow>| -> Result<(), TrainError> {
            let secs = if t.record_wall_time {
                started.elapsed().as_secs_f64()
            } else {
                0.0
            };
            let row = trainer.metrics_row(secs)?;
            if let Some(f) = csv.as_mut() {
                writeln!(f, "{}", row.csv())?;
                f.flush()?;
            }
            on_row(&row);
            rows.push(row);
            Ok(())
        };
        emit(self, &mut rows)?;
        while self.step < t.budget {
            self.env_step()?;
            if self.step >= t.warmup && self.step % t.train_every == 0 {
                self.train_step()?;
            }
            if self.step % t.checkpoint_every == 0 {
                if let Some(dir) = out {
                    self.save_checkpoint(&dir.join(format!("ckpt_{:07}.bin", self.step)))?;
                }
            }
            if self.step % t.eval_every == 0 || self.step == t.budget {
                emit(self, &mut rows)?;
            }
        }
        if let Some(dir) = out {
            self.save_checkpoint(&dir.join("final.bin"))?;
        }
        Ok(rows)
    }

    pub fn save_checkpoint(&self, path: &Path) -> Result<(), TrainError> {
        let f = std::io::BufWriter::new(std::fs::File::create(path)?);
        write_checkpoint(&self.params, f)?;
        Ok(())
    }
}

/// Path of the final checkpoint inside a run directory.
pub fn final_checkpoint(dir: &Path) -> PathBuf {
    dir.join("final.bin")
}
