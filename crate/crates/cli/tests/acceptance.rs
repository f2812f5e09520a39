//! Acceptance run: one PASS/FAIL line per criterion.
//!
//! Criteria 6-8 need full-budget training matrices and are skipped unless
//! the binary gets `--ignored`/`--include-ignored` or `ACCEPTANCE_FULL=1`.
//! `ACCEPTANCE_RUNS`, `ACCEPTANCE_BUDGET` and `ACCEPTANCE_JOBS` override the
//! run directory, step budget and process count.

#[path = "acceptance/reference.rs"]
mod reference;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::Arc;
use std::time::Instant;

use load_core::agent::{
    attend, forward, init_params, AttendMode, AttentionPolicy, AuxMode, Forward, NetConfig, ObsBatch,
    Percept, Switch,
};
use load_core::objmodel::{
    attentive_model_loss, cobra_loss, gaussian_kl, model_predictions, ocn_loss, ModelConfig,
    NegativePool,
};
use load_core::probe;
use load_core::report::{build_report, load_run};
use load_core::sim::{self, ActionSpec, Kitchen, TaskSpec, TASK_NAMES};
use load_core::tensor::{finite_diff_check, FdOptions, Graph, ParamGroup, Tensor};
use load_core::train::{build_objective, AuxSettings, Transition};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    ok: bool,
    detail: String,
}

fn outcome(ok: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        ok,
        detail: detail.into(),
    }
}

/// First failure wins; otherwise the joined details.
fn all(parts: Vec<(&str, Outcome)>) -> Outcome {
    let ok = parts.iter().all(|(_, o)| o.ok);
    let detail = parts
        .iter()
        .map(|(n, o)| format!("{n}: {}{}", if o.ok { "" } else { "FAILED " }, o.detail))
        .collect::<Vec<_>>()
        .join("; ");
    outcome(ok, detail)
}

fn small(aux: AuxMode) -> NetConfig {
    NetConfig {
        d_o: 8,
        d_ego: 6,
        d_loc: 4,
        d_k: 4,
        hidden: 12,
        d_a: 5,
        aux,
        ..NetConfig::default()
    }
}

fn rollout(task: &str, aux: AuxMode, n: usize, seed: u64) -> Vec<Transition> {
    let task = TaskSpec::by_name(task).unwrap();
    let mut env = Kitchen::new(task, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = Arc::new(Percept::new(env.world(), env.observation().clone(), aux).unwrap());
    let mut out = Vec::new();
    while out.len() < n {
        let a = ActionSpec::from_flat(rng.gen_range(0..sim::num_actions(p.num_objects())));
        let o = env.step(a).unwrap();
        let next = Arc::new(Percept::new(env.world(), o.obs, aux).unwrap());
        out.push(Transition {
            obs: p,
            action: a,
            reward: o.reward,
            next: next.clone(),
            done: o.done,
            episode_id: 0,
        });
        if o.done {
            break;
        }
        p = next;
    }
    out
}

struct Batch {
    net: NetConfig,
    params: ParamGroup<f64>,
    bt: ObsBatch<f64>,
    bn: ObsBatch<f64>,
    actions: Vec<ActionSpec>,
}

fn batch(aux: AuxMode, seed: u64) -> Batch {
    let net = small(aux);
    let task = TASK_NAMES[seed as usize % TASK_NAMES.len()];
    let ts = rollout(task, aux, 4, 100 + seed);
    let obs: Vec<&Percept> = ts.iter().map(|t| t.obs.as_ref()).collect();
    let nxt: Vec<&Percept> = ts.iter().map(|t| t.next.as_ref()).collect();
    Batch {
        params: init_params(&net, &mut ChaCha8Rng::seed_from_u64(seed)),
        bt: ObsBatch::new(&obs, &net).unwrap(),
        bn: ObsBatch::new(&nxt, &net).unwrap(),
        actions: ts.iter().map(|t| t.action).collect(),
        net,
    }
}

fn forwards(g: &mut Graph<f64>, p: &ParamGroup<f64>, b: &Batch) -> load_core::tensor::Result<(Forward, Forward)> {
    Ok((forward(g, p, &b.net, &b.bt)?, forward(g, p, &b.net, &b.bn)?))
}

const SEEDS: u64 = 20;
const GRAD_TOL: f64 = 1e-4;
/// Central differences at h = 1e-5 carry ~1e-11 of round-off, so gradients
/// smaller than this are compared on an absolute scale.
const FD_FLOOR: f64 = 1e-6;

fn criterion_1() -> Outcome {
    let start = Instant::now();
    // contrastive temperatures at 1: see the decisions ledger on round-off
    let mc = ModelConfig {
        tau: 1.0,
        k: 4,
        ..ModelConfig::default()
    };
    let mut worst: BTreeMap<&str, f64> = BTreeMap::new();
    for seed in 0..SEEDS {
        let opts = FdOptions {
            floor: FD_FLOOR,
            ..FdOptions::sampled(1e-5, 6, seed)
        };
        let td = batch(AuxMode::None, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let y: Vec<f64> = (0..td.actions.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let aux = AuxSettings {
            net: &td.net,
            model: &mc,
            beta_model: 0.0,
            beta_cobra: 0.0,
            beta_ocn: 0.0,
        };
        let pool = NegativePool::new(85);
        let e = finite_diff_check(
            |g, p| {
                let mut r = ChaCha8Rng::seed_from_u64(0);
                Ok(build_objective(g, p, &aux, &td.bt, &td.bn, &td.actions, &y, &pool, &mut r)?.dqn)
            },
            &td.params,
            opts,
        );
        let e = e.unwrap_or(f64::INFINITY);
        let w = worst.entry("td").or_insert(0.0);
        *w = w.max(e);

        let m = batch(AuxMode::Load, seed);
        let e = finite_diff_check(
            |g, p| {
                let mut r = ChaCha8Rng::seed_from_u64(seed);
                let (ft, fnx) = forwards(g, p, &m)?;
                attentive_model_loss(g, p, &m.net, &mc, &ft, &fnx, &m.actions, &pool, &mut r)
            },
            &m.params,
            opts,
        )
        .unwrap_or(f64::INFINITY);
        let w = worst.entry("model").or_insert(0.0);
        *w = w.max(e);

        let o = batch(AuxMode::Ocn, seed);
        let e = finite_diff_check(
            |g, p| {
                let (ft, fnx) = forwards(g, p, &o)?;
                ocn_loss(g, 1.0, &ft, &fnx)
            },
            &o.params,
            opts,
        )
        .unwrap_or(f64::INFINITY);
        let w = worst.entry("ocn").or_insert(0.0);
        *w = w.max(e);

        let c = batch(AuxMode::Cobra, seed);
        let e = finite_diff_check(
            |g, p| {
                let mut r = ChaCha8Rng::seed_from_u64(seed);
                let (ft, fnx) = forwards(g, p, &c)?;
                cobra_loss(g, p, mc.beta_kl, &ft, &fnx, &c.bt, &c.bn, &mut r)
            },
            &c.params,
            opts,
        )
        .unwrap_or(f64::INFINITY);
        let w = worst.entry("cobra").or_insert(0.0);
        *w = w.max(e);
    }
    let secs = start.elapsed().as_secs_f64();
    let ok = worst.values().all(|&e| e < GRAD_TOL) && secs < 60.0;
    let errs: Vec<String> = worst.iter().map(|(k, v)| format!("{k} {v:.1e}")).collect();
    outcome(ok, format!("max rel err over {SEEDS} seeds: {}; {secs:.1}s", errs.join(", ")))
}

fn criterion_2() -> Outcome {
    // uniform logits: zero the model MLP's output layer, so every prediction is 0
    let cfg = small(AuxMode::Load);
    let mut worst_ln: f64 = 0.0;
    let mut audited = 0;
    for seed in 0..12 {
        let b = batch(AuxMode::Load, seed);
        let mut p = b.params.clone();
        for (name, t) in p.clone().iter() {
            if name.starts_with("model.l1.") {
                *p.get_mut(name).unwrap() = Tensor::zeros(t.value.shape());
            }
        }
        let mut g = Graph::new();
        let (ft, fnx) = forwards(&mut g, &p, &b).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mc = ModelConfig::default();
        let l = attentive_model_loss(&mut g, &p, &cfg, &mc, &ft, &fnx, &b.actions, &NegativePool::new(85), &mut rng)
            .unwrap();
        let pr = model_predictions(&mut g, &p, &cfg, &ft, &fnx, &b.actions).unwrap();
        let anchors = pr.map_or(0, |x| x.anchors.len());
        let per_object = g.value(l).item() * b.actions.len() as f64 / anchors.max(1) as f64;
        // batches whose anchors all lack distinct negatives contribute nothing
        if g.value(l).item() != 0.0 {
            audited += 1;
            worst_ln = worst_ln.max((per_object - 21f64.ln()).abs());
        }
    }
    let ln = outcome(
        worst_ln < 1e-9 && audited >= 5,
        format!("|loss - ln 21| per object {worst_ln:.1e} over {audited} batches"),
    );

    let l2 = 2f64.ln();
    let cases = [
        (gaussian_kl(&[0.0, 0.0], &[0.0, 0.0]), 0.0),
        (gaussian_kl(&[1.0, 0.0], &[0.0, 0.0]), 0.5),
        (gaussian_kl(&[0.0], &[l2]), 1.5 - l2),
        (gaussian_kl(&[2.0, -1.0], &[-l2, 0.0]), 0.5 * (0.25 - 1.0 + 4.0) + l2 + 0.5),
    ];
    let kl_err = cases.iter().map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let kl = outcome(kl_err < 1e-12, format!("max |KL - closed form| {kl_err:.1e}"));

    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst_sum: f64 = 0.0;
    for _ in 0..200 {
        let rows = rng.gen_range(1..6);
        let cols = rng.gen_range(1..25);
        let scale = 10f64.powi(rng.gen_range(-2..4));
        let data: Vec<f64> = (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0) * scale).collect();
        let mut g = Graph::new();
        let x = g.input(Tensor::matrix(rows, cols, data).unwrap());
        let s = g.softmax_rows(x);
        for r in 0..rows {
            worst_sum = worst_sum.max((g.value(s).row(r).iter().sum::<f64>() - 1.0).abs());
        }
    }
    let sm = outcome(worst_sum < 1e-9, format!("max |row sum - 1| {worst_sum:.1e}"));
    all(vec![("ln21", ln), ("kl", kl), ("softmax", sm)])
}

fn random_patch(rng: &mut impl Rng) -> Tensor<f64> {
    Tensor::matrix(16, 16, (0..256).map(|_| rng.gen()).collect()).unwrap()
}

fn permutation_cases(policy: AttentionPolicy, cases: usize) -> Result<(), String> {
    let cfg = NetConfig {
        attention_policy: policy,
        ..small(AuxMode::None)
    };
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let task = TaskSpec::by_name("toast_bread").unwrap();
    let w = task.world_at(sim::Cell::new(4, 2), 0);
    let base = Percept::new(&w, sim::observe(&w), AuxMode::None).unwrap();
    for case in 0..cases {
        let p: ParamGroup<f64> = init_params(&cfg, &mut rng);
        let n = rng.gen_range(1..=8);
        let mut pc = base.clone();
        pc.obs.patches = (0..n).map(|_| random_patch(&mut rng).into()).collect();
        pc.obs.patch_ids = (0..n as u32).collect();
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng);
        let mut pp = pc.clone();
        pp.obs.patches = perm.iter().map(|&i| pc.obs.patches[i].clone()).collect();
        let run = |x: &Percept| {
            let b = ObsBatch::new(&[x], &cfg).unwrap();
            let mut g = Graph::new();
            let f = forward(&mut g, &p, &cfg, &b).unwrap();
            (g.value(f.q_int).clone(), g.value(f.q_nav).clone())
        };
        let (qi, qn) = run(&pc);
        let (qip, qnp) = run(&pp);
        for (k, &i) in perm.iter().enumerate() {
            let d = qip.row(k).iter().zip(qi.row(i)).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            if d > 1e-10 {
                return Err(format!("{policy:?} case {case}: interaction Q not equivariant ({d:e})"));
            }
        }
        if qn.max_abs_diff(&qnp) > 1e-10 {
            return Err(format!("{policy:?} case {case}: navigation Q not invariant"));
        }
    }
    Ok(())
}

fn criterion_3() -> Outcome {
    let cfg = small(AuxMode::None);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut single_ok = true;
    for _ in 0..100 {
        let p: ParamGroup<f64> = init_params(&cfg, &mut rng);
        let row: Vec<f64> = (0..8).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let mut g = Graph::new();
        let z = g.input(Tensor::from_rows(&[&row]));
        let (out, _) = attend(&mut g, &p, z, z, AttendMode::Object).unwrap();
        single_ok &= g.value(out).data() == row.as_slice();
    }
    let single = outcome(single_ok, "100 singleton cases");

    let perm = match permutation_cases(AttentionPolicy::Full, 1000)
        .and_then(|_| permutation_cases(AttentionPolicy::Average, 1000))
    {
        Ok(()) => outcome(true, "1000 cases each for full and average"),
        Err(e) => outcome(false, e),
    };

    // policy attention none: object encoder gets no gradient from navigation Q
    let none = NetConfig {
        attention_policy: AttentionPolicy::None,
        ..cfg.clone()
    };
    let mut nonzero = Vec::new();
    for seed in 0..10 {
        let b = batch(AuxMode::None, seed);
        let p: ParamGroup<f64> = init_params(&none, &mut ChaCha8Rng::seed_from_u64(seed));
        let mut g = Graph::new();
        let f = forward(&mut g, &p, &none, &b.bt).unwrap();
        let l = g.sum(f.q_nav);
        let grads = g.backward(l).unwrap().param_grads(&p);
        for (name, gr) in grads.iter() {
            if name.starts_with("enc_o") && gr.data().iter().any(|&v| v != 0.0) {
                nonzero.push(name.clone());
            }
        }
    }
    // model attention off: the object-model loss sends nothing to the attention maps
    let off = NetConfig {
        attention_model: Switch::Off,
        ..small(AuxMode::Load)
    };
    let mc = ModelConfig {
        tau: 1.0,
        ..ModelConfig::default()
    };
    for seed in 0..10 {
        let mut b = batch(AuxMode::Load, seed);
        b.net = off.clone();
        let p: ParamGroup<f64> = init_params(&off, &mut ChaCha8Rng::seed_from_u64(seed));
        let mut g = Graph::new();
        let (ft, fnx) = forwards(&mut g, &p, &b).unwrap();
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let l = attentive_model_loss(&mut g, &p, &off, &mc, &ft, &fnx, &b.actions, &NegativePool::new(85), &mut r)
            .unwrap();
        let grads = g.backward(l).unwrap().param_grads(&p);
        for (name, gr) in grads.iter() {
            if name.starts_with("att.") && gr.data().iter().any(|&v| v != 0.0) {
                nonzero.push(name.clone());
            }
        }
    }
    nonzero.sort();
    nonzero.dedup();
    let abl = outcome(
        nonzero.is_empty(),
        if nonzero.is_empty() {
            "policy none: enc_o.* grads from Q_nav zero; model off: att.* grads zero".to_string()
        } else {
            format!("nonzero gradients: {}", nonzero.join(", "))
        },
    );
    all(vec![("singleton", single), ("permutation", perm), ("ablation", abl)])
}

/// One step through both implementations; the simulator's transition if
/// they agree and every invariant holds.
fn audited(task: &TaskSpec, w: &sim::WorldState, a: ActionSpec) -> Result<sim::Transition, String> {
    if sim::visible_objects(w) != reference::visible(w) {
        return Err("visible sets differ".into());
    }
    let t = sim::transition(w, task, a).map_err(|e| e.to_string())?;
    let (rw, rr, rd) = reference::step(task, w, a);
    if t.world != rw || t.reward.to_bits() != rr.to_bits() || t.done != rd {
        return Err(format!("state divergence after {a:?} in {}", task.name));
    }
    t.world.check_invariants().map_err(|e| e.to_string())?;
    reference::frame_check(w, &t.world, a)?;
    Ok(t)
}

fn criterion_4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut steps = 0usize;
    let mut applied: BTreeMap<String, usize> = BTreeMap::new();
    let mut count = |a: ActionSpec, t: &sim::Transition| {
        if let (true, ActionSpec::Interact(b, _)) = (t.applied, a) {
            *applied.entry(format!("{b:?}")).or_default() += 1;
        }
    };
    let mut episode = 0u64;
    while steps < 10_000 {
        let task = TaskSpec::by_name(TASK_NAMES[episode as usize % TASK_NAMES.len()]).unwrap();
        let (mut w, _) = sim::reset(&task, 1000 + episode);
        episode += 1;
        // cap episodes so the audit sweeps every task
        for _ in 0..300 {
            let n = sim::visible_objects(&w).len();
            let a = ActionSpec::from_flat(rng.gen_range(0..sim::num_actions(n)));
            let t = match audited(&task, &w, a) {
                Ok(t) => t,
                Err(e) => return outcome(false, format!("random step {steps}: {e}")),
            };
            count(a, &t);
            steps += 1;
            w = t.world;
            if t.done || steps == 10_000 {
                break;
            }
        }
    }
    let random_counts = format!("{applied:?}");

    // Scripted manifestations reach slicing, filling and cooking, which
    // random play almost never does.
    applied.clear();
    let mut count = |a: ActionSpec, t: &sim::Transition| {
        if let (true, ActionSpec::Interact(b, _)) = (t.applied, a) {
            *applied.entry(format!("{b:?}")).or_default() += 1;
        }
    };
    let mut scripted = 0usize;
    let mut cooked = 0usize;
    for task in TaskSpec::all() {
        let start = probe::start_world(&task, 0);
        for seq in probe::manifestations(&task, &start) {
            let mut w = start.clone();
            'seq: for &st in &seq.steps {
                let actions: Vec<ActionSpec> = match st {
                    probe::Step::Teleport(id) => match probe::teleport_pose(&w, id) {
                        Some(pose) => {
                            w.teleport(pose);
                            Vec::new()
                        }
                        None => break,
                    },
                    probe::Step::Wait => vec![ActionSpec::Navigate(sim::NavAction::RotateLeft); 4],
                    probe::Step::Act(b, id) => match sim::visible_objects(&w).iter().position(|&v| v == id) {
                        Some(k) => vec![ActionSpec::Interact(b, k)],
                        None => break,
                    },
                };
                for a in actions {
                    let t = match audited(&task, &w, a) {
                        Ok(t) => t,
                        Err(e) => return outcome(false, format!("{} step {scripted}: {e}", seq.name)),
                    };
                    count(a, &t);
                    scripted += 1;
                    cooked += t.world.objects.values().filter(|o| o.props.is_cooked).count()
                        - w.objects.values().filter(|o| o.props.is_cooked).count();
                    w = t.world;
                    if t.done {
                        break 'seq;
                    }
                }
            }
        }
    }
    outcome(
        true,
        format!(
            "{steps} random + {scripted} scripted steps, 0 divergences; effective interactions random {random_counts}, scripted {applied:?}, {cooked} cook events"
        ),
    )
}

fn load_bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_load"));
    c.env("RUST_LOG", "warn");
    c
}

fn criterion_5() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("c.json");
    std::fs::write(
        &cfg,
        r#"{"task": "fill_cup", "seed": 11,
            "net": {"d_o": 8, "d_ego": 8, "d_loc": 4, "d_k": 4, "hidden": 16, "d_a": 4},
            "train": {"budget": 400, "warmup": 100, "eval_every": 200, "checkpoint_every": 200,
                      "eval_frames": 200, "batch_size": 8}}"#,
    )
    .unwrap();
    let mut csvs = Vec::new();
    for run in ["a", "b"] {
        let out = tmp.path().join(run);
        let o = load_bin()
            .args(["train", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()])
            .output()
            .unwrap();
        if !o.status.success() {
            return outcome(false, format!("train failed: {}", String::from_utf8_lossy(&o.stderr)));
        }
        csvs.push(std::fs::read(out.join("metrics.csv")).unwrap());
    }
    let csv = outcome(csvs[0] == csvs[1], format!("metrics.csv {} bytes, identical: {}", csvs[0].len(), csvs[0] == csvs[1]));

    // replay from a written trace
    let mut mismatches = 0;
    let mut total = 0;
    for (k, name) in TASK_NAMES.iter().enumerate() {
        let task = TaskSpec::by_name(name).unwrap();
        let seed = 50 + k as u64;
        let mut env = Kitchen::new(task.clone(), seed);
        env.record_trace(true);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut seen = vec![env.observation().clone()];
        for _ in 0..300 {
            let n = env.observation().num_patches();
            let o = env.step(ActionSpec::from_flat(rng.gen_range(0..sim::num_actions(n)))).unwrap();
            seen.push(o.obs);
            if o.done {
                break;
            }
        }
        let mut buf = Vec::new();
        sim::write_trace(env.trace(), &mut buf).unwrap();
        let actions: Vec<ActionSpec> = sim::read_trace(buf.as_slice()).unwrap().iter().map(|r| r.action).collect();
        let again = sim::replay(&task, seed, &actions).unwrap();
        total += seen.len();
        let bits = |o: &sim::ObservationBundle| -> Vec<u64> {
            let mut v: Vec<u64> = o.ego.data().iter().map(|x| x.to_bits()).collect();
            for p in &o.patches {
                v.extend(p.data().iter().map(|x| x.to_bits()));
            }
            v.extend(o.loc.iter().map(|x| x.to_bits()));
            v.extend(o.patch_ids.iter().map(|&i| i as u64));
            v
        };
        if again.len() != seen.len() {
            mismatches += seen.len();
            continue;
        }
        mismatches += seen.iter().zip(&again).filter(|(a, b)| bits(a) != bits(b)).count();
    }
    let replay = outcome(mismatches == 0, format!("{total} observations replayed, {mismatches} mismatches"));
    all(vec![("csv", csv), ("replay", replay)])
}

// Long runs.

struct Long {
    root: PathBuf,
    budget: u64,
    jobs: usize,
}

impl Long {
    fn from_env() -> Self {
        let env = |k: &str| std::env::var(k).ok();
        Self {
            root: env("ACCEPTANCE_RUNS")
                .map(PathBuf::from)
                .unwrap_or_else(|| Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance-runs")),
            budget: env("ACCEPTANCE_BUDGET").and_then(|v| v.parse().ok()).unwrap_or(200_000),
            jobs: env("ACCEPTANCE_JOBS")
                .and_then(|v| v.parse().ok())
                .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get())),
        }
    }

    fn dir(&self, task: &str, method: &str, seed: u64) -> PathBuf {
        self.root.join(task).join(method).join(format!("seed{seed}"))
    }

    fn finished(&self, dir: &Path) -> bool {
        load_core::train::read_metrics(&dir.join("metrics.csv"))
            .is_ok_and(|rows| rows.last().is_some_and(|r| r.step >= self.budget))
            && dir.join("final.bin").exists()
    }

    /// Trains every missing run, `jobs` processes at a time.
    fn ensure(&self, runs: &[(&str, &str, u64, Vec<&str>)]) -> Result<(), String> {
        let todo: Vec<_> = runs
            .iter()
            .filter(|(t, m, s, _)| !self.finished(&self.dir(t, m, *s)))
            .collect();
        for chunk in todo.chunks(self.jobs.max(1)) {
            let mut children = Vec::new();
            for (task, method, seed, extra) in chunk {
                let out = self.dir(task, method, *seed);
                let mut cmd = load_bin();
                cmd.args(["train", "--task", task, "--seed", &seed.to_string()])
                    .args(["--budget", &self.budget.to_string(), "--out", out.to_str().unwrap()])
                    .args(extra);
                children.push((out, cmd.spawn().map_err(|e| e.to_string())?));
            }
            for (out, mut c) in children {
                let st = c.wait().map_err(|e| e.to_string())?;
                if !st.success() {
                    return Err(format!("{} failed ({st})", out.display()));
                }
            }
        }
        Ok(())
    }

    fn final_sr(&self, task: &str, method: &str, seeds: &[u64]) -> f64 {
        let v: Vec<f64> = seeds
            .iter()
            .map(|&s| load_run(&self.dir(task, method, s)).map_or(0.0, |r| r.curve.last().map_or(0.0, |p| p.1)))
            .collect();
        v.iter().sum::<f64>() / v.len() as f64
    }
}

const SEEDS3: [u64; 3] = [0, 1, 2];
const MAIN_TASKS: [&str; 4] = ["toast_bread", "fill_cup", "cook_potato", "apple_plate_table"];

fn aux_runs<'a>(tasks: &[&'a str], methods: &[&'a str]) -> Vec<(&'a str, &'a str, u64, Vec<&'a str>)> {
    let mut v = Vec::new();
    for &t in tasks {
        for &m in methods {
            for s in SEEDS3 {
                v.push((t, m, s, vec!["--aux", m]));
            }
        }
    }
    v
}

fn criterion_6(long: &Long) -> Outcome {
    if let Err(e) = long.ensure(&aux_runs(&MAIN_TASKS, &["oracle", "load", "none"])) {
        return outcome(false, e);
    }
    let mut runs = Vec::new();
    for t in MAIN_TASKS {
        for m in ["oracle", "load", "none"] {
            for s in SEEDS3 {
                match load_run(&long.dir(t, m, s)) {
                    Ok(r) => runs.push(r),
                    Err(e) => return outcome(false, e.to_string()),
                }
            }
        }
    }
    let rep = match build_report(&runs) {
        Ok(r) => r,
        Err(e) => return outcome(false, e.to_string()),
    };
    let auc = |t: &str, m: &str| rep.auc.get(t).and_then(|x| x.get(m)).copied().unwrap_or(f64::NAN);
    let mut a_ok = true;
    let mut b_ok = true;
    let mut c_count = 0;
    let mut notes = Vec::new();
    for t in MAIN_TASKS {
        let (so, sl) = (long.final_sr(t, "oracle", &SEEDS3), long.final_sr(t, "load", &SEEDS3));
        a_ok &= so >= 0.9;
        b_ok &= sl >= 0.8;
        let (al, an) = (auc(t, "load"), auc(t, "none"));
        if 100.0 >= al && al >= an {
            c_count += 1;
        }
        if matches!(t, "toast_bread" | "fill_cup") {
            b_ok &= al > an;
        }
        notes.push(format!("{t} sr oracle {so:.2} load {sl:.2}, %AUC load {al:.1} none {an:.1}"));
    }
    let c_ok = c_count >= 3;
    outcome(
        a_ok && b_ok && c_ok,
        format!(
            "(a) {} (b) {} (c) {} [{c_count}/4]; {}",
            pf(a_ok),
            pf(b_ok),
            pf(c_ok),
            notes.join("; ")
        ),
    )
}

fn pf(ok: bool) -> &'static str {
    if ok {
        "PASS"
    } else {
        "FAIL"
    }
}

fn criterion_7(long: &Long) -> Outcome {
    let task = "toast_bread";
    if let Err(e) = long.ensure(&aux_runs(&[task], &["load", "ocn", "cobra"])) {
        return outcome(false, e);
    }
    let data = long.root.join("programmatic.jsonl");
    let out = long.root.join("probe");
    let mut run_args: Vec<String> = Vec::new();
    for m in ["load", "ocn", "cobra"] {
        for s in SEEDS3 {
            run_args.push("--run".into());
            run_args.push(long.dir(task, m, s).display().to_string());
        }
    }
    let steps: [Vec<String>; 2] = [
        ["dataset", "--kind", "programmatic", "--out", data.to_str().unwrap()].map(String::from).to_vec(),
        [vec!["probe".to_string(), "--dataset".into(), data.display().to_string(), "--out".into(), out.display().to_string()], run_args].concat(),
    ];
    for args in &steps {
        match load_bin().args(args).output() {
            Ok(o) if o.status.success() => {}
            Ok(o) => return outcome(false, String::from_utf8_lossy(&o.stderr).to_string()),
            Err(e) => return outcome(false, e.to_string()),
        }
    }
    let csv = std::fs::read_to_string(out.join("probe.csv")).unwrap_or_default();
    let mut acc: BTreeMap<(String, String), Vec<f64>> = BTreeMap::new();
    for line in csv.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        let enc = f[0].split('/').next().unwrap_or(f[0]).to_string();
        acc.entry((enc, f[1].to_string())).or_default().push(f[3].parse().unwrap_or(f64::NAN));
    }
    let mean = |e: &str, t: &str| {
        acc.get(&(e.to_string(), t.to_string()))
            .map_or(f64::NAN, |v| v.iter().sum::<f64>() / v.len() as f64)
    };
    let (lp, op) = (mean("load", "properties"), mean("ocn", "properties"));
    let (lc, cc) = (mean("load", "containment"), mean("cobra", "containment"));
    let orc = mean("oracle_features", "properties");
    let ok = lp - op >= 0.10 && lc > cc && orc >= 0.99;
    outcome(
        ok,
        format!("properties load {lp:.3} ocn {op:.3}; containment load {lc:.3} cobra {cc:.3}; oracle properties {orc:.3}"),
    )
}

fn criterion_8(long: &Long) -> Outcome {
    let t = "toast_bread";
    let runs: Vec<(&str, &str, u64, Vec<&str>)> = SEEDS3
        .iter()
        .flat_map(|&s| {
            [
                (t, "none", s, vec!["--aux", "none"]),
                (t, "none+policy_att=none", s, vec!["--aux", "none", "--attention-policy", "none"]),
                (t, "none+policy_att=average", s, vec!["--aux", "none", "--attention-policy", "average"]),
                (t, "load", s, vec!["--aux", "load"]),
                (t, "load+model_att=off", s, vec!["--aux", "load", "--attention-model", "off"]),
            ]
        })
        .collect();
    if let Err(e) = long.ensure(&runs) {
        return outcome(false, e);
    }
    let sr = |m: &str| long.final_sr(t, m, &SEEDS3);
    let (full, none, avg) = (sr("none"), sr("none+policy_att=none"), sr("none+policy_att=average"));
    let (on, off) = (sr("load"), sr("load+model_att=off"));
    let ok = none <= 0.5 && avg <= 0.5 && full > 0.8 && off >= 0.5 && off <= on;
    outcome(
        ok,
        format!("policy attention full {full:.2} average {avg:.2} none {none:.2}; model attention on {on:.2} off {off:.2}"),
    )
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    if args.iter().any(|a| a == "--list") {
        return;
    }
    let long_wanted = args.iter().any(|a| a == "--ignored" || a == "--include-ignored")
        || std::env::var("ACCEPTANCE_FULL").is_ok_and(|v| v == "1");
    let only_long = args.iter().any(|a| a == "--ignored");

    type Check = fn() -> Outcome;
    let quick: [(u32, &str, Check); 5] = [
        (1, "gradient integrity", criterion_1),
        (2, "analytic loss values", criterion_2),
        (3, "attention contracts", criterion_3),
        (4, "environment oracle equivalence", criterion_4),
        (5, "determinism", criterion_5),
    ];
    let mut failed = 0;
    let mut line = |n: u32, name: &str, o: Outcome| {
        println!("criterion {n} ({name}): {} - {}", pf(o.ok), o.detail);
        if !o.ok {
            failed += 1;
        }
    };
    if !only_long {
        for (n, name, f) in quick {
            line(n, name, f());
        }
    }
    let long: [(u32, &str, fn(&Long) -> Outcome); 3] = [
        (6, "desk-scale learning", criterion_6),
        (7, "probe analysis", criterion_7),
        (8, "attention ablations", criterion_8),
    ];
    if long_wanted {
        let l = Long::from_env();
        for (n, name, f) in long {
            line(n, name, f(&l));
        }
    } else {
        for (n, name, _) in long {
            println!("criterion {n} ({name}): SKIPPED - full-budget training matrix; run with --ignored or ACCEPTANCE_FULL=1");
        }
    }
    if failed > 0 {
        eprintln!("{failed} criteria failed");
        std::process::exit(1);
    }
}
