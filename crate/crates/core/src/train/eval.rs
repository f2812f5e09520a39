use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::agent::{act, NetConfig, Percept};
use crate::sim::{num_actions, ActionSpec, Kitchen, SimError, TaskSpec, WorldState};
use crate::tensor::ParamGroup;
use crate::Scalar;

/// Anything that can choose actions in the kitchen.
pub trait Policy {
    fn act(&mut self, world: &WorldState, percept: &Percept, rng: &mut ChaCha8Rng) -> ActionSpec;
}

/// Epsilon-greedy over a frozen Q-network snapshot.
pub struct QPolicy<'a, T> {
    pub params: &'a ParamGroup<T>,
    pub net: &'a NetConfig,
    pub epsilon: f64,
}

impl<T: Scalar> Policy for QPolicy<'_, T> {
    fn act(&mut self, _world: &WorldState, percept: &Percept, rng: &mut ChaCha8Rng) -> ActionSpec {
        act(self.params, self.net, percept, self.epsilon, rng).expect("network forward on a valid percept")
    }
}

/// Uniform over the current action set.
pub struct RandomPolicy;

impl Policy for RandomPolicy {
    fn act(&mut self, _world: &WorldState, percept: &Percept, rng: &mut ChaCha8Rng) -> ActionSpec {
        ActionSpec::from_flat(rng.gen_range(0..num_actions(percept.num_objects())))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalResult {
    pub success_rate: f64,
    pub episodes: usize,
    pub successes: usize,
}

/// Stream seed for evaluation episode `i`.
pub fn episode_seed(seed: u64, i: u64) -> u64 {
    // splitmix64 step
    let mut z = seed
        .wrapping_add(0x9E37_79B9_7F4A_7C15u64.wrapping_mul(i + 1));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Runs one episode; returns `(frames, success)`.
pub fn run_episode<P: Policy>(
    policy: &mut P,
    task: &TaskSpec,
    env_seed: u64,
    aux: crate::agent::AuxMode,
) -> Result<(u32, bool), SimError> {
    let mut env = Kitchen::new(task.clone(), env_seed);
    let mut rng = ChaCha8Rng::seed_from_u64(env_seed ^ 0xA5A5_A5A5);
    let mut frames = 0;
    loop {
        let percept = Percept::new(env.world(), env.observation().clone(), aux)?;
        let a = policy.act(env.world(), &percept, &mut rng);
        let out = env.step(a)?;
        frames += 1;
        if out.done {
            return Ok((frames, out.success));
        }
    }
}

/// Number of evaluation worker threads: `LOAD_KITCHEN_THREADS` if set,
/// otherwise the available parallelism.
pub fn eval_threads() -> usize {
    std::env::var("LOAD_KITCHEN_THREADS")
        .ok()
        .and_then(|v| v.parse().ok())
        .filter(|&n: &usize| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

/// Plays episodes until `frames` environment frames are consumed and reports
/// the success rate over the episodes that finished within that budget.
/// Episode `i` always uses the same seeds, so the result does not depend on
/// the number of worker threads.
pub fn evaluate<P, F>(
    make_policy: F,
    task: &TaskSpec,
    aux: crate::agent::AuxMode,
    frames: u64,
    seed: u64,
    threads: usize,
) -> Result<EvalResult, SimError>
where
    P: Policy,
    F: Fn() -> P + Sync,
{
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<(u32, bool)>>> = Mutex::new(Vec::new());
    let failure: Mutex<Option<SimError>> = Mutex::new(None);
    let covered = |res: &[Option<(u32, bool)>]| {
        let mut sum = 0u64;
        for r in res {
            match r {
                Some((f, _)) => {
                    sum += *f as u64;
                    if sum >= frames {
                        return true;
                    }
                }
                None => return false,
            }
        }
        false
    };
    std::thread::scope(|s| {
        for _ in 0..threads.max(1) {
            s.spawn(|| {
                let mut policy = make_policy();
                loop {
                    if failure.lock().unwrap().is_some() || covered(&results.lock().unwrap()) {
                        return;
                    }
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    match run_episode(&mut policy, task, episode_seed(seed, i as u64), aux) {
                        Ok(r) => {
                            let mut res = results.lock().unwrap();
                            if res.len() <= i {
                                res.resize(i + 1, None);
                            }
                            res[i] = Some(r);
                        }
                        Err(e) => {
                            *failure.lock().unwrap() = Some(e);
                            return;
                        }
                    }
                }
            });
        }
    });
    if let Some(e) = failure.into_inner().unwrap() {
        return Err(e);
    }
    let res = results.into_inner().unwrap();
    let mut used = 0u64;
    let (mut episodes, mut successes) = (0, 0);
    for (f, ok) in res.into_iter().map(|r| r.expect("prefix complete")) {
        used += f as u64;
        if used > frames {
            break;
        }
        episodes += 1;
        successes += ok as usize;
        if used == frames {
            break;
        }
    }
    Ok(EvalResult {
        success_rate: if episodes == 0 {
            0.0
        } else {
            successes as f64 / episodes as f64
        },
        episodes,
        successes,
    })
}

/// Evaluation of a Q-network snapshot with the given epsilon.
pub fn evaluate_policy<T: Scalar>(
    params: &ParamGroup<T>,
    net: &NetConfig,
    task: &TaskSpec,
    frames: u64,
    epsilon: f64,
    seed: u64,
) -> Result<EvalResult, SimError> {
    evaluate(
        || QPolicy {
            params,
            net,
            epsilon,
        },
        task,
        net.aux,
        frames,
        seed,
        eval_threads(),
    )
}
