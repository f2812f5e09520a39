//! Toy kitchen: a 9×9 grid world with containment, multi-step cooking,
//! partial observability and procedurally rendered observations.

pub mod actions;
pub mod category;
pub mod observe;
pub mod render;
pub mod rules;
pub mod tasks;
pub mod trace;
pub mod visibility;
pub mod world;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use actions::{num_actions, ActionSpec, Interaction, NavAction, NUM_INTERACTIONS, NUM_NAV};
pub use category::{Category, CategoryFlags, NUM_CATEGORIES};
pub use observe::{loc_vector, observe, observe_cached, ObservationBundle, RenderCache};
pub use render::{render_ego, render_object, render_patch, EGO, PATCH};
pub use rules::{transition, Transition, COOK_STEPS, STEP_PENALTY, SUCCESS_REWARD};
pub use tasks::{TaskKind, TaskSpec, TASK_NAMES};
pub use trace::{changed_objects, read_trace, write_trace, TraceRecord};
pub use visibility::{visible_objects, MAX_VISIBLE};
pub use world::{
    Cell, ObjectId, ObjectState, Parent, Pitch, Pose, Properties, Temperature, WorldState, Yaw,
    GRID, MAX_STEPS,
};

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error("unknown task `{name}`; registered tasks: {registered}")]
    UnknownTask { name: String, registered: String },
    #[error("step called on a finished episode")]
    StepAfterDone,
    #[error("patch index {index} out of range ({visible} visible)")]
    PatchOutOfRange { index: usize, visible: usize },
    #[error("world invariant violated: {0}")]
    InvariantViolation(String),
    #[error("unknown object id {0}")]
    UnknownObject(ObjectId),
    #[error("trace: {0}")]
    Trace(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Spawn cell drawn uniformly from the grid.
pub fn spawn_cell(seed: u64) -> Cell {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = rng.gen_range(0..(GRID * GRID));
    Cell::new(k % GRID, k / GRID)
}

pub fn reset(task: &TaskSpec, seed: u64) -> (WorldState, ObservationBundle) {
    let world = task.world_at(spawn_cell(seed), seed);
    let obs = observe(&world);
    (world, obs)
}

/// Pure step: returns the next world, its observation, reward and done flag.
pub fn step(
    task: &TaskSpec,
    world: &WorldState,
    action: ActionSpec,
) -> Result<(WorldState, ObservationBundle, f64, bool), SimError> {
    let t = transition(world, task, action)?;
    let obs = observe(&t.world);
    Ok((t.world, obs, t.reward, t.done))
}

/// Stateful wrapper used by training and evaluation loops. Rendered
/// tensors are interned so that stored observations share memory.
pub struct Kitchen {
    task: TaskSpec,
    world: WorldState,
    obs: ObservationBundle,
    cache: RenderCache,
    trace: Option<Vec<TraceRecord>>,
}

/// Result of a single [`Kitchen::step`].
#[derive(Clone, Debug)]
pub struct StepOutcome {
    pub obs: ObservationBundle,
    pub reward: f64,
    pub done: bool,
    pub success: bool,
}

impl Kitchen {
    pub fn new(task: TaskSpec, seed: u64) -> Self {
        let world = task.world_at(spawn_cell(seed), seed);
        let mut cache = RenderCache::default();
        let obs = observe_cached(&world, &mut cache);
        Self {
            task,
            world,
            obs,
            cache,
            trace: None,
        }
    }

    pub fn reset(&mut self, seed: u64) -> ObservationBundle {
        self.world = self.task.world_at(spawn_cell(seed), seed);
        self.obs = observe_cached(&self.world, &mut self.cache);
        if let Some(t) = self.trace.as_mut() {
            t.clear();
        }
        self.obs.clone()
    }

    pub fn record_trace(&mut self, on: bool) {
        self.trace = on.then(Vec::new);
    }

    pub fn trace(&self) -> &[TraceRecord] {
        self.trace.as_deref().unwrap_or(&[])
    }

    pub fn task(&self) -> &TaskSpec {
        &self.task
    }

    pub fn world(&self) -> &WorldState {
        &self.world
    }

    pub fn observation(&self) -> &ObservationBundle {
        &self.obs
    }

    pub fn step(&mut self, action: ActionSpec) -> Result<StepOutcome, SimError> {
        let t = transition(&self.world, &self.task, action)?;
        if let Some(trace) = self.trace.as_mut() {
            trace.push(TraceRecord {
                step: t.world.step_count,
                action,
                reward: t.reward,
                done: t.done,
                agent_pose: t.world.pose,
                changed_object_ids: changed_objects(&self.world, &t.world),
            });
        }
        self.world = t.world;
        self.obs = observe_cached(&self.world, &mut self.cache);
        Ok(StepOutcome {
            obs: self.obs.clone(),
            reward: t.reward,
            done: t.done,
            success: t.success,
        })
    }

    /// Keeps the cache from growing without bound over very long runs.
    pub fn trim_cache(&mut self, max_entries: usize) {
        if self.cache.len() > max_entries {
            self.cache = RenderCache::default();
        }
    }
}

/// Replays `actions` from `reset(task, seed)`, returning every observation.
pub fn replay(
    task: &TaskSpec,
    seed: u64,
    actions: &[ActionSpec],
) -> Result<Vec<ObservationBundle>, SimError> {
    let (mut world, obs) = reset(task, seed);
    let mut out = vec![obs];
    for &a in actions {
        let (w, o, _, _) = step(task, &world, a)?;
        world = w;
        out.push(o);
    }
    Ok(out)
}
