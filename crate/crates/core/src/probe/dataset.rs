//! Programmatic and random interaction datasets with ground-truth labels.

use std::io::{BufRead, Write};

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::sim::{
    num_actions, render_object, spawn_cell, transition, visibility::in_reach, visible_objects,
    ActionSpec, Cell, Category, Interaction, NavAction, ObjectId, Parent, Pitch, Pose, SimError,
    TaskSpec, WorldState, Yaw, GRID,
};
use crate::train::episode_seed;

/// Per-object probe labels.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Labels {
    pub category: u8,
    /// is_on, is_open, is_cooked, is_filled, is_sliced, is_picked_up
    pub properties: [bool; 6],
    /// inside something, has something inside
    pub containment: [bool; 2],
}

pub const PROPERTY_NAMES: [&str; 6] = [
    "is_on",
    "is_open",
    "is_cooked",
    "is_filled",
    "is_sliced",
    "is_picked_up",
];
pub const CONTAINMENT_NAMES: [&str; 2] = ["is_inside", "has_inside"];

pub fn labels(world: &WorldState, id: ObjectId) -> Result<Labels, SimError> {
    let o = world.object(id)?;
    let p = o.props;
    Ok(Labels {
        category: o.category.index() as u8,
        properties: [
            p.is_on,
            p.is_open,
            p.is_cooked,
            p.is_filled,
            p.is_sliced,
            p.is_picked_up,
        ],
        containment: [
            matches!(o.parent, Some(Parent::Object(_))),
            world.first_child(id).is_some(),
        ],
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Frame {
    Before,
    After,
}

/// One `(state, action, next state)` tuple labelled at the acted-on object.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabeledSample {
    pub source: String,
    pub task: String,
    pub sequence: String,
    pub action: ActionSpec,
    pub target: ObjectId,
    pub applied: bool,
    pub before: WorldState,
    pub after: WorldState,
    /// State the patch and labels were taken from: the next state when the
    /// target is still visible there, otherwise the current one.
    pub frame: Frame,
    #[serde(with = "f32_base64")]
    pub patch: Vec<f32>,
    pub labels: Labels,
}

impl LabeledSample {
    pub fn frame_world(&self) -> &WorldState {
        match self.frame {
            Frame::Before => &self.before,
            Frame::After => &self.after,
        }
    }

    fn new(
        source: &str,
        task: &TaskSpec,
        sequence: String,
        before: WorldState,
        action: ActionSpec,
        target: ObjectId,
        applied: bool,
        after: WorldState,
    ) -> Result<Self, SimError> {
        let frame = if visible_objects(&after).contains(&target) {
            Frame::After
        } else {
            Frame::Before
        };
        let w = match frame {
            Frame::Before => &before,
            Frame::After => &after,
        };
        let patch = render_object(w, target).data().iter().map(|&v| v as f32).collect();
        let labels = labels(w, target)?;
        Ok(Self {
            source: source.to_string(),
            task: task.name.to_string(),
            sequence,
            action,
            target,
            applied,
            before,
            after,
            frame,
            patch,
            labels,
        })
    }
}

mod f32_base64 {
    use super::*;
    use serde::{Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &[f32], s: S) -> Result<S::Ok, S::Error> {
        let bytes: Vec<u8> = v.iter().flat_map(|x| x.to_le_bytes()).collect();
        s.serialize_str(&STANDARD.encode(bytes))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f32>, D::Error> {
        let text = String::deserialize(d)?;
        let bytes = STANDARD.decode(text).map_err(serde::de::Error::custom)?;
        if bytes.len() % 4 != 0 {
            return Err(serde::de::Error::custom("payload length not a multiple of 4"));
        }
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect())
    }
}

pub fn write_dataset(samples: &[LabeledSample], mut w: impl Write) -> std::io::Result<()> {
    for s in samples {
        serde_json::to_writer(&mut w, s)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

pub fn read_dataset(r: impl BufRead) -> Result<Vec<LabeledSample>, SimError> {
    r.lines()
        .enumerate()
        .filter(|(_, l)| l.as_ref().map_or(true, |l| !l.trim().is_empty()))
        .map(|(i, l)| {
            let l = l?;
            serde_json::from_str(&l).map_err(|e| SimError::Trace(format!("line {}: {e}", i + 1)))
        })
        .collect()
}

/// One scripted step of a programmatic sequence.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Step {
    /// Jump to a pose from which the object is visible and within reach.
    Teleport(ObjectId),
    Act(Interaction, ObjectId),
    /// Rotate in place for a full turn so timed effects can elapse.
    Wait,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Sequence {
    pub task: TaskSpec,
    pub name: String,
    pub steps: Vec<Step>,
}

/// First pose, nearest cells first, that sees `id` within reach.
pub fn teleport_pose(world: &WorldState, id: ObjectId) -> Option<Pose> {
    let target = world.objects.get(&id)?.cell;
    let mut cells: Vec<Cell> = (0..GRID)
        .flat_map(|r| (0..GRID).map(move |c| Cell::new(c, r)))
        .collect();
    cells.sort_by_key(|c| (c.manhattan(target), c.row, c.col));
    let mut probe = world.clone();
    for cell in cells {
        for yaw in [Yaw::N, Yaw::E, Yaw::S, Yaw::W] {
            for pitch in [Pitch::Level, Pitch::Down] {
                let pose = Pose { cell, yaw, pitch };
                if !in_reach(&pose, target) {
                    continue;
                }
                probe.teleport(pose);
                if visible_objects(&probe).contains(&id) {
                    return Some(pose);
                }
            }
        }
    }
    None
}

fn ids_where(world: &WorldState, pred: impl Fn(Category) -> bool) -> Vec<ObjectId> {
    world
        .objects
        .values()
        .filter(|o| pred(o.category))
        .map(|o| o.id)
        .collect()
}

/// First instance of every distinct category matching `pred`.
fn first_of_each(world: &WorldState, pred: impl Fn(Category) -> bool) -> Vec<ObjectId> {
    let mut seen = Vec::new();
    let mut out = Vec::new();
    for o in world.objects.values() {
        if pred(o.category) && !seen.contains(&o.category) {
            seen.push(o.category);
            out.push(o.id);
        }
    }
    out
}

/// Knob controlling `burner`, if it is a stove burner.
fn knob_for(world: &WorldState, burner: ObjectId) -> Option<ObjectId> {
    world
        .objects
        .values()
        .find(|k| k.category == Category::StoveKnob && k.link == Some(burner))
        .map(|k| k.id)
}

/// Every manifestation of the abstract task types in one kitchen.
pub fn manifestations(task: &TaskSpec, world: &WorldState) -> Vec<Sequence> {
    use Interaction::*;
    use Step::*;
    let name = |o: ObjectId| format!("{:?}#{o}", world.objects[&o].category);
    let pickup = ids_where(world, |c| c.flags().pickupable);
    let receptacles = ids_where(world, |c| c.flags().receptacle);
    let mut out = Vec::new();
    let mut push = |label: String, steps: Vec<Step>| {
        out.push(Sequence {
            task: task.clone(),
            name: label,
            steps,
        })
    };
    // Opening a closed container is part of the sequence that needs it.
    let fetch = |x: ObjectId| {
        let mut v: Vec<Step> = world
            .ancestors(x)
            .into_iter()
            .filter(|a| {
                let o = &world.objects[a];
                o.category.flags().openable && !o.props.is_open
            })
            .flat_map(|a| [Teleport(a), Act(Open, a)])
            .collect();
        v.extend([Teleport(x), Act(Pickup, x)]);
        v
    };
    let deliver = |y: ObjectId| {
        let o = &world.objects[&y];
        let mut v = vec![Teleport(y)];
        if o.category.flags().openable && !o.props.is_open {
            v.push(Act(Open, y));
        }
        v.push(Act(Put, y));
        v
    };
    for &x in &pickup {
        push(format!("pickup {}", name(x)), fetch(x));
    }
    for x in ids_where(world, |c| c.flags().toggleable) {
        push(format!("turnon {}", name(x)), vec![Teleport(x), Act(TurnOn, x)]);
    }
    for x in ids_where(world, |c| c.flags().openable) {
        push(format!("open {}", name(x)), vec![Teleport(x), Act(Open, x)]);
    }
    for x in first_of_each(world, |c| c.flags().fillable) {
        for y in ids_where(world, |c| c == Category::SinkBasin) {
            let mut steps = fetch(x);
            steps.extend(deliver(y));
            steps.push(Act(Fill, x));
            push(format!("fill {} with {}", name(x), name(y)), steps);
        }
    }
    for &x in &pickup {
        for &y in &receptacles {
            let mut steps = fetch(x);
            steps.extend(deliver(y));
            push(format!("place {} in {}", name(x), name(y)), steps);
        }
    }
    for x in ids_where(world, |c| c.flags().sliceable) {
        for &y in &pickup {
            let mut steps = fetch(y);
            steps.extend([Teleport(x), Act(Slice, x)]);
            push(format!("slice {} with {}", name(x), name(y)), steps);
        }
    }
    let heaters = ids_where(world, |c| c.is_direct_heater() || c == Category::StoveBurner);
    for x in ids_where(world, |c| c.flags().cookable) {
        for y in ids_where(world, |c| c.is_cookware()) {
            for &z in &heaters {
                let switch = knob_for(world, z).unwrap_or(z);
                let mut steps = fetch(x);
                steps.extend(deliver(y));
                steps.extend([Act(Pickup, y)]);
                steps.extend(deliver(z));
                steps.extend([
                    Teleport(switch),
                    Act(TurnOn, switch),
                    Wait,
                    Act(TurnOff, switch),
                ]);
                push(
                    format!("cook {} in {} on {}", name(x), name(y), name(z)),
                    steps,
                );
            }
        }
    }
    out
}

/// Executes a sequence from the start world; stops early when a target
/// cannot be reached or seen. Every interaction attempted is recorded.
pub fn run_sequence(seq: &Sequence, start: &WorldState) -> Result<Vec<LabeledSample>, SimError> {
    let mut world = start.clone();
    let mut out = Vec::new();
    for &step in &seq.steps {
        match step {
            Step::Teleport(id) => match teleport_pose(&world, id) {
                Some(pose) => world.teleport(pose),
                None => break,
            },
            Step::Wait => {
                let turn = ActionSpec::Navigate(NavAction::RotateLeft);
                for _ in 0..4 {
                    if world.done {
                        break;
                    }
                    world = transition(&world, &seq.task, turn)?.world;
                }
                if world.done {
                    break;
                }
            }
            Step::Act(base, id) => {
                let Some(patch) = visible_objects(&world).iter().position(|&v| v == id) else {
                    break;
                };
                let action = ActionSpec::Interact(base, patch);
                let t = transition(&world, &seq.task, action)?;
                let before = std::mem::replace(&mut world, t.world.clone());
                out.push(LabeledSample::new(
                    "programmatic",
                    &seq.task,
                    seq.name.clone(),
                    before,
                    action,
                    id,
                    t.applied,
                    t.world,
                )?);
                if t.done {
                    break;
                }
            }
        }
    }
    Ok(out)
}

/// Starting world shared by every sequence of a task.
pub fn start_world(task: &TaskSpec, seed: u64) -> WorldState {
    task.world_at(spawn_cell(seed), seed)
}

/// All manifestations across every registered kitchen, executed in
/// parallel; the output order does not depend on the thread count.
pub fn gen_programmatic(seed: u64, threads: usize) -> Result<Vec<LabeledSample>, SimError> {
    let jobs: Vec<(Sequence, WorldState)> = TaskSpec::all()
        .into_iter()
        .flat_map(|task| {
            let w = start_world(&task, seed);
            manifestations(&task, &w)
                .into_iter()
                .map(move |s| (s, w.clone()))
        })
        .collect();
    let threads = threads.max(1).min(jobs.len().max(1));
    let chunk = jobs.len().div_ceil(threads).max(1);
    let parts: Vec<Result<Vec<LabeledSample>, SimError>> = std::thread::scope(|s| {
        let handles: Vec<_> = jobs
            .chunks(chunk)
            .map(|part| {
                s.spawn(move || {
                    let mut out = Vec::new();
                    for (seq, w) in part {
                        out.extend(run_sequence(seq, w)?);
                    }
                    Ok(out)
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("dataset worker panicked"))
            .collect()
    });
    let mut out = Vec::new();
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

/// Uniform-random rollouts of up to 500 steps, cycling through the tasks;
/// keeps only interaction steps until `n` are collected.
pub fn gen_random(seed: u64, n: usize) -> Result<Vec<LabeledSample>, SimError> {
    let tasks = TaskSpec::all();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    let mut episode = 0u64;
    while out.len() < n {
        let task = &tasks[episode as usize % tasks.len()];
        let mut world = start_world(task, episode_seed(seed, episode));
        while out.len() < n && !world.done {
            let visible = visible_objects(&world);
            let action = ActionSpec::from_flat(rng.gen_range(0..num_actions(visible.len())));
            let t = transition(&world, task, action)?;
            let before = std::mem::replace(&mut world, t.world.clone());
            if let ActionSpec::Interact(_, p) = action {
                out.push(LabeledSample::new(
                    "random",
                    task,
                    format!("episode {episode}"),
                    before,
                    action,
                    visible[p],
                    t.applied,
                    t.world,
                )?);
            }
        }
        episode += 1;
    }
    Ok(out)
}
