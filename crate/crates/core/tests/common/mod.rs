#![allow(dead_code)]

use std::collections::{HashSet, VecDeque};

use load_core::agent::Percept;
use load_core::sim::{
    transition, visible_objects, ActionSpec, Category, Interaction, NavAction, Pose, TaskSpec,
    WorldState,
};
use load_core::train::Policy;
use rand_chacha::ChaCha8Rng;

/// Interaction with a visible object of `category` that takes effect in `world`.
pub fn effective_interaction(
    task: &TaskSpec,
    world: &WorldState,
    base: Interaction,
    category: Category,
) -> Option<ActionSpec> {
    visible_objects(world)
        .iter()
        .enumerate()
        .filter(|(_, id)| world.objects[id].category == category)
        .map(|(i, _)| ActionSpec::Interact(base, i))
        .find(|&a| transition(world, task, a).map(|t| t.applied).unwrap_or(false))
}

/// Breadth-first search over navigation for the nearest pose where the
/// subgoal interaction takes effect; returns the first action to take.
pub fn plan(
    task: &TaskSpec,
    world: &WorldState,
    base: Interaction,
    category: Category,
) -> Option<ActionSpec> {
    if let Some(a) = effective_interaction(task, world, base, category) {
        return Some(a);
    }
    let mut seen: HashSet<Pose> = HashSet::from([world.pose]);
    let mut queue: VecDeque<(WorldState, ActionSpec)> = VecDeque::new();
    for nav in NavAction::ALL {
        let a = ActionSpec::Navigate(nav);
        let w = transition(world, task, a).ok()?.world;
        if seen.insert(w.pose) {
            queue.push_back((w, a));
        }
    }
    while let Some((w, first)) = queue.pop_front() {
        if w.done {
            continue;
        }
        if effective_interaction(task, &w, base, category).is_some() {
            return Some(first);
        }
        for nav in NavAction::ALL {
            let Ok(t) = transition(&w, task, ActionSpec::Navigate(nav)) else {
                continue;
            };
            if seen.insert(t.world.pose) {
                queue.push_back((t.world, first));
            }
        }
    }
    None
}

/// Scripted policy following a fixed list of subgoals, then idling.
pub struct Scripted {
    pub task: TaskSpec,
    pub goals: Vec<(Interaction, Category)>,
    pub next: usize,
}

impl Scripted {
    pub fn toast() -> Self {
        Self {
            task: TaskSpec::by_name("toast_bread").unwrap(),
            goals: vec![
                (Interaction::Pickup, Category::BreadSliced),
                (Interaction::Put, Category::Toaster),
                (Interaction::TurnOn, Category::Toaster),
            ],
            next: 0,
        }
    }
}

impl Policy for Scripted {
    fn act(&mut self, world: &WorldState, _p: &Percept, _rng: &mut ChaCha8Rng) -> ActionSpec {
        if world.step_count == 0 {
            self.next = 0;
        }
        let idle = ActionSpec::Navigate(NavAction::RotateLeft);
        let Some(&(base, cat)) = self.goals.get(self.next) else {
            return idle;
        };
        match plan(&self.task, world, base, cat) {
            Some(a) => {
                if a.is_interaction() {
                    self.next += 1;
                }
                a
            }
            None => idle,
        }
    }
}
