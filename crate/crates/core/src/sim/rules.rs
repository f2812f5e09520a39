//! Navigation, the interaction rule table and timed cooking effects.

use super::actions::{ActionSpec, Interaction, NavAction};
use super::category::Category;
use super::tasks::{burner_active, TaskSpec};
use super::visibility::{in_reach, visible_objects};
use super::world::{ObjectId, Parent, Pitch, Temperature, WorldState, MAX_STEPS};
use super::SimError;

pub const STEP_PENALTY: f64 = -0.04;
pub const SUCCESS_REWARD: f64 = 1.0;
/// Steps an object must spend in an active heater before it is cooked.
pub const COOK_STEPS: u32 = 3;

/// Outcome of one environment step on the pure state.
#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub world: WorldState,
    pub reward: f64,
    pub done: bool,
    pub success: bool,
    /// Whether the requested interaction took effect.
    pub applied: bool,
}

fn navigate(world: &mut WorldState, nav: NavAction) {
    let pose = &mut world.pose;
    let target = match nav {
        NavAction::MoveAhead => Some(pose.cell.offset(pose.yaw.forward(), 1)),
        NavAction::MoveBack => Some(pose.cell.offset(pose.yaw.forward(), -1)),
        NavAction::MoveLeft => Some(pose.cell.offset(pose.yaw.right(), -1)),
        NavAction::MoveRight => Some(pose.cell.offset(pose.yaw.right(), 1)),
        NavAction::RotateLeft => {
            pose.yaw = pose.yaw.turn_left();
            None
        }
        NavAction::RotateRight => {
            pose.yaw = pose.yaw.turn_right();
            None
        }
        NavAction::LookUp => {
            pose.pitch = Pitch::Level;
            None
        }
        NavAction::LookDown => {
            pose.pitch = Pitch::Down;
            None
        }
    };
    if let Some(cell) = target {
        if cell.in_grid() {
            world.pose.cell = cell;
            if let Some(h) = world.held {
                world.move_subtree(h, cell, None);
            }
        }
    }
}

/// Applies an interaction to `target`; returns whether anything changed.
fn interact(world: &mut WorldState, base: Interaction, target: ObjectId) -> bool {
    let obj = world.objects[&target].clone();
    let flags = obj.category.flags();
    if !in_reach(&world.pose, obj.cell) {
        return false;
    }
    match base {
        Interaction::Pickup => {
            if !flags.pickupable || world.held.is_some() || world.enclosed(target) {
                return false;
            }
            let cell = world.pose.cell;
            let o = world.objects.get_mut(&target).unwrap();
            o.parent = Some(Parent::Agent);
            o.props.is_picked_up = true;
            world.held = Some(target);
            world.move_subtree(target, cell, None);
            true
        }
        Interaction::Put => {
            let Some(item) = world.held else {
                return false;
            };
            if world.subtree(item).contains(&target)
                || !flags.receptacle
                || (flags.openable && !obj.props.is_open)
                || !obj.category.accepts(world.objects[&item].category)
            {
                return false;
            }
            let o = world.objects.get_mut(&item).unwrap();
            o.parent = Some(Parent::Object(target));
            o.props.is_picked_up = false;
            world.held = None;
            world.move_subtree(item, obj.cell, Some(obj.height));
            true
        }
        Interaction::Open | Interaction::Close => {
            let want = base == Interaction::Open;
            if !flags.openable || obj.props.is_open == want {
                return false;
            }
            world.objects.get_mut(&target).unwrap().props.is_open = want;
            true
        }
        Interaction::TurnOn | Interaction::TurnOff => {
            let want = base == Interaction::TurnOn;
            if !flags.toggleable || obj.props.is_on == want {
                return false;
            }
            world.objects.get_mut(&target).unwrap().props.is_on = want;
            true
        }
        Interaction::Slice => {
            let holding_knife = world
                .held
                .is_some_and(|h| world.objects[&h].category == Category::Knife);
            let Some(variant) = obj.category.sliced_variant() else {
                return false;
            };
            if !holding_knife || world.is_carried(target) {
                return false;
            }
            let o = world.objects.get_mut(&target).unwrap();
            o.category = variant;
            o.props.is_sliced = true;
            true
        }
        Interaction::Fill => {
            let in_sink = world
                .parent_object(target)
                .is_some_and(|p| p.category == Category::SinkBasin);
            if !flags.fillable || obj.props.is_filled || !in_sink {
                return false;
            }
            world.objects.get_mut(&target).unwrap().props.is_filled = true;
            true
        }
    }
}

/// Heater currently warming `id`, if any.
pub fn active_heater(world: &WorldState, id: ObjectId) -> Option<Category> {
    let parent = world.parent_object(id)?;
    if parent.category.is_direct_heater() && parent.props.is_on {
        return Some(parent.category);
    }
    if parent.category.is_cookware() && burner_active(world, parent.id) {
        return Some(Category::StoveBurner);
    }
    None
}

/// Objects that sat in an active heater for the whole step advance their
/// timer; at [`COOK_STEPS`] they turn hot, and cooked if cookable.
fn tick_heat(before: &WorldState, after: &mut WorldState) {
    let heated: Vec<(ObjectId, Category)> = after
        .objects
        .keys()
        .filter_map(|&id| {
            let now = active_heater(after, id)?;
            active_heater(before, id).map(|_| (id, now))
        })
        .collect();
    for (id, heater) in heated {
        let o = after.objects.get_mut(&id).unwrap();
        if o.cook_timer >= COOK_STEPS {
            continue;
        }
        o.cook_timer += 1;
        if o.cook_timer == COOK_STEPS {
            o.props.temperature = Temperature::Hot;
            if o.category.flags().cookable {
                o.props.is_cooked = true;
                o.cooked_in = Some(heater);
            }
        }
    }
}

/// Advances the world by one action.
pub fn transition(
    world: &WorldState,
    task: &TaskSpec,
    action: ActionSpec,
) -> Result<Transition, SimError> {
    if world.done || world.step_count >= MAX_STEPS {
        return Err(SimError::StepAfterDone);
    }
    let mut next = world.clone();
    let applied = match action {
        ActionSpec::Navigate(nav) => {
            let before = next.pose;
            navigate(&mut next, nav);
            next.pose != before
        }
        ActionSpec::Interact(base, patch) => {
            let visible = visible_objects(world);
            let &target = visible.get(patch).ok_or(SimError::PatchOutOfRange {
                index: patch,
                visible: visible.len(),
            })?;
            interact(&mut next, base, target)
        }
    };
    tick_heat(world, &mut next);
    next.step_count += 1;
    let success = task.success(&next);
    let reward = if success {
        SUCCESS_REWARD + STEP_PENALTY
    } else {
        STEP_PENALTY
    };
    let done = success || next.step_count == MAX_STEPS;
    next.done = done;
    Ok(Transition {
        world: next,
        reward,
        done,
        success,
        applied,
    })
}
