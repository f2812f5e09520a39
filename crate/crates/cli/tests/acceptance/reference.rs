//! Second, independent implementation of the kitchen's interaction rule
//! table, visibility and cooking timers. Shares only the state types with
//! the simulator; every rule is restated here.

use load_core::sim::{
    ActionSpec, Category, Cell, Interaction, NavAction, ObjectId, Parent, Pitch, TaskSpec,
    WorldState, Yaw,
};
use Category::*;

pub fn pickupable(c: Category) -> bool {
    matches!(
        c,
        Bread | BreadSliced | Knife | Cup | Pot | Pan | Potato | PotatoSliced | Apple | AppleSliced
            | Plate | Tomato | TomatoSliced | Lettuce | LettuceSliced | Egg
    )
}

fn receptacle(c: Category) -> bool {
    matches!(
        c,
        Toaster | SinkBasin | StoveBurner | Pot | Pan | Plate | DiningTable | CounterTop | Fridge | Microwave
    )
}

fn openable(c: Category) -> bool {
    matches!(c, Fridge | Microwave)
}

fn toggleable(c: Category) -> bool {
    matches!(c, Toaster | Faucet | StoveKnob | Microwave | CoffeeMachine)
}

fn fillable(c: Category) -> bool {
    matches!(c, Cup | Pot)
}

fn cookable(c: Category) -> bool {
    matches!(c, Bread | BreadSliced | Potato | PotatoSliced | Egg)
}

fn sliced(c: Category) -> Option<Category> {
    Some(match c {
        Bread => BreadSliced,
        Potato => PotatoSliced,
        Apple => AppleSliced,
        Tomato => TomatoSliced,
        Lettuce => LettuceSliced,
        _ => return None,
    })
}

fn whitelist(r: Category, x: Category) -> bool {
    match r {
        Plate => matches!(x, AppleSliced | Apple | TomatoSliced | LettuceSliced),
        Toaster => x == BreadSliced,
        Pot | Pan => matches!(x, Potato | PotatoSliced | Egg),
        SinkBasin => matches!(x, Cup | Pot | Plate),
        StoveBurner => matches!(x, Pot | Pan),
        DiningTable | CounterTop | Fridge | Microwave => pickupable(x),
        _ => false,
    }
}

const DIRS: [(i32, i32); 4] = [(0, -1), (1, 0), (0, 1), (-1, 0)];
const YAWS: [Yaw; 4] = [Yaw::N, Yaw::E, Yaw::S, Yaw::W];

fn yaw_idx(y: Yaw) -> usize {
    YAWS.iter().position(|&v| v == y).unwrap()
}

fn ahead(c: Cell, yaw: usize, k: i32) -> Cell {
    let (dc, dr) = DIRS[yaw % 4];
    Cell::new(c.col + dc * k, c.row + dr * k)
}

fn side(c: Cell, yaw: usize, k: i32) -> Cell {
    ahead(c, yaw + 1, k)
}

fn chain(w: &WorldState, id: ObjectId) -> Vec<ObjectId> {
    let mut v = Vec::new();
    let mut cur = id;
    while let Some(Parent::Object(p)) = w.objects[&cur].parent {
        assert!(v.len() <= w.objects.len(), "containment cycle at {id}");
        v.push(p);
        cur = p;
    }
    v
}

pub fn carried(w: &WorldState, id: ObjectId) -> bool {
    let top = chain(w, id).last().copied().unwrap_or(id);
    w.objects[&top].parent == Some(Parent::Agent)
}

fn closed_in(w: &WorldState, id: ObjectId) -> bool {
    chain(w, id).iter().any(|a| {
        let o = &w.objects[a];
        openable(o.category) && !o.props.is_open
    })
}

pub fn subtree(w: &WorldState, id: ObjectId) -> Vec<ObjectId> {
    w.objects
        .keys()
        .copied()
        .filter(|&o| o == id || chain(w, o).contains(&id))
        .collect()
}

pub fn visible(w: &WorldState) -> Vec<ObjectId> {
    let yaw = yaw_idx(w.pose.yaw);
    let layer = if w.pose.pitch == Pitch::Level { 1 } else { 0 };
    let mut cone = Vec::new();
    for d in 0..3 {
        for l in -1..=1 {
            cone.push(side(ahead(w.pose.cell, yaw, d), yaw, l));
        }
    }
    let mut keyed = Vec::new();
    for (&id, o) in &w.objects {
        if closed_in(w, id) {
            continue;
        }
        if carried(w, id) {
            keyed.push((0, if w.held == Some(id) { 0 } else { 1 }, id));
        } else if o.height == layer && cone.contains(&o.cell) {
            let d = (o.cell.col - w.pose.cell.col).abs() + (o.cell.row - w.pose.cell.row).abs();
            keyed.push((d, 1, id));
        }
    }
    keyed.sort();
    keyed.truncate(20);
    keyed.into_iter().map(|k| k.2).collect()
}

pub fn heater(w: &WorldState, id: ObjectId) -> Option<Category> {
    let Some(Parent::Object(p)) = w.objects[&id].parent else {
        return None;
    };
    let po = &w.objects[&p];
    match po.category {
        Toaster | Microwave if po.props.is_on => Some(po.category),
        Pot | Pan => {
            let Some(Parent::Object(b)) = po.parent else {
                return None;
            };
            let lit = w
                .objects
                .values()
                .any(|k| k.category == StoveKnob && k.link == Some(b) && k.props.is_on);
            (w.objects[&b].category == StoveBurner && lit).then_some(StoveBurner)
        }
        _ => None,
    }
}

fn interact(n: &mut WorldState, base: Interaction, t: ObjectId) {
    let o = n.objects[&t].clone();
    let me = n.pose.cell;
    let yaw = yaw_idx(n.pose.yaw);
    if o.cell != me && o.cell != ahead(me, yaw, 1) {
        return;
    }
    let c = o.category;
    match base {
        Interaction::Pickup => {
            if pickupable(c) && n.held.is_none() && !closed_in(n, t) {
                for d in subtree(n, t) {
                    n.objects.get_mut(&d).unwrap().cell = me;
                }
                let m = n.objects.get_mut(&t).unwrap();
                m.parent = Some(Parent::Agent);
                m.props.is_picked_up = true;
                n.held = Some(t);
            }
        }
        Interaction::Put => {
            let Some(x) = n.held else { return };
            let closed = openable(c) && !o.props.is_open;
            if receptacle(c) && !closed && whitelist(c, n.objects[&x].category) && !subtree(n, x).contains(&t) {
                for d in subtree(n, x) {
                    let m = n.objects.get_mut(&d).unwrap();
                    m.cell = o.cell;
                    m.height = o.height;
                }
                let m = n.objects.get_mut(&x).unwrap();
                m.parent = Some(Parent::Object(t));
                m.props.is_picked_up = false;
                n.held = None;
            }
        }
        Interaction::Open | Interaction::Close => {
            let want = base == Interaction::Open;
            if openable(c) && o.props.is_open != want {
                n.objects.get_mut(&t).unwrap().props.is_open = want;
            }
        }
        Interaction::TurnOn | Interaction::TurnOff => {
            let want = base == Interaction::TurnOn;
            if toggleable(c) && o.props.is_on != want {
                n.objects.get_mut(&t).unwrap().props.is_on = want;
            }
        }
        Interaction::Slice => {
            let knife = n.held.is_some_and(|h| n.objects[&h].category == Knife);
            if let (true, Some(v), false) = (knife, sliced(c), carried(n, t)) {
                let m = n.objects.get_mut(&t).unwrap();
                m.category = v;
                m.props.is_sliced = true;
            }
        }
        Interaction::Fill => {
            let in_sink = matches!(o.parent, Some(Parent::Object(p)) if n.objects[&p].category == SinkBasin);
            if fillable(c) && !o.props.is_filled && in_sink {
                n.objects.get_mut(&t).unwrap().props.is_filled = true;
            }
        }
    }
}

fn tick(before: &WorldState, after: &mut WorldState) {
    let ids: Vec<ObjectId> = after.objects.keys().copied().collect();
    let mut heated = Vec::new();
    for id in ids {
        if let (Some(_), Some(h)) = (heater(before, id), heater(after, id)) {
            heated.push((id, h));
        }
    }
    for (id, h) in heated {
        let m = after.objects.get_mut(&id).unwrap();
        if m.cook_timer < 3 {
            m.cook_timer += 1;
            if m.cook_timer == 3 {
                m.props.temperature = load_core::sim::Temperature::Hot;
                if cookable(m.category) {
                    m.props.is_cooked = true;
                    m.cooked_in = Some(h);
                }
            }
        }
    }
}

/// Next world, reward and done flag.
pub fn step(task: &TaskSpec, w: &WorldState, a: ActionSpec) -> (WorldState, f64, bool) {
    let mut n = w.clone();
    match a {
        ActionSpec::Navigate(nav) => {
            let yaw = yaw_idx(n.pose.yaw);
            let c = n.pose.cell;
            let dest = match nav {
                NavAction::MoveAhead => Some(ahead(c, yaw, 1)),
                NavAction::MoveBack => Some(ahead(c, yaw, -1)),
                NavAction::MoveLeft => Some(side(c, yaw, -1)),
                NavAction::MoveRight => Some(side(c, yaw, 1)),
                NavAction::RotateLeft => {
                    n.pose.yaw = YAWS[(yaw + 3) % 4];
                    None
                }
                NavAction::RotateRight => {
                    n.pose.yaw = YAWS[(yaw + 1) % 4];
                    None
                }
                NavAction::LookUp => {
                    n.pose.pitch = Pitch::Level;
                    None
                }
                NavAction::LookDown => {
                    n.pose.pitch = Pitch::Down;
                    None
                }
            };
            if let Some(d) = dest.filter(|d| (0..9).contains(&d.col) && (0..9).contains(&d.row)) {
                n.pose.cell = d;
                let moved: Vec<ObjectId> = n.objects.keys().copied().filter(|&id| carried(&n, id)).collect();
                for id in moved {
                    n.objects.get_mut(&id).unwrap().cell = d;
                }
            }
        }
        ActionSpec::Interact(base, k) => {
            let t = visible(w)[k];
            interact(&mut n, base, t);
        }
    }
    tick(w, &mut n);
    n.step_count += 1;
    let success = task.success(&n);
    let reward = if success { 1.0 - 0.04 } else { -0.04 };
    let done = success || n.step_count == 500;
    n.done = done;
    (n, reward, done)
}

/// Frame property: every change between `before` and `after` is one the
/// rule table names for this action, or a cooking-timer effect.
pub fn frame_check(before: &WorldState, after: &WorldState, a: ActionSpec) -> Result<(), String> {
    let target = match a {
        ActionSpec::Interact(_, k) => Some(visible(before)[k]),
        ActionSpec::Navigate(_) => None,
    };
    let base = match a {
        ActionSpec::Interact(b, _) => Some(b),
        ActionSpec::Navigate(_) => None,
    };
    let moved: Vec<ObjectId> = match (a, target) {
        (ActionSpec::Navigate(_), _) => before.objects.keys().copied().filter(|&i| carried(before, i)).collect(),
        (ActionSpec::Interact(Interaction::Pickup, _), Some(t)) => subtree(before, t),
        (ActionSpec::Interact(Interaction::Put, _), _) => before.held.map(|h| subtree(before, h)).unwrap_or_default(),
        _ => Vec::new(),
    };
    let is = |i: ObjectId, b: Interaction| target == Some(i) && base == Some(b);
    for (&id, x) in &after.objects {
        let y = &before.objects[&id];
        let bad = |what: &str| Err(format!("object {id} ({:?}): unexpected {what} change after {a:?}", y.category));
        if (x.cell != y.cell || x.height != y.height) && !moved.contains(&id) {
            return bad("position");
        }
        let relinked = x.parent != y.parent || x.props.is_picked_up != y.props.is_picked_up;
        if relinked && !(is(id, Interaction::Pickup) || base == Some(Interaction::Put) && before.held == Some(id)) {
            return bad("parent");
        }
        if x.props.is_open != y.props.is_open && !(is(id, Interaction::Open) || is(id, Interaction::Close)) {
            return bad("is_open");
        }
        if x.props.is_on != y.props.is_on && !(is(id, Interaction::TurnOn) || is(id, Interaction::TurnOff)) {
            return bad("is_on");
        }
        if x.props.is_filled != y.props.is_filled && !is(id, Interaction::Fill) {
            return bad("is_filled");
        }
        if (x.props.is_sliced != y.props.is_sliced || x.category != y.category) && !is(id, Interaction::Slice) {
            return bad("slice");
        }
        let cooking = x.cook_timer != y.cook_timer
            || x.cooked_in != y.cooked_in
            || x.props.is_cooked != y.props.is_cooked
            || x.props.temperature != y.props.temperature;
        if cooking && (heater(before, id).is_none() || heater(after, id).is_none()) {
            return bad("cooking");
        }
        if x.link != y.link {
            return bad("link");
        }
    }
    Ok(())
}
