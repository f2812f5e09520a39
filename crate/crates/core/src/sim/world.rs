use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::category::Category;
use super::SimError;

pub const GRID: i32 = 9;
pub const MAX_STEPS: u32 = 500;

pub type ObjectId = u32;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Cell {
    pub col: i32,
    pub row: i32,
}

impl Cell {
    pub fn new(col: i32, row: i32) -> Self {
        Self { col, row }
    }

    pub fn in_grid(self) -> bool {
        (0..GRID).contains(&self.col) && (0..GRID).contains(&self.row)
    }

    pub fn offset(self, (dc, dr): (i32, i32), k: i32) -> Self {
        Self::new(self.col + dc * k, self.row + dr * k)
    }

    pub fn manhattan(self, other: Cell) -> i32 {
        (self.col - other.col).abs() + (self.row - other.row).abs()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Yaw {
    N,
    E,
    S,
    W,
}

impl Yaw {
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Self {
        [Yaw::N, Yaw::E, Yaw::S, Yaw::W][i % 4]
    }

    pub fn forward(self) -> (i32, i32) {
        match self {
            Yaw::N => (0, -1),
            Yaw::E => (1, 0),
            Yaw::S => (0, 1),
            Yaw::W => (-1, 0),
        }
    }

    pub fn right(self) -> (i32, i32) {
        self.turn_right().forward()
    }

    pub fn turn_right(self) -> Self {
        Self::from_index(self.index() + 1)
    }

    pub fn turn_left(self) -> Self {
        Self::from_index(self.index() + 3)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Pitch {
    Level,
    Down,
}

impl Pitch {
    /// Height layer this pitch can see.
    pub fn height(self) -> u8 {
        match self {
            Pitch::Level => 1,
            Pitch::Down => 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Pose {
    pub cell: Cell,
    pub yaw: Yaw,
    pub pitch: Pitch,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Parent {
    Agent,
    Object(ObjectId),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Temperature {
    Cold,
    Room,
    Hot,
}

impl Temperature {
    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Properties {
    pub is_on: bool,
    pub is_open: bool,
    pub is_cooked: bool,
    pub is_filled: bool,
    pub is_sliced: bool,
    pub is_picked_up: bool,
    pub temperature: Temperature,
}

impl Default for Properties {
    fn default() -> Self {
        Self {
            is_on: false,
            is_open: false,
            is_cooked: false,
            is_filled: false,
            is_sliced: false,
            is_picked_up: false,
            temperature: Temperature::Room,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ObjectState {
    pub id: ObjectId,
    pub category: Category,
    pub cell: Cell,
    /// Height layer, 0 (floor) or 1 (counter).
    pub height: u8,
    pub props: Properties,
    pub parent: Option<Parent>,
    pub cook_timer: u32,
    /// Heater category that finished cooking this object, if any.
    pub cooked_in: Option<Category>,
    /// Stove knob -> the burner it controls.
    pub link: Option<ObjectId>,
}

impl ObjectState {
    pub fn new(id: ObjectId, category: Category, cell: Cell, height: u8) -> Self {
        Self {
            id,
            category,
            cell,
            height,
            props: Properties::default(),
            parent: None,
            cook_timer: 0,
            cooked_in: None,
            link: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct WorldState {
    pub objects: BTreeMap<ObjectId, ObjectState>,
    pub pose: Pose,
    pub held: Option<ObjectId>,
    pub step_count: u32,
    pub rng_seed: u64,
    pub task: String,
    pub done: bool,
}

impl WorldState {
    pub fn object(&self, id: ObjectId) -> Result<&ObjectState, SimError> {
        self.objects.get(&id).ok_or(SimError::UnknownObject(id))
    }

    pub fn parent_object(&self, id: ObjectId) -> Option<&ObjectState> {
        match self.objects.get(&id)?.parent {
            Some(Parent::Object(p)) => self.objects.get(&p),
            _ => None,
        }
    }

    /// Direct children, ascending by id.
    pub fn children(&self, id: ObjectId) -> impl Iterator<Item = &ObjectState> + '_ {
        self.objects
            .values()
            .filter(move |o| o.parent == Some(Parent::Object(id)))
    }

    pub fn first_child(&self, id: ObjectId) -> Option<&ObjectState> {
        self.children(id).next()
    }

    /// Ancestors from the direct parent upwards (objects only).
    pub fn ancestors(&self, id: ObjectId) -> Vec<ObjectId> {
        let mut out = Vec::new();
        let mut cur = id;
        while let Some(Parent::Object(p)) = self.objects.get(&cur).and_then(|o| o.parent) {
            if out.contains(&p) || out.len() > self.objects.len() {
                break;
            }
            out.push(p);
            cur = p;
        }
        out
    }

    /// Top of the containment chain (the object itself if it has no object parent).
    pub fn root(&self, id: ObjectId) -> ObjectId {
        self.ancestors(id).last().copied().unwrap_or(id)
    }

    /// Whether the containment chain ends at the agent.
    pub fn is_carried(&self, id: ObjectId) -> bool {
        let root = self.root(id);
        self.objects.get(&root).and_then(|o| o.parent) == Some(Parent::Agent)
    }

    /// `id` plus all its descendants, ascending by id.
    pub fn subtree(&self, id: ObjectId) -> Vec<ObjectId> {
        self.objects
            .keys()
            .copied()
            .filter(|&o| o == id || self.ancestors(o).contains(&id))
            .collect()
    }

    /// Whether any ancestor is an openable receptacle that is closed.
    pub fn enclosed(&self, id: ObjectId) -> bool {
        self.ancestors(id).iter().any(|a| {
            let o = &self.objects[a];
            o.category.flags().openable && !o.props.is_open
        })
    }

    /// Places the agent at `pose` directly, carrying whatever it holds.
    pub fn teleport(&mut self, pose: Pose) {
        self.pose = pose;
        if let Some(h) = self.held {
            self.move_subtree(h, pose.cell, None);
        }
    }

    pub(crate) fn move_subtree(&mut self, id: ObjectId, cell: Cell, height: Option<u8>) {
        for o in self.subtree(id) {
            let obj = self.objects.get_mut(&o).expect("subtree member");
            obj.cell = cell;
            if let Some(h) = height {
                obj.height = h;
            }
        }
    }

    /// Checks every structural and per-object invariant.
    pub fn check_invariants(&self) -> Result<(), SimError> {
        let fail = |m: String| Err(SimError::InvariantViolation(m));
        if self.step_count > MAX_STEPS {
            return fail(format!("step_count {} exceeds limit", self.step_count));
        }
        if !self.pose.cell.in_grid() {
            return fail(format!("agent off grid at {:?}", self.pose.cell));
        }
        let carried: Vec<_> = self
            .objects
            .values()
            .filter(|o| o.parent == Some(Parent::Agent))
            .map(|o| o.id)
            .collect();
        if carried.len() > 1 {
            return fail(format!("more than one held object: {carried:?}"));
        }
        if carried.first().copied() != self.held {
            return fail(format!("held {:?} but agent parents {carried:?}", self.held));
        }
        for (&id, o) in &self.objects {
            if o.id != id {
                return fail(format!("object key {id} holds id {}", o.id));
            }
            // Acyclic: walking parents must terminate without revisiting.
            let mut seen = vec![id];
            let mut cur = id;
            while let Some(Parent::Object(p)) = self.objects.get(&cur).and_then(|x| x.parent) {
                if !self.objects.contains_key(&p) {
                    return fail(format!("object {cur} has missing parent {p}"));
                }
                if seen.contains(&p) {
                    return fail(format!("containment cycle through {p}"));
                }
                seen.push(p);
                cur = p;
            }
            let flags = o.category.flags();
            if o.props.is_picked_up != (o.parent == Some(Parent::Agent)) {
                return fail(format!("object {id}: is_picked_up disagrees with parent"));
            }
            if o.props.is_open && !flags.openable
                || o.props.is_on && !flags.toggleable
                || o.props.is_filled && !flags.fillable
                || o.props.is_cooked && !flags.cookable
            {
                return fail(format!("object {id}: property not allowed for {:?}", o.category));
            }
            let expected = if self.is_carried(id) {
                self.pose.cell
            } else {
                self.objects[&self.root(id)].cell
            };
            if o.cell != expected {
                return fail(format!("object {id}: cell {:?} != root cell {expected:?}", o.cell));
            }
            if !o.cell.in_grid() || o.height > 1 {
                return fail(format!("object {id}: bad placement"));
            }
        }
        Ok(())
    }
}
