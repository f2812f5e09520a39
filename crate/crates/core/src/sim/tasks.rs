//! The eight registered tasks: fixed kitchen layouts and success predicates.

use std::collections::BTreeMap;

use super::category::Category::{self, *};
use super::world::{Cell, ObjectId, ObjectState, Parent, Pitch, Pose, WorldState, Yaw};
use super::SimError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum TaskKind {
    SliceBread,
    SliceLettuceTomato,
    SliceApplePotatoLettuce,
    CookPotato,
    FillCup,
    ToastBread,
    AppleOnPlateOnTable,
    Salad,
}

pub const TASK_NAMES: [&str; 8] = [
    "slice_bread",
    "slice_lettuce_tomato",
    "slice_apple_potato_lettuce",
    "cook_potato",
    "fill_cup",
    "toast_bread",
    "apple_plate_table",
    "salad",
];

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TaskSpec {
    pub name: &'static str,
    pub kind: TaskKind,
    /// Categories present in the initial world.
    pub interactable: Vec<Category>,
}

struct Layout {
    objects: BTreeMap<ObjectId, ObjectState>,
}

impl Layout {
    /// Shared furniture: three counters, a table, fridge, microwave, coffee machine.
    fn kitchen() -> (Self, [ObjectId; 5]) {
        let mut l = Layout {
            objects: BTreeMap::new(),
        };
        let a = l.fixed(CounterTop, 1, 1, 1);
        let b = l.fixed(CounterTop, 4, 1, 1);
        let c = l.fixed(CounterTop, 7, 1, 1);
        let table = l.fixed(DiningTable, 4, 7, 1);
        let fridge = l.fixed(Fridge, 0, 4, 0);
        l.fixed(Microwave, 8, 4, 1);
        l.fixed(CoffeeMachine, 7, 7, 1);
        (l, [a, b, c, table, fridge])
    }

    fn next_id(&self) -> ObjectId {
        self.objects.len() as ObjectId + 1
    }

    fn fixed(&mut self, cat: Category, col: i32, row: i32, height: u8) -> ObjectId {
        let id = self.next_id();
        self.objects
            .insert(id, ObjectState::new(id, cat, Cell::new(col, row), height));
        id
    }

    fn inside(&mut self, cat: Category, parent: ObjectId) -> ObjectId {
        let id = self.next_id();
        let p = &self.objects[&parent];
        let mut o = ObjectState::new(id, cat, p.cell, p.height);
        o.parent = Some(Parent::Object(parent));
        if cat == Egg {
            o.props.temperature = super::world::Temperature::Cold;
        }
        self.objects.insert(id, o);
        id
    }

    fn knob_for(&mut self, burner: ObjectId) -> ObjectId {
        let cell = self.objects[&burner].cell;
        let id = self.fixed(StoveKnob, cell.col, cell.row, 1);
        self.objects.get_mut(&id).unwrap().link = Some(burner);
        id
    }
}

impl TaskSpec {
    pub fn by_name(name: &str) -> Result<Self, SimError> {
        let kind = match name {
            "slice_bread" => TaskKind::SliceBread,
            "slice_lettuce_tomato" => TaskKind::SliceLettuceTomato,
            "slice_apple_potato_lettuce" => TaskKind::SliceApplePotatoLettuce,
            "cook_potato" => TaskKind::CookPotato,
            "fill_cup" => TaskKind::FillCup,
            "toast_bread" => TaskKind::ToastBread,
            "apple_plate_table" => TaskKind::AppleOnPlateOnTable,
            "salad" => TaskKind::Salad,
            _ => {
                return Err(SimError::UnknownTask {
                    name: name.to_string(),
                    registered: TASK_NAMES.join(", "),
                })
            }
        };
        let name = TASK_NAMES
            .iter()
            .copied()
            .find(|n| *n == name)
            .expect("registered");
        let mut spec = Self {
            name,
            kind,
            interactable: Vec::new(),
        };
        let mut cats: Vec<Category> = spec.build_objects().values().map(|o| o.category).collect();
        cats.sort();
        cats.dedup();
        spec.interactable = cats;
        Ok(spec)
    }

    pub fn all() -> Vec<Self> {
        TASK_NAMES
            .iter()
            .map(|n| Self::by_name(n).expect("registered"))
            .collect()
    }

    /// Initial objects. Layouts are fixed per task; only the agent spawn is random.
    pub fn build_objects(&self) -> BTreeMap<ObjectId, ObjectState> {
        let (mut l, [a, b, c, table, fridge]) = Layout::kitchen();
        l.inside(Egg, fridge);
        match self.kind {
            TaskKind::SliceBread => {
                l.inside(Knife, a);
                l.inside(Bread, b);
                l.inside(Plate, table);
                l.inside(Cup, c);
                l.inside(Pot, c);
                l.inside(Pan, a);
                l.inside(Tomato, table);
            }
            TaskKind::SliceLettuceTomato => {
                l.inside(Knife, a);
                l.inside(Lettuce, table);
                l.inside(Tomato, table);
                l.inside(Plate, table);
                l.inside(Bread, b);
                l.inside(Cup, c);
                l.inside(Pot, c);
                l.inside(Pan, b);
            }
            TaskKind::SliceApplePotatoLettuce => {
                l.inside(Knife, a);
                l.inside(Lettuce, table);
                l.inside(Apple, table);
                l.inside(Potato, table);
                l.inside(Plate, b);
                l.inside(Bread, b);
                l.inside(Cup, c);
                l.inside(Pot, c);
                l.inside(Tomato, a);
            }
            TaskKind::CookPotato => {
                let burner1 = l.fixed(StoveBurner, 2, 4, 1);
                let burner2 = l.fixed(StoveBurner, 2, 5, 1);
                l.knob_for(burner1);
                l.knob_for(burner2);
                l.inside(Pot, burner1);
                l.inside(Pan, burner2);
                l.inside(Potato, a);
                l.inside(Plate, table);
                l.inside(Bread, b);
                l.inside(Cup, c);
                l.inside(Tomato, table);
                l.inside(Knife, b);
            }
            TaskKind::FillCup => {
                l.fixed(SinkBasin, 4, 4, 1);
                l.fixed(Faucet, 4, 4, 1);
                l.inside(Cup, a);
                l.inside(Bread, b);
                l.inside(Pot, c);
                l.inside(Pan, c);
                l.inside(Tomato, table);
                l.inside(Knife, b);
            }
            TaskKind::ToastBread => {
                l.fixed(Toaster, 7, 1, 1);
                l.inside(BreadSliced, b);
                l.inside(BreadSliced, b);
                l.inside(Bread, a);
                l.inside(Cup, c);
                l.inside(Pot, a);
                l.inside(Pan, a);
                l.inside(Tomato, table);
                l.inside(Knife, b);
            }
            TaskKind::AppleOnPlateOnTable => {
                l.inside(Apple, a);
                l.inside(Plate, b);
                l.inside(Bread, c);
                l.inside(Cup, c);
                l.inside(Pot, a);
                l.inside(Pan, b);
                l.inside(Knife, table);
            }
            TaskKind::Salad => {
                l.inside(Plate, table);
                l.inside(TomatoSliced, table);
                l.inside(TomatoSliced, table);
                l.inside(LettuceSliced, table);
                l.inside(LettuceSliced, table);
                l.inside(Bread, b);
                l.inside(Cup, c);
                l.inside(Pot, a);
                l.inside(Pan, a);
                l.inside(Knife, b);
            }
        }
        l.objects
    }

    /// Fresh world with the agent at `cell`, facing north, looking level.
    pub fn world_at(&self, cell: Cell, seed: u64) -> WorldState {
        WorldState {
            objects: self.build_objects(),
            pose: Pose {
                cell,
                yaw: Yaw::N,
                pitch: Pitch::Level,
            },
            held: None,
            step_count: 0,
            rng_seed: seed,
            task: self.name.to_string(),
            done: false,
        }
    }

    /// Pure success predicate.
    pub fn success(&self, world: &WorldState) -> bool {
        let any = |f: &dyn Fn(&ObjectState) -> bool| world.objects.values().any(f);
        let parent_cat = |o: &ObjectState| world.parent_object(o.id).map(|p| p.category);
        match self.kind {
            TaskKind::SliceBread => any(&|o| o.category == BreadSliced),
            TaskKind::SliceLettuceTomato => {
                any(&|o| o.category == LettuceSliced) && any(&|o| o.category == TomatoSliced)
            }
            TaskKind::SliceApplePotatoLettuce => {
                any(&|o| o.category == AppleSliced)
                    && any(&|o| o.category == PotatoSliced)
                    && any(&|o| o.category == LettuceSliced)
            }
            TaskKind::CookPotato => any(&|o| {
                matches!(o.category, Potato | PotatoSliced)
                    && o.props.is_cooked
                    && world
                        .parent_object(o.id)
                        .is_some_and(|pot| pot.category == Pot && burner_active(world, pot.id))
            }),
            TaskKind::FillCup => any(&|o| o.category == Cup && o.props.is_filled),
            TaskKind::ToastBread => any(&|o| {
                o.category == BreadSliced && o.props.is_cooked && o.cooked_in == Some(Toaster)
            }),
            TaskKind::AppleOnPlateOnTable => any(&|o| {
                o.category == Apple
                    && world.parent_object(o.id).is_some_and(|plate| {
                        plate.category == Plate && parent_cat(plate) == Some(DiningTable)
                    })
            }),
            TaskKind::Salad => {
                any(&|o| o.category == TomatoSliced && parent_cat(o) == Some(Plate))
                    && any(&|o| o.category == LettuceSliced && parent_cat(o) == Some(Plate))
            }
        }
    }
}

/// Whether `cookware` sits on a burner whose paired knob is on.
pub fn burner_active(world: &WorldState, cookware: ObjectId) -> bool {
    let Some(burner) = world.parent_object(cookware) else {
        return false;
    };
    burner.category == StoveBurner
        && world.objects.values().any(|k| {
            k.category == StoveKnob && k.link == Some(burner.id) && k.props.is_on
        })
}
