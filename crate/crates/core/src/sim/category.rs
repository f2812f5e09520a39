use serde::{Deserialize, Serialize};

/// Every object kind the kitchen knows about. The discriminant is the
/// category index used by renderers and oracle features.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Category {
    Toaster,
    Bread,
    BreadSliced,
    Knife,
    Cup,
    SinkBasin,
    Faucet,
    StoveBurner,
    StoveKnob,
    Pot,
    Pan,
    Potato,
    PotatoSliced,
    Apple,
    AppleSliced,
    Plate,
    Tomato,
    TomatoSliced,
    Lettuce,
    LettuceSliced,
    DiningTable,
    CounterTop,
    Fridge,
    Microwave,
    CoffeeMachine,
    Egg,
}

pub const NUM_CATEGORIES: usize = 26;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct CategoryFlags {
    pub pickupable: bool,
    pub receptacle: bool,
    pub openable: bool,
    pub toggleable: bool,
    pub sliceable: bool,
    pub fillable: bool,
    pub cookable: bool,
}

const P: u8 = 1;
const R: u8 = 2;
const O: u8 = 4;
const T: u8 = 8;
const S: u8 = 16;
const F: u8 = 32;
const C: u8 = 64;

// Single source of truth for static affordances, indexed by category.
const FLAGS: [u8; NUM_CATEGORIES] = [
    R | T,     // Toaster
    P | S | C, // Bread
    P | C,     // BreadSliced
    P,         // Knife
    P | F,     // Cup
    R,         // SinkBasin
    T,         // Faucet
    R,         // StoveBurner
    T,         // StoveKnob
    P | R | F, // Pot
    P | R,     // Pan
    P | S | C, // Potato
    P | C,     // PotatoSliced
    P | S,     // Apple
    P,         // AppleSliced
    P | R,     // Plate
    P | S,     // Tomato
    P,         // TomatoSliced
    P | S,     // Lettuce
    P,         // LettuceSliced
    R,         // DiningTable
    R,         // CounterTop
    R | O,     // Fridge
    R | O | T, // Microwave
    T,         // CoffeeMachine
    P | C,     // Egg
];

impl Category {
    pub const ALL: [Category; NUM_CATEGORIES] = [
        Category::Toaster,
        Category::Bread,
        Category::BreadSliced,
        Category::Knife,
        Category::Cup,
        Category::SinkBasin,
        Category::Faucet,
        Category::StoveBurner,
        Category::StoveKnob,
        Category::Pot,
        Category::Pan,
        Category::Potato,
        Category::PotatoSliced,
        Category::Apple,
        Category::AppleSliced,
        Category::Plate,
        Category::Tomato,
        Category::TomatoSliced,
        Category::Lettuce,
        Category::LettuceSliced,
        Category::DiningTable,
        Category::CounterTop,
        Category::Fridge,
        Category::Microwave,
        Category::CoffeeMachine,
        Category::Egg,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn flags(self) -> CategoryFlags {
        let f = FLAGS[self.index()];
        CategoryFlags {
            pickupable: f & P != 0,
            receptacle: f & R != 0,
            openable: f & O != 0,
            toggleable: f & T != 0,
            sliceable: f & S != 0,
            fillable: f & F != 0,
            cookable: f & C != 0,
        }
    }

    pub fn sliced_variant(self) -> Option<Self> {
        match self {
            Category::Bread => Some(Category::BreadSliced),
            Category::Potato => Some(Category::PotatoSliced),
            Category::Apple => Some(Category::AppleSliced),
            Category::Tomato => Some(Category::TomatoSliced),
            Category::Lettuce => Some(Category::LettuceSliced),
            _ => None,
        }
    }

    /// Heat sources that cook whatever sits directly inside them while on.
    pub fn is_direct_heater(self) -> bool {
        matches!(self, Category::Toaster | Category::Microwave)
    }

    pub fn is_cookware(self) -> bool {
        matches!(self, Category::Pot | Category::Pan)
    }

    /// Containment whitelist: may `item` be put into `self`?
    pub fn accepts(self, item: Category) -> bool {
        use Category::*;
        if !self.flags().receptacle {
            return false;
        }
        match self {
            Plate => matches!(item, AppleSliced | Apple | TomatoSliced | LettuceSliced),
            Toaster => item == BreadSliced,
            Pot | Pan => matches!(item, Potato | PotatoSliced | Egg),
            SinkBasin => matches!(item, Cup | Pot | Plate),
            StoveBurner => matches!(item, Pot | Pan),
            DiningTable | CounterTop | Fridge | Microwave => item.flags().pickupable,
            _ => false,
        }
    }
}
