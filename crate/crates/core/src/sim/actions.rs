use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum NavAction {
    MoveAhead,
    MoveBack,
    MoveLeft,
    MoveRight,
    RotateLeft,
    RotateRight,
    LookUp,
    LookDown,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Interaction {
    Pickup,
    Put,
    Open,
    Close,
    TurnOn,
    TurnOff,
    Slice,
    Fill,
}

pub const NUM_NAV: usize = 8;
pub const NUM_INTERACTIONS: usize = 8;

impl NavAction {
    pub const ALL: [NavAction; NUM_NAV] = [
        NavAction::MoveAhead,
        NavAction::MoveBack,
        NavAction::MoveLeft,
        NavAction::MoveRight,
        NavAction::RotateLeft,
        NavAction::RotateRight,
        NavAction::LookUp,
        NavAction::LookDown,
    ];

    pub fn index(self) -> usize {
        self as usize
    }
}

impl Interaction {
    pub const ALL: [Interaction; NUM_INTERACTIONS] = [
        Interaction::Pickup,
        Interaction::Put,
        Interaction::Open,
        Interaction::Close,
        Interaction::TurnOn,
        Interaction::TurnOff,
        Interaction::Slice,
        Interaction::Fill,
    ];

    pub fn index(self) -> usize {
        self as usize
    }
}

/// A navigation action, or an interaction aimed at one of the current patches.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ActionSpec {
    Navigate(NavAction),
    Interact(Interaction, usize),
}

impl ActionSpec {
    /// Position in the concatenation `[nav(8), patch0(8), patch1(8), ...]`.
    pub fn flat_index(self) -> usize {
        match self {
            ActionSpec::Navigate(n) => n.index(),
            ActionSpec::Interact(b, p) => NUM_NAV + p * NUM_INTERACTIONS + b.index(),
        }
    }

    pub fn from_flat(i: usize) -> Self {
        if i < NUM_NAV {
            ActionSpec::Navigate(NavAction::ALL[i])
        } else {
            let j = i - NUM_NAV;
            ActionSpec::Interact(Interaction::ALL[j % NUM_INTERACTIONS], j / NUM_INTERACTIONS)
        }
    }

    /// One-hot slot of the base action (navigation and interaction share 0..8).
    pub fn base_index(self) -> usize {
        match self {
            ActionSpec::Navigate(n) => n.index(),
            ActionSpec::Interact(b, _) => b.index(),
        }
    }

    pub fn is_interaction(self) -> bool {
        matches!(self, ActionSpec::Interact(..))
    }

    pub fn patch(self) -> Option<usize> {
        match self {
            ActionSpec::Interact(_, p) => Some(p),
            ActionSpec::Navigate(_) => None,
        }
    }
}

/// Number of legal actions with `n` visible patches.
pub fn num_actions(n: usize) -> usize {
    NUM_NAV + NUM_INTERACTIONS * n
}
