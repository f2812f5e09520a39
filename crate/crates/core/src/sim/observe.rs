use std::collections::HashMap;
use std::sync::Arc;

use super::category::Category;
use super::render::{ego_codes, ego_from_codes, render_patch};
use super::visibility::visible_objects;
use super::world::{ObjectId, Pitch, Properties, WorldState, Yaw, GRID};
use crate::tensor::Tensor;

/// What the agent perceives at one time step.
///
/// `patch_ids` are simulator ids aligned with `patches`; only the oracle
/// encoder and probe labelling may read them.
#[derive(Clone, Debug, PartialEq)]
pub struct ObservationBundle {
    pub ego: Arc<Tensor<f64>>,
    pub patches: Vec<Arc<Tensor<f64>>>,
    pub patch_ids: Vec<ObjectId>,
    /// `(x, y, z, yaw, pitch, roll)`, each in `[-1, 1]`.
    pub loc: [f64; 6],
}

impl ObservationBundle {
    pub fn num_patches(&self) -> usize {
        self.patches.len()
    }
}

type PatchKey = (Category, Properties, Option<Category>, Yaw);

/// Interns rendered tensors so replayed observations share storage.
#[derive(Default)]
pub struct RenderCache {
    patches: HashMap<PatchKey, Arc<Tensor<f64>>>,
    egos: HashMap<[u8; 16], Arc<Tensor<f64>>>,
}

impl RenderCache {
    pub fn len(&self) -> usize {
        self.patches.len() + self.egos.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub fn loc_vector(world: &WorldState) -> [f64; 6] {
    let half = (GRID - 1) as f64 / 2.0;
    let p = &world.pose;
    [
        p.cell.col as f64 / half - 1.0,
        p.cell.row as f64 / half - 1.0,
        0.0,
        p.yaw.index() as f64 * 2.0 / 3.0 - 1.0,
        match p.pitch {
            Pitch::Level => 1.0,
            Pitch::Down => -1.0,
        },
        0.0,
    ]
}

/// Renders the observation for `world`, reusing tensors from `cache`.
pub fn observe_cached(world: &WorldState, cache: &mut RenderCache) -> ObservationBundle {
    let ids = visible_objects(world);
    let yaw = world.pose.yaw;
    let patches = ids
        .iter()
        .map(|id| {
            let o = &world.objects[id];
            let child = world.first_child(*id).map(|c| c.category);
            cache
                .patches
                .entry((o.category, o.props, child, yaw))
                .or_insert_with(|| Arc::new(render_patch(o, child, yaw)))
                .clone()
        })
        .collect();
    let codes = ego_codes(world);
    let ego = cache
        .egos
        .entry(codes)
        .or_insert_with(|| Arc::new(ego_from_codes(&codes)))
        .clone();
    ObservationBundle {
        ego,
        patches,
        patch_ids: ids,
        loc: loc_vector(world),
    }
}

pub fn observe(world: &WorldState) -> ObservationBundle {
    observe_cached(world, &mut RenderCache::default())
}
