//! Ground-truth object features for the oracle baseline and for probe labels.

use serde::{Deserialize, Serialize};

use crate::sim::{ObjectId, SimError, Temperature, WorldState, NUM_CATEGORIES};
use crate::tensor::Tensor;

/// Width of the expanded feature row: three category one-hots, distance,
/// nine property flags and a three-way temperature one-hot.
pub const ORACLE_DIM: usize = 3 * NUM_CATEGORIES + 1 + 9 + 3;

/// Compact ground truth for one visible object; expanded with [`oracle_features`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct OracleObject {
    pub category: u8,
    pub inside: Option<u8>,
    pub contains: Option<u8>,
    /// Manhattan distance to the agent in cells.
    pub distance: u8,
    pub is_on: bool,
    pub is_open: bool,
    pub is_cooked: bool,
    pub is_filled: bool,
    pub is_sliced: bool,
    pub is_picked_up: bool,
    pub temperature: Temperature,
}

pub fn oracle_objects(world: &WorldState, ids: &[ObjectId]) -> Result<Vec<OracleObject>, SimError> {
    ids.iter()
        .map(|&id| {
            let o = world.object(id)?;
            Ok(OracleObject {
                category: o.category.index() as u8,
                inside: world.parent_object(id).map(|p| p.category.index() as u8),
                contains: world.first_child(id).map(|c| c.category.index() as u8),
                distance: o.cell.manhattan(world.pose.cell) as u8,
                is_on: o.props.is_on,
                is_open: o.props.is_open,
                is_cooked: o.props.is_cooked,
                is_filled: o.props.is_filled,
                is_sliced: o.props.is_sliced,
                is_picked_up: o.props.is_picked_up,
                temperature: o.props.temperature,
            })
        })
        .collect()
}

/// Writes the expanded feature row of `o` into `out` (length [`ORACLE_DIM`]).
/// With `category_only` everything but the category one-hot stays zero.
pub fn write_features(o: &OracleObject, category_only: bool, out: &mut [f64]) {
    out.fill(0.0);
    let n = NUM_CATEGORIES;
    out[o.category as usize] = 1.0;
    if category_only {
        return;
    }
    if let Some(c) = o.inside {
        out[n + c as usize] = 1.0;
    }
    if let Some(c) = o.contains {
        out[2 * n + c as usize] = 1.0;
    }
    let b = 3 * n;
    out[b] = o.distance as f64 / 16.0;
    // visible, toggled, broken, filled, dirty, cooked, sliced, open, picked up
    let flags = [
        true,
        o.is_on,
        false,
        o.is_filled,
        false,
        o.is_cooked,
        o.is_sliced,
        o.is_open,
        o.is_picked_up,
    ];
    for (k, f) in flags.into_iter().enumerate() {
        out[b + 1 + k] = if f { 1.0 } else { 0.0 };
    }
    let t = match o.temperature {
        Temperature::Cold => 0,
        Temperature::Room => 1,
        Temperature::Hot => 2,
    };
    out[b + 10 + t] = 1.0;
}

/// `n x ORACLE_DIM` feature matrix for the given objects; `objs` must be non-empty.
pub fn oracle_features(objs: &[OracleObject], category_only: bool) -> Tensor<f64> {
    assert!(!objs.is_empty(), "oracle features of no objects");
    let mut data = vec![0.0; objs.len() * ORACLE_DIM];
    for (o, row) in objs.iter().zip(data.chunks_mut(ORACLE_DIM)) {
        write_features(o, category_only, row);
    }
    Tensor::matrix(objs.len(), ORACLE_DIM, data).expect("oracle dims")
}

/// Feature matrix for `ids` read directly from `world`.
pub fn oracle_encode(
    world: &WorldState,
    ids: &[ObjectId],
    category_only: bool,
) -> Result<Tensor<f64>, SimError> {
    if ids.is_empty() {
        return Err(SimError::InvariantViolation("oracle encoding of no objects".into()));
    }
    Ok(oracle_features(&oracle_objects(world, ids)?, category_only))
}
