//! Cone-of-view visibility: 3 cells deep (including the agent's own cell),
//! 3 cells wide, restricted to the height layer selected by pitch.

use super::world::{Cell, ObjectId, Pose, WorldState, GRID};

pub const MAX_VISIBLE: usize = 20;
pub const CONE_DEPTH: i32 = 3;

/// In-grid cone cells as `(depth, lateral, cell)`, lateral in `-1..=1`.
pub fn cone_cells(pose: &Pose) -> Vec<(i32, i32, Cell)> {
    let fwd = pose.yaw.forward();
    let right = pose.yaw.right();
    let mut out = Vec::with_capacity(9);
    for d in 0..CONE_DEPTH {
        for l in -1..=1 {
            let c = pose.cell.offset(fwd, d).offset(right, l);
            if (0..GRID).contains(&c.col) && (0..GRID).contains(&c.row) {
                out.push((d, l, c));
            }
        }
    }
    out
}

/// Cells an interaction can reach: the agent's own and the one it faces.
pub fn in_reach(pose: &Pose, cell: Cell) -> bool {
    cell == pose.cell || cell == pose.cell.offset(pose.yaw.forward(), 1)
}

/// Visible objects in every cone cell, before the 20-object cap, with their
/// sort key `(distance, held_rank, id)`.
pub(crate) fn visible_keyed(world: &WorldState) -> Vec<((i32, u8, ObjectId), ObjectId)> {
    let cone = cone_cells(&world.pose);
    let height = world.pose.pitch.height();
    let mut out = Vec::new();
    for o in world.objects.values() {
        if world.enclosed(o.id) {
            continue;
        }
        if world.is_carried(o.id) {
            let rank = if world.held == Some(o.id) { 0 } else { 1 };
            out.push(((0, rank, o.id), o.id));
            continue;
        }
        if o.height != height {
            continue;
        }
        if cone.iter().any(|(_, _, c)| *c == o.cell) {
            let dist = o.cell.manhattan(world.pose.cell);
            out.push(((dist, 1, o.id), o.id));
        }
    }
    out.sort();
    out
}

/// Ids of visible objects, ordered by (distance, held first, id), capped at 20.
pub fn visible_objects(world: &WorldState) -> Vec<ObjectId> {
    visible_keyed(world)
        .into_iter()
        .take(MAX_VISIBLE)
        .map(|(_, id)| id)
        .collect()
}
