//! Procedural grayscale rendering of object patches and the egocentric view.

use super::category::{Category, NUM_CATEGORIES};
use super::visibility::cone_cells;
use super::world::{ObjectId, ObjectState, WorldState, Yaw};
use crate::tensor::Tensor;

pub const PATCH: usize = 16;
pub const EGO: usize = 32;
pub const EGO_BLOCK: usize = 8;
const STAMP: usize = 5;
const STAMP_AT: usize = 5;

fn splitmix(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Binary 16x16 pattern seeded only by the category index.
pub fn glyph(category: Category) -> [[f64; PATCH]; PATCH] {
    let mut state = 0x5EED_0000 + category.index() as u64;
    let mut out = [[0.0; PATCH]; PATCH];
    for row in out.iter_mut() {
        let bits = splitmix(&mut state);
        for (c, v) in row.iter_mut().enumerate() {
            *v = ((bits >> c) & 1) as f64;
        }
    }
    out
}

fn rotate_cw(g: &[[f64; PATCH]; PATCH]) -> [[f64; PATCH]; PATCH] {
    let mut out = [[0.0; PATCH]; PATCH];
    for (r, row) in g.iter().enumerate() {
        for (c, &v) in row.iter().enumerate() {
            out[c][PATCH - 1 - r] = v;
        }
    }
    out
}

/// Renders one object's 16x16 patch as seen from `viewer_yaw`.
///
/// `child` is the category of the object's first content, if any; it is
/// stamped as a 5x5 thumbnail at the centre.
pub fn render_patch(obj: &ObjectState, child: Option<Category>, viewer_yaw: Yaw) -> Tensor<f64> {
    let mut img = glyph(obj.category);
    for _ in 0..viewer_yaw.index() {
        img = rotate_cw(&img);
    }
    let p = &obj.props;
    if p.is_on {
        for row in img.iter_mut().take(2) {
            row.fill(1.0);
        }
    }
    if p.is_open {
        for row in img.iter_mut().skip(5).take(6) {
            row[5..11].fill(0.1);
        }
    }
    if p.is_filled {
        for row in img.iter_mut().skip(10) {
            row.fill(0.9);
        }
    }
    if p.is_sliced {
        for row in img.iter_mut().skip(6).take(4) {
            for v in row.iter_mut().step_by(2) {
                *v = 0.0;
            }
        }
    }
    if p.is_cooked {
        for v in img.iter_mut().flatten() {
            *v *= 0.5;
        }
    }
    if let Some(child) = child {
        let small = glyph(child);
        for r in 0..STAMP {
            for c in 0..STAMP {
                img[STAMP_AT + r][STAMP_AT + c] = small[r * 3 + 1][c * 3 + 1];
            }
        }
    }
    let data = img.iter().flatten().copied().collect();
    Tensor::new(vec![PATCH, PATCH], data).expect("16x16")
}

/// Patch for an object in the context of its world.
pub fn render_object(world: &WorldState, id: ObjectId) -> Tensor<f64> {
    let obj = &world.objects[&id];
    let child = world.first_child(id).map(|c| c.category);
    render_patch(obj, child, world.pose.yaw)
}

/// Code for one ego block: 0 off-cone, 1 empty cone cell, 2 + category otherwise.
pub(crate) fn ego_codes(world: &WorldState) -> [u8; 16] {
    let mut codes = [0u8; 16];
    let height = world.pose.pitch.height();
    for (d, l, cell) in cone_cells(&world.pose) {
        let top = world
            .objects
            .values()
            .filter(|o| {
                o.cell == cell
                    && o.height == height
                    && !world.is_carried(o.id)
                    && !world.enclosed(o.id)
            })
            .max_by_key(|o| (world.ancestors(o.id).len(), o.id));
        let block_row = (3 - d) as usize;
        let block_col = (l + 1) as usize;
        codes[block_row * 4 + block_col] = match top {
            Some(o) => 2 + o.category.index() as u8,
            None => 1,
        };
    }
    codes
}

pub(crate) fn ego_from_codes(codes: &[u8; 16]) -> Tensor<f64> {
    let mut data = vec![0.0; EGO * EGO];
    for (b, &code) in codes.iter().enumerate() {
        let v = match code {
            0 => 0.0,
            1 => 0.05,
            k => (k as f64 - 1.0) / (NUM_CATEGORIES as f64 + 1.0),
        };
        let (br, bc) = (b / 4, b % 4);
        for r in 0..EGO_BLOCK {
            let start = (br * EGO_BLOCK + r) * EGO + bc * EGO_BLOCK;
            data[start..start + EGO_BLOCK].fill(v);
        }
    }
    Tensor::new(vec![EGO, EGO], data).expect("32x32")
}

/// 32x32 egocentric view: a 4x4 grid of 8x8 blocks. Depth runs bottom (own
/// cell) to top, lateral offset left to right; the top block row and the
/// right block column are outside the cone.
pub fn render_ego(world: &WorldState) -> Tensor<f64> {
    ego_from_codes(&ego_codes(world))
}
