//! Target-centered 4x4 neighbor grid ("local map"): per cell an occupancy
//! count and the summed velocity of the neighbors that fall in it. This is
//! what the attention scorer sees of a pedestrian's surroundings.

use crate::num::Scalar;

/// Cells per axis.
pub const MAP_GRID: usize = 4;
/// Cell side length in dataset units.
pub const MAP_CELL_SIDE: f64 = 1.0;
/// Channels per cell: occupancy, sum vx, sum vy.
pub const MAP_CHANNELS: usize = 3;
/// Flattened width: 4 * 4 * 3.
pub const MAP_LEN: usize = MAP_GRID * MAP_GRID * MAP_CHANNELS;

/// Half extent of the covered square; relative coordinates live in
/// `[-MAP_HALF, +MAP_HALF)` per axis.
pub const MAP_HALF: f64 = MAP_GRID as f64 * MAP_CELL_SIDE / 2.0;

/// Position and velocity of one pedestrian at one frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AgentState<S> {
    pub pos: [S; 2],
    pub vel: [S; 2],
}

impl<S: Scalar> AgentState<S> {
    pub fn new(pos: [S; 2], vel: [S; 2]) -> Self {
        AgentState { pos, vel }
    }
}

/// Neighbor coordinates with the target at the origin; velocities pass
/// through unchanged.
pub fn relative_state<S: Scalar>(target: &AgentState<S>, neighbor: &AgentState<S>) -> AgentState<S> {
    AgentState {
        pos: [
            neighbor.pos[0] - target.pos[0],
            neighbor.pos[1] - target.pos[1],
        ],
        vel: neighbor.vel,
    }
}

/// The flattened grid. Layout is x-cell major, then y-cell, channels
/// innermost: `index = (ix * 4 + iy) * 3 + channel`.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalMap<S> {
    pub cells: Vec<S>,
}

impl<S: Scalar> LocalMap<S> {
    pub fn zeros() -> Self {
        LocalMap {
            cells: vec![S::zero(); MAP_LEN],
        }
    }

    #[inline]
    pub fn flat_index(ix: usize, iy: usize, channel: usize) -> usize {
        (ix * MAP_GRID + iy) * MAP_CHANNELS + channel
    }

    pub fn get(&self, ix: usize, iy: usize, channel: usize) -> S {
        self.cells[Self::flat_index(ix, iy, channel)]
    }

    /// Total occupancy over all cells.
    pub fn occupancy_sum(&self) -> S {
        (0..MAP_GRID * MAP_GRID)
            .map(|c| self.cells[c * MAP_CHANNELS])
            .sum()
    }
}

/// Cell index for a relative coordinate, or `None` when it falls outside
/// `[-2, +2)`. Cells are half-open, `floor(rel + 2)`.
#[inline]
pub fn map_cell_index<S: Scalar>(rel: S) -> Option<usize> {
    let shifted = (rel + S::of(MAP_HALF)) / S::of(MAP_CELL_SIDE);
    if shifted < S::zero() {
        return None;
    }
    let idx = shifted.floor().to_f64_c() as usize;
    (idx < MAP_GRID).then_some(idx)
}

/// Builds the map around `target` from the other pedestrians at the same
/// frame (the target itself must not be in `neighbors`). Each in-range
/// neighbor increments its cell's occupancy and adds its velocity; the
/// returned contributor list `(neighbor index, ix, iy)` is what the backward
/// pass needs to route velocity gradients.
pub fn build_local_map<S: Scalar>(
    target: &AgentState<S>,
    neighbors: &[AgentState<S>],
) -> (LocalMap<S>, Vec<(usize, usize, usize)>) {
    let mut map = LocalMap::zeros();
    let mut contributors = Vec::new();
    for (k, nb) in neighbors.iter().enumerate() {
        let rel = relative_state(target, nb);
        let (Some(ix), Some(iy)) = (map_cell_index(rel.pos[0]), map_cell_index(rel.pos[1])) else {
            continue;
        };
        map.cells[LocalMap::<S>::flat_index(ix, iy, 0)] += S::one();
        map.cells[LocalMap::<S>::flat_index(ix, iy, 1)] += nb.vel[0];
        map.cells[LocalMap::<S>::flat_index(ix, iy, 2)] += nb.vel[1];
        contributors.push((k, ix, iy));
    }
    (map, contributors)
}
