use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{DataError, SyntheticComplex};
use crate::autodiff::DenseArray;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridConfig {
    /// Voxels per axis.
    pub extent: usize,
    /// Box edge, Å; maps linearly onto the grid.
    pub box_size: f64,
    pub elements: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self { extent: 16, box_size: 16.0, elements: 4 }
    }
}

impl GridConfig {
    pub fn channels(&self) -> usize {
        2 * self.elements
    }
}

/// Occupancy of shape `[channels, G, G, G]`, channel `role * elements + element`.
/// Spatial axes follow the x, y, z coordinate order.
#[derive(Clone, Debug, PartialEq)]
pub struct VoxelGrid {
    pub extent: usize,
    pub channels: usize,
    pub occupancy: DenseArray<f64>,
}

impl VoxelGrid {
    pub fn total(&self) -> f64 {
        self.occupancy.data().iter().sum()
    }

    pub fn channel_sums(&self) -> Vec<f64> {
        let vol = self.extent.pow(3);
        self.occupancy.data().chunks(vol).map(|c| c.iter().sum()).collect()
    }
}

fn cell(coord: f64, box_size: f64, g: usize) -> usize {
    let i = (coord / box_size * g as f64).floor();
    if i.is_nan() || i < 0.0 {
        0
    } else {
        (i as usize).min(g - 1)
    }
}

/// Nearest-voxel assignment; each atom adds 1.0 to one cell.
pub fn voxelize(c: &SyntheticComplex, grid: &GridConfig) -> Result<VoxelGrid, DataError> {
    if grid.extent < 8 {
        return Err(DataError::InvalidParams(format!("grid extent must be at least 8, got {}", grid.extent)));
    }
    if !(grid.box_size > 0.0) || grid.elements == 0 {
        return Err(DataError::InvalidParams("box size and element count must be positive".into()));
    }
    let g = grid.extent;
    let ch = grid.channels();
    let mut data = vec![0.0; ch * g * g * g];
    for a in &c.atoms {
        if a.element >= grid.elements {
            return Err(DataError::InvalidParams(format!("element {} outside [0, {})", a.element, grid.elements)));
        }
        let channel = a.role.index() * grid.elements + a.element;
        let [x, y, z] = a.pos.map(|v| cell(v, grid.box_size, g));
        data[((channel * g + x) * g + y) * g + z] += 1.0;
    }
    let occupancy = DenseArray::new(vec![ch, g, g, g], data).map_err(|e| DataError::InvalidParams(e.to_string()))?;
    Ok(VoxelGrid { extent: g, channels: ch, occupancy })
}

/// One 90° turn about `axis` (0 = x, 1 = y, 2 = z).
pub fn rotate_quarter(v: &VoxelGrid, axis: usize) -> VoxelGrid {
    assert!(axis < 3, "axis must be 0, 1 or 2");
    let g = v.extent;
    let src = v.occupancy.data();
    let mut out = vec![0.0; src.len()];
    // the two axes spanning the rotation plane
    let (p, q) = match axis {
        0 => (1, 2),
        1 => (2, 0),
        _ => (0, 1),
    };
    let vol = g * g * g;
    for c in 0..v.channels {
        for i in 0..g {
            for j in 0..g {
                for k in 0..g {
                    let mut idx = [i, j, k];
                    let (a, b) = (idx[p], idx[q]);
                    idx[p] = b;
                    idx[q] = g - 1 - a;
                    out[c * vol + (idx[0] * g + idx[1]) * g + idx[2]] = src[c * vol + (i * g + j) * g + k];
                }
            }
        }
    }
    VoxelGrid { extent: g, channels: v.channels, occupancy: DenseArray::new(v.occupancy.shape().to_vec(), out).expect("same shape") }
}

/// Independently per axis, with probability `p`, rotates by 90°, 180° or 270°.
pub fn rotate_augment(v: &VoxelGrid, seed: u64, p: f64) -> Result<VoxelGrid, DataError> {
    if !(0.0..=1.0).contains(&p) {
        return Err(DataError::InvalidParams(format!("rotation probability {p} outside [0, 1]")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = v.clone();
    for axis in 0..3 {
        let fire = rng.random::<f64>() < p;
        let turns = rng.random_range(1..4);
        if fire {
            for _ in 0..turns {
                out = rotate_quarter(&out, axis);
            }
        }
    }
    Ok(out)
}
