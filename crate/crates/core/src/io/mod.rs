//! File formats: model checkpoints, PGM images and voxel dumps.

mod checkpoint;
mod pgm;
mod voxfile;

pub use checkpoint::{Checkpoint, Entry, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use pgm::{read_pgm, tile, write_pgm, GrayImage};
pub use voxfile::{read_voxels, write_points, write_voxels};
