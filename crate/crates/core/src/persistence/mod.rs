//! Configuration files and model checkpoints.

mod checkpoint;
mod config;

pub use checkpoint::{
    decode, encode, hex, load_checkpoint, load_checkpoint_into, save_checkpoint, structure_fingerprint,
    Checkpoint, FORMAT_VERSION, MAGIC,
};
pub use config::{Config, Geometry};
