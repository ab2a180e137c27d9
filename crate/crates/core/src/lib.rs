#![cfg_attr(not(feature = "std"), no_std)]
extern crate alloc;

pub mod augment;
pub mod dataset;
pub mod error;
pub mod filter;
pub mod image;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod phantom;
pub mod postprocess;
pub mod preprocess;
pub mod train;

pub use error::{Error, Result};
pub use image::{BinaryMask, GrayImage, SoftMask};
