//! Photon-counting model of a tapered fiber coupled to a microsphere
//! whispering-gallery resonator.
//!
//! The crate goes from cavity parameters to complex transmission
//! ([`coupled_mode`]), through polarization analysis ([`polarization`]) and
//! photon-counting simulation ([`photon_sim`]), to state reconstruction
//! ([`tomography`]) and parameter recovery ([`fitting`]).

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod coupled_mode;
pub mod error;
pub mod fitting;
pub mod io;
pub mod optim;
pub mod photon_sim;
pub mod pipeline;
pub mod polarization;
pub mod presets;
pub mod tomography;

pub use error::{Error, Result};
