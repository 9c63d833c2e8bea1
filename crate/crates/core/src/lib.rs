//! Simulation library for a hybrid-array dual-function radar-communication
//! base station that serves one multi-antenna user while sensing targets.
//!
//! The work is split into three stages that share one scene model:
//!
//! * [`stage1`]: joint target search. A chirp pilot sent through a hybrid
//!   array yields target angles (MUSIC) and reflection gains (APES); the user
//!   estimates its arrival angles and answers with a zero-forced uplink pilot
//!   that identifies which targets are communication paths.
//! * [`stage2`]: hybrid beamforming that sends data to the user and probes
//!   every target while nulling the radar streams at the user.
//! * [`stage3`]: target tracking across PRIs, with successive interference
//!   cancellation of the echo from an overlapping uplink frame.
//!
//! [`harness`] drives Monte Carlo experiments on top of these stages.

pub mod array;
pub mod error;
pub mod harness;
pub mod linalg;
pub mod pilot;
pub mod stage1;
pub mod stage2;
pub mod stage3;

pub use array::{ArrayConfig, NoiseConfig, Scene};
pub use error::{Error, Result};
