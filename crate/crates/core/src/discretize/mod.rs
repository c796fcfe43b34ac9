//! Bilinear finite elements on uniform square grids.

mod assemble;
mod control;
mod desired;
mod grid;

pub use assemble::{assemble_convection_diffusion, assemble_heat, wind, DiscretizedPde};
pub use control::{apply_observation_mask, corner_mask, restrict_control, restrict_control_to_boundary};
pub use desired::{make_desired_state, validate as validate_desired_state, DesiredKind, DesiredState};
pub use grid::{Domain, Grid, DEFAULT_MAX_LEVEL};
