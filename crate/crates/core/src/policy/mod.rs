//! The segment-selection network and its conflict-free action dynamics.

mod actions;
mod net;

pub use actions::{
    apply_actions, compute_bounds, sample_actions, ActionBounds, ActionMatrix, MOVE_LEFT,
    MOVE_RIGHT,
};
pub use net::{
    backward, backward_into, policy_loss, EpisodeStep, PolicyParams, CONV_OUT, CONV_WIDTH, HIDDEN,
    LAYER_NAMES,
};
