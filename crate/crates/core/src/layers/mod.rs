//! Forward and backward passes of every network layer.
//!
//! Each `*_forward` returns its output together with a tape entry holding exactly
//! what the matching `*_backward` needs. Gradients with respect to symmetric
//! arguments are returned as full symmetric arrays.

mod bimap;
mod head;
mod spectral;
mod subsec;
mod trilcan;

pub use bimap::{bimap_backward, bimap_forward, BiMapTape};
pub use head::{fc_backward, fc_forward, softmax, softmax_ce, FcTape};
pub use spectral::{
    logeig_backward, logeig_forward, reeig_backward, reeig_forward, LogEigTape, ReEigTape,
};
pub use subsec::{
    binomial, subsec_backward, subsec_forward, window_count, window_index_sets, SubSecTape,
    WindowIndexSet,
};
pub use trilcan::{trilcan_backward, trilcan_forward, TrilCanTape};
