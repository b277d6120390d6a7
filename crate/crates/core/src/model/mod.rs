pub mod checkpoint;
mod network;
mod spec;

pub use network::{Composite, Head, Layer, Mixer, Model, StemLayer, Transition};
pub use spec::{CldcSpan, Connectivity, ModelSpec, Stem, TransitionKind, ZOO_NAMES};
