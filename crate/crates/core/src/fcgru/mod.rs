//! FlowConvGRU: GRU cells whose gates combine a flow-aware graph
//! convolution with a 2D grid convolution, stacked and read out by a
//! per-region affine head.

mod cell;
mod model;
mod params;
mod spec;

pub use cell::{cell_step, cell_step_traced, unroll, CellTrace};
pub use model::{forward, loss, loss_and_grad, predict, reshape_to_graph, reshape_to_grid};
pub use params::{CellParams, GateParams, ModelParams, GATE_NAMES};
pub use spec::{ModelSpec, Variant};

pub(crate) use model::accumulate_grad;
