//! Distribution-grid flexibility pipeline: model-less LV flexibility areas from
//! sensitivity coefficients, feeding a second-order-cone MV optimal power flow,
//! plus the Base / Monitoring / Control evaluation runner.

pub mod grid;
pub mod lvflex;
pub mod mvopf;
pub mod powerflow;
pub mod scenario;
pub mod sensitivity;
