//! Concrete forward models.

mod elliptic;
mod linear;
mod toy;

pub use elliptic::{
    default_source, elliptic_generate_data, elliptic_problem, true_diffusivity, EllipticData, EllipticPriorFactor,
    Elliptic1dModel, DATA_MESH_SIZE, OBSERVATION_POINTS,
};
pub use linear::LinearModel;
pub use toy::{toy1d_problem, toy2d_problem, Toy1dModel, Toy2dModel};
