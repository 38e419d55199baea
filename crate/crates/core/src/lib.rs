pub mod error;
pub mod grid_model;
pub mod network_reduction;
pub mod polynomial;
pub mod cluster_spectrum;
pub mod stability_boundary;
pub mod fullmodel_oracle;
pub mod sensitivity;
pub mod simulation;
pub mod analysis;
pub mod sweep;
