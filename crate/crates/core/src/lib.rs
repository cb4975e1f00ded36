pub mod controller;
pub mod estimator;
pub mod graph;
pub mod io;
pub mod sim;
pub mod spectral;
