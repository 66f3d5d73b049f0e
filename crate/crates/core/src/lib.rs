//! Simulator and estimate monitors for the weighted inverse mean curvature
//! flow of radial graphs inside a rotationally symmetric convex cone.

pub mod controls;
pub mod flow;
pub mod geometry;
pub mod grid;
pub mod monitors;
pub mod oracle;
pub mod scaling;
pub mod verify;
pub mod weight;
