//! Hybrid task-and-motion planning that sequences scripted object-centric
//! primitives with black-box bimanual skills on a planar tabletop.

pub mod generator;
pub mod geometry;
pub mod nn;
pub mod pipeline;
pub mod planner;
pub mod scenegraph;
pub mod symbolic;
pub mod validator;
pub mod sim;
