//! Multi-shape detection of chart data elements (bars, pie sectors, lines)
//! as grouped keypoint set prediction.

pub mod geometry;
pub mod numeric;
pub mod chartgen;
pub mod model;
pub mod matching;
pub mod training;
pub mod metrics;
pub mod cli;
