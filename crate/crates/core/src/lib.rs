pub mod commands;
pub mod diagnostics;
pub mod engine;
pub mod fit;
pub mod frame;
pub mod geometry;
pub mod io;
pub mod losses;
pub mod metrics;
pub mod synth;
