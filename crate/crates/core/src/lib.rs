//! Core of the HAKF complex event processing workbench: concept palettes
//! and knowledge graphs, tellability (frequencies, regular-class markings,
//! class mapping), complex-event definitions and their logic fragments, the
//! streaming matcher, explanations and the scenario simulator.

pub mod cep;
pub mod definition;
pub mod event;
pub mod explain;
pub mod graph;
pub mod json;
pub mod palette;
pub mod sim;
pub mod tellability;

pub use json::JsonError;
