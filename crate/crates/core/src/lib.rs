//! Core of the GLOSS desk-scale infrastructure: the XML event vocabulary,
//! geometry, the component/assembly framework, the location-based services
//! and the complex-event matching engine.

pub mod events;
pub mod geo;
pub mod matching;
pub mod pipeline;
pub mod services;
pub mod xml;
