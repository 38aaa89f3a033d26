pub mod manifest;
pub mod pfm;
pub mod png;
pub mod rgbe;
