pub mod augment;
pub mod crossval;
pub mod evaluate;
pub mod ingest;
pub mod plot;
pub mod predict;
pub mod synth;
