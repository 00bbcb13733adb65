pub mod cli;
pub mod evaluation;
pub mod ingestion;
pub mod model;
pub mod network;
pub mod pipeline;
pub mod procrustes;
pub mod segmentation;
pub mod synthgen;
pub mod training;
