//! Seedless synthetic dataset generation for text classification tasks.
//!
//! A task pack describes the prompts for each step. [`pipeline::run_pipeline`]
//! produces contexts, seeds and label-constrained instances;
//! [`selfcorrect::self_correct_dataset`] re-checks every label with a
//! meta-prompt; [`analysis`] compares the result with reference data.

pub mod analysis;
pub mod backend;
pub mod instance;
pub mod pipeline;
pub mod schema;
pub mod selfcorrect;
pub mod specfile;
pub mod store;
pub mod taskpacks;
pub mod textparse;
