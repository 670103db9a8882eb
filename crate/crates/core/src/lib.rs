//! A desk-scale laboratory for pool-based deep active learning.
//!
//! The crate is organised around the active learning cycle:
//!
//! - [`data`]: datasets, labeled/unlabeled pool bookkeeping, synthetic generators
//!   and file ingestion.
//! - [`learner`]: a small dropout MLP trained with SGD + momentum, with Monte-Carlo
//!   dropout sampling, penultimate embeddings and an optional loss-prediction head.
//! - [`acquisition`]: the acquisition scores (random, entropy, variation ratio,
//!   BALD, learned loss, core-set, inconsistency) and the selection rules.
//! - [`ssl`]: consistency-regularised semi-supervised training.
//! - [`experiment`]: the train → score → select → label loop, trials and ablations.
//! - [`config`] and [`report`]: JSON configuration, result files and run manifests.
//! - [`cli`]: the `allab` command-line tool.

pub mod acquisition;
pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod experiment;
pub mod learner;
pub mod report;
pub mod seed;
pub mod ssl;

pub use error::{Error, Result};
