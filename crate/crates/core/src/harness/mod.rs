//! Config files, experiment dispatch, and run manifests.

mod config;
mod manifest;
mod run;

pub use config::{apply_override, Experiment, ExperimentConfig, HoleSpec, MapSpec, SamplerSpec, KINDS};
pub use manifest::{list_catalogue, read_manifest, replay, run, write_atomic, FileDigest, RunManifest, MANIFEST_NAME};
pub use run::{execute, RunOutput};

use crate::error::OdxError;

/// Process exit status for an error.
pub fn exit_code(e: &OdxError) -> i32 {
    match e {
        OdxError::ConfigInvalid(_) | OdxError::OutOfDomain(_) | OdxError::NonMonotoneLengths(_) => 2,
        OdxError::BudgetExceeded(_) | OdxError::UnresolvedMassExceeds(_) => 3,
        _ => 4,
    }
}
