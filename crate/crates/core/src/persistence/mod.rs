//! On-disk artifacts: the analysis setup file, EM snapshots and NIfTI maps.
//!
//! Setup files and snapshots share one container format, documented in
//! `docs/formats.md`.

mod codec;
mod container;
mod layout;
mod maps;
mod runinfo;
mod snapshot;

pub use container::{sha256_hex, ArrayEntry, ContainerReader, ContainerWriter, Manifest, FORMAT, VERSION};
pub use layout::AnalysisLayout;
pub use maps::{map_file_name, write_map_nifti};
pub use runinfo::{data_digest, read_runinfo, write_runinfo, DataPayload, RunInfo, RUNINFO_FIELDS, RUNINFO_KIND};
pub use snapshot::{read_snapshot, write_snapshot, Snapshot, SNAPSHOT_KIND};
