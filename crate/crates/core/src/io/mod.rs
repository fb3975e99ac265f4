//! Config files, CSV ingestion and export, manifests and simulation outputs.

mod config;
mod ingest;
mod manifest;
mod output;

pub use config::{AnalysisSection, FileConfig, SimSection, ThresholdSection};
pub use ingest::{
    canonical_mapping_for, export_csv, ingest_csv, ingest_reader, ColumnMapping, Columns,
    IngestReport, Reject,
};
pub use manifest::{sha256_file, sha256_hex, InputFile, Manifest};
pub use output::{
    final_quarter_mean, parse_stem, report, write_cell_outputs, write_cutoffs_csv,
    write_seed_mean_utility, CutoffRow,
};
