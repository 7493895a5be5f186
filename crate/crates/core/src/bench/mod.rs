//! Dataset generation, the reference optimizer and the method comparison.

mod data;
mod oracle;
mod report;

pub use data::{generate_dataset, split_sizes, DatasetConfig, GeneratedDataset};
pub use oracle::{
    label_oracle, project_box_disk, project_dispatch, solver_projection, OracleConfig, OracleResult,
};
pub use report::{run_benchmark, BenchConfig, BenchReport, Method, MethodSummary, SampleRow};
