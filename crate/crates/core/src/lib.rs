pub mod backbone;
pub mod community;
pub mod error;
pub mod experiments;
pub mod fixtures;
pub mod network;
pub mod null_models;
pub mod poibin;
pub mod recall;
pub mod scm;

pub const SCHEMA_VERSION: u32 = 1;

pub use backbone::{extract_backbone, fit_bicm, BackboneResult, CellProbabilityMatrix, Correction};
pub use community::{maximize_modularity, run_becd, BecdConfig, BecdOutput, OptimizerConfig, Partition};
pub use error::{Error, ErrorKind, Result};
pub use experiments::{AuditSummary, Method, PipelineConfig, RunRecord, Study, StudyOutput};
pub use network::{GroupAssignment, PeerNetwork};
pub use null_models::{curveball_randomize, generate_classroom, ClassroomProfile, ProfileRanges};
pub use recall::{parse_matrix_csv, parse_reports, ChildId, RecallMatrix};
pub use scm::{run_scm, GroupRule, ScmConfig, ScmOutput};
