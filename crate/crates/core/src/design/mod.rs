//! Suite design analysis: weighted coverage against targets, and
//! multi-label confusion matrices for annotation quality.

mod coverage;
mod mlcm;

pub use coverage::{coverage_proportions, CoverageError, CoverageReport, DimensionCoverage};
pub use mlcm::{
    classes_in_order, mlcm_build, mlcm_metrics, parse_samples_csv, ClassMetrics, MlcmError, MlcmMatrix, Sample,
    NPL, NTL,
};
