//! Per-query model patterns.
//!
//! A completion query asks for one band of one sensor on one tile and date.
//! [`resolve`] looks for time-adjacent observations of the same sensor on
//! the same tile; the bands it finds, each tagged with its signed month gap
//! to the query date, form the query's [`ModelPattern`]. Queries that share a
//! pattern share one trained model. Queries without same-sensor neighbors
//! fall back to inter-modal generation from another sensor's bands.

mod exchange;
mod execute;
mod resolve;
mod samples;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::catalog::{CatalogError, ImageRecord};
use crate::gbdt::GbdtError;
use crate::raster::{CalendarDate, ModalityId, RasterError, Sensor};

pub use exchange::{done_path, err_path, ExchangeConfig, GenerationRequest, RequestInput};
pub use execute::{
    execute, train_pattern, ExecContext, InputUsed, ModelStore, PredictionReport, TrainedModel,
    TrainingConfig, LANDSAT_OUTPUT_SIZE,
};
pub use resolve::{resolve, FallbackRule, FallbackTable};
pub use samples::{assemble_samples, SampleSet, SplitSizes};

#[derive(Debug, thiserror::Error)]
pub enum PatternError {
    #[error("plan is not intra-modal")]
    NotIntraModal,
    #[error("query is unresolvable: {0}")]
    Unresolvable(String),
    #[error("no (inputs, output) record group matches pattern {0}")]
    NoMatchingGroups(String),
    #[error("no pixel is unmasked across every raster of pattern {0}")]
    EmptyPool(String),
    #[error("training impossible for pattern {key}: {reason}")]
    TrainingImpossible { key: String, reason: String },
    #[error("generation unavailable: {0}")]
    GenerationUnavailable(String),
    #[error("generation timed out after {0:?}")]
    GenerationTimeout(std::time::Duration),
    #[error("generation failed: {0}")]
    GenerationFailed(String),
    #[error("input rasters disagree on size: {0}")]
    InconsistentInputs(String),
    #[error(transparent)]
    Catalog(#[from] CatalogError),
    #[error(transparent)]
    Raster(#[from] RasterError),
    #[error(transparent)]
    Gbdt(#[from] GbdtError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = PatternError> = std::result::Result<T, E>;

/// Days per month used to quantize gaps.
pub const DAYS_PER_MONTH: f64 = 30.4375;

/// Signed gap from `input` to `output` in whole months, rounded half away
/// from zero. Positive when the input predates the output.
pub fn month_gap(output: CalendarDate, input: CalendarDate) -> i32 {
    (output.days_since(input) as f64 / DAYS_PER_MONTH).round() as i32
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PatternInput {
    pub modality: ModalityId,
    pub month_gap: i32,
}

impl fmt::Display for PatternInput {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}@{}", self.modality, self.month_gap)
    }
}

/// Output modality plus the canonically sorted list of (input modality,
/// month gap) pairs. The output's own gap is zero by definition.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ModelPattern {
    output: ModalityId,
    inputs: Vec<PatternInput>,
}

impl ModelPattern {
    /// Sorts `inputs` by (sensor, band, gap). Panics on an empty list.
    pub fn new(output: ModalityId, mut inputs: Vec<PatternInput>) -> Self {
        assert!(
            !inputs.is_empty(),
            "a model pattern needs at least one input"
        );
        inputs.sort();
        ModelPattern { output, inputs }
    }

    pub fn output(&self) -> &ModalityId {
        &self.output
    }

    pub fn inputs(&self) -> &[PatternInput] {
        &self.inputs
    }

    pub fn is_intra_modal(&self) -> bool {
        self.inputs
            .iter()
            .all(|i| i.modality.sensor() == self.output.sensor())
    }

    /// `Sentinel1_VH<=Sentinel1_VV@12,Sentinel1_VH@12`.
    pub fn key(&self) -> String {
        let inputs: Vec<String> = self.inputs.iter().map(ToString::to_string).collect();
        format!("{}<={}", self.output, inputs.join(","))
    }
}

impl fmt::Display for ModelPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.key())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CompletionQuery {
    pub modality: ModalityId,
    pub tile_id: String,
    pub date: CalendarDate,
}

impl fmt::Display for CompletionQuery {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {} {}", self.modality, self.tile_id, self.date)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum CompletionPlan {
    /// `chosen_inputs[i]` realizes `pattern.inputs()[i]`.
    IntraModal {
        pattern: ModelPattern,
        chosen_inputs: Vec<ImageRecord>,
    },
    /// One record per conditioning band, all on the same date.
    InterModal {
        conditioning: Vec<ImageRecord>,
        source_sensor: Sensor,
    },
    Unresolvable {
        reason: String,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Route {
    IntraModal,
    InterModal,
    Unresolvable,
}

impl CompletionPlan {
    pub fn route(&self) -> Route {
        match self {
            CompletionPlan::IntraModal { .. } => Route::IntraModal,
            CompletionPlan::InterModal { .. } => Route::InterModal,
            CompletionPlan::Unresolvable { .. } => Route::Unresolvable,
        }
    }
}

/// Canonical key of an intra-modal plan's pattern.
pub fn pattern_key(plan: &CompletionPlan) -> Result<String> {
    match plan {
        CompletionPlan::IntraModal { pattern, .. } => Ok(pattern.key()),
        _ => Err(PatternError::NotIntraModal),
    }
}
