use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex, OnceLock};

use serde::{Deserialize, Serialize};

use super::exchange::{ExchangeConfig, GenerationRequest, RequestInput};
use super::samples::{assemble_samples, SplitSizes};
use super::{
    month_gap, CompletionPlan, CompletionQuery, ModelPattern, PatternError, Result, Route,
};
use crate::catalog::{Catalog, ImageRecord, QueryFilter};
use crate::gbdt::{self, Evaluation, GbdtModel, GbdtParams, TrainReport};
use crate::hash::fnv1a;
use crate::raster::{
    bilinear_resample, read_raster, write_meta, write_raster, Raster, RasterMeta,
    DEFAULT_PSNR_CAP_DB,
};

/// Landsat predictions are resampled to this square size.
pub const LANDSAT_OUTPUT_SIZE: u32 = 256;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingConfig {
    pub gbdt: GbdtParams,
    pub sizes: SplitSizes,
    pub filter: QueryFilter,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub pattern_key: String,
    pub model: GbdtModel,
    pub report: TrainReport,
    pub sizes: SplitSizes,
    pub shrunk: bool,
    pub pool_size: usize,
    pub group_count: usize,
    /// Held-out error, when the test split is non-empty.
    pub test: Option<Evaluation>,
}

/// Samples and fits the model for one pattern.
pub fn train_pattern(
    pattern: &ModelPattern,
    catalog: &Catalog,
    cfg: &TrainingConfig,
) -> Result<TrainedModel> {
    let key = pattern.key();
    let samples = assemble_samples(pattern, catalog, &cfg.filter, cfg.sizes, cfg.seed)?;
    if samples.train.is_empty() {
        return Err(PatternError::TrainingImpossible {
            key,
            reason: format!(
                "pool of {} pixels leaves no training rows",
                samples.pool_size
            ),
        });
    }
    let valid = (!samples.val.is_empty()).then_some(&samples.val);
    let (model, report) = gbdt::train(&samples.train, valid, &cfg.gbdt)?;
    let test = if samples.test.is_empty() {
        None
    } else {
        let peak = pattern.output().dynamic_range();
        Some(model.evaluate(&samples.test, peak, DEFAULT_PSNR_CAP_DB)?)
    };
    Ok(TrainedModel {
        pattern_key: key,
        sizes: samples.sizes(),
        shrunk: samples.shrunk,
        pool_size: samples.pool_size,
        group_count: samples.group_count,
        model,
        report,
        test,
    })
}

type Slot = Arc<OnceLock<std::result::Result<Arc<TrainedModel>, String>>>;

/// Trained models by pattern key. The first caller for a key trains it;
/// concurrent callers for the same key block until that finishes. Failures
/// are remembered too, so a pattern is attempted at most once.
#[derive(Default)]
pub struct ModelStore {
    slots: Mutex<HashMap<String, Slot>>,
    trainings: AtomicUsize,
    dir: Option<PathBuf>,
}

impl ModelStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Also saves every trained model under `dir` as `<hash>.gbdt`.
    pub fn with_dir(dir: impl Into<PathBuf>) -> Self {
        ModelStore {
            dir: Some(dir.into()),
            ..Self::default()
        }
    }

    /// Number of training runs started so far.
    pub fn trainings(&self) -> usize {
        self.trainings.load(Ordering::SeqCst)
    }

    pub fn len(&self) -> usize {
        self.slots.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, key: &str) -> Option<Arc<TrainedModel>> {
        let slot = self.slots.lock().unwrap().get(key).cloned()?;
        slot.get()?.as_ref().ok().cloned()
    }

    /// File a model for `key` is saved under, if the store has a directory.
    pub fn model_path(&self, key: &str) -> Option<PathBuf> {
        let hash = fnv1a(key.as_bytes());
        self.dir
            .as_ref()
            .map(|d| d.join(format!("{hash:016x}.gbdt")))
    }

    /// Returns the model for `key`, running `train` if no one has yet.
    /// The flag is true only for the call that trained.
    pub fn get_or_train(
        &self,
        key: &str,
        train: impl FnOnce() -> Result<TrainedModel>,
    ) -> Result<(Arc<TrainedModel>, bool)> {
        let slot = {
            let mut slots = self.slots.lock().unwrap();
            slots.entry(key.to_string()).or_default().clone()
        };
        let mut trained_now = false;
        let outcome = slot.get_or_init(|| {
            trained_now = true;
            self.trainings.fetch_add(1, Ordering::SeqCst);
            let model = train().map_err(|e| e.to_string())?;
            if let Some(path) = self.model_path(key) {
                if let Some(parent) = path.parent() {
                    std::fs::create_dir_all(parent).map_err(|e| e.to_string())?;
                }
                gbdt::save(&model.model, &path).map_err(|e| e.to_string())?;
            }
            Ok(Arc::new(model))
        });
        match outcome {
            Ok(m) => Ok((m.clone(), trained_now)),
            Err(reason) => Err(PatternError::TrainingImpossible {
                key: key.to_string(),
                reason: reason.clone(),
            }),
        }
    }
}

/// Everything `execute` reads besides the query itself.
pub struct ExecContext<'a> {
    pub catalog: &'a Catalog,
    pub store: &'a ModelStore,
    pub training: &'a TrainingConfig,
    pub exchange: &'a ExchangeConfig,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputUsed {
    pub modality: String,
    pub date: String,
    pub path: String,
    /// Month gap to the query date; absent for conditioning inputs.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub month_gap: Option<i32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionReport {
    pub query: CompletionQuery,
    pub route: Route,
    pub pattern_key: Option<String>,
    pub inputs_used: Vec<InputUsed>,
    pub output_path: Option<String>,
    pub trained_now: bool,
    pub flags: Vec<String>,
    #[serde(default)]
    pub error: Option<String>,
}

impl PredictionReport {
    /// A report for a query that produced no output.
    pub fn failed(query: CompletionQuery, plan: &CompletionPlan, err: &PatternError) -> Self {
        let (pattern_key, inputs_used) = match plan {
            CompletionPlan::IntraModal {
                pattern,
                chosen_inputs,
            } => (Some(pattern.key()), used(&query, chosen_inputs, true)),
            CompletionPlan::InterModal { conditioning, .. } => {
                (None, used(&query, conditioning, false))
            }
            CompletionPlan::Unresolvable { .. } => (None, Vec::new()),
        };
        PredictionReport {
            query,
            route: plan.route(),
            pattern_key,
            inputs_used,
            output_path: None,
            trained_now: false,
            flags: Vec::new(),
            error: Some(err.to_string()),
        }
    }
}

fn used(q: &CompletionQuery, records: &[ImageRecord], with_gap: bool) -> Vec<InputUsed> {
    records
        .iter()
        .map(|r| InputUsed {
            modality: r.modality.to_string(),
            date: r.date.to_string(),
            path: r.path.clone(),
            month_gap: with_gap.then(|| month_gap(q.date, r.date)),
        })
        .collect()
}

/// Produces the raster for `q` at `output_path` according to `plan`.
///
/// Nothing is written when the plan is unresolvable or any step fails.
pub fn execute(
    q: &CompletionQuery,
    plan: &CompletionPlan,
    ctx: &ExecContext<'_>,
    output_path: &Path,
) -> Result<PredictionReport> {
    match plan {
        CompletionPlan::Unresolvable { reason } => Err(PatternError::Unresolvable(reason.clone())),
        CompletionPlan::IntraModal {
            pattern,
            chosen_inputs,
        } => {
            let key = pattern.key();
            let (trained, trained_now) = ctx
                .store
                .get_or_train(&key, || train_pattern(pattern, ctx.catalog, ctx.training))?;
            let mut flags = Vec::new();
            if trained.shrunk {
                flags.push(format!("samples_shrunk:{}", trained.pool_size));
            }
            let out = predict_intra(q, chosen_inputs, &trained.model, &mut flags)?;
            write_output(q, &out, output_path, &format!("intra-modal {key}"))?;
            Ok(PredictionReport {
                query: q.clone(),
                route: Route::IntraModal,
                pattern_key: Some(key),
                inputs_used: used(q, chosen_inputs, true),
                output_path: Some(output_path.to_string_lossy().into_owned()),
                trained_now,
                flags,
                error: None,
            })
        }
        CompletionPlan::InterModal {
            conditioning,
            source_sensor,
        } => {
            let req = GenerationRequest {
                id: request_id(output_path),
                tile_id: q.tile_id.clone(),
                date: q.date,
                conditioning_date: conditioning[0].date,
                conditioning: conditioning
                    .iter()
                    .map(|r| RequestInput {
                        modality: r.modality.clone(),
                        path: r.path.clone(),
                    })
                    .collect(),
                output_modality: q.modality.clone(),
                output_path: output_path.to_string_lossy().into_owned(),
                value_range: q.modality.value_range(),
            };
            let produced = ctx.exchange.generate(&req)?;
            let mut flags = vec![format!("generated_from:{source_sensor}")];
            if produced.has_mask() {
                flags.push(format!("generated_masked:{}", produced.masked_count()));
            }
            Ok(PredictionReport {
                query: q.clone(),
                route: Route::InterModal,
                pattern_key: None,
                inputs_used: used(q, conditioning, false),
                output_path: Some(req.output_path),
                trained_now: false,
                flags,
                error: None,
            })
        }
    }
}

/// Request id derived from the output file name, restricted to
/// `[A-Za-z0-9_-]`.
fn request_id(output_path: &Path) -> String {
    let stem = output_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    stem.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

fn predict_intra(
    q: &CompletionQuery,
    inputs: &[ImageRecord],
    model: &GbdtModel,
    flags: &mut Vec<String>,
) -> Result<Raster> {
    let mut rasters = Vec::with_capacity(inputs.len());
    for rec in inputs {
        let r = read_raster(&rec.path)?;
        if let Some(first) = rasters.first() {
            let first: &Raster = first;
            if !first.same_dims(&r) {
                return Err(PatternError::InconsistentInputs(format!(
                    "{} is {}x{}, expected {}x{}",
                    rec.path,
                    r.width(),
                    r.height(),
                    first.width(),
                    first.height()
                )));
            }
        }
        let r = if r.has_mask() {
            let fill = match r.unmasked_median() {
                Some(m) => m,
                None => {
                    let (lo, hi) = r.value_range();
                    flags.push(format!("fully_masked:{}", rec.modality));
                    lo + (hi - lo) / 2.0
                }
            };
            flags.push(format!("infilled:{}:{}", rec.modality, r.masked_count()));
            r.filled_masked(fill)
        } else {
            r
        };
        rasters.push(r);
    }
    let (w, h) = (rasters[0].width(), rasters[0].height());
    let n = rasters[0].len();
    let k = rasters.len();
    let mut features = vec![0.0f32; n * k];
    for (j, r) in rasters.iter().enumerate() {
        for (i, &v) in r.values().iter().enumerate() {
            features[i * k + j] = v;
        }
    }
    let values: Vec<f32> = model
        .predict_batch(&features)?
        .into_iter()
        .map(|v| v as f32)
        .collect();
    let out = Raster::from_values(w, h, values, q.modality.value_range())?;
    if q.modality.sensor().is_landsat() && (w, h) != (LANDSAT_OUTPUT_SIZE, LANDSAT_OUTPUT_SIZE) {
        return Ok(bilinear_resample(
            &out,
            LANDSAT_OUTPUT_SIZE,
            LANDSAT_OUTPUT_SIZE,
        )?);
    }
    Ok(out)
}

fn write_output(q: &CompletionQuery, r: &Raster, path: &Path, source: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    write_raster(r, path)?;
    write_meta(
        path,
        &RasterMeta {
            sensor: q.modality.sensor(),
            band: q.modality.band().to_string(),
            tile_id: q.tile_id.clone(),
            date: q.date,
            source: source.to_string(),
        },
    )?;
    Ok(())
}
