//! Directory-based request/response protocol for inter-modal generation.
//!
//! The engine writes `req_<id>.json` into the exchange directory and waits.
//! A generator answers by writing the requested raster to `output_path` and
//! then an empty `req_<id>.done` marker, or `req_<id>.err` holding a reason.

use std::fs;
use std::path::{Path, PathBuf};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::{PatternError, Result};
use crate::raster::{read_raster, write_atomic, CalendarDate, ModalityId, Raster};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExchangeConfig {
    /// Unset or missing directory means no generator is available.
    pub dir: Option<PathBuf>,
    #[serde(with = "secs")]
    pub timeout: Duration,
    #[serde(with = "secs")]
    pub poll_interval: Duration,
}

impl Default for ExchangeConfig {
    fn default() -> Self {
        ExchangeConfig {
            dir: None,
            timeout: Duration::from_secs(600),
            poll_interval: Duration::from_millis(200),
        }
    }
}

mod secs {
    use std::time::Duration;

    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(d.as_secs_f64())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        let v = f64::deserialize(d)?;
        Duration::try_from_secs_f64(v).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RequestInput {
    pub modality: ModalityId,
    pub path: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRequest {
    pub id: String,
    pub tile_id: String,
    pub date: CalendarDate,
    pub conditioning_date: CalendarDate,
    /// In the band order the fallback rule lists.
    pub conditioning: Vec<RequestInput>,
    pub output_modality: ModalityId,
    pub output_path: String,
    pub value_range: (f32, f32),
}

impl GenerationRequest {
    pub fn request_file(&self, dir: &Path) -> PathBuf {
        dir.join(format!("req_{}.json", self.id))
    }
}

/// Path of the success marker for request `id`.
pub fn done_path(dir: &Path, id: &str) -> PathBuf {
    dir.join(format!("req_{id}.done"))
}

/// Path of the failure marker for request `id`.
pub fn err_path(dir: &Path, id: &str) -> PathBuf {
    dir.join(format!("req_{id}.err"))
}

impl ExchangeConfig {
    /// Posts `req` and blocks until it is answered, failed or timed out.
    pub fn generate(&self, req: &GenerationRequest) -> Result<Raster> {
        let dir = match &self.dir {
            Some(d) if d.is_dir() => d,
            Some(d) => {
                return Err(PatternError::GenerationUnavailable(format!(
                    "exchange directory {} does not exist",
                    d.display()
                )))
            }
            None => {
                return Err(PatternError::GenerationUnavailable(
                    "no exchange directory configured".into(),
                ))
            }
        };
        let done = done_path(dir, &req.id);
        let err = err_path(dir, &req.id);
        // stale markers from an earlier run would answer the new request
        for stale in [&done, &err] {
            if stale.exists() {
                fs::remove_file(stale)?;
            }
        }
        let body = serde_json::to_vec_pretty(req).expect("request serializes");
        write_atomic(&req.request_file(dir), &body)?;

        let start = Instant::now();
        loop {
            if err.exists() {
                let reason = fs::read_to_string(&err).unwrap_or_default();
                return Err(PatternError::GenerationFailed(reason.trim().to_string()));
            }
            if done.exists() {
                return Ok(read_raster(&req.output_path)?);
            }
            if start.elapsed() >= self.timeout {
                return Err(PatternError::GenerationTimeout(self.timeout));
            }
            thread::sleep(
                self.poll_interval
                    .min(self.timeout.saturating_sub(start.elapsed())),
            );
        }
    }
}
