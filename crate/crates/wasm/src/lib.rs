//! Browser demo: a synthetic tile viewed three ways. Everything runs in
//! memory; images come back as RGBA bytes for an `ImageData`.

use stackfill::gbdt::{self, Dataset, GbdtParams};
use stackfill::raster::{
    bilinear_resample, brightness_saturation_mask, psnr, ssim, CalendarDate, Raster, Sensor,
    SsimParams, DEFAULT_PSNR_CAP_DB,
};
use stackfill::synth::{render, Observation, SceneConfig};
use wasm_bindgen::prelude::*;

const TILE: &str = "T00";
const OPTICAL_SIZE: u32 = 96;
const LANDSAT_SIZE: u32 = 32;

type Result<T> = std::result::Result<T, String>;

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn js(e: String) -> JsError {
    JsError::new(&e)
}

/// Stretches `rgb` bands jointly to 2nd..98th percentile and packs RGBA.
fn composite(r: &Raster, g: &Raster, b: &Raster) -> Vec<u8> {
    let mut all: Vec<f32> = [r, g, b]
        .iter()
        .flat_map(|x| x.values().iter().copied())
        .collect();
    all.sort_by(f32::total_cmp);
    let lo = all[all.len() / 50];
    let hi = all[all.len() - 1 - all.len() / 50].max(lo + 1e-6);
    let to_u8 = |v: f32| (((v - lo) / (hi - lo)).clamp(0.0, 1.0) * 255.0).round() as u8;
    let mut out = Vec::with_capacity(r.len() * 4);
    for i in 0..r.len() {
        out.extend_from_slice(&[
            to_u8(r.values()[i]),
            to_u8(g.values()[i]),
            to_u8(b.values()[i]),
            255,
        ]);
    }
    out
}

fn grey(r: &Raster) -> Vec<u8> {
    composite(r, r, r)
}

fn band<'a>(obs: &'a Observation, name: &str) -> Option<&'a Raster> {
    obs.bands.iter().find(|(b, _)| b == name).map(|(_, r)| r)
}

fn complete(obs: &Observation, names: &[&str]) -> bool {
    !obs.nodata && names.iter().all(|n| band(obs, n).is_some())
}

/// A seeded synthetic tile.
#[wasm_bindgen]
pub struct Scene {
    cfg: SceneConfig,
}

/// Outcome of the reconstruction demo.
#[wasm_bindgen]
pub struct Reconstruction {
    truth: Vec<u8>,
    predicted: Vec<u8>,
    psnr: f64,
    ssim: f64,
    train_rows: usize,
    date: String,
}

#[wasm_bindgen]
impl Reconstruction {
    pub fn truth(&self) -> Vec<u8> {
        self.truth.clone()
    }

    pub fn predicted(&self) -> Vec<u8> {
        self.predicted.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn psnr(&self) -> f64 {
        self.psnr
    }

    #[wasm_bindgen(getter)]
    pub fn ssim(&self) -> f64 {
        self.ssim
    }

    #[wasm_bindgen(getter, js_name = trainRows)]
    pub fn train_rows(&self) -> usize {
        self.train_rows
    }

    #[wasm_bindgen(getter)]
    pub fn date(&self) -> String {
        self.date.clone()
    }
}

#[wasm_bindgen]
impl Scene {
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u32) -> Scene {
        Scene {
            cfg: SceneConfig {
                seed: u64::from(seed),
                tile_count: 1,
                sentinel_size: OPTICAL_SIZE,
                landsat_size: LANDSAT_SIZE,
                cloud_probability: 0.35,
                ..SceneConfig::default()
            },
        }
    }

    #[wasm_bindgen(getter)]
    pub fn size(&self) -> u32 {
        OPTICAL_SIZE
    }

    /// Landsat composite; see [`Scene::try_landsat`].
    pub fn landsat(&self, out: u32, bilinear: bool) -> std::result::Result<Vec<u8>, JsError> {
        self.try_landsat(out, bilinear).map_err(js)
    }

    #[wasm_bindgen(js_name = cloudView)]
    pub fn cloud_view(&self, tau: f64) -> std::result::Result<Vec<u8>, JsError> {
        self.try_cloud_view(tau).map_err(js)
    }

    #[wasm_bindgen(js_name = cloudFraction)]
    pub fn cloud_fraction(&self, tau: f64) -> std::result::Result<f64, JsError> {
        self.try_cloud_fraction(tau).map_err(js)
    }

    pub fn reconstruct(
        &self,
        trees: u32,
        depth: u32,
    ) -> std::result::Result<Reconstruction, JsError> {
        self.try_reconstruct(trees, depth).map_err(js)
    }
}

impl Scene {
    fn observations(&self, sensor: Sensor) -> Result<Vec<(CalendarDate, Observation)>> {
        self.cfg.dates[&sensor]
            .iter()
            .map(|&d| Ok((d, render(&self.cfg, TILE, sensor, d).map_err(err)?)))
            .collect()
    }

    /// Landsat 8 true-colour composite of the first complete date, at its
    /// native grid (scaled up by pixel repetition to `out`) or bilinearly
    /// resampled to `out`×`out`.
    pub fn try_landsat(&self, out: u32, bilinear: bool) -> Result<Vec<u8>> {
        let names = ["SR_B4", "SR_B3", "SR_B2"];
        let obs = self.observations(Sensor::Landsat8)?;
        let (_, o) = obs
            .iter()
            .find(|(_, o)| complete(o, &names))
            .ok_or_else(|| "no complete Landsat date".to_string())?;
        let rgb: Vec<Raster> = names
            .iter()
            .map(|n| {
                let r = band(o, n).expect("checked above");
                if bilinear {
                    bilinear_resample(r, out, out)
                } else {
                    Ok(nearest(r, out))
                }
            })
            .collect::<std::result::Result<_, _>>()
            .map_err(err)?;
        Ok(composite(&rgb[0], &rgb[1], &rgb[2]))
    }

    /// Sentinel-2 composite of the cloudiest date with pixels flagged by the
    /// brightness-saturation test at `tau` painted magenta.
    pub fn try_cloud_view(&self, tau: f64) -> Result<Vec<u8>> {
        let (mut rgba, mask) = self.cloud_mask(tau)?;
        for (i, &cloud) in mask.iter().enumerate() {
            if cloud {
                rgba[i * 4..i * 4 + 3].copy_from_slice(&[255, 0, 255]);
            }
        }
        Ok(rgba)
    }

    /// Share of pixels flagged at `tau`.
    pub fn try_cloud_fraction(&self, tau: f64) -> Result<f64> {
        let (_, mask) = self.cloud_mask(tau)?;
        Ok(mask.iter().filter(|&&c| c).count() as f64 / mask.len() as f64)
    }

    /// Hides NIR (B8) on the last complete Sentinel-2 date and predicts it
    /// from that date's visible bands with a model fit on earlier dates.
    pub fn try_reconstruct(&self, trees: u32, depth: u32) -> Result<Reconstruction> {
        let inputs = ["B2", "B3", "B4"];
        let names = ["B2", "B3", "B4", "B8"];
        let usable: Vec<(CalendarDate, Observation)> = self
            .observations(Sensor::Sentinel2)?
            .into_iter()
            .filter(|(_, o)| !o.cloudy && complete(o, &names))
            .collect();
        let Some(((date, target), train)) = usable.split_last() else {
            return Err("no cloud-free Sentinel-2 date".into());
        };
        if train.is_empty() {
            return Err("need at least two cloud-free dates".into());
        }
        let rows = |o: &Observation| -> Vec<f32> {
            let bands: Vec<&Raster> = inputs
                .iter()
                .map(|n| band(o, n).expect("complete"))
                .collect();
            (0..bands[0].len())
                .flat_map(|i| bands.iter().map(move |b| b.values()[i]))
                .collect()
        };
        let mut x = Vec::new();
        let mut y = Vec::new();
        for (_, o) in train {
            x.extend(rows(o));
            y.extend_from_slice(band(o, "B8").expect("complete").values());
        }
        let data = Dataset::new(x, y, inputs.len()).map_err(err)?;
        let params = GbdtParams {
            n_trees: trees,
            depth,
            early_stop_rounds: None,
            ..GbdtParams::default()
        };
        let (model, _) = gbdt::train(&data, None, &params).map_err(err)?;
        let pred: Vec<f32> = model
            .predict_batch(&rows(target))
            .map_err(err)?
            .into_iter()
            .map(|v| v as f32)
            .collect();
        let truth = band(target, "B8").expect("complete");
        let pred = Raster::from_values(truth.width(), truth.height(), pred, truth.value_range())
            .map_err(err)?;
        let (lo, hi) = truth.value_range();
        let range = f64::from(hi) - f64::from(lo);
        // shared stretch so the two images are comparable
        let pair = composite_pair(truth, &pred);
        Ok(Reconstruction {
            psnr: psnr(&pred, truth, range, DEFAULT_PSNR_CAP_DB).map_err(err)?,
            ssim: ssim(&pred, truth, &SsimParams::for_range(range)).map_err(err)?,
            truth: pair.0,
            predicted: pair.1,
            train_rows: data.len(),
            date: date.to_string(),
        })
    }

    fn cloud_mask(&self, tau: f64) -> Result<(Vec<u8>, Vec<bool>)> {
        let names = ["B4", "B3", "B2"];
        let obs = self.observations(Sensor::Sentinel2)?;
        let (_, o) = obs
            .iter()
            .filter(|(_, o)| complete(o, &names))
            .max_by_key(|(_, o)| {
                o.qa.as_ref()
                    .map_or(0, |qa| qa.values().iter().filter(|&&c| c >= 8.0).count())
            })
            .ok_or_else(|| "no complete Sentinel-2 date".to_string())?;
        let rgb: Vec<&Raster> = names
            .iter()
            .map(|n| band(o, n).expect("complete"))
            .collect();
        let mask = brightness_saturation_mask(rgb[0], rgb[1], rgb[2], tau).map_err(err)?;
        Ok((composite(rgb[0], rgb[1], rgb[2]), mask))
    }
}

fn composite_pair(a: &Raster, b: &Raster) -> (Vec<u8>, Vec<u8>) {
    let w = a.width();
    let joined: Vec<f32> = a.values().iter().chain(b.values()).copied().collect();
    let both = Raster::from_values(w, a.height() * 2, joined, a.value_range())
        .expect("same shape as the inputs");
    let rgba = grey(&both);
    let half = rgba.len() / 2;
    (rgba[..half].to_vec(), rgba[half..].to_vec())
}

fn nearest(r: &Raster, out: u32) -> Raster {
    let (w, h) = (r.width(), r.height());
    let values = (0..out * out)
        .map(|i| {
            let (x, y) = (i % out, i / out);
            r.get(x * w / out, y * h / out)
        })
        .collect();
    Raster::from_values(out, out, values, r.value_range()).expect("valid dimensions")
}
