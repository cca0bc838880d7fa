use std::collections::BTreeSet;

use super::{Raster, RasterError, Result};

/// QA codes counted as cloud by default (medium, high probability and cirrus
/// in the Sentinel-2 scene classification convention).
pub const DEFAULT_CLOUD_CLASSES: [i32; 3] = [8, 9, 10];

/// Default threshold on `V − S` for the brightness–saturation test.
pub const DEFAULT_BS_TAU: f64 = 0.8;

const SATURATION_EPS: f64 = 1e-6;

pub fn nodata_ratio(r: &Raster) -> f64 {
    r.masked_count() as f64 / r.len() as f64
}

/// Fraction of pixels whose integer QA code is in `cloud_classes`.
///
/// Masked QA pixels count toward the total but never as cloud.
pub fn qa_cloud_ratio(qa: &Raster, cloud_classes: &BTreeSet<i32>) -> Result<f64> {
    let mut cloudy = 0usize;
    for (index, (&v, &masked)) in qa.values().iter().zip(qa.mask()).enumerate() {
        if masked {
            continue;
        }
        if v.fract() != 0.0 || v.abs() > i32::MAX as f32 {
            return Err(RasterError::NonIntegerQa { index, value: v });
        }
        if cloud_classes.contains(&(v as i32)) {
            cloudy += 1;
        }
    }
    Ok(cloudy as f64 / qa.len() as f64)
}

fn normalized(r: &Raster, i: usize) -> f64 {
    let (lo, hi) = r.value_range();
    let (lo, hi) = (f64::from(lo), f64::from(hi));
    ((f64::from(r.values()[i]) - lo) / (hi - lo)).clamp(0.0, 1.0)
}

/// Per-pixel brightness–saturation cloud test: `V − S > tau` with
/// `V = max(r,g,b)` and `S = (V − min(r,g,b)) / max(V, ε)` on values
/// normalized by each raster's value range.
pub fn brightness_saturation_mask(
    red: &Raster,
    green: &Raster,
    blue: &Raster,
    tau: f64,
) -> Result<Vec<bool>> {
    red.check_dims(green)?;
    red.check_dims(blue)?;
    if red.has_mask() || green.has_mask() || blue.has_mask() {
        return Err(RasterError::MaskedInput);
    }
    Ok((0..red.len())
        .map(|i| {
            let (r, g, b) = (
                normalized(red, i),
                normalized(green, i),
                normalized(blue, i),
            );
            let v = r.max(g).max(b);
            let min = r.min(g).min(b);
            let s = (v - min) / v.max(SATURATION_EPS);
            v - s > tau
        })
        .collect())
}

pub fn brightness_saturation_cloud_fraction(
    red: &Raster,
    green: &Raster,
    blue: &Raster,
    tau: f64,
) -> Result<f64> {
    let mask = brightness_saturation_mask(red, green, blue, tau)?;
    Ok(mask.iter().filter(|&&c| c).count() as f64 / mask.len() as f64)
}
