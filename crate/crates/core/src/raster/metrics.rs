use serde::{Deserialize, Serialize};

use super::{Raster, RasterError, Result};

/// PSNR reported when the two rasters agree exactly.
pub const DEFAULT_PSNR_CAP_DB: f64 = 100.0;

/// Mean squared error over pixels unmasked in both rasters.
pub fn mse(a: &Raster, b: &Raster) -> Result<f64> {
    a.check_dims(b)?;
    let mut sum = 0.0f64;
    let mut count = 0usize;
    for i in 0..a.len() {
        if a.is_masked(i) || b.is_masked(i) {
            continue;
        }
        let d = f64::from(a.values()[i]) - f64::from(b.values()[i]);
        sum += d * d;
        count += 1;
    }
    if count == 0 {
        return Err(RasterError::EmptyOverlap);
    }
    Ok(sum / count as f64)
}

pub fn psnr(pred: &Raster, target: &Raster, peak: f64, cap_db: f64) -> Result<f64> {
    if !(peak > 0.0) || !peak.is_finite() {
        return Err(RasterError::InvalidParameter(format!(
            "peak must be positive, got {peak}"
        )));
    }
    if !(cap_db > 0.0) {
        return Err(RasterError::InvalidParameter(format!(
            "cap must be positive, got {cap_db}"
        )));
    }
    let err = mse(pred, target)?;
    Ok(psnr_from_mse(err, peak, cap_db))
}

/// `10·log10(peak²/mse)`, or `cap_db` when `mse` is zero.
pub fn psnr_from_mse(mse: f64, peak: f64, cap_db: f64) -> f64 {
    if mse == 0.0 {
        cap_db
    } else {
        10.0 * (peak * peak / mse).log10()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SsimParams {
    /// Odd width of the Gaussian window, in pixels.
    pub window: usize,
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
    /// `hi - lo` of the target modality.
    pub dynamic_range: f64,
}

impl SsimParams {
    pub fn for_range(dynamic_range: f64) -> Self {
        SsimParams {
            window: 11,
            sigma: 1.5,
            k1: 0.01,
            k2: 0.03,
            dynamic_range,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.window < 3 || self.window % 2 == 0 {
            return Err(RasterError::InvalidParameter(format!(
                "SSIM window must be odd and >= 3, got {}",
                self.window
            )));
        }
        if !(self.k1 > 0.0 && self.k2 > 0.0) {
            return Err(RasterError::InvalidParameter(
                "k1 and k2 must be > 0".into(),
            ));
        }
        if !(self.sigma > 0.0 && self.dynamic_range > 0.0) {
            return Err(RasterError::InvalidParameter(
                "sigma and dynamic range must be > 0".into(),
            ));
        }
        Ok(())
    }

    /// Normalized 1-D Gaussian; the 2-D window is its outer product.
    pub fn kernel(&self) -> Vec<f64> {
        let half = (self.window / 2) as f64;
        let raw: Vec<f64> = (0..self.window)
            .map(|i| {
                let d = i as f64 - half;
                (-(d * d) / (2.0 * self.sigma * self.sigma)).exp()
            })
            .collect();
        let total: f64 = raw.iter().sum();
        raw.into_iter().map(|w| w / total).collect()
    }
}

/// Mean SSIM over every fully contained window position.
///
/// Both rasters must be free of masked pixels.
pub fn ssim(pred: &Raster, target: &Raster, p: &SsimParams) -> Result<f64> {
    pred.check_dims(target)?;
    p.validate()?;
    if pred.has_mask() || target.has_mask() {
        return Err(RasterError::MaskedInput);
    }
    let (w, h) = (pred.width() as usize, pred.height() as usize);
    let win = p.window;
    if win > w || win > h {
        return Err(RasterError::WindowTooLarge {
            window: win,
            width: pred.width(),
            height: pred.height(),
        });
    }
    let kernel = p.kernel();
    let c1 = (p.k1 * p.dynamic_range).powi(2);
    let c2 = (p.k2 * p.dynamic_range).powi(2);

    let x: Vec<f64> = pred.values().iter().map(|&v| f64::from(v)).collect();
    let y: Vec<f64> = target.values().iter().map(|&v| f64::from(v)).collect();
    let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a * b).collect();

    let mu_x = filter_valid(&x, w, h, &kernel);
    let mu_y = filter_valid(&y, w, h, &kernel);
    let e_xx = filter_valid(&xx, w, h, &kernel);
    let e_yy = filter_valid(&yy, w, h, &kernel);
    let e_xy = filter_valid(&xy, w, h, &kernel);

    let mut total = 0.0;
    for i in 0..mu_x.len() {
        let (mx, my) = (mu_x[i], mu_y[i]);
        let sxx = e_xx[i] - mx * mx;
        let syy = e_yy[i] - my * my;
        let sxy = e_xy[i] - mx * my;
        let num = (2.0 * mx * my + c1) * (2.0 * sxy + c2);
        let den = (mx * mx + my * my + c1) * (sxx + syy + c2);
        total += num / den;
    }
    Ok(total / mu_x.len() as f64)
}

/// Separable "valid" correlation: output is (w-k+1) × (h-k+1).
fn filter_valid(src: &[f64], w: usize, h: usize, kernel: &[f64]) -> Vec<f64> {
    let k = kernel.len();
    let ow = w - k + 1;
    let oh = h - k + 1;
    let mut rows = vec![0.0; ow * h];
    for y in 0..h {
        let line = &src[y * w..(y + 1) * w];
        for x in 0..ow {
            rows[y * ow + x] = kernel.iter().zip(&line[x..x + k]).map(|(a, b)| a * b).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = kernel
                .iter()
                .enumerate()
                .map(|(j, kv)| kv * rows[(y + j) * ow + x])
                .sum();
        }
    }
    out
}
