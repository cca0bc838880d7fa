use super::{Raster, RasterError, Result};

/// Source coordinate for output index `i` under the edge-aligned mapping
/// `u = i·(n_in−1)/(n_out−1)`; a single output sample maps to the center.
fn source_coord(i: u32, n_in: u32, n_out: u32) -> f64 {
    if n_out == 1 {
        f64::from(n_in - 1) / 2.0
    } else {
        f64::from(i) * f64::from(n_in - 1) / f64::from(n_out - 1)
    }
}

fn split(u: f64, n_in: u32) -> (usize, usize, f64) {
    let i0 = (u.floor() as usize).min(n_in as usize - 1);
    let i1 = (i0 + 1).min(n_in as usize - 1);
    (i0, i1, u - i0 as f64)
}

/// Bilinear resampling with corner-aligned sample grids.
pub fn bilinear_resample(r: &Raster, out_w: u32, out_h: u32) -> Result<Raster> {
    if out_w == 0 || out_h == 0 {
        return Err(RasterError::InvalidParameter(format!(
            "output size {out_w}x{out_h} has a zero dimension"
        )));
    }
    if r.has_mask() {
        return Err(RasterError::MaskedInput);
    }
    let (w, h) = (r.width(), r.height());
    let src = r.values();
    let cols: Vec<(usize, usize, f64)> = (0..out_w)
        .map(|x| split(source_coord(x, w, out_w), w))
        .collect();
    let mut out = Vec::with_capacity(out_w as usize * out_h as usize);
    for y in 0..out_h {
        let (y0, y1, ty) = split(source_coord(y, h, out_h), h);
        let row0 = &src[y0 * w as usize..(y0 + 1) * w as usize];
        let row1 = &src[y1 * w as usize..(y1 + 1) * w as usize];
        for &(x0, x1, tx) in &cols {
            let top = lerp(row0[x0], row0[x1], tx);
            let bottom = lerp(row1[x0], row1[x1], tx);
            let v = top + ty * (bottom - top);
            out.push(v as f32);
        }
    }
    Raster::from_values(out_w, out_h, out, r.value_range())
}

fn lerp(a: f32, b: f32, t: f64) -> f64 {
    let a = f64::from(a);
    a + t * (f64::from(b) - a)
}
