//! SSIM machinery: the structure term `s(x, y)`, whole-image SSIM, the
//! windowed structure matrix between two mean images, and the Retraining
//! Trigger Index (population standard deviation of that matrix).
//!
//! All statistics are population statistics over a window, with one value
//! per window (no inner Gaussian kernel).

use serde::{Deserialize, Serialize};

use crate::imaging::{MeanImage, Plane};
use crate::{Error, Result};

/// Regularization constants for intensities on `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimilarityParams {
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
}

impl Default for SimilarityParams {
    fn default() -> Self {
        SimilarityParams {
            c1: 0.01f64.powi(2),
            c2: 0.03f64.powi(2),
            c3: 0.03f64.powi(2) / 2.0,
        }
    }
}

impl SimilarityParams {
    pub fn unregularized() -> Self {
        SimilarityParams {
            c1: 0.0,
            c2: 0.0,
            c3: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if [self.c1, self.c2, self.c3].iter().all(|c| *c >= 0.0) {
            Ok(())
        } else {
            Err(Error::invalid("similarity constants must be non-negative"))
        }
    }
}

/// Which similarity index feeds the DISI dissimilarity term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SimilarityMode {
    /// Luminance × contrast × structure.
    #[default]
    Full,
    /// Structure term only.
    Structure,
}

/// Window side and stride of the structure matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct WindowGeometry {
    pub window: usize,
    pub stride: usize,
}

impl Default for WindowGeometry {
    fn default() -> Self {
        WindowGeometry {
            window: 500,
            stride: 250,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct PairStats {
    mean_x: f64,
    mean_y: f64,
    var_x: f64,
    var_y: f64,
    cov: f64,
}

/// Population statistics over the `w`×`h` window at `(x0, y0)`.
///
/// Values are taken relative to the window's first pixel before averaging,
/// so adding a constant that is exactly representable leaves every
/// deviation, and hence the variances and covariance, bit-identical.
fn pair_stats(a: &Plane<'_>, b: &Plane<'_>, x0: usize, y0: usize, w: usize, h: usize) -> PairStats {
    let ref_x = a.at(x0, y0) as f64;
    let ref_y = b.at(x0, y0) as f64;
    let n = (w * h) as f64;
    let (mut sx, mut sy) = (0.0f64, 0.0f64);
    for y in y0..y0 + h {
        let ra = &a.data[y * a.width + x0..y * a.width + x0 + w];
        let rb = &b.data[y * b.width + x0..y * b.width + x0 + w];
        for (&p, &q) in ra.iter().zip(rb) {
            sx += p as f64 - ref_x;
            sy += q as f64 - ref_y;
        }
    }
    let (dx, dy) = (sx / n, sy / n);
    let (mut vxx, mut vyy, mut vxy) = (0.0f64, 0.0f64, 0.0f64);
    for y in y0..y0 + h {
        let ra = &a.data[y * a.width + x0..y * a.width + x0 + w];
        let rb = &b.data[y * b.width + x0..y * b.width + x0 + w];
        for (&p, &q) in ra.iter().zip(rb) {
            let u = p as f64 - ref_x - dx;
            let v = q as f64 - ref_y - dy;
            vxx += u * u;
            vyy += v * v;
            vxy += u * v;
        }
    }
    PairStats {
        mean_x: ref_x + dx,
        mean_y: ref_y + dy,
        var_x: vxx / n,
        var_y: vyy / n,
        cov: vxy / n,
    }
}

fn structure_term(st: &PairStats, c3: f64) -> f64 {
    // sqrt of the product keeps self-comparison exactly 1
    let denom = (st.var_x * st.var_y).sqrt() + c3;
    if denom == 0.0 {
        // c3 = 0 with a flat window: identical flat windows carry no
        // structural difference, a flat-vs-textured pair carries no shared one
        return if st.var_x == 0.0 && st.var_y == 0.0 {
            1.0
        } else {
            0.0
        };
    }
    ((st.cov + c3) / denom).clamp(-1.0, 1.0)
}

fn check_same(a: &Plane<'_>, b: &Plane<'_>) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::DimensionMismatch {
            expected: format!("{}x{}", a.width, a.height),
            actual: format!("{}x{}", b.width, b.height),
        });
    }
    Ok(())
}

/// `(σ_xy + C3) / (σ_x σ_y + C3)` over the whole of both planes.
pub fn ssim_structure(x: &Plane<'_>, y: &Plane<'_>, params: &SimilarityParams) -> Result<f64> {
    check_same(x, y)?;
    if x.width * x.height < 2 {
        return Err(Error::invalid("structure term needs at least 2 pixels"));
    }
    let st = pair_stats(x, y, 0, 0, x.width, x.height);
    Ok(structure_term(&st, params.c3))
}

/// Luminance × contrast × structure with whole-image statistics.
pub fn ssim_full(x: &Plane<'_>, y: &Plane<'_>, params: &SimilarityParams) -> Result<f64> {
    check_same(x, y)?;
    let st = pair_stats(x, y, 0, 0, x.width, x.height);
    let ratio = |num: f64, den: f64| if den == 0.0 { 1.0 } else { num / den };
    let l = ratio(
        2.0 * st.mean_x * st.mean_y + params.c1,
        st.mean_x * st.mean_x + st.mean_y * st.mean_y + params.c1,
    );
    let c = ratio(
        2.0 * (st.var_x * st.var_y).sqrt() + params.c2,
        st.var_x + st.var_y + params.c2,
    );
    Ok(l * c * structure_term(&st, params.c3))
}

pub fn similarity_index(
    x: &Plane<'_>,
    y: &Plane<'_>,
    mode: SimilarityMode,
    params: &SimilarityParams,
) -> Result<f64> {
    match mode {
        SimilarityMode::Full => ssim_full(x, y, params),
        SimilarityMode::Structure => ssim_structure(x, y, params),
    }
}

/// Grid of window structure values, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructureMatrix {
    pub rows: usize,
    pub cols: usize,
    pub window: usize,
    pub stride: usize,
    pub values: Vec<f64>,
}

impl StructureMatrix {
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.cols + col]
    }
}

/// Number of window placements along an axis of length `extent`.
pub fn grid_len(extent: usize, geometry: &WindowGeometry) -> usize {
    (extent - geometry.window) / geometry.stride + 1
}

/// Structure values over aligned windows at offsets `0, stride, 2·stride, …`.
pub fn structure_matrix(
    a: &Plane<'_>,
    b: &Plane<'_>,
    geometry: &WindowGeometry,
    params: &SimilarityParams,
) -> Result<StructureMatrix> {
    check_same(a, b)?;
    let WindowGeometry { window, stride } = *geometry;
    if stride == 0 {
        return Err(Error::invalid("stride must be at least 1"));
    }
    if window < 1 || window * window < 2 {
        return Err(Error::invalid("window must cover at least 2 pixels"));
    }
    if window > a.width || window > a.height {
        return Err(Error::invalid(format!(
            "window {window} larger than image {}x{}",
            a.width, a.height
        )));
    }
    let rows = grid_len(a.height, geometry);
    let cols = grid_len(a.width, geometry);
    let mut values = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            let st = pair_stats(a, b, c * stride, r * stride, window, window);
            values.push(structure_term(&st, params.c3));
        }
    }
    Ok(StructureMatrix {
        rows,
        cols,
        window,
        stride,
        values,
    })
}

pub fn structure_matrix_means(
    a: &MeanImage,
    b: &MeanImage,
    geometry: &WindowGeometry,
    params: &SimilarityParams,
) -> Result<StructureMatrix> {
    structure_matrix(&a.plane()?, &b.plane()?, geometry, params)
}

/// Retraining Trigger Index: population standard deviation of all entries.
pub fn rti(m: &StructureMatrix) -> f64 {
    let n = m.values.len() as f64;
    // deviations from the first entry, so a constant matrix gives exactly 0
    let pivot = m.values.first().copied().unwrap_or(0.0);
    let mean = m.values.iter().map(|v| v - pivot).sum::<f64>() / n;
    let var = m
        .values
        .iter()
        .map(|v| (v - pivot - mean).powi(2))
        .sum::<f64>()
        / n;
    var.sqrt()
}

/// RTI between two mean images.
pub fn rti_between(
    a: &MeanImage,
    b: &MeanImage,
    geometry: &WindowGeometry,
    params: &SimilarityParams,
) -> Result<f64> {
    Ok(rti(&structure_matrix_means(a, b, geometry, params)?))
}
