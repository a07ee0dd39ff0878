//! Alignment objective: masked L1 depth term, Sobel contour term and L2
//! pose regularization, with cotangent maps for the backward pass.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::Pose;
use crate::grad::Cotangents;
use crate::image::{DepthImage, Image, Mask};
use crate::renderer::RenderOutput;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda_q: f64,
    pub lambda_t: f64,
    pub depth_source: DepthSource,
    pub reduction: Reduction,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda1: 0.8,
            lambda2: 0.2,
            lambda_q: 0.0,
            lambda_t: 0.0,
            depth_source: DepthSource::Normalized,
            reduction: Reduction::Mean,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if [self.lambda1, self.lambda2, self.lambda_q, self.lambda_t]
            .iter()
            .all(|v| *v >= 0.0 && v.is_finite())
        {
            Ok(())
        } else {
            Err(Error::Config("loss weights must be non-negative".into()))
        }
    }
}

/// Which rendered map the loss compares against the observation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DepthSource {
    #[default]
    Normalized,
    Raw,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Reduction {
    #[default]
    Mean,
    Sum,
}

impl Reduction {
    fn scale(self, count: usize) -> f64 {
        match self {
            Reduction::Mean => 1.0 / count as f64,
            Reduction::Sum => 1.0,
        }
    }
}

/// Scalar summary of a [`LossBreakdown`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    pub total: f64,
    pub depth: f64,
    pub contour: f64,
    pub reg: f64,
    pub valid_pixels: usize,
}

#[derive(Debug, Clone)]
pub struct LossBreakdown {
    pub total: f64,
    pub depth_term: f64,
    pub contour_term: f64,
    pub reg_term: f64,
    pub valid_pixel_count: usize,
    pub contour_pixel_count: usize,
    /// Set when the overlap had no pixel with a full valid 3×3 neighborhood.
    pub contour_empty: bool,
    pub upstream: Cotangents,
}

impl LossBreakdown {
    pub fn terms(&self) -> LossTerms {
        LossTerms {
            total: self.total,
            depth: self.depth_term,
            contour: self.contour_term,
            reg: self.reg_term,
            valid_pixels: self.valid_pixel_count,
        }
    }
}

const SOBEL_X: [[f64; 3]; 3] = [[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]];
const SOBEL_Y: [[f64; 3]; 3] = [[-1.0, -2.0, -1.0], [0.0, 0.0, 0.0], [1.0, 2.0, 1.0]];

#[derive(Debug, Clone)]
pub struct SobelResponse {
    pub gx: Image,
    pub gy: Image,
    /// Pixels whose whole 3×3 neighborhood lies inside the image and the mask.
    pub valid: Mask,
}

/// Pixels whose whole 3×3 neighborhood is inside the image and `mask`.
pub fn interior_mask(mask: &Mask) -> Mask {
    let (w, h) = (mask.width(), mask.height());
    Mask::from_fn(w, h, |x, y| {
        if x == 0 || y == 0 || x + 1 >= w || y + 1 >= h {
            return false;
        }
        (y - 1..=y + 1).all(|yy| (x - 1..=x + 1).all(|xx| mask.get(xx, yy)))
    })
}

/// Raw 3×3 Sobel responses, evaluated where the neighborhood is mask-valid.
pub fn sobel_gradients(img: &Image, mask: &Mask) -> Result<SobelResponse> {
    let (w, h) = (img.width(), img.height());
    if w < 3 || h < 3 {
        return Err(Error::InvalidArgument(format!(
            "{w}x{h} image is smaller than the 3x3 Sobel kernel"
        )));
    }
    if mask.width() != w || mask.height() != h {
        return Err(Error::InvalidArgument("image/mask shapes differ".into()));
    }
    let valid = interior_mask(mask);
    let mut gx = Image::zeros(w, h);
    let mut gy = Image::zeros(w, h);
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            if !valid.get(x, y) {
                continue;
            }
            let a = |i: usize, j: usize| img.get(x + i - 1, y + j - 1);
            // difference of weighted sums keeps flat regions exactly zero
            let right = a(2, 0) + 2.0 * a(2, 1) + a(2, 2);
            let left = a(0, 0) + 2.0 * a(0, 1) + a(0, 2);
            let bottom = a(0, 2) + 2.0 * a(1, 2) + a(2, 2);
            let top = a(0, 0) + 2.0 * a(1, 0) + a(2, 0);
            gx.set(x, y, right - left);
            gy.set(x, y, bottom - top);
        }
    }
    Ok(SobelResponse { gx, gy, valid })
}

fn check_shapes(rendered: &Image, observed: &DepthImage, mask: &Mask) -> Result<()> {
    let ok = rendered.width() == observed.width()
        && rendered.height() == observed.height()
        && mask.width() == rendered.width()
        && mask.height() == rendered.height();
    if ok {
        Ok(())
    } else {
        Err(Error::InvalidArgument(
            "rendered, observed and mask shapes differ".into(),
        ))
    }
}

/// L1 depth loss over `mask ∧ observed.valid`. Returns the loss and its
/// gradient w.r.t. `rendered`.
pub fn depth_loss(
    rendered: &Image,
    observed: &DepthImage,
    mask: &Mask,
    reduction: Reduction,
) -> Result<(f64, Image, usize)> {
    check_shapes(rendered, observed, mask)?;
    let m = mask.and(&observed.valid)?;
    let count = m.count();
    if count == 0 {
        return Err(Error::EmptyOverlap);
    }
    let scale = reduction.scale(count);
    let mut grad = Image::zeros(rendered.width(), rendered.height());
    let mut sum = 0.0;
    for (i, &on) in m.as_slice().iter().enumerate() {
        if !on {
            continue;
        }
        let diff = rendered.as_slice()[i] - observed.depth.as_slice()[i];
        sum += diff.abs();
        grad.as_mut_slice()[i] = if diff > 0.0 {
            scale
        } else if diff < 0.0 {
            -scale
        } else {
            0.0
        };
    }
    Ok((sum * scale, grad, count))
}

/// Mean (or sum) over contour-valid pixels of `|Δgx| + |Δgy|`, with the
/// gradient w.r.t. `rendered` from the transposed Sobel correlation.
/// Returns `(loss, gradient, contour pixel count)`; an empty contour set
/// yields a zero loss.
pub fn contour_loss(
    rendered: &Image,
    observed: &DepthImage,
    mask: &Mask,
    reduction: Reduction,
) -> Result<(f64, Image, usize)> {
    check_shapes(rendered, observed, mask)?;
    let m = mask.and(&observed.valid)?;
    let r = sobel_gradients(rendered, &m)?;
    let o = sobel_gradients(&observed.depth, &m)?;
    let (w, h) = (rendered.width(), rendered.height());
    let count = r.valid.count();
    let mut grad = Image::zeros(w, h);
    if count == 0 {
        return Ok((0.0, grad, 0));
    }
    let scale = reduction.scale(count);
    let mut sum = 0.0;
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            if !r.valid.get(x, y) {
                continue;
            }
            let ex = r.gx.get(x, y) - o.gx.get(x, y);
            let ey = r.gy.get(x, y) - o.gy.get(x, y);
            sum += ex.abs() + ey.abs();
            let (sx, sy) = (sign(ex) * scale, sign(ey) * scale);
            if sx == 0.0 && sy == 0.0 {
                continue;
            }
            for j in 0..3 {
                for i in 0..3 {
                    grad.add(x + i - 1, y + j - 1, sx * SOBEL_X[j][i] + sy * SOBEL_Y[j][i]);
                }
            }
        }
    }
    Ok((sum * scale, grad, count))
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// `λ1·L_d + λ2·L_c + λ_q|q|² + λ_t|t|²` on a render, with cotangents on
/// the chosen depth map. The alpha mask is a hard gate, so the alpha
/// cotangent is zero.
pub fn total_loss(
    out: &RenderOutput,
    observed: &DepthImage,
    pose: &Pose,
    w: &LossWeights,
) -> Result<LossBreakdown> {
    let rendered = match w.depth_source {
        DepthSource::Normalized => &out.norm_depth,
        DepthSource::Raw => &out.depth,
    };
    let (depth_term, d_grad, valid_pixel_count) =
        depth_loss(rendered, observed, &out.mask, w.reduction)?;
    let (contour_term, c_grad, contour_pixel_count) =
        contour_loss(rendered, observed, &out.mask, w.reduction)?;
    let reg_term = w.lambda_q * pose.rotation.norm_squared()
        + w.lambda_t * pose.translation.norm_squared();
    let total = w.lambda1 * depth_term + w.lambda2 * contour_term + reg_term;

    let (width, height) = (rendered.width(), rendered.height());
    let mut g = Image::zeros(width, height);
    for ((dst, a), b) in g
        .as_mut_slice()
        .iter_mut()
        .zip(d_grad.as_slice())
        .zip(c_grad.as_slice())
    {
        *dst = w.lambda1 * a + w.lambda2 * b;
    }
    let mut upstream = Cotangents::zeros(width, height);
    match w.depth_source {
        DepthSource::Normalized => upstream.norm_depth = g,
        DepthSource::Raw => upstream.depth = Some(g),
    }
    Ok(LossBreakdown {
        total,
        depth_term,
        contour_term,
        reg_term,
        valid_pixel_count,
        contour_pixel_count,
        contour_empty: contour_pixel_count == 0,
        upstream,
    })
}

/// Gradient of the regularizer w.r.t. the 7 ambient pose parameters.
pub fn regularization_gradient(pose: &Pose, w: &LossWeights) -> [f64; 7] {
    let p = pose.to_params();
    let mut g = [0.0; 7];
    for i in 0..4 {
        g[i] = 2.0 * w.lambda_q * p[i];
    }
    for i in 4..7 {
        g[i] = 2.0 * w.lambda_t * p[i];
    }
    g
}
