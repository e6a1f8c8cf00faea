use image::RgbImage;

use super::ModelError;
use crate::tensor::Tensor;

pub const DEFAULT_CHANNEL_MEAN: f32 = 0.5;

/// Converts decoded RGB crops into network input tensors: bilinear resize to
/// the model input size, scale to `[0, 1]`, subtract per-channel means.
#[derive(Clone, Debug, PartialEq)]
pub struct Preprocessor {
    pub height: usize,
    pub width: usize,
    pub channel_means: [f32; 3],
}

impl Preprocessor {
    /// Returns a `[1, 3, H, W]` tensor.
    pub fn apply(&self, image: &RgbImage) -> Result<Tensor, ModelError> {
        if image.width() == 0 || image.height() == 0 {
            return Err(ModelError::InvalidImage(format!(
                "image has zero dimension {}x{}",
                image.width(),
                image.height()
            )));
        }
        let mut planes = resize_bilinear(image, self.width, self.height);
        let area = self.height * self.width;
        for (c, plane) in planes.chunks_mut(area).enumerate() {
            let mean = self.channel_means[c];
            for v in plane {
                *v = *v / 255.0 - mean;
            }
        }
        Ok(Tensor::from_vec(&[1, 3, self.height, self.width], planes)?)
    }
}

/// Bilinear resampling with half-pixel centres and edge clamping.
///
/// Output is planar `[3, out_h, out_w]` in the source value range (0–255).
/// When the output size equals the input size every sample lands exactly on
/// a source pixel, so the image is reproduced unchanged.
pub fn resize_bilinear(image: &RgbImage, out_w: usize, out_h: usize) -> Vec<f32> {
    let (in_w, in_h) = (image.width() as usize, image.height() as usize);
    let raw = image.as_raw();
    let axis = |out: usize, len: usize| -> Vec<(usize, usize, f32)> {
        let scale = len as f64 / out as f64;
        (0..out)
            .map(|o| {
                let src = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (len - 1) as f64);
                let lo = src.floor() as usize;
                let hi = (lo + 1).min(len - 1);
                (lo, hi, (src - lo as f64) as f32)
            })
            .collect()
    };
    let xs = axis(out_w, in_w);
    let ys = axis(out_h, in_h);
    let mut planes = vec![0.0f32; 3 * out_h * out_w];
    for (oy, &(y0, y1, fy)) in ys.iter().enumerate() {
        for (ox, &(x0, x1, fx)) in xs.iter().enumerate() {
            for c in 0..3 {
                let px = |x: usize, y: usize| raw[(y * in_w + x) * 3 + c] as f32;
                let top = px(x0, y0) * (1.0 - fx) + px(x1, y0) * fx;
                let bottom = px(x0, y1) * (1.0 - fx) + px(x1, y1) * fx;
                planes[(c * out_h + oy) * out_w + ox] = top * (1.0 - fy) + bottom * fy;
            }
        }
    }
    planes
}
