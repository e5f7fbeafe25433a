use crate::image::MultiChannelImage;

/// Axis-aligned source window in pixel units.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Region {
    pub top: f64,
    pub left: f64,
    pub height: f64,
    pub width: f64,
}

impl Region {
    pub fn full(height: usize, width: usize) -> Self {
        Self {
            top: 0.0,
            left: 0.0,
            height: height as f64,
            width: width as f64,
        }
    }
}

/// Source coordinate and interpolation weight pairs for one output axis
/// (half-pixel centers, edge clamped).
fn axis_taps(len: usize, start: f64, extent: f64, out: usize) -> Vec<(usize, usize, f64)> {
    let scale = extent / out as f64;
    (0..out)
        .map(|i| {
            let src = (start + (i as f64 + 0.5) * scale - 0.5).clamp(0.0, (len - 1) as f64);
            let lo = src.floor() as usize;
            let hi = (lo + 1).min(len - 1);
            (lo, hi, src - lo as f64)
        })
        .collect()
}

/// Bilinear resampling of `region` of one channel onto an `out_h x out_w`
/// grid.
pub fn resample_channel(
    channel: &[f32],
    height: usize,
    width: usize,
    region: Region,
    out_h: usize,
    out_w: usize,
) -> Vec<f32> {
    let ys = axis_taps(height, region.top, region.height, out_h);
    let xs = axis_taps(width, region.left, region.width, out_w);
    let mut out = Vec::with_capacity(out_h * out_w);
    for &(y0, y1, fy) in &ys {
        for &(x0, x1, fx) in &xs {
            let at = |y: usize, x: usize| channel[y * width + x] as f64;
            let top = at(y0, x0) * (1.0 - fx) + at(y0, x1) * fx;
            let bottom = at(y1, x0) * (1.0 - fx) + at(y1, x1) * fx;
            out.push((top * (1.0 - fy) + bottom * fy) as f32);
        }
    }
    out
}

/// Resizes every channel to `side x side` (align-corners false).
pub fn resize_bilinear(image: &MultiChannelImage, side: usize) -> MultiChannelImage {
    assert!(side >= 1, "resize side must be positive");
    let (h, w) = (image.height(), image.width());
    let mut pixels = Vec::with_capacity(image.channels() * side * side);
    for c in 0..image.channels() {
        pixels.extend(resample_channel(image.channel(c), h, w, Region::full(h, w), side, side));
    }
    MultiChannelImage::new_unchecked_range(side, side, pixels, image.channel_names().to_vec())
        .expect("resampling preserves finiteness")
}
