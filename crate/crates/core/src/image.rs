use crate::error::{Error, Result};

/// `channels x height x width` image, channel-major, values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct MultiChannelImage {
    height: usize,
    width: usize,
    pixels: Vec<f32>,
    channel_names: Vec<String>,
}

impl MultiChannelImage {
    /// Validates shape, finiteness and the `[0, 1]` range.
    pub fn new(height: usize, width: usize, pixels: Vec<f32>, channel_names: Vec<String>) -> Result<Self> {
        let img = Self::new_unchecked_range(height, width, pixels, channel_names)?;
        if let Some(v) = img.pixels.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::invalid(format!("pixel value {v} outside [0, 1]")));
        }
        Ok(img)
    }

    /// Like [`MultiChannelImage::new`] but accepts any finite intensity, for
    /// raw data before [`MultiChannelImage::normalize_min_max`].
    pub fn new_unchecked_range(
        height: usize,
        width: usize,
        pixels: Vec<f32>,
        mut channel_names: Vec<String>,
    ) -> Result<Self> {
        let plane = height * width;
        if plane == 0 {
            return Err(Error::invalid("image has zero area"));
        }
        if pixels.is_empty() || !pixels.len().is_multiple_of(plane) {
            return Err(Error::invalid(format!(
                "{} pixel values do not form whole {height}x{width} channels",
                pixels.len()
            )));
        }
        let channels = pixels.len() / plane;
        if channel_names.is_empty() {
            channel_names = vec![String::new(); channels];
        }
        if channel_names.len() != channels {
            return Err(Error::invalid(format!(
                "{} channel names for {channels} channels",
                channel_names.len()
            )));
        }
        if pixels.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("image pixels".into()));
        }
        Ok(Self {
            height,
            width,
            pixels,
            channel_names,
        })
    }

    pub fn from_channels(height: usize, width: usize, channels: &[Vec<f32>]) -> Result<Self> {
        Self::new(height, width, channels.concat(), Vec::new())
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.pixels.len() / (self.height * self.width)
    }

    pub fn channel_names(&self) -> &[String] {
        &self.channel_names
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        let plane = self.height * self.width;
        &self.pixels[c * plane..(c + 1) * plane]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [f32] {
        let plane = self.height * self.width;
        &mut self.pixels[c * plane..(c + 1) * plane]
    }

    /// A new image made of the listed channels, in the given order.
    pub fn select_channels(&self, order: &[usize]) -> Result<Self> {
        if let Some(&bad) = order.iter().find(|&&c| c >= self.channels()) {
            return Err(Error::ChannelIndex {
                index: bad,
                max: self.channels(),
            });
        }
        let pixels = order.iter().flat_map(|&c| self.channel(c).iter().copied()).collect();
        let names = order.iter().map(|&c| self.channel_names[c].clone()).collect();
        Self::new_unchecked_range(self.height, self.width, pixels, names)
    }

    /// Drops channel `c`.
    pub fn without_channel(&self, c: usize) -> Result<Self> {
        let order: Vec<usize> = (0..self.channels()).filter(|&i| i != c).collect();
        if order.is_empty() {
            return Err(Error::invalid("cannot drop the only channel"));
        }
        self.select_channels(&order)
    }

    /// Per-channel min-max rescale to `[0, 1]`; constant channels become 0.
    pub fn normalize_min_max(&mut self) {
        for c in 0..self.channels() {
            let ch = self.channel_mut(c);
            let (lo, hi) = ch
                .iter()
                .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
            let span = hi - lo;
            for v in ch.iter_mut() {
                *v = if span > 0.0 { (*v - lo) / span } else { 0.0 };
            }
        }
    }
}
