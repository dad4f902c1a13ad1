//! Linear-intensity float images and latent frame sequences.

use crate::error::{argument, validation, Result};

/// Floor applied before taking logarithms of intensities.
pub const LOG_EPS: f64 = 1e-4;

/// Rec. 601 luma weights used to derive the monochrome event signal from color.
const LUMA: [f64; 3] = [0.299, 0.587, 0.114];

/// Interleaved image with 1 or 3 channels, row-major, samples finite and `>= 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(validation(format!("empty image {width}x{height}")));
        }
        if channels != 1 && channels != 3 {
            return Err(validation(format!("unsupported channel count {channels}")));
        }
        if data.len() != width * height * channels {
            return Err(validation(format!(
                "sample count {} does not match {width}x{height}x{channels}",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite() || *v < 0.0) {
            return Err(validation(format!(
                "sample {i} = {} is not a finite non-negative intensity",
                data[i]
            )));
        }
        Ok(Image {
            width,
            height,
            channels,
            data,
        })
    }

    /// Single-channel image. Panics on invalid samples; for internally produced data.
    pub(crate) fn gray_unchecked(width: usize, height: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), width * height);
        debug_assert!(data.iter().all(|v| v.is_finite() && *v >= 0.0));
        Image {
            width,
            height,
            channels: 1,
            data,
        }
    }

    pub(crate) fn from_parts_unchecked(
        width: usize,
        height: usize,
        channels: usize,
        data: Vec<f64>,
    ) -> Self {
        debug_assert_eq!(data.len(), width * height * channels);
        Image {
            width,
            height,
            channels,
            data,
        }
    }

    pub fn constant(width: usize, height: usize, channels: usize, value: f64) -> Result<Self> {
        Image::new(
            width,
            height,
            channels,
            vec![value; width * height * channels],
        )
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> f64) -> Result<Self> {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Image::new(width, height, 1, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, x: usize, y: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.width == other.width && self.height == other.height && self.channels == other.channels
    }

    pub(crate) fn require_same_dims(&self, other: &Image, what: &str) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(argument(format!(
                "{what}: dimension mismatch {}x{} vs {}x{}",
                self.width, self.height, other.width, other.height
            )));
        }
        Ok(())
    }

    /// One channel as a single-channel image.
    pub fn channel(&self, c: usize) -> Image {
        assert!(c < self.channels);
        let data = self
            .data
            .iter()
            .skip(c)
            .step_by(self.channels)
            .copied()
            .collect();
        Image::from_parts_unchecked(self.width, self.height, 1, data)
    }

    pub fn split_channels(&self) -> Vec<Image> {
        (0..self.channels).map(|c| self.channel(c)).collect()
    }

    pub fn merge_channels(planes: &[Image]) -> Result<Image> {
        let first = planes
            .first()
            .ok_or_else(|| argument("no channels to merge"))?;
        if planes.len() == 1 {
            return Ok(first.clone());
        }
        if planes
            .iter()
            .any(|p| p.dims() != first.dims() || p.channels != 1)
        {
            return Err(argument("channel planes differ in shape"));
        }
        let n = first.width * first.height;
        let mut data = Vec::with_capacity(n * planes.len());
        for i in 0..n {
            for p in planes {
                data.push(p.data[i]);
            }
        }
        Image::new(first.width, first.height, planes.len(), data)
    }

    /// Per-channel map of a single-channel operation.
    pub fn map_planes(&self, mut f: impl FnMut(&Image) -> Result<Image>) -> Result<Image> {
        if self.channels == 1 {
            return f(self);
        }
        let planes = self
            .split_channels()
            .iter()
            .map(&mut f)
            .collect::<Result<Vec<_>>>()?;
        Image::merge_channels(&planes)
    }

    /// Luminance for color images, identity for gray.
    pub fn luminance(&self) -> Image {
        if self.channels == 1 {
            return self.clone();
        }
        let data = self
            .data
            .chunks_exact(3)
            .map(|px| LUMA[0] * px[0] + LUMA[1] * px[1] + LUMA[2] * px[2])
            .collect();
        Image::from_parts_unchecked(self.width, self.height, 1, data)
    }

    /// Channel average; used where metrics are defined on gray images.
    pub fn channel_mean(&self) -> Image {
        if self.channels == 1 {
            return self.clone();
        }
        let k = self.channels as f64;
        let data = self
            .data
            .chunks_exact(self.channels)
            .map(|px| px.iter().sum::<f64>() / k)
            .collect();
        Image::from_parts_unchecked(self.width, self.height, 1, data)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Image {
        let data = self.data.iter().map(|&v| f(v)).collect();
        Image::from_parts_unchecked(self.width, self.height, self.channels, data)
    }

    pub fn clamp(&self, lo: f64, hi: f64) -> Image {
        self.map(|v| v.clamp(lo, hi))
    }

    /// Centered crop; errors if the requested size exceeds the image.
    pub fn center_crop(&self, width: usize, height: usize) -> Result<Image> {
        if width > self.width || height > self.height {
            return Err(argument(format!(
                "crop {width}x{height} larger than image {}x{}",
                self.width, self.height
            )));
        }
        let x0 = (self.width - width) / 2;
        let y0 = (self.height - height) / 2;
        let mut data = Vec::with_capacity(width * height * self.channels);
        for y in y0..y0 + height {
            let start = (y * self.width + x0) * self.channels;
            data.extend_from_slice(&self.data[start..start + width * self.channels]);
        }
        Ok(Image::from_parts_unchecked(
            width,
            height,
            self.channels,
            data,
        ))
    }

    pub fn max_abs_diff(&self, other: &Image) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Timestamped single-channel latent frames within one exposure window.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameSequence {
    frames: Vec<Image>,
    timestamps: Vec<i64>,
    exposure_start: i64,
    exposure_end: i64,
}

impl FrameSequence {
    pub fn new(
        frames: Vec<Image>,
        timestamps: Vec<i64>,
        exposure_start: i64,
        exposure_end: i64,
    ) -> Result<Self> {
        if frames.len() != timestamps.len() {
            return Err(validation("frame and timestamp counts differ"));
        }
        if frames.is_empty() {
            return Err(validation("frame sequence is empty"));
        }
        let first = &frames[0];
        if frames
            .iter()
            .any(|f| f.dims() != first.dims() || f.channels() != 1)
        {
            return Err(validation(
                "latent frames must be single-channel with equal dimensions",
            ));
        }
        if timestamps.windows(2).any(|w| w[0] >= w[1]) {
            return Err(validation("timestamps must be strictly increasing"));
        }
        if exposure_start > exposure_end
            || timestamps[0] < exposure_start
            || *timestamps.last().unwrap() > exposure_end
        {
            return Err(validation("timestamps outside the exposure window"));
        }
        Ok(FrameSequence {
            frames,
            timestamps,
            exposure_start,
            exposure_end,
        })
    }

    /// `n` frames at `fps`, frame `k` stamped at the start of its display interval
    /// `[k/fps, (k+1)/fps)`; the exposure spans all `n` intervals.
    pub fn uniform(frames: Vec<Image>, fps: f64, start: i64) -> Result<Self> {
        let n = frames.len();
        let step = 1e6 / fps;
        let timestamps = (0..n)
            .map(|k| start + (k as f64 * step).round() as i64)
            .collect();
        let end = start + (n as f64 * step).round() as i64;
        FrameSequence::new(frames, timestamps, start, end)
    }

    pub fn frames(&self) -> &[Image] {
        &self.frames
    }

    pub fn timestamps(&self) -> &[i64] {
        &self.timestamps
    }

    pub fn exposure_start(&self) -> i64 {
        self.exposure_start
    }

    pub fn exposure_end(&self) -> i64 {
        self.exposure_end
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn dims(&self) -> (usize, usize) {
        self.frames[0].dims()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_negative_and_nan() {
        assert!(Image::new(1, 1, 1, vec![-0.1]).is_err());
        assert!(Image::new(1, 1, 1, vec![f64::NAN]).is_err());
        assert!(Image::new(1, 1, 2, vec![0.0, 0.0]).is_err());
    }

    #[test]
    fn split_merge_identity() {
        let img = Image::new(2, 1, 3, vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6]).unwrap();
        let back = Image::merge_channels(&img.split_channels()).unwrap();
        assert_eq!(back, img);
        assert_eq!(img.channel(1).data(), &[0.2, 0.5]);
    }

    #[test]
    fn center_crop_picks_middle() {
        let img = Image::from_fn(4, 4, |x, y| (y * 4 + x) as f64).unwrap();
        let c = img.center_crop(2, 2).unwrap();
        assert_eq!(c.data(), &[5.0, 6.0, 9.0, 10.0]);
        assert!(img.center_crop(5, 1).is_err());
    }

    #[test]
    fn uniform_sequence_spans_exposure() {
        let frames = vec![Image::constant(2, 2, 1, 0.5).unwrap(); 12];
        let seq = FrameSequence::uniform(frames, 120.0, 0).unwrap();
        assert_eq!(seq.exposure_end(), 100_000);
        assert_eq!(seq.timestamps()[6], 50_000);
    }

    #[test]
    fn sequence_rejects_unsorted_timestamps() {
        let f = Image::constant(1, 1, 1, 0.5).unwrap();
        assert!(FrameSequence::new(vec![f.clone(), f], vec![5, 5], 0, 10).is_err());
    }
}
