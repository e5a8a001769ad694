//! Pixel containers, 8-bit I/O and color conversion.
//!
//! `ImageU8` mirrors what lives on disk (interleaved sRGB codes), `ImageF`
//! is the planar working representation every algorithm consumes.

use std::path::Path;

use image::{DynamicImage, ImageReader, RgbImage};

use crate::error::{Error, Result};

/// BT.601 full-range luma weights.
pub const LUMA_WEIGHTS: [f32; 3] = [0.299, 0.587, 0.114];

/// Interleaved 8-bit RGB image.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ImageU8 {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl ImageU8 {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != width * height * 3 {
            return Err(Error::DimensionMismatch(format!(
                "{} bytes for a {width}x{height} rgb image",
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn into_rgb_image(self) -> RgbImage {
        RgbImage::from_raw(self.width as u32, self.height as u32, self.data)
            .expect("length checked at construction")
    }
}

/// Planar floating-point image with 1 or 3 channels, nominally in [0,1].
#[derive(Clone, Debug, PartialEq)]
pub struct ImageF {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f32>,
}

impl ImageF {
    pub fn zeros(width: usize, height: usize, channels: usize) -> Self {
        Self::filled(width, height, channels, 0.0)
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: f32) -> Self {
        assert!(channels == 1 || channels == 3, "channels must be 1 or 3");
        Self {
            width,
            height,
            channels,
            data: vec![value; width * height * channels],
        }
    }

    /// Wraps planar data (`channels` consecutive planes of `width*height`).
    pub fn from_planar(
        width: usize,
        height: usize,
        channels: usize,
        data: Vec<f32>,
    ) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(Error::ChannelMismatch {
                expected: 3,
                actual: channels,
            });
        }
        if data.len() != width * height * channels {
            return Err(Error::DimensionMismatch(format!(
                "{} values for {width}x{height}x{channels}",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite pixel value".into()));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f32,
    ) -> Self {
        let mut img = Self::zeros(width, height, channels);
        for c in 0..channels {
            for y in 0..height {
                for x in 0..width {
                    img.set(x, y, c, f(x, y, c));
                }
            }
        }
        img
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

    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn same_shape(&self, other: &ImageF) -> bool {
        self.width == other.width && self.height == other.height && self.channels == other.channels
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn plane(&self, c: usize) -> &[f32] {
        let n = self.len();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn plane_mut(&mut self, c: usize) -> &mut [f32] {
        let n = self.len();
        &mut self.data[c * n..(c + 1) * n]
    }

    /// Copies channel `c` out as a single-channel image.
    pub fn channel(&self, c: usize) -> ImageF {
        ImageF {
            width: self.width,
            height: self.height,
            channels: 1,
            data: self.plane(c).to_vec(),
        }
    }

    /// Stacks three single-channel images into an RGB image.
    pub fn from_channels(planes: [&ImageF; 3]) -> Result<Self> {
        let (w, h) = (planes[0].width, planes[0].height);
        let mut data = Vec::with_capacity(w * h * 3);
        for p in planes {
            if p.width != w || p.height != h || p.channels != 1 {
                return Err(Error::DimensionMismatch(
                    "planes must be single-channel and equally sized".into(),
                ));
            }
            data.extend_from_slice(&p.data);
        }
        Ok(Self {
            width: w,
            height: h,
            channels: 3,
            data,
        })
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: usize, v: f32) {
        self.data[(c * self.height + y) * self.width + x] = v;
    }

    pub fn pixel(&self, x: usize, y: usize) -> [f32; 3] {
        debug_assert_eq!(self.channels, 3);
        [self.get(x, y, 0), self.get(x, y, 1), self.get(x, y, 2)]
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> ImageF {
        ImageF {
            width: self.width,
            height: self.height,
            channels: self.channels,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &ImageF, f: impl Fn(f32, f32) -> f32) -> Result<ImageF> {
        if !self.same_shape(other) {
            return Err(Error::DimensionMismatch(format!(
                "{}x{}x{} vs {}x{}x{}",
                self.width, self.height, self.channels, other.width, other.height, other.channels
            )));
        }
        Ok(ImageF {
            width: self.width,
            height: self.height,
            channels: self.channels,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn clamp01(&self) -> ImageF {
        self.map(|v| v.clamp(0.0, 1.0))
    }

    /// Crops the rectangle `[x0, x0+w) x [y0, y0+h)`.
    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> ImageF {
        assert!(x0 + w <= self.width && y0 + h <= self.height);
        ImageF::from_fn(w, h, self.channels, |x, y, c| self.get(x0 + x, y0 + y, c))
    }

    pub fn max_abs_diff(&self, other: &ImageF) -> f32 {
        assert!(self.same_shape(other));
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f32::max)
    }
}

/// Loads an 8-bit PNG or JPEG. Grayscale is replicated, alpha is dropped.
pub fn load_image(path: impl AsRef<Path>) -> Result<ImageU8> {
    let path = path.as_ref();
    let reader = ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?;
    let decoded = reader.decode().map_err(|e| match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::Format(format!("{}: {other}", path.display())),
    })?;
    let rgb = match decoded {
        DynamicImage::ImageLuma8(_)
        | DynamicImage::ImageLumaA8(_)
        | DynamicImage::ImageRgb8(_)
        | DynamicImage::ImageRgba8(_) => decoded.to_rgb8(),
        other => {
            return Err(Error::Format(format!(
                "{}: only 8-bit images are supported, got {:?}",
                path.display(),
                other.color()
            )))
        }
    };
    let (w, h) = rgb.dimensions();
    ImageU8::new(w as usize, h as usize, rgb.into_raw())
}

/// Writes an 8-bit RGB PNG.
pub fn save_png(img: &ImageU8, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    img.clone()
        .into_rgb_image()
        .save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| match e {
            image::ImageError::IoError(io) => Error::io(path, io),
            other => Error::Format(other.to_string()),
        })
}

/// Maps each code `z` to `z / 255`.
pub fn to_float(img: &ImageU8) -> ImageF {
    let n = img.width * img.height;
    let mut data = vec![0.0f32; n * 3];
    for (i, px) in img.data.chunks_exact(3).enumerate() {
        for c in 0..3 {
            data[c * n + i] = px[c] as f32 / 255.0;
        }
    }
    ImageF {
        width: img.width,
        height: img.height,
        channels: 3,
        data,
    }
}

/// `round(clamp(v, 0, 1) * 255)` with half-away-from-zero rounding.
/// Single-channel input is replicated to gray.
pub fn to_u8(img: &ImageF) -> ImageU8 {
    let n = img.len();
    let mut data = vec![0u8; n * 3];
    for i in 0..n {
        for c in 0..3 {
            let src = if img.channels == 1 { 0 } else { c };
            data[i * 3 + c] = quantize(img.data[src * n + i]);
        }
    }
    ImageU8 {
        width: img.width,
        height: img.height,
        data,
    }
}

#[inline]
pub fn quantize(v: f32) -> u8 {
    // f32::round is half-away-from-zero
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// BT.601 luma of a 3-channel image.
pub fn luminance(img: &ImageF) -> Result<ImageF> {
    if img.channels != 3 {
        return Err(Error::ChannelMismatch {
            expected: 3,
            actual: img.channels,
        });
    }
    let n = img.len();
    let (r, g, b) = (img.plane(0), img.plane(1), img.plane(2));
    let data = (0..n)
        .map(|i| {
            let y = LUMA_WEIGHTS[0] as f64 * r[i] as f64
                + LUMA_WEIGHTS[1] as f64 * g[i] as f64
                + LUMA_WEIGHTS[2] as f64 * b[i] as f64;
            y as f32
        })
        .collect();
    Ok(ImageF {
        width: img.width,
        height: img.height,
        channels: 1,
        data,
    })
}
