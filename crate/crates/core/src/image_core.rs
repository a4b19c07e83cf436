//! Image representation and the numeric substrate shared by both detectors:
//! grayscale conversion, Gaussian kernels, separable convolution, gradients
//! and half-resolution subsampling.
//!
//! All filters use reflect-101 borders (`dcb|abcd|cba`).

use std::f32::consts::TAU;
use std::path::Path;

use crate::error::{Error, Result};

/// Row-major image with 1 or 3 interleaved channels.
///
/// Loaded images hold values in `[0, 1]`; intermediate images (DoG levels,
/// gradients) may leave that range.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f32>,
}

impl Image {
    /// Wraps existing pixel data.
    pub fn from_vec(width: usize, height: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidArgument(format!(
                "image dimensions must be positive, got {width}x{height}"
            )));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::UnsupportedChannels(channels));
        }
        if data.len() != width * height * channels {
            return Err(Error::InvalidArgument(format!(
                "data length {} does not match {width}x{height}x{channels}",
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    /// Single-channel image filled with `value`.
    pub fn filled(width: usize, height: usize, value: f32) -> Self {
        assert!(width > 0 && height > 0, "image dimensions must be positive");
        Self {
            width,
            height,
            channels: 1,
            data: vec![value; width * height],
        }
    }

    /// Single-channel image with `f(x, y)` at every pixel.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f32) -> Self {
        assert!(width > 0 && height > 0, "image dimensions must be positive");
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            channels: 1,
            data,
        }
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

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }

    /// Pixel value of a single-channel image.
    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f32 {
        debug_assert_eq!(self.channels, 1);
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: f32) {
        debug_assert_eq!(self.channels, 1);
        self.data[y * self.width + x] = value;
    }

    /// Pixel value with reflect-101 handling for out-of-range coordinates.
    #[inline]
    pub fn get_reflect(&self, x: isize, y: isize) -> f32 {
        self.get(reflect101(x, self.width), reflect101(y, self.height))
    }

    /// Row `y` of a single-channel image.
    pub fn row(&self, y: usize) -> &[f32] {
        &self.data[y * self.width..(y + 1) * self.width]
    }

    /// Copies the `w`x`h` window with top-left corner `(x0, y0)`.
    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Result<Image> {
        if x0 + w > self.width || y0 + h > self.height || w == 0 || h == 0 {
            return Err(Error::InvalidArgument(format!(
                "crop {w}x{h} at ({x0}, {y0}) exceeds {}x{}",
                self.width, self.height
            )));
        }
        let c = self.channels;
        let mut data = Vec::with_capacity(w * h * c);
        for y in y0..y0 + h {
            let start = (y * self.width + x0) * c;
            data.extend_from_slice(&self.data[start..start + w * c]);
        }
        Image::from_vec(w, h, c, data)
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().map(|&v| f64::from(v)).sum::<f64>() / self.data.len() as f64
    }

    pub fn variance(&self) -> f64 {
        let mean = self.mean();
        self.data
            .iter()
            .map(|&v| (f64::from(v) - mean).powi(2))
            .sum::<f64>()
            / self.data.len() as f64
    }

    /// Loads a PNG (8-bit gray or RGB) or binary PGM, scaling values to `[0, 1]`.
    pub fn load(path: impl AsRef<Path>) -> Result<Image> {
        let path = path.as_ref();
        let read_err = |message: String| Error::ImageRead {
            path: path.to_path_buf(),
            message,
        };
        let dynimg = image::ImageReader::open(path)
            .map_err(|e| read_err(e.to_string()))?
            .with_guessed_format()
            .map_err(|e| read_err(e.to_string()))?
            .decode()
            .map_err(|e| read_err(e.to_string()))?;
        let (w, h) = (dynimg.width() as usize, dynimg.height() as usize);
        let to_unit = |v: &u8| f32::from(*v) / 255.0;
        if dynimg.color().has_color() {
            let rgb = dynimg.to_rgb8();
            Image::from_vec(w, h, 3, rgb.as_raw().iter().map(to_unit).collect())
        } else {
            let gray = dynimg.to_luma8();
            Image::from_vec(w, h, 1, gray.as_raw().iter().map(to_unit).collect())
        }
    }

    /// Quantizes to 8 bits (clamping to `[0, 1]`) and writes a PNG or PGM,
    /// chosen by file extension.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let bytes: Vec<u8> = self.data.iter().map(|&v| quantize(v)).collect();
        let color = if self.channels == 3 {
            image::ExtendedColorType::Rgb8
        } else {
            image::ExtendedColorType::L8
        };
        image::save_buffer(path, &bytes, self.width as u32, self.height as u32, color).map_err(
            |e| Error::ImageWrite {
                path: path.to_path_buf(),
                message: e.to_string(),
            },
        )
    }

    /// Values after an 8-bit save/load round trip.
    pub fn quantized(&self) -> Image {
        Image {
            data: self
                .data
                .iter()
                .map(|&v| f32::from(quantize(v)) / 255.0)
                .collect(),
            ..self.clone()
        }
    }

    fn require_gray(&self) -> Result<()> {
        if self.channels == 1 {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!(
                "expected a single-channel image, got {} channels",
                self.channels
            )))
        }
    }
}

#[inline]
fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Maps an arbitrary index into `0..n` by mirroring without repeating the edge.
#[inline]
pub fn reflect101(mut i: isize, n: usize) -> usize {
    let n = n as isize;
    if n == 1 {
        return 0;
    }
    loop {
        if i < 0 {
            i = -i;
        } else if i >= n {
            i = 2 * n - 2 - i;
        } else {
            return i as usize;
        }
    }
}

/// Luma conversion with weights 0.299, 0.587, 0.114. Gray input is returned as is.
pub fn to_grayscale(img: &Image) -> Result<Image> {
    match img.channels {
        1 => Ok(img.clone()),
        3 => {
            let data = img
                .data
                .chunks_exact(3)
                .map(|p| 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2])
                .collect();
            Image::from_vec(img.width, img.height, 1, data)
        }
        c => Err(Error::UnsupportedChannels(c)),
    }
}

/// Separable 1-D Gaussian truncated at `ceil(3 sigma)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianKernel {
    sigma: f64,
    radius: usize,
    weights: Vec<f64>,
}

impl GaussianKernel {
    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn radius(&self) -> usize {
        self.radius
    }

    /// Normalized weights, index `radius` is the center tap.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
}

pub fn gaussian_kernel(sigma: f64) -> Result<GaussianKernel> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "gaussian sigma must be positive, got {sigma}"
        )));
    }
    let radius = (3.0 * sigma).ceil() as usize;
    let mut weights: Vec<f64> = (0..=2 * radius)
        .map(|i| {
            let d = i as f64 - radius as f64;
            (-d * d / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let sum: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= sum);
    Ok(GaussianKernel {
        sigma,
        radius,
        weights,
    })
}

/// Convolves a single-channel image with the outer product of `k` with itself.
pub fn convolve_separable(img: &Image, k: &GaussianKernel) -> Result<Image> {
    img.require_gray()?;
    let (w, h) = (img.width, img.height);
    let r = k.radius as isize;
    let taps: Vec<f32> = k.weights.iter().map(|&v| v as f32).collect();

    let mut tmp = vec![0f32; w * h];
    let interior_x = (k.radius..w.saturating_sub(k.radius)).filter(|_| w > 2 * k.radius);
    for y in 0..h {
        let row = img.row(y);
        let out = &mut tmp[y * w..(y + 1) * w];
        for x in 0..w {
            if x >= k.radius && x + k.radius < w {
                continue;
            }
            let mut acc = 0f32;
            for (t, &wt) in taps.iter().enumerate() {
                acc += wt * row[reflect101(x as isize + t as isize - r, w)];
            }
            out[x] = acc;
        }
        for x in interior_x.clone() {
            let window = &row[x - k.radius..=x + k.radius];
            out[x] = window.iter().zip(&taps).map(|(&p, &wt)| p * wt).sum();
        }
    }

    let mut out = vec![0f32; w * h];
    for y in 0..h {
        let dst = &mut out[y * w..(y + 1) * w];
        for (t, &wt) in taps.iter().enumerate() {
            let sy = reflect101(y as isize + t as isize - r, h);
            let src = &tmp[sy * w..(sy + 1) * w];
            for (d, &s) in dst.iter_mut().zip(src) {
                *d += wt * s;
            }
        }
    }
    Image::from_vec(w, h, 1, out)
}

/// Gaussian blur shorthand: `convolve_separable(img, gaussian_kernel(sigma))`.
pub fn gaussian_blur(img: &Image, sigma: f64) -> Result<Image> {
    convolve_separable(img, &gaussian_kernel(sigma)?)
}

/// Per-pixel gradient magnitude and orientation in `[0, 2 pi)`.
#[derive(Debug, Clone)]
pub struct GradientField {
    pub magnitude: Image,
    pub orientation: Image,
}

/// Central-difference gradients with reflect-101 borders.
pub fn gradients(img: &Image) -> Result<GradientField> {
    img.require_gray()?;
    let (w, h) = (img.width, img.height);
    if w < 3 || h < 3 {
        return Err(Error::ImageTooSmall {
            width: w,
            height: h,
            reason: "gradients need at least 3x3 pixels".into(),
        });
    }
    let mut magnitude = Vec::with_capacity(w * h);
    let mut orientation = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let (xi, yi) = (x as isize, y as isize);
            let dx = (img.get_reflect(xi + 1, yi) - img.get_reflect(xi - 1, yi)) * 0.5;
            let dy = (img.get_reflect(xi, yi + 1) - img.get_reflect(xi, yi - 1)) * 0.5;
            magnitude.push((dx * dx + dy * dy).sqrt());
            orientation.push(wrap_angle(dy.atan2(dx)));
        }
    }
    Ok(GradientField {
        magnitude: Image::from_vec(w, h, 1, magnitude)?,
        orientation: Image::from_vec(w, h, 1, orientation)?,
    })
}

/// Wraps an angle into `[0, 2 pi)`.
#[inline]
pub fn wrap_angle(a: f32) -> f32 {
    let r = a.rem_euclid(TAU);
    // rem_euclid can round up to exactly TAU for tiny negative inputs
    if r >= TAU {
        0.0
    } else {
        r
    }
}

/// Keeps every second pixel in each direction, starting at `(0, 0)`.
pub fn downsample_half(img: &Image) -> Result<Image> {
    img.require_gray()?;
    if img.width < 2 || img.height < 2 {
        return Err(Error::ImageTooSmall {
            width: img.width,
            height: img.height,
            reason: "downsampling needs at least 2x2 pixels".into(),
        });
    }
    let (w, h) = (img.width / 2, img.height / 2);
    Ok(Image::from_fn(w, h, |x, y| img.get(2 * x, 2 * y)))
}
