//! Pixel containers and the small amount of raster plumbing everything else
//! builds on: clamping, median background estimation and PNG I/O.
//!
//! Values are linear intensities with nominal range `[0, 1]`; no gamma or
//! color management is applied anywhere.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use crate::error::{Error, Result};

/// Dense row-major raster with 1, 3 or 4 interleaved channels.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        check_shape(width, height, channels)?;
        if data.len() != width * height * channels {
            return Err(Error::InvalidImage(format!(
                "data length {} != {width}x{height}x{channels}",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        Ok(Image {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: f64) -> Result<Self> {
        check_shape(width, height, channels)?;
        if !value.is_finite() {
            return Err(Error::NonFinite(0));
        }
        Ok(Image {
            width,
            height,
            channels,
            data: vec![value; width * height * channels],
        })
    }

    pub fn zeros(width: usize, height: usize, channels: usize) -> Result<Self> {
        Self::filled(width, height, channels, 0.0)
    }

    /// Builds an image from a per-pixel closure returning `channels` values
    /// through the provided output slice.
    pub fn from_fn(
        width: usize,
        height: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, &mut [f64]),
    ) -> Result<Self> {
        check_shape(width, height, channels)?;
        let mut data = vec![0.0; width * height * channels];
        for (idx, px) in data.chunks_exact_mut(channels).enumerate() {
            f(idx % width, idx / width, px);
        }
        Self::new(width, height, channels, data)
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

    /// Number of pixels (not values).
    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Mutable access to the raw values. Callers are responsible for keeping
    /// them finite; `clamp01` re-validates.
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: usize, v: f64) {
        self.data[(y * self.width + x) * self.channels + c] = v;
    }

    pub fn pixel(&self, x: usize, y: usize) -> &[f64] {
        let i = (y * self.width + x) * self.channels;
        &self.data[i..i + self.channels]
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.width == other.width && self.height == other.height && self.channels == other.channels
    }

    pub fn same_size(&self, other: &Image) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub(crate) fn ensure_same_shape(&self, other: &Image, what: &str) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::DimensionMismatch(format!(
                "{what}: {}x{}x{} vs {}x{}x{}",
                self.width, self.height, self.channels, other.width, other.height, other.channels
            )))
        }
    }

    pub(crate) fn ensure_same_size(&self, other: &Image, what: &str) -> Result<()> {
        if self.same_size(other) {
            Ok(())
        } else {
            Err(Error::DimensionMismatch(format!(
                "{what}: {}x{} vs {}x{}",
                self.width, self.height, other.width, other.height
            )))
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Image {
        Image {
            width: self.width,
            height: self.height,
            channels: self.channels,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn max_abs_diff(&self, other: &Image) -> f64 {
        assert!(self.same_shape(other), "max_abs_diff on mismatched images");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn mean_abs_diff(&self, other: &Image) -> f64 {
        assert!(self.same_shape(other), "mean_abs_diff on mismatched images");
        let s: f64 = self.data.iter().zip(&other.data).map(|(a, b)| (a - b).abs()).sum();
        s / self.data.len() as f64
    }
}

fn check_shape(width: usize, height: usize, channels: usize) -> Result<()> {
    if width == 0 || height == 0 {
        return Err(Error::InvalidImage(format!("empty raster {width}x{height}")));
    }
    if !matches!(channels, 1 | 3 | 4) {
        return Err(Error::InvalidImage(format!("unsupported channel count {channels}")));
    }
    Ok(())
}

/// Sharp appearance `f` (RGB) and alpha mask `m` of the object at one instant.
#[derive(Clone, Debug, PartialEq)]
pub struct Rendering {
    pub f: Image,
    pub m: Image,
}

impl Rendering {
    pub fn new(f: Image, m: Image) -> Result<Self> {
        if f.channels() != 3 || m.channels() != 1 {
            return Err(Error::InvalidImage(format!(
                "rendering needs 3-channel appearance and 1-channel mask, got {} and {}",
                f.channels(),
                m.channels()
            )));
        }
        f.ensure_same_size(&m, "rendering appearance vs mask")?;
        Ok(Rendering { f, m })
    }

    pub fn empty(width: usize, height: usize) -> Result<Self> {
        Ok(Rendering {
            f: Image::zeros(width, height, 3)?,
            m: Image::zeros(width, height, 1)?,
        })
    }

    pub fn width(&self) -> usize {
        self.m.width()
    }

    pub fn height(&self) -> usize {
        self.m.height()
    }

    /// Effective premultiplied foreground `F·M`.
    pub fn premultiplied(&self) -> Image {
        let mut out = self.f.clone();
        for (px, &m) in out.data_mut().chunks_exact_mut(3).zip(self.m.data()) {
            px.iter_mut().for_each(|v| *v *= m);
        }
        out
    }
}

/// Ordered sub-frame renderings sampled at `t_i = i/(N-1)`.
#[derive(Clone, Debug, PartialEq)]
pub struct RenderingStack {
    renderings: Vec<Rendering>,
}

impl RenderingStack {
    pub fn new(renderings: Vec<Rendering>) -> Result<Self> {
        let first = renderings.first().ok_or(Error::Empty("rendering stack"))?;
        let (w, h) = (first.width(), first.height());
        for (i, r) in renderings.iter().enumerate() {
            if r.width() != w || r.height() != h {
                return Err(Error::DimensionMismatch(format!(
                    "rendering {i} is {}x{}, expected {w}x{h}",
                    r.width(),
                    r.height()
                )));
            }
        }
        Ok(RenderingStack { renderings })
    }

    pub fn len(&self) -> usize {
        self.renderings.len()
    }

    /// Always false; kept for API symmetry with `len`.
    pub fn is_empty(&self) -> bool {
        self.renderings.is_empty()
    }

    pub fn width(&self) -> usize {
        self.renderings[0].width()
    }

    pub fn height(&self) -> usize {
        self.renderings[0].height()
    }

    pub fn renderings(&self) -> &[Rendering] {
        &self.renderings
    }

    pub fn renderings_mut(&mut self) -> &mut [Rendering] {
        &mut self.renderings
    }

    pub fn into_renderings(self) -> Vec<Rendering> {
        self.renderings
    }

    pub fn get(&self, i: usize) -> &Rendering {
        &self.renderings[i]
    }

    pub fn time(&self, i: usize) -> f64 {
        sub_frame_time(i, self.len())
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.len()).map(|i| self.time(i)).collect()
    }

    pub fn reversed(&self) -> RenderingStack {
        RenderingStack {
            renderings: self.renderings.iter().rev().cloned().collect(),
        }
    }

    pub(crate) fn ensure_fits(&self, img: &Image, what: &str) -> Result<()> {
        if img.width() != self.width() || img.height() != self.height() {
            return Err(Error::DimensionMismatch(format!(
                "{what}: stack is {}x{}, image is {}x{}",
                self.width(),
                self.height(),
                img.width(),
                img.height()
            )));
        }
        Ok(())
    }
}

/// Sub-frame time of index `i` out of `n`; a single sub-frame sits at 0.5.
pub fn sub_frame_time(i: usize, n: usize) -> f64 {
    if n <= 1 {
        0.5
    } else {
        i as f64 / (n - 1) as f64
    }
}

pub fn clamp01(img: &Image) -> Result<Image> {
    if let Some(i) = img.data.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(i));
    }
    Ok(img.map(|v| v.clamp(0.0, 1.0)))
}

/// Per-pixel, per-channel median of a frame list. Even counts take the
/// midpoint of the two central values.
pub fn median_background(frames: &[Image]) -> Result<Image> {
    let first = frames.first().ok_or(Error::Empty("median_background frame list"))?;
    for f in &frames[1..] {
        first.ensure_same_shape(f, "median_background")?;
    }
    let n = frames.len();
    let mut scratch = vec![0.0; n];
    let data = (0..first.data.len())
        .map(|i| {
            for (s, f) in scratch.iter_mut().zip(frames) {
                *s = f.data[i];
            }
            scratch.sort_unstable_by(f64::total_cmp);
            if n % 2 == 1 {
                scratch[n / 2]
            } else {
                0.5 * (scratch[n / 2 - 1] + scratch[n / 2])
            }
        })
        .collect();
    Image::new(first.width, first.height, first.channels, data)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BitDepth {
    Eight,
    Sixteen,
}

impl BitDepth {
    pub fn max_code(self) -> f64 {
        match self {
            BitDepth::Eight => 255.0,
            BitDepth::Sixteen => 65535.0,
        }
    }
}

pub fn load_png(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let decode_err = |reason| Error::PngDecode {
        path: path.to_path_buf(),
        reason,
    };
    let mut decoder = png::Decoder::new(BufReader::new(file));
    // Palette and sub-byte images expand to 8 bit; 16-bit data is kept.
    decoder.set_transformations(png::Transformations::EXPAND);
    let mut reader = decoder.read_info().map_err(decode_err)?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::dataset(path, "png too large"))?;
    let mut buf = vec![0u8; size];
    let info = reader.next_frame(&mut buf).map_err(decode_err)?;
    buf.truncate(info.buffer_size());

    let channels = match info.color_type {
        png::ColorType::Grayscale => 1,
        png::ColorType::Rgb => 3,
        png::ColorType::Rgba => 4,
        other => {
            return Err(Error::dataset(
                path,
                format!("unsupported png color type {other:?}"),
            ))
        }
    };
    let (width, height) = (info.width as usize, info.height as usize);
    let data: Vec<f64> = match info.bit_depth {
        png::BitDepth::Eight => buf.iter().map(|&b| b as f64 / 255.0).collect(),
        png::BitDepth::Sixteen => buf
            .chunks_exact(2)
            .map(|b| u16::from_be_bytes([b[0], b[1]]) as f64 / 65535.0)
            .collect(),
        other => {
            return Err(Error::dataset(path, format!("unsupported png bit depth {other:?}")))
        }
    };
    Image::new(width, height, channels, data)
}

pub fn save_png(img: &Image, path: impl AsRef<Path>, depth: BitDepth) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut encoder = png::Encoder::new(BufWriter::new(file), img.width as u32, img.height as u32);
    encoder.set_color(match img.channels {
        1 => png::ColorType::Grayscale,
        3 => png::ColorType::Rgb,
        _ => png::ColorType::Rgba,
    });
    let max = depth.max_code();
    let quantize = |v: f64| (v.clamp(0.0, 1.0) * max).round();
    let bytes: Vec<u8> = match depth {
        BitDepth::Eight => {
            encoder.set_depth(png::BitDepth::Eight);
            img.data.iter().map(|&v| quantize(v) as u8).collect()
        }
        BitDepth::Sixteen => {
            encoder.set_depth(png::BitDepth::Sixteen);
            img.data
                .iter()
                .flat_map(|&v| (quantize(v) as u16).to_be_bytes())
                .collect()
        }
    };
    let encode_err = |reason| Error::PngEncode {
        path: path.to_path_buf(),
        reason,
    };
    let mut writer = encoder.write_header().map_err(encode_err)?;
    writer.write_image_data(&bytes).map_err(encode_err)?;
    writer.finish().map_err(encode_err)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(rng: &mut ChaCha8Rng, w: usize, h: usize, c: usize, lo: f64, hi: f64) -> Image {
        let data = (0..w * h * c).map(|_| rng.random_range(lo..hi)).collect();
        Image::new(w, h, c, data).unwrap()
    }

    #[test]
    fn rejects_bad_shapes_and_values() {
        assert!(Image::zeros(0, 3, 3).is_err());
        assert!(Image::zeros(3, 3, 2).is_err());
        assert!(Image::new(2, 2, 1, vec![0.0; 3]).is_err());
        assert!(matches!(
            Image::new(1, 1, 1, vec![f64::NAN]),
            Err(Error::NonFinite(0))
        ));
    }

    #[test]
    fn clamp01_identity_and_saturation() {
        let img = Image::new(2, 1, 1, vec![0.25, 0.75]).unwrap();
        assert_eq!(clamp01(&img).unwrap(), img);
        let img = Image::new(2, 1, 1, vec![1.5, -0.2]).unwrap();
        assert_eq!(clamp01(&img).unwrap().data(), &[1.0, 0.0]);
    }

    #[test]
    fn clamp01_rejects_non_finite() {
        let mut img = Image::zeros(2, 2, 1).unwrap();
        img.data_mut()[3] = f64::INFINITY;
        let err = clamp01(&img).unwrap_err();
        assert!(err.to_string().contains("non-finite pixel"));
    }

    #[test]
    fn clamp01_matches_scalar_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let img = random_image(&mut rng, 9, 7, 3, -2.0, 2.0);
        let out = clamp01(&img).unwrap();
        for (o, v) in out.data().iter().zip(img.data()) {
            let expect = if *v < 0.0 {
                0.0
            } else if *v > 1.0 {
                1.0
            } else {
                *v
            };
            assert_eq!(*o, expect);
        }
    }

    #[test]
    fn median_of_constants_and_odd_counts() {
        let frame = Image::filled(4, 3, 3, 0.3).unwrap();
        let frames = vec![frame.clone(); 5];
        assert_eq!(median_background(&frames).unwrap(), frame);

        let frames: Vec<Image> = [0.0, 0.0, 0.0, 1.0, 1.0]
            .iter()
            .map(|&v| Image::filled(1, 1, 3, v).unwrap())
            .collect();
        assert_eq!(median_background(&frames).unwrap().data(), &[0.0; 3]);
    }

    #[test]
    fn median_even_count_uses_midpoint() {
        let frames: Vec<Image> = [0.1, 0.9, 0.3, 0.5]
            .iter()
            .map(|&v| Image::filled(1, 1, 1, v).unwrap())
            .collect();
        let m = median_background(&frames).unwrap();
        assert!((m.data()[0] - 0.4).abs() < 1e-15);
    }

    #[test]
    fn median_errors() {
        assert!(median_background(&[]).is_err());
        let a = Image::zeros(2, 2, 3).unwrap();
        let b = Image::zeros(3, 2, 3).unwrap();
        assert!(matches!(
            median_background(&[a, b]),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn median_matches_sort_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let frames: Vec<Image> = (0..5).map(|_| random_image(&mut rng, 6, 5, 3, 0.0, 1.0)).collect();
        let m = median_background(&frames).unwrap();
        for i in 0..m.data().len() {
            let mut vals: Vec<f64> = frames.iter().map(|f| f.data()[i]).collect();
            vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
            assert_eq!(m.data()[i], vals[2]);
        }
    }

    proptest! {
        #[test]
        fn median_is_permutation_invariant(seed in 0u64..1000, rot in 0usize..5) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let frames: Vec<Image> = (0..5).map(|_| random_image(&mut rng, 3, 3, 3, 0.0, 1.0)).collect();
            let mut permuted = frames.clone();
            permuted.rotate_left(rot);
            permuted.swap(0, 4);
            prop_assert_eq!(median_background(&frames).unwrap(), median_background(&permuted).unwrap());
        }

        #[test]
        fn median_recovers_majority_background(seed in 0u64..1000, n in 1usize..8) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let bg = random_image(&mut rng, 4, 4, 3, 0.0, 1.0);
            // Each pixel sees the background in strictly more than half the frames.
            let outliers = (n - 1) / 2;
            let mut frames = vec![bg.clone(); n];
            for k in 0..outliers {
                let noise = random_image(&mut rng, 4, 4, 3, 0.0, 1.0);
                frames[k] = noise;
            }
            prop_assert_eq!(median_background(&frames).unwrap(), bg);
        }
    }

    #[test]
    fn png_round_trip_bounds() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("half.png");
        let half = Image::filled(5, 4, 3, 0.5).unwrap();
        save_png(&half, &path, BitDepth::Eight).unwrap();
        let back = load_png(&path).unwrap();
        assert!(back.max_abs_diff(&half) <= 1.0 / 510.0);

        let black = Image::zeros(3, 3, 1).unwrap();
        save_png(&black, &path, BitDepth::Eight).unwrap();
        assert_eq!(load_png(&path).unwrap(), black);

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for (c, depth, bound) in [
            (3, BitDepth::Eight, 1.0 / 510.0),
            (4, BitDepth::Eight, 1.0 / 510.0),
            (1, BitDepth::Sixteen, 1.0 / 131070.0),
        ] {
            let img = random_image(&mut rng, 17, 13, c, 0.0, 1.0);
            save_png(&img, &path, depth).unwrap();
            let back = load_png(&path).unwrap();
            assert_eq!(back.channels(), c);
            assert!(back.max_abs_diff(&img) <= bound + 1e-15);
            // second trip is bit-identical
            save_png(&back, &path, depth).unwrap();
            assert_eq!(load_png(&path).unwrap(), back);
        }
    }

    #[test]
    fn load_png_errors() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(load_png(dir.path().join("missing.png")), Err(Error::Io { .. })));
        let junk = dir.path().join("junk.png");
        std::fs::write(&junk, b"not a png").unwrap();
        assert!(matches!(load_png(&junk), Err(Error::PngDecode { .. })));
    }

    #[test]
    fn stack_times_and_reversal() {
        let r = Rendering::empty(2, 2).unwrap();
        let stack = RenderingStack::new(vec![r.clone(); 5]).unwrap();
        assert_eq!(stack.times(), vec![0.0, 0.25, 0.5, 0.75, 1.0]);
        let single = RenderingStack::new(vec![r]).unwrap();
        assert_eq!(single.times(), vec![0.5]);
        assert!(RenderingStack::new(vec![]).is_err());
    }
}
