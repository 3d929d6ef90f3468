//! Frames, bilinear resampling, field rendering and lossless frame I/O.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use erecon_nn::{Scalar, Tensor};

use crate::error::{io_err, CoreError, Result};

/// Where a frame or latent sample came from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Source {
    #[default]
    Simulated,
    Interpolated,
}

impl Source {
    pub fn as_str(self) -> &'static str {
        match self {
            Source::Simulated => "simulated",
            Source::Interpolated => "interpolated",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "simulated" => Some(Source::Simulated),
            "interpolated" => Some(Source::Interpolated),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct FrameMeta {
    pub iteration_index: usize,
    /// Seconds since the start of the simulation.
    pub time: f64,
    /// Scalar objective attached to the frame, e.g. peak stress in MPa.
    pub objective: f64,
    pub source: Source,
}

/// Single-channel sample grid with unrestricted values.
#[derive(Clone, Debug, PartialEq)]
pub struct Plane {
    pub width: usize,
    pub height: usize,
    /// Row-major, `values[y * width + x]`.
    pub values: Vec<f64>,
}

impl Plane {
    pub fn new(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 || values.len() != width * height {
            return Err(CoreError::InvalidArgument(format!(
                "plane {width}x{height} cannot hold {} values",
                values.len()
            )));
        }
        Ok(Self { width, height, values })
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(f64, f64) -> f64) -> Self {
        let mut values = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                values.push(f(x as f64, y as f64));
            }
        }
        Self { width, height, values }
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }

    pub fn sample(&self, x: f64, y: f64) -> Result<f64> {
        bilinear_sample(self, x, y)
    }
}

/// Lower cell index and fractional offset along one axis.
#[inline]
fn cell(coord: f64, len: usize) -> (usize, usize, f64) {
    if len == 1 {
        return (0, 0, 0.0);
    }
    let i0 = (coord.floor() as usize).min(len - 2);
    (i0, i0 + 1, coord - i0 as f64)
}

/// Two-stage linear blend of the four grid samples around `(x, y)`:
/// first along x on the bracketing rows, then along y.
pub fn bilinear_sample(image: &Plane, x: f64, y: f64) -> Result<f64> {
    let max_x = (image.width - 1) as f64;
    let max_y = (image.height - 1) as f64;
    if !(0.0..=max_x).contains(&x) || !(0.0..=max_y).contains(&y) {
        return Err(CoreError::OutOfGrid {
            x,
            y,
            width: image.width,
            height: image.height,
        });
    }
    let (x0, x1, fx) = cell(x, image.width);
    let (y0, y1, fy) = cell(y, image.height);
    let low = (1.0 - fx) * image.at(x0, y0) + fx * image.at(x1, y0);
    let high = (1.0 - fx) * image.at(x0, y1) + fx * image.at(x1, y1);
    Ok((1.0 - fy) * low + fy * high)
}

/// Corner-aligned source coordinate: `dst · (S − 1) / (D − 1)`.
fn aligned_coords(src: usize, dst: usize, axis: &str) -> Result<Vec<f64>> {
    if src == 0 || dst == 0 || (src != dst && (src < 2 || dst < 2)) {
        return Err(CoreError::InvalidArgument(format!(
            "cannot resize {axis} from {src} to {dst}: corner-aligned resize needs both sizes >= 2"
        )));
    }
    if src == dst {
        return Ok((0..dst).map(|i| i as f64).collect());
    }
    let scale = (src - 1) as f64 / (dst - 1) as f64;
    Ok((0..dst)
        .map(|i| if i == dst - 1 { (src - 1) as f64 } else { i as f64 * scale })
        .collect())
}

pub fn resize_plane(image: &Plane, out_height: usize, out_width: usize) -> Result<Plane> {
    let xs = aligned_coords(image.width, out_width, "width")?;
    let ys = aligned_coords(image.height, out_height, "height")?;
    if out_width == image.width && out_height == image.height {
        return Ok(image.clone());
    }
    let mut values = Vec::with_capacity(out_width * out_height);
    for &y in &ys {
        for &x in &xs {
            values.push(bilinear_sample(image, x, y)?);
        }
    }
    Ok(Plane {
        width: out_width,
        height: out_height,
        values,
    })
}

/// `H × W × 3` image with pixels in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    height: usize,
    width: usize,
    /// Interleaved RGB, row-major.
    pixels: Vec<f64>,
    pub meta: FrameMeta,
}

impl Frame {
    pub fn new(height: usize, width: usize, pixels: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || pixels.len() != height * width * 3 {
            return Err(CoreError::InvalidArgument(format!(
                "{height}x{width}x3 frame cannot hold {} values",
                pixels.len()
            )));
        }
        if let Some(bad) = pixels.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(CoreError::InvalidArgument(format!(
                "pixel value {bad} outside [0, 1]"
            )));
        }
        Ok(Self {
            height,
            width,
            pixels,
            meta: FrameMeta::default(),
        })
    }

    pub fn filled(height: usize, width: usize, rgb: [f64; 3]) -> Result<Self> {
        let pixels = rgb.iter().copied().cycle().take(height * width * 3).collect();
        Self::new(height, width, pixels)
    }

    pub fn with_meta(mut self, meta: FrameMeta) -> Self {
        self.meta = meta;
        self
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn pixel(&self, y: usize, x: usize) -> [f64; 3] {
        let i = (y * self.width + x) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    pub fn channel(&self, c: usize) -> Plane {
        Plane {
            width: self.width,
            height: self.height,
            values: self.pixels.iter().skip(c).step_by(3).copied().collect(),
        }
    }

    fn from_channels(planes: [Plane; 3], meta: FrameMeta) -> Result<Self> {
        let (w, h) = (planes[0].width, planes[0].height);
        let mut pixels = Vec::with_capacity(w * h * 3);
        for i in 0..w * h {
            for p in &planes {
                pixels.push(p.values[i].clamp(0.0, 1.0));
            }
        }
        Ok(Self::new(h, w, pixels)?.with_meta(meta))
    }

    /// 8-bit quantized copy of the pixels.
    pub fn to_bytes(&self) -> Vec<u8> {
        self.pixels.iter().map(|&v| quantize(v)).collect()
    }
}

/// Round-half-up 8-bit quantizer: `floor(255 v + 0.5)`.
pub fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0 + 0.5).floor() as u8
}

/// Bilinear resize with corner-aligned coordinates. Identical dimensions copy.
pub fn resize(image: &Frame, out_height: usize, out_width: usize) -> Result<Frame> {
    if (out_height, out_width) == image.dims() {
        return Ok(image.clone());
    }
    let planes = [0, 1, 2].map(|c| resize_plane(&image.channel(c), out_height, out_width));
    let [r, g, b] = planes;
    Frame::from_channels([r?, g?, b?], image.meta)
}

/// Blue `(0, 0, 1)` at 0 to red `(1, 0, 0)` at 1.
pub fn colormap(t: f64) -> [f64; 3] {
    let t = t.clamp(0.0, 1.0);
    [t, 0.0, 1.0 - t]
}

/// Render per-node scalars as equal-width vertical bars through [`colormap`].
pub fn render_field(values: &[f64], value_range: (f64, f64), out_height: usize, out_width: usize) -> Result<Frame> {
    let (lo, hi) = value_range;
    if values.is_empty() {
        return Err(CoreError::InvalidArgument("no values to render".into()));
    }
    if !(lo < hi) {
        return Err(CoreError::InvalidArgument(format!(
            "value range must satisfy min < max, got ({lo}, {hi})"
        )));
    }
    if out_height == 0 || out_width == 0 {
        return Err(CoreError::InvalidArgument("frame dimensions must be positive".into()));
    }
    let n = values.len();
    let colors: Vec<[f64; 3]> = values.iter().map(|&v| colormap((v - lo) / (hi - lo))).collect();
    let mut pixels = Vec::with_capacity(out_height * out_width * 3);
    for _ in 0..out_height {
        for x in 0..out_width {
            pixels.extend_from_slice(&colors[x * n / out_width]);
        }
    }
    Frame::new(out_height, out_width, pixels)
}

/// Write a binary P6 pixmap.
pub fn save_frame(path: impl AsRef<Path>, frame: &Frame) -> Result<()> {
    let path = path.as_ref();
    let mut bytes = format!("P6\n{} {}\n255\n", frame.width, frame.height).into_bytes();
    bytes.extend(frame.to_bytes());
    fs::write(path, bytes).map_err(io_err(path))
}

pub fn load_frame(path: impl AsRef<Path>) -> Result<Frame> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(io_err(path))?;
    parse_ppm(&bytes).map_err(|reason| CoreError::Malformed {
        path: path.to_path_buf(),
        reason,
    })
}

fn parse_ppm(bytes: &[u8]) -> std::result::Result<Frame, String> {
    let mut pos = 0;
    let mut token = || -> std::result::Result<String, String> {
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            break;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err("unexpected end of header".into());
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    if token()? != "P6" {
        return Err("not a binary P6 pixmap".into());
    }
    let num = |s: String| s.parse::<usize>().map_err(|_| format!("bad header field {s:?}"));
    let width = num(token()?)?;
    let height = num(token()?)?;
    let maxval = num(token()?)?;
    if maxval != 255 {
        return Err(format!("unsupported maxval {maxval}"));
    }
    // exactly one whitespace byte separates the header from the raster
    let start = pos + 1;
    let need = width * height * 3;
    if width == 0 || height == 0 {
        return Err("zero-sized image".into());
    }
    if bytes.len() < start + need {
        return Err(format!(
            "truncated raster: {} of {need} bytes",
            bytes.len().saturating_sub(start)
        ));
    }
    if bytes.len() > start + need {
        return Err("trailing bytes after raster".into());
    }
    let pixels = bytes[start..start + need].iter().map(|&b| f64::from(b) / 255.0).collect();
    Frame::new(height, width, pixels).map_err(|e| e.to_string())
}

/// Time-ordered frames of uniform size.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameSequence {
    frames: Vec<Frame>,
    pub source: String,
}

impl FrameSequence {
    pub fn new(frames: Vec<Frame>, source: impl Into<String>) -> Result<Self> {
        if let Some(first) = frames.first() {
            let dims = first.dims();
            let mut seen = std::collections::HashSet::new();
            for (i, f) in frames.iter().enumerate() {
                if f.dims() != dims {
                    return Err(CoreError::DimensionMismatch(format!(
                        "frame {i} is {:?}, sequence uses {dims:?}",
                        f.dims()
                    )));
                }
                if !seen.insert(f.meta.iteration_index) {
                    return Err(CoreError::InvalidArgument(format!(
                        "duplicate iteration index {}",
                        f.meta.iteration_index
                    )));
                }
                if i > 0 && !(f.meta.time > frames[i - 1].meta.time) {
                    return Err(CoreError::InvalidArgument(format!(
                        "frame times must increase strictly (frame {i}: {} after {})",
                        f.meta.time,
                        frames[i - 1].meta.time
                    )));
                }
            }
        }
        Ok(Self {
            frames,
            source: source.into(),
        })
    }

    pub fn frames(&self) -> &[Frame] {
        &self.frames
    }

    pub fn into_frames(self) -> Vec<Frame> {
        self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn dims(&self) -> Option<(usize, usize)> {
        self.frames.first().map(Frame::dims)
    }

    pub fn objectives(&self) -> Vec<f64> {
        self.frames.iter().map(|f| f.meta.objective).collect()
    }

    pub fn times(&self) -> Vec<f64> {
        self.frames.iter().map(|f| f.meta.time).collect()
    }

    /// Every `stride`-th frame starting from the first.
    pub fn every_nth(&self, stride: usize) -> Result<Self> {
        if stride == 0 {
            return Err(CoreError::InvalidArgument("stride must be positive".into()));
        }
        Self::new(
            self.frames.iter().step_by(stride).cloned().collect(),
            self.source.clone(),
        )
    }
}

pub const MANIFEST_FILE: &str = "manifest.csv";
pub const MANIFEST_HEADER: &str = "index,time_s,objective,filename";

/// Write frames as `frame_NNNNN.ppm` plus a `manifest.csv` sidecar.
/// Returns the written file names, manifest last.
pub fn write_sequence(dir: impl AsRef<Path>, seq: &FrameSequence) -> Result<Vec<String>> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut manifest = String::from(MANIFEST_HEADER);
    manifest.push('\n');
    let mut names = Vec::with_capacity(seq.len() + 1);
    for (i, f) in seq.frames().iter().enumerate() {
        let name = format!("frame_{i:05}.ppm");
        save_frame(dir.join(&name), f)?;
        writeln!(
            manifest,
            "{},{},{},{}",
            f.meta.iteration_index, f.meta.time, f.meta.objective, name
        )
        .unwrap();
        names.push(name);
    }
    let path = dir.join(MANIFEST_FILE);
    fs::write(&path, manifest).map_err(io_err(&path))?;
    names.push(MANIFEST_FILE.to_string());
    Ok(names)
}

pub fn read_sequence(dir: impl AsRef<Path>, source: &str) -> Result<FrameSequence> {
    let dir = dir.as_ref();
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    let malformed = |reason: String| CoreError::Malformed {
        path: path.clone(),
        reason,
    };
    let mut lines = text.lines();
    if lines.next() != Some(MANIFEST_HEADER) {
        return Err(malformed("missing manifest header".into()));
    }
    let mut frames = Vec::new();
    for (ln, line) in lines.enumerate() {
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 4 {
            return Err(malformed(format!("line {}: expected 4 columns", ln + 2)));
        }
        let bad = |what: &str| malformed(format!("line {}: bad {what}", ln + 2));
        let meta = FrameMeta {
            iteration_index: cols[0].parse().map_err(|_| bad("index"))?,
            time: cols[1].parse().map_err(|_| bad("time"))?,
            objective: cols[2].parse().map_err(|_| bad("objective"))?,
            source: Source::Simulated,
        };
        frames.push(load_frame(dir.join(cols[3]))?.with_meta(meta));
    }
    FrameSequence::new(frames, source)
}

/// Stack frames into an `[N, 3, H, W]` tensor.
pub fn frames_to_tensor<'a, T: Scalar>(frames: impl IntoIterator<Item = &'a Frame>) -> Result<Tensor<T>> {
    let frames: Vec<&Frame> = frames.into_iter().collect();
    let first = frames
        .first()
        .ok_or_else(|| CoreError::InvalidArgument("no frames to stack".into()))?;
    let (h, w) = first.dims();
    let plane = h * w;
    let mut data = Vec::with_capacity(frames.len() * 3 * plane);
    for f in &frames {
        if f.dims() != (h, w) {
            return Err(CoreError::DimensionMismatch(format!(
                "frame {:?} in a {h}x{w} batch",
                f.dims()
            )));
        }
        for c in 0..3 {
            data.extend(f.pixels.iter().skip(c).step_by(3).map(|&v| T::from_f64_lossy(v)));
        }
    }
    Ok(Tensor::from_vec(&[frames.len(), 3, h, w], data)?)
}

/// Inverse of [`frames_to_tensor`] for one sample; values are clamped into `[0, 1]`.
pub fn tensor_to_frame<T: Scalar>(batch: &Tensor<T>, index: usize) -> Result<Frame> {
    let s = batch.shape();
    if s.len() != 4 || s[1] != 3 {
        return Err(CoreError::DimensionMismatch(format!(
            "expected [N, 3, H, W], got {s:?}"
        )));
    }
    let (h, w) = (s[2], s[3]);
    let plane = h * w;
    let sample = batch.sample(index);
    let mut pixels = Vec::with_capacity(3 * plane);
    for i in 0..plane {
        for c in 0..3 {
            pixels.push(sample[c * plane + i].as_f64().clamp(0.0, 1.0));
        }
    }
    Frame::new(h, w, pixels)
}
