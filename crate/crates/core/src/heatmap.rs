//! Gaussian joint and limb heatmaps, area-averaged pyramids and the `ELH1`
//! binary format.
//!
//! Normalized pose coordinates map to pixel space as `(x·W, y·H)`; pixel
//! `(row, col)` has its center at `(col + 0.5, row + 0.5)`.

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::skeleton::{Joints2, JOINT_COUNT};

pub const HEATMAP_MAGIC: &[u8; 4] = b"ELH1";
pub const PYRAMID_FACTORS: [usize; 4] = [1, 2, 4, 8];
/// Gaussian width at the 384-pixel base resolution.
pub const DEFAULT_SIGMA: f64 = 2.0;
pub const DEFAULT_RESOLUTION: usize = 384;

/// `C × H × W` stack of maps, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct HeatmapStack {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl HeatmapStack {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != channels * height * width {
            return Err(Error::Shape(format!(
                "{channels}x{height}x{width} stack needs {} values, got {}",
                channels * height * width,
                data.len()
            )));
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![0.0; channels * height * width],
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    fn channel_mut(&mut self, c: usize) -> &mut [f64] {
        let n = self.height * self.width;
        &mut self.data[c * n..(c + 1) * n]
    }

    pub fn at(&self, c: usize, row: usize, col: usize) -> f64 {
        self.data[(c * self.height + row) * self.width + col]
    }

    /// Row and column of a channel's maximum; the first maximum in row-major
    /// order wins ties.
    pub fn argmax(&self, c: usize) -> (usize, usize) {
        let ch = self.channel(c);
        let mut best = 0;
        for (i, v) in ch.iter().enumerate() {
            if *v > ch[best] {
                best = i;
            }
        }
        (best / self.width, best % self.width)
    }

    /// Stacks `self` over `other` along the channel axis.
    pub fn concat(mut self, other: &HeatmapStack) -> Result<Self> {
        if (self.height, self.width) != (other.height, other.width) {
            return Err(Error::Shape("heatmap stacks differ in spatial size".into()));
        }
        self.channels += other.channels;
        self.data.extend_from_slice(&other.data);
        Ok(self)
    }
}

/// Pixel whose center is nearest to pixel-space coordinate `p`, ties toward
/// the smaller index, clamped into `[0, extent)`.
pub fn nearest_pixel(p: f64, extent: usize) -> usize {
    let k = (p - 1.0).ceil();
    k.clamp(0.0, (extent.max(1) - 1) as f64) as usize
}

fn gaussian(d2: f64, sigma: f64) -> f64 {
    (-d2 / (2.0 * sigma * sigma)).exp()
}

fn fill_channel<F: Fn(f64, f64) -> f64>(ch: &mut [f64], width: usize, height: usize, value: F) {
    for row in 0..height {
        let py = row as f64 + 0.5;
        for col in 0..width {
            ch[row * width + col] = value(col as f64 + 0.5, py);
        }
    }
}

/// One peak-normalized Gaussian per joint.
pub fn joint_heatmaps(pose: &Joints2, width: usize, height: usize, sigma: f64) -> HeatmapStack {
    assert!(sigma > 0.0, "sigma must be positive");
    let mut out = HeatmapStack::zeros(JOINT_COUNT, height, width);
    for (j, p) in pose.iter().enumerate() {
        let (jx, jy) = (p[0] * width as f64, p[1] * height as f64);
        fill_channel(out.channel_mut(j), width, height, |x, y| {
            gaussian((x - jx).powi(2) + (y - jy).powi(2), sigma)
        });
    }
    out
}

/// Squared distance from `p` to the segment `a–b`.
pub fn point_segment_distance_sq(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let ab = [b[0] - a[0], b[1] - a[1]];
    let ap = [p[0] - a[0], p[1] - a[1]];
    let len2 = ab[0] * ab[0] + ab[1] * ab[1];
    let t = if len2 > 0.0 {
        ((ap[0] * ab[0] + ap[1] * ab[1]) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let d = [ap[0] - t * ab[0], ap[1] - t * ab[1]];
    d[0] * d[0] + d[1] * d[1]
}

/// One Gaussian field over the distance to each limb segment.
pub fn limb_heatmaps(
    pose: &Joints2,
    edges: &[(usize, usize)],
    width: usize,
    height: usize,
    sigma: f64,
) -> HeatmapStack {
    assert!(sigma > 0.0, "sigma must be positive");
    let mut out = HeatmapStack::zeros(edges.len(), height, width);
    let px = |j: usize| [pose[j][0] * width as f64, pose[j][1] * height as f64];
    for (e, &(a, b)) in edges.iter().enumerate() {
        let (pa, pb) = (px(a), px(b));
        fill_channel(out.channel_mut(e), width, height, |x, y| {
            gaussian(point_segment_distance_sq([x, y], pa, pb), sigma)
        });
    }
    out
}

/// Joint channels followed by limb channels.
pub fn skeleton_heatmaps(
    pose: &Joints2,
    edges: &[(usize, usize)],
    width: usize,
    height: usize,
    sigma: f64,
) -> HeatmapStack {
    joint_heatmaps(pose, width, height, sigma)
        .concat(&limb_heatmaps(pose, edges, width, height, sigma))
        .expect("same spatial size")
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeatmapLevel {
    pub factor: usize,
    pub maps: HeatmapStack,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeatmapPyramid {
    pub levels: Vec<HeatmapLevel>,
}

fn downsample(maps: &HeatmapStack, factor: usize) -> HeatmapStack {
    if factor == 1 {
        return maps.clone();
    }
    let (h, w) = (maps.height / factor, maps.width / factor);
    let area = (factor * factor) as f64;
    let mut out = HeatmapStack::zeros(maps.channels, h, w);
    for c in 0..maps.channels {
        let src = maps.channel(c);
        let dst = out.channel_mut(c);
        for r in 0..h {
            for col in 0..w {
                let mut s = 0.0;
                for dr in 0..factor {
                    let row = (r * factor + dr) * maps.width + col * factor;
                    s += src[row..row + factor].iter().sum::<f64>();
                }
                dst[r * w + col] = s / area;
            }
        }
    }
    out
}

/// Area-averaged downsampling of `maps` by each factor.
pub fn build_pyramid(maps: &HeatmapStack, factors: &[usize]) -> Result<HeatmapPyramid> {
    let levels = factors
        .iter()
        .map(|&factor| {
            if factor == 0 || maps.height % factor != 0 || maps.width % factor != 0 {
                return Err(Error::Divisibility {
                    height: maps.height,
                    width: maps.width,
                    factor,
                });
            }
            Ok(HeatmapLevel {
                factor,
                maps: downsample(maps, factor),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(HeatmapPyramid { levels })
}

/// Writes a pyramid whose base level spans `channels × height × width`.
/// Values are stored as 32-bit floats.
pub fn write_pyramid<W: Write>(mut w: W, pyramid: &HeatmapPyramid) -> Result<()> {
    let base = pyramid
        .levels
        .first()
        .ok_or_else(|| Error::EmptyInput("pyramid without levels".into()))?;
    let (c, h, wd) = (
        base.maps.channels,
        base.maps.height * base.factor,
        base.maps.width * base.factor,
    );
    let u32_of = |v: usize| u32::try_from(v).map_err(|_| Error::Value(format!("{v} exceeds u32")));
    w.write_all(HEATMAP_MAGIC)?;
    for v in [c, h, wd, pyramid.levels.len()] {
        w.write_all(&u32_of(v)?.to_le_bytes())?;
    }
    for level in &pyramid.levels {
        if level.maps.channels != c || level.maps.height * level.factor != h || level.maps.width * level.factor != wd {
            return Err(Error::Shape(format!(
                "level with factor {} does not match base dims",
                level.factor
            )));
        }
        w.write_all(&u32_of(level.factor)?.to_le_bytes())?;
        for v in &level.maps.data {
            w.write_all(&(*v as f32).to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_pyramid<R: Read>(mut r: R) -> Result<HeatmapPyramid> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    let bad = |m: &str| Error::Schema(format!("ELH1: {m}"));
    if bytes.len() < 20 || &bytes[..4] != HEATMAP_MAGIC {
        return Err(bad("missing magic or header"));
    }
    let word = |at: usize| -> Result<usize> {
        bytes
            .get(at..at + 4)
            .map(|b| u32::from_le_bytes(b.try_into().expect("4 bytes")) as usize)
            .ok_or_else(|| bad("truncated"))
    };
    let (c, h, w, count) = (word(4)?, word(8)?, word(12)?, word(16)?);
    let mut pos = 20;
    let mut levels = Vec::with_capacity(count);
    for _ in 0..count {
        let factor = word(pos)?;
        pos += 4;
        if factor == 0 || h % factor != 0 || w % factor != 0 {
            return Err(bad("level factor does not divide base dims"));
        }
        let (lh, lw) = (h / factor, w / factor);
        let n = c * lh * lw;
        let raw = bytes.get(pos..pos + 4 * n).ok_or_else(|| bad("truncated level"))?;
        pos += 4 * n;
        let data = raw
            .chunks_exact(4)
            .map(|b| f64::from(f32::from_le_bytes(b.try_into().expect("4 bytes"))))
            .collect();
        levels.push(HeatmapLevel {
            factor,
            maps: HeatmapStack::new(c, lh, lw, data)?,
        });
    }
    if pos != bytes.len() {
        return Err(bad("trailing bytes"));
    }
    Ok(HeatmapPyramid { levels })
}
