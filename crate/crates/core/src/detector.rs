//! Sliding-window patch detector: classify every 64×64 window of a frame
//! and keep only high-confidence nerve hits.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::nn::{Network, NERVE_CLASS};
use crate::tensor::Tensor;

/// 8-bit grayscale frame, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl Frame {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Frame> {
        if pixels.len() != width * height {
            return Err(Error::InvalidInput(format!(
                "frame {}×{} needs {} pixels, got {}",
                width,
                height,
                width * height,
                pixels.len()
            )));
        }
        Ok(Frame { width, height, pixels })
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.pixels[y * self.width + x]
    }

    /// Extracts a square patch as a 1×s×s tensor with pixels scaled to [0,1].
    pub fn patch(&self, x: usize, y: usize, size: usize) -> Tensor {
        let mut data = Vec::with_capacity(size * size);
        for row in 0..size {
            let start = (y + row) * self.width + x;
            data.extend(self.pixels[start..start + size].iter().map(|&p| p as f64 / 255.0));
        }
        Tensor::from_vec(&[1, size, size], data).expect("patch dims")
    }
}

/// Candidate region of interest: a classified window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoiBox {
    pub x: i32,
    pub y: i32,
    pub w: u32,
    pub h: u32,
    /// Softmax probability of `class_id`.
    pub prob: f64,
    pub class_id: usize,
}

impl RoiBox {
    pub fn area(&self) -> f64 {
        self.w as f64 * self.h as f64
    }
}

#[derive(Debug, Clone)]
pub struct DetectorConfig {
    pub patch_size: usize,
    pub stride: usize,
    /// Confidence parameter of the thresholded decision; the decision
    /// threshold is `alpha / num_classes`.
    pub alpha: f64,
    pub num_classes: usize,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig { patch_size: 64, stride: 8, alpha: 1.8, num_classes: 2 }
    }
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::InvalidInput("num_classes must be at least 2".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < self.num_classes as f64) {
            return Err(Error::InvalidInput(format!(
                "alpha must satisfy 0 < alpha < K (= {})",
                self.num_classes
            )));
        }
        if self.stride == 0 || self.stride > self.patch_size {
            return Err(Error::InvalidInput("stride must be in 1..=patch_size".into()));
        }
        if self.patch_size == 0 {
            return Err(Error::InvalidInput("patch_size must be positive".into()));
        }
        Ok(())
    }

    pub fn threshold(&self) -> f64 {
        self.alpha / self.num_classes as f64
    }
}

/// High-confidence class decision: the argmax class is returned only when
/// its probability strictly exceeds `alpha/K`; otherwise no decision.
pub fn decide(probs: &[f64], cfg: &DetectorConfig) -> Option<usize> {
    let (best, &p) = probs
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.partial_cmp(b.1).unwrap_or(std::cmp::Ordering::Equal).then(b.0.cmp(&a.0)))?;
    (p > cfg.threshold()).then_some(best)
}

/// Classifies every stride-step window of the frame in raster order and
/// returns the windows confidently decided as nerve. Windows are evaluated
/// in parallel; the output order is raster order regardless of scheduling.
pub fn scan_frame(net: &Network, frame: &Frame, cfg: &DetectorConfig) -> Result<Vec<RoiBox>> {
    cfg.validate()?;
    let p = cfg.patch_size;
    if frame.width < p || frame.height < p {
        return Err(Error::InvalidInput(format!(
            "frame {}×{} smaller than patch size {}",
            frame.width, frame.height, p
        )));
    }
    let xs: Vec<usize> = (0..=frame.width - p).step_by(cfg.stride).collect();
    let ys: Vec<usize> = (0..=frame.height - p).step_by(cfg.stride).collect();
    let positions: Vec<(usize, usize)> =
        ys.iter().flat_map(|&y| xs.iter().map(move |&x| (x, y))).collect();

    let hits: Vec<Option<RoiBox>> = positions
        .par_iter()
        .map(|&(x, y)| {
            let patch = frame.patch(x, y, p);
            let probs = net.infer(&patch)?;
            Ok(match decide(&probs, cfg) {
                Some(class) if class == NERVE_CLASS => Some(RoiBox {
                    x: x as i32,
                    y: y as i32,
                    w: p as u32,
                    h: p as u32,
                    prob: probs[class],
                    class_id: class,
                }),
                _ => None,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(hits.into_iter().flatten().collect())
}

/// Number of windows a scan evaluates.
pub fn window_count(frame_w: usize, frame_h: usize, cfg: &DetectorConfig) -> usize {
    if frame_w < cfg.patch_size || frame_h < cfg.patch_size {
        return 0;
    }
    let nx = (frame_w - cfg.patch_size) / cfg.stride + 1;
    let ny = (frame_h - cfg.patch_size) / cfg.stride + 1;
    nx * ny
}

/// Writes detections as `frame_index,x,y,w,h,prob` lines, frames from 0.
pub fn write_detections(w: &mut impl Write, per_frame: &[Vec<RoiBox>]) -> std::io::Result<()> {
    for (idx, boxes) in per_frame.iter().enumerate() {
        for b in boxes {
            writeln!(w, "{},{},{},{},{},{:.6}", idx, b.x, b.y, b.w, b.h, b.prob)?;
        }
    }
    Ok(())
}

/// Reads a detections file back into per-frame box lists. The frame count is
/// the highest index seen plus one.
pub fn read_detections(path: &Path) -> Result<Vec<Vec<RoiBox>>> {
    let file =
        std::fs::File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut per_frame: Vec<Vec<RoiBox>> = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path.display().to_string(), e))?;
        if line.trim().is_empty() {
            continue;
        }
        let bad = || {
            Error::InvalidInput(format!(
                "{}:{}: expected `frame,x,y,w,h,prob`",
                path.display(),
                lineno + 1
            ))
        };
        let parts: Vec<&str> = line.trim().split(',').collect();
        if parts.len() != 6 {
            return Err(bad());
        }
        let frame: usize = parts[0].parse().map_err(|_| bad())?;
        let b = RoiBox {
            x: parts[1].parse().map_err(|_| bad())?,
            y: parts[2].parse().map_err(|_| bad())?,
            w: parts[3].parse().map_err(|_| bad())?,
            h: parts[4].parse().map_err(|_| bad())?,
            prob: parts[5].parse().map_err(|_| bad())?,
            class_id: NERVE_CLASS,
        };
        if per_frame.len() <= frame {
            per_frame.resize_with(frame + 1, Vec::new);
        }
        per_frame[frame].push(b);
    }
    Ok(per_frame)
}
