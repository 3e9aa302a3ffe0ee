//! Synthetic ultrasound-like sequences with exact ground truth: a dark
//! elliptical nerve with a bright rim wanders under probe jitter over a
//! textured background, transient nerve-like distractors come and go, and
//! multiplicative speckle corrupts everything.

use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::detector::{Frame, RoiBox};
use crate::error::{Error, Result};
use crate::mask::Mask;
use crate::seeds;
use crate::tensor::Tensor;

/// Nerve appearance: hypoechoic (dark) interior with a hyperechoic
/// (bright) rim.
#[derive(Debug, Clone)]
pub struct NerveParams {
    pub cx: f64,
    pub cy: f64,
    /// Semi-axes in pixels.
    pub a: f64,
    pub b: f64,
    pub interior: u8,
    pub rim: u8,
    pub rim_thickness: f64,
}

#[derive(Debug, Clone)]
pub struct PhantomConfig {
    pub width: usize,
    pub height: usize,
    pub num_frames: usize,
    pub nerve: NerveParams,
    /// Per-frame probe-motion scale: centre random-walk step (px) and,
    /// scaled down, the semi-axis wobble.
    pub jitter_sigma: f64,
    /// Number of distractor slots cycling through spawn/decay.
    pub distractor_count: usize,
    /// Rim intensity of distractor blobs.
    pub distractor_intensity: u8,
    /// Frames a spawned distractor stays visible.
    pub distractor_lifetime: usize,
    /// Multiplicative speckle scale.
    pub speckle_sigma: f64,
    pub rng_seed: u64,
}

impl Default for PhantomConfig {
    fn default() -> Self {
        PhantomConfig {
            width: 600,
            height: 300,
            num_frames: 50,
            nerve: NerveParams {
                cx: 300.0,
                cy: 150.0,
                a: 30.0,
                b: 20.0,
                interior: 40,
                rim: 200,
                rim_thickness: 3.0,
            },
            jitter_sigma: 1.0,
            distractor_count: 3,
            distractor_intensity: 200,
            distractor_lifetime: 2,
            speckle_sigma: 0.15,
            rng_seed: 42,
        }
    }
}

impl PhantomConfig {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 || self.num_frames == 0 {
            return Err(Error::InvalidInput(
                "phantom dimensions and frame count must be positive".into(),
            ));
        }
        if !(self.nerve.a > 0.0 && self.nerve.b > 0.0) {
            return Err(Error::InvalidInput("nerve semi-axes must be positive".into()));
        }
        if self.jitter_sigma < 0.0 || self.speckle_sigma < 0.0 {
            return Err(Error::InvalidInput("noise scales must be ≥ 0".into()));
        }
        if self.distractor_count > 0 && self.distractor_lifetime == 0 {
            return Err(Error::InvalidInput("distractor lifetime must be ≥ 1".into()));
        }
        let (mx, my) = self.margins();
        let n = &self.nerve;
        if n.cx - mx < 0.0
            || n.cx + mx > (self.width - 1) as f64
            || n.cy - my < 0.0
            || n.cy + my > (self.height - 1) as f64
        {
            return Err(Error::InvalidInput(format!(
                "nerve ellipse plus jitter margin ({mx:.1}×{my:.1}) exceeds the {}×{} frame",
                self.width, self.height
            )));
        }
        Ok(())
    }

    /// Margin the wandering ellipse must keep from the frame border: the
    /// largest perturbed semi-axis, the rim, and 3σ of walk headroom.
    fn margins(&self) -> (f64, f64) {
        let slack = self.nerve.rim_thickness + 3.0 * self.jitter_sigma + 1.0;
        (AXIS_WOBBLE_MAX * self.nerve.a + slack, AXIS_WOBBLE_MAX * self.nerve.b + slack)
    }
}

/// Cap on the per-frame semi-axis wobble.
const AXIS_WOBBLE_MAX: f64 = 1.15;
const AXIS_WOBBLE_MIN: f64 = 0.85;
/// Semi-axis wobble std per unit of jitter_sigma.
const AXIS_WOBBLE_SCALE: f64 = 0.03;
/// Minimum distance between a distractor centre and the nerve centre.
const DISTRACTOR_CLEARANCE: f64 = 150.0;

/// Ground-truth numbers for one frame, as stored in the gt file.
#[derive(Debug, Clone, PartialEq)]
pub struct GtRecord {
    pub cx: f64,
    pub cy: f64,
    pub a: f64,
    pub b: f64,
    /// Tight bounding box of the mask: x, y, w, h.
    pub bbox: (usize, usize, usize, usize),
}

impl GtRecord {
    pub fn gt_box(&self) -> RoiBox {
        RoiBox {
            x: self.bbox.0 as i32,
            y: self.bbox.1 as i32,
            w: self.bbox.2 as u32,
            h: self.bbox.3 as u32,
            prob: 1.0,
            class_id: crate::nn::NERVE_CLASS,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FrameTruth {
    pub record: GtRecord,
    pub mask: Mask,
}

#[derive(Debug, Clone)]
pub struct GroundTruth {
    pub frames: Vec<FrameTruth>,
}

impl GroundTruth {
    pub fn records(&self) -> Vec<GtRecord> {
        self.frames.iter().map(|f| f.record.clone()).collect()
    }
}

#[derive(Debug, Clone, Copy)]
struct EllipseState {
    cx: f64,
    cy: f64,
    a: f64,
    b: f64,
}

#[derive(Debug, Clone, Copy)]
struct DistractorEvent {
    start: usize,
    end: usize,
    cx: f64,
    cy: f64,
    a: f64,
    b: f64,
}

/// Generates the full frame sequence and its ground truth. The result is a
/// pure function of the config: per-frame generators are derived from the
/// master seed, so frames render in parallel yet match sequential output
/// bit for bit.
pub fn generate_sequence(cfg: &PhantomConfig) -> Result<(Vec<Frame>, GroundTruth)> {
    cfg.validate()?;
    let states = nerve_walk(cfg);
    let events = schedule_distractors(cfg, &states);

    let rendered: Vec<(Frame, FrameTruth)> = (0..cfg.num_frames)
        .into_par_iter()
        .map(|t| render_frame(cfg, t, states[t], &events))
        .collect();

    let mut frames = Vec::with_capacity(cfg.num_frames);
    let mut truths = Vec::with_capacity(cfg.num_frames);
    for (frame, truth) in rendered {
        frames.push(frame);
        truths.push(truth);
    }
    Ok((frames, GroundTruth { frames: truths }))
}

/// Per-frame nerve states. The walk is sequential (each centre depends on
/// the previous frame) but consumes only the first draws of each per-frame
/// stream, which the render pass replays identically.
fn nerve_walk(cfg: &PhantomConfig) -> Vec<EllipseState> {
    let n = &cfg.nerve;
    let (mx, my) = cfg.margins();
    let mut states = Vec::with_capacity(cfg.num_frames);
    let (mut cx, mut cy) = (n.cx, n.cy);
    for t in 0..cfg.num_frames {
        let (dx, dy, wa, wb) = frame_draws(cfg, t);
        if t > 0 {
            cx = (cx + cfg.jitter_sigma * dx).clamp(mx, (cfg.width - 1) as f64 - mx);
            cy = (cy + cfg.jitter_sigma * dy).clamp(my, (cfg.height - 1) as f64 - my);
        }
        let wobble = AXIS_WOBBLE_SCALE * cfg.jitter_sigma;
        let a = (n.a * (1.0 + wobble * wa)).clamp(AXIS_WOBBLE_MIN * n.a, AXIS_WOBBLE_MAX * n.a);
        let b = (n.b * (1.0 + wobble * wb)).clamp(AXIS_WOBBLE_MIN * n.b, AXIS_WOBBLE_MAX * n.b);
        states.push(EllipseState { cx, cy, a, b });
    }
    states
}

/// The four leading normal draws of frame `t`'s stream: walk step and
/// semi-axis wobble.
fn frame_draws(cfg: &PhantomConfig, t: usize) -> (f64, f64, f64, f64) {
    let mut rng = frame_rng(cfg, t);
    let n = StandardNormal;
    (n.sample(&mut rng), n.sample(&mut rng), n.sample(&mut rng), n.sample(&mut rng))
}

fn frame_rng(cfg: &PhantomConfig, t: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seeds::derive(cfg.rng_seed, t as u64))
}

/// Distractor slots cycle: spawn somewhere clear of the nerve, stay for
/// `lifetime` frames, rest for a few frames, respawn elsewhere.
fn schedule_distractors(cfg: &PhantomConfig, states: &[EllipseState]) -> Vec<DistractorEvent> {
    let mut events = Vec::new();
    if cfg.distractor_count == 0 {
        return events;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seeds::derive(cfg.rng_seed, 1u64 << 40));
    let n = &cfg.nerve;
    for _slot in 0..cfg.distractor_count {
        let mut t = rng.random_range(0..4usize);
        while t < cfg.num_frames {
            let end = (t + cfg.distractor_lifetime).min(cfg.num_frames);
            let a = n.a * (0.55 + 0.25 * rng.random::<f64>());
            let b = n.b * (0.55 + 0.25 * rng.random::<f64>());
            let margin_x = a + n.rim_thickness + 2.0;
            let margin_y = b + n.rim_thickness + 2.0;
            let mut placed = None;
            for _ in 0..1000 {
                let cx = margin_x + rng.random::<f64>() * ((cfg.width - 1) as f64 - 2.0 * margin_x);
                let cy =
                    margin_y + rng.random::<f64>() * ((cfg.height - 1) as f64 - 2.0 * margin_y);
                let nerve = states[t];
                let d = ((cx - nerve.cx).powi(2) + (cy - nerve.cy).powi(2)).sqrt();
                if d >= DISTRACTOR_CLEARANCE {
                    placed = Some((cx, cy));
                    break;
                }
            }
            if let Some((cx, cy)) = placed {
                events.push(DistractorEvent { start: t, end, cx, cy, a, b });
            }
            t = end + 3 + rng.random_range(0..6usize);
        }
    }
    events
}

fn render_frame(
    cfg: &PhantomConfig,
    t: usize,
    nerve: EllipseState,
    events: &[DistractorEvent],
) -> (Frame, FrameTruth) {
    let (w, h) = (cfg.width, cfg.height);
    let mut canvas = vec![0.0f64; w * h];
    // Background: mild vertical attenuation gradient.
    for y in 0..h {
        let base = 70.0 + 40.0 * y as f64 / (h.max(2) - 1) as f64;
        for x in 0..w {
            canvas[y * w + x] = base;
        }
    }
    for ev in events.iter().filter(|e| (e.start..e.end).contains(&t)) {
        paint_ellipse(
            &mut canvas,
            w,
            h,
            &EllipseState { cx: ev.cx, cy: ev.cy, a: ev.a, b: ev.b },
            cfg.nerve.interior,
            cfg.distractor_intensity,
            cfg.nerve.rim_thickness,
        );
    }
    paint_ellipse(&mut canvas, w, h, &nerve, cfg.nerve.interior, cfg.nerve.rim, cfg.nerve.rim_thickness);

    let mask = Mask::from_fn(w, h, |x, y| inside_ellipse(x as f64, y as f64, &nerve));
    let bbox = mask.bounding_box().unwrap_or((0, 0, 0, 0));

    // Speckle consumes the frame stream after the four walk/wobble draws.
    let mut rng = frame_rng(cfg, t);
    let normal = StandardNormal;
    for _ in 0..4 {
        let _: f64 = normal.sample(&mut rng);
    }
    let mut pixels = Vec::with_capacity(w * h);
    if cfg.speckle_sigma > 0.0 {
        for &v in &canvas {
            let n: f64 = normal.sample(&mut rng);
            pixels.push((v * (1.0 + cfg.speckle_sigma * n)).round().clamp(0.0, 255.0) as u8);
        }
    } else {
        pixels.extend(canvas.iter().map(|&v| v.round().clamp(0.0, 255.0) as u8));
    }

    let frame = Frame::new(w, h, pixels).expect("canvas dims");
    let record =
        GtRecord { cx: nerve.cx, cy: nerve.cy, a: nerve.a, b: nerve.b, bbox };
    (frame, FrameTruth { record, mask })
}

#[inline]
fn inside_ellipse(x: f64, y: f64, e: &EllipseState) -> bool {
    let dx = (x - e.cx) / e.a;
    let dy = (y - e.cy) / e.b;
    dx * dx + dy * dy <= 1.0
}

fn paint_ellipse(
    canvas: &mut [f64],
    w: usize,
    h: usize,
    e: &EllipseState,
    interior: u8,
    rim: u8,
    rim_thickness: f64,
) {
    let (oa, ob) = (e.a + rim_thickness, e.b + rim_thickness);
    let x0 = ((e.cx - oa).floor().max(0.0)) as usize;
    let x1 = ((e.cx + oa).ceil().min((w - 1) as f64)) as usize;
    let y0 = ((e.cy - ob).floor().max(0.0)) as usize;
    let y1 = ((e.cy + ob).ceil().min((h - 1) as f64)) as usize;
    for y in y0..=y1 {
        for x in x0..=x1 {
            let (xf, yf) = (x as f64, y as f64);
            if inside_ellipse(xf, yf, e) {
                canvas[y * w + x] = interior as f64;
            } else {
                let dx = (xf - e.cx) / oa;
                let dy = (yf - e.cy) / ob;
                if dx * dx + dy * dy <= 1.0 {
                    canvas[y * w + x] = rim as f64;
                }
            }
        }
    }
}

/// Labeled 64×64 patches: one positive per frame centred on the nerve, and
/// `neg_per_frame` negatives sampled uniformly with < 20% overlap against
/// the ground-truth box.
pub fn sample_patches(
    frames: &[Frame],
    records: &[GtRecord],
    patch_size: usize,
    neg_per_frame: usize,
    seed: u64,
) -> Result<Vec<(Tensor, usize)>> {
    if frames.len() != records.len() {
        return Err(Error::InvalidInput(format!(
            "{} frames vs {} ground-truth records",
            frames.len(),
            records.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(frames.len() * (1 + neg_per_frame));
    for (frame, rec) in frames.iter().zip(records) {
        let (w, h) = (frame.width, frame.height);
        if w < patch_size || h < patch_size {
            return Err(Error::InvalidInput(format!(
                "frame {w}×{h} smaller than patch size {patch_size}"
            )));
        }
        let half = (patch_size / 2) as f64;
        let px = ((rec.cx - half).round().max(0.0) as usize).min(w - patch_size);
        let py = ((rec.cy - half).round().max(0.0) as usize).min(h - patch_size);
        out.push((frame.patch(px, py, patch_size), crate::nn::NERVE_CLASS));

        let gt = rec.gt_box();
        for _ in 0..neg_per_frame {
            let mut found = false;
            for _ in 0..1000 {
                let x = rng.random_range(0..=w - patch_size);
                let y = rng.random_range(0..=h - patch_size);
                let cand = RoiBox {
                    x: x as i32,
                    y: y as i32,
                    w: patch_size as u32,
                    h: patch_size as u32,
                    prob: 0.0,
                    class_id: 0,
                };
                if crate::consistency::overlap_ratio(&cand, &gt) < 0.2 {
                    out.push((frame.patch(x, y, patch_size), 0));
                    found = true;
                    break;
                }
            }
            if !found {
                return Err(Error::Generation(
                    "could not place a negative patch clear of the nerve in 1000 attempts"
                        .into(),
                ));
            }
        }
    }
    Ok(out)
}

// --- file interfaces -------------------------------------------------------

pub fn frame_file_name(index: usize) -> String {
    format!("frame_{index:05}.pgm")
}

pub fn mask_file_name(index: usize) -> String {
    format!("mask_{index:05}.pgm")
}

/// Writes frames, masks and the ground-truth table into `dir`.
pub fn write_sequence(dir: &Path, frames: &[Frame], gt: &GroundTruth) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    for (i, frame) in frames.iter().enumerate() {
        let path = dir.join(frame_file_name(i));
        crate::pgm::write_pgm(&path, frame.width, frame.height, &frame.pixels)?;
    }
    for (i, truth) in gt.frames.iter().enumerate() {
        let path = dir.join(mask_file_name(i));
        let m = &truth.mask;
        crate::pgm::write_pgm(&path, m.width, m.height, &m.to_bytes())?;
    }
    let gt_path = dir.join("gt.txt");
    let file =
        std::fs::File::create(&gt_path).map_err(|e| Error::io(gt_path.display().to_string(), e))?;
    let mut out = std::io::BufWriter::new(file);
    let mut line = String::new();
    for (i, truth) in gt.frames.iter().enumerate() {
        let r = &truth.record;
        line.clear();
        write!(
            line,
            "{i},{:.3},{:.3},{:.3},{:.3},{},{},{},{}",
            r.cx, r.cy, r.a, r.b, r.bbox.0, r.bbox.1, r.bbox.2, r.bbox.3
        )
        .expect("format gt line");
        writeln!(out, "{line}").map_err(|e| Error::io(gt_path.display().to_string(), e))?;
    }
    out.flush().map_err(|e| Error::io(gt_path.display().to_string(), e))
}

/// Reads the ground-truth table written by [`write_sequence`].
pub fn read_ground_truth(path: &Path) -> Result<Vec<GtRecord>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut records: Vec<(usize, GtRecord)> = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path.display().to_string(), e))?;
        if line.trim().is_empty() {
            continue;
        }
        let bad = || {
            Error::InvalidInput(format!(
                "{}:{}: expected `frame,cx,cy,a,b,bx,by,bw,bh`",
                path.display(),
                lineno + 1
            ))
        };
        let p: Vec<&str> = line.trim().split(',').collect();
        if p.len() != 9 {
            return Err(bad());
        }
        let idx: usize = p[0].parse().map_err(|_| bad())?;
        let rec = GtRecord {
            cx: p[1].parse().map_err(|_| bad())?,
            cy: p[2].parse().map_err(|_| bad())?,
            a: p[3].parse().map_err(|_| bad())?,
            b: p[4].parse().map_err(|_| bad())?,
            bbox: (
                p[5].parse().map_err(|_| bad())?,
                p[6].parse().map_err(|_| bad())?,
                p[7].parse().map_err(|_| bad())?,
                p[8].parse().map_err(|_| bad())?,
            ),
        };
        records.push((idx, rec));
    }
    records.sort_by_key(|(i, _)| *i);
    Ok(records.into_iter().map(|(_, r)| r).collect())
}

/// Loads `frame_*.pgm` files from a directory in index order.
pub fn load_frames(dir: &Path) -> Result<Vec<Frame>> {
    let entries =
        std::fs::read_dir(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    let mut indexed: Vec<(usize, PathBuf)> = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir.display().to_string(), e))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if let Some(idx) = name
            .strip_prefix("frame_")
            .and_then(|s| s.strip_suffix(".pgm"))
            .and_then(|s| s.parse::<usize>().ok())
        {
            indexed.push((idx, entry.path()));
        }
    }
    if indexed.is_empty() {
        return Err(Error::InvalidInput(format!(
            "no frame_*.pgm files in {}",
            dir.display()
        )));
    }
    indexed.sort_by_key(|(i, _)| *i);
    indexed
        .into_iter()
        .map(|(_, path)| {
            let (w, h, pixels) = crate::pgm::read_pgm(&path)?;
            Frame::new(w, h, pixels)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg() -> PhantomConfig {
        PhantomConfig {
            width: 200,
            height: 160,
            num_frames: 6,
            nerve: NerveParams {
                cx: 100.0,
                cy: 80.0,
                a: 22.0,
                b: 15.0,
                interior: 40,
                rim: 200,
                rim_thickness: 3.0,
            },
            distractor_count: 0,
            ..PhantomConfig::default()
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let cfg = PhantomConfig { num_frames: 5, ..PhantomConfig::default() };
        let (f1, g1) = generate_sequence(&cfg).unwrap();
        let (f2, g2) = generate_sequence(&cfg).unwrap();
        assert_eq!(f1, f2);
        for (a, b) in g1.frames.iter().zip(&g2.frames) {
            assert_eq!(a.record, b.record);
            assert_eq!(a.mask, b.mask);
        }
    }

    #[test]
    fn parallel_generation_equals_single_threaded() {
        let cfg = PhantomConfig { num_frames: 8, ..PhantomConfig::default() };
        let (par, _) = generate_sequence(&cfg).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let (seq, _) = pool.install(|| generate_sequence(&cfg)).unwrap();
        assert_eq!(par, seq);
    }

    #[test]
    fn noiseless_phantom_is_static_and_exact() {
        let cfg = PhantomConfig {
            jitter_sigma: 0.0,
            speckle_sigma: 0.0,
            distractor_count: 0,
            num_frames: 4,
            ..small_cfg()
        };
        let (frames, gt) = generate_sequence(&cfg).unwrap();
        for f in &frames[1..] {
            assert_eq!(*f, frames[0]);
        }
        let center = frames[0].get(cfg.nerve.cx as usize, cfg.nerve.cy as usize);
        assert_eq!(center, cfg.nerve.interior);
        for truth in &gt.frames {
            assert_eq!(truth.record.cx, cfg.nerve.cx);
            assert_eq!(truth.record.a, cfg.nerve.a);
        }
    }

    #[test]
    fn mask_area_matches_analytic_ellipse() {
        let cfg = PhantomConfig {
            jitter_sigma: 0.0,
            num_frames: 1,
            ..PhantomConfig::default()
        };
        let (_, gt) = generate_sequence(&cfg).unwrap();
        let area = gt.frames[0].mask.count() as f64;
        let analytic = std::f64::consts::PI * 30.0 * 20.0;
        assert!(
            (area - analytic).abs() / analytic < 0.02,
            "mask area {area} vs analytic {analytic}"
        );
    }

    #[test]
    fn stored_bbox_is_tight() {
        let cfg = PhantomConfig { num_frames: 5, ..PhantomConfig::default() };
        let (_, gt) = generate_sequence(&cfg).unwrap();
        for truth in &gt.frames {
            assert_eq!(truth.mask.bounding_box().unwrap(), truth.record.bbox);
        }
    }

    #[test]
    fn speckle_preserves_mean_brightness() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let normal = StandardNormal;
        let sigma = 0.2;
        let value = 128.0;
        let n = 200 * 200;
        let mut sum = 0.0;
        for _ in 0..n {
            let noise: f64 = normal.sample(&mut rng);
            sum += value * (1.0 + sigma * noise);
        }
        let mean = sum / n as f64;
        assert!((mean - value).abs() / value < 0.02, "mean drifted to {mean}");
    }

    #[test]
    fn oversized_ellipse_rejected() {
        let cfg = PhantomConfig {
            width: 80,
            height: 60,
            nerve: NerveParams { cx: 40.0, cy: 30.0, a: 38.0, b: 28.0, ..small_cfg().nerve },
            ..small_cfg()
        };
        assert!(matches!(generate_sequence(&cfg), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn distractors_appear_away_from_nerve_and_expire() {
        let cfg = PhantomConfig {
            num_frames: 20,
            distractor_count: 2,
            distractor_lifetime: 2,
            speckle_sigma: 0.0,
            jitter_sigma: 0.0,
            ..PhantomConfig::default()
        };
        let (frames, gt) = generate_sequence(&cfg).unwrap();
        // Some frames differ from others (distractors come and go).
        let distinct: std::collections::HashSet<&[u8]> =
            frames.iter().map(|f| f.pixels.as_slice()).collect();
        assert!(distinct.len() > 1, "distractors never changed the scene");
        // The nerve region itself is untouched: interior pixel constant.
        for (f, t) in frames.iter().zip(&gt.frames) {
            assert_eq!(f.get(t.record.cx as usize, t.record.cy as usize), cfg.nerve.interior);
        }
    }

    #[test]
    fn patch_sampling_respects_overlap_rules() {
        let cfg = small_cfg();
        let (frames, gt) = generate_sequence(&cfg).unwrap();
        let records = gt.records();
        let patches = sample_patches(&frames, &records, 64, 3, 9).unwrap();
        assert_eq!(patches.len(), frames.len() * 4);
        let mut i = 0;
        for rec in &records {
            let gt_box = rec.gt_box();
            let (pos, label) = &patches[i];
            assert_eq!(*label, crate::nn::NERVE_CLASS);
            assert_eq!(pos.dims(), &[1, 64, 64]);
            i += 1;
            // Positive: recomputed box must overlap ≥ 50%.
            let half = 32.0;
            let px = ((rec.cx - half).round().max(0.0) as usize).min(cfg.width - 64);
            let py = ((rec.cy - half).round().max(0.0) as usize).min(cfg.height - 64);
            let pos_box = RoiBox {
                x: px as i32,
                y: py as i32,
                w: 64,
                h: 64,
                prob: 0.0,
                class_id: 1,
            };
            assert!(crate::consistency::overlap_ratio(&pos_box, &gt_box) >= 0.5);
            for _ in 0..3 {
                let (_, label) = &patches[i];
                assert_eq!(*label, 0);
                i += 1;
            }
        }
    }

    #[test]
    fn requested_negative_count_is_exact() {
        let cfg = PhantomConfig { num_frames: 10, ..small_cfg() };
        let (frames, gt) = generate_sequence(&cfg).unwrap();
        let patches = sample_patches(&frames, &gt.records(), 64, 10, 4).unwrap();
        let negatives = patches.iter().filter(|(_, l)| *l == 0).count();
        assert_eq!(negatives, 100);
    }

    #[test]
    fn sequence_files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = PhantomConfig { num_frames: 3, ..small_cfg() };
        let (frames, gt) = generate_sequence(&cfg).unwrap();
        write_sequence(dir.path(), &frames, &gt).unwrap();
        let loaded = load_frames(dir.path()).unwrap();
        assert_eq!(loaded, frames);
        let records = read_ground_truth(&dir.path().join("gt.txt")).unwrap();
        assert_eq!(records.len(), 3);
        for (got, want) in records.iter().zip(gt.records()) {
            assert_eq!(got.bbox, want.bbox);
            assert!((got.cx - want.cx).abs() < 1e-3);
        }
    }
}
