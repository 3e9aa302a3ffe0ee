//! Command-line front end for the nerve localization/segmentation pipeline.
//!
//! Exit codes: 0 success, 1 usage or config error, 2 I/O error,
//! 3 no nerve found.

use std::collections::HashMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use nervescan::config::RunConfig;
use nervescan::consistency::{cluster_rois, localize, update_tracks, write_track_log, Track};
use nervescan::contour::{
    edge_map, evolve_snake, gvf_field, overlay_contour, snake_to_mask, EdgeMap, Snake,
};
use nervescan::detector::{read_detections, scan_frame, write_detections, RoiBox};
use nervescan::error::Error;
use nervescan::eval::{
    dice, hausdorff, localization_metrics, write_localization_report, write_seg_report, SegReport,
};
use nervescan::mask::Mask;
use nervescan::nn::{train, Network};
use nervescan::phantom::{
    generate_sequence, load_frames, read_ground_truth, sample_patches, write_sequence,
};

#[derive(Parser)]
#[command(name = "nervescan", version, about = "Nerve localization and segmentation pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Run configuration file (key=value lines).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed; overrides the config file.
    #[arg(long)]
    seed: Option<u64>,
    /// Override a single config key, e.g. --set stride=16 (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic phantom sequence with ground truth.
    Phantom {
        #[command(flatten)]
        common: Common,
        /// Output directory for frames, masks and gt.txt.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the patch classifier on a phantom directory.
    Train {
        #[command(flatten)]
        common: Common,
        /// Directory holding frame_*.pgm and gt.txt.
        #[arg(long)]
        data: PathBuf,
        /// Where to write the trained model.
        #[arg(long, value_name = "FILE")]
        model_out: PathBuf,
    },
    /// Scan frames with a trained model and write detections.
    Detect {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
        /// Directory holding frame_*.pgm.
        #[arg(long)]
        frames: PathBuf,
        /// Detections output file.
        #[arg(long)]
        out: PathBuf,
        /// Scan stride in pixels; overrides the config.
        #[arg(long)]
        stride: Option<usize>,
    },
    /// Run the spatiotemporal filter over detections.
    Localize {
        #[command(flatten)]
        common: Common,
        /// Detections file from `detect`.
        #[arg(long)]
        detections: PathBuf,
        /// Output directory for tracks.csv, localizations.csv, localization.csv.
        #[arg(long)]
        out: PathBuf,
    },
    /// Segment the final frame from a localization box.
    Segment {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        frames: PathBuf,
        /// Localization file from `localize` (single detections-format line).
        #[arg(long)]
        localization: PathBuf,
        /// Optional model for the probability-map energy blend (prob_weight > 0).
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score predictions against ground truth.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Directory with localizations.csv and/or predicted masks.
        #[arg(long)]
        pred: PathBuf,
        /// Directory with gt.txt and mask_*.pgm.
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // help/version requests are successes, anything else is usage error 1
            if e.use_stderr() {
                eprint!("{e}");
                return ExitCode::from(1);
            }
            print!("{e}");
            return ExitCode::SUCCESS;
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            let code = match err {
                Error::Io { .. } => 2,
                Error::NoNerve => 3,
                _ => 1,
            };
            ExitCode::from(code)
        }
    }
}

fn load_config(common: &Common, stride: Option<usize>) -> Result<RunConfig, Error> {
    let mut cfg = RunConfig::default();
    let mut lines = HashMap::new();
    if let Some(path) = &common.config {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        lines = cfg.apply_text(&text)?;
    }
    for kv in &common.set {
        let Some((key, value)) = kv.split_once('=') else {
            return Err(Error::Config {
                line: 0,
                key: kv.clone(),
                detail: "expected --set KEY=VALUE".into(),
            });
        };
        cfg.apply(key.trim(), value.trim(), 0)?;
    }
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(stride) = stride {
        cfg.stride = stride;
    }
    cfg.validate(&lines)?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Phantom { common, out } => {
            let cfg = load_config(&common, None)?;
            let (frames, gt) = generate_sequence(&cfg.phantom())?;
            write_sequence(&out, &frames, &gt)?;
            println!(
                "wrote {} frames + masks + gt.txt to {}",
                frames.len(),
                out.display()
            );
            Ok(())
        }
        Command::Train { common, data, model_out } => {
            let cfg = load_config(&common, None)?;
            let frames = load_frames(&data)?;
            let gt_path = data.join("gt.txt");
            let records = read_ground_truth(&gt_path)?;
            let patches = sample_patches(
                &frames,
                &records,
                cfg.patch_size,
                cfg.neg_per_frame,
                nervescan::seeds::derive(cfg.seed, 0x70_61_74),
            )?;
            println!(
                "training on {} patches ({} frames, {} negatives/frame)",
                patches.len(),
                frames.len(),
                cfg.neg_per_frame
            );
            let mut net = Network::patch_classifier(cfg.seed, cfg.dropout_rate);
            let losses = train(&mut net, &patches, &cfg.train())?;
            for (i, loss) in losses.iter().enumerate() {
                println!("epoch {}/{} loss {loss:.6}", i + 1, losses.len());
            }
            net.save(&model_out)?;
            println!("model written to {}", model_out.display());
            Ok(())
        }
        Command::Detect { common, model, frames, out, stride } => {
            let cfg = load_config(&common, stride)?;
            let net = Network::load(&model)?;
            let frame_list = load_frames(&frames)?;
            let det_cfg = cfg.detector();
            let mut per_frame = Vec::with_capacity(frame_list.len());
            for frame in &frame_list {
                per_frame.push(scan_frame(&net, frame, &det_cfg)?);
            }
            let file = std::fs::File::create(&out)
                .map_err(|e| Error::io(out.display().to_string(), e))?;
            let mut w = std::io::BufWriter::new(file);
            write_detections(&mut w, &per_frame)
                .map_err(|e| Error::io(out.display().to_string(), e))?;
            w.flush().map_err(|e| Error::io(out.display().to_string(), e))?;
            let total: usize = per_frame.iter().map(Vec::len).sum();
            println!("{} detections over {} frames -> {}", total, per_frame.len(), out.display());
            Ok(())
        }
        Command::Localize { common, detections, out } => {
            let cfg = load_config(&common, None)?;
            let per_frame = read_detections(&detections)?;
            if per_frame.is_empty() {
                return Err(Error::NoNerve);
            }
            std::fs::create_dir_all(&out).map_err(|e| Error::io(out.display().to_string(), e))?;
            let result = run_tracker(&cfg, &per_frame, &out)?;
            match result {
                Some((frame_idx, bx, by, norm_f)) => {
                    let loc_path = out.join("localization.csv");
                    let line = format!(
                        "{},{},{},{},{},{:.6}\n",
                        frame_idx, bx, by, cfg.patch_size, cfg.patch_size, norm_f
                    );
                    std::fs::write(&loc_path, line)
                        .map_err(|e| Error::io(loc_path.display().to_string(), e))?;
                    println!(
                        "nerve localized at ({bx}, {by}) on frame {frame_idx} -> {}",
                        loc_path.display()
                    );
                    Ok(())
                }
                None => Err(Error::NoNerve),
            }
        }
        Command::Segment { common, frames, localization, model, out } => {
            let cfg = load_config(&common, None)?;
            let frame_list = load_frames(&frames)?;
            let frame = frame_list.last().expect("load_frames is non-empty");
            let boxes = read_detections(&localization)?;
            let loc = boxes
                .iter()
                .flatten()
                .next()
                .ok_or_else(|| Error::InvalidInput("localization file has no box".into()))?;
            if loc.x < 0
                || loc.y < 0
                || (loc.x as usize + loc.w as usize) > frame.width
                || (loc.y as usize + loc.h as usize) > frame.height
            {
                return Err(Error::InvalidInput(format!(
                    "localization box ({}, {}, {}, {}) not inside the {}×{} final frame",
                    loc.x, loc.y, loc.w, loc.h, frame.width, frame.height
                )));
            }
            let prob_map = match (&model, cfg.prob_weight > 0.0) {
                (Some(path), true) => Some(probability_map(&cfg, &Network::load(path)?, frame)?),
                _ => None,
            };
            std::fs::create_dir_all(&out).map_err(|e| Error::io(out.display().to_string(), e))?;
            let (snake, iters) = segment_frame(&cfg, frame, loc, prob_map.as_ref())?;
            let mask = snake_to_mask(&snake, frame.width, frame.height);
            nervescan::pgm::write_pgm(&out.join("mask.pgm"), mask.width, mask.height, &mask.to_bytes())?;
            let contour_path = out.join("contour.txt");
            let mut text = String::new();
            for (x, y) in &snake.points {
                text.push_str(&format!("{x:.3},{y:.3}\n"));
            }
            std::fs::write(&contour_path, text)
                .map_err(|e| Error::io(contour_path.display().to_string(), e))?;
            let overlay = overlay_contour(frame, &snake);
            nervescan::pgm::write_pgm(
                &out.join("overlay.pgm"),
                overlay.width,
                overlay.height,
                &overlay.pixels,
            )?;
            println!(
                "segmented final frame in {iters} iterations: {} px nerve area -> {}",
                mask.count(),
                out.display()
            );
            Ok(())
        }
        Command::Eval { common, pred, gt, out } => {
            let cfg = load_config(&common, None)?;
            std::fs::create_dir_all(&out).map_err(|e| Error::io(out.display().to_string(), e))?;
            let mut wrote_any = false;

            let loc_file = pred.join("localizations.csv");
            if loc_file.exists() {
                let records = read_ground_truth(&gt.join("gt.txt"))?;
                let per_frame = read_detections(&loc_file)?;
                if per_frame.len() > records.len() {
                    return Err(Error::InvalidInput(format!(
                        "{} predicted frames but only {} ground-truth frames",
                        per_frame.len(),
                        records.len()
                    )));
                }
                let mut preds: Vec<Option<RoiBox>> = vec![None; records.len()];
                for (i, boxes) in per_frame.iter().enumerate() {
                    if boxes.len() > 1 {
                        return Err(Error::InvalidInput(format!(
                            "frame {i} has {} localizations, expected at most one",
                            boxes.len()
                        )));
                    }
                    preds[i] = boxes.first().copied();
                }
                let gt_boxes: Vec<RoiBox> = records.iter().map(|r| r.gt_box()).collect();
                let report = localization_metrics(&preds, &gt_boxes, cfg.overlap_threshold)?;
                let path = out.join("localization_report.txt");
                let mut buf = Vec::new();
                write_localization_report(&mut buf, &report)
                    .map_err(|e| Error::io(path.display().to_string(), e))?;
                std::fs::write(&path, buf).map_err(|e| Error::io(path.display().to_string(), e))?;
                println!(
                    "localization: precision {:.4} recall {:.4} f-score {:.4}",
                    report.precision, report.recall, report.f_score
                );
                wrote_any = true;
            }

            let pairs = mask_pairs(&pred, &gt)?;
            if !pairs.is_empty() {
                let mut dices = Vec::new();
                let mut hausdorffs = Vec::new();
                for (pred_mask, gt_mask) in &pairs {
                    dices.push(dice(pred_mask, gt_mask)?);
                    hausdorffs.push(hausdorff(pred_mask, gt_mask)?);
                }
                let report = SegReport {
                    dice: dices.iter().sum::<f64>() / dices.len() as f64,
                    hausdorff: hausdorffs.iter().sum::<f64>() / hausdorffs.len() as f64,
                };
                let path = out.join("seg_report.txt");
                let mut buf = Vec::new();
                write_seg_report(&mut buf, &report)
                    .map_err(|e| Error::io(path.display().to_string(), e))?;
                std::fs::write(&path, buf).map_err(|e| Error::io(path.display().to_string(), e))?;
                println!(
                    "segmentation: dice {:.4} hausdorff {:.2} ({} mask pair{})",
                    report.dice,
                    report.hausdorff,
                    pairs.len(),
                    if pairs.len() == 1 { "" } else { "s" }
                );
                wrote_any = true;
            }

            if !wrote_any {
                return Err(Error::InvalidInput(format!(
                    "nothing to evaluate: no localizations.csv or mask files under {}",
                    pred.display()
                )));
            }
            Ok(())
        }
    }
}

/// Runs clustering + tracking over all frames, writing the track log and the
/// per-frame localization file. Returns the final-frame localization:
/// `(frame_index, box_x, box_y, normalized_score)`.
fn run_tracker(
    cfg: &RunConfig,
    per_frame: &[Vec<RoiBox>],
    out: &Path,
) -> Result<Option<(usize, i32, i32, f64)>, Error> {
    let tracker_cfg = cfg.tracker();
    let tracks_path = out.join("tracks.csv");
    let locs_path = out.join("localizations.csv");
    let mut track_log = Vec::new();
    let mut loc_log = Vec::new();
    let mut tracks: Vec<Track> = Vec::new();
    let mut max_cluster = 0usize;
    for (t, boxes) in per_frame.iter().enumerate() {
        let clusters = cluster_rois(boxes, &tracker_cfg, t);
        max_cluster = max_cluster.max(clusters.iter().map(|c| c.r).max().unwrap_or(0));
        tracks = update_tracks(tracks, &clusters, &tracker_cfg);
        write_track_log(&mut track_log, t, &tracks)
            .map_err(|e| Error::io(tracks_path.display().to_string(), e))?;
        if let Some((best, f)) = localize(&tracks) {
            let norm = f as f64 / (tracker_cfg.temporal_window * max_cluster.max(1)) as f64;
            loc_log.extend_from_slice(
                format!(
                    "{},{},{},{},{},{:.6}\n",
                    t,
                    best.position.0.round() as i32,
                    best.position.1.round() as i32,
                    cfg.patch_size,
                    cfg.patch_size,
                    norm
                )
                .as_bytes(),
            );
        }
    }
    std::fs::write(&tracks_path, track_log)
        .map_err(|e| Error::io(tracks_path.display().to_string(), e))?;
    std::fs::write(&locs_path, loc_log)
        .map_err(|e| Error::io(locs_path.display().to_string(), e))?;
    Ok(localize(&tracks).map(|(best, f)| {
        let norm = f as f64 / (tracker_cfg.temporal_window * max_cluster.max(1)) as f64;
        (
            per_frame.len() - 1,
            best.position.0.round() as i32,
            best.position.1.round() as i32,
            norm,
        )
    }))
}

/// Segments one frame from a localization box; `evolve_iters = 0` skips the
/// evolution and rasterizes the initial contour directly.
fn segment_frame(
    cfg: &RunConfig,
    frame: &nervescan::detector::Frame,
    loc: &RoiBox,
    prob_map: Option<&EdgeMap>,
) -> Result<(Snake, usize), Error> {
    let inflate = cfg.init_inflate;
    let (w, h) = (loc.w as f64 * (1.0 + inflate), loc.h as f64 * (1.0 + inflate));
    let cx = loc.x as f64 + loc.w as f64 / 2.0;
    let cy = loc.y as f64 + loc.h as f64 / 2.0;
    let init = Snake::from_box(cx - w / 2.0, cy - h / 2.0, w, h, cfg.init_vertices);
    if cfg.evolve_iters == 0 {
        return Ok((init, 0));
    }
    let weight = if prob_map.is_some() { cfg.prob_weight } else { 0.0 };
    let energy = edge_map(frame, cfg.edge_sigma, prob_map, weight)?;
    let params = cfg.snake();
    let (field, _residuals) = gvf_field(&energy, params.gvf_mu, params.gvf_iters)?;
    evolve_snake(&init, &field, &params)
}

/// Per-pixel nerve probability by max-splatting window scores over the frame.
fn probability_map(
    cfg: &RunConfig,
    net: &Network,
    frame: &nervescan::detector::Frame,
) -> Result<EdgeMap, Error> {
    let p = cfg.patch_size;
    if frame.width < p || frame.height < p {
        return Err(Error::InvalidInput("frame smaller than patch".into()));
    }
    let mut values = vec![0.0f64; frame.width * frame.height];
    for y in (0..=frame.height - p).step_by(cfg.stride) {
        for x in (0..=frame.width - p).step_by(cfg.stride) {
            let probs = net.infer(&frame.patch(x, y, p))?;
            let prob = probs[nervescan::nn::NERVE_CLASS];
            for yy in y..y + p {
                for xx in x..x + p {
                    let i = yy * frame.width + xx;
                    if prob > values[i] {
                        values[i] = prob;
                    }
                }
            }
        }
    }
    EdgeMap::new(frame.width, frame.height, values)
}

/// Pairs predicted masks with ground-truth masks: `mask_XXXXX.pgm` by index,
/// plus a bare `mask.pgm` matched against the highest ground-truth index.
fn mask_pairs(pred: &Path, gt: &Path) -> Result<Vec<(Mask, Mask)>, Error> {
    let mut gt_indices: Vec<usize> = Vec::new();
    for entry in std::fs::read_dir(gt).map_err(|e| Error::io(gt.display().to_string(), e))? {
        let entry = entry.map_err(|e| Error::io(gt.display().to_string(), e))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if let Some(idx) = name
            .strip_prefix("mask_")
            .and_then(|s| s.strip_suffix(".pgm"))
            .and_then(|s| s.parse::<usize>().ok())
        {
            gt_indices.push(idx);
        }
    }
    gt_indices.sort_unstable();

    let read_mask = |path: &Path| -> Result<Mask, Error> {
        let (w, h, pixels) = nervescan::pgm::read_pgm(path)?;
        Ok(Mask::from_bytes(w, h, &pixels))
    };

    let mut pairs = Vec::new();
    for entry in std::fs::read_dir(pred).map_err(|e| Error::io(pred.display().to_string(), e))? {
        let entry = entry.map_err(|e| Error::io(pred.display().to_string(), e))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        let gt_index = if name == "mask.pgm" {
            match gt_indices.last() {
                Some(&idx) => idx,
                None => {
                    return Err(Error::InvalidInput(format!(
                        "{} has mask.pgm but {} holds no mask_*.pgm",
                        pred.display(),
                        gt.display()
                    )))
                }
            }
        } else if let Some(idx) = name
            .strip_prefix("mask_")
            .and_then(|s| s.strip_suffix(".pgm"))
            .and_then(|s| s.parse::<usize>().ok())
        {
            if !gt_indices.contains(&idx) {
                return Err(Error::InvalidInput(format!(
                    "predicted mask {name} has no ground-truth counterpart"
                )));
            }
            idx
        } else {
            continue;
        };
        let pred_mask = read_mask(&entry.path())?;
        let gt_mask = read_mask(&gt.join(nervescan::phantom::mask_file_name(gt_index)))?;
        pairs.push((pred_mask, gt_mask));
    }
    pairs.sort_by_key(|(a, _)| (a.width, a.height, a.count()));
    Ok(pairs)
}
