//! Run configuration: a flat `key=value` text file covering every stage,
//! parsed then validated. Unknown keys are rejected with their line number;
//! every key has a documented default.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::consistency::TrackerConfig;
use crate::contour::SnakeParams;
use crate::detector::DetectorConfig;
use crate::error::{Error, Result};
use crate::nn::TrainConfig;
use crate::phantom::{NerveParams, PhantomConfig};

/// Every tunable of the pipeline with its default. Field names double as
/// config-file keys.
#[derive(Debug, Clone)]
pub struct RunConfig {
    // detector
    pub patch_size: usize,
    pub stride: usize,
    pub alpha: f64,
    pub num_classes: usize,
    // spatiotemporal filter
    pub overlap_threshold: f64,
    pub cluster_threshold: usize,
    pub temporal_window: usize,
    pub match_radius: f64,
    // training
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub dropout_rate: f64,
    pub neg_per_frame: usize,
    // contour
    pub snake_tension: f64,
    pub snake_rigidity: f64,
    pub snake_step: f64,
    pub field_weight: f64,
    pub gvf_mu: f64,
    pub gvf_iters: usize,
    pub evolve_iters: usize,
    pub resample_spacing: f64,
    pub converge_tol: f64,
    pub edge_sigma: f64,
    pub prob_weight: f64,
    pub init_inflate: f64,
    pub init_vertices: usize,
    // phantom
    pub width: usize,
    pub height: usize,
    pub num_frames: usize,
    pub nerve_cx: f64,
    pub nerve_cy: f64,
    pub nerve_a: f64,
    pub nerve_b: f64,
    pub nerve_interior: u8,
    pub nerve_rim: u8,
    pub rim_thickness: f64,
    pub jitter_sigma: f64,
    pub distractor_count: usize,
    pub distractor_intensity: u8,
    pub distractor_lifetime: usize,
    pub speckle_sigma: f64,
    // shared
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            patch_size: 64,
            stride: 8,
            alpha: 1.8,
            num_classes: 2,
            overlap_threshold: 0.5,
            cluster_threshold: 3,
            temporal_window: 10,
            match_radius: 32.0,
            learning_rate: 0.01,
            batch_size: 16,
            epochs: 50,
            dropout_rate: 0.5,
            neg_per_frame: 10,
            snake_tension: 0.1,
            snake_rigidity: 0.1,
            snake_step: 1.0,
            field_weight: 3.0,
            gvf_mu: 0.2,
            gvf_iters: 400,
            evolve_iters: 500,
            resample_spacing: 2.0,
            converge_tol: 0.05,
            edge_sigma: 2.0,
            prob_weight: 0.0,
            init_inflate: 0.2,
            init_vertices: 40,
            width: 600,
            height: 300,
            num_frames: 50,
            nerve_cx: 300.0,
            nerve_cy: 150.0,
            nerve_a: 30.0,
            nerve_b: 20.0,
            nerve_interior: 40,
            nerve_rim: 200,
            rim_thickness: 3.0,
            jitter_sigma: 1.0,
            distractor_count: 3,
            distractor_intensity: 200,
            distractor_lifetime: 2,
            speckle_sigma: 0.15,
            seed: 42,
        }
    }
}

macro_rules! apply_keys {
    ($self:ident, $key:expr, $value:expr, $line:expr, { $($name:ident),* $(,)? }) => {
        match $key {
            $(stringify!($name) => {
                $self.$name = parse_value($value, stringify!($name), $line)?;
                Ok(())
            })*
            _ => Err(Error::Config {
                line: $line,
                key: $key.to_string(),
                detail: "unknown key".into(),
            }),
        }
    };
}

impl RunConfig {
    /// Parses a config file over the defaults, then validates.
    pub fn from_file(path: &Path) -> Result<RunConfig> {
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let mut cfg = RunConfig::default();
        let lines = cfg.apply_text(&text)?;
        cfg.validate(&lines)?;
        Ok(cfg)
    }

    /// Applies `key=value` lines; returns the line number of each key seen
    /// so validation errors can cite them.
    pub fn apply_text(&mut self, text: &str) -> Result<HashMap<String, usize>> {
        let mut seen = HashMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Config {
                    line: line_no,
                    key: line.to_string(),
                    detail: "expected `key=value`".into(),
                });
            };
            let key = key.trim();
            let value = value.trim();
            self.apply(key, value, line_no)?;
            seen.insert(key.to_string(), line_no);
        }
        Ok(seen)
    }

    /// Sets one key from its textual value.
    pub fn apply(&mut self, key: &str, value: &str, line: usize) -> Result<()> {
        apply_keys!(self, key, value, line, {
            patch_size, stride, alpha, num_classes,
            overlap_threshold, cluster_threshold, temporal_window, match_radius,
            learning_rate, batch_size, epochs, dropout_rate, neg_per_frame,
            snake_tension, snake_rigidity, snake_step, field_weight,
            gvf_mu, gvf_iters, evolve_iters, resample_spacing, converge_tol,
            edge_sigma, prob_weight, init_inflate, init_vertices,
            width, height, num_frames,
            nerve_cx, nerve_cy, nerve_a, nerve_b,
            nerve_interior, nerve_rim, rim_thickness,
            jitter_sigma, distractor_count, distractor_intensity, distractor_lifetime,
            speckle_sigma, seed,
        })
    }

    /// Cross-field validation; `lines` maps keys to the line that set them
    /// so messages can point at the offending line.
    pub fn validate(&self, lines: &HashMap<String, usize>) -> Result<()> {
        let at = |key: &str| lines.get(key).copied().unwrap_or(0);
        let fail = |key: &str, detail: &str| -> Result<()> {
            Err(Error::Config { line: at(key), key: key.to_string(), detail: detail.into() })
        };
        if let Err(e) = self.detector().validate() {
            return fail("stride", &e.to_string());
        }
        if let Err(e) = self.tracker().validate() {
            return fail("overlap_threshold", &e.to_string());
        }
        if let Err(e) = self.train().validate() {
            return fail("learning_rate", &e.to_string());
        }
        if let Err(e) = self.snake().validate() {
            return fail("snake_step", &e.to_string());
        }
        if let Err(e) = self.phantom().validate() {
            return fail("width", &e.to_string());
        }
        if !(0.0..=1.0).contains(&self.prob_weight) {
            return fail("prob_weight", "must be in [0, 1]");
        }
        if self.init_vertices < 8 {
            return fail("init_vertices", "must be at least 8");
        }
        if self.init_inflate < 0.0 {
            return fail("init_inflate", "must be ≥ 0");
        }
        Ok(())
    }

    pub fn detector(&self) -> DetectorConfig {
        DetectorConfig {
            patch_size: self.patch_size,
            stride: self.stride,
            alpha: self.alpha,
            num_classes: self.num_classes,
        }
    }

    pub fn tracker(&self) -> TrackerConfig {
        TrackerConfig {
            overlap_threshold: self.overlap_threshold,
            cluster_threshold: self.cluster_threshold,
            temporal_window: self.temporal_window,
            match_radius: self.match_radius,
        }
    }

    pub fn train(&self) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            epochs: self.epochs,
            dropout_rate: self.dropout_rate,
            rng_seed: self.seed,
        }
    }

    pub fn snake(&self) -> SnakeParams {
        SnakeParams {
            tension: self.snake_tension,
            rigidity: self.snake_rigidity,
            step: self.snake_step,
            field_weight: self.field_weight,
            gvf_mu: self.gvf_mu,
            gvf_iters: self.gvf_iters,
            evolve_iters: self.evolve_iters,
            resample_spacing: self.resample_spacing,
            converge_tol: self.converge_tol,
        }
    }

    pub fn phantom(&self) -> PhantomConfig {
        PhantomConfig {
            width: self.width,
            height: self.height,
            num_frames: self.num_frames,
            nerve: NerveParams {
                cx: self.nerve_cx,
                cy: self.nerve_cy,
                a: self.nerve_a,
                b: self.nerve_b,
                interior: self.nerve_interior,
                rim: self.nerve_rim,
                rim_thickness: self.rim_thickness,
            },
            jitter_sigma: self.jitter_sigma,
            distractor_count: self.distractor_count,
            distractor_intensity: self.distractor_intensity,
            distractor_lifetime: self.distractor_lifetime,
            speckle_sigma: self.speckle_sigma,
            rng_seed: self.seed,
        }
    }

    /// Renders the full key set with current values, one `key=value` per
    /// line; parsing this text back reproduces the config.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| writeln!(s, "{k}={v}").expect("write config line");
        kv("patch_size", self.patch_size.to_string());
        kv("stride", self.stride.to_string());
        kv("alpha", self.alpha.to_string());
        kv("num_classes", self.num_classes.to_string());
        kv("overlap_threshold", self.overlap_threshold.to_string());
        kv("cluster_threshold", self.cluster_threshold.to_string());
        kv("temporal_window", self.temporal_window.to_string());
        kv("match_radius", self.match_radius.to_string());
        kv("learning_rate", self.learning_rate.to_string());
        kv("batch_size", self.batch_size.to_string());
        kv("epochs", self.epochs.to_string());
        kv("dropout_rate", self.dropout_rate.to_string());
        kv("neg_per_frame", self.neg_per_frame.to_string());
        kv("snake_tension", self.snake_tension.to_string());
        kv("snake_rigidity", self.snake_rigidity.to_string());
        kv("snake_step", self.snake_step.to_string());
        kv("field_weight", self.field_weight.to_string());
        kv("gvf_mu", self.gvf_mu.to_string());
        kv("gvf_iters", self.gvf_iters.to_string());
        kv("evolve_iters", self.evolve_iters.to_string());
        kv("resample_spacing", self.resample_spacing.to_string());
        kv("converge_tol", self.converge_tol.to_string());
        kv("edge_sigma", self.edge_sigma.to_string());
        kv("prob_weight", self.prob_weight.to_string());
        kv("init_inflate", self.init_inflate.to_string());
        kv("init_vertices", self.init_vertices.to_string());
        kv("width", self.width.to_string());
        kv("height", self.height.to_string());
        kv("num_frames", self.num_frames.to_string());
        kv("nerve_cx", self.nerve_cx.to_string());
        kv("nerve_cy", self.nerve_cy.to_string());
        kv("nerve_a", self.nerve_a.to_string());
        kv("nerve_b", self.nerve_b.to_string());
        kv("nerve_interior", self.nerve_interior.to_string());
        kv("nerve_rim", self.nerve_rim.to_string());
        kv("rim_thickness", self.rim_thickness.to_string());
        kv("jitter_sigma", self.jitter_sigma.to_string());
        kv("distractor_count", self.distractor_count.to_string());
        kv("distractor_intensity", self.distractor_intensity.to_string());
        kv("distractor_lifetime", self.distractor_lifetime.to_string());
        kv("speckle_sigma", self.speckle_sigma.to_string());
        kv("seed", self.seed.to_string());
        s
    }
}

trait FromConfigValue: Sized {
    fn parse_config(v: &str) -> Option<Self>;
}

macro_rules! impl_from_config {
    ($($t:ty),*) => {
        $(impl FromConfigValue for $t {
            fn parse_config(v: &str) -> Option<Self> {
                v.parse().ok()
            }
        })*
    };
}

impl_from_config!(usize, u64, u8, f64);

fn parse_value<T: FromConfigValue>(value: &str, key: &str, line: usize) -> Result<T> {
    T::parse_config(value).ok_or_else(|| Error::Config {
        line,
        key: key.to_string(),
        detail: format!("cannot parse value `{value}`"),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_text() {
        let cfg = RunConfig::default();
        let text = cfg.to_text();
        let mut parsed = RunConfig::default();
        parsed.apply_text(&text).unwrap();
        assert_eq!(parsed.stride, cfg.stride);
        assert_eq!(parsed.alpha, cfg.alpha);
        assert_eq!(parsed.seed, cfg.seed);
        assert_eq!(parsed.to_text(), text);
    }

    #[test]
    fn unknown_key_reports_line() {
        let mut cfg = RunConfig::default();
        let err = cfg.apply_text("stride=8\nbogus_key=3\n").unwrap_err();
        match err {
            Error::Config { line, key, .. } => {
                assert_eq!(line, 2);
                assert_eq!(key, "bogus_key");
            }
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn bad_value_reports_key_and_line() {
        let mut cfg = RunConfig::default();
        let err = cfg.apply_text("\n\nstride=fast\n").unwrap_err();
        match err {
            Error::Config { line, key, .. } => {
                assert_eq!(line, 3);
                assert_eq!(key, "stride");
            }
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn comments_and_blank_lines_ignored() {
        let mut cfg = RunConfig::default();
        cfg.apply_text("# a comment\n\n  stride = 16 \n").unwrap();
        assert_eq!(cfg.stride, 16);
    }

    #[test]
    fn validation_catches_cross_field_violations() {
        let mut cfg = RunConfig::default();
        let lines = cfg.apply_text("stride=100\n").unwrap();
        // stride > patch_size
        let err = cfg.validate(&lines).unwrap_err();
        match err {
            Error::Config { line, .. } => assert_eq!(line, 1),
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn zero_frames_rejected() {
        let mut cfg = RunConfig::default();
        let lines = cfg.apply_text("num_frames=0\n").unwrap();
        assert!(cfg.validate(&lines).is_err());
    }

    #[test]
    fn file_parse_and_validate() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.cfg");
        std::fs::write(&path, "seed=7\nstride=16\n").unwrap();
        let cfg = RunConfig::from_file(&path).unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.stride, 16);
        assert_eq!(cfg.alpha, 1.8);
    }
}
