//! Spatial overlap clustering within a frame and temporal consistency
//! scoring across frames; together they turn raw window hits into a single
//! robust localization.

use std::collections::VecDeque;
use std::io::Write;

use crate::detector::RoiBox;
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct TrackerConfig {
    /// Minimum pairwise overlap ratio for two boxes to be grouped.
    pub overlap_threshold: f64,
    /// A cluster survives only when it holds strictly more boxes than this.
    pub cluster_threshold: usize,
    /// Number of most recent frames whose cluster sizes a track accumulates.
    pub temporal_window: usize,
    /// Maximum centroid distance (px) for associating a cluster to a track.
    pub match_radius: f64,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        TrackerConfig {
            overlap_threshold: 0.5,
            cluster_threshold: 3,
            temporal_window: 10,
            match_radius: 32.0,
        }
    }
}

impl TrackerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.overlap_threshold > 0.0 && self.overlap_threshold <= 1.0) {
            return Err(Error::InvalidInput("overlap_threshold must be in (0, 1]".into()));
        }
        if self.cluster_threshold == 0 {
            return Err(Error::InvalidInput("cluster_threshold must be ≥ 1".into()));
        }
        if self.temporal_window == 0 {
            return Err(Error::InvalidInput("temporal_window must be ≥ 1".into()));
        }
        if !(self.match_radius > 0.0) {
            return Err(Error::InvalidInput("match_radius must be positive".into()));
        }
        Ok(())
    }
}

/// Intersection area divided by the smaller box's area. Symmetric; for
/// equal-size boxes this is intersection over the common area.
pub fn overlap_ratio(a: &RoiBox, b: &RoiBox) -> f64 {
    let ix = intersection_1d(a.x, a.w, b.x, b.w);
    let iy = intersection_1d(a.y, a.h, b.y, b.h);
    let inter = ix * iy;
    if inter <= 0.0 {
        return 0.0;
    }
    inter / a.area().min(b.area())
}

fn intersection_1d(a0: i32, aw: u32, b0: i32, bw: u32) -> f64 {
    let lo = a0.max(b0);
    let hi = (a0 + aw as i32).min(b0 + bw as i32);
    ((hi - lo).max(0)) as f64
}

/// A connected group of mutually overlapping boxes in one frame.
#[derive(Debug, Clone)]
pub struct Cluster {
    pub members: Vec<RoiBox>,
    /// Member count.
    pub r: usize,
    /// Mean of member top-left corners.
    pub centroid: (f64, f64),
    pub frame_index: usize,
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> UnionFind {
        UnionFind { parent: (0..n).collect() }
    }

    fn find(&mut self, i: usize) -> usize {
        let mut root = i;
        while self.parent[root] != root {
            root = self.parent[root];
        }
        let mut i = i;
        while self.parent[i] != root {
            let next = self.parent[i];
            self.parent[i] = root;
            i = next;
        }
        root
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            // Keep the smaller index as root so component order is stable.
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi] = lo;
        }
    }
}

/// Groups boxes into connected components of the ≥`overlap_threshold`
/// pairwise-overlap relation and keeps components with strictly more than
/// `cluster_threshold` members. Output clusters are ordered by their first
/// member's position in the input.
pub fn cluster_rois(boxes: &[RoiBox], cfg: &TrackerConfig, frame_index: usize) -> Vec<Cluster> {
    let n = boxes.len();
    let mut uf = UnionFind::new(n);
    for i in 0..n {
        for j in (i + 1)..n {
            if overlap_ratio(&boxes[i], &boxes[j]) >= cfg.overlap_threshold {
                uf.union(i, j);
            }
        }
    }
    let mut groups: Vec<Vec<usize>> = vec![Vec::new(); n];
    for i in 0..n {
        let root = uf.find(i);
        groups[root].push(i);
    }
    groups
        .into_iter()
        .filter(|g| g.len() > cfg.cluster_threshold)
        .map(|g| {
            let members: Vec<RoiBox> = g.iter().map(|&i| boxes[i]).collect();
            let inv = 1.0 / members.len() as f64;
            let cx = members.iter().map(|b| b.x as f64).sum::<f64>() * inv;
            let cy = members.iter().map(|b| b.y as f64).sum::<f64>() * inv;
            Cluster { r: members.len(), members, centroid: (cx, cy), frame_index }
        })
        .collect()
}

/// A spatial position with its consistency score accumulated over the most
/// recent frames.
#[derive(Debug, Clone)]
pub struct Track {
    pub id: usize,
    /// Running mean of matched cluster centroids.
    pub position: (f64, f64),
    /// Per-frame cluster cardinalities, most recent last, length ≤ window.
    pub history: VecDeque<usize>,
    /// Consistency score: sum of `history`.
    pub f: usize,
    created: usize,
    centroid_sum: (f64, f64),
    matches: usize,
}

impl Track {
    fn new(id: usize, created: usize, cluster: &Cluster, window: usize) -> Track {
        let mut history = VecDeque::with_capacity(window + 1);
        history.push_back(cluster.r);
        Track {
            id,
            position: cluster.centroid,
            history,
            f: cluster.r,
            created,
            centroid_sum: cluster.centroid,
            matches: 1,
        }
    }

    fn absorb(&mut self, cluster: &Cluster, window: usize) {
        self.centroid_sum.0 += cluster.centroid.0;
        self.centroid_sum.1 += cluster.centroid.1;
        self.matches += 1;
        self.position =
            (self.centroid_sum.0 / self.matches as f64, self.centroid_sum.1 / self.matches as f64);
        self.push_observation(cluster.r, window);
    }

    fn push_observation(&mut self, r: usize, window: usize) {
        self.history.push_back(r);
        while self.history.len() > window {
            self.history.pop_front();
        }
        self.f = self.history.iter().sum();
    }

    /// Cluster size observed in the most recent frame.
    pub fn last_observation(&self) -> usize {
        self.history.back().copied().unwrap_or(0)
    }
}

/// Advances the track set by one frame of clusters. Each cluster associates
/// to the nearest free track within `match_radius` or spawns a new track;
/// unmatched tracks record a zero observation. Histories are truncated to
/// the window and scores recomputed.
pub fn update_tracks(
    mut tracks: Vec<Track>,
    clusters: &[Cluster],
    cfg: &TrackerConfig,
) -> Vec<Track> {
    let window = cfg.temporal_window;
    let mut matched = vec![false; tracks.len()];
    let mut next_id = tracks.iter().map(|t| t.id + 1).max().unwrap_or(0);
    let frame = clusters.first().map(|c| c.frame_index).unwrap_or(0);
    let mut spawned: Vec<Track> = Vec::new();
    for cluster in clusters {
        let best = tracks
            .iter()
            .enumerate()
            .filter(|(i, _)| !matched[*i])
            .map(|(i, t)| {
                let dx = t.position.0 - cluster.centroid.0;
                let dy = t.position.1 - cluster.centroid.1;
                (i, (dx * dx + dy * dy).sqrt())
            })
            .filter(|(_, d)| *d <= cfg.match_radius)
            .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap_or(std::cmp::Ordering::Equal));
        match best {
            Some((i, _)) => {
                matched[i] = true;
                tracks[i].absorb(cluster, window);
            }
            None => {
                spawned.push(Track::new(next_id, frame, cluster, window));
                next_id += 1;
            }
        }
    }
    for (i, track) in tracks.iter_mut().enumerate() {
        if !matched[i] {
            track.push_observation(0, window);
        }
    }
    tracks.extend(spawned);
    tracks
}

/// The track with the maximal consistency score; ties break toward the
/// earliest-created track. No localization when the set is empty or every
/// score is zero.
pub fn localize(tracks: &[Track]) -> Option<(&Track, usize)> {
    tracks
        .iter()
        .filter(|t| t.f > 0)
        .min_by(|a, b| b.f.cmp(&a.f).then(a.created.cmp(&b.created)))
        .map(|t| (t, t.f))
}

/// Writes one track-log line per live track for a frame:
/// `frame_index,track_id,x,y,cluster_size,f`.
pub fn write_track_log(
    w: &mut impl Write,
    frame_index: usize,
    tracks: &[Track],
) -> std::io::Result<()> {
    for t in tracks {
        writeln!(
            w,
            "{},{},{:.3},{:.3},{},{}",
            frame_index,
            t.id,
            t.position.0,
            t.position.1,
            t.last_observation(),
            t.f
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn boxat(x: i32, y: i32) -> RoiBox {
        RoiBox { x, y, w: 64, h: 64, prob: 0.95, class_id: 1 }
    }

    fn cluster_of(r: usize, cx: f64, cy: f64, frame: usize) -> Cluster {
        let members = (0..r).map(|_| boxat(cx as i32, cy as i32)).collect();
        Cluster { members, r, centroid: (cx, cy), frame_index: frame }
    }

    #[test]
    fn overlap_identical_is_one() {
        let a = boxat(10, 20);
        assert_eq!(overlap_ratio(&a, &a), 1.0);
    }

    #[test]
    fn overlap_disjoint_is_zero() {
        assert_eq!(overlap_ratio(&boxat(0, 0), &boxat(100, 100)), 0.0);
    }

    #[test]
    fn overlap_half_offset_is_half() {
        let a = boxat(0, 0);
        let b = boxat(32, 0);
        assert_eq!(overlap_ratio(&a, &b), 0.5);
        assert_eq!(overlap_ratio(&b, &a), 0.5);
    }

    #[test]
    fn four_coincident_boxes_form_one_cluster() {
        let boxes = vec![boxat(5, 5); 4];
        let out = cluster_rois(&boxes, &TrackerConfig::default(), 0);
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].r, 4);
        assert_eq!(out[0].centroid, (5.0, 5.0));
    }

    #[test]
    fn two_boxes_fail_threshold() {
        let boxes = vec![boxat(5, 5); 2];
        assert!(cluster_rois(&boxes, &TrackerConfig::default(), 0).is_empty());
    }

    #[test]
    fn chained_overlaps_form_one_component() {
        // x = 0, 8, 16, 24 chain together; x = 200 is isolated and dropped.
        let boxes: Vec<RoiBox> = [0, 8, 16, 24, 200].iter().map(|&x| boxat(x, 0)).collect();
        let out = cluster_rois(&boxes, &TrackerConfig::default(), 3);
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].r, 4);
        assert_eq!(out[0].frame_index, 3);
        assert!((out[0].centroid.0 - 12.0).abs() < 1e-12);
    }

    /// Brute-force oracle: pairwise overlap matrix, repeated neighbor
    /// expansion for components, then the size filter.
    fn cluster_oracle(boxes: &[RoiBox], cfg: &TrackerConfig) -> Vec<Vec<usize>> {
        let n = boxes.len();
        let mut adj = vec![vec![false; n]; n];
        for i in 0..n {
            for j in 0..n {
                adj[i][j] = i != j
                    && overlap_ratio(&boxes[i], &boxes[j]) >= cfg.overlap_threshold;
            }
        }
        let mut seen = vec![false; n];
        let mut components = Vec::new();
        for start in 0..n {
            if seen[start] {
                continue;
            }
            let mut comp = vec![start];
            seen[start] = true;
            let mut frontier = vec![start];
            while let Some(i) = frontier.pop() {
                for j in 0..n {
                    if adj[i][j] && !seen[j] {
                        seen[j] = true;
                        comp.push(j);
                        frontier.push(j);
                    }
                }
            }
            comp.sort_unstable();
            if comp.len() > cfg.cluster_threshold {
                components.push(comp);
            }
        }
        components
    }

    proptest! {
        #[test]
        fn clustering_matches_brute_force_oracle(
            coords in proptest::collection::vec((0i32..200, 0i32..120), 0..50),
            threshold in 1usize..4,
        ) {
            // Tag each box with its index through prob so members map back
            // to input positions unambiguously.
            let boxes: Vec<RoiBox> = coords
                .iter()
                .enumerate()
                .map(|(i, &(x, y))| RoiBox { prob: i as f64, ..boxat(x, y) })
                .collect();
            let cfg = TrackerConfig { cluster_threshold: threshold, ..TrackerConfig::default() };
            let got: Vec<Vec<usize>> = cluster_rois(&boxes, &cfg, 0)
                .iter()
                .map(|c| {
                    let mut idx: Vec<usize> =
                        c.members.iter().map(|m| m.prob as usize).collect();
                    idx.sort_unstable();
                    idx
                })
                .collect();
            let mut want = cluster_oracle(&boxes, &cfg);
            let mut got_sorted = got.clone();
            got_sorted.sort();
            want.sort();
            prop_assert_eq!(got_sorted, want);
        }

        #[test]
        fn overlap_is_symmetric_and_bounded(
            ax in -50i32..50, ay in -50i32..50, bx in -50i32..50, by in -50i32..50,
        ) {
            let a = boxat(ax, ay);
            let b = boxat(bx, by);
            let r1 = overlap_ratio(&a, &b);
            let r2 = overlap_ratio(&b, &a);
            prop_assert!((r1 - r2).abs() < 1e-12);
            prop_assert!((0.0..=1.0).contains(&r1));
            // Equal-size boxes: ratio 1 iff they coincide.
            prop_assert_eq!(r1 == 1.0, ax == bx && ay == by);
        }
    }

    #[test]
    fn raising_cluster_threshold_never_adds_clusters() {
        let boxes: Vec<RoiBox> =
            (0..12).map(|i| boxat((i % 4) * 8, (i / 4) * 8)).collect();
        let mut last = usize::MAX;
        for t in 1..8 {
            let cfg = TrackerConfig { cluster_threshold: t, ..TrackerConfig::default() };
            let n = cluster_rois(&boxes, &cfg, 0).len();
            assert!(n <= last);
            last = n;
        }
    }

    #[test]
    fn first_cluster_initializes_track() {
        let cfg = TrackerConfig::default();
        let tracks = update_tracks(Vec::new(), &[cluster_of(4, 50.0, 60.0, 0)], &cfg);
        assert_eq!(tracks.len(), 1);
        assert_eq!(tracks[0].f, 4);
        assert_eq!(tracks[0].position, (50.0, 60.0));
    }

    #[test]
    fn matched_track_accumulates_score() {
        let cfg = TrackerConfig { temporal_window: 3, ..TrackerConfig::default() };
        let mut tracks = Vec::new();
        for (frame, r) in [(0, 4), (1, 5)] {
            tracks = update_tracks(tracks, &[cluster_of(r, 100.0, 80.0, frame)], &cfg);
        }
        assert_eq!(tracks[0].history, [4, 5]);
        tracks = update_tracks(tracks, &[cluster_of(6, 101.0, 80.0, 2)], &cfg);
        assert_eq!(tracks.len(), 1);
        assert_eq!(tracks[0].f, 15);
    }

    #[test]
    fn window_slides_oldest_observation_out() {
        let cfg = TrackerConfig { temporal_window: 3, ..TrackerConfig::default() };
        let mut tracks = Vec::new();
        for (frame, r) in [(0, 4), (1, 5), (2, 6)] {
            tracks = update_tracks(tracks, &[cluster_of(r, 10.0, 10.0, frame)], &cfg);
        }
        assert_eq!(tracks[0].f, 15);
        tracks = update_tracks(tracks, &[cluster_of(2, 10.0, 10.0, 3)], &cfg);
        assert_eq!(tracks[0].history, [5, 6, 2]);
        assert_eq!(tracks[0].f, 13);
    }

    #[test]
    fn unmatched_track_records_zero() {
        let cfg = TrackerConfig { temporal_window: 5, ..TrackerConfig::default() };
        let mut tracks = update_tracks(Vec::new(), &[cluster_of(4, 10.0, 10.0, 0)], &cfg);
        tracks = update_tracks(tracks, &[], &cfg);
        assert_eq!(tracks[0].history, [4, 0]);
        assert_eq!(tracks[0].f, 4);
    }

    #[test]
    fn distant_cluster_spawns_new_track() {
        let cfg = TrackerConfig::default();
        let mut tracks = update_tracks(Vec::new(), &[cluster_of(4, 10.0, 10.0, 0)], &cfg);
        tracks = update_tracks(tracks, &[cluster_of(5, 300.0, 200.0, 1)], &cfg);
        assert_eq!(tracks.len(), 2);
    }

    #[test]
    fn position_is_running_mean_of_matched_centroids() {
        let cfg = TrackerConfig::default();
        let mut tracks = update_tracks(Vec::new(), &[cluster_of(4, 10.0, 20.0, 0)], &cfg);
        tracks = update_tracks(tracks, &[cluster_of(4, 14.0, 24.0, 1)], &cfg);
        assert_eq!(tracks[0].position, (12.0, 22.0));
    }

    #[test]
    fn localize_picks_max_score() {
        let cfg = TrackerConfig::default();
        let mut tracks = update_tracks(
            Vec::new(),
            &[cluster_of(13, 10.0, 10.0, 0), cluster_of(7, 400.0, 10.0, 0)],
            &cfg,
        );
        tracks.sort_by_key(|t| t.id);
        let (best, f) = localize(&tracks).unwrap();
        assert_eq!(f, 13);
        assert_eq!(best.position, (10.0, 10.0));
    }

    #[test]
    fn localize_empty_or_zero_scores_is_none() {
        assert!(localize(&[]).is_none());
        let cfg = TrackerConfig { temporal_window: 1, ..TrackerConfig::default() };
        let mut tracks = update_tracks(Vec::new(), &[cluster_of(4, 0.0, 0.0, 0)], &cfg);
        tracks = update_tracks(tracks, &[], &cfg);
        assert_eq!(tracks[0].f, 0);
        assert!(localize(&tracks).is_none());
    }

    #[test]
    fn localize_tie_breaks_to_earliest_created() {
        let cfg = TrackerConfig::default();
        // Two tracks created in different frames, equal scores.
        let mut tracks = update_tracks(Vec::new(), &[cluster_of(9, 10.0, 10.0, 0)], &cfg);
        tracks = update_tracks(tracks, &[cluster_of(9, 400.0, 150.0, 1)], &cfg);
        // First track now has history [9, 0], second [9].
        assert_eq!(tracks[0].f, 9);
        assert_eq!(tracks[1].f, 9);
        let (best, _) = localize(&tracks).unwrap();
        assert_eq!(best.id, tracks[0].id);
        // Permuting the input does not change the winner.
        let reversed: Vec<Track> = tracks.iter().rev().cloned().collect();
        let (best_r, _) = localize(&reversed).unwrap();
        assert_eq!(best_r.id, best.id);
    }

    proptest! {
        #[test]
        fn track_score_always_equals_history_sum(
            sizes in proptest::collection::vec(0usize..10, 1..30),
            window in 1usize..8,
        ) {
            let cfg = TrackerConfig { temporal_window: window, ..TrackerConfig::default() };
            let mut tracks = Vec::new();
            for (frame, &r) in sizes.iter().enumerate() {
                let clusters: Vec<Cluster> = if r > 0 {
                    vec![cluster_of(r, 50.0, 50.0, frame)]
                } else {
                    Vec::new()
                };
                tracks = update_tracks(tracks, &clusters, &cfg);
                for t in &tracks {
                    prop_assert_eq!(t.f, t.history.iter().sum::<usize>());
                    prop_assert!(t.history.len() <= window);
                }
            }
        }
    }
}
