//! Multi-object tracking over fused world detections.
//!
//! A SORT-style tracker: constant-velocity Kalman filters per object,
//! IoU-gated Hungarian association (optionally seeded with externally
//! predicted positions instead of the filter's own extrapolation),
//! two-hit confirmation, and deletion after three consecutive misses.

mod assign;
mod kalman;

pub use assign::{assign_by_iou, hungarian, iou, Assignment, PlaneBox};
pub use kalman::{transition_matrix, KalmanParams, KalmanState, Measurement, TrackError, FRAME_PERIOD_S};

use crate::detect::ObjectClass;
use crate::fuse::WorldDetection;
use crate::geo::WorldPoint;
use serde::{Deserialize, Serialize};
use std::collections::{HashMap, VecDeque};
use std::io::{BufRead, Write};

/// How many past positions each track retains for trajectory prediction.
pub const HISTORY_LEN: usize = 6;

/// Tracker tuning knobs.
#[derive(Debug, Clone)]
pub struct TrackerConfig {
    /// Pairs below this IoU cannot be associated.
    pub iou_min: f64,
    /// Consecutive misses at which a confirmed track is deleted.
    pub max_misses: u32,
    /// Consecutive hits required before a track is emitted.
    pub confirm_hits: u32,
    pub kalman: KalmanParams,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        TrackerConfig {
            iou_min: 0.1,
            max_misses: 3,
            confirm_hits: 2,
            kalman: KalmanParams::default(),
        }
    }
}

/// One confirmed track observation, in plane coordinates. Velocities are
/// meters per second (converted from the filter's per-frame state).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackRecord {
    pub ts: u64,
    pub id: u64,
    pub class: ObjectClass,
    pub east: f64,
    pub north: f64,
    pub v_east: f64,
    pub v_north: f64,
    pub s: f64,
    pub r: f64,
}

impl TrackRecord {
    /// Ground speed, m/s.
    pub fn speed(&self) -> f64 {
        self.v_east.hypot(self.v_north)
    }

    /// Heading of motion, radians counterclockwise from east.
    pub fn heading_rad(&self) -> f64 {
        self.v_north.atan2(self.v_east)
    }
}

/// Live state of one track.
#[derive(Debug, Clone)]
struct Track {
    id: u64,
    kf: KalmanState,
    class: ObjectClass,
    misses: u32,
    hits: u32,
    confirmed: bool,
    /// Records held back until the track confirms, then released
    /// retroactively so confirmed objects have no leading gap.
    pending: Vec<TrackRecord>,
    history: VecDeque<(f64, f64)>,
}

impl Track {
    fn record(&self, ts: u64) -> TrackRecord {
        let x = &self.kf.x;
        TrackRecord {
            ts,
            id: self.id,
            class: self.class,
            east: x[0],
            north: x[1],
            v_east: x[4] / FRAME_PERIOD_S,
            v_north: x[5] / FRAME_PERIOD_S,
            s: x[2],
            r: x[3],
        }
    }

    fn push_history(&mut self) {
        if self.history.len() == HISTORY_LEN {
            self.history.pop_front();
        }
        self.history.push_back((self.kf.x[0], self.kf.x[1]));
    }
}

/// Read-only view of a confirmed track, published after each step.
#[derive(Debug, Clone)]
pub struct TrackSnapshot {
    pub id: u64,
    pub class: ObjectClass,
    /// Oldest-first recent positions, up to [`HISTORY_LEN`].
    pub history: Vec<(f64, f64)>,
}

/// Scene tracker. Owns all per-scene mutable state; drive it with one
/// `step` per fused frame in timestamp order.
#[derive(Debug)]
pub struct Tracker {
    config: TrackerConfig,
    origin: WorldPoint,
    tracks: Vec<Track>,
    next_id: u64,
}

impl Tracker {
    pub fn new(origin: WorldPoint, config: TrackerConfig) -> Self {
        Tracker { config, origin, tracks: Vec::new(), next_id: 1 }
    }

    pub fn origin(&self) -> &WorldPoint {
        &self.origin
    }

    /// Advances one frame: predicts all tracks, associates `detections`
    /// (which must share one timestamp), updates matched filters, ages and
    /// deletes missed tracks, and spawns tentative tracks for the rest.
    ///
    /// `predicted` optionally supplies externally forecast positions per
    /// track id; when present for a track, its association box uses that
    /// center while keeping the filter's scale and aspect.
    ///
    /// Returns the confirmed observations for this frame, preceded by any
    /// retroactively released records of tracks that confirmed just now
    /// (those carry their original timestamps).
    pub fn step(
        &mut self,
        ts: u64,
        detections: &[WorldDetection],
        predicted: Option<&HashMap<u64, (f64, f64)>>,
    ) -> Vec<TrackRecord> {
        for t in &mut self.tracks {
            t.kf
                .predict(&self.config.kalman)
                .expect("process noise keeps the covariance positive definite");
        }

        let track_boxes: Vec<PlaneBox> = self
            .tracks
            .iter()
            .map(|t| {
                let (mut east, mut north) = (t.kf.x[0], t.kf.x[1]);
                if let Some((pe, pn)) = predicted.and_then(|m| m.get(&t.id)) {
                    east = *pe;
                    north = *pn;
                }
                PlaneBox { east, north, s: t.kf.x[2].max(1e-6), r: t.kf.x[3].max(1e-6) }
            })
            .collect();
        let det_boxes: Vec<PlaneBox> = detections
            .iter()
            .map(|d| {
                let (east, north) = d.plane(&self.origin);
                PlaneBox { east, north, s: d.s, r: d.r }
            })
            .collect();

        let assignment = assign_by_iou(&track_boxes, &det_boxes, self.config.iou_min);

        let mut out = Vec::new();
        for &(ti, di) in &assignment.matches {
            let track = &mut self.tracks[ti];
            let d = &det_boxes[di];
            let z = Measurement::new(d.east, d.north, d.s, d.r);
            track
                .kf
                .update(&z, &self.config.kalman)
                .expect("measurement covariance is positive definite by construction");
            track.misses = 0;
            track.hits += 1;
            track.class = detections[di].class;
            track.push_history();
            let rec = track.record(ts);
            if track.confirmed {
                out.push(rec);
            } else if track.hits >= self.config.confirm_hits {
                track.confirmed = true;
                out.append(&mut track.pending);
                out.push(rec);
            } else {
                track.pending.push(rec);
            }
        }

        let mut dead = Vec::new();
        for (ti, track) in self.tracks.iter_mut().enumerate() {
            if assignment.matches.iter().any(|&(t, _)| t == ti) {
                continue;
            }
            track.misses += 1;
            track.push_history();
            // Tentative tracks need consecutive hits; any miss kills them.
            if !track.confirmed || track.misses >= self.config.max_misses {
                dead.push(ti);
            }
        }
        for ti in dead.into_iter().rev() {
            self.tracks.swap_remove(ti);
        }

        for &di in &assignment.unmatched_detections {
            let d = &det_boxes[di];
            let z = Measurement::new(d.east, d.north, d.s, d.r);
            let mut track = Track {
                id: self.next_id,
                kf: KalmanState::new(&z, &self.config.kalman),
                class: detections[di].class,
                misses: 0,
                hits: 1,
                confirmed: self.config.confirm_hits <= 1,
                pending: Vec::new(),
                history: VecDeque::new(),
            };
            self.next_id += 1;
            track.push_history();
            let rec = track.record(ts);
            if track.confirmed {
                out.push(rec);
            } else {
                track.pending.push(rec);
            }
            self.tracks.push(track);
        }

        out.sort_by_key(|r| (r.ts, r.id));
        out
    }

    /// Immutable snapshots of all confirmed tracks.
    pub fn confirmed(&self) -> Vec<TrackSnapshot> {
        self.tracks
            .iter()
            .filter(|t| t.confirmed)
            .map(|t| TrackSnapshot {
                id: t.id,
                class: t.class,
                history: t.history.iter().copied().collect(),
            })
            .collect()
    }

    /// Number of live (confirmed or tentative) tracks.
    pub fn live_count(&self) -> usize {
        self.tracks.len()
    }
}

/// NDJSON line layout for a track record.
#[derive(Debug, Serialize, Deserialize)]
struct TrackLine {
    ts: u64,
    id: u64,
    cls: ObjectClass,
    lat: f64,
    lon: f64,
    v_e: f64,
    v_n: f64,
    s: f64,
    r: f64,
}

/// Writes track records as NDJSON, converting plane positions to absolute
/// coordinates about `origin`.
pub fn write_track_log(
    records: &[TrackRecord],
    origin: &WorldPoint,
    mut w: impl Write,
) -> std::io::Result<()> {
    for rec in records {
        let pos = WorldPoint::from_plane(rec.east, rec.north, origin);
        let line = TrackLine {
            ts: rec.ts,
            id: rec.id,
            cls: rec.class,
            lat: pos.lat_deg,
            lon: pos.lon_deg,
            v_e: rec.v_east,
            v_n: rec.v_north,
            s: rec.s,
            r: rec.r,
        };
        serde_json::to_writer(&mut w, &line).map_err(std::io::Error::other)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// Reads a track NDJSON log back into plane-coordinate records.
pub fn read_track_log(reader: impl BufRead, origin: &WorldPoint) -> std::io::Result<Vec<TrackRecord>> {
    let mut out = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: TrackLine = serde_json::from_str(&line).map_err(std::io::Error::other)?;
        let (east, north) = WorldPoint::new(parsed.lat, parsed.lon).to_plane(origin);
        out.push(TrackRecord {
            ts: parsed.ts,
            id: parsed.id,
            class: parsed.cls,
            east,
            north,
            v_east: parsed.v_e,
            v_north: parsed.v_n,
            s: parsed.s,
            r: parsed.r,
        });
    }
    Ok(out)
}
