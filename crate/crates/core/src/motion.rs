//! Conflict-object localization and kinematics in image space.
//!
//! Objects are found by density clustering the pixels of conflict classes,
//! cluster centers are chained across frames by nearest-neighbour
//! association, and finite differences of the center track give velocity,
//! acceleration and time to collision. Coordinates are pixels with x to the
//! right and y downward from the top-left corner.

use std::collections::{HashMap, VecDeque};
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labelmap::{ClassId, LabelMap};

/// Time to collision at or below which a conflict counts as severe, seconds.
pub const SEVERE_TTC: f64 = 1.0;

/// Smallest distance, in pixels, used when an object center reaches the ego
/// reference row.
pub const MIN_TTC_DISTANCE: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PixelPoint {
    pub x: f64,
    pub y: f64,
}

impl PixelPoint {
    pub fn new(x: f64, y: f64) -> Self {
        PixelPoint { x, y }
    }

    pub fn distance(&self, other: &PixelPoint) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DbscanParams {
    pub eps: f64,
    pub min_pts: usize,
}

impl DbscanParams {
    /// `eps` at 2% of the frame diagonal, `min_pts` 8.
    pub fn for_frame(width: usize, height: usize) -> Self {
        DbscanParams {
            eps: 0.02 * (width as f64).hypot(height as f64),
            min_pts: 8,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eps > 0.0) || !self.eps.is_finite() {
            return Err(Error::invalid(format!("eps must be positive, got {}", self.eps)));
        }
        if self.min_pts == 0 {
            return Err(Error::invalid("min_pts must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cluster {
    /// Indices into the clustered point slice, ascending.
    pub members: Vec<usize>,
    pub center: PixelPoint,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Clustering {
    /// Clusters in order of their first core point.
    pub clusters: Vec<Cluster>,
    pub noise: Vec<usize>,
}

impl Clustering {
    /// Cluster index per point, `None` for noise.
    pub fn assignments(&self, n: usize) -> Vec<Option<usize>> {
        let mut out = vec![None; n];
        for (c, cluster) in self.clusters.iter().enumerate() {
            for &m in &cluster.members {
                out[m] = Some(c);
            }
        }
        out
    }
}

struct Grid<'a> {
    points: &'a [PixelPoint],
    eps: f64,
    cells: HashMap<(i64, i64), Vec<usize>>,
}

impl<'a> Grid<'a> {
    fn new(points: &'a [PixelPoint], eps: f64) -> Self {
        let mut cells: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
        for (i, p) in points.iter().enumerate() {
            cells.entry(Self::key(p, eps)).or_default().push(i);
        }
        Grid { points, eps, cells }
    }

    fn key(p: &PixelPoint, eps: f64) -> (i64, i64) {
        ((p.x / eps).floor() as i64, (p.y / eps).floor() as i64)
    }

    /// Indices within `eps` of point `i` (itself included), ascending.
    fn neighbors(&self, i: usize) -> Vec<usize> {
        let p = &self.points[i];
        let (cx, cy) = Self::key(p, self.eps);
        let eps2 = self.eps * self.eps;
        let mut out = Vec::new();
        for dx in -1..=1 {
            for dy in -1..=1 {
                if let Some(bucket) = self.cells.get(&(cx + dx, cy + dy)) {
                    out.extend(bucket.iter().copied().filter(|&j| {
                        let q = &self.points[j];
                        (p.x - q.x).powi(2) + (p.y - q.y).powi(2) <= eps2
                    }));
                }
            }
        }
        out.sort_unstable();
        out
    }
}

/// Density-based clustering with the Euclidean metric. A point is core when
/// at least `min_pts` points (itself included) lie within `eps`. Points are
/// visited in input order and clusters expand breadth-first through
/// ascending neighbour lists, so the result is deterministic.
pub fn dbscan(points: &[PixelPoint], params: &DbscanParams) -> Result<Clustering> {
    params.validate()?;
    const UNVISITED: usize = usize::MAX;
    const NOISE: usize = usize::MAX - 1;
    let grid = Grid::new(points, params.eps);
    let mut label = vec![UNVISITED; points.len()];
    let mut n_clusters = 0;
    for i in 0..points.len() {
        if label[i] != UNVISITED {
            continue;
        }
        let seeds = grid.neighbors(i);
        if seeds.len() < params.min_pts {
            label[i] = NOISE;
            continue;
        }
        let c = n_clusters;
        n_clusters += 1;
        label[i] = c;
        let mut queue: VecDeque<usize> = seeds.into_iter().filter(|&j| j != i).collect();
        while let Some(j) = queue.pop_front() {
            if label[j] == NOISE {
                label[j] = c;
                continue;
            }
            if label[j] != UNVISITED {
                continue;
            }
            label[j] = c;
            let nb = grid.neighbors(j);
            if nb.len() >= params.min_pts {
                queue.extend(nb.into_iter().filter(|&k| label[k] == UNVISITED || label[k] == NOISE));
            }
        }
    }

    let mut members = vec![Vec::new(); n_clusters];
    let mut noise = Vec::new();
    for (i, &l) in label.iter().enumerate() {
        if l == NOISE {
            noise.push(i);
        } else {
            members[l].push(i);
        }
    }
    let clusters = members
        .into_iter()
        .map(|m| {
            let n = m.len() as f64;
            let (sx, sy) = m.iter().fold((0.0, 0.0), |(sx, sy), &i| (sx + points[i].x, sy + points[i].y));
            Cluster {
                center: PixelPoint::new(sx / n, sy / n),
                members: m,
            }
        })
        .collect();
    Ok(Clustering { clusters, noise })
}

/// Coordinates of every pixel whose class is in `classes`, row-major.
pub fn conflict_points(map: &LabelMap, classes: &[ClassId]) -> Vec<PixelPoint> {
    let mut wanted = [false; 256];
    for &c in classes {
        wanted[c as usize] = true;
    }
    let w = map.width();
    map.cells()
        .iter()
        .enumerate()
        .filter(|(_, &c)| wanted[c as usize])
        .map(|(i, _)| PixelPoint::new((i % w) as f64, (i / w) as f64))
        .collect()
}

/// Cluster centers of the conflict-class pixels in one frame.
pub fn detect_centers(map: &LabelMap, classes: &[ClassId], params: &DbscanParams) -> Result<Vec<PixelPoint>> {
    let points = conflict_points(map, classes);
    Ok(dbscan(&points, params)?.clusters.into_iter().map(|c| c.center).collect())
}

/// Time-ordered object centers sampled once per frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub fps: f64,
    /// Frame index of `samples[0]`.
    pub start_frame: usize,
    /// `None` marks a frame with no observation.
    pub samples: Vec<Option<PixelPoint>>,
    /// Image row of the ego vehicle; distance to collision is measured from
    /// an object's center down to this row.
    pub ego_row: f64,
}

impl Trajectory {
    pub fn new(fps: f64, start_frame: usize, samples: Vec<Option<PixelPoint>>, ego_row: f64) -> Result<Self> {
        if !(fps > 0.0) || !fps.is_finite() {
            return Err(Error::invalid(format!("fps must be positive, got {fps}")));
        }
        Ok(Trajectory {
            fps,
            start_frame,
            samples,
            ego_row,
        })
    }

    pub fn end_frame(&self) -> usize {
        self.start_frame + self.samples.len()
    }

    pub fn at_frame(&self, frame: usize) -> Option<PixelPoint> {
        frame
            .checked_sub(self.start_frame)
            .and_then(|i| self.samples.get(i).copied().flatten())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrackParams {
    pub fps: f64,
    /// Largest center displacement, in pixels, accepted between frames.
    pub max_jump: f64,
    pub ego_row: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Track {
    pub id: usize,
    pub trajectory: Trajectory,
}

/// Greedy nearest-neighbour association of per-frame centers. In each frame,
/// the closest (track, center) pair within `max_jump` is linked first; ties
/// go to the older track and then the earlier center. A track with no match
/// ends, and an unmatched center starts a new track.
pub fn track(frames: &[Vec<PixelPoint>], params: &TrackParams) -> Result<Vec<Track>> {
    if !(params.fps > 0.0) {
        return Err(Error::invalid(format!("fps must be positive, got {}", params.fps)));
    }
    if !(params.max_jump >= 0.0) {
        return Err(Error::invalid("max_jump must be non-negative"));
    }
    let mut tracks: Vec<Track> = Vec::new();
    let mut active: Vec<usize> = Vec::new();
    for (frame, centers) in frames.iter().enumerate() {
        let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
        for (slot, &t) in active.iter().enumerate() {
            let last = tracks[t].trajectory.samples.last().copied().flatten().expect("active tracks end observed");
            for (c, center) in centers.iter().enumerate() {
                let d = last.distance(center);
                if d <= params.max_jump {
                    pairs.push((d, slot, c));
                }
            }
        }
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        let mut slot_used = vec![false; active.len()];
        let mut center_used = vec![false; centers.len()];
        let mut next_active = Vec::new();
        for (_, slot, c) in pairs {
            if slot_used[slot] || center_used[c] {
                continue;
            }
            slot_used[slot] = true;
            center_used[c] = true;
            tracks[active[slot]].trajectory.samples.push(Some(centers[c]));
            next_active.push(active[slot]);
        }
        for (c, center) in centers.iter().enumerate() {
            if !center_used[c] {
                let id = tracks.len();
                tracks.push(Track {
                    id,
                    trajectory: Trajectory::new(params.fps, frame, vec![Some(*center)], params.ego_row)?,
                });
                next_active.push(id);
            }
        }
        next_active.sort_unstable();
        active = next_active;
    }
    Ok(tracks)
}

/// Velocity and acceleration (pixels/s, pixels/s^2) and time to collision at
/// one trajectory sample. Missing derivatives are `None`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KinematicState {
    pub vx: Option<f64>,
    pub vy: Option<f64>,
    pub ax: Option<f64>,
    pub ay: Option<f64>,
    /// Seconds; `f64::INFINITY` when not approaching or velocity unknown.
    pub ttc: f64,
}

impl KinematicState {
    pub fn is_severe(&self) -> bool {
        is_severe(self.ttc)
    }
}

pub fn is_severe(ttc: f64) -> bool {
    ttc <= SEVERE_TTC
}

/// Remaining distance over closing speed; infinite when the object is
/// stationary or receding.
pub fn ttc(distance: f64, closing_speed: f64) -> Result<f64> {
    if !(distance >= 0.0) {
        return Err(Error::invalid(format!("distance must be non-negative, got {distance}")));
    }
    Ok(if closing_speed > 0.0 {
        distance / closing_speed
    } else {
        f64::INFINITY
    })
}

/// Backward-difference velocity `v[i] = fps (p[i] - p[i-1])` and central
/// second difference `a[i] = fps^2 (p[i+1] + p[i-1] - 2 p[i])`. Downward
/// image motion closes on the ego row, so TTC uses `vy` as closing speed.
pub fn kinematics(tr: &Trajectory) -> Result<Vec<KinematicState>> {
    if tr.samples.len() < 2 {
        return Err(Error::invalid(format!(
            "kinematics needs at least 2 samples, got {}",
            tr.samples.len()
        )));
    }
    let fps = tr.fps;
    let s = &tr.samples;
    (0..s.len())
        .map(|i| {
            let prev = i.checked_sub(1).and_then(|j| s[j]);
            let next = s.get(i + 1).copied().flatten();
            let (vx, vy) = match (prev, s[i]) {
                (Some(p), Some(c)) => (Some(fps * (c.x - p.x)), Some(fps * (c.y - p.y))),
                _ => (None, None),
            };
            let (ax, ay) = match (prev, s[i], next) {
                (Some(p), Some(c), Some(n)) => (
                    Some(fps * fps * (n.x + p.x - 2.0 * c.x)),
                    Some(fps * fps * (n.y + p.y - 2.0 * c.y)),
                ),
                _ => (None, None),
            };
            let ttc = match (s[i], vy) {
                (Some(c), Some(vy)) => ttc((tr.ego_row - c.y).max(MIN_TTC_DISTANCE), vy)?,
                _ => f64::INFINITY,
            };
            Ok(KinematicState { vx, vy, ax, ay, ttc })
        })
        .collect()
}

/// [`kinematics`], except that a single-sample trajectory yields one state
/// with no derivatives and infinite TTC.
pub fn track_states(tr: &Trajectory) -> Result<Vec<KinematicState>> {
    if tr.samples.len() < 2 {
        return Ok(vec![
            KinematicState {
                vx: None,
                vy: None,
                ax: None,
                ay: None,
                ttc: f64::INFINITY,
            };
            tr.samples.len()
        ]);
    }
    kinematics(tr)
}

fn opt(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

/// Writes `frame_index,track_id,x,y,v_x,v_y,a_x,a_y,ttc` rows, ordered by
/// frame then track. Undefined derivatives are empty and infinite TTC is
/// `inf`.
pub fn write_trajectory_csv<W: Write>(tracks: &[(Track, Vec<KinematicState>)], out: W) -> Result<()> {
    let mut rows: Vec<(usize, usize, PixelPoint, KinematicState)> = Vec::new();
    for (t, kin) in tracks {
        for (i, (sample, k)) in t.trajectory.samples.iter().zip(kin).enumerate() {
            if let Some(p) = sample {
                rows.push((t.trajectory.start_frame + i, t.id, *p, *k));
            }
        }
    }
    rows.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut w = csv::Writer::from_writer(out);
    let err = |e: csv::Error| Error::format("trajectory csv", e.to_string());
    w.write_record(["frame_index", "track_id", "x", "y", "v_x", "v_y", "a_x", "a_y", "ttc"])
        .map_err(err)?;
    for (frame, id, p, k) in rows {
        w.write_record([
            frame.to_string(),
            id.to_string(),
            p.x.to_string(),
            p.y.to_string(),
            opt(k.vx),
            opt(k.vy),
            opt(k.ax),
            opt(k.ay),
            if k.ttc.is_finite() { k.ttc.to_string() } else { "inf".into() },
        ])
        .map_err(err)?;
    }
    w.flush().map_err(|e| Error::format("trajectory csv", e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pts(coords: &[(f64, f64)]) -> Vec<PixelPoint> {
        coords.iter().map(|&(x, y)| PixelPoint::new(x, y)).collect()
    }

    #[test]
    fn dbscan_examples() {
        let p = DbscanParams { eps: 2.0, min_pts: 3 };
        let tight = pts(&[(0.0, 0.0), (1.0, 0.0), (0.0, 1.0), (1.0, 1.0), (0.5, 0.5)]);
        let r = dbscan(&tight, &p).unwrap();
        assert_eq!(r.clusters.len(), 1);
        assert_eq!(r.clusters[0].members, vec![0, 1, 2, 3, 4]);
        assert_eq!(r.clusters[0].center, PixelPoint::new(0.5, 0.5));

        let single = dbscan(&pts(&[(3.0, 3.0)]), &DbscanParams { eps: 1.0, min_pts: 2 }).unwrap();
        assert!(single.clusters.is_empty());
        assert_eq!(single.noise, vec![0]);

        let mut blobs = tight.clone();
        blobs.extend(tight.iter().map(|q| PixelPoint::new(q.x + 200.0, q.y)));
        let r = dbscan(&blobs, &p).unwrap();
        assert_eq!(r.clusters.len(), 2);
        assert_eq!(r.clusters[1].members, vec![5, 6, 7, 8, 9]);

        assert!(dbscan(&blobs, &DbscanParams { eps: 0.0, min_pts: 3 }).is_err());
        assert!(dbscan(&blobs, &DbscanParams { eps: 1.0, min_pts: 0 }).is_err());
    }

    #[test]
    fn border_point_joins_cluster() {
        // 4 core points in a line and one border point reachable from the end.
        let points = pts(&[(0.0, 0.0), (1.0, 0.0), (2.0, 0.0), (3.0, 0.0), (4.4, 0.0)]);
        let r = dbscan(&points, &DbscanParams { eps: 1.5, min_pts: 3 }).unwrap();
        assert_eq!(r.clusters.len(), 1);
        assert_eq!(r.clusters[0].members.len(), 5);
    }

    #[test]
    fn conflict_points_examples() {
        let mut map = LabelMap::filled(5, 4, 0).unwrap();
        assert!(conflict_points(&map, &[7]).is_empty());
        map.set(1, 0, 7);
        map.set(4, 2, 7);
        map.set(0, 3, 7);
        map.set(2, 2, 8);
        assert_eq!(conflict_points(&map, &[7]), pts(&[(1.0, 0.0), (4.0, 2.0), (0.0, 3.0)]));
        let mut union = conflict_points(&map, &[7, 8]);
        let mut concat = conflict_points(&map, &[7]);
        concat.extend(conflict_points(&map, &[8]));
        let key = |p: &PixelPoint| (p.y as i64, p.x as i64);
        union.sort_by_key(key);
        concat.sort_by_key(key);
        assert_eq!(union, concat);
    }

    fn params() -> TrackParams {
        TrackParams { fps: 25.0, max_jump: 10.0, ego_row: 100.0 }
    }

    #[test]
    fn drifting_center_forms_one_track() {
        let frames: Vec<Vec<PixelPoint>> = (0..10).map(|i| vec![PixelPoint::new(10.0 + 3.0 * i as f64, 20.0)]).collect();
        let t = track(&frames, &params()).unwrap();
        assert_eq!(t.len(), 1);
        assert_eq!(t[0].trajectory.samples.len(), 10);
    }

    #[test]
    fn teleport_splits_track() {
        let frames = vec![
            vec![PixelPoint::new(10.0, 10.0)],
            vec![PixelPoint::new(12.0, 10.0)],
            vec![PixelPoint::new(80.0, 10.0)],
            vec![PixelPoint::new(82.0, 10.0)],
        ];
        let t = track(&frames, &params()).unwrap();
        assert_eq!(t.len(), 2);
        assert_eq!(t[1].trajectory.start_frame, 2);
        assert_eq!(t[1].trajectory.samples.len(), 2);
    }

    #[test]
    fn interleaved_objects_keep_identity() {
        let frames: Vec<Vec<PixelPoint>> = (0..8)
            .map(|i| {
                let a = PixelPoint::new(10.0 + 2.0 * i as f64, 30.0);
                let b = PixelPoint::new(90.0 - 2.0 * i as f64, 60.0);
                if i % 2 == 0 { vec![a, b] } else { vec![b, a] }
            })
            .collect();
        let t = track(&frames, &params()).unwrap();
        assert_eq!(t.len(), 2);
        assert!(t[0].trajectory.samples.iter().all(|p| p.unwrap().y == 30.0));
        assert!(t[1].trajectory.samples.iter().all(|p| p.unwrap().y == 60.0));
    }

    #[test]
    fn kinematics_examples() {
        let still = Trajectory::new(25.0, 0, vec![Some(PixelPoint::new(5.0, 5.0)); 4], 100.0).unwrap();
        for k in kinematics(&still).unwrap().iter().skip(1) {
            assert_eq!(k.vx, Some(0.0));
            assert_eq!(k.vy, Some(0.0));
            assert_eq!(k.ttc, f64::INFINITY);
        }

        let xs = [100.0, 104.0, 112.0];
        let tr = Trajectory::new(25.0, 0, xs.iter().map(|&x| Some(PixelPoint::new(x, 0.0))).collect(), 100.0).unwrap();
        let k = kinematics(&tr).unwrap();
        assert_eq!(k[0].vx, None);
        assert_eq!(k[1].vx, Some(100.0));
        assert_eq!(k[1].ax, Some(2500.0));
        assert_eq!(k[2].vx, Some(200.0));
        assert_eq!(k[2].ax, None);

        let short = Trajectory::new(25.0, 0, vec![Some(PixelPoint::new(0.0, 0.0))], 10.0).unwrap();
        assert!(kinematics(&short).is_err());
        assert!(Trajectory::new(0.0, 0, vec![], 0.0).is_err());
    }

    #[test]
    fn ttc_examples() {
        assert_eq!(ttc(200.0, 100.0).unwrap(), 2.0);
        assert_eq!(ttc(200.0, 0.0).unwrap(), f64::INFINITY);
        assert_eq!(1.0 / ttc(200.0, 0.0).unwrap(), 0.0);
        assert_eq!(ttc(200.0, -30.0).unwrap(), f64::INFINITY);
        assert!(ttc(-1.0, 10.0).is_err());
    }

    #[test]
    fn engineered_one_second_ttc_is_severe() {
        // 4 px/frame toward the ego row at 25 fps = 100 px/s, ending 100 px away.
        let samples = (0..5).map(|i| Some(PixelPoint::new(50.0, 84.0 + 4.0 * i as f64))).collect();
        let tr = Trajectory::new(25.0, 0, samples, 200.0).unwrap();
        let k = kinematics(&tr).unwrap();
        assert_eq!(k[4].ttc, 1.0);
        assert!(k[4].is_severe());
        assert!(!k[1].is_severe());
    }

    #[test]
    fn trajectory_csv_layout() {
        let tr = Trajectory::new(10.0, 3, vec![Some(PixelPoint::new(1.0, 2.0)), Some(PixelPoint::new(2.0, 4.0))], 10.0).unwrap();
        let kin = kinematics(&tr).unwrap();
        let mut buf = Vec::new();
        write_trajectory_csv(&[(Track { id: 0, trajectory: tr }, kin)], &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "frame_index,track_id,x,y,v_x,v_y,a_x,a_y,ttc\n3,0,1,2,,,,,inf\n4,0,2,4,10,20,,,0.3\n"
        );
    }

    proptest! {
        #[test]
        fn constant_velocity_is_recovered(x0 in 0.0f64..100.0, vx in -5.0f64..5.0, vy in -5.0f64..5.0, n in 3usize..30) {
            let samples = (0..n).map(|i| Some(PixelPoint::new(x0 + vx * i as f64, 50.0 + vy * i as f64))).collect();
            let tr = Trajectory::new(30.0, 0, samples, 1000.0).unwrap();
            let k = kinematics(&tr).unwrap();
            for s in &k[1..] {
                prop_assert!((s.vx.unwrap() - 30.0 * vx).abs() < 1e-9);
                prop_assert!((s.vy.unwrap() - 30.0 * vy).abs() < 1e-9);
            }
            for s in &k[1..n - 1] {
                prop_assert!(s.ax.unwrap().abs() < 1e-9);
                prop_assert!(s.ay.unwrap().abs() < 1e-9);
            }
        }

        #[test]
        fn dbscan_core_partition_is_order_independent(
            coords in proptest::collection::vec((0.0f64..60.0, 0.0f64..60.0), 1..80),
            perm_seed in any::<u64>(),
        ) {
            use rand::{seq::SliceRandom, SeedableRng};
            let points = pts(&coords);
            let params = DbscanParams { eps: 6.0, min_pts: 4 };
            let mut order: Vec<usize> = (0..points.len()).collect();
            order.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(perm_seed));
            let permuted: Vec<PixelPoint> = order.iter().map(|&i| points[i]).collect();
            let a = dbscan(&points, &params).unwrap().assignments(points.len());
            let b_perm = dbscan(&permuted, &params).unwrap().assignments(points.len());
            let mut b = vec![None; points.len()];
            for (pos, &orig) in order.iter().enumerate() {
                b[orig] = b_perm[pos];
            }
            let eps2 = params.eps * params.eps;
            let degree = |i: usize| points.iter().filter(|q| (q.x - points[i].x).powi(2) + (q.y - points[i].y).powi(2) <= eps2).count();
            let core: Vec<bool> = (0..points.len()).map(|i| degree(i) >= params.min_pts).collect();
            // Core points: same partition. Others: noise in both or clustered in both.
            for i in 0..points.len() {
                prop_assert_eq!(a[i].is_some(), b[i].is_some());
                for j in 0..points.len() {
                    if core[i] && core[j] {
                        prop_assert_eq!(a[i] == a[j], b[i] == b[j]);
                    }
                }
            }
        }
    }
}
