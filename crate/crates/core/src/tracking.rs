//! Path-tracking co-simulation: an S-curve reference, a unicycle follower
//! steered by pure pursuit, and trajectory RMSE.
//!
//! The master computes a steering rate from the follower's true pose at each
//! command epoch. The follower adopts a command only when it arrives within
//! its deadline; otherwise it keeps turning at the previous rate.

use std::f64::consts::FRAC_PI_2;

use serde::{Deserialize, Serialize};

use crate::time::{SimDuration, SimTime};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrackingConfig {
    pub enabled: bool,
    pub straight_m: f64,
    pub radius_m: f64,
    pub speed_mps: f64,
    pub lookahead_m: f64,
    /// How far ahead of the projection the curvature feedforward looks;
    /// half the distance covered per command period by default.
    pub preview_m: f64,
    /// Follower start position to the left of the path start.
    pub initial_offset_m: f64,
    pub sample_period_ms: u64,
    pub integration_step_us: u64,
}

impl Default for TrackingConfig {
    fn default() -> Self {
        Self {
            enabled: false,
            straight_m: 5.0,
            radius_m: 5.0,
            speed_mps: 1.0,
            lookahead_m: 1.0,
            preview_m: 0.05,
            initial_offset_m: 0.0,
            sample_period_ms: 10,
            integration_step_us: 1000,
        }
    }
}

impl TrackingConfig {
    pub fn validate(&self, out: &mut Vec<String>) {
        let positive = [
            ("tracking.straight_m", self.straight_m),
            ("tracking.radius_m", self.radius_m),
            ("tracking.speed_mps", self.speed_mps),
            ("tracking.lookahead_m", self.lookahead_m),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                out.push(format!("{name} must be a positive finite number, got {v}"));
            }
        }
        if self.sample_period_ms == 0 {
            out.push("tracking.sample_period_ms must be > 0".into());
        }
        if self.integration_step_us == 0 {
            out.push("tracking.integration_step_us must be > 0".into());
        }
    }

    pub fn path(&self) -> PathModel {
        PathModel::s_curve(self.straight_m, self.radius_m)
    }

    /// Time to traverse the reference at constant speed.
    pub fn traverse_time(&self) -> SimDuration {
        SimDuration::from_secs_f64(self.path().length() / self.speed_mps)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Segment {
    Line {
        x0: f64,
        y0: f64,
        heading: f64,
        len: f64,
    },
    /// Arc around `(cx, cy)`; `sweep` is signed (positive = left turn).
    Arc {
        cx: f64,
        cy: f64,
        r: f64,
        phi0: f64,
        sweep: f64,
    },
}

impl Segment {
    fn length(&self) -> f64 {
        match *self {
            Segment::Line { len, .. } => len,
            Segment::Arc { r, sweep, .. } => r * sweep.abs(),
        }
    }

    fn point(&self, s: f64) -> (f64, f64) {
        match *self {
            Segment::Line { x0, y0, heading, .. } => (x0 + s * heading.cos(), y0 + s * heading.sin()),
            Segment::Arc { cx, cy, r, phi0, sweep } => {
                let phi = phi0 + sweep.signum() * s / r;
                (cx + r * phi.cos(), cy + r * phi.sin())
            }
        }
    }

    fn heading(&self, s: f64) -> f64 {
        match *self {
            Segment::Line { heading, .. } => heading,
            Segment::Arc { r, phi0, sweep, .. } => {
                let phi = phi0 + sweep.signum() * s / r;
                phi + sweep.signum() * FRAC_PI_2
            }
        }
    }

    /// Distance from `p` to the segment and the arclength of the nearest point.
    fn nearest(&self, p: (f64, f64)) -> (f64, f64) {
        match *self {
            Segment::Line { x0, y0, heading, len } => {
                let (ux, uy) = (heading.cos(), heading.sin());
                let s = ((p.0 - x0) * ux + (p.1 - y0) * uy).clamp(0.0, len);
                let (qx, qy) = (x0 + s * ux, y0 + s * uy);
                ((p.0 - qx).hypot(p.1 - qy), s)
            }
            Segment::Arc { cx, cy, r, phi0, sweep } => {
                let ang = (p.1 - cy).atan2(p.0 - cx);
                // angle travelled from phi0 in the sweep direction, in [0, 2pi)
                let along = (sweep.signum() * (ang - phi0)).rem_euclid(std::f64::consts::TAU);
                if along <= sweep.abs() {
                    let d = ((p.0 - cx).hypot(p.1 - cy) - r).abs();
                    (d, along * r)
                } else {
                    let len = self.length();
                    let a = self.point(0.0);
                    let b = self.point(len);
                    let da = (p.0 - a.0).hypot(p.1 - a.1);
                    let db = (p.0 - b.0).hypot(p.1 - b.1);
                    if da <= db {
                        (da, 0.0)
                    } else {
                        (db, len)
                    }
                }
            }
        }
    }
}

/// Tangent-continuous reference path made of lines and arcs.
#[derive(Clone, Debug, PartialEq)]
pub struct PathModel {
    segments: Vec<Segment>,
    starts: Vec<f64>,
    length: f64,
}

impl PathModel {
    /// Straight, 90° left arc, straight, 90° right arc, straight; starts at
    /// the origin heading along +x.
    pub fn s_curve(straight: f64, radius: f64) -> Self {
        let mut b = PathBuilder::new();
        b.line(straight);
        b.arc(radius, FRAC_PI_2);
        b.line(straight);
        b.arc(radius, -FRAC_PI_2);
        b.line(straight);
        b.finish()
    }

    /// A single straight line from the origin along +x.
    pub fn straight(len: f64) -> Self {
        let mut b = PathBuilder::new();
        b.line(len);
        b.finish()
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    fn locate(&self, s: f64) -> (usize, f64) {
        let i = self.starts.partition_point(|&st| st <= s).saturating_sub(1);
        (i, s - self.starts[i])
    }

    /// Point at arclength `s`; beyond the end the final tangent is extended.
    pub fn point_at(&self, s: f64) -> (f64, f64) {
        if s <= 0.0 {
            return self.segments[0].point(0.0);
        }
        if s >= self.length {
            let last = self.segments.last().expect("non-empty path");
            let (ex, ey) = last.point(last.length());
            let h = last.heading(last.length());
            let extra = s - self.length;
            return (ex + extra * h.cos(), ey + extra * h.sin());
        }
        let (i, local) = self.locate(s);
        self.segments[i].point(local)
    }

    pub fn heading_at(&self, s: f64) -> f64 {
        let s = s.clamp(0.0, self.length);
        let (i, local) = self.locate(s.min(self.length - 1e-12).max(0.0));
        self.segments[i].heading(local)
    }

    /// Signed curvature (positive = left); zero past either end.
    pub fn curvature_at(&self, s: f64) -> f64 {
        if s < 0.0 || s >= self.length {
            return 0.0;
        }
        let (i, _) = self.locate(s);
        match self.segments[i] {
            Segment::Line { .. } => 0.0,
            Segment::Arc { r, sweep, .. } => sweep.signum() / r,
        }
    }

    /// Distance to the nearest reference point and that point's arclength.
    pub fn nearest(&self, p: (f64, f64)) -> (f64, f64) {
        self.segments
            .iter()
            .zip(&self.starts)
            .map(|(seg, &st)| {
                let (d, s) = seg.nearest(p);
                (d, st + s)
            })
            .fold((f64::INFINITY, 0.0), |best, c| if c.0 < best.0 { c } else { best })
    }

    pub fn distance(&self, p: (f64, f64)) -> f64 {
        self.nearest(p).0
    }
}

struct PathBuilder {
    x: f64,
    y: f64,
    heading: f64,
    segments: Vec<Segment>,
}

impl PathBuilder {
    fn new() -> Self {
        Self {
            x: 0.0,
            y: 0.0,
            heading: 0.0,
            segments: Vec::new(),
        }
    }

    fn push(&mut self, seg: Segment) {
        let len = seg.length();
        let (x, y) = seg.point(len);
        self.heading = seg.heading(len);
        self.x = x;
        self.y = y;
        self.segments.push(seg);
    }

    fn line(&mut self, len: f64) {
        self.push(Segment::Line {
            x0: self.x,
            y0: self.y,
            heading: self.heading,
            len,
        });
    }

    fn arc(&mut self, r: f64, sweep: f64) {
        let side = sweep.signum();
        let (cx, cy) = (
            self.x - side * r * self.heading.sin(),
            self.y + side * r * self.heading.cos(),
        );
        let phi0 = (self.y - cy).atan2(self.x - cx);
        self.push(Segment::Arc { cx, cy, r, phi0, sweep });
    }

    fn finish(self) -> PathModel {
        let mut starts = Vec::with_capacity(self.segments.len());
        let mut acc = 0.0;
        for s in &self.segments {
            starts.push(acc);
            acc += s.length();
        }
        PathModel {
            segments: self.segments,
            starts,
            length: acc,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
}

/// Steering rate: path curvature `preview` metres ahead of the pose's
/// projection (feedforward) plus pure pursuit toward the point `lookahead`
/// metres along the tangent at the projection. On the path with the path's
/// heading the pursuit term vanishes, so arcs are held without cutting in.
pub fn pure_pursuit(path: &PathModel, pose: Pose, speed: f64, lookahead: f64, preview: f64) -> f64 {
    let (_, s) = path.nearest((pose.x, pose.y));
    let (px, py) = path.point_at(s);
    let h = path.heading_at(s);
    let (gx, gy) = (px + lookahead * h.cos(), py + lookahead * h.sin());
    let (dx, dy) = (gx - pose.x, gy - pose.y);
    let dist = dx.hypot(dy);
    let feedforward = speed * path.curvature_at(s + preview);
    if dist < 1e-12 {
        return feedforward;
    }
    let alpha = dy.atan2(dx) - pose.heading;
    feedforward + 2.0 * speed * alpha.sin() / dist
}

/// Exact unicycle motion at constant speed and turn rate for `dt` seconds.
pub fn unicycle_step(p: Pose, v: f64, omega: f64, dt: f64) -> Pose {
    if omega.abs() < 1e-12 {
        Pose {
            x: p.x + v * dt * p.heading.cos(),
            y: p.y + v * dt * p.heading.sin(),
            heading: p.heading,
        }
    } else {
        let h1 = p.heading + omega * dt;
        Pose {
            x: p.x + v / omega * (h1.sin() - p.heading.sin()),
            y: p.y - v / omega * (h1.cos() - p.heading.cos()),
            heading: h1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySample {
    pub t_s: f64,
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    /// Seconds since the applied command was issued; `None` before the first.
    pub last_command_age_s: Option<f64>,
}

/// Follower state plus the sampled trajectory.
#[derive(Clone, Debug)]
pub struct Tracker {
    cfg: TrackingConfig,
    path: PathModel,
    pose: Pose,
    omega: f64,
    now: SimTime,
    end: SimTime,
    next_sample: SimTime,
    applied_created_at: Option<SimTime>,
    samples: Vec<TrajectorySample>,
    sq_err_sum: f64,
    applied: u64,
    discarded: u64,
}

impl Tracker {
    pub fn new(cfg: &TrackingConfig) -> Self {
        let path = cfg.path();
        let end = SimTime::ZERO + cfg.traverse_time();
        Self {
            cfg: cfg.clone(),
            pose: Pose {
                x: 0.0,
                y: cfg.initial_offset_m,
                heading: path.heading_at(0.0),
            },
            path,
            omega: 0.0,
            now: SimTime::ZERO,
            end,
            next_sample: SimTime::ZERO,
            applied_created_at: None,
            samples: Vec::new(),
            sq_err_sum: 0.0,
            applied: 0,
            discarded: 0,
        }
    }

    pub fn end(&self) -> SimTime {
        self.end
    }

    pub fn is_active(&self, t: SimTime) -> bool {
        t <= self.end
    }

    pub fn pose(&self) -> Pose {
        self.pose
    }

    pub fn path(&self) -> &PathModel {
        &self.path
    }

    fn record(&mut self, at: SimTime) {
        let d = self.path.distance((self.pose.x, self.pose.y));
        self.sq_err_sum += d * d;
        self.samples.push(TrajectorySample {
            t_s: at.as_secs_f64(),
            x: self.pose.x,
            y: self.pose.y,
            heading: self.pose.heading,
            last_command_age_s: self.applied_created_at.map(|c| (at - c).as_secs_f64()),
        });
    }

    fn integrate(&mut self, to: SimTime) {
        let step = SimDuration::from_micros(self.cfg.integration_step_us);
        while self.now < to {
            let next = (self.now + step).min(to);
            let dt = (next - self.now).as_secs_f64();
            self.pose = unicycle_step(self.pose, self.cfg.speed_mps, self.omega, dt);
            self.now = next;
        }
    }

    /// Advance the follower to `t` (capped at the end of the path run),
    /// recording every sample instant passed.
    pub fn advance_to(&mut self, t: SimTime) {
        let t = t.min(self.end);
        let period = SimDuration::from_millis(self.cfg.sample_period_ms);
        while self.next_sample <= t {
            let s = self.next_sample;
            self.integrate(s);
            self.record(s);
            self.next_sample = s + period;
        }
        self.integrate(t);
    }

    /// Master side: steering command for a command issued at `t`.
    pub fn command_at(&mut self, t: SimTime) -> f64 {
        self.advance_to(t);
        pure_pursuit(
            &self.path,
            self.pose,
            self.cfg.speed_mps,
            self.cfg.lookahead_m,
            self.cfg.preview_m,
        )
    }

    /// Follower side: a command issued at `created_at` arrived at `at`.
    /// Late commands and ones older than the applied command are discarded.
    pub fn deliver(&mut self, at: SimTime, created_at: SimTime, omega: f64, on_time: bool) {
        if at > self.end {
            return;
        }
        self.advance_to(at);
        let newer = self.applied_created_at.is_none_or(|c| created_at > c);
        if on_time && newer {
            self.omega = omega;
            self.applied_created_at = Some(created_at);
            self.applied += 1;
        } else {
            self.discarded += 1;
        }
    }

    pub fn finish(&mut self) {
        self.advance_to(self.end);
    }

    pub fn samples(&self) -> &[TrajectorySample] {
        &self.samples
    }

    pub fn rmse(&self) -> f64 {
        if self.samples.is_empty() {
            0.0
        } else {
            (self.sq_err_sum / self.samples.len() as f64).sqrt()
        }
    }

    pub fn applied(&self) -> u64 {
        self.applied
    }

    pub fn discarded(&self) -> u64 {
        self.discarded
    }
}

/// Root mean square of distances from `points` to `path`.
pub fn rmse(points: &[(f64, f64)], path: &PathModel) -> f64 {
    if points.is_empty() {
        return 0.0;
    }
    let sum: f64 = points.iter().map(|&p| path.distance(p).powi(2)).sum();
    (sum / points.len() as f64).sqrt()
}

/// Network-free run: `fate(k)` gives the delivery delay of command `k`, or
/// `None` if it is lost. Deadline is applied to the delay as usual.
pub fn run_synthetic(
    cfg: &TrackingConfig,
    period: SimDuration,
    deadline: SimDuration,
    mut fate: impl FnMut(u64) -> Option<SimDuration>,
) -> Tracker {
    let mut tr = Tracker::new(cfg);
    let mut pending: Vec<(SimTime, SimTime, f64)> = Vec::new();
    let mut k = 0u64;
    loop {
        let t = SimTime(k * period.as_nanos());
        if !tr.is_active(t) {
            break;
        }
        // deliveries due before this command epoch
        pending.sort_by_key(|p| p.0);
        while let Some(&(at, created, w)) = pending.first() {
            if at > t {
                break;
            }
            pending.remove(0);
            tr.deliver(at, created, w, at - created <= deadline);
        }
        let w = tr.command_at(t);
        if let Some(delay) = fate(k) {
            let at = t + delay;
            if delay.is_zero() {
                tr.deliver(at, t, w, true);
            } else {
                pending.push((at, t, w));
            }
        }
        k += 1;
    }
    pending.sort_by_key(|p| p.0);
    for (at, created, w) in pending {
        tr.deliver(at, created, w, at - created <= deadline);
    }
    tr.finish();
    tr
}
