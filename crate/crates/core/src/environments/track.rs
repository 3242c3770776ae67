use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::nn_dynamics::wrap_angle;
use crate::smppi::TaskCost;

/// Closed figure-eight made of two circles of radius `radius` centred at
/// `(±offset, 0)`, joined by straight lines crossing at the origin, sampled
/// at a uniform arc-length spacing. Travel starts at the origin heading into
/// the right loop, which is driven clockwise; the left loop is driven
/// counter-clockwise.
#[derive(Clone, Debug)]
pub struct Track {
    pub radius: f64,
    pub offset: f64,
    pub spacing: f64,
    xy: Vec<[f64; 2]>,
    heading: Vec<f64>,
}

/// Nearest track point for a position.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Projection {
    /// Arc length of the nearest point, unwrapped (may exceed one lap).
    pub progress: f64,
    /// Signed distance, positive to the left of the direction of travel.
    pub lateral: f64,
    pub heading: f64,
}

impl Track {
    pub fn figure_eight(radius: f64, offset: f64, spacing: f64) -> Self {
        assert!(offset > radius && radius > 0.0 && spacing > 0.0, "figure-eight needs offset > radius > 0");
        let leg = (offset * offset - radius * radius).sqrt();
        let phi = (radius / offset).asin();
        let (c, s) = (phi.cos(), phi.sin());
        let arc = radius * (PI + 2.0 * phi);
        let total = 4.0 * leg + 2.0 * arc;
        let start_right = (leg * s).atan2(leg * c - offset);
        let start_left = (leg * s).atan2(offset - leg * c);
        let point = |u: f64| -> [f64; 2] {
            let u = u.rem_euclid(total);
            if u < leg {
                [u * c, u * s]
            } else if u < leg + arc {
                let a = start_right - (u - leg) / radius;
                [offset + radius * a.cos(), radius * a.sin()]
            } else if u < 3.0 * leg + arc {
                let w = u - leg - arc;
                [leg * c - w * c, -leg * s + w * s]
            } else if u < 3.0 * leg + 2.0 * arc {
                let a = start_left + (u - 3.0 * leg - arc) / radius;
                [-offset + radius * a.cos(), radius * a.sin()]
            } else {
                let w = u - 3.0 * leg - 2.0 * arc;
                [-leg * c + w * c, -leg * s + w * s]
            }
        };
        let n = (total / spacing).round() as usize;
        let spacing = total / n as f64;
        let xy: Vec<[f64; 2]> = (0..n).map(|k| point(k as f64 * spacing)).collect();
        let heading = (0..n)
            .map(|k| {
                let (a, b) = (point(k as f64 * spacing - 0.01), point(k as f64 * spacing + 0.01));
                (b[1] - a[1]).atan2(b[0] - a[0])
            })
            .collect();
        Track { radius, offset, spacing, xy, heading }
    }

    /// Heading at the start line.
    pub fn start_heading(&self) -> f64 {
        (self.radius / self.offset).asin()
    }

    pub fn length(&self) -> f64 {
        self.spacing * self.xy.len() as f64
    }

    pub fn len(&self) -> usize {
        self.xy.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xy.is_empty()
    }

    fn index(&self, progress: f64) -> usize {
        let n = self.xy.len() as i64;
        ((progress / self.spacing).round() as i64).rem_euclid(n) as usize
    }

    /// Point and heading at an arc length (nearest sample).
    pub fn pose_at(&self, progress: f64) -> ([f64; 2], f64) {
        let i = self.index(progress);
        (self.xy[i], self.heading[i])
    }

    /// Nearest sample with arc length in `[from, to]`.
    pub fn project(&self, pos: [f64; 2], from: f64, to: f64) -> Projection {
        let k0 = (from / self.spacing).floor() as i64;
        let k1 = ((to / self.spacing).ceil() as i64).max(k0);
        let n = self.xy.len() as i64;
        let mut best = (f64::INFINITY, k0);
        for k in k0..=k1 {
            let p = self.xy[k.rem_euclid(n) as usize];
            let d = (p[0] - pos[0]).powi(2) + (p[1] - pos[1]).powi(2);
            if d < best.0 {
                best = (d, k);
            }
        }
        let i = best.1.rem_euclid(n) as usize;
        let h = self.heading[i];
        let (dx, dy) = (pos[0] - self.xy[i][0], pos[1] - self.xy[i][1]);
        Projection { progress: best.1 as f64 * self.spacing, lateral: h.cos() * dy - h.sin() * dx, heading: h }
    }
}

/// Path-following weights for the vehicle task.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathWeights {
    pub target_speed: f64,
    pub lateral: f64,
    pub heading: f64,
    pub speed: f64,
    pub side_slip: f64,
    pub half_width: f64,
    pub off_track: f64,
}

impl Default for PathWeights {
    fn default() -> Self {
        PathWeights {
            target_speed: 11.0,
            lateral: 2.0,
            heading: 10.0,
            speed: 0.5,
            side_slip: 0.5,
            half_width: 4.0,
            off_track: 1000.0,
        }
    }
}

/// Running cost along a planning horizon. The projection window at step `k`
/// spans from just behind the current progress to the furthest point
/// reachable at `max_speed`.
#[derive(Clone, Debug)]
pub struct PathCost<'a> {
    pub track: &'a Track,
    pub weights: PathWeights,
    pub progress: f64,
    pub dt: f64,
    pub max_speed: f64,
    pub horizon: usize,
}

impl PathCost<'_> {
    fn eval(&self, step: usize, x: &[f64]) -> f64 {
        let w = &self.weights;
        let ahead = self.max_speed * self.dt * step as f64;
        let p = self.track.project([x[0], x[1]], self.progress - 2.0, self.progress + 2.0 + ahead);
        let mut c = w.lateral * p.lateral * p.lateral
            + w.heading * (1.0 - wrap_angle(x[2] - p.heading).cos())
            + w.speed * (x[3] - w.target_speed).powi(2)
            + w.side_slip * x[4] * x[4];
        if p.lateral.abs() > w.half_width {
            c += w.off_track;
        }
        c
    }
}

impl TaskCost for PathCost<'_> {
    fn running(&self, step: usize, state: &[f64], _action: &[f64]) -> f64 {
        self.eval(step, state)
    }

    fn terminal(&self, state: &[f64]) -> f64 {
        self.eval(self.horizon, state)
    }
}
