use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// How one physical state coordinate is presented to the network.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    /// Fed as-is.
    Raw,
    /// Fed as `(sin θ, cos θ)`; increments are wrapped to (−π, π].
    Angle,
    /// Not fed at all (e.g. world position of a translation-invariant system).
    Ignored,
}

impl FeatureKind {
    pub fn width(self) -> usize {
        match self {
            FeatureKind::Raw => 1,
            FeatureKind::Angle => 2,
            FeatureKind::Ignored => 0,
        }
    }

    pub(crate) fn code(self) -> u8 {
        match self {
            FeatureKind::Raw => 0,
            FeatureKind::Angle => 1,
            FeatureKind::Ignored => 2,
        }
    }

    pub(crate) fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(FeatureKind::Raw),
            1 => Some(FeatureKind::Angle),
            2 => Some(FeatureKind::Ignored),
            _ => None,
        }
    }
}

/// Wraps an angle to (−π, π].
pub fn wrap_angle(theta: f64) -> f64 {
    if theta > -PI && theta <= PI {
        return theta;
    }
    let two_pi = 2.0 * PI;
    let mut w = (theta + PI).rem_euclid(two_pi) - PI;
    if w <= -PI {
        w += two_pi;
    }
    w
}

pub fn feature_width(kinds: &[FeatureKind]) -> usize {
    kinds.iter().map(|k| k.width()).sum()
}

/// Writes the feature map of `state` into `out` (length `feature_width(kinds)`).
pub fn encode_state(kinds: &[FeatureKind], state: &[f64], out: &mut [f64]) {
    let mut o = 0;
    for (kind, &x) in kinds.iter().zip(state) {
        match kind {
            FeatureKind::Raw => {
                out[o] = x;
                o += 1;
            }
            FeatureKind::Angle => {
                out[o] = x.sin();
                out[o + 1] = x.cos();
                o += 2;
            }
            FeatureKind::Ignored => {}
        }
    }
}

/// Difference `a − b` with angle coordinates wrapped.
pub fn state_difference(kinds: &[FeatureKind], a: &[f64], b: &[f64], out: &mut [f64]) {
    for (i, kind) in kinds.iter().enumerate() {
        let d = a[i] - b[i];
        out[i] = if *kind == FeatureKind::Angle { wrap_angle(d) } else { d };
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wrap_range() {
        assert_eq!(wrap_angle(PI), PI);
        assert_eq!(wrap_angle(0.3), 0.3);
        assert!((wrap_angle(-PI) - PI).abs() < 1e-15);
        assert!((wrap_angle(3.0 * PI) - PI).abs() < 1e-12);
        assert!((wrap_angle(2.0 * PI + 0.1) - 0.1).abs() < 1e-12);
        assert!((wrap_angle(-2.0 * PI - 0.1) + 0.1).abs() < 1e-12);
        for i in -100..100 {
            let w = wrap_angle(i as f64 * 0.37);
            assert!(w > -PI && w <= PI);
        }
    }

    #[test]
    fn encode_layout() {
        let kinds = [FeatureKind::Ignored, FeatureKind::Angle, FeatureKind::Raw];
        let mut out = [0.0; 3];
        encode_state(&kinds, &[5.0, 0.5, -2.0], &mut out);
        assert_eq!(out, [0.5f64.sin(), 0.5f64.cos(), -2.0]);
        assert_eq!(feature_width(&kinds), 3);
    }
}
