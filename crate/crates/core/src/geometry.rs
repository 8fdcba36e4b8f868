//! Points, pairs and distances on the 2-torus `R^2 / (2*pi*Z)^2`.

use serde::{Deserialize, Serialize};
use std::f64::consts::{FRAC_1_PI, PI, TAU};

use crate::error::{finite, positive, Error, Result};

/// Tolerance used for membership in the antipodal set when none is given.
pub const ANTIPODAL_TOL: f64 = 1e-9;

/// Reduce to `[0, 2*pi)`. Caller guarantees `a` is finite.
#[inline]
pub(crate) fn canonical(a: f64) -> f64 {
    // same value as rem_euclid; `%` is the identity on (-TAU, TAU)
    let r = if a.abs() < TAU {
        if a < 0.0 {
            a + TAU
        } else {
            a
        }
    } else if a.abs() < 2.0 * TAU {
        // `a % TAU` is the exact difference here
        if a < 0.0 {
            (a + TAU) + TAU
        } else {
            a - TAU
        }
    } else {
        a.rem_euclid(TAU)
    };
    // rem_euclid may round up to TAU for tiny negative inputs
    if r >= TAU {
        0.0
    } else {
        r
    }
}

/// Nearest-lift difference in `(-pi, pi]`.
#[inline]
pub fn signed_diff(d: f64) -> f64 {
    let r = canonical(d);
    if r > PI {
        r - TAU
    } else {
        r
    }
}

/// Distance between two angles along the circle (exactly symmetric).
#[inline]
pub fn circle_dist(a: f64, b: f64) -> f64 {
    let r = canonical((a - b).abs());
    r.min(TAU - r)
}

/// Parity of an integral float; every f64 at or above `2^53` is even.
#[inline]
fn odd(k: f64) -> bool {
    k.abs() < 9.0e15 && (k as i64) & 1 == 1
}

/// `(sin u, cos u)` with the argument reduced modulo the f64 value of `pi`,
/// so that `sin` vanishes exactly at every multiple of `PI` and is exactly
/// periodic with the same `TAU` used for wrapping.
#[inline]
pub fn sin_cos_circle(u: f64) -> (f64, f64) {
    let k = (u * FRAC_1_PI).round();
    let r = (-k).mul_add(PI, u);
    let (s, c) = (r.sin(), r.cos());
    if !odd(k) {
        (s, c)
    } else {
        (-s, -c)
    }
}

/// First component of [`sin_cos_circle`], bit for bit.
#[inline]
pub fn sin_circle(u: f64) -> f64 {
    let k = (u * FRAC_1_PI).round();
    let s = (-k).mul_add(PI, u).sin();
    if !odd(k) {
        s
    } else {
        -s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct TorusAngle(f64);

impl TorusAngle {
    pub const ZERO: TorusAngle = TorusAngle(0.0);
    pub const HALF_TURN: TorusAngle = TorusAngle(PI);

    pub fn new(a: f64) -> Result<Self> {
        wrap(a)
    }

    /// Wrap a value already known to be finite.
    #[inline]
    pub(crate) fn from_finite(a: f64) -> Self {
        TorusAngle(canonical(a))
    }

    #[inline]
    pub fn value(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for TorusAngle {
    type Error = Error;
    fn try_from(v: f64) -> Result<Self> {
        wrap(v)
    }
}

impl From<TorusAngle> for f64 {
    fn from(a: TorusAngle) -> f64 {
        a.0
    }
}

/// Canonical representative in `[0, 2*pi)`.
pub fn wrap(a: f64) -> Result<TorusAngle> {
    Ok(TorusAngle(canonical(finite("angle", a)?)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TorusPoint {
    pub x1: TorusAngle,
    pub x2: TorusAngle,
}

impl TorusPoint {
    pub fn new(x1: f64, x2: f64) -> Result<Self> {
        Ok(TorusPoint {
            x1: wrap(x1)?,
            x2: wrap(x2)?,
        })
    }

    pub(crate) fn from_finite(p: [f64; 2]) -> Self {
        TorusPoint {
            x1: TorusAngle::from_finite(p[0]),
            x2: TorusAngle::from_finite(p[1]),
        }
    }

    pub fn coords(&self) -> [f64; 2] {
        [self.x1.0, self.x2.0]
    }

    /// `(x2, x1)`.
    pub fn swapped(&self) -> Self {
        TorusPoint {
            x1: self.x2,
            x2: self.x1,
        }
    }

    pub fn dist_inf(&self, other: &TorusPoint) -> f64 {
        circle_dist(self.x1.0, other.x1.0).max(circle_dist(self.x2.0, other.x2.0))
    }

    pub fn dist_l2(&self, other: &TorusPoint) -> f64 {
        circle_dist(self.x1.0, other.x1.0).hypot(circle_dist(self.x2.0, other.x2.0))
    }
}

/// Ordered pair `(x, y)` of distinct torus points.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PairState {
    x: TorusPoint,
    y: TorusPoint,
}

impl PairState {
    pub fn new(x: TorusPoint, y: TorusPoint) -> Result<Self> {
        if x == y {
            return Err(Error::Diagonal);
        }
        Ok(PairState { x, y })
    }

    /// From four coordinates `(x1, x2, y1, y2)`, wrapping each.
    pub fn from_coords(c: [f64; 4]) -> Result<Self> {
        PairState::new(TorusPoint::new(c[0], c[1])?, TorusPoint::new(c[2], c[3])?)
    }

    /// The special antipodal pair `((0,0), (pi,pi))`.
    pub fn special() -> Self {
        PairState {
            x: TorusPoint {
                x1: TorusAngle::ZERO,
                x2: TorusAngle::ZERO,
            },
            y: TorusPoint {
                x1: TorusAngle::HALF_TURN,
                x2: TorusAngle::HALF_TURN,
            },
        }
    }

    /// Antipodal pair based at `x`, with `x` snapped to the `2^-48` grid.
    ///
    /// `PI` is a multiple of `2^-48`, so on that grid `x + PI` and its wrap are
    /// exact and `y - x` equals `(PI, PI)` with no rounding.
    pub fn antipodal(x: TorusPoint) -> Self {
        const GRID: f64 = (1u64 << 48) as f64;
        let snap = |v: f64| canonical((v * GRID).round() / GRID);
        let (a, b) = (snap(x.x1.0), snap(x.x2.0));
        PairState {
            x: TorusPoint::from_finite([a, b]),
            y: TorusPoint::from_finite([a + PI, b + PI]),
        }
    }

    pub fn x(&self) -> TorusPoint {
        self.x
    }

    pub fn y(&self) -> TorusPoint {
        self.y
    }

    pub fn coords(&self) -> [f64; 4] {
        [self.x.x1.0, self.x.x2.0, self.y.x1.0, self.y.x2.0]
    }

    /// `|x - y|_inf` on the torus.
    pub fn separation(&self) -> f64 {
        self.x.dist_inf(&self.y)
    }

    /// Largest circle distance of `y - x` from `(pi, pi)`.
    pub fn antipodal_deviation(&self) -> f64 {
        let c = self.coords();
        circle_dist(c[2] - c[0], PI).max(circle_dist(c[3] - c[1], PI))
    }

    pub fn is_antipodal(&self, tol: f64) -> bool {
        self.antipodal_deviation() <= tol
    }
}

impl<'de> Deserialize<'de> for PairState {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Raw {
            x: TorusPoint,
            y: TorusPoint,
        }
        let r = Raw::deserialize(d)?;
        PairState::new(r.x, r.y).map_err(serde::de::Error::custom)
    }
}

/// `l_inf` distance on `T^2 x T^2`.
pub fn dist_inf(a: &PairState, b: &PairState) -> f64 {
    let (p, q) = (a.coords(), b.coords());
    (0..4).map(|i| circle_dist(p[i], q[i])).fold(0.0, f64::max)
}

/// Open `l_inf` ball membership; empty for `r <= 0`.
pub fn in_ball_inf(center: &PairState, r: f64, z: &PairState) -> bool {
    dist_inf(center, z) < r
}

/// Shortest displacement from `from` to `to`; exact half-turn ties resolve to `+pi`.
pub fn geodesic_delta(from: &TorusPoint, to: &TorusPoint) -> [f64; 2] {
    [
        signed_diff(to.x1.0 - from.x1.0),
        signed_diff(to.x2.0 - from.x2.0),
    ]
}

/// Centres spaced `r` apart along the shortest segment from `from` to `to`.
///
/// Returns `ceil(len / r) + 1` points; the first is `from`, the last lies
/// within `r` of `to`.
pub fn segment_cover(from: &TorusPoint, to: &TorusPoint, r: f64) -> Result<Vec<TorusPoint>> {
    positive("r", r)?;
    let d = geodesic_delta(from, to);
    let len = d[0].hypot(d[1]);
    if len == 0.0 {
        return Ok(vec![*from]);
    }
    let count = (len / r).ceil() as usize;
    let (u0, u1) = (d[0] / len, d[1] / len);
    let o = from.coords();
    Ok((0..=count)
        .map(|k| {
            let s = (k as f64 * r).min(len);
            TorusPoint::from_finite([o[0] + s * u0, o[1] + s * u1])
        })
        .collect())
}
