//! Exact alternating sine-shear maps and Monte Carlo for the two-point chain.
//!
//! Shear `k` (0-indexed) acts for unit time: even `k` moves `x1` by
//! `A sin(x2 - xi_k)`, odd `k` moves `x2` by `A sin(x1 - xi_k)`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{finite, invalid, positive, Error, Result};
use crate::geometry::{canonical, sin_circle, PairState, TorusAngle, TorusPoint};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FlowParams {
    amplitude: f64,
}

impl FlowParams {
    pub fn new(amplitude: f64) -> Result<Self> {
        positive("amplitude", amplitude)?;
        Ok(FlowParams { amplitude })
    }

    pub fn amplitude(&self) -> f64 {
        self.amplitude
    }
}

impl<'de> Deserialize<'de> for FlowParams {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Raw {
            amplitude: f64,
        }
        FlowParams::new(Raw::deserialize(d)?.amplitude).map_err(serde::de::Error::custom)
    }
}

/// Phases for `n` full periods: `2n` angles.
#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct ShiftSequence(Vec<TorusAngle>);

impl ShiftSequence {
    pub fn new(shifts: Vec<TorusAngle>) -> Result<Self> {
        if shifts.len() % 2 != 0 {
            return Err(Error::OddShiftLength(shifts.len()));
        }
        Ok(ShiftSequence(shifts))
    }

    pub fn from_radians(v: &[f64]) -> Result<Self> {
        ShiftSequence::new(v.iter().map(|&a| TorusAngle::new(a)).collect::<Result<_>>()?)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn periods(&self) -> usize {
        self.0.len() / 2
    }

    pub fn shifts(&self) -> &[TorusAngle] {
        &self.0
    }

    pub fn radians(&self) -> Vec<f64> {
        self.0.iter().map(|a| a.value()).collect()
    }

    pub fn concat(&self, other: &ShiftSequence) -> ShiftSequence {
        let mut v = self.0.clone();
        v.extend_from_slice(&other.0);
        ShiftSequence(v)
    }
}

impl<'de> Deserialize<'de> for ShiftSequence {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        ShiftSequence::new(Vec::<TorusAngle>::deserialize(d)?).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelEstimate {
    pub probability: f64,
    pub half_width: f64,
    pub samples: u64,
}

impl KernelEstimate {
    pub fn from_counts(hits: u64, samples: u64) -> Self {
        let n = samples as f64;
        let p = hits as f64 / n;
        KernelEstimate {
            probability: p,
            half_width: (1.96 * (p * (1.0 - p) / n).sqrt()).min(1.0),
            samples,
        }
    }

    /// Lower end of the 95% interval.
    pub fn lower(&self) -> f64 {
        (self.probability - self.half_width).max(0.0)
    }
}

/// One shear on lifted coordinates `p`; `step` selects the axis.
#[inline]
pub(crate) fn shear_raw(p: &mut [f64; 2], step: usize, phase: f64, a: f64) {
    if step % 2 == 0 {
        p[0] += a * sin_circle(p[1] - phase);
    } else {
        p[1] += a * sin_circle(p[0] - phase);
    }
}

/// Shears `phases` applied to `p`, wrapping after each one.
#[inline]
pub(crate) fn flow_raw(p: &mut [f64; 2], phases: &[f64], a: f64) {
    for (k, &s) in phases.iter().enumerate() {
        shear_raw(p, k, s, a);
        p[0] = canonical(p[0]);
        p[1] = canonical(p[1]);
    }
}

/// Inverse of shear `step`, wrapped.
#[inline]
pub(crate) fn inverse_shear_raw(p: &mut [f64; 2], step: usize, phase: f64, a: f64) {
    shear_raw(p, step, phase, -a);
    p[0] = canonical(p[0]);
    p[1] = canonical(p[1]);
}

#[inline]
pub(crate) fn inverse_flow_raw(p: &mut [f64; 2], phases: &[f64], a: f64) {
    for (k, &s) in phases.iter().enumerate().rev() {
        inverse_shear_raw(p, k, s, a);
    }
}

#[inline]
pub(crate) fn flow_pair_raw(z: &mut [f64; 4], phases: &[f64], a: f64) {
    let mut x = [z[0], z[1]];
    let mut y = [z[2], z[3]];
    flow_raw(&mut x, phases, a);
    flow_raw(&mut y, phases, a);
    *z = [x[0], x[1], y[0], y[1]];
}

fn check_time(t: f64, max: f64) -> Result<f64> {
    finite("t", t)?;
    if !(0.0..=max).contains(&t) {
        return Err(invalid("t", format!("must lie in [0, {max}], got {t}")));
    }
    Ok(t)
}

pub fn horizontal_shear(x: TorusPoint, zeta: TorusAngle, params: &FlowParams, t: f64) -> Result<TorusPoint> {
    let t = check_time(t, 1.0)?;
    let mut p = x.coords();
    shear_raw(&mut p, 0, zeta.value(), t * params.amplitude);
    Ok(TorusPoint::from_finite(p))
}

pub fn vertical_shear(x: TorusPoint, zeta: TorusAngle, params: &FlowParams, t: f64) -> Result<TorusPoint> {
    let t = check_time(t, 1.0)?;
    let mut p = x.coords();
    shear_raw(&mut p, 1, zeta.value(), t * params.amplitude);
    Ok(TorusPoint::from_finite(p))
}

/// Position at time `t in [0, len(xi)]`; a fractional remainder runs the next
/// shear for that fraction of its unit interval.
pub fn flow_point(x: TorusPoint, xi: &ShiftSequence, params: &FlowParams, t: f64) -> Result<TorusPoint> {
    let t = check_time(t, xi.len() as f64)?;
    let a = params.amplitude;
    let whole = (t.floor() as usize).min(xi.len());
    let phases = xi.radians();
    let mut p = x.coords();
    flow_raw(&mut p, &phases[..whole], a);
    let frac = t - whole as f64;
    if frac > 0.0 {
        shear_raw(&mut p, whole, phases[whole], frac * a);
    }
    Ok(TorusPoint::from_finite(p))
}

pub fn inverse_flow_point(x: TorusPoint, xi: &ShiftSequence, params: &FlowParams) -> TorusPoint {
    let mut p = x.coords();
    inverse_flow_raw(&mut p, &xi.radians(), params.amplitude);
    TorusPoint::from_finite(p)
}

pub fn flow_pair(z: &PairState, xi: &ShiftSequence, params: &FlowParams) -> Result<PairState> {
    if xi.is_empty() {
        return Err(invalid("xi", "must be non-empty"));
    }
    let mut c = z.coords();
    flow_pair_raw(&mut c, &xi.radians(), params.amplitude);
    PairState::from_coords(c)
}

/// Shifts under which `z` (antipodal) is a fixed point: `(x2, x1)` per period.
pub fn fixed_point_shifts(z: &PairState, periods: usize, tol: f64) -> Result<ShiftSequence> {
    if !(1..=2).contains(&periods) {
        return Err(invalid("periods", format!("must be 1 or 2, got {periods}")));
    }
    let dev = z.antipodal_deviation();
    if dev > tol {
        return Err(Error::NotAntipodal(dev));
    }
    let x = z.x();
    let one = [x.x2, x.x1];
    Ok(ShiftSequence(one.iter().copied().cycle().take(2 * periods).collect()))
}

/// `2n` i.i.d. uniform phases, drawn from stream 0 of `seed`.
pub fn sample_shifts(seed: u64, n: usize) -> Result<ShiftSequence> {
    if n == 0 {
        return Err(invalid("n", "must be at least 1"));
    }
    let mut r = rng::stream(seed, 0);
    Ok(ShiftSequence(
        (0..2 * n).map(|_| TorusAngle::from_finite(rng::angle(&mut r))).collect(),
    ))
}

pub type PairEvent<'a> = &'a (dyn Fn(&PairState) -> bool + Sync);

/// Probability that the `n`-period image of `z` lies in `event`.
pub fn kernel_mc(
    z: &PairState,
    n: usize,
    event: PairEvent<'_>,
    samples: u64,
    seed: u64,
    params: &FlowParams,
) -> Result<KernelEstimate> {
    Ok(kernel_mc_shared(z, n, &[event], samples, seed, params)?[0])
}

/// Several events evaluated on the same shift draws.
pub fn kernel_mc_shared(
    z: &PairState,
    n: usize,
    events: &[PairEvent<'_>],
    samples: u64,
    seed: u64,
    params: &FlowParams,
) -> Result<Vec<KernelEstimate>> {
    if samples == 0 {
        return Err(invalid("samples", "must be at least 1"));
    }
    let a = params.amplitude;
    let start = z.coords();
    let m = events.len();
    let counts = (0..samples)
        .into_par_iter()
        .map(|i| -> Result<Vec<u64>> {
            let mut r = rng::stream(seed, i);
            let mut phases = vec![0.0; 2 * n];
            rng::fill_angles(&mut r, &mut phases);
            let mut c = start;
            flow_pair_raw(&mut c, &phases, a);
            let img = PairState::from_coords(c)?;
            Ok(events.iter().map(|e| e(&img) as u64).collect())
        })
        .try_reduce(
            || vec![0; m],
            |mut acc, v| {
                acc.iter_mut().zip(&v).for_each(|(a, b)| *a += b);
                Ok(acc)
            },
        )?;
    Ok(counts
        .into_iter()
        .map(|h| KernelEstimate::from_counts(h, samples))
        .collect())
}
