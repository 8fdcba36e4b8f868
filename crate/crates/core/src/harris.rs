//! Lyapunov function, Monte Carlo drift and minorization checks, and the
//! log-domain evaluation of the Harris constants for the two-point chain.

use std::f64::consts::{PI, TAU};

use astro_float::BigFloat;
use num_bigint::BigUint;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coupling::m_steps_big;
use crate::error::{finite, invalid, positive, Error, Result};
use crate::flow::{flow_pair_raw, kernel_mc_shared, FlowParams, KernelEstimate, PairEvent};
use crate::geometry::{canonical, in_ball_inf, PairState};
use crate::precise::{self, Ctx, RM};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LyapunovParams {
    p: f64,
    s_star: f64,
    gamma: f64,
    k1: f64,
}

impl LyapunovParams {
    pub fn new(p: f64, s_star: f64, gamma: f64, k1: f64) -> Result<Self> {
        for (name, v) in [("p", p), ("s_star", s_star), ("gamma", gamma), ("K1", k1)] {
            positive(name, v)?;
        }
        if p >= 1.0 {
            return Err(invalid("p", "must lie in (0, 1)"));
        }
        if s_star > 1.0 {
            return Err(invalid("s_star", "must lie in (0, 1]"));
        }
        if gamma >= 1.0 {
            return Err(invalid("gamma", "must lie in (0, 1)"));
        }
        Ok(LyapunovParams { p, s_star, gamma, k1 })
    }

    pub fn p(&self) -> f64 {
        self.p
    }
    pub fn s_star(&self) -> f64 {
        self.s_star
    }
    pub fn gamma(&self) -> f64 {
        self.gamma
    }
    pub fn k1(&self) -> f64 {
        self.k1
    }
}

impl Default for LyapunovParams {
    /// `p = 1/2`, `s_* = 1/2`, `gamma = 0.9`, `K1 = s_*^{-p}`.
    fn default() -> Self {
        LyapunovParams {
            p: 0.5,
            s_star: 0.5,
            gamma: 0.9,
            k1: 0.5f64.powf(-0.5),
        }
    }
}

impl<'de> Deserialize<'de> for LyapunovParams {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(deny_unknown_fields)]
        struct Raw {
            p: f64,
            s_star: f64,
            gamma: f64,
            k1: f64,
        }
        let r = Raw::deserialize(d)?;
        LyapunovParams::new(r.p, r.s_star, r.gamma, r.k1).map_err(serde::de::Error::custom)
    }
}

/// `V` as a function of the `l_inf` separation.
pub fn lyapunov_of_separation(sep: f64, lp: &LyapunovParams) -> Result<f64> {
    finite("separation", sep)?;
    if sep <= 0.0 {
        return Err(Error::Diagonal);
    }
    Ok(sep.min(lp.s_star).powf(-lp.p))
}

pub fn lyapunov_v(z: &PairState, lp: &LyapunovParams) -> f64 {
    z.separation().min(lp.s_star).powf(-lp.p)
}

/// `sup |f| / (1 + beta V)` over paired samples `(f, V)`.
pub fn weighted_sup_norm(samples: &[(f64, f64)], beta: f64) -> f64 {
    samples
        .iter()
        .map(|(f, v)| f.abs() / (1.0 + beta * v))
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriftConfig {
    /// Points in the near-diagonal band and, separately, off the diagonal band.
    pub z_samples: u64,
    pub mc_samples: u64,
    /// Near-diagonal separations are log-uniform in `[near_min, near_max_fraction * s_*]`.
    pub near_min: f64,
    pub near_max_fraction: f64,
}

impl Default for DriftConfig {
    fn default() -> Self {
        DriftConfig {
            z_samples: 100,
            mc_samples: 10_000,
            near_min: 1e-8,
            near_max_fraction: 0.25,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriftPoint {
    pub separation: f64,
    pub v: f64,
    pub mean_image_v: f64,
    pub max_image_v: f64,
    pub near: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftReport {
    /// Largest `E[V(image)] / V` over near-diagonal points.
    pub gamma_hat: f64,
    /// Smallest `K` with `E[V(image)] <= gamma_hat V + K A^{2p}` at every point.
    pub k_hat: f64,
    /// Largest `E[V(image)] / V` over all points.
    pub worst_ratio: f64,
    pub off_diagonal_bound: f64,
    pub off_diagonal_max: f64,
    pub off_diagonal_ok: bool,
    pub points: Vec<DriftPoint>,
}

/// Pair at `l_inf` separation exactly `sep` (as a lift) in a random direction.
fn pair_at_separation<R: Rng>(r: &mut R, sep: f64) -> [f64; 4] {
    let x = [rng::angle(r), rng::angle(r)];
    let axis = r.random_range(0..2usize);
    let sign = if r.random::<bool>() { 1.0 } else { -1.0 };
    let mut u = [0.0; 2];
    u[axis] = sign;
    u[1 - axis] = 2.0 * r.random::<f64>() - 1.0;
    [x[0], x[1], canonical(x[0] + sep * u[0]), canonical(x[1] + sep * u[1])]
}

fn drift_point(c: [f64; 4], lp: &LyapunovParams, a: f64, mc: u64, seed: u64, stream: u64, near: bool) -> Result<DriftPoint> {
    let z = PairState::from_coords(c)?;
    // collect first: the serial sum keeps the result independent of the worker count
    let vals = (0..mc)
        .into_par_iter()
        .map(|j| -> Result<f64> {
            let mut r = rng::stream(seed, rng::pair_index(stream, j + 1));
            let mut ph = [0.0; 2];
            rng::fill_angles(&mut r, &mut ph);
            let mut w = c;
            flow_pair_raw(&mut w, &ph, a);
            Ok(lyapunov_v(&PairState::from_coords(w)?, lp))
        })
        .collect::<Result<Vec<f64>>>()?;
    let sum: f64 = vals.iter().sum();
    let max = vals.iter().copied().fold(0.0, f64::max);
    Ok(DriftPoint {
        separation: z.separation(),
        v: lyapunov_v(&z, lp),
        mean_image_v: sum / mc as f64,
        max_image_v: max,
        near,
    })
}

/// Monte Carlo of one-period drift `E[V(Phi_2(z))]` near and away from the diagonal.
pub fn drift_check(lp: &LyapunovParams, params: &FlowParams, cfg: &DriftConfig, seed: u64) -> Result<DriftReport> {
    if cfg.mc_samples < 1000 {
        return Err(invalid("mc_samples", "must be at least 1000"));
    }
    if cfg.z_samples == 0 {
        return Err(invalid("z_samples", "must be at least 1"));
    }
    positive("near_min", cfg.near_min)?;
    let hi = cfg.near_max_fraction * lp.s_star;
    if !(hi > cfg.near_min) {
        return Err(invalid("near_max_fraction", "band is empty"));
    }
    let a = params.amplitude();
    let mut points = Vec::with_capacity(2 * cfg.z_samples as usize);
    let (llo, lhi) = (cfg.near_min.ln(), hi.ln());
    for i in 0..cfg.z_samples {
        let mut r = rng::stream(seed, rng::pair_index(i, 0));
        let sep = (llo + (lhi - llo) * r.random::<f64>()).exp();
        let c = pair_at_separation(&mut r, sep);
        points.push(drift_point(c, lp, a, cfg.mc_samples, seed, i, true)?);
    }
    for i in 0..cfg.z_samples {
        let stream = cfg.z_samples + i;
        let mut r = rng::stream(seed, rng::pair_index(stream, 0));
        let c = loop {
            let mut c = [0.0; 4];
            rng::fill_angles(&mut r, &mut c);
            if PairState::from_coords(c)?.separation() >= lp.s_star {
                break c;
            }
        };
        points.push(drift_point(c, lp, a, cfg.mc_samples, seed, stream, false)?);
    }
    let ratio = |p: &DriftPoint| p.mean_image_v / p.v;
    let gamma_hat = points.iter().filter(|p| p.near).map(ratio).fold(0.0, f64::max);
    let worst_ratio = points.iter().map(ratio).fold(0.0, f64::max);
    let scale = a.powf(2.0 * lp.p);
    let k_hat = points
        .iter()
        .map(|p| (p.mean_image_v - gamma_hat * p.v).max(0.0) / scale)
        .fold(0.0, f64::max);
    let off_diagonal_bound = (1.0 + a).powf(2.0 * lp.p) * lp.s_star.powf(-lp.p);
    let off_diagonal_max = points.iter().filter(|p| !p.near).map(|p| p.max_image_v).fold(0.0, f64::max);
    Ok(DriftReport {
        gamma_hat,
        k_hat,
        worst_ratio,
        off_diagonal_bound,
        off_diagonal_ok: off_diagonal_max <= off_diagonal_bound,
        off_diagonal_max,
        points,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinorizationEstimate {
    pub rho_out: f64,
    /// Smallest kernel estimate over the start points.
    pub inf_prob: KernelEstimate,
    /// `inf_prob / (2 rho_out)^4`.
    pub lebesgue_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinorizationReport {
    pub rho_in: f64,
    pub n: usize,
    pub starts: usize,
    pub estimates: Vec<MinorizationEstimate>,
    /// `(2 pi)^{-4} / (4 A^6)`: terminal density at the special point from the
    /// shift Jacobian determinant.
    pub density_heuristic: f64,
}

/// Start points on the boundary shell of `B_inf(center, rho_in)`.
fn shell_points(center: &PairState, rho_in: f64, count: usize, seed: u64) -> Result<Vec<PairState>> {
    let c = center.coords();
    let mut out = vec![*center];
    let mut r = rng::stream(seed, u64::MAX);
    while out.len() < count {
        let k = r.random_range(0..4usize);
        let mut q = c;
        for (i, v) in q.iter_mut().enumerate() {
            let t = if i == k {
                if r.random::<bool>() { 1.0 } else { -1.0 }
            } else {
                2.0 * r.random::<f64>() - 1.0
            };
            *v += t * rho_in * (1.0 - 1e-9);
        }
        if let Ok(z) = PairState::from_coords(q) {
            out.push(z);
        }
    }
    Ok(out)
}

/// Infimum over start points near `center` of the `n`-period probability of
/// landing in `B_inf(center, rho_out)`, for each `rho_out` on shared draws.
#[allow(clippy::too_many_arguments)]
pub fn minorization_mc(
    center: &PairState,
    rho_in: f64,
    rho_outs: &[f64],
    n: usize,
    boundary_samples: usize,
    mc_samples: u64,
    params: &FlowParams,
    seed: u64,
) -> Result<MinorizationReport> {
    positive("rho_in", rho_in)?;
    for &r in rho_outs {
        positive("rho_out", r)?;
    }
    if mc_samples < 10_000 {
        return Err(invalid("mc_samples", "must be at least 10^4"));
    }
    let starts = shell_points(center, rho_in, boundary_samples.max(1), seed)?;
    let events: Vec<Box<dyn Fn(&PairState) -> bool + Sync>> = rho_outs
        .iter()
        .map(|&ro| {
            let c = *center;
            Box::new(move |s: &PairState| in_ball_inf(&c, ro, s)) as Box<dyn Fn(&PairState) -> bool + Sync>
        })
        .collect();
    let refs: Vec<PairEvent<'_>> = events.iter().map(|b| b.as_ref()).collect();
    let mut best: Vec<Option<KernelEstimate>> = vec![None; rho_outs.len()];
    for z in &starts {
        let est = kernel_mc_shared(z, n, &refs, mc_samples, seed, params)?;
        for (b, e) in best.iter_mut().zip(est) {
            if b.is_none_or(|cur| e.probability < cur.probability) {
                *b = Some(e);
            }
        }
    }
    let a = params.amplitude();
    Ok(MinorizationReport {
        rho_in,
        n,
        starts: starts.len(),
        estimates: rho_outs
            .iter()
            .zip(best)
            .map(|(&ro, b)| {
                let inf_prob = b.expect("at least one start point");
                let side = (2.0 * ro).min(2.0 * PI);
                MinorizationEstimate {
                    rho_out: ro,
                    lebesgue_ratio: inf_prob.probability / side.powi(4),
                    inf_prob,
                }
            })
            .collect(),
        density_heuristic: 1.0 / ((2.0 * PI).powi(4) * 4.0 * a.powi(6)),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreimageDensity {
    /// Distinct shift quadruples sending `center` to itself in two periods.
    pub preimages: usize,
    /// `(2 pi)^-4 sum 1/|det|` over the preimages found.
    pub density: f64,
    pub min_abs_det: f64,
    pub max_abs_det: f64,
}

/// Terminal density of the two-period kernel at `center`, started from
/// `center`, by change of variables over all shift preimages. Preimages are
/// found by damped Newton from `starts` uniform shift quadruples.
pub fn preimage_density(center: &PairState, params: &FlowParams, starts: u64, seed: u64) -> Result<PreimageDensity> {
    use crate::derivatives::{pair_flow_lifted, propagate_lifted, Order};
    use crate::geometry::{circle_dist, signed_diff};
    use nalgebra::DVector;

    let a = params.amplitude();
    let z = center.coords();
    let res = |xi: &[f64]| {
        let w = pair_flow_lifted(z, xi, a);
        DVector::from_fn(4, |k, _| signed_diff(w[k] - z[k]))
    };
    let found: Vec<Option<[f64; 4]>> = (0..starts)
        .into_par_iter()
        .map(|i| {
            let mut r = rng::stream(seed, i);
            let mut x = [0.0; 4];
            rng::fill_angles(&mut r, &mut x);
            for _ in 0..60 {
                let f = res(&x);
                let n0 = f.norm();
                if n0 < 1e-13 {
                    return Some(std::array::from_fn(|k| canonical(x[k])));
                }
                let j = propagate_lifted(z, &x, a, Order::First).d_shift;
                let s = j.lu().solve(&f)?;
                let mut lam = 1.0;
                loop {
                    let c: [f64; 4] = std::array::from_fn(|k| x[k] - lam * s[k]);
                    if res(&c).norm() < n0 || lam < 1e-6 {
                        x = c;
                        break;
                    }
                    lam /= 2.0;
                }
            }
            None
        })
        .collect();
    let mut sols: Vec<[f64; 4]> = Vec::new();
    for c in found.into_iter().flatten() {
        if !sols.iter().any(|s| (0..4).all(|k| circle_dist(s[k], c[k]) < 1e-7)) {
            sols.push(c);
        }
    }
    if sols.is_empty() {
        return Err(Error::NoConvergence(f64::NAN));
    }
    let dets: Vec<f64> = sols
        .iter()
        .map(|c| propagate_lifted(z, c, a, Order::First).d_shift.determinant().abs())
        .collect();
    Ok(PreimageDensity {
        preimages: sols.len(),
        density: dets.iter().map(|d| 1.0 / d).sum::<f64>() / TAU.powi(4),
        min_abs_det: dets.iter().copied().fold(f64::INFINITY, f64::min),
        max_abs_det: dets.iter().copied().fold(0.0, f64::max),
    })
}

/// A natural logarithm kept at full working precision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogValue {
    pub decimal: String,
    pub approx: f64,
}

impl LogValue {
    fn new(ctx: &mut Ctx, v: &BigFloat) -> Self {
        LogValue {
            decimal: ctx.to_decimal(v),
            approx: precise::to_f64(v),
        }
    }

    pub fn big(&self, ctx: &mut Ctx) -> Result<BigFloat> {
        ctx.parse(&self.decimal)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineInputs {
    pub amplitude: f64,
    pub lyapunov: LyapunovParams,
    /// The A-independent constant `C` of the minorization exponent.
    pub harris_c: f64,
    pub q: f64,
    /// `(C1, C2, C3, C4)` in `r1 = C1 A^-95`, `r2 = C2 A^-37`, `c1 = C3 A^-378`, `c2 = C4 A^-196`.
    pub radius_constants: [f64; 4],
    pub precision_bits: usize,
}

impl PipelineInputs {
    pub fn new(amplitude: f64) -> Self {
        PipelineInputs {
            amplitude,
            lyapunov: LyapunovParams::default(),
            harris_c: 1.0 + 1e-6,
            q: 3.0,
            radius_constants: [1.0; 4],
            precision_bits: 256,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HarrisConstants {
    pub inputs: PipelineInputs,
    pub log_r1: LogValue,
    pub log_r2: LogValue,
    pub log_c1: LogValue,
    pub log_c2: LogValue,
    pub log_pa: LogValue,
    /// Exact step count, decimal.
    pub m: String,
    pub log_m: LogValue,
    /// `M / A^95`.
    pub m_over_a95: f64,
    /// Separation floor `s_*'` of the sublevel set `{V <= R2}` in units of `A^-2`.
    pub s_star_prime: f64,
    /// `ln R2`, `R2 = 2 C K1 A^{2p} / (1 - gamma)`.
    pub log_r2_level: LogValue,
    pub log_gamma_pow_m: LogValue,
    /// `gamma^M` below `e^-1000` and treated as zero where it enters sums.
    pub gamma_pow_m_negligible: bool,
    pub log_lm: LogValue,
    pub log_alpha: LogValue,
    pub log_beta: LogValue,
    pub gamma0: f64,
    /// With the identity `L_M / R2 = (1 - gamma^M) / 4`.
    pub log_one_minus_alphabar: LogValue,
    /// With `L_M / R2` evaluated from the definitions of `L_M` and `R2`.
    pub log_one_minus_alphabar_literal: LogValue,
    pub log_zeta: LogValue,
    /// `ln` of the decay exponent, `-A^96`.
    pub log_rate: LogValue,
    /// `ln(alpha^2 / 4)`.
    pub log_harris_rate: LogValue,
    /// Log of the explicit chained minorization constant
    /// `p_A (c2 r1^4)^{ceil(2 pi / r1)} c1^{floor(M/2) - 1} c2`.
    pub log_minorization_explicit: LogValue,
    /// The exponent constant that chain implies: `-log / (A^95 ln A)`.
    pub implied_alpha_constant: f64,
}

pub fn sublevel_level(a: f64, lp: &LyapunovParams, c: f64) -> f64 {
    2.0 * c * lp.k1 * a.powf(2.0 * lp.p) / (1.0 - lp.gamma)
}

pub fn log_alpha(ctx: &mut Ctx, a: f64, c: f64) -> BigFloat {
    let an = ctx.num(a);
    let ln_a = ctx.ln(&an);
    let a95 = an.powi(95, ctx.p, RM);
    ctx.mul(&ctx.mul(&ctx.num(-c), &a95), &ln_a)
}

pub fn log_zeta(ctx: &mut Ctx, log_alpha: &BigFloat, q: f64) -> BigFloat {
    let w = (1.0 / (1.0 + q)).min(0.25);
    let two = ctx.mul(&ctx.num(2.0), log_alpha);
    let ln16 = ctx.ln(&ctx.num(16.0));
    let lw = ctx.ln(&ctx.num(w));
    ctx.add(&ctx.sub(&two, &ln16), &lw)
}

/// Evaluate every constant at `inputs.precision_bits`.
pub fn constants_pipeline(inputs: &PipelineInputs) -> Result<HarrisConstants> {
    let a = inputs.amplitude;
    finite("A", a)?;
    if a <= 1.0 {
        return Err(invalid("A", "must exceed 1"));
    }
    finite("C", inputs.harris_c)?;
    if inputs.harris_c < 1.0 {
        return Err(invalid("C", "must be at least 1"));
    }
    finite("q", inputs.q)?;
    if inputs.q < 0.0 {
        return Err(invalid("q", "must be non-negative"));
    }
    for v in inputs.radius_constants {
        positive("radius constant", v)?;
    }
    let lp = inputs.lyapunov;
    let (c, p, gamma) = (inputs.harris_c, lp.p, lp.gamma);
    let mut x = Ctx::new(inputs.precision_bits)?;

    let an = x.num(a);
    let ln_a = x.ln(&an);
    let ln2 = x.ln(&x.num(2.0));
    let ln4 = x.ln(&x.num(4.0));
    let lnk = |x: &mut Ctx, v: f64| {
        let n = x.num(v);
        x.ln(&n)
    };
    let log_pow = |x: &mut Ctx, k: f64, e: f64, ln_a: &BigFloat| {
        let lk = lnk(x, k);
        let t = x.mul(&x.num(e), ln_a);
        x.sub(&lk, &t)
    };
    let [k1c, k2c, k3c, k4c] = inputs.radius_constants;
    let log_r1 = log_pow(&mut x, k1c, 95.0, &ln_a);
    let log_r2 = log_pow(&mut x, k2c, 37.0, &ln_a);
    let log_c1 = log_pow(&mut x, k3c, 378.0, &ln_a);
    let log_c2 = log_pow(&mut x, k4c, 196.0, &ln_a);
    let log_pa = x.mul(&x.mul(&x.num(-c), &x.mul(&an, &an)), &ln_a);

    let ln_c = lnk(&mut x, c);
    let ln_k1 = lnk(&mut x, lp.k1);
    let ln_1mg = lnk(&mut x, 1.0 - gamma);
    let ln_gamma = lnk(&mut x, gamma);
    let two_p_ln_a = x.mul(&x.num(2.0 * p), &ln_a);
    // ln R2 = ln 2 + ln C + ln K1 + 2p ln A - ln(1 - gamma)
    let base = x.sub(&x.add(&x.add(&ln2, &ln_c), &ln_k1), &ln_1mg);
    let log_r2_level = x.add(&base, &two_p_ln_a);
    let s_star_prime = precise::to_f64(&x.exp(&x.div(&base, &x.num(-p))));

    // M needs r1 to ~A^95 relative accuracy, so its inputs use extra bits
    let mbits = inputs.precision_bits + (96.0 * a.log2()).ceil() as usize + 64;
    let mut xm = Ctx::new(mbits)?;
    let am = xm.num(a);
    let r1m = xm.div(&xm.num(k1c), &am.powi(95, mbits, RM));
    let basem = {
        let t = xm.num(2.0 * c * lp.k1 / 1.0);
        let d = xm.num(1.0 - gamma);
        xm.div(&t, &d)
    };
    let lb = xm.ln(&basem);
    let sp = xm.exp(&xm.div(&lb, &xm.num(-p)));
    let m = m_steps_big(&am, &sp, &r1m)?;
    let m_big = x.from_biguint(&m);
    let log_m = x.ln(&m_big);
    let a95 = an.powi(95, x.p, RM);
    let m_over_a95 = precise::to_f64(&x.div(&m_big, &a95));

    let log_g = x.mul(&m_big, &ln_gamma);
    let negligible = precise::to_f64(&log_g) < -1000.0;
    let log_1m_gm = if negligible {
        x.num(0.0)
    } else {
        let g = x.exp(&log_g);
        let one_minus = x.sub(&x.num(1.0), &g);
        x.ln(&one_minus)
    };
    // ln L_M = ln K1 + 2p ln A + ln(1 - gamma^M) - ln(1 - gamma)
    let log_lm = x.sub(&x.add(&x.add(&ln_k1, &two_p_ln_a), &log_1m_gm), &ln_1mg);
    let la = log_alpha(&mut x, a, c);
    let log_beta = x.sub(&x.sub(&la, &ln2), &log_lm);

    // paper identity: 1 - alphabar_2 = w / (4 (1 + w)), w = alpha / (1 - gamma^M)
    let log_w = x.sub(&la, &log_1m_gm);
    let w = x.exp(&log_w);
    let l1p = x.ln1p(&w);
    let first = x.sub(&la, &ln2);
    let second = x.sub(&x.sub(&log_w, &ln4), &l1p);
    let log_1m_ab = first.min(&second);
    // literal: 1 - alphabar_2 = u / (4 (2 + u)), u = R2 beta
    let log_u = x.sub(&x.sub(&x.add(&la, &log_r2_level), &ln2), &log_lm);
    let u = x.exp(&log_u);
    let two_plus_u = x.add(&x.num(2.0), &u);
    let ln_2pu = x.ln(&two_plus_u);
    let second_lit = x.sub(&x.sub(&log_u, &ln4), &ln_2pu);
    let log_1m_ab_lit = first.min(&second_lit);

    let log_zeta_v = log_zeta(&mut x, &la, inputs.q);
    let log_rate = an.powi(96, x.p, RM).neg();
    let log_harris_rate = x.sub(&x.mul(&x.num(2.0), &la), &ln4);

    // chained minorization constant of the small-set argument
    let k2 = {
        let r1 = x.exp(&log_r1);
        let pi = x.pi();
        let t = x.div(&x.mul(&x.num(2.0), &pi), &r1).ceil();
        precise::to_biguint(&t)?
    };
    let half_m = x.from_biguint(&(&m / 2u32));
    let k2b = x.from_biguint(&k2);
    let term1 = x.mul(&k2b, &x.add(&log_c2, &x.mul(&x.num(4.0), &log_r1)));
    let term2 = x.mul(&x.sub(&half_m, &x.num(1.0)), &log_c1);
    let log_min = x.add(&x.add(&x.add(&log_pa, &term1), &term2), &log_c2);
    let implied = precise::to_f64(&x.div(&log_min, &x.mul(&a95, &ln_a)).neg());

    let lv = |x: &mut Ctx, v: &BigFloat| LogValue::new(x, v);
    Ok(HarrisConstants {
        inputs: *inputs,
        log_r1: lv(&mut x, &log_r1),
        log_r2: lv(&mut x, &log_r2),
        log_c1: lv(&mut x, &log_c1),
        log_c2: lv(&mut x, &log_c2),
        log_pa: lv(&mut x, &log_pa),
        m: m.to_string(),
        log_m: lv(&mut x, &log_m),
        m_over_a95,
        s_star_prime,
        log_r2_level: lv(&mut x, &log_r2_level),
        log_gamma_pow_m: lv(&mut x, &log_g),
        gamma_pow_m_negligible: negligible,
        log_lm: lv(&mut x, &log_lm),
        log_alpha: lv(&mut x, &la),
        log_beta: lv(&mut x, &log_beta),
        gamma0: 0.75,
        log_one_minus_alphabar: lv(&mut x, &log_1m_ab),
        log_one_minus_alphabar_literal: lv(&mut x, &log_1m_ab_lit),
        log_zeta: lv(&mut x, &log_zeta_v),
        log_rate: lv(&mut x, &log_rate),
        log_harris_rate: lv(&mut x, &log_harris_rate),
        log_minorization_explicit: lv(&mut x, &log_min),
        implied_alpha_constant: implied,
    })
}

impl HarrisConstants {
    /// All log fields, in declaration order.
    pub fn logs(&self) -> Vec<(&'static str, &LogValue)> {
        vec![
            ("log_r1", &self.log_r1),
            ("log_r2", &self.log_r2),
            ("log_c1", &self.log_c1),
            ("log_c2", &self.log_c2),
            ("log_pa", &self.log_pa),
            ("log_m", &self.log_m),
            ("log_r2_level", &self.log_r2_level),
            ("log_gamma_pow_m", &self.log_gamma_pow_m),
            ("log_lm", &self.log_lm),
            ("log_alpha", &self.log_alpha),
            ("log_beta", &self.log_beta),
            ("log_one_minus_alphabar", &self.log_one_minus_alphabar),
            ("log_one_minus_alphabar_literal", &self.log_one_minus_alphabar_literal),
            ("log_zeta", &self.log_zeta),
            ("log_rate", &self.log_rate),
            ("log_harris_rate", &self.log_harris_rate),
            ("log_minorization_explicit", &self.log_minorization_explicit),
        ]
    }

    pub fn m_value(&self) -> Result<BigUint> {
        self.m.parse().map_err(|_| Error::Precision(format!("bad integer `{}`", self.m)))
    }
}

/// Largest relative difference between corresponding logs of two evaluations.
pub fn max_relative_log_difference(a: &HarrisConstants, b: &HarrisConstants) -> Result<f64> {
    let mut x = Ctx::new(a.inputs.precision_bits.max(b.inputs.precision_bits) + 64)?;
    let mut worst: f64 = 0.0;
    for ((_, la), (_, lb)) in a.logs().into_iter().zip(b.logs()) {
        let u = la.big(&mut x)?;
        let v = lb.big(&mut x)?;
        if u.is_zero() && v.is_zero() {
            continue;
        }
        let d = x.sub(&u, &v);
        let scale = if v.is_zero() { u.clone() } else { v.clone() };
        worst = worst.max(precise::to_f64(&x.div(&d, &scale)).abs());
    }
    Ok(worst)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditCheck {
    pub name: String,
    pub pass: bool,
    /// Both sides of the reduced comparison `lhs < rhs`, as logs unless noted.
    pub lhs: f64,
    pub rhs: f64,
    pub reduction: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub checks: Vec<AuditCheck>,
    /// Same inequalities with `L_M / R2 = (1 - gamma^M) / (2C)`.
    pub discrepancies: Vec<AuditCheck>,
    pub all_pass: bool,
}

fn check(name: &str, lhs: &BigFloat, rhs: &BigFloat, reduction: &str) -> AuditCheck {
    AuditCheck {
        name: name.into(),
        pass: lhs.cmp(rhs).is_some_and(|c| c < 0),
        lhs: precise::to_f64(lhs),
        rhs: precise::to_f64(rhs),
        reduction: reduction.into(),
    }
}

/// Evaluate the Harris inequalities from `log alpha`, `M`, `gamma` and `C`.
///
/// Each inequality is reduced algebraically to a comparison of quantities
/// that stay representable when `alpha` and `gamma^M` are far below any
/// floating-point range. With `g = gamma^M` and `w = alpha / (1 - g)`:
/// `1 - alphabar_2 = w / (4 (1 + w))`, so the lower bound
/// `1 - alpha/2 < alphabar_2` is `g < 1/2 + alpha` and the upper bound
/// `alphabar_2 < 1 - alpha/4` is `g > alpha`.
pub fn inequality_audit(hc: &HarrisConstants) -> Result<AuditReport> {
    let mut x = Ctx::new(hc.inputs.precision_bits)?;
    let la = hc.log_alpha.big(&mut x)?;
    let m = x.from_biguint(&hc.m_value()?);
    let gamma = hc.inputs.lyapunov.gamma;
    let c = hc.inputs.harris_c;
    let ln_gamma = {
        let g = x.num(gamma);
        x.ln(&g)
    };
    let log_g = x.mul(&m, &ln_gamma);
    let ln2 = x.ln(&x.num(2.0));
    let neg_ln2 = ln2.neg();
    let zero = x.num(0.0);
    let mut checks = Vec::new();

    checks.push(check(
        "gamma0_window",
        &log_g,
        &neg_ln2,
        "(1 + g)/2 < 3/4 < 1  <=>  ln g < -ln 2",
    ));

    // (1 + alpha)^M < 2  <=>  ln M + ln ln(1 + alpha) < ln ln 2
    let ln_m = x.ln(&m);
    let lnln2 = x.ln(&ln2);
    let ln_l1p = if precise::to_f64(&la) < -50.0 {
        // ln(1 + alpha) = alpha (1 - alpha/2 + ...), relative error below e^-50
        la.clone()
    } else {
        let al = x.exp(&la);
        let l = x.ln1p(&al);
        x.ln(&l)
    };
    checks.push(check(
        "one_plus_alpha_pow_m_below_two",
        &x.add(&ln_m, &ln_l1p),
        &lnln2,
        "M ln(1 + alpha) < ln 2, in logs",
    ));

    // g < 1/2 + alpha
    let half_plus_alpha = {
        let al = x.exp(&la);
        let h = x.add(&x.num(0.5), &al);
        x.ln(&h)
    };
    checks.push(check(
        "alphabar_lower",
        &log_g,
        &half_plus_alpha,
        "1 - alpha/2 < alphabar_2  <=>  g < 1/2 + alpha",
    ));
    checks.push(check(
        "alphabar_upper",
        &la,
        &log_g,
        "alphabar_2 < 1 - alpha/4  <=>  alpha < g",
    ));

    // alphabar >= alphabar_2 = 3/4 + 1/(4(1 + w)) > 1/2, and 1 - alpha/2 > 1/2 iff alpha < 1
    let stored = hc.log_one_minus_alphabar.big(&mut x)?;
    checks.push(check(
        "alphabar_above_half",
        &stored,
        &neg_ln2,
        "ln(1 - alphabar) < ln(1/2)",
    ));
    checks.push(check(
        "alpha_below_one",
        &la,
        &zero,
        "ln alpha < 0",
    ));

    // literal reading: u = alpha C / (1 - g)
    let g = if hc.gamma_pow_m_negligible { x.num(0.0) } else { x.exp(&log_g) };
    let alpha = x.exp(&la);
    let one = x.num(1.0);
    let cn = x.num(c);
    let mut discrepancies = Vec::new();
    // g + (1 - g)/C < 3/4
    let lit_g0 = x.add(&g, &x.div(&x.sub(&one, &g), &cn));
    discrepancies.push(check(
        "gamma0_window_literal",
        &lit_g0,
        &x.num(0.75),
        "g + (1 - g)/C < 3/4 (values, not logs)",
    ));
    // C (1 - 2 alpha) < 4 (1 - g)
    let lhs = x.mul(&cn, &x.sub(&one, &x.mul(&x.num(2.0), &alpha)));
    let rhs = x.mul(&x.num(4.0), &x.sub(&one, &g));
    discrepancies.push(check(
        "alphabar_lower_literal",
        &lhs,
        &rhs,
        "C (1 - 2 alpha) < 4 (1 - g) (values)",
    ));
    // 2 (1 - g) < C (1 - alpha)
    let lhs = x.mul(&x.num(2.0), &x.sub(&one, &g));
    let rhs = x.mul(&cn, &x.sub(&one, &alpha));
    discrepancies.push(check(
        "alphabar_upper_literal",
        &lhs,
        &rhs,
        "2 (1 - g) < C (1 - alpha) (values)",
    ));

    let all_pass = checks.iter().all(|c| c.pass);
    Ok(AuditReport {
        checks,
        discrepancies,
        all_pass,
    })
}
