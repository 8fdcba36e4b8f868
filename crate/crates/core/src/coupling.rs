//! Controllers that steer a pair into the antipodal set `{y - x = (pi, pi)}`,
//! chains of balls along that set, and the associated probability bounds.

use std::f64::consts::{PI, TAU};

use astro_float::BigFloat;
use num_bigint::BigUint;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, positive, Error, Result};
use crate::flow::{flow_pair_raw, shear_raw, FlowParams, ShiftSequence};
use crate::geometry::{
    canonical, circle_dist, dist_inf, segment_cover, signed_diff, PairState, TorusPoint,
};
use crate::precise::{self, Ctx};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CouplingPlan {
    pub start: PairState,
    pub steps: ShiftSequence,
    pub n1: usize,
    pub terminal: PairState,
    /// Distance of the terminal displacement from `(pi, pi)`, re-simulated.
    pub residual: f64,
}

/// Phase for one half step: move the relative coordinate `(ya - xa)` toward
/// `pi` using the driver coordinates `(xb, yb)`.
///
/// The relative change is `2A sin(d/2) cos(m - zeta)` with `d = yb - xb` and
/// `m` the midpoint, so any target within `2A |sin(d/2)|` is hit exactly and
/// larger targets are clamped to the extremal phase.
fn greedy_phase(xa: f64, ya: f64, xb: f64, yb: f64, a: f64) -> f64 {
    let d = signed_diff(yb - xb);
    let m = xb + d / 2.0;
    let need = signed_diff(PI - signed_diff(ya - xa));
    let reach = 2.0 * a * (d / 2.0).sin();
    if reach == 0.0 {
        return canonical(m);
    }
    let c = (need / reach).clamp(-1.0, 1.0);
    canonical(m - c.acos())
}

fn antipodal_residual(c: &[f64; 4]) -> f64 {
    circle_dist(c[2] - c[0], PI).max(circle_dist(c[3] - c[1], PI))
}

/// Drive `z` into the antipodal set with at most `max_steps` periods.
pub fn plan_to_r(z: &PairState, params: &FlowParams, s_star: f64, max_steps: usize) -> Result<CouplingPlan> {
    plan_to_r_tol(z, params, s_star, max_steps, 1e-12)
}

pub fn plan_to_r_tol(
    z: &PairState,
    params: &FlowParams,
    s_star: f64,
    max_steps: usize,
    tol: f64,
) -> Result<CouplingPlan> {
    positive("s_star", s_star)?;
    if max_steps == 0 {
        return Err(invalid("max_steps", "must be at least 1"));
    }
    let a = params.amplitude();
    let minimum = s_star / (a * a);
    let separation = z.separation();
    if separation < minimum {
        return Err(Error::SeparationTooSmall { separation, minimum });
    }
    let mut c = z.coords();
    let mut phases = Vec::new();
    while antipodal_residual(&c) > tol {
        if phases.len() / 2 == max_steps {
            return Err(Error::PlannerStalled(2 * max_steps));
        }
        for k in 0..2 {
            let zeta = if k == 0 {
                greedy_phase(c[0], c[2], c[1], c[3], a)
            } else {
                greedy_phase(c[1], c[3], c[0], c[2], a)
            };
            let (mut x, mut y) = ([c[0], c[1]], [c[2], c[3]]);
            shear_raw(&mut x, k, zeta, a);
            shear_raw(&mut y, k, zeta, a);
            c = [canonical(x[0]), canonical(x[1]), canonical(y[0]), canonical(y[1])];
            phases.push(zeta);
        }
    }
    let steps = ShiftSequence::from_radians(&phases)?;
    let mut t = z.coords();
    flow_pair_raw(&mut t, &phases, a);
    Ok(CouplingPlan {
        start: *z,
        n1: phases.len() / 2,
        residual: antipodal_residual(&t),
        terminal: PairState::from_coords(t)?,
        steps,
    })
}

/// `ceil(6 pi / (A sin(s_star / A^2)))`, the reference step budget.
pub fn plan_step_bound(a: f64, s_star: f64) -> f64 {
    (6.0 * PI / (a * (s_star / (a * a)).sin())).ceil()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TubeReport {
    pub n1: usize,
    /// Tube radius `A^{-2 N1} r1`.
    pub paper_radius: f64,
    /// `2 N1 log(radius / (2 pi))` for the radius above.
    pub log_probability: f64,
    /// Radius `r1 / ((1 + A)^{2 N1} - 1)` for which deviation `<= r1` is guaranteed.
    pub certified_radius: f64,
    pub certified_log_probability: f64,
}

fn log_tube(n1: usize, radius: f64) -> f64 {
    if n1 == 0 {
        0.0
    } else {
        2.0 * n1 as f64 * (radius / TAU).ln()
    }
}

/// Log-probability that uniform shifts land in the `l_inf` tube around the plan.
///
/// Each shear satisfies `e' <= (1 + A) e + A rho` for state error `e` and
/// phase error `rho`, so after `2 N1` shears the terminal moves by at most
/// `((1 + A)^{2 N1} - 1) rho`; the certified radius inverts this.
pub fn tube_probability(plan: &CouplingPlan, r1: f64, params: &FlowParams) -> Result<TubeReport> {
    positive("r1", r1)?;
    let a = params.amplitude();
    let n1 = plan.n1;
    let m = 2 * n1 as i32;
    let paper_radius = r1 * a.powi(-m);
    let growth = (1.0 + a).powi(m) - 1.0;
    let certified_radius = if n1 == 0 { f64::INFINITY } else { r1 / growth };
    Ok(TubeReport {
        n1,
        paper_radius,
        log_probability: log_tube(n1, paper_radius),
        certified_radius,
        certified_log_probability: log_tube(n1, certified_radius),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TubeCheck {
    pub draws: u64,
    pub violations: u64,
    pub max_deviation: f64,
}

/// Perturb every shift uniformly within `radius` and measure how far the
/// terminal moves.
pub fn tube_deviation(plan: &CouplingPlan, radius: f64, draws: u64, seed: u64, params: &FlowParams, r1: f64) -> TubeCheck {
    let a = params.amplitude();
    let base = plan.steps.radians();
    let start = plan.start.coords();
    let terminal = plan.terminal;
    let (violations, max_deviation) = (0..draws)
        .into_par_iter()
        .map(|i| {
            let mut r = rng::stream(seed, i);
            let ph: Vec<f64> = base
                .iter()
                .map(|s| s + radius * (2.0 * rand::Rng::random::<f64>(&mut r) - 1.0))
                .collect();
            let mut c = start;
            flow_pair_raw(&mut c, &ph, a);
            let t = terminal.coords();
            let dev = (0..4).map(|k| circle_dist(c[k], t[k])).fold(0.0, f64::max);
            ((dev > r1) as u64, dev)
        })
        .reduce(|| (0, 0.0), |p, q| (p.0 + q.0, p.1.max(q.1)));
    TubeCheck {
        draws,
        violations,
        max_deviation,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BallChain {
    pub centers: Vec<PairState>,
    pub radius: f64,
    pub n2: usize,
}

/// Nearest antipodal pair in `l_inf`: split the defect evenly between `x` and `y`.
pub fn project_to_r(z: &PairState) -> (PairState, f64) {
    let c = z.coords();
    let e = [signed_diff(c[2] - c[0] - PI), signed_diff(c[3] - c[1] - PI)];
    let x = TorusPoint::from_finite([c[0] + e[0] / 2.0, c[1] + e[1] / 2.0]);
    let dist = e[0].abs().max(e[1].abs()) / 2.0;
    (PairState::antipodal(x), dist)
}

/// Balls of radius `r1` centred on antipodal pairs whose base points walk
/// from the projection of `z_prime` to the origin.
pub fn ball_chain(z_prime: &PairState, r1: f64) -> Result<BallChain> {
    positive("r1", r1)?;
    let (proj, dist) = project_to_r(z_prime);
    if dist >= r1 {
        return Err(invalid("z_prime", format!("distance {dist:e} to the antipodal set exceeds r1 = {r1:e}")));
    }
    let origin = TorusPoint::new(0.0, 0.0)?;
    let pts = segment_cover(&proj.x(), &origin, r1)?;
    let d = crate::geometry::geodesic_delta(&proj.x(), &origin);
    let len = d[0].hypot(d[1]);
    let centers = pts.into_iter().map(PairState::antipodal).collect();
    Ok(BallChain {
        centers,
        radius: r1,
        n2: (len / r1).ceil() as usize,
    })
}

/// Area of the intersection of two `l_inf` discs of radius `r` whose centres
/// differ by `delta`.
pub fn linf_overlap_area(r: f64, delta: [f64; 2]) -> f64 {
    let side = |t: f64| (2.0 * r - t.abs()).max(0.0);
    side(delta[0]) * side(delta[1])
}

/// `ceil(6 pi / (A sin(s_star / A^2))) + 2 ceil(2 pi / r1) + 2`, exactly.
pub fn m_steps(a: f64, s_star: f64, r1: f64) -> Result<BigUint> {
    positive("A", a)?;
    positive("s_star", s_star)?;
    positive("r1", r1)?;
    let ctx = Ctx::new(128)?;
    m_steps_big(&ctx.num(a), &ctx.num(s_star), &ctx.num(r1))
}

/// As [`m_steps`] for multi-precision inputs; precision grows with the result.
pub fn m_steps_big(a: &BigFloat, s_star: &BigFloat, r1: &BigFloat) -> Result<BigUint> {
    let mut bits = 256;
    loop {
        let mut c = Ctx::new(bits)?;
        let pi = c.pi();
        let a2 = c.mul(a, a);
        let arg = c.div(s_star, &a2);
        let s = c.sin(&arg);
        let den = c.mul(a, &s);
        let t1 = c.div(&c.mul(&c.num(6.0), &pi), &den).ceil();
        let t2 = c.div(&c.mul(&c.num(2.0), &pi), r1).ceil();
        let need = precise::int_bits(&t1).max(precise::int_bits(&t2)) + 128;
        if need <= bits {
            let t1 = precise::to_biguint(&t1)?;
            let t2 = precise::to_biguint(&t2)?;
            return Ok(t1 + t2 * 2u32 + 2u32);
        }
        bits = need;
    }
}

/// Re-simulate a plan and report its distance from the antipodal set.
pub fn replay_residual(plan: &CouplingPlan, params: &FlowParams) -> f64 {
    let mut c = plan.start.coords();
    flow_pair_raw(&mut c, &plan.steps.radians(), params.amplitude());
    let reached = PairState::from_coords(c).map(|p| dist_inf(&p, &plan.terminal)).unwrap_or(f64::INFINITY);
    antipodal_residual(&c).max(reached)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::{flow_pair, kernel_mc};
    use approx::assert_relative_eq;

    fn params(a: f64) -> FlowParams {
        FlowParams::new(a).unwrap()
    }

    #[test]
    fn already_antipodal_is_empty() {
        let z = PairState::special();
        let p = plan_to_r(&z, &params(3.0), 1.0, 10).unwrap();
        assert_eq!(p.n1, 0);
        assert!(p.steps.is_empty());
        assert_eq!(p.terminal, z);
    }

    #[test]
    fn half_offset_reaches_in_one_period() {
        let z = PairState::from_coords([0.0, 0.0, 0.0, PI]).unwrap();
        for a in [PI / 2.0, 2.0, 5.0] {
            let p = plan_to_r(&z, &params(a), 1.0, 10).unwrap();
            assert_eq!(p.n1, 1);
            assert!(p.residual < 1e-9);
            // midpoint pi/2 minus arccos gives the arcsine phase
            let want = (PI / (2.0 * a)).asin();
            assert!(circle_dist(p.steps.radians()[0], want) < 1e-12);
        }
    }

    #[test]
    fn plans_replay_and_respect_bound() {
        for a in [4.0, 8.0] {
            let bound = plan_step_bound(a, 1.0);
            for i in 0..200u64 {
                let mut r = rng::stream(77, i);
                let z = loop {
                    let mut c = [0.0; 4];
                    rng::fill_angles(&mut r, &mut c);
                    let z = PairState::from_coords(c).unwrap();
                    if z.separation() >= 1.0 / (a * a) {
                        break z;
                    }
                };
                let p = plan_to_r(&z, &params(a), 1.0, 1000).unwrap();
                assert!(p.residual < 1e-9);
                assert!((p.n1 as f64) <= bound);
                let again = flow_pair(&z, &p.steps, &params(a)).unwrap();
                assert!(again.antipodal_deviation() <= p.residual + 1e-15);
                assert!(replay_residual(&p, &params(a)) < 1e-9);
            }
        }
    }

    #[test]
    fn separation_precondition() {
        let z = PairState::from_coords([0.0, 0.0, 1e-4, 0.0]).unwrap();
        assert!(matches!(
            plan_to_r(&z, &params(4.0), 1.0, 10),
            Err(Error::SeparationTooSmall { .. })
        ));
        assert!(plan_to_r(&PairState::special(), &params(4.0), 1.0, 0).is_err());
    }

    #[test]
    fn vertical_phase_keeps_horizontal() {
        let a = 3.0;
        let z = PairState::from_coords([0.4, 1.0, 0.4 + PI, 2.0]).unwrap();
        let p = plan_to_r(&z, &params(a), 1.0, 10).unwrap();
        let ph = p.steps.radians();
        let mut x = [0.4, 1.0];
        let mut y = [0.4 + PI, 2.0];
        for (k, s) in ph.iter().enumerate() {
            shear_raw(&mut x, k, *s, a);
            shear_raw(&mut y, k, *s, a);
            assert!(circle_dist(y[0] - x[0], PI) < 1e-12);
        }
    }

    #[test]
    fn tube_formula_examples() {
        let z = PairState::from_coords([0.0, 0.0, 0.0, PI]).unwrap();
        let p = plan_to_r(&z, &params(2.0), 1.0, 10).unwrap();
        let t = tube_probability(&p, 0.1, &params(2.0)).unwrap();
        assert_relative_eq!(t.log_probability, 2.0 * (0.025f64 / TAU).ln(), max_relative = 1e-14);
        let empty = plan_to_r(&PairState::special(), &params(2.0), 1.0, 10).unwrap();
        assert_eq!(tube_probability(&empty, 0.1, &params(2.0)).unwrap().log_probability, 0.0);
        assert!(tube_probability(&p, 0.0, &params(2.0)).is_err());
    }

    #[test]
    fn certified_tube_keeps_terminal_close() {
        let a = 4.0;
        let z = PairState::from_coords([0.3, 1.0, 2.0, 5.0]).unwrap();
        let p = plan_to_r(&z, &params(a), 1.0, 100).unwrap();
        let t = tube_probability(&p, 1e-3, &params(a)).unwrap();
        let chk = tube_deviation(&p, t.certified_radius, 2000, 5, &params(a), 1e-3);
        assert_eq!(chk.violations, 0);
        assert!(chk.max_deviation <= 1e-3);
    }

    #[test]
    fn tube_bound_is_a_lower_bound() {
        let a = 2.0;
        let z = PairState::from_coords([0.0, 0.0, 0.0, PI]).unwrap();
        let p = plan_to_r(&z, &params(a), 1.0, 10).unwrap();
        let r1 = 0.5;
        let t = tube_probability(&p, r1, &params(a)).unwrap();
        let term = p.terminal;
        let est = kernel_mc(&z, p.n1, &|s| dist_inf(s, &term) < r1, 1_000_000, 13, &params(a)).unwrap();
        assert!(est.probability >= t.log_probability.exp());
    }

    #[test]
    fn chain_examples() {
        let c = ball_chain(&PairState::special(), 0.1).unwrap();
        assert_eq!((c.centers.len(), c.n2), (1, 0));
        let x = TorusPoint::new(1.0, 0.0).unwrap();
        let c = ball_chain(&PairState::antipodal(x), 0.3).unwrap();
        assert_eq!(c.n2, 4);
        assert!(dist_inf(c.centers.last().unwrap(), &PairState::special()) < 0.3);
        for w in c.centers.windows(2) {
            assert!(w[0].x().dist_l2(&w[1].x()) <= 0.3 + 1e-12);
            assert!(w[1].is_antipodal(0.0));
        }
        let far = PairState::from_coords([0.0, 0.0, 1.0, 1.0]).unwrap();
        assert!(ball_chain(&far, 0.1).is_err());
    }

    #[test]
    fn overlap_area_of_consecutive_balls() {
        let r = 0.2;
        let mut worst = f64::INFINITY;
        for k in 0..=360 {
            let th = k as f64 * TAU / 360.0;
            let a = linf_overlap_area(r, [r * th.cos(), r * th.sin()]);
            // direct grid integration of the intersection
            if k % 45 == 0 {
                let n = 400;
                let h = 4.0 * r / n as f64;
                let mut cnt = 0usize;
                for i in 0..n {
                    for j in 0..n {
                        let p = [-2.0 * r + (i as f64 + 0.5) * h, -2.0 * r + (j as f64 + 0.5) * h];
                        let inside = |c: [f64; 2]| (p[0] - c[0]).abs() < r && (p[1] - c[1]).abs() < r;
                        if inside([0.0, 0.0]) && inside([r * th.cos(), r * th.sin()]) {
                            cnt += 1;
                        }
                    }
                }
                assert_relative_eq!(cnt as f64 * h * h, a, max_relative = 2e-2);
            }
            worst = worst.min(a);
        }
        assert!(worst >= r * r);
    }

    #[test]
    fn m_steps_examples() {
        assert_eq!(m_steps(2.0, 1.0, 0.5).unwrap(), BigUint::from(67u32));
        let a = m_steps(2.0, 1.0, 0.5).unwrap();
        let b = m_steps(2.0, 1.0, 0.25).unwrap();
        assert_eq!(b - a, BigUint::from(2u32 * 26 - 2 * 13));
        assert!(m_steps(0.0, 1.0, 0.5).is_err());
    }

    #[test]
    fn m_steps_huge_is_exact() {
        let mut c = Ctx::new(1024).unwrap();
        let a = c.num(100.0);
        let r1 = c.div(&c.num(1.0), &a.powi(95, 1024, precise::RM));
        let m = m_steps_big(&a, &c.num(0.5), &r1).unwrap();
        // the r1 term dominates: M ~ 4 pi 10^190
        let digits = m.to_string();
        assert_eq!(digits.len(), 192);
        assert!(digits.starts_with("1256637"));
        let _ = c.pi();
    }
}
