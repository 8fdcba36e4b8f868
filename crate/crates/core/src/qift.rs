//! Quantitative inverse and implicit function theorems with explicit constants.
//!
//! For a `C^2` map `F` on `R^d` with `||F||_{C^2} <= D` and `|det DF(0)| >= r`:
//! `F` is injective on `B(0, C1 r)`, its image contains `B(F(0), C2 r^2)`,
//! and `|det DF|` stays within `[r/2, 3r/2]` on the smaller ball.

use std::cell::Cell;

use nalgebra::{DMatrix, DVector};
use ode_solvers::{Dopri5, OutputType, System};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use std::f64::consts::TAU;

use crate::derivatives::{derivative_bounds, pair_flow_lifted, propagate_lifted, Order};
use crate::error::{finite, invalid, positive, Error, Result};
use crate::flow::{fixed_point_shifts, FlowParams};
use crate::geometry::{PairState, ANTIPODAL_TOL};
use crate::rng;

pub type VecMap<'a> = &'a dyn Fn(&DVector<f64>) -> DVector<f64>;
pub type MatMap<'a> = &'a dyn Fn(&DVector<f64>) -> DMatrix<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QiftConstants {
    pub d: usize,
    pub big_d: f64,
    pub r: f64,
    pub c1: f64,
    pub c2: f64,
    pub c4: f64,
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|k| k as f64).product()
}

/// Dimensional factors `(c1(d), c2(d), c4(d))`.
pub fn dimensional_factors(d: usize) -> (f64, f64, f64) {
    let df = d as f64;
    let c4 = (df - 1.0).powf((df - 1.0) / 4.0) * df.powf(-(df - 1.0));
    let c1 = (c4 / 2.0).min(1.0 / (2.0 * df * factorial(d)));
    (c1, c1 * c4, c4)
}

pub fn qift_constants(d: usize, big_d: f64, r: f64) -> Result<QiftConstants> {
    if d == 0 {
        return Err(invalid("d", "must be at least 1"));
    }
    finite("D", big_d)?;
    if big_d < 1.0 {
        return Err(invalid("D", format!("must be at least 1, got {big_d}")));
    }
    positive("r", r)?;
    let hadamard = big_d.powi(d as i32);
    if r > hadamard {
        return Err(invalid("r", format!("{r} exceeds the Hadamard bound {hadamard}")));
    }
    let (c1, c2, c4) = dimensional_factors(d);
    let di = d as i32;
    Ok(QiftConstants {
        d,
        big_d,
        r,
        c1: c1 * big_d.powi(-di),
        c2: c2 * big_d.powi(-2 * di + 1),
        c4: c4 * big_d.powi(-(di - 1)),
    })
}

impl QiftConstants {
    /// `C1 r`.
    pub fn injectivity_radius(&self) -> f64 {
        self.c1 * self.r
    }

    /// `C2 r^2`.
    pub fn inclusion_radius(&self) -> f64 {
        self.c2 * self.r * self.r
    }

    /// `C1 C4 r^2`, the time horizon of the surjectivity path.
    pub fn reach_time(&self) -> f64 {
        self.c1 * self.c4 * self.r * self.r
    }
}

/// Uniform point in the Euclidean ball of radius `rad` in `R^d`.
pub fn sample_ball<R: Rng + ?Sized>(rng: &mut R, d: usize, rad: f64) -> DVector<f64> {
    let g = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
    let u: f64 = rng.random();
    let norm = g.norm().max(f64::MIN_POSITIVE);
    g * (rad * u.powf(1.0 / d as f64) / norm)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InjectivityReport {
    pub injective: bool,
    /// Smallest normalized `<F(x2) - F(x1), DF(x1)(x2 - x1)>`.
    pub worst_margin: f64,
    pub witness: Option<(Vec<f64>, Vec<f64>)>,
    pub pairs: u64,
}

/// Sample pairs in `B(0, C1 r)` and look for collisions or a non-positive
/// monotonicity margin.
pub fn check_injectivity(
    f: VecMap<'_>,
    df: MatMap<'_>,
    constants: &QiftConstants,
    pair_samples: u64,
    seed: u64,
) -> InjectivityReport {
    let rad = constants.injectivity_radius();
    let d = constants.d;
    let mut worst = f64::INFINITY;
    let mut witness = None;
    for i in 0..pair_samples {
        let mut r = rng::stream(seed, i);
        let x1 = sample_ball(&mut r, d, rad);
        let x2 = sample_ball(&mut r, d, rad);
        if x1 == x2 {
            continue;
        }
        let df_ = f(&x2) - f(&x1);
        let lin = df(&x1) * (&x2 - &x1);
        let denom = df_.norm() * lin.norm();
        let margin = if denom > 0.0 { df_.dot(&lin) / denom } else { 0.0 };
        if margin < worst {
            worst = margin;
            if margin <= 0.0 || df_.norm() == 0.0 {
                witness = Some((x1.as_slice().to_vec(), x2.as_slice().to_vec()));
            }
        }
    }
    InjectivityReport {
        injective: witness.is_none(),
        worst_margin: worst,
        witness,
        pairs: pair_samples,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReachResult {
    pub endpoint: Vec<f64>,
    /// `|F(z(t)) - F(0) - t v|`.
    pub residual: f64,
    pub t: f64,
    pub inside_ball: bool,
    pub min_abs_det: f64,
    pub accepted_steps: u32,
}

struct PathField<'a> {
    df: MatMap<'a>,
    v: DVector<f64>,
    min_det: &'a Cell<f64>,
}

impl System<f64, DVector<f64>> for PathField<'_> {
    fn system(&self, _t: f64, z: &DVector<f64>, dz: &mut DVector<f64>) {
        let j = (self.df)(z);
        let lu = j.lu();
        let det = lu.determinant().abs();
        self.min_det.set(self.min_det.get().min(det));
        match lu.solve(&self.v) {
            Some(s) => dz.copy_from(&s),
            None => dz.fill(0.0),
        }
    }
}

/// Follow `z' = DF(z)^{-1} v` from `0` until `t_max`, so that `F(z(t)) = F(0) + t v`.
pub fn reach_target(
    f: VecMap<'_>,
    df: MatMap<'_>,
    constants: &QiftConstants,
    v: &DVector<f64>,
    t_max: f64,
) -> Result<ReachResult> {
    let d = constants.d;
    if v.len() != d {
        return Err(invalid("v", format!("expected dimension {d}, got {}", v.len())));
    }
    let vn = v.norm();
    if (vn - 1.0).abs() > 1e-12 {
        return Err(invalid("v", format!("must be a unit vector, norm {vn}")));
    }
    finite("t_max", t_max)?;
    let limit = constants.reach_time();
    if !(0.0..=limit * (1.0 + 1e-12)).contains(&t_max) {
        return Err(Error::ReachTime { t: t_max, limit });
    }
    let z0 = DVector::zeros(d);
    let f0 = f(&z0);
    let min_det = Cell::new(f64::INFINITY);
    let floor = constants.r / 4.0;
    let (endpoint, steps) = if t_max == 0.0 {
        min_det.set(df(&z0).determinant().abs());
        (z0.clone(), 0)
    } else {
        let sys = PathField {
            df,
            v: v.clone(),
            min_det: &min_det,
        };
        let atol = 1e-14 * constants.injectivity_radius().max(f64::MIN_POSITIVE);
        let mut solver = Dopri5::new(sys, 0.0, t_max, t_max, z0.clone(), 1e-12, atol);
        solver.set_output(OutputType::Sparse);
        let stats = solver.integrate();
        if min_det.get() < floor {
            return Err(Error::Singular(min_det.get()));
        }
        let stats = stats.map_err(|e| Error::Integration(e.to_string()))?;
        let end = solver.y_out().last().cloned().unwrap_or(z0.clone());
        (end, stats.accepted_steps)
    };
    if min_det.get() < floor {
        return Err(Error::Singular(min_det.get()));
    }
    let residual = (f(&endpoint) - &f0 - v * t_max).norm();
    Ok(ReachResult {
        inside_ball: endpoint.norm() < constants.injectivity_radius(),
        endpoint: endpoint.as_slice().to_vec(),
        residual,
        t: t_max,
        min_abs_det: min_det.get(),
        accepted_steps: steps,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImplicitSolution {
    pub y: Vec<f64>,
    pub residual: f64,
    pub det_dy: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NewtonOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        NewtonOptions {
            tol: 1e-13,
            max_iter: 100,
        }
    }
}

/// Two-argument map `G(x, y)` and its `y`-Jacobian.
pub type ImplicitMap<'a> = &'a dyn Fn(&DVector<f64>, &DVector<f64>) -> DVector<f64>;
pub type ImplicitJac<'a> = &'a dyn Fn(&DVector<f64>, &DVector<f64>) -> DMatrix<f64>;

/// Damped Newton on `y -> G(x, y)` from `y0`, halving the step until `|G|` decreases.
pub fn newton_implicit(
    g: ImplicitMap<'_>,
    dyg: ImplicitJac<'_>,
    x: &DVector<f64>,
    y0: &DVector<f64>,
    opts: NewtonOptions,
) -> Result<ImplicitSolution> {
    let mut y = y0.clone();
    let mut res = g(x, &y).norm();
    let mut it = 0;
    while res > opts.tol {
        if it == opts.max_iter {
            return Err(Error::NoConvergence(res));
        }
        it += 1;
        let j = dyg(x, &y);
        let step = j.lu().solve(&g(x, &y)).ok_or(Error::Singular(0.0))?;
        let mut lambda = 1.0;
        loop {
            let cand = &y - &step * lambda;
            let r = g(x, &cand).norm();
            if r < res {
                y = cand;
                res = r;
                break;
            }
            lambda /= 2.0;
            if lambda < 1e-10 {
                // no decrease available at working precision
                return if res <= opts.tol * 1e3 {
                    Ok(solution(dyg, x, y, res, it))
                } else {
                    Err(Error::NoConvergence(res))
                };
            }
        }
    }
    Ok(solution(dyg, x, y, res, it))
}

fn solution(dyg: ImplicitJac<'_>, x: &DVector<f64>, y: DVector<f64>, res: f64, it: usize) -> ImplicitSolution {
    ImplicitSolution {
        det_dy: dyg(x, &y).determinant().abs(),
        y: y.as_slice().to_vec(),
        residual: res,
        iterations: it,
    }
}

/// `H(x_query)` for the implicit function through `(x0, y0)`, restricted to
/// the certified ball `|x_query - x0| < C2 r^2`.
pub fn implicit_solve(
    g: ImplicitMap<'_>,
    dyg: ImplicitJac<'_>,
    x0: &DVector<f64>,
    y0: &DVector<f64>,
    x_query: &DVector<f64>,
    constants: &QiftConstants,
) -> Result<ImplicitSolution> {
    let distance = (x_query - x0).norm();
    let radius = constants.inclusion_radius();
    if distance >= radius && distance > 0.0 {
        return Err(Error::OutsideCertifiedBall { distance, radius });
    }
    let base = g(x0, y0).norm();
    if base > 1e-9 {
        return Err(invalid("y0", format!("G(x0, y0) = {base:e} is not zero")));
    }
    newton_implicit(g, dyg, x_query, y0, NewtonOptions::default())
}

/// `G(x, y) = Phi_{xi* + y}(z* + x) - z*` on the universal cover, where `xi*`
/// are the two-period fixed-point shifts of the special pair `z*`.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowShiftMap {
    base: [f64; 4],
    xi: Vec<f64>,
    lift: [f64; 4],
    a: f64,
}

impl FlowShiftMap {
    pub fn special(params: &FlowParams) -> Result<Self> {
        let z = PairState::special();
        let xi = fixed_point_shifts(&z, 2, ANTIPODAL_TOL)?.radians();
        let base = z.coords();
        let a = params.amplitude();
        let img = pair_flow_lifted(base, &xi, a);
        let lift = std::array::from_fn(|k| ((img[k] - base[k]) / TAU).round() * TAU);
        Ok(FlowShiftMap { base, xi, lift, a })
    }

    pub fn g(&self, x: &DVector<f64>, y: &DVector<f64>) -> DVector<f64> {
        let z: [f64; 4] = std::array::from_fn(|k| self.base[k] + x[k]);
        let ph: Vec<f64> = self.xi.iter().zip(y.iter()).map(|(s, u)| s + u).collect();
        let w = pair_flow_lifted(z, &ph, self.a);
        DVector::from_fn(4, |k, _| w[k] - self.base[k] - self.lift[k])
    }

    /// `D_y G`.
    pub fn dy(&self, x: &DVector<f64>, y: &DVector<f64>) -> DMatrix<f64> {
        let z: [f64; 4] = std::array::from_fn(|k| self.base[k] + x[k]);
        let ph: Vec<f64> = self.xi.iter().zip(y.iter()).map(|(s, u)| s + u).collect();
        propagate_lifted(z, &ph, self.a, Order::First).d_shift
    }

    /// Constants with `D = max(1, b1, b2)` from the derivative recursion and
    /// `r = |det D_y G(0, 0)|`.
    pub fn constants(&self) -> Result<QiftConstants> {
        let b = derivative_bounds(self.a, 4);
        let zero = DVector::zeros(4);
        let r = self.dy(&zero, &zero).determinant().abs();
        qift_constants(4, b.first.max(b.second).max(1.0), r)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn dv(v: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(v)
    }

    #[test]
    fn one_dimensional_factors() {
        let k = qift_constants(1, 1.0, 1.0).unwrap();
        let (c1, c2, c4) = dimensional_factors(1);
        assert_eq!(c4, 1.0);
        assert_eq!((k.c1, k.c2, k.c4), (c1, c2, 1.0));
    }

    #[test]
    fn doubling_d_scales_c1() {
        for d in 1..=8 {
            let a = qift_constants(d, 3.0, 1.0).unwrap();
            let b = qift_constants(d, 6.0, 1.0).unwrap();
            assert_relative_eq!(a.c1 / b.c1, 2f64.powi(d as i32), max_relative = 1e-12);
        }
    }

    #[test]
    fn preconditions() {
        assert!(qift_constants(0, 1.0, 1.0).is_err());
        assert!(qift_constants(2, 0.5, 0.1).is_err());
        assert!(qift_constants(2, 2.0, 0.0).is_err());
        assert!(qift_constants(2, 2.0, 4.5).is_err());
        assert!(qift_constants(2, 2.0, 4.0).is_ok());
    }

    #[test]
    fn inclusion_within_injectivity_iff_c4_r_at_most_one() {
        for d in 1..=8 {
            for big_d in [1.0, 1.5, 2.0, 10.0, 120.0] {
                for frac in [1e-6, 0.01, 0.3, 1.0] {
                    let r = frac * f64::powi(big_d, d as i32);
                    let k = qift_constants(d, big_d, r).unwrap();
                    let holds = k.inclusion_radius() <= k.injectivity_radius() * (1.0 + 1e-12);
                    assert_eq!(holds, k.c4 * r <= 1.0 + 1e-12, "d={d} D={big_d} r={r}");
                    if big_d == 1.0 {
                        assert!(holds);
                    }
                }
            }
        }
    }

    #[test]
    fn identity_is_injective() {
        let k = qift_constants(3, 2.0, 1.0).unwrap();
        let f = |x: &DVector<f64>| x.clone();
        let df = |_: &DVector<f64>| DMatrix::identity(3, 3);
        let rep = check_injectivity(&f, &df, &k, 2000, 1);
        assert!(rep.injective && rep.worst_margin > 0.99);
    }

    #[test]
    fn quadratic_is_injective() {
        let k = qift_constants(1, 2.0, 1.0).unwrap();
        assert_relative_eq!(k.injectivity_radius(), 0.25);
        let f = |x: &DVector<f64>| x.map(|v| v + v * v / 2.0);
        let df = |x: &DVector<f64>| DMatrix::from_element(1, 1, 1.0 + x[0]);
        let rep = check_injectivity(&f, &df, &k, 5000, 2);
        assert!(rep.injective && rep.worst_margin > 0.0);
    }

    #[test]
    fn fold_outside_ball_is_harmless() {
        for kf in [1.5, 4.0, 20.0] {
            let k = qift_constants(1, kf, 1.0).unwrap();
            assert!(std::f64::consts::FRAC_PI_2 / kf > k.injectivity_radius());
            let f = move |x: &DVector<f64>| x.map(|v| (kf * v).sin() / kf);
            let df = move |x: &DVector<f64>| DMatrix::from_element(1, 1, (kf * x[0]).cos());
            assert!(check_injectivity(&f, &df, &k, 5000, 3).injective);
        }
        // with a ball that contains the fold a collision is found
        let wide = QiftConstants {
            c1: 10.0,
            ..qift_constants(1, 4.0, 1.0).unwrap()
        };
        let f = |x: &DVector<f64>| x.map(|v| (4.0 * v).sin() / 4.0);
        let df = |x: &DVector<f64>| DMatrix::from_element(1, 1, (4.0 * x[0]).cos());
        let rep = check_injectivity(&f, &df, &wide, 5000, 3);
        assert!(!rep.injective && rep.witness.is_some());
    }

    #[test]
    fn reach_linear_maps() {
        let k = QiftConstants {
            c1: 1.0,
            c4: 1.0,
            ..qift_constants(2, 3.0, 1.0).unwrap()
        };
        let v = dv(&[0.6, 0.8]);
        let id = |x: &DVector<f64>| x.clone();
        let did = |_: &DVector<f64>| DMatrix::identity(2, 2);
        let rr = reach_target(&id, &did, &k, &v, 0.5).unwrap();
        assert!((dv(&rr.endpoint) - &v * 0.5).norm() < 1e-14);
        let m = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 0.5, 3.0]);
        let lin = |x: &DVector<f64>| &m * x;
        let dlin = |_: &DVector<f64>| m.clone();
        let rr = reach_target(&lin, &dlin, &k, &v, 0.5).unwrap();
        let want = m.clone().lu().solve(&(&v * 0.5)).unwrap();
        assert!((dv(&rr.endpoint) - want).norm() < 1e-13);
        assert!(rr.residual < 1e-13);
        assert!(matches!(reach_target(&id, &did, &k, &v, 2.0), Err(Error::ReachTime { .. })));
        assert!(reach_target(&id, &did, &k, &dv(&[1.0, 1.0]), 0.1).is_err());
    }

    #[test]
    fn reach_nonlinear_and_singular() {
        let k = QiftConstants {
            c1: 1.0,
            c4: 1.0,
            ..qift_constants(2, 3.0, 1.0).unwrap()
        };
        let f = |x: &DVector<f64>| dv(&[x[0] + 0.3 * x[1] * x[1], x[1] + 0.2 * x[0].sin()]);
        let df = |x: &DVector<f64>| DMatrix::from_row_slice(2, 2, &[1.0, 0.6 * x[1], 0.2 * x[0].cos(), 1.0]);
        let rr = reach_target(&f, &df, &k, &dv(&[0.0, 1.0]), 0.4).unwrap();
        assert!(rr.residual < 1e-9, "{rr:?}");
        let flat = |x: &DVector<f64>| dv(&[x[0] - x[0].powi(3), x[1]]);
        let dflat = |x: &DVector<f64>| DMatrix::from_row_slice(2, 2, &[1.0 - 3.0 * x[0] * x[0], 0.0, 0.0, 1.0]);
        assert!(matches!(
            reach_target(&flat, &dflat, &k, &dv(&[1.0, 0.0]), 0.5),
            Err(Error::Singular(_))
        ));
    }

    #[test]
    fn implicit_examples() {
        let k = QiftConstants {
            c2: 1.0,
            ..qift_constants(1, 2.0, 1.0).unwrap()
        };
        let g = |x: &DVector<f64>, y: &DVector<f64>| y - x;
        let dg = |_: &DVector<f64>, _: &DVector<f64>| DMatrix::identity(1, 1);
        let s = implicit_solve(&g, &dg, &dv(&[0.0]), &dv(&[0.0]), &dv(&[0.3]), &k).unwrap();
        assert_relative_eq!(s.y[0], 0.3, epsilon = 1e-15);
        let circ = |x: &DVector<f64>, y: &DVector<f64>| dv(&[x[0] * x[0] + y[0] * y[0] - 1.0]);
        let dcirc = |_: &DVector<f64>, y: &DVector<f64>| DMatrix::from_element(1, 1, 2.0 * y[0]);
        for xq in [-0.5, -0.1, 0.2, 0.6] {
            let s = implicit_solve(&circ, &dcirc, &dv(&[0.0]), &dv(&[1.0]), &dv(&[xq]), &k).unwrap();
            assert!((s.y[0] - (1.0 - xq * xq).sqrt()).abs() < 1e-12);
        }
        assert!(matches!(
            implicit_solve(&circ, &dcirc, &dv(&[0.0]), &dv(&[1.0]), &dv(&[1.5]), &k),
            Err(Error::OutsideCertifiedBall { .. })
        ));
        assert!(implicit_solve(&circ, &dcirc, &dv(&[0.0]), &dv(&[0.5]), &dv(&[0.1]), &k).is_err());
    }

    #[test]
    fn newton_reports_failure() {
        // no real root
        let g = |_: &DVector<f64>, y: &DVector<f64>| dv(&[y[0] * y[0] + 1.0]);
        let dg = |_: &DVector<f64>, y: &DVector<f64>| DMatrix::from_element(1, 1, 2.0 * y[0]);
        assert!(newton_implicit(&g, &dg, &dv(&[0.0]), &dv(&[0.5]), NewtonOptions::default()).is_err());
    }
}
