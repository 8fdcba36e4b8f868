//! First and second derivatives of the two-point map by forward accumulation.
//!
//! Variables are ordered `(x1, x2, y1, y2, xi_1, ..., xi_n)`. Accumulation runs
//! on the universal cover; only reported positions are meant to be wrapped.

use nalgebra::{DMatrix, Matrix4};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, positive, Result};
use crate::flow::{FlowParams, ShiftSequence};
use crate::geometry::{signed_diff, sin_cos_circle, PairState};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Order {
    First,
    Second,
}

/// Second partials per output coordinate.
#[derive(Debug, Clone, PartialEq)]
pub struct SecondPartials {
    pub state_state: [Matrix4<f64>; 4],
    pub shift_shift: [DMatrix<f64>; 4],
    /// rows: state variable, columns: shift
    pub state_shift: [DMatrix<f64>; 4],
}

#[derive(Debug, Clone, PartialEq)]
pub struct DerivativeStack {
    pub steps: usize,
    /// Lifted terminal position.
    pub position: [f64; 4],
    pub d_state: Matrix4<f64>,
    pub d_shift: DMatrix<f64>,
    pub second: Option<SecondPartials>,
}

impl DerivativeStack {
    /// Full Jacobian `4 x (4 + steps)`.
    pub fn jacobian(&self) -> DMatrix<f64> {
        let mut j = DMatrix::zeros(4, 4 + self.steps);
        j.view_mut((0, 0), (4, 4)).copy_from(&self.d_state);
        j.view_mut((0, 4), (4, self.steps)).copy_from(&self.d_shift);
        j
    }

    /// Full Hessian of output `out` over all variables.
    pub fn hessian(&self, out: usize) -> Option<DMatrix<f64>> {
        let s = self.second.as_ref()?;
        let nv = 4 + self.steps;
        let mut h = DMatrix::zeros(nv, nv);
        h.view_mut((0, 0), (4, 4)).copy_from(&s.state_state[out]);
        h.view_mut((4, 4), (self.steps, self.steps)).copy_from(&s.shift_shift[out]);
        h.view_mut((0, 4), (4, self.steps)).copy_from(&s.state_shift[out]);
        h.view_mut((4, 0), (self.steps, 4)).copy_from(&s.state_shift[out].transpose());
        Some(h)
    }
}

/// `(moved, driver)` coordinate pairs for shear `step`.
#[inline]
fn roles(step: usize) -> [(usize, usize); 2] {
    if step % 2 == 0 {
        [(0, 1), (2, 3)]
    } else {
        [(1, 0), (3, 2)]
    }
}

/// Unwrapped two-point image after the shears `phases` (any count).
pub fn pair_flow_lifted(z: [f64; 4], phases: &[f64], amplitude: f64) -> [f64; 4] {
    let mut p = z;
    for (k, &s) in phases.iter().enumerate() {
        for (m, d) in roles(k) {
            p[m] += amplitude * sin_cos_circle(p[d] - s).0;
        }
    }
    p
}

/// Derivatives after the shears `phases` (any count, odd allowed).
pub fn propagate_lifted(z: [f64; 4], phases: &[f64], amplitude: f64, order: Order) -> DerivativeStack {
    let n = phases.len();
    let nv = 4 + n;
    let a = amplitude;
    let mut p = z;
    let mut grad: Vec<Vec<f64>> = (0..4)
        .map(|i| {
            let mut g = vec![0.0; nv];
            g[i] = 1.0;
            g
        })
        .collect();
    let second = order == Order::Second;
    let mut hess: Vec<Vec<f64>> = if second { vec![vec![0.0; nv * nv]; 4] } else { Vec::new() };
    let mut du = vec![0.0; nv];

    for (k, &s) in phases.iter().enumerate() {
        for (m, d) in roles(k) {
            let u = p[d] - s;
            let (sn, cs) = sin_cos_circle(u);
            du.copy_from_slice(&grad[d]);
            du[4 + k] -= 1.0;
            if second {
                // d^2 new = d^2 old + A cos(u) d^2 u - A sin(u) du du^T
                let (hd, hm) = if m < d {
                    let (lo, hi) = hess.split_at_mut(d);
                    (&hi[0], &mut lo[m])
                } else {
                    let (lo, hi) = hess.split_at_mut(m);
                    (&lo[d], &mut hi[0])
                };
                for i in 0..nv {
                    for j in 0..nv {
                        hm[i * nv + j] += a * cs * hd[i * nv + j] - a * sn * du[i] * du[j];
                    }
                }
            }
            for i in 0..nv {
                grad[m][i] += a * cs * du[i];
            }
            p[m] += a * sn;
        }
    }

    let d_state = Matrix4::from_fn(|r, c| grad[r][c]);
    let d_shift = DMatrix::from_fn(4, n, |r, c| grad[r][4 + c]);
    let second = second.then(|| {
        let h = |o: usize, i: usize, j: usize| hess[o][i * nv + j];
        SecondPartials {
            state_state: std::array::from_fn(|o| Matrix4::from_fn(|i, j| h(o, i, j))),
            shift_shift: std::array::from_fn(|o| DMatrix::from_fn(n, n, |i, j| h(o, 4 + i, 4 + j))),
            state_shift: std::array::from_fn(|o| DMatrix::from_fn(4, n, |i, j| h(o, i, 4 + j))),
        }
    });
    DerivativeStack {
        steps: n,
        position: p,
        d_state,
        d_shift,
        second,
    }
}

pub fn propagate_derivatives(
    z: &PairState,
    xi: &ShiftSequence,
    params: &FlowParams,
    order: Order,
) -> Result<DerivativeStack> {
    if xi.is_empty() {
        return Err(invalid("xi", "needs at least one period"));
    }
    Ok(propagate_lifted(z.coords(), &xi.radians(), params.amplitude(), order))
}

/// How finite differences treat output differences.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outputs {
    /// Differences taken through the nearest lift.
    Torus,
    Euclidean,
}

fn central(f: &dyn Fn(&[f64]) -> Vec<f64>, point: &[f64], steps: &[f64], outputs: Outputs) -> DMatrix<f64> {
    let f0 = f(point);
    let mut j = DMatrix::zeros(f0.len(), point.len());
    let mut q = point.to_vec();
    for c in 0..point.len() {
        let h = steps[c];
        q[c] = point[c] + h;
        let fp = f(&q);
        q[c] = point[c] - h;
        let fm = f(&q);
        q[c] = point[c];
        for r in 0..f0.len() {
            let d = fp[r] - fm[r];
            let d = match outputs {
                Outputs::Torus => signed_diff(d),
                Outputs::Euclidean => d,
            };
            j[(r, c)] = d / (2.0 * h);
        }
    }
    j
}

/// Central differences with a common step `h`; outputs are angles.
pub fn fd_jacobian(f: &dyn Fn(&[f64]) -> Vec<f64>, point: &[f64], h: f64) -> Result<DMatrix<f64>> {
    positive("h", h)?;
    Ok(central(f, point, &vec![h; point.len()], Outputs::Torus))
}

/// Steps `cbrt(eps) (1 + |x_i|)` with one Richardson refinement.
pub fn fd_jacobian_adaptive(f: &dyn Fn(&[f64]) -> Vec<f64>, point: &[f64], outputs: Outputs) -> DMatrix<f64> {
    let h: Vec<f64> = point.iter().map(|x| f64::EPSILON.cbrt() * (1.0 + x.abs())).collect();
    let half: Vec<f64> = h.iter().map(|v| v / 2.0).collect();
    let coarse = central(f, point, &h, outputs);
    let fine = central(f, point, &half, outputs);
    (fine * 4.0 - coarse) / 3.0
}

/// Hessians by differencing the analytic Jacobian; one matrix per output.
pub fn fd_hessians(z: [f64; 4], phases: &[f64], amplitude: f64) -> Vec<DMatrix<f64>> {
    let nv = 4 + phases.len();
    let mut point = z.to_vec();
    point.extend_from_slice(phases);
    let g = |v: &[f64]| -> Vec<f64> {
        let zz = [v[0], v[1], v[2], v[3]];
        let j = propagate_lifted(zz, &v[4..], amplitude, Order::First).jacobian();
        // row-major flatten
        (0..4).flat_map(|r| (0..nv).map(move |c| (r, c))).map(|(r, c)| j[(r, c)]).collect()
    };
    let big = fd_jacobian_adaptive(&g, &point, Outputs::Euclidean);
    (0..4)
        .map(|o| DMatrix::from_fn(nv, nv, |i, j| big[(o * nv + i, j)]))
        .collect()
}

/// `max |a - b| / max(1, max |a|)`.
pub fn relative_error(analytic: &DMatrix<f64>, other: &DMatrix<f64>) -> f64 {
    let scale = analytic.amax().max(1.0);
    (analytic - other).amax() / scale
}

/// Shift Jacobian of two periods at `((0,0),(pi,pi))` with zero phases.
pub fn shift_jacobian_at_special_point(params: &FlowParams) -> Matrix4<f64> {
    let st = propagate_lifted(PairState::special().coords(), &[0.0; 4], params.amplitude(), Order::First);
    Matrix4::from_fn(|r, c| st.d_shift[(r, c)])
}

pub fn special_point_determinant(params: &FlowParams) -> f64 {
    shift_jacobian_at_special_point(params).determinant()
}

/// Closed form of the special-point shift Jacobian.
pub fn special_jacobian_closed_form(a: f64) -> Matrix4<f64> {
    let (a2, a3, a4) = (a * a, a * a * a, a * a * a * a);
    Matrix4::new(
        -a3 - a, -a2, -a, 0.0,
        -a4 - 2.0 * a2, -a3 - a, -a2, -a,
        a3 + a, -a2, a, 0.0,
        -a4 - 2.0 * a2, a3 + a, -a2, a,
    )
}

/// Max entrywise deviation of the two-period shift Jacobian at random
/// antipodal pairs (with their fixed-point shifts) from the special value.
pub fn shift_jacobian_constancy_on_r(samples: u64, params: &FlowParams, seed: u64) -> Result<f64> {
    if samples == 0 {
        return Err(invalid("samples", "must be at least 1"));
    }
    let reference = shift_jacobian_at_special_point(params);
    let a = params.amplitude();
    Ok((0..samples)
        .into_par_iter()
        .map(|i| {
            let mut r = rng::stream(seed, i);
            let (x1, x2) = (rng::angle(&mut r), rng::angle(&mut r));
            constancy_deviation(x1, x2, a, &reference)
        })
        .reduce(|| 0.0, f64::max))
}

/// Deviation at the antipodal pair based at `(x1, x2)`.
pub fn constancy_deviation(x1: f64, x2: f64, a: f64, reference: &Matrix4<f64>) -> f64 {
    let z = [x1, x2, x1 + std::f64::consts::PI, x2 + std::f64::consts::PI];
    let st = propagate_lifted(z, &[x2, x1, x2, x1], a, Order::First);
    (0..4)
        .flat_map(|r| (0..4).map(move |c| (r, c)))
        .map(|(r, c)| (st.d_shift[(r, c)] - reference[(r, c)]).abs())
        .fold(0.0, f64::max)
}

/// Rigorous entrywise bounds on first and second derivatives of `steps`
/// shears over all variables.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DerivativeBounds {
    pub first: f64,
    pub second: f64,
}

pub fn derivative_bounds(amplitude: f64, steps: usize) -> DerivativeBounds {
    let (mut b1, mut b2) = (1.0f64, 0.0f64);
    for _ in 0..steps {
        let g = b1.max(1.0);
        b2 = (1.0 + amplitude) * b2 + amplitude * g * g;
        b1 = b1 + amplitude * g;
    }
    DerivativeBounds { first: b1, second: b2 }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub order: Order,
    pub n: usize,
    pub amplitude: f64,
    pub sampled_sup: f64,
    pub paper_envelope_exponent: i64,
    /// `None` when fewer than two amplitudes were swept.
    pub fitted_exponent: Option<f64>,
    pub fitted_prefactor: Option<f64>,
}

/// Least-squares slope and intercept.
pub fn linear_fit(x: &[f64], y: &[f64]) -> Option<(f64, f64)> {
    let n = x.len() as f64;
    if x.len() < 2 {
        return None;
    }
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    Some((slope, my - slope * mx))
}

/// Sup of shift derivatives over random `(z, xi)` for every `(n, A)`, and the
/// log-log slope against `A` for each `(order, n)`. The same draws are used
/// for every amplitude.
pub fn bound_sweep(n_list: &[usize], a_list: &[f64], samples: u64, seed: u64) -> Result<Vec<BoundReport>> {
    if n_list.is_empty() || a_list.is_empty() {
        return Err(invalid("lists", "must be non-empty"));
    }
    if samples == 0 {
        return Err(invalid("samples", "must be at least 1"));
    }
    for &a in a_list {
        positive("amplitude", a)?;
    }
    if n_list.contains(&0) {
        return Err(invalid("n", "must be at least 1"));
    }
    let mut out = Vec::new();
    for &n in n_list {
        let sups: Vec<(f64, f64)> = a_list
            .iter()
            .map(|&a| {
                (0..samples)
                    .into_par_iter()
                    .map(|i| {
                        let mut r = rng::stream(seed, rng::pair_index(n as u64, i));
                        let mut z = [0.0; 4];
                        rng::fill_angles(&mut r, &mut z);
                        let mut ph = vec![0.0; n];
                        rng::fill_angles(&mut r, &mut ph);
                        let st = propagate_lifted(z, &ph, a, Order::Second);
                        let s = st.second.as_ref().expect("second order requested");
                        let s2 = s.shift_shift.iter().map(|m| m.amax()).fold(0.0, f64::max);
                        (st.d_shift.amax(), s2)
                    })
                    .reduce(|| (0.0, 0.0), |p, q| (p.0.max(q.0), p.1.max(q.1)))
            })
            .collect();
        let lx: Vec<f64> = a_list.iter().map(|a| a.ln()).collect();
        for (order, env) in [(Order::First, n as i64), (Order::Second, 2 * n as i64 - 1)] {
            let ys: Vec<f64> = sups
                .iter()
                .map(|s| if order == Order::First { s.0 } else { s.1 })
                .collect();
            let ly: Vec<f64> = ys.iter().map(|v| v.ln()).collect();
            let fit = if ys.iter().all(|v| *v > 0.0) { linear_fit(&lx, &ly) } else { None };
            for (i, &a) in a_list.iter().enumerate() {
                out.push(BoundReport {
                    order,
                    n,
                    amplitude: a,
                    sampled_sup: ys[i],
                    paper_envelope_exponent: env,
                    fitted_exponent: fit.map(|f| f.0),
                    fitted_prefactor: fit.map(|f| f.1.exp()),
                });
            }
        }
    }
    Ok(out)
}
