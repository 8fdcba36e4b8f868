use nalgebra::DVector;
use serde::Serialize;
use serde_json::{json, Value};
use shearmix::coupling::{ball_chain, plan_step_bound, plan_to_r, tube_probability};
use shearmix::derivatives::{
    fd_hessians, fd_jacobian_adaptive, pair_flow_lifted, propagate_lifted, relative_error,
    shift_jacobian_at_special_point, shift_jacobian_constancy_on_r, special_jacobian_closed_form,
    special_point_determinant, Order, Outputs,
};
use shearmix::flow::{fixed_point_shifts, flow_pair, FlowParams};
use shearmix::geometry::{dist_inf, PairState, TorusPoint, ANTIPODAL_TOL};
use shearmix::harris::{
    constants_pipeline, drift_check, inequality_audit, minorization_mc, DriftConfig, PipelineInputs,
};
use shearmix::mixing::{amplitude_sweep, refinement_check, write_sweep_csv, SweepConfig};
use shearmix::qift::{check_injectivity, implicit_solve, reach_target, FlowShiftMap};
use shearmix::rng;

use crate::config::{ConstantsParams, CoupleParams, DriftParams, Format, MinorizeParams, SweepParams, VerifyParams};
use crate::{CliError, Outcome, RunOpts};

const PLAN_RESIDUAL_TOL: f64 = 1e-9;

fn to_json<T: Serialize>(v: &T) -> Result<Vec<u8>, CliError> {
    let mut body = serde_json::to_vec_pretty(v).map_err(|e| CliError::Io(e.to_string()))?;
    body.push(b'\n');
    Ok(body)
}

fn json_only(o: &RunOpts) -> Result<(), CliError> {
    match o.format {
        Some(Format::Csv) => Err(CliError::Usage("this command only writes json".into())),
        _ => Ok(()),
    }
}

/// Invalid inputs exit 2, failures found while running exit 1.
fn run_err(e: shearmix::error::Error) -> CliError {
    use shearmix::error::Error as E;
    match e {
        E::InvalidParameter { .. } | E::NonFinite(_) | E::GridSize(_) | E::Diagonal | E::OddShiftLength(_) => {
            CliError::Config(e.to_string())
        }
        _ => CliError::Failed(e.to_string()),
    }
}

fn params(a: f64) -> Result<FlowParams, CliError> {
    FlowParams::new(a).map_err(run_err)
}

#[derive(Debug, Serialize)]
struct Check {
    name: &'static str,
    pass: bool,
    value: f64,
    /// `"<="` or `">="`: how `value` must compare with `tolerance`.
    comparison: &'static str,
    tolerance: f64,
    witness: Value,
}

fn at_most(name: &'static str, value: f64, tolerance: f64, witness: Value) -> Check {
    Check {
        name,
        pass: value <= tolerance,
        value,
        comparison: "<=",
        tolerance,
        witness,
    }
}

fn at_least(name: &'static str, value: f64, tolerance: f64, witness: Value) -> Check {
    Check {
        name,
        pass: value >= tolerance,
        value,
        comparison: ">=",
        tolerance,
        witness,
    }
}

/// Keep the larger error together with its witness.
fn worse(cur: &mut (f64, Value), err: f64, w: impl FnOnce() -> Value) {
    if err > cur.0 || (err.is_nan() && !cur.0.is_nan()) {
        *cur = (err, w());
    }
}

fn fixed_point_check(p: &VerifyParams, seed: u64) -> Result<Check, CliError> {
    let mut worst = (0.0, Value::Null);
    for (k, &a) in p.fixed_point_amplitudes.iter().enumerate() {
        let fp = params(a)?;
        for i in 0..p.fixed_point_samples {
            let mut r = rng::stream(seed, rng::pair_index(k as u64, i));
            let x = TorusPoint::new(rng::angle(&mut r), rng::angle(&mut r)).map_err(run_err)?;
            let z = PairState::antipodal(x);
            let xi = fixed_point_shifts(&z, 2, ANTIPODAL_TOL).map_err(run_err)?;
            let err = dist_inf(&flow_pair(&z, &xi, &fp).map_err(run_err)?, &z);
            worse(&mut worst, err, || json!({"amplitude": a, "z": z.coords(), "shifts": xi.radians()}));
        }
    }
    Ok(at_most("fixed_point_identity", worst.0, p.fixed_point_tol, worst.1))
}

fn determinant_checks(p: &VerifyParams) -> Result<[Check; 2], CliError> {
    let mut det = (0.0, Value::Null);
    let mut mat = (0.0, Value::Null);
    for &a in &p.determinant_amplitudes {
        let fp = params(a)?;
        let want = 4.0 * a.powi(6);
        let got = special_point_determinant(&fp);
        worse(&mut det, (got + want).abs() / want, || json!({"amplitude": a, "det": got, "expected": -want}));
        let j = shift_jacobian_at_special_point(&fp);
        let c = special_jacobian_closed_form(a);
        worse(&mut mat, (j - c).amax() / c.amax(), || json!({"amplitude": a}));
    }
    Ok([
        at_most("special_point_determinant", det.0, p.determinant_tol, det.1),
        at_most("special_point_jacobian", mat.0, p.determinant_tol, mat.1),
    ])
}

fn constancy_check(p: &VerifyParams, seed: u64) -> Result<Check, CliError> {
    let mut worst = (0.0, Value::Null);
    for &a in &p.constancy_amplitudes {
        let dev = shift_jacobian_constancy_on_r(p.constancy_samples, &params(a)?, seed).map_err(run_err)?;
        worse(&mut worst, dev, || json!({"amplitude": a}));
    }
    Ok(at_most("jacobian_constant_on_antipodal_set", worst.0, p.constancy_tol, worst.1))
}

fn fd_checks(p: &VerifyParams, seed: u64) -> Result<[Check; 2], CliError> {
    if !(p.fd_max_amplitude > 0.0 && p.fd_max_amplitude.is_finite()) {
        return Err(CliError::Config("fd_max_amplitude must be positive".into()));
    }
    let mut first = (0.0, Value::Null);
    let mut second = (0.0, Value::Null);
    for &n in &p.fd_steps {
        for i in 0..p.fd_samples {
            let mut r = rng::stream(seed, rng::pair_index(n as u64, i));
            let mut z = [0.0; 4];
            rng::fill_angles(&mut r, &mut z);
            let mut ph = vec![0.0; n];
            rng::fill_angles(&mut r, &mut ph);
            let a = p.fd_max_amplitude * (1.0 - rand::Rng::random::<f64>(&mut r));
            let st = propagate_lifted(z, &ph, a, Order::Second);
            let mut pt = z.to_vec();
            pt.extend_from_slice(&ph);
            let f = |v: &[f64]| pair_flow_lifted([v[0], v[1], v[2], v[3]], &v[4..], a).to_vec();
            let e1 = relative_error(&st.jacobian(), &fd_jacobian_adaptive(&f, &pt, Outputs::Torus));
            let w = || json!({"shears": n, "amplitude": a, "z": z, "phases": ph});
            worse(&mut first, e1, w);
            for (o, h) in fd_hessians(z, &ph, a).iter().enumerate() {
                let e2 = st.hessian(o).map_or(f64::INFINITY, |an| relative_error(&an, h));
                worse(&mut second, e2, || json!({"shears": n, "amplitude": a, "z": z, "phases": ph, "output": o}));
            }
        }
    }
    Ok([
        at_most("jacobian_vs_finite_difference", first.0, p.fd_first_tol, first.1),
        at_most("hessian_vs_finite_difference", second.0, p.fd_second_tol, second.1),
    ])
}

fn qift_checks(p: &VerifyParams, seed: u64) -> Result<Vec<Check>, CliError> {
    let m = FlowShiftMap::special(&params(p.qift_amplitude)?).map_err(run_err)?;
    let c = m.constants().map_err(run_err)?;
    let zero = DVector::zeros(4);
    let f = |u: &DVector<f64>| m.g(&zero, u);
    let df = |u: &DVector<f64>| m.dy(&zero, u);

    let inj = check_injectivity(&f, &df, &c, p.qift_pairs, rng::pair_index(seed, 1));
    let inj_check = Check {
        name: "qift_injectivity",
        pass: inj.injective,
        value: inj.worst_margin,
        comparison: ">",
        tolerance: 0.0,
        witness: json!({"pair": inj.witness, "pairs": inj.pairs, "radius": c.injectivity_radius()}),
    };

    let mut reach = (0.0, Value::Null);
    for i in 0..p.qift_directions {
        let mut r = rng::stream(seed, rng::pair_index(2, i));
        let v = DVector::from_fn(4, |_, _| rand::Rng::sample::<f64, _>(&mut r, rand_distr::StandardNormal));
        let v = &v / v.norm();
        let res = reach_target(&f, &df, &c, &v, c.reach_time()).map_or(f64::INFINITY, |s| s.residual);
        worse(&mut reach, res, || json!({"direction": v.as_slice()}));
    }

    let rad = c.inclusion_radius();
    let mut imp = (0.0, Value::Null);
    let mut det = (f64::INFINITY, Value::Null);
    for code in 0..81u32 {
        let x = DVector::from_fn(4, |k, _| ((code / 3u32.pow(k as u32)) % 3) as f64 - 1.0) * (0.45 * rad);
        match implicit_solve(&|x, y| m.g(x, y), &|x, y| m.dy(x, y), &zero, &zero, &x, &c) {
            Ok(s) => {
                worse(&mut imp, s.residual, || json!({"x": x.as_slice()}));
                if s.det_dy < det.0 {
                    det = (s.det_dy, json!({"x": x.as_slice(), "y": s.y}));
                }
            }
            Err(e) => worse(&mut imp, f64::INFINITY, || json!({"x": x.as_slice(), "error": e.to_string()})),
        }
    }
    Ok(vec![
        inj_check,
        at_most("qift_reach_residual", reach.0, p.reach_tol, reach.1),
        at_most("qift_implicit_residual", imp.0, p.implicit_tol, imp.1),
        at_least("qift_implicit_min_det", det.0, p.implicit_det_floor, det.1),
    ])
}

pub fn verify(p: &VerifyParams, o: &RunOpts) -> Result<Outcome, CliError> {
    json_only(o)?;
    let seed = o.seed()?;
    let mut checks = vec![fixed_point_check(p, rng::pair_index(seed, 0))?];
    checks.extend(determinant_checks(p)?);
    checks.push(constancy_check(p, seed ^ 0x5bd1_e995)?);
    checks.extend(fd_checks(p, seed)?);
    checks.extend(qift_checks(p, seed)?);
    let pass = checks.iter().all(|c| c.pass);
    let failed: Vec<&str> = checks.iter().filter(|c| !c.pass).map(|c| c.name).collect();
    Ok(Outcome {
        body: to_json(&json!({"command": "verify", "seed": seed, "all_pass": pass, "checks": checks}))?,
        pass,
        message: (!pass).then(|| format!("failed checks: {}", failed.join(", "))),
    })
}

pub fn sweep(p: &SweepParams, o: &RunOpts) -> Result<Outcome, CliError> {
    if p.amplitudes.is_empty() {
        return Err(CliError::Usage(
            "sweep needs a non-empty amplitude list (--amplitudes 2,4,8 or \"params\": {\"amplitudes\": [...]})".into(),
        ));
    }
    let format = o.format.unwrap_or(Format::Csv);
    if p.refine && format == Format::Csv {
        return Err(CliError::Usage("the refinement report needs --format json".into()));
    }
    let cfg = SweepConfig {
        amplitudes: p.amplitudes.clone(),
        trials: p.trials,
        n_periods: p.n_periods,
        n_grid: p.n_grid,
        init: p.init,
        seed: o.seed()?,
        alias_tol: p.alias_tol,
    };
    cfg.validate().map_err(run_err)?;
    let table = amplitude_sweep(&cfg).map_err(run_err)?;
    let body = match format {
        Format::Csv => {
            let mut buf = Vec::new();
            write_sweep_csv(&table, &mut buf).map_err(|e| CliError::Io(e.to_string()))?;
            buf
        }
        Format::Json => {
            let refinement = if p.refine {
                Some(refinement_check(&cfg, &table).map_err(run_err)?)
            } else {
                None
            };
            to_json(&json!({
                "command": "sweep",
                "config": cfg,
                "summaries": table.summaries,
                "trials": table.trials,
                "refinement": refinement,
            }))?
        }
    };
    Ok(Outcome {
        body,
        pass: true,
        message: None,
    })
}

pub fn constants(p: &ConstantsParams, o: &RunOpts) -> Result<Outcome, CliError> {
    json_only(o)?;
    let inputs = PipelineInputs {
        amplitude: p.amplitude,
        lyapunov: p.lyapunov,
        harris_c: p.harris_c,
        q: p.q,
        radius_constants: p.radius_constants,
        precision_bits: p.precision_bits,
    };
    let hc = constants_pipeline(&inputs).map_err(run_err)?;
    let audit = inequality_audit(&hc).map_err(run_err)?;
    let pass = audit.all_pass;
    Ok(Outcome {
        body: to_json(&json!({
            "command": "constants",
            "log_domain": "fields named log_* hold natural logarithms; decimal strings carry the full precision",
            "inputs": inputs,
            "constants": hc,
            "audit": audit,
        }))?,
        pass,
        message: (!pass).then(|| "inequality audit failed".to_string()),
    })
}

fn random_separated(a: f64, seed: u64) -> PairState {
    let mut r = rng::stream(seed, 0);
    loop {
        let mut c = [0.0; 4];
        rng::fill_angles(&mut r, &mut c);
        if let Ok(z) = PairState::from_coords(c) {
            if z.separation() >= 1.0 / (a * a) {
                return z;
            }
        }
    }
}

pub fn couple(p: &CoupleParams, o: &RunOpts) -> Result<Outcome, CliError> {
    json_only(o)?;
    let fp = params(p.amplitude)?;
    let z = match p.z {
        Some(c) => PairState::from_coords(c).map_err(run_err)?,
        None => random_separated(p.amplitude, o.seed()?),
    };
    let plan = plan_to_r(&z, &fp, p.s_star, p.max_steps).map_err(run_err)?;
    let bound = plan_step_bound(p.amplitude, p.s_star);
    let tube = tube_probability(&plan, p.r1, &fp).map_err(run_err)?;
    let chain = ball_chain(&plan.terminal, p.r1).map_err(run_err)?;
    let within = plan.n1 as f64 <= bound;
    let pass = within && plan.residual < PLAN_RESIDUAL_TOL;
    Ok(Outcome {
        body: to_json(&json!({
            "command": "couple",
            "start": plan.start.coords(),
            "steps": plan.steps.radians(),
            "n1": plan.n1,
            "n1_bound": bound,
            "n1_within_bound": within,
            "terminal": plan.terminal.coords(),
            "residual": plan.residual,
            "tube": tube,
            "n2": chain.n2,
            "ball_chain_radius": chain.radius,
        }))?,
        pass,
        message: (!pass).then(|| format!("plan residual {:e} or step count {} out of bounds", plan.residual, plan.n1)),
    })
}

pub fn drift(p: &DriftParams, o: &RunOpts) -> Result<Outcome, CliError> {
    json_only(o)?;
    let cfg = DriftConfig {
        z_samples: p.z_samples,
        mc_samples: p.mc_samples,
        near_min: p.near_min,
        near_max_fraction: p.near_max_fraction,
    };
    let seed = o.seed()?;
    let report = drift_check(&p.lyapunov, &params(p.amplitude)?, &cfg, seed).map_err(run_err)?;
    let pass = report.gamma_hat < 1.0 && report.off_diagonal_ok;
    Ok(Outcome {
        body: to_json(&json!({"command": "drift", "seed": seed, "amplitude": p.amplitude, "report": report}))?,
        pass,
        message: (!pass).then(|| format!("drift ratio {} or off-diagonal bound failed", report.gamma_hat)),
    })
}

pub fn minorize(p: &MinorizeParams, o: &RunOpts) -> Result<Outcome, CliError> {
    json_only(o)?;
    let seed = o.seed()?;
    let center = match p.center {
        Some(c) => PairState::from_coords(c).map_err(run_err)?,
        None => PairState::special(),
    };
    let report = minorization_mc(
        &center,
        p.rho_in,
        &p.rho_out,
        p.n,
        p.boundary_samples,
        p.mc_samples,
        &params(p.amplitude)?,
        seed,
    )
    .map_err(run_err)?;
    let pass = report.estimates.iter().all(|e| e.inf_prob.lower() > 0.0);
    Ok(Outcome {
        body: to_json(&json!({"command": "minorize", "seed": seed, "amplitude": p.amplitude, "center": center.coords(), "report": report}))?,
        pass,
        message: (!pass).then(|| "a minorization lower bound is zero".to_string()),
    })
}
