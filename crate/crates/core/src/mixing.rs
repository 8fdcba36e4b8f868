//! Passive scalar transport by pullback along exact inverse characteristics,
//! spectral Sobolev norms and decay-rate fits.

use std::f64::consts::TAU;
use std::io::Write;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use realfft::RealFftPlanner;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{finite, invalid, Error, Result};
use crate::flow::{inverse_shear_raw, FlowParams, ShiftSequence};
use crate::geometry::{canonical, sin_circle};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitKind {
    /// `sin(k . x)`.
    SingleMode { k: [i64; 2] },
    /// Gaussian coefficients with weight `1 / (1 + |k|^2)` on `0 < |k|_inf <= k_max`.
    RandomBandLimited { k_max: usize },
}

impl InitKind {
    fn k_max(&self) -> usize {
        match *self {
            InitKind::SingleMode { k } => k[0].unsigned_abs().max(k[1].unsigned_abs()) as usize,
            InitKind::RandomBandLimited { k_max } => k_max,
        }
    }
}

/// Closed-form initial datum `phi_0`, evaluated at arbitrary points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum InitialField {
    SingleMode { k: [i64; 2] },
    /// `phi_0 = 2 Re sum c_k e^{i k.x}` over a half plane of modes.
    BandLimited { k_max: usize, modes: Vec<([i64; 2], [f64; 2])> },
}

impl InitialField {
    pub fn eval(&self, x: [f64; 2]) -> f64 {
        match self {
            InitialField::SingleMode { k } => (k[0] as f64 * x[0] + k[1] as f64 * x[1]).sin(),
            InitialField::BandLimited { k_max, modes } => {
                let km = *k_max as i64;
                let e1 = Complex64::from_polar(1.0, x[0]);
                let e2 = Complex64::from_polar(1.0, x[1]);
                let powers = |e: Complex64| {
                    let mut v = vec![Complex64::new(1.0, 0.0); (2 * km + 1) as usize];
                    for j in 1..=km as usize {
                        v[km as usize + j] = v[km as usize + j - 1] * e;
                        v[km as usize - j] = v[km as usize - j + 1] * e.conj();
                    }
                    v
                };
                let (p1, p2) = (powers(e1), powers(e2));
                let mut s = 0.0;
                for (k, c) in modes {
                    let w = p1[(k[0] + km) as usize] * p2[(k[1] + km) as usize];
                    s += 2.0 * (c[0] * w.re - c[1] * w.im);
                }
                s
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalarFieldGrid {
    n: usize,
    /// Row-major: index `i * n + j` holds the node `(2 pi i / n, 2 pi j / n)`.
    samples: Vec<f64>,
    source: Option<InitialField>,
    spectral: Option<Vec<Complex64>>,
}

fn check_grid(n: usize) -> Result<()> {
    if n < 8 || !n.is_power_of_two() {
        return Err(Error::GridSize(n));
    }
    Ok(())
}

fn node(n: usize, i: usize) -> f64 {
    TAU * i as f64 / n as f64
}

impl ScalarFieldGrid {
    pub fn from_samples(n: usize, samples: Vec<f64>) -> Result<Self> {
        check_grid(n)?;
        if samples.len() != n * n {
            return Err(invalid("samples", format!("expected {} values, got {}", n * n, samples.len())));
        }
        for v in &samples {
            finite("sample", *v)?;
        }
        Ok(ScalarFieldGrid {
            n,
            samples,
            source: None,
            spectral: None,
        })
    }

    fn sample_source(n: usize, source: &InitialField, phases: &[f64], a: f64) -> Vec<f64> {
        let mut samples = vec![0.0; n * n];
        // the last shear is undone first and its sine sees one grid coordinate only
        let column_kick: Option<Vec<f64>> = match phases.len() {
            len if len % 2 == 1 => Some((0..n).map(|j| -a * sin_circle(node(n, j) - phases[len - 1])).collect()),
            _ => None,
        };
        samples.par_chunks_mut(n).enumerate().for_each(|(i, row)| {
            // shears outer, nodes inner: same arithmetic per node as inverse_flow_raw
            let mut p: Vec<[f64; 2]> = (0..n).map(|j| [node(n, i), node(n, j)]).collect();
            let rest = match phases.split_last() {
                Some((&s, rest)) => {
                    match &column_kick {
                        Some(kick) => {
                            for (q, d) in p.iter_mut().zip(kick) {
                                q[0] = canonical(q[0] + d);
                                q[1] = canonical(q[1]);
                            }
                        }
                        None => {
                            let d = -a * sin_circle(node(n, i) - s);
                            for q in p.iter_mut() {
                                q[1] = canonical(q[1] + d);
                                q[0] = canonical(q[0]);
                            }
                        }
                    }
                    rest
                }
                None => phases,
            };
            for (k, &s) in rest.iter().enumerate().rev() {
                for q in p.iter_mut() {
                    inverse_shear_raw(q, k, s, a);
                }
            }
            for (v, q) in row.iter_mut().zip(&p) {
                *v = source.eval(*q);
            }
        });
        samples
    }

    pub fn n_grid(&self) -> usize {
        self.n
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn source(&self) -> Option<&InitialField> {
        self.source.as_ref()
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.samples[i * self.n + j]
    }

    /// Coefficients `phi_hat_k` in FFT order, computed once.
    pub fn spectrum(&mut self) -> &[Complex64] {
        if self.spectral.is_none() {
            self.spectral = Some(fft2(&self.samples, self.n));
        }
        self.spectral.as_deref().expect("just computed")
    }

    pub fn mean(&self) -> f64 {
        row_sums(&self.samples, self.n, |v| v) / (self.n * self.n) as f64
    }

    /// Fraction of spectral energy on modes with `|k|_inf > n/4`.
    pub fn aliasing_fraction(&mut self) -> f64 {
        let n = self.n;
        let hat = self.spectrum();
        let q = (n / 4) as i64;
        let (mut hi, mut total) = (0.0, 0.0);
        for (idx, c) in hat.iter().enumerate() {
            let (k1, k2) = (wavenumber(idx / n, n), wavenumber(idx % n, n));
            let e = c.norm_sqr();
            total += e;
            if k1.abs().max(k2.abs()) > q {
                hi += e;
            }
        }
        if total == 0.0 { 0.0 } else { hi / total }
    }

    /// Largest deviation after a forward and inverse transform.
    pub fn round_trip_residual(&mut self) -> f64 {
        let n = self.n;
        let back = ifft2(self.spectrum(), n);
        self.samples
            .iter()
            .zip(&back)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

fn wavenumber(i: usize, n: usize) -> i64 {
    if i <= n / 2 { i as i64 } else { i as i64 - n as i64 }
}

/// Row-wise sums collected in order, then added serially.
fn row_sums(v: &[f64], n: usize, f: impl Fn(f64) -> f64 + Sync) -> f64 {
    let rows: Vec<f64> = v.par_chunks(n).map(|r| r.iter().map(|x| f(*x)).sum()).collect();
    rows.iter().sum()
}

fn transpose(v: &[Complex64], n: usize) -> Vec<Complex64> {
    let mut out = vec![Complex64::default(); n * n];
    transpose_into(v, n, n, &mut out);
    out
}

fn fft_rows(v: &mut [Complex64], n: usize, inverse: bool) {
    let mut planner = FftPlanner::<f64>::new();
    let plan = if inverse { planner.plan_fft_inverse(n) } else { planner.plan_fft_forward(n) };
    v.par_chunks_mut(n).for_each(|row| plan.process(row));
}

/// Copy the `rows x cols` block `src` into `dst` transposed, a few output rows at a time.
fn transpose_into<T: Copy + Send + Sync>(src: &[T], rows: usize, cols: usize, dst: &mut [T]) {
    const B: usize = 16;
    dst.par_chunks_mut(B * rows).enumerate().for_each(|(blk, out)| {
        let c0 = blk * B;
        let nb = out.len() / rows;
        for r in 0..rows {
            let line = &src[r * cols + c0..r * cols + c0 + nb];
            for (b, v) in line.iter().enumerate() {
                out[b * rows + r] = *v;
            }
        }
    });
}

/// Forward transform normalized by `n^2`: real row transforms, complex
/// column transforms on the non-negative half, the rest by conjugate symmetry.
fn fft2(samples: &[f64], n: usize) -> Vec<Complex64> {
    let h = n / 2 + 1;
    let r2c = RealFftPlanner::<f64>::new().plan_fft_forward(n);
    let mut half = vec![Complex64::default(); n * h];
    half.par_chunks_mut(h).zip(samples.par_chunks(n)).for_each(|(out, row)| {
        let mut input = row.to_vec();
        let mut scratch = r2c.make_scratch_vec();
        r2c.process_with_scratch(&mut input, out, &mut scratch)
            .expect("buffer lengths match the plan");
    });
    let mut cols = vec![Complex64::default(); h * n];
    transpose_into(&half, n, h, &mut cols);
    fft_rows(&mut cols, n, false);
    let scale = 1.0 / (n * n) as f64;
    let mut out = vec![Complex64::default(); n * n];
    transpose_into(&cols, h, n, &mut out[..n * h]);
    // transpose_into wrote an n x h block with row stride h; spread it to stride n
    for i in (0..n).rev() {
        out.copy_within(i * h..i * h + h, i * n);
    }
    out.par_chunks_mut(n).enumerate().for_each(|(i, row)| {
        for c in row[..h].iter_mut() {
            *c *= scale;
        }
        let mirror = (n - i) % n;
        for j in h..n {
            let src = cols[(n - j) * n + mirror];
            row[j] = src.conj() * scale;
        }
    });
    out
}

fn ifft2(hat: &[Complex64], n: usize) -> Vec<f64> {
    let mut v = hat.to_vec();
    fft_rows(&mut v, n, true);
    let mut t = transpose(&v, n);
    fft_rows(&mut t, n, true);
    transpose(&t, n).into_iter().map(|c| c.re).collect()
}

pub fn init_field(kind: InitKind, n_grid: usize, seed: u64) -> Result<ScalarFieldGrid> {
    check_grid(n_grid)?;
    let k_max = kind.k_max();
    if k_max == 0 {
        return Err(invalid("k", "initial field needs a non-zero mode"));
    }
    if n_grid < 2 * k_max {
        return Err(invalid("n_grid", format!("must be at least 2 K_max = {}", 2 * k_max)));
    }
    let source = match kind {
        InitKind::SingleMode { k } => InitialField::SingleMode { k },
        InitKind::RandomBandLimited { k_max } => {
            let km = k_max as i64;
            let mut r = rng::stream(seed, 0);
            let mut modes = Vec::new();
            for k1 in 0..=km {
                for k2 in -km..=km {
                    if k1 == 0 && k2 <= 0 {
                        continue;
                    }
                    let w = 1.0 / (1.0 + (k1 * k1 + k2 * k2) as f64);
                    let re: f64 = r.sample(StandardNormal);
                    let im: f64 = r.sample(StandardNormal);
                    modes.push(([k1, k2], [w * re, w * im]));
                }
            }
            InitialField::BandLimited { k_max, modes }
        }
    };
    let samples = ScalarFieldGrid::sample_source(n_grid, &source, &[], 1.0);
    Ok(ScalarFieldGrid {
        n: n_grid,
        samples,
        source: Some(source),
        spectral: None,
    })
}

/// `phi_n = phi_0 o Phi_n^{-1}` at every node, re-pulled from `phi_0`.
pub fn transport(field: &ScalarFieldGrid, xi: &ShiftSequence, params: &FlowParams) -> Result<ScalarFieldGrid> {
    transport_raw(field, &xi.radians(), params.amplitude())
}

/// As [`transport`] with any number of shears, including a trailing half period.
pub fn transport_raw(field: &ScalarFieldGrid, phases: &[f64], a: f64) -> Result<ScalarFieldGrid> {
    let source = field
        .source
        .as_ref()
        .ok_or_else(|| invalid("field", "transport needs a closed-form initial field"))?;
    Ok(ScalarFieldGrid {
        n: field.n,
        samples: ScalarFieldGrid::sample_source(field.n, source, phases, a),
        source: Some(source.clone()),
        spectral: None,
    })
}

/// `(sum_{k != 0} |k|^{2s} |phi_hat_k|^2)^{1/2}` with Euclidean `|k|`.
pub fn sobolev_norm(field: &mut ScalarFieldGrid, s: f64) -> Result<f64> {
    finite("s", s)?;
    let n = field.n;
    let weight = |k2s: f64| if s.fract() == 0.0 && s.abs() < 64.0 { k2s.powi(s as i32) } else { k2s.powf(s) };
    let hat = field.spectrum();
    let rows: Vec<f64> = hat
        .par_chunks(n)
        .enumerate()
        .map(|(i, row)| {
            let k1 = wavenumber(i, n) as f64;
            row.iter()
                .enumerate()
                .map(|(j, c)| {
                    let k2 = wavenumber(j, n) as f64;
                    let k2s = k1 * k1 + k2 * k2;
                    if k2s == 0.0 { 0.0 } else { weight(k2s) * c.norm_sqr() }
                })
                .sum()
        })
        .collect();
    let total: f64 = rows.iter().sum();
    let mean = hat[0].norm();
    if s < 0.0 && mean > 1e-12 * (total + mean * mean).sqrt().max(f64::MIN_POSITIVE) {
        return Err(Error::NotMeanZero(hat[0].re));
    }
    if s < 0.0 && total == 0.0 {
        return Err(Error::ZeroField);
    }
    Ok(total.sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    /// Minus the slope of `ln norm` per period.
    pub rate: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub n_points: usize,
}

/// Least squares on `(period, ln norm)`.
pub fn decay_fit(series: &[(f64, f64)]) -> Result<DecayFit> {
    if series.len() < 3 {
        return Err(Error::DegenerateFit(series.len()));
    }
    for &(t, v) in series {
        finite("step", t)?;
        finite("norm", v)?;
        if v <= 0.0 {
            return Err(invalid("norm", format!("must be positive, got {v}")));
        }
    }
    let x: Vec<f64> = series.iter().map(|p| p.0).collect();
    let y: Vec<f64> = series.iter().map(|p| p.1.ln()).collect();
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(invalid("step", "all steps coincide"));
    }
    let sxy: f64 = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_tot: f64 = y.iter().map(|v| (v - my).powi(2)).sum();
    let ss_res: f64 = x.iter().zip(&y).map(|(a, b)| (b - intercept - slope * a).powi(2)).sum();
    let r_squared = if ss_tot == 0.0 { 1.0 } else { 1.0 - ss_res / ss_tot };
    Ok(DecayFit {
        rate: -slope,
        intercept,
        r_squared,
        n_points: series.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub amplitudes: Vec<f64>,
    pub trials: usize,
    pub n_periods: usize,
    pub n_grid: usize,
    pub init: InitKind,
    pub seed: u64,
    /// Truncate a trial once the aliasing fraction exceeds this.
    #[serde(default = "default_alias_tol")]
    pub alias_tol: f64,
}

fn default_alias_tol() -> f64 {
    1e-6
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        if self.amplitudes.is_empty() {
            return Err(invalid("amplitudes", "list is empty"));
        }
        for &a in &self.amplitudes {
            FlowParams::new(a)?;
        }
        if self.trials == 0 {
            return Err(invalid("trials", "must be at least 1"));
        }
        if self.n_periods == 0 {
            return Err(invalid("n_periods", "must be at least 1"));
        }
        check_grid(self.n_grid)?;
        if self.n_grid < 2 * self.init.k_max() || self.init.k_max() == 0 {
            return Err(invalid("n_grid", "violates the band-limit precondition"));
        }
        if !(self.alias_tol > 0.0 && self.alias_tol < 1.0) {
            return Err(invalid("alias_tol", "must lie in (0, 1)"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub amplitude: f64,
    pub trial: usize,
    /// `(period, H^-1 norm)`, one point per shear, resolved points only.
    pub series: Vec<(f64, f64)>,
    pub h1_initial: f64,
    pub fit: DecayFit,
    /// Set when the aliasing check stopped the trial before `n_periods`.
    pub truncated: bool,
}

fn trial_shifts(seed: u64, a_idx: usize, trial: usize, n_periods: usize) -> Vec<f64> {
    let mut r = rng::stream(seed, rng::pair_index(a_idx as u64, trial as u64));
    let mut v = vec![0.0; 2 * n_periods];
    rng::fill_angles(&mut r, &mut v);
    v
}

fn init_seed(seed: u64, trial: usize) -> u64 {
    seed ^ rng::pair_index(u32::MAX as u64, trial as u64)
}

/// One trial on an `n_grid` mesh, stopping at the aliasing cap or after `max_shears`.
pub fn run_trial(cfg: &SweepConfig, a_idx: usize, trial: usize, n_grid: usize, max_shears: Option<usize>) -> Result<TrialResult> {
    let a = cfg.amplitudes[a_idx];
    let phases = trial_shifts(cfg.seed, a_idx, trial, cfg.n_periods);
    let mut f0 = init_field(cfg.init, n_grid, init_seed(cfg.seed, trial))?;
    let h1_initial = sobolev_norm(&mut f0, 1.0)?;
    let limit = max_shears.unwrap_or(phases.len()).min(phases.len());
    let mut series = Vec::new();
    let mut truncated = false;
    for s in 0..=limit {
        let mut f = transport_raw(&f0, &phases[..s], a)?;
        if f.aliasing_fraction() > cfg.alias_tol {
            truncated = true;
            break;
        }
        series.push((s as f64 / 2.0, sobolev_norm(&mut f, -1.0)?));
    }
    let fit = decay_fit(&series)?;
    Ok(TrialResult {
        amplitude: a,
        trial,
        series,
        h1_initial,
        fit,
        truncated,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AmplitudeSummary {
    pub amplitude: f64,
    pub mean_rate: f64,
    pub std_rate: f64,
    pub rates: Vec<f64>,
    pub intercepts: Vec<f64>,
    /// Fewest resolved periods over the trials.
    pub resolved_periods: f64,
    pub truncated_trials: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub trials: Vec<TrialResult>,
    pub summaries: Vec<AmplitudeSummary>,
}

pub fn amplitude_sweep(cfg: &SweepConfig) -> Result<SweepTable> {
    cfg.validate()?;
    let mut trials = Vec::new();
    for a_idx in 0..cfg.amplitudes.len() {
        for t in 0..cfg.trials {
            trials.push(run_trial(cfg, a_idx, t, cfg.n_grid, None)?);
        }
    }
    let summaries = cfg
        .amplitudes
        .iter()
        .map(|&a| {
            let ts: Vec<&TrialResult> = trials.iter().filter(|t| t.amplitude == a).collect();
            let rates: Vec<f64> = ts.iter().map(|t| t.fit.rate).collect();
            let n = rates.len() as f64;
            let mean = rates.iter().sum::<f64>() / n;
            let var = if rates.len() > 1 {
                rates.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1.0)
            } else {
                0.0
            };
            AmplitudeSummary {
                amplitude: a,
                mean_rate: mean,
                std_rate: var.sqrt(),
                intercepts: ts.iter().map(|t| t.fit.intercept).collect(),
                rates,
                resolved_periods: ts
                    .iter()
                    .map(|t| t.series.last().map_or(0.0, |p| p.0))
                    .fold(f64::INFINITY, f64::min),
                truncated_trials: ts.iter().filter(|t| t.truncated).count(),
            }
        })
        .collect();
    Ok(SweepTable { trials, summaries })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefinementReport {
    /// `(amplitude, trial, rate at N, rate at 2N)`.
    pub pairs: Vec<(f64, usize, f64, f64)>,
    pub max_relative_change: f64,
}

/// Refit every trial on a `2N` mesh over the window resolved at `N`.
pub fn refinement_check(cfg: &SweepConfig, table: &SweepTable) -> Result<RefinementReport> {
    let mut pairs = Vec::new();
    for t in &table.trials {
        let a_idx = cfg
            .amplitudes
            .iter()
            .position(|&a| a == t.amplitude)
            .ok_or_else(|| invalid("table", "amplitude not in config"))?;
        let shears = t.series.len() - 1;
        let fine = run_trial(cfg, a_idx, t.trial, 2 * cfg.n_grid, Some(shears))?;
        if fine.series.len() != t.series.len() {
            return Err(Error::DegenerateFit(fine.series.len()));
        }
        pairs.push((t.amplitude, t.trial, t.fit.rate, fine.fit.rate));
    }
    let max_relative_change = pairs
        .iter()
        .map(|p| (p.3 - p.2).abs() / p.2.abs().max(f64::MIN_POSITIVE))
        .fold(0.0, f64::max);
    Ok(RefinementReport {
        pairs,
        max_relative_change,
    })
}

/// Columns `A, trial, period, h_minus_1, h1_initial, rate, r2`, one row per point.
pub fn write_sweep_csv<W: Write>(table: &SweepTable, w: W) -> Result<()> {
    let mut out = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(w);
    let io = |e: csv::Error| Error::Io(e.to_string());
    out.write_record(["A", "trial", "period", "h_minus_1", "h1_initial", "rate", "r2"])
        .map_err(io)?;
    for t in &table.trials {
        for &(p, h) in &t.series {
            out.write_record([
                t.amplitude.to_string(),
                t.trial.to_string(),
                p.to_string(),
                h.to_string(),
                t.h1_initial.to_string(),
                t.fit.rate.to_string(),
                t.fit.r_squared.to_string(),
            ])
            .map_err(io)?;
        }
    }
    out.flush().map_err(|e| Error::Io(e.to_string()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrefactorStats {
    pub n: usize,
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub median: f64,
    pub max: f64,
    pub all_finite: bool,
}

/// Moments of `exp(intercept)` across trials.
pub fn prefactor_stats(intercepts: &[f64]) -> Result<PrefactorStats> {
    if intercepts.len() < 2 {
        return Err(invalid("intercepts", "need at least two trials"));
    }
    let mut d: Vec<f64> = intercepts.iter().map(|c| c.exp()).collect();
    let n = d.len() as f64;
    let mean = d.iter().sum::<f64>() / n;
    let std = (d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let all_finite = d.iter().all(|v| v.is_finite());
    d.sort_by(f64::total_cmp);
    let m = d.len();
    let median = if m % 2 == 1 { d[m / 2] } else { 0.5 * (d[m / 2 - 1] + d[m / 2]) };
    Ok(PrefactorStats {
        n: m,
        mean,
        std,
        min: d[0],
        median,
        max: d[m - 1],
        all_finite,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::{inverse_flow_point, sample_shifts};
    use crate::geometry::TorusPoint;
    use approx::assert_relative_eq;
    use rand_distr::Distribution;

    fn sin_x1(n: usize) -> ScalarFieldGrid {
        init_field(InitKind::SingleMode { k: [1, 0] }, n, 0).unwrap()
    }

    #[test]
    fn single_mode_samples() {
        let f = sin_x1(16);
        for i in 0..16 {
            for j in 0..16 {
                assert_eq!(f.at(i, j), node(16, i).sin());
            }
        }
    }

    #[test]
    fn fft_matches_direct_dft() {
        let n = 16;
        let mut r = rng::stream(3, 0);
        let samples: Vec<f64> = (0..n * n).map(|_| r.sample(StandardNormal)).collect();
        let mut f = ScalarFieldGrid::from_samples(n, samples.clone()).unwrap();
        let hat = f.spectrum().to_vec();
        for k1 in 0..n {
            for k2 in 0..n {
                let mut want = Complex64::default();
                for i in 0..n {
                    for j in 0..n {
                        let ph = -TAU * ((k1 * i + k2 * j) % n) as f64 / n as f64;
                        want += Complex64::from_polar(samples[i * n + j], ph);
                    }
                }
                want /= (n * n) as f64;
                assert!((hat[k1 * n + k2] - want).norm() < 1e-13, "{k1} {k2}");
            }
        }
        assert!(f.round_trip_residual() < 1e-13);
    }

    #[test]
    fn init_preconditions() {
        assert_eq!(init_field(InitKind::SingleMode { k: [1, 0] }, 12, 0), Err(Error::GridSize(12)));
        assert!(init_field(InitKind::RandomBandLimited { k_max: 8 }, 8, 0).is_err());
        assert!(init_field(InitKind::SingleMode { k: [0, 0] }, 8, 0).is_err());
    }

    #[test]
    fn band_limited_mean_and_parseval() {
        let mut f = init_field(InitKind::RandomBandLimited { k_max: 6 }, 64, 5).unwrap();
        assert!(f.mean().abs() < 1e-14);
        let grid = (row_sums(f.samples(), 64, |v| v * v) / (64.0 * 64.0)).sqrt();
        let hat = sobolev_norm(&mut f, 0.0).unwrap();
        assert!((grid - hat).abs() < 1e-10);
        assert!(f.round_trip_residual() < 1e-10);
    }

    #[test]
    fn band_limited_eval_matches_direct_sum() {
        let f = init_field(InitKind::RandomBandLimited { k_max: 3 }, 16, 9).unwrap();
        let Some(InitialField::BandLimited { modes, .. }) = f.source() else { panic!() };
        let x = [0.7, 5.1];
        let direct: f64 = modes
            .iter()
            .map(|(k, c)| {
                let t = k[0] as f64 * x[0] + k[1] as f64 * x[1];
                2.0 * (c[0] * t.cos() - c[1] * t.sin())
            })
            .sum();
        assert!((f.source().unwrap().eval(x) - direct).abs() < 1e-12);
    }

    #[test]
    fn norm_examples() {
        let mut f = sin_x1(32);
        assert_relative_eq!(sobolev_norm(&mut f, -1.0).unwrap(), 0.5f64.sqrt(), max_relative = 1e-12);
        assert_relative_eq!(sobolev_norm(&mut f, 1.0).unwrap(), 0.5f64.sqrt(), max_relative = 1e-12);
        let mut g = init_field(InitKind::SingleMode { k: [0, 2] }, 32, 0).unwrap();
        // sin(2 x2) has the same spectrum magnitudes as cos(2 x2)
        assert_relative_eq!(sobolev_norm(&mut g, -1.0).unwrap(), 1.0 / 8f64.sqrt(), max_relative = 1e-12);
        let cos2 = ScalarFieldGrid::from_samples(32, (0..32 * 32).map(|idx| (2.0 * node(32, idx % 32)).cos()).collect()).unwrap();
        let mut cos2 = cos2;
        assert_relative_eq!(sobolev_norm(&mut cos2, -1.0).unwrap(), 1.0 / 8f64.sqrt(), max_relative = 1e-12);
    }

    #[test]
    fn negative_norm_needs_mean_zero() {
        let mut f = ScalarFieldGrid::from_samples(8, vec![1.0; 64]).unwrap();
        assert!(matches!(sobolev_norm(&mut f, -1.0), Err(Error::NotMeanZero(_))));
        assert_eq!(sobolev_norm(&mut f, 1.0).unwrap(), 0.0);
    }

    #[test]
    fn one_shear_closed_form() {
        let (a, zeta) = (2.5, 1.3);
        let f0 = sin_x1(64);
        let f = transport_raw(&f0, &[zeta], a).unwrap();
        for i in 0..64 {
            for j in 0..64 {
                let want = (node(64, i) - a * (node(64, j) - zeta).sin()).sin();
                assert!((f.at(i, j) - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn empty_transport_is_identity() {
        let f0 = init_field(InitKind::RandomBandLimited { k_max: 4 }, 32, 1).unwrap();
        let f = transport(&f0, &ShiftSequence::default(), &FlowParams::new(3.0).unwrap()).unwrap();
        assert_eq!(f.samples(), f0.samples());
        let raw = ScalarFieldGrid::from_samples(8, vec![0.0; 64]).unwrap();
        assert!(transport(&raw, &ShiftSequence::default(), &FlowParams::new(1.0).unwrap()).is_err());
    }

    #[test]
    fn pullback_matches_inverse_characteristics() {
        let n = 32;
        for (a, periods) in [(1.0, 20), (8.0, 20), (4.0, 7)] {
            let p = FlowParams::new(a).unwrap();
            let xi = sample_shifts(periods as u64, 2 * periods).unwrap();
            let f = transport(&sin_x1(n), &xi, &p).unwrap();
            let mut worst: f64 = 0.0;
            for i in 0..n {
                for j in 0..n {
                    let q = inverse_flow_point(TorusPoint::new(node(n, i), node(n, j)).unwrap(), &xi, &p);
                    worst = worst.max((f.at(i, j) - q.x1.value().sin()).abs());
                }
            }
            assert!(worst <= 1e-12, "A={a}: {worst:e}");
        }
    }

    #[test]
    fn l2_refinement() {
        // the grid quadrature error of the conserved L2 norm shrinks under refinement
        let p = FlowParams::new(2.0).unwrap();
        let xi = sample_shifts(4, 4).unwrap();
        let err = |n| {
            let mut f = transport(&sin_x1(n), &xi, &p).unwrap();
            let l2 = (row_sums(f.samples(), n, |v| v * v) / (n * n) as f64).sqrt();
            let _ = sobolev_norm(&mut f, 0.0);
            (l2 - 0.5f64.sqrt()).abs()
        };
        let (e1, e2) = (err(64), err(128));
        assert!(e2 <= e1 / 4.0 || e2 < 1e-13, "{e1:e} {e2:e}");
        assert!(err(1024) < 1e-6);
    }

    #[test]
    fn norm_ordering() {
        let p = FlowParams::new(2.0).unwrap();
        let xi = sample_shifts(2, 2).unwrap();
        let mut f = transport(&sin_x1(512), &xi, &p).unwrap();
        assert!(f.aliasing_fraction() < 1e-6);
        let hm = sobolev_norm(&mut f, -1.0).unwrap();
        let l2 = sobolev_norm(&mut f, 0.0).unwrap();
        let h1 = sobolev_norm(&mut f, 1.0).unwrap();
        assert!(hm <= l2 && l2 <= h1);
    }

    #[test]
    fn fit_examples() {
        let e = (-0.3f64).exp();
        let fit = decay_fit(&[(0.0, 1.0), (1.0, e), (2.0, e * e)]).unwrap();
        assert_relative_eq!(fit.rate, 0.3, max_relative = 1e-12);
        assert_relative_eq!(fit.r_squared, 1.0, max_relative = 1e-12);
        let c = decay_fit(&[(0.0, 2.0), (1.0, 2.0), (2.0, 2.0)]).unwrap();
        assert_eq!(c.rate, 0.0);
        assert!(decay_fit(&[(0.0, 1.0), (1.0, 0.0), (2.0, 1.0)]).is_err());
        assert_eq!(decay_fit(&[(0.0, 1.0), (1.0, 1.0)]), Err(Error::DegenerateFit(2)));
    }

    #[test]
    fn fit_noisy_synthetic() {
        let mut r = rng::stream(3, 0);
        let noise = rand_distr::Normal::new(0.0, 0.01).unwrap();
        let s: Vec<(f64, f64)> = (0..50)
            .map(|t| (t as f64, 2.0 * (-0.2 * t as f64).exp() * (1.0 + noise.sample(&mut r))))
            .collect();
        let fit = decay_fit(&s).unwrap();
        assert!((fit.rate - 0.2).abs() < 0.01);
        assert!((fit.intercept.exp() - 2.0).abs() < 0.1);
    }

    #[test]
    fn prefactor_examples() {
        let s = prefactor_stats(&[2f64.ln(); 4]).unwrap();
        assert_relative_eq!(s.mean, 2.0, max_relative = 1e-15);
        assert_eq!(s.std, 0.0);
        assert!(s.all_finite);
        assert!(prefactor_stats(&[0.0]).is_err());
    }

    #[test]
    fn small_sweep_and_csv() {
        let cfg = SweepConfig {
            amplitudes: vec![2.0, 4.0],
            trials: 2,
            n_periods: 4,
            n_grid: 512,
            init: InitKind::SingleMode { k: [1, 0] },
            seed: 11,
            alias_tol: 1e-6,
        };
        let t = amplitude_sweep(&cfg).unwrap();
        assert_eq!(t.trials.len(), 4);
        assert!(t.trials.iter().all(|r| r.fit.rate > 0.0));
        let mut a = Vec::new();
        write_sweep_csv(&t, &mut a).unwrap();
        let mut b = Vec::new();
        write_sweep_csv(&amplitude_sweep(&cfg).unwrap(), &mut b).unwrap();
        assert_eq!(a, b);
        let text = String::from_utf8(a).unwrap();
        assert!(text.starts_with("A,trial,period,h_minus_1,h1_initial,rate,r2\n"));
        assert!(!text.contains('\r'));
        assert!(amplitude_sweep(&SweepConfig { amplitudes: vec![], ..cfg.clone() }).is_err());
    }
}
