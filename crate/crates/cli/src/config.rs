use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Deserialize;
use shearmix::harris::LyapunovParams;
use shearmix::mixing::InitKind;

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Json,
    Csv,
}

/// One config document: run options plus the command's parameter record.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Doc<P> {
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub out: Option<PathBuf>,
    pub format: Option<Format>,
    #[serde(default)]
    pub params: P,
}

impl<P: Default> Default for Doc<P> {
    fn default() -> Self {
        Doc {
            seed: None,
            workers: None,
            out: None,
            format: None,
            params: P::default(),
        }
    }
}

pub fn load<P: DeserializeOwned + Default>(path: Option<&Path>) -> Result<Doc<P>, CliError> {
    let Some(path) = path else {
        return Ok(Doc::default());
    };
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifyParams {
    pub fixed_point_amplitudes: Vec<f64>,
    pub fixed_point_samples: u64,
    pub fixed_point_tol: f64,
    pub determinant_amplitudes: Vec<f64>,
    pub determinant_tol: f64,
    pub constancy_amplitudes: Vec<f64>,
    pub constancy_samples: u64,
    pub constancy_tol: f64,
    pub fd_steps: Vec<usize>,
    pub fd_samples: u64,
    pub fd_max_amplitude: f64,
    pub fd_first_tol: f64,
    pub fd_second_tol: f64,
    pub qift_amplitude: f64,
    pub qift_pairs: u64,
    pub qift_directions: u64,
    pub reach_tol: f64,
    pub implicit_tol: f64,
    pub implicit_det_floor: f64,
}

impl Default for VerifyParams {
    fn default() -> Self {
        VerifyParams {
            fixed_point_amplitudes: vec![1.0, 5.0, 25.0, 100.0],
            fixed_point_samples: 1000,
            fixed_point_tol: 1e-12,
            determinant_amplitudes: vec![1.0, 2.0, 5.0, 10.0, 50.0],
            determinant_tol: 1e-10,
            constancy_amplitudes: vec![1.0, 2.0, 10.0],
            constancy_samples: 1000,
            constancy_tol: 1e-9,
            fd_steps: vec![2, 3, 4],
            fd_samples: 200,
            fd_max_amplitude: 5.0,
            fd_first_tol: 1e-6,
            fd_second_tol: 1e-5,
            qift_amplitude: 1.0,
            qift_pairs: 10_000,
            qift_directions: 50,
            reach_tol: 1e-8,
            implicit_tol: 1e-10,
            implicit_det_floor: 2.0,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepParams {
    pub amplitudes: Vec<f64>,
    pub trials: usize,
    pub n_periods: usize,
    pub n_grid: usize,
    pub init: InitKind,
    pub alias_tol: f64,
    /// Also refit every trial on a doubled grid.
    pub refine: bool,
}

impl Default for SweepParams {
    fn default() -> Self {
        SweepParams {
            amplitudes: Vec::new(),
            trials: 10,
            n_periods: 100,
            n_grid: 1024,
            init: InitKind::SingleMode { k: [1, 0] },
            alias_tol: 1e-6,
            refine: false,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConstantsParams {
    pub amplitude: f64,
    pub lyapunov: LyapunovParams,
    pub harris_c: f64,
    pub q: f64,
    pub radius_constants: [f64; 4],
    pub precision_bits: usize,
}

impl Default for ConstantsParams {
    fn default() -> Self {
        let p = shearmix::harris::PipelineInputs::new(10.0);
        ConstantsParams {
            amplitude: p.amplitude,
            lyapunov: p.lyapunov,
            harris_c: p.harris_c,
            q: p.q,
            radius_constants: p.radius_constants,
            precision_bits: p.precision_bits,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CoupleParams {
    pub amplitude: f64,
    /// Start pair `[x1, x2, y1, y2]`; drawn at random from the seed when absent.
    pub z: Option<[f64; 4]>,
    pub s_star: f64,
    pub max_steps: usize,
    pub r1: f64,
}

impl Default for CoupleParams {
    fn default() -> Self {
        CoupleParams {
            amplitude: 4.0,
            z: None,
            s_star: 1.0,
            max_steps: 100_000,
            r1: 1e-2,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DriftParams {
    pub amplitude: f64,
    pub lyapunov: LyapunovParams,
    pub z_samples: u64,
    pub mc_samples: u64,
    pub near_min: f64,
    pub near_max_fraction: f64,
}

impl Default for DriftParams {
    fn default() -> Self {
        let c = shearmix::harris::DriftConfig::default();
        DriftParams {
            amplitude: 40.0,
            lyapunov: LyapunovParams::default(),
            z_samples: c.z_samples,
            mc_samples: c.mc_samples,
            near_min: c.near_min,
            near_max_fraction: c.near_max_fraction,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MinorizeParams {
    pub amplitude: f64,
    pub n: usize,
    pub center: Option<[f64; 4]>,
    pub rho_in: f64,
    pub rho_out: Vec<f64>,
    pub boundary_samples: usize,
    pub mc_samples: u64,
}

impl Default for MinorizeParams {
    fn default() -> Self {
        MinorizeParams {
            amplitude: 3.0,
            n: 2,
            center: None,
            rho_in: 0.01,
            rho_out: vec![0.5],
            boundary_samples: 8,
            mc_samples: 1_000_000,
        }
    }
}
