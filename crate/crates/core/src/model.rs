//! Physical constants, the carbon bath registry and Hamiltonian construction.
//!
//! Constants are stored in the units they are quoted in (GHz, MHz, kHz/G,
//! Gauss) and converted to angular rad/µs only through the accessor methods.

use std::f64::consts::TAU;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spincore::{identity, kron_all, real_diag, spin_operators, ComplexMatrix};

/// Largest bath the dense oracle is allowed to build.
pub const MAX_CARBONS: usize = 8;

const KHZ: f64 = TAU * 1e-3;
const MHZ: f64 = TAU;
const GHZ: f64 = TAU * 1e3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhysicalConstants {
    pub delta_ghz: f64,
    pub q_mhz: f64,
    pub gamma_e_mhz_per_g: f64,
    pub gamma_n_khz_per_g: f64,
    pub gamma_c_khz_per_g: f64,
    pub a_par_mhz: f64,
    pub b_z_gauss: f64,
}

impl Default for PhysicalConstants {
    fn default() -> Self {
        Self {
            delta_ghz: 2.87,
            q_mhz: -4.945,
            gamma_e_mhz_per_g: 2.8,
            gamma_n_khz_per_g: -0.308,
            gamma_c_khz_per_g: -1.07,
            a_par_mhz: -2.162,
            b_z_gauss: 479.0,
        }
    }
}

impl PhysicalConstants {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            self.delta_ghz,
            self.q_mhz,
            self.gamma_e_mhz_per_g,
            self.gamma_n_khz_per_g,
            self.gamma_c_khz_per_g,
            self.a_par_mhz,
            self.b_z_gauss,
        ];
        if fields.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("physical constants must be finite"));
        }
        if self.b_z_gauss <= 0.0 {
            return Err(Error::invalid("b_z must be positive"));
        }
        if self.delta_ghz <= 0.0 {
            return Err(Error::invalid("zero-field splitting must be positive"));
        }
        Ok(())
    }

    pub fn delta(&self) -> f64 {
        self.delta_ghz * GHZ
    }

    pub fn quadrupole(&self) -> f64 {
        self.q_mhz * MHZ
    }

    pub fn electron_zeeman(&self) -> f64 {
        self.gamma_e_mhz_per_g * MHZ * self.b_z_gauss
    }

    pub fn nitrogen_zeeman(&self) -> f64 {
        self.gamma_n_khz_per_g * KHZ * self.b_z_gauss
    }

    pub fn a_parallel(&self) -> f64 {
        self.a_par_mhz * MHZ
    }
}

/// Bare carbon precession frequency γ_c·B_z in rad/µs. Sign follows γ_c.
pub fn larmor_frequency(c: &PhysicalConstants) -> f64 {
    c.gamma_c_khz_per_g * KHZ * c.b_z_gauss
}

/// Hyperfine couplings of one bath carbon, in kHz.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CarbonParams {
    pub label: String,
    #[serde(rename = "a_zz_khz")]
    pub a_zz: f64,
    #[serde(rename = "a_xz_khz")]
    pub a_xz: f64,
    #[serde(rename = "sigma_zz_khz", default, skip_serializing_if = "Option::is_none")]
    pub sigma_zz: Option<f64>,
    #[serde(rename = "sigma_xz_khz", default, skip_serializing_if = "Option::is_none")]
    pub sigma_xz: Option<f64>,
}

impl CarbonParams {
    pub fn new(label: impl Into<String>, a_zz: f64, a_xz: f64) -> Self {
        Self { label: label.into(), a_zz, a_xz, sigma_zz: None, sigma_xz: None }
    }

    pub fn with_uncertainty(mut self, sigma_zz: f64, sigma_xz: f64) -> Self {
        self.sigma_zz = Some(sigma_zz);
        self.sigma_xz = Some(sigma_xz);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !self.a_zz.is_finite() || !self.a_xz.is_finite() {
            return Err(Error::invalid(format!("carbon {}: hyperfine values must be finite", self.label)));
        }
        for s in [self.sigma_zz, self.sigma_xz].into_iter().flatten() {
            if !(s >= 0.0) || !s.is_finite() {
                return Err(Error::invalid(format!("carbon {}: uncertainties must be nonnegative", self.label)));
            }
        }
        Ok(())
    }

    pub fn a_zz_angular(&self) -> f64 {
        self.a_zz * KHZ
    }

    pub fn a_xz_angular(&self) -> f64 {
        self.a_xz * KHZ
    }
}

/// The six calibrated carbons with their last-digit uncertainties.
pub fn table_carbons() -> Vec<CarbonParams> {
    vec![
        CarbonParams::new("C1", -77.02, 114.5).with_uncertainty(0.03, 0.1),
        CarbonParams::new("C2", 71.03, 58.7).with_uncertainty(0.03, 0.3),
        CarbonParams::new("C3", 4.0, 57.0).with_uncertainty(1.0, 7.0),
        CarbonParams::new("C4", -13.9, 65.0).with_uncertainty(0.8, 4.0),
        CarbonParams::new("C5", 16.0, 37.0).with_uncertainty(5.0, 9.0),
        CarbonParams::new("C6", -20.0, 41.0).with_uncertainty(3.0, 10.0),
    ]
}

/// Retained electron level. The qubit is |0⟩ = m_s 0, |1⟩ = m_s −1.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ElectronLevel {
    Zero,
    MinusOne,
}

impl ElectronLevel {
    pub fn from_ms(ms: i32) -> Result<Self> {
        match ms {
            0 => Ok(Self::Zero),
            -1 => Ok(Self::MinusOne),
            other => Err(Error::invalid(format!("electron level m_s = {other} is outside the qubit subspace"))),
        }
    }

    pub fn ms(self) -> f64 {
        match self {
            Self::Zero => 0.0,
            Self::MinusOne => -1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemConfig {
    #[serde(default)]
    pub constants: PhysicalConstants,
    /// 2 keeps the {m_I = +1, 0} pair; 3 keeps the full spin-1 nitrogen.
    #[serde(default = "default_levels")]
    pub nitrogen_levels: usize,
    /// 2 keeps the {m_s = 0, −1} qubit; 3 retains m_s = +1 (oracle only).
    #[serde(default = "default_levels")]
    pub electron_levels: usize,
    /// Draw carbon parameters from their stated uncertainties on load.
    #[serde(default)]
    pub sample_uncertainties: bool,
    #[serde(default, rename = "carbon")]
    pub carbons: Vec<CarbonParams>,
}

fn default_levels() -> usize {
    2
}

pub fn default_config() -> SystemConfig {
    SystemConfig {
        constants: PhysicalConstants::default(),
        nitrogen_levels: 2,
        electron_levels: 2,
        sample_uncertainties: false,
        carbons: table_carbons(),
    }
}

impl SystemConfig {
    pub fn validate(&self) -> Result<()> {
        self.constants.validate()?;
        if self.carbons.len() > MAX_CARBONS {
            return Err(Error::Capacity(format!(
                "{} carbons requested, at most {MAX_CARBONS} supported",
                self.carbons.len()
            )));
        }
        for k in &self.carbons {
            k.validate()?;
        }
        if !matches!(self.nitrogen_levels, 2 | 3) {
            return Err(Error::invalid("nitrogen_levels must be 2 or 3"));
        }
        if !matches!(self.electron_levels, 2 | 3) {
            return Err(Error::invalid("electron_levels must be 2 or 3"));
        }
        Ok(())
    }

    pub fn with_carbons(&self, carbons: Vec<CarbonParams>) -> Self {
        Self { carbons, ..self.clone() }
    }

    /// Parses the TOML config format; unknown keys are rejected.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: SystemConfig = toml::from_str(text).map_err(|e| {
            let line = e.span().map(|s| text[..s.start.min(text.len())].lines().count().max(1)).unwrap_or(0);
            Error::parse(line, e.message().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config is always representable as TOML")
    }

    /// Copy with every carbon redrawn from N(value, sigma). Carbons without
    /// uncertainties are left untouched.
    pub fn sampled(&self, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |mean: f64, sigma: Option<f64>| match sigma {
            Some(s) if s > 0.0 => Normal::new(mean, s).expect("finite sigma").sample(&mut rng),
            _ => mean,
        };
        let carbons = self
            .carbons
            .iter()
            .map(|k| CarbonParams {
                a_zz: draw(k.a_zz, k.sigma_zz),
                a_xz: draw(k.a_xz, k.sigma_xz),
                ..k.clone()
            })
            .collect();
        self.with_carbons(carbons)
    }

    /// Hilbert-space dimension of the full register.
    pub fn dimension(&self) -> usize {
        self.electron_levels * self.nitrogen_levels * (1usize << self.carbons.len())
    }
}

/// Carbon generator for an arbitrary electron projection (rad/µs).
pub(crate) fn carbon_hamiltonian_for_ms(k: &CarbonParams, c: &PhysicalConstants, ms: f64) -> ComplexMatrix {
    let ops = spin_operators(0.5).expect("spin 1/2 is supported");
    let z = larmor_frequency(c) + ms * k.a_zz_angular();
    let x = ms * k.a_xz_angular();
    ops.iz.scale(z) + ops.ix.scale(x)
}

/// Effective 2×2 carbon Hamiltonian while the electron sits in `ms`.
pub fn conditional_carbon_hamiltonian(k: &CarbonParams, c: &PhysicalConstants, ms: i32) -> Result<ComplexMatrix> {
    let level = ElectronLevel::from_ms(ms)?;
    Ok(carbon_hamiltonian_for_ms(k, c, level.ms()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Frame {
    Lab,
    /// Electron and nitrogen single-spin terms removed.
    Rotating,
}

/// Diagonal S_z for the retained electron levels.
pub fn electron_sz(levels: usize) -> Vec<f64> {
    if levels == 3 {
        vec![1.0, 0.0, -1.0]
    } else {
        vec![0.0, -1.0]
    }
}

/// Diagonal I_nz for the retained nitrogen levels.
pub fn nitrogen_iz(levels: usize) -> Vec<f64> {
    if levels == 3 {
        vec![1.0, 0.0, -1.0]
    } else {
        vec![1.0, 0.0]
    }
}

/// Embeds `op` at `slot` of a register with the given factor dimensions.
fn embed(op: &ComplexMatrix, slot: usize, dims: &[usize]) -> ComplexMatrix {
    let factors: Vec<ComplexMatrix> = dims
        .iter()
        .enumerate()
        .map(|(i, &d)| if i == slot { op.clone() } else { identity(d) })
        .collect();
    kron_all(&factors)
}

/// Full register Hamiltonian (electron ⊗ nitrogen ⊗ carbons) in rad/µs.
pub fn build_full_hamiltonian(cfg: &SystemConfig, frame: Frame) -> Result<ComplexMatrix> {
    cfg.validate()?;
    let c = &cfg.constants;
    let mut dims = vec![cfg.electron_levels, cfg.nitrogen_levels];
    dims.extend(std::iter::repeat_n(2, cfg.carbons.len()));
    let n = dims.iter().product();

    let sz_diag = electron_sz(cfg.electron_levels);
    let inz_diag = nitrogen_iz(cfg.nitrogen_levels);
    let sz = real_diag(&sz_diag);
    let inz = real_diag(&inz_diag);

    let sz_full = embed(&sz, 0, &dims);
    let inz_full = embed(&inz, 1, &dims);

    let mut h = ComplexMatrix::zeros(n, n);
    if frame == Frame::Lab {
        let sz2: Vec<f64> = sz_diag.iter().map(|m| m * m).collect();
        let inz2: Vec<f64> = inz_diag.iter().map(|m| m * m).collect();
        h += embed(&real_diag(&sz2), 0, &dims).scale(c.delta());
        h += sz_full.scale(c.electron_zeeman());
        h += inz_full.scale(c.nitrogen_zeeman());
        h += embed(&real_diag(&inz2), 1, &dims).scale(c.quadrupole());
    }
    h += (&sz_full * &inz_full).scale(c.a_parallel());

    let half = spin_operators(0.5)?;
    let omega_l = larmor_frequency(c);
    for (k, carbon) in cfg.carbons.iter().enumerate() {
        let icz = embed(&half.iz, 2 + k, &dims);
        let icx = embed(&half.ix, 2 + k, &dims);
        h += icz.scale(omega_l);
        h += &sz_full * (icz.scale(carbon.a_zz_angular()) + icx.scale(carbon.a_xz_angular()));
    }
    Ok(h)
}
