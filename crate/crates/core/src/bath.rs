//! Monte-Carlo P1 bath realizations around a single NV.
//!
//! Each realization index owns its own ChaCha stream, so a realization is a
//! pure function of `(spec, index)` and can be generated in any order.

use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spin_models::{dipolar_from_vector, Orientation};

pub const MAX_BATH_SPINS: usize = 8;
const MAX_PLACEMENT_ATTEMPTS: usize = 10_000;
const AVOGADRO: f64 = 6.022_140_76e23;
const DIAMOND_DENSITY_G_CM3: f64 = 3.515;
const CARBON_MOLAR_MASS: f64 = 12.011;
/// Offset between the geometry seed and the label-shuffle seed.
const LABEL_SEED_SALT: u64 = 0x9e37_79b9_7f4a_7c15;

/// Carbon atoms per cm³ of diamond times 10⁻⁶.
pub fn ppm_to_per_cm3(ppm: f64) -> f64 {
    ppm * 1e-6 * DIAMOND_DENSITY_G_CM3 / CARBON_MOLAR_MASS * AVOGADRO
}

pub fn ppm_to_per_nm3(ppm: f64) -> f64 {
    ppm_to_per_cm3(ppm) * 1e-21
}

/// Static Gaussian frequency spread (MHz) whose ensemble Ramsey envelope is `exp(−(t/T₂*)²)`.
pub fn t2star_to_sigma(t2_star_ns: f64) -> f64 {
    let t_us = t2_star_ns * 1e-3;
    2f64.sqrt() / (2.0 * PI * t_us)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DetuningModel {
    /// NV and every P1 get an independent static offset ~ N(0, σ_f).
    #[default]
    GaussianStatic,
    /// Only the NV is detuned.
    NvOnly,
    None,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LabelSampling {
    /// Orientation and nuclear state drawn independently per spin.
    #[default]
    Independent,
    /// Labels dealt from shuffled decks of the 12 (orientation, mI) pairs
    /// across consecutive spins of consecutive realizations.
    Stratified,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BathSpec {
    pub density_ppm: f64,
    pub n_spins: usize,
    pub exclusion_radius_nm: f64,
    pub max_radius_nm: f64,
    pub seed: u64,
    pub t2_star_ns: f64,
    pub detuning_model: DetuningModel,
    pub label_sampling: LabelSampling,
    pub p1_p1_couplings: bool,
}

impl Default for BathSpec {
    fn default() -> Self {
        Self {
            density_ppm: 100.0,
            n_spins: 5,
            exclusion_radius_nm: 1.0,
            max_radius_nm: 30.0,
            seed: 0,
            t2_star_ns: 110.0,
            detuning_model: DetuningModel::GaussianStatic,
            label_sampling: LabelSampling::Independent,
            p1_p1_couplings: true,
        }
    }
}

impl BathSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.density_ppm > 0.0 && self.density_ppm.is_finite()) {
            return Err(Error::invalid(format!("P1 density must be positive, got {} ppm", self.density_ppm)));
        }
        if !(1..=MAX_BATH_SPINS).contains(&self.n_spins) {
            return Err(Error::invalid(format!("n_spins must be in 1..={MAX_BATH_SPINS}, got {}", self.n_spins)));
        }
        if !(self.exclusion_radius_nm > 0.0 && self.exclusion_radius_nm < self.max_radius_nm && self.max_radius_nm.is_finite()) {
            return Err(Error::invalid(format!(
                "need 0 < exclusion radius < max radius, got {} and {} nm",
                self.exclusion_radius_nm, self.max_radius_nm
            )));
        }
        if self.detuning_model != DetuningModel::None && !(self.t2_star_ns > 0.0) {
            return Err(Error::invalid(format!("T2* must be positive, got {} ns", self.t2_star_ns)));
        }
        Ok(())
    }

    /// Outer radius of the sampling shell: the volume holding `n_spins` at the
    /// configured density, capped at `max_radius_nm`.
    pub fn shell_radius_nm(&self) -> f64 {
        let rho = ppm_to_per_nm3(self.density_ppm);
        let r_ex = self.exclusion_radius_nm;
        let r3 = r_ex.powi(3) + 3.0 * self.n_spins as f64 / (4.0 * PI * rho);
        r3.cbrt().min(self.max_radius_nm)
    }

    pub fn sigma_mhz(&self) -> f64 {
        match self.detuning_model {
            DetuningModel::None => 0.0,
            _ => t2star_to_sigma(self.t2_star_ns),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BathSite {
    pub position_nm: [f64; 3],
    pub orientation: Orientation,
    pub m_i: i8,
    pub d_nv_mhz: f64,
    pub delta_mhz: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BathRealization {
    pub seed: u64,
    pub index: u64,
    pub nv_delta_mhz: f64,
    pub sites: Vec<BathSite>,
    /// Symmetric matrix of P1–P1 couplings in MHz; empty when disabled.
    #[serde(default)]
    pub p1_p1_couplings_mhz: Vec<Vec<f64>>,
}

impl BathRealization {
    /// A hand-placed bath with no disorder, for oracle tests.
    pub fn from_positions(positions: &[[f64; 3]], labels: &[(Orientation, i8)], p1_p1: bool) -> Result<Self> {
        if positions.len() != labels.len() {
            return Err(Error::invalid("positions and labels differ in length"));
        }
        let sites = positions
            .iter()
            .zip(labels)
            .map(|(&p, &(orientation, m_i))| {
                Ok(BathSite { position_nm: p, orientation, m_i, d_nv_mhz: dipolar_from_vector(p)?, delta_mhz: 0.0 })
            })
            .collect::<Result<Vec<_>>>()?;
        let p1_p1_couplings_mhz = if p1_p1 { pair_couplings(&sites)? } else { Vec::new() };
        Ok(Self { seed: 0, index: 0, nv_delta_mhz: 0.0, sites, p1_p1_couplings_mhz })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn median_abs_coupling(&self) -> f64 {
        median(self.sites.iter().map(|s| s.d_nv_mhz.abs()).collect())
    }
}

fn pair_couplings(sites: &[BathSite]) -> Result<Vec<Vec<f64>>> {
    let n = sites.len();
    let mut m = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let a = sites[i].position_nm;
            let b = sites[j].position_nm;
            let d = dipolar_from_vector([b[0] - a[0], b[1] - a[1], b[2] - a[2]])?;
            m[i][j] = d;
            m[j][i] = d;
        }
    }
    Ok(m)
}

fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn label_of(code: usize) -> (Orientation, i8) {
    let orientation = Orientation::all()[code / 3];
    (orientation, code as i8 % 3 - 1)
}

/// Labels for the spins of realization `index` under stratified sampling.
fn stratified_labels(seed: u64, index: u64, n: usize) -> Vec<(Orientation, i8)> {
    let mut out = Vec::with_capacity(n);
    let mut deck_id = u64::MAX;
    let mut deck: Vec<usize> = Vec::new();
    for j in 0..n as u64 {
        let slot = index * n as u64 + j;
        let id = slot / 12;
        if id != deck_id {
            deck = (0..12).collect();
            deck.shuffle(&mut stream_rng(seed ^ LABEL_SEED_SALT, id));
            deck_id = id;
        }
        out.push(label_of(deck[(slot % 12) as usize]));
    }
    out
}

pub fn sample_bath(spec: &BathSpec) -> Result<BathRealization> {
    sample_bath_indexed(spec, 0)
}

/// Uniform positions in the shell `r_in ≤ r ≤ r_out`, at least `min_sep` apart.
fn place_spins(rng: &mut ChaCha8Rng, n: usize, r_in: f64, r_out: f64, min_sep: f64) -> Result<Vec<[f64; 3]>> {
    let (lo3, hi3) = (r_in.powi(3), r_out.powi(3));
    let mut positions: Vec<[f64; 3]> = Vec::with_capacity(n);
    let mut attempts = 0;
    while positions.len() < n {
        attempts += 1;
        if attempts > MAX_PLACEMENT_ATTEMPTS {
            return Err(Error::SamplingFailure(format!(
                "could not place {n} spins {min_sep} nm apart in a {r_in}-{r_out:.3} nm shell after {MAX_PLACEMENT_ATTEMPTS} attempts"
            )));
        }
        let r = (lo3 + rng.random::<f64>() * (hi3 - lo3)).cbrt();
        let cos_t = 2.0 * rng.random::<f64>() - 1.0;
        let phi = 2.0 * PI * rng.random::<f64>();
        let sin_t = (1.0 - cos_t * cos_t).max(0.0).sqrt();
        let p = [r * sin_t * phi.cos(), r * sin_t * phi.sin(), r * cos_t];
        let clear = positions.iter().all(|q| {
            let d2 = (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2);
            d2 >= min_sep * min_sep
        });
        if clear {
            positions.push(p);
        }
    }
    Ok(positions)
}

/// Realization number `index` of the ensemble defined by `spec`.
pub fn sample_bath_indexed(spec: &BathSpec, index: u64) -> Result<BathRealization> {
    spec.validate()?;
    let mut rng = stream_rng(spec.seed, index);
    let positions = place_spins(&mut rng, spec.n_spins, spec.exclusion_radius_nm, spec.shell_radius_nm(), spec.exclusion_radius_nm)?;

    let labels: Vec<(Orientation, i8)> = match spec.label_sampling {
        LabelSampling::Independent => (0..spec.n_spins).map(|_| label_of(rng.random_range(0..12))).collect(),
        LabelSampling::Stratified => stratified_labels(spec.seed, index, spec.n_spins),
    };

    let sigma = spec.sigma_mhz();
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::numeric(e.to_string()))?;
    let mut draw = |on: bool| if on && sigma > 0.0 { normal.sample(&mut rng) } else { 0.0 };
    let nv_delta_mhz = draw(spec.detuning_model != DetuningModel::None);
    let p1_detuned = spec.detuning_model == DetuningModel::GaussianStatic;

    let mut sites = Vec::with_capacity(spec.n_spins);
    for (p, (orientation, m_i)) in positions.into_iter().zip(labels) {
        sites.push(BathSite { position_nm: p, orientation, m_i, d_nv_mhz: dipolar_from_vector(p)?, delta_mhz: draw(p1_detuned) });
    }
    let p1_p1_couplings_mhz = if spec.p1_p1_couplings { pair_couplings(&sites)? } else { Vec::new() };
    Ok(BathRealization { seed: spec.seed, index, nv_delta_mhz, sites, p1_p1_couplings_mhz })
}

/// Median `|d_nv|` pooled over `n` realizations.
pub fn typical_coupling_over(spec: &BathSpec, n: u64) -> Result<f64> {
    let mut all = Vec::new();
    for i in 0..n {
        all.extend(sample_bath_indexed(spec, i)?.sites.iter().map(|s| s.d_nv_mhz.abs()));
    }
    Ok(median(all))
}

/// Median `|d_nv|` over 10³ realizations.
pub fn typical_coupling(spec: &BathSpec) -> Result<f64> {
    typical_coupling_over(spec, 1000)
}
