//! NV and P1 Hamiltonians, the NV–P1 dipolar coupling, the secular
//! rotating-frame Hamiltonian used by the pulse compiler, and the
//! resonance-condition calculators.
//!
//! Sign conventions: every spin is described as a pseudo-spin-1/2 on the
//! driven transition, with the lab Hamiltonian `-f·Sz`. In a frame rotating at
//! `f_frame` the residual term is `(f_frame - f)·Sz`, i.e. the detuning of the
//! carrier from the transition. The NV `|ms=0⟩` state is pseudo-spin up.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::bath::BathRealization;
use crate::error::{Error, Result};
use crate::quantum::{embed_product, re, spin_matrices, CMatrix, HilbertSpace, Operator};

/// Electron gyromagnetic ratio, MHz per gauss.
pub const GAMMA_E_MHZ_PER_GAUSS: f64 = 2.8;
/// NV ground-state zero-field splitting, MHz.
pub const NV_ZFS_MHZ: f64 = 2870.0;
/// P1 hyperfine splitting with the Jahn-Teller axis parallel to the field, MHz.
pub const P1_A_ON_AXIS_MHZ: f64 = 114.0;
/// P1 hyperfine splitting for the three oblique Jahn-Teller axes, MHz.
pub const P1_A_OFF_AXIS_MHZ: f64 = 90.0;

/// `μ0 (g μB)² / (4π h)` for two free electrons, in MHz·nm³.
///
/// Frozen from CODATA 2018; `dipolar_prefactor_matches_codata` recomputes it.
pub const DIPOLAR_PREFACTOR_MHZ_NM3: f64 = 52.041_016;

pub const NV_SITE: &str = "nv";

pub fn p1_site_name(index: usize) -> String {
    format!("p1_{}", index + 1)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NvRepresentation {
    /// Effective two-level system on `{|0⟩, |−1⟩}`.
    #[default]
    TwoLevel,
    /// Full S=1 triplet; the `|+1⟩` level is spectator under RWA.
    FullSpin1,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NvParams {
    pub zfs_mhz: f64,
    pub gamma_mhz_per_gauss: f64,
    pub representation: NvRepresentation,
}

impl Default for NvParams {
    fn default() -> Self {
        Self {
            zfs_mhz: NV_ZFS_MHZ,
            gamma_mhz_per_gauss: GAMMA_E_MHZ_PER_GAUSS,
            representation: NvRepresentation::TwoLevel,
        }
    }
}

impl NvParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.zfs_mhz > 0.0 && self.zfs_mhz.is_finite()) {
            return Err(Error::invalid(format!("NV zero-field splitting must be positive, got {}", self.zfs_mhz)));
        }
        if !(self.gamma_mhz_per_gauss > 0.0 && self.gamma_mhz_per_gauss.is_finite()) {
            return Err(Error::invalid(format!("NV gyromagnetic ratio must be positive, got {}", self.gamma_mhz_per_gauss)));
        }
        Ok(())
    }

    /// `|0⟩ ↔ |−1⟩` transition frequency, MHz.
    pub fn transition_frequency(&self, b0_gauss: f64) -> f64 {
        self.zfs_mhz - self.gamma_mhz_per_gauss * b0_gauss
    }

    pub(crate) fn dim(&self) -> usize {
        match self.representation {
            NvRepresentation::TwoLevel => 2,
            NvRepresentation::FullSpin1 => 3,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct P1Params {
    pub gamma_mhz_per_gauss: f64,
    pub a_on_axis_mhz: f64,
    pub a_off_axis_mhz: f64,
}

impl Default for P1Params {
    fn default() -> Self {
        Self {
            gamma_mhz_per_gauss: GAMMA_E_MHZ_PER_GAUSS,
            a_on_axis_mhz: P1_A_ON_AXIS_MHZ,
            a_off_axis_mhz: P1_A_OFF_AXIS_MHZ,
        }
    }
}

/// One of the four ⟨111⟩ Jahn-Teller axes; axis 1 is parallel to the field.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct Orientation(u8);

impl Orientation {
    pub const ON_AXIS: Orientation = Orientation(1);

    pub fn new(axis: u8) -> Result<Self> {
        if (1..=4).contains(&axis) {
            Ok(Self(axis))
        } else {
            Err(Error::invalid(format!("Jahn-Teller orientation must be 1..=4, got {axis}")))
        }
    }

    pub fn get(self) -> u8 {
        self.0
    }

    pub fn is_on_axis(self) -> bool {
        self.0 == 1
    }

    pub fn all() -> [Orientation; 4] {
        [Orientation(1), Orientation(2), Orientation(3), Orientation(4)]
    }
}

impl TryFrom<u8> for Orientation {
    type Error = Error;

    fn try_from(v: u8) -> Result<Self> {
        Orientation::new(v)
    }
}

impl From<Orientation> for u8 {
    fn from(o: Orientation) -> u8 {
        o.0
    }
}

/// Static classical labels of one P1 center.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct P1Label {
    pub orientation: Orientation,
    pub m_i: i8,
}

impl P1Label {
    pub fn new(orientation: Orientation, m_i: i8) -> Result<Self> {
        if !(-1..=1).contains(&m_i) {
            return Err(Error::invalid(format!("nuclear projection must be -1, 0 or +1, got {m_i}")));
        }
        Ok(Self { orientation, m_i })
    }
}

impl P1Params {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("P1 gyromagnetic ratio", self.gamma_mhz_per_gauss),
            ("on-axis hyperfine", self.a_on_axis_mhz),
            ("off-axis hyperfine", self.a_off_axis_mhz),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }

    pub fn hyperfine(&self, orientation: Orientation) -> f64 {
        if orientation.is_on_axis() {
            self.a_on_axis_mhz
        } else {
            self.a_off_axis_mhz
        }
    }

    /// Secular hyperfine shift `A·mI` of the electron transition, MHz.
    pub fn hyperfine_shift(&self, label: P1Label) -> f64 {
        self.hyperfine(label.orientation) * f64::from(label.m_i)
    }

    /// Electron transition frequency `γ·B0 + A·mI`, MHz.
    pub fn transition_frequency(&self, label: P1Label, b0_gauss: f64) -> f64 {
        self.gamma_mhz_per_gauss * b0_gauss + self.hyperfine_shift(label)
    }

    /// 1-based index of the ESR line (ascending frequency) this label belongs to.
    pub fn line_index(&self, label: P1Label) -> usize {
        let shift = self.hyperfine_shift(label);
        self.line_offsets()
            .iter()
            .position(|o| (o - shift).abs() < 1e-9)
            .map(|i| i + 1)
            .expect("every label maps to a line")
    }

    fn line_offsets(&self) -> Vec<f64> {
        let mut offsets: Vec<f64> = Vec::with_capacity(5);
        for o in Orientation::all() {
            for m in [-1i8, 0, 1] {
                let s = self.hyperfine(o) * f64::from(m);
                if !offsets.iter().any(|x| (x - s).abs() < 1e-9) {
                    offsets.push(s);
                }
            }
        }
        offsets.sort_by(|a, b| a.total_cmp(b));
        offsets
    }
}

/// One P1 ESR line for a field along ⟨111⟩.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct P1Line {
    /// 1-based, ascending in frequency.
    pub index: usize,
    pub frequency_mhz: f64,
    /// Hyperfine offset from `γ·B0`.
    pub offset_mhz: f64,
    /// Fraction of P1 centers contributing, over uniform orientations and nuclear states.
    pub weight: f64,
}

/// The five P1 ESR lines and their relative weights at field `b0_gauss`.
pub fn p1_transition_frequencies(p: &P1Params, b0_gauss: f64) -> Result<Vec<P1Line>> {
    p.validate()?;
    if !(b0_gauss > 0.0 && b0_gauss.is_finite()) {
        return Err(Error::invalid(format!("field must be positive, got {b0_gauss} G")));
    }
    let center = p.gamma_mhz_per_gauss * b0_gauss;
    let offsets = p.line_offsets();
    let mut weights = vec![0.0; offsets.len()];
    for o in Orientation::all() {
        for m in [-1i8, 0, 1] {
            let label = P1Label { orientation: o, m_i: m };
            weights[p.line_index(label) - 1] += 1.0 / 12.0;
        }
    }
    Ok(offsets
        .into_iter()
        .zip(weights)
        .enumerate()
        .map(|(i, (offset, weight))| P1Line { index: i + 1, frequency_mhz: center + offset, offset_mhz: offset, weight })
        .collect())
}

/// NV ground-state Hamiltonian in the lab frame, MHz.
///
/// Full representation: `D·Sz² + γ·B0·Sz`, which puts `|−1⟩` at `D − γ·B0`.
/// Two-level representation: `diag(0, D − γ·B0)` on `{|0⟩, |−1⟩}`.
pub fn nv_lab_hamiltonian(p: &NvParams, b0_gauss: f64) -> Result<Operator> {
    p.validate()?;
    if !(b0_gauss >= 0.0 && b0_gauss.is_finite()) {
        return Err(Error::invalid(format!("field must be non-negative, got {b0_gauss} G")));
    }
    let space = Arc::new(HilbertSpace::single(NV_SITE, p.dim())?);
    let m = match p.representation {
        NvRepresentation::FullSpin1 => {
            let (_, _, sz, _, _) = spin_matrices(3);
            &sz * &sz * re(p.zfs_mhz) + &sz * re(p.gamma_mhz_per_gauss * b0_gauss)
        }
        NvRepresentation::TwoLevel => {
            let mut m = CMatrix::zeros(2, 2);
            m[(1, 1)] = re(p.transition_frequency(b0_gauss));
            m
        }
    };
    Operator::new(space, m)
}

/// P1 electron Hamiltonian `−(γ·B0 + A·mI)·Sz` with the nuclear projection as a static label.
pub fn p1_lab_hamiltonian(p: &P1Params, label: P1Label, b0_gauss: f64) -> Result<Operator> {
    p.validate()?;
    let label = P1Label::new(label.orientation, label.m_i)?;
    let space = Arc::new(HilbertSpace::single("p1", 2)?);
    let (_, _, sz, _, _) = spin_matrices(2);
    Operator::new(space, sz * re(-p.transition_frequency(label, b0_gauss)))
}

/// Secular dipolar coefficient `K (1 − 3cos²θ) / r³` in MHz, `r` in nm.
pub fn dipolar_coefficient(r_nm: f64, theta: f64) -> Result<f64> {
    if !(r_nm > 0.0 && r_nm.is_finite()) {
        return Err(Error::invalid(format!("separation must be positive, got {r_nm} nm")));
    }
    let c = theta.cos();
    let angular = 1.0 - 3.0 * c * c;
    // Snap the magic-angle cancellation to an exact zero.
    let angular = if angular.abs() < 1e-14 { 0.0 } else { angular };
    Ok(DIPOLAR_PREFACTOR_MHZ_NM3 * angular / (r_nm * r_nm * r_nm))
}

/// Dipolar coefficient for a separation vector with the field along `z`.
pub fn dipolar_from_vector(v: [f64; 3]) -> Result<f64> {
    let r = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    if r == 0.0 {
        return Err(Error::invalid("coincident spins"));
    }
    dipolar_coefficient(r, (v[2] / r).clamp(-1.0, 1.0).acos())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DipolarLink {
    pub r_nm: f64,
    pub theta: f64,
    pub d_mhz: f64,
}

impl DipolarLink {
    pub fn new(r_nm: f64, theta: f64) -> Result<Self> {
        Ok(Self { r_nm, theta, d_mhz: dipolar_coefficient(r_nm, theta)? })
    }
}

/// Lab-frame NV–P1 coupling `d·[Sz Sz − (S₊S₋ + S₋S₊)/(4√2)]` between two sites of `space`.
pub fn dipolar_hamiltonian(link: &DipolarLink, space: &Arc<HilbertSpace>, site_a: &str, site_b: &str) -> Result<Operator> {
    if site_a == site_b {
        return Err(Error::invalid(format!("dipolar coupling needs two distinct sites, got `{site_a}` twice")));
    }
    let (_, _, sz_a, sp_a, sm_a) = spin_matrices(space.factor_dim(site_a)?);
    let (_, _, sz_b, sp_b, sm_b) = spin_matrices(space.factor_dim(site_b)?);
    let zz = embed_product(space, &[(site_a, &sz_a), (site_b, &sz_b)])?;
    let pm = embed_product(space, &[(site_a, &sp_a), (site_b, &sm_b)])?;
    let mp = embed_product(space, &[(site_a, &sm_a), (site_b, &sp_b)])?;
    let flip = 1.0 / (4.0 * 2f64.sqrt());
    let m = (zz.matrix() - (pm.matrix() + mp.matrix()) * re(flip)) * re(link.d_mhz);
    Operator::new(space.clone(), m)
}

/// Rabi-frequency mismatch `Ω_NV − Ω_P1`, MHz.
pub fn hh_mismatch(omega_nv: f64, omega_p1: f64) -> f64 {
    omega_nv - omega_p1
}

pub fn is_hh_matched(omega_nv: f64, omega_p1: f64, tol_mhz: f64) -> bool {
    hh_mismatch(omega_nv, omega_p1).abs() <= tol_mhz
}

/// Field at which the NV `|0⟩↔|−1⟩` splitting equals the P1 `mI = 0` splitting.
pub fn lac_field(nv: &NvParams, p1: &P1Params) -> Result<f64> {
    let sum = nv.gamma_mhz_per_gauss + p1.gamma_mhz_per_gauss;
    if sum == 0.0 || !sum.is_finite() {
        return Err(Error::invalid("gyromagnetic ratios sum to zero"));
    }
    Ok(nv.zfs_mhz / sum)
}

/// A P1 site inside a [`SpinSystem`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct P1Site {
    pub label: P1Label,
    /// Static detuning of this spin's transition, MHz.
    pub detuning_mhz: f64,
    /// NV–P1 secular coupling, MHz.
    pub d_nv_mhz: f64,
}

/// Pairwise P1–P1 coupling `(i, j, d)` with `i < j`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct P1Coupling {
    pub i: usize,
    pub j: usize,
    pub d_mhz: f64,
}

/// One NV plus a handful of P1 electron spins at a given field.
#[derive(Clone, Debug)]
pub struct SpinSystem {
    pub b0_gauss: f64,
    pub nv: NvParams,
    pub p1: P1Params,
    pub nv_detuning_mhz: f64,
    pub sites: Vec<P1Site>,
    pub p1_couplings: Vec<P1Coupling>,
    space: Arc<HilbertSpace>,
    names: Vec<String>,
}

impl SpinSystem {
    pub fn new(
        b0_gauss: f64,
        nv: NvParams,
        p1: P1Params,
        nv_detuning_mhz: f64,
        sites: Vec<P1Site>,
        p1_couplings: Vec<P1Coupling>,
    ) -> Result<Self> {
        nv.validate()?;
        p1.validate()?;
        if !(b0_gauss >= 0.0 && b0_gauss.is_finite()) {
            return Err(Error::invalid(format!("field must be non-negative, got {b0_gauss} G")));
        }
        for c in &p1_couplings {
            if c.i >= c.j || c.j >= sites.len() {
                return Err(Error::invalid(format!("bad P1 coupling indices ({}, {})", c.i, c.j)));
            }
        }
        let mut names = vec![NV_SITE.to_string()];
        names.extend((0..sites.len()).map(p1_site_name));
        let mut factors = vec![(NV_SITE.to_string(), nv.dim())];
        factors.extend((0..sites.len()).map(|i| (p1_site_name(i), 2)));
        let space = Arc::new(HilbertSpace::new(factors)?);
        Ok(Self { b0_gauss, nv, p1, nv_detuning_mhz, sites, p1_couplings, space, names })
    }

    pub fn from_realization(b0_gauss: f64, nv: NvParams, p1: P1Params, bath: &BathRealization) -> Result<Self> {
        let sites = bath
            .sites
            .iter()
            .map(|s| Ok(P1Site { label: P1Label::new(s.orientation, s.m_i)?, detuning_mhz: s.delta_mhz, d_nv_mhz: s.d_nv_mhz }))
            .collect::<Result<Vec<_>>>()?;
        let mut couplings = Vec::new();
        for (i, row) in bath.p1_p1_couplings_mhz.iter().enumerate() {
            for (j, &d) in row.iter().enumerate().skip(i + 1) {
                if d != 0.0 {
                    couplings.push(P1Coupling { i, j, d_mhz: d });
                }
            }
        }
        Self::new(b0_gauss, nv, p1, bath.nv_delta_mhz, sites, couplings)
    }

    pub fn space(&self) -> &Arc<HilbertSpace> {
        &self.space
    }

    /// Site names in factor order: `nv`, `p1_1`, … .
    pub fn site_names(&self) -> &[String] {
        &self.names
    }

    pub fn p1_count(&self) -> usize {
        self.sites.len()
    }

    fn p1_index(&self, site: &str) -> Result<usize> {
        match self.names.iter().position(|n| n == site) {
            Some(0) | None => Err(Error::UnknownSite(site.to_string())),
            Some(k) => Ok(k - 1),
        }
    }

    /// Transition frequency without static disorder, MHz.
    pub fn nominal_frequency(&self, site: &str) -> Result<f64> {
        if site == NV_SITE {
            return Ok(self.nv.transition_frequency(self.b0_gauss));
        }
        let s = &self.sites[self.p1_index(site)?];
        Ok(self.p1.transition_frequency(s.label, self.b0_gauss))
    }

    /// Actual transition frequency including static detuning, MHz.
    pub fn transition_frequency(&self, site: &str) -> Result<f64> {
        if site == NV_SITE {
            return Ok(self.nv.transition_frequency(self.b0_gauss) + self.nv_detuning_mhz);
        }
        let s = &self.sites[self.p1_index(site)?];
        Ok(self.p1.transition_frequency(s.label, self.b0_gauss) + s.detuning_mhz)
    }

    /// ESR line index (1..=5) of a P1 site.
    pub fn line_of(&self, site: &str) -> Result<usize> {
        let s = &self.sites[self.p1_index(site)?];
        Ok(self.p1.line_index(s.label))
    }

    /// Pseudo-spin `(Sx, Sy, Sz)` on the driven transition of a site's factor.
    pub fn pseudo_spin(&self, site: &str) -> Result<[CMatrix; 3]> {
        let dim = self.space.factor_dim(site)?;
        if dim == 2 {
            let (sx, sy, sz, _, _) = spin_matrices(2);
            return Ok([sx, sy, sz]);
        }
        // Full S=1 NV: basis (+1, 0, −1), transition between indices 1 and 2.
        let (sx2, sy2, sz2, _, _) = spin_matrices(2);
        let lift = |m: &CMatrix| {
            let mut out = CMatrix::zeros(3, 3);
            for i in 0..2 {
                for j in 0..2 {
                    out[(i + 1, j + 1)] = m[(i, j)];
                }
            }
            out
        };
        Ok([lift(&sx2), lift(&sy2), lift(&sz2)])
    }

    /// Lab `Sz` of a site (S=1 matrix for a full NV), used in couplings.
    fn lab_sz(&self, site: &str) -> Result<CMatrix> {
        let dim = self.space.factor_dim(site)?;
        if dim == 3 {
            Ok(spin_matrices(3).2)
        } else {
            Ok(spin_matrices(2).2)
        }
    }

    /// Projector on NV `|ms=0⟩`, local to the NV factor.
    pub fn nv_zero_projector(&self) -> CMatrix {
        let dim = self.nv.dim();
        let mut p = CMatrix::zeros(dim, dim);
        let k = if dim == 3 { 1 } else { 0 };
        p[(k, k)] = re(1.0);
        p
    }

    /// Projector on NV `|ms=0⟩` on the full space.
    pub fn nv_zero_observable(&self) -> Operator {
        embed_product(&self.space, &[(NV_SITE, &self.nv_zero_projector())]).expect("nv factor exists")
    }

    /// `Ω (cos φ Sx + sin φ Sy)` on `site`, full space.
    pub fn drive_operator(&self, site: &str, omega_mhz: f64, phase_rad: f64) -> Result<Operator> {
        let [sx, sy, _] = self.pseudo_spin(site)?;
        let local = sx * re(omega_mhz * phase_rad.cos()) + sy * re(omega_mhz * phase_rad.sin());
        embed_product(&self.space, &[(site, &local)])
    }

    /// Secular coupling network plus residual detunings in the given frames.
    pub fn static_rotating_hamiltonian(&self, frames: &FrameSpec) -> Result<Operator> {
        if !frames.rwa {
            return Err(Error::invalid("only rotating-wave (RWA) frames are supported"));
        }
        let n = self.space.dim();
        let mut h = CMatrix::zeros(n, n);
        for site in &self.names {
            let frame = match frames.get(site) {
                Some(f) => f.frequency_mhz,
                None => self.nominal_frequency(site)?,
            };
            let delta = frame - self.transition_frequency(site)?;
            if delta != 0.0 {
                let [_, _, sz] = self.pseudo_spin(site)?;
                h += embed_product(&self.space, &[(site.as_str(), &(sz * re(delta)))])?.into_matrix();
            }
        }
        let nv_sz = self.lab_sz(NV_SITE)?;
        let (_, _, sz, sp, sm) = spin_matrices(2);
        for (i, s) in self.sites.iter().enumerate() {
            if s.d_nv_mhz == 0.0 {
                continue;
            }
            let name = p1_site_name(i);
            h += embed_product(&self.space, &[(NV_SITE, &nv_sz), (name.as_str(), &(&sz * re(s.d_nv_mhz)))])?.into_matrix();
        }
        for c in &self.p1_couplings {
            let (a, b) = (p1_site_name(c.i), p1_site_name(c.j));
            let zz = embed_product(&self.space, &[(a.as_str(), &sz), (b.as_str(), &sz)])?.into_matrix();
            h += zz * re(c.d_mhz);
            let same_line = self.p1.line_index(self.sites[c.i].label) == self.p1.line_index(self.sites[c.j].label);
            if same_line {
                // Homonuclear secular form: flip-flops between spins on the same line.
                let pm = embed_product(&self.space, &[(a.as_str(), &sp), (b.as_str(), &sm)])?.into_matrix();
                let mp = embed_product(&self.space, &[(a.as_str(), &sm), (b.as_str(), &sp)])?.into_matrix();
                h -= (pm + mp) * re(0.25 * c.d_mhz);
            }
        }
        Operator::new(self.space.clone(), h)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SiteFrame {
    pub frequency_mhz: f64,
    /// Declares that a drive must be present for this site.
    pub driven: bool,
}

/// Per-site rotating-frame frequencies.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameSpec {
    pub frames: BTreeMap<String, SiteFrame>,
    pub rwa: bool,
}

impl Default for FrameSpec {
    fn default() -> Self {
        Self { frames: BTreeMap::new(), rwa: true }
    }
}

impl FrameSpec {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_site(mut self, site: impl Into<String>, frequency_mhz: f64, driven: bool) -> Result<Self> {
        self.insert(site, frequency_mhz, driven)?;
        Ok(self)
    }

    pub fn insert(&mut self, site: impl Into<String>, frequency_mhz: f64, driven: bool) -> Result<()> {
        if !(frequency_mhz >= 0.0 && frequency_mhz.is_finite()) {
            return Err(Error::invalid(format!("frame frequency must be non-negative, got {frequency_mhz}")));
        }
        self.frames.insert(site.into(), SiteFrame { frequency_mhz, driven });
        Ok(())
    }

    /// Every site at its nominal transition frequency, none declared driven.
    pub fn nominal(system: &SpinSystem) -> Result<Self> {
        let mut f = Self::new();
        for site in system.site_names() {
            f.insert(site.clone(), system.nominal_frequency(site)?.abs(), false)?;
        }
        Ok(f)
    }

    pub fn get(&self, site: &str) -> Option<&SiteFrame> {
        self.frames.get(site)
    }
}

/// A resonant drive on one site, in that site's rotating frame.
#[derive(Clone, Debug, PartialEq)]
pub struct Drive {
    pub site: String,
    pub omega_mhz: f64,
    pub phase_rad: f64,
    /// Carrier offset from the site's frame frequency, MHz.
    pub detuning_mhz: f64,
}

impl Drive {
    pub fn new(site: impl Into<String>, omega_mhz: f64, phase_rad: f64) -> Self {
        Self { site: site.into(), omega_mhz, phase_rad, detuning_mhz: 0.0 }
    }

    pub fn detuned(mut self, detuning_mhz: f64) -> Self {
        self.detuning_mhz = detuning_mhz;
        self
    }
}

/// Rotating-frame Hamiltonian under RWA: per-site `Δ·Sz + Ω(cos φ Sx + sin φ Sy)`,
/// NV–P1 couplings reduced to `d·Sz Sz`, P1–P1 couplings on the same line in
/// homonuclear secular form and otherwise `d·Sz Sz`.
pub fn secular_rotating_hamiltonian(system: &SpinSystem, frames: &FrameSpec, drives: &[Drive]) -> Result<Operator> {
    let base = system.static_rotating_hamiltonian(frames)?;
    add_drives(system, frames, base, drives)
}

/// Add drive terms to a precomputed [`SpinSystem::static_rotating_hamiltonian`].
pub fn add_drives(system: &SpinSystem, frames: &FrameSpec, base: Operator, drives: &[Drive]) -> Result<Operator> {
    let mut h = base.into_matrix();
    for d in drives {
        let frame = frames.get(&d.site).ok_or_else(|| Error::MissingFrame(d.site.clone()))?;
        if d.omega_mhz > frame.frequency_mhz / 10.0 {
            log::warn!(
                "drive on `{}`: {} MHz Rabi frequency exceeds a tenth of the {} MHz carrier; RWA is questionable",
                d.site,
                d.omega_mhz,
                frame.frequency_mhz
            );
        }
        if d.omega_mhz != 0.0 {
            h += system.drive_operator(&d.site, d.omega_mhz, d.phase_rad)?.into_matrix();
        }
        if d.detuning_mhz != 0.0 {
            let [_, _, sz] = system.pseudo_spin(&d.site)?;
            h += embed_product(system.space(), &[(d.site.as_str(), &(sz * re(d.detuning_mhz)))])?.into_matrix();
        }
    }
    for (site, f) in &frames.frames {
        if f.driven && !drives.iter().any(|d| &d.site == site) {
            return Err(Error::MissingDrive(site.clone()));
        }
    }
    Operator::new(system.space().clone(), h)
}

/// Phase in radians for the conventional axis labels.
pub fn axis_phase(label: &str) -> Option<f64> {
    match label {
        "X" | "x" | "+X" => Some(0.0),
        "Y" | "y" | "+Y" => Some(PI / 2.0),
        "-X" | "-x" => Some(PI),
        "-Y" | "-y" => Some(3.0 * PI / 2.0),
        _ => None,
    }
}
