//! Operator algebra on tensor-product spin spaces and exact propagation of
//! density matrices under piecewise-constant Hamiltonians.
//!
//! Hamiltonians are expressed in ordinary frequency units (MHz) and times in
//! microseconds, so a propagator is `exp(-i 2π H t)`.

use std::f64::consts::PI;
use std::fmt;
use std::ops::{Add, Mul, Sub};
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type C64 = Complex64;
pub type CMatrix = DMatrix<C64>;

/// Relative Frobenius tolerance for treating a matrix as Hermitian.
pub const HERMITIAN_TOL: f64 = 1e-10;
/// Max-norm tolerance on `U†U - 1`.
pub const UNITARY_TOL: f64 = 1e-10;
pub const TRACE_TOL: f64 = 1e-10;
pub const POSITIVITY_TOL: f64 = 1e-10;

const IMAG_ERROR_TOL: f64 = 1e-8;

pub(crate) const ZERO: C64 = C64::new(0.0, 0.0);
pub(crate) const ONE: C64 = C64::new(1.0, 0.0);

#[inline]
pub(crate) fn re(x: f64) -> C64 {
    C64::new(x, 0.0)
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Factor {
    pub label: String,
    pub dim: usize,
}

/// Ordered tensor product of labeled factors.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct HilbertSpace {
    factors: Vec<Factor>,
    total_dim: usize,
}

impl HilbertSpace {
    pub fn new<I, S>(factors: I) -> Result<Self>
    where
        I: IntoIterator<Item = (S, usize)>,
        S: Into<String>,
    {
        let factors: Vec<Factor> = factors
            .into_iter()
            .map(|(label, dim)| Factor { label: label.into(), dim })
            .collect();
        if factors.is_empty() {
            return Err(Error::invalid("Hilbert space needs at least one factor"));
        }
        for (i, f) in factors.iter().enumerate() {
            if f.dim < 2 {
                return Err(Error::invalid(format!("factor `{}` has dimension {} < 2", f.label, f.dim)));
            }
            if factors[..i].iter().any(|g| g.label == f.label) {
                return Err(Error::invalid(format!("duplicate factor label `{}`", f.label)));
            }
        }
        let total_dim = factors.iter().map(|f| f.dim).product();
        Ok(Self { factors, total_dim })
    }

    pub fn single(label: impl Into<String>, dim: usize) -> Result<Self> {
        Self::new([(label.into(), dim)])
    }

    pub fn dim(&self) -> usize {
        self.total_dim
    }

    pub fn factors(&self) -> &[Factor] {
        &self.factors
    }

    pub fn position(&self, label: &str) -> Result<usize> {
        self.factors
            .iter()
            .position(|f| f.label == label)
            .ok_or_else(|| Error::UnknownSite(label.to_string()))
    }

    pub fn factor_dim(&self, label: &str) -> Result<usize> {
        Ok(self.factors[self.position(label)?].dim)
    }

    /// Dimensions to the left and right of factor `k`.
    fn strides(&self, k: usize) -> (usize, usize, usize) {
        let left = self.factors[..k].iter().map(|f| f.dim).product();
        let right = self.factors[k + 1..].iter().map(|f| f.dim).product();
        (left, self.factors[k].dim, right)
    }

    /// Space with factor `k` removed. Panics if the space has a single factor.
    fn without(&self, k: usize) -> HilbertSpace {
        let factors: Vec<Factor> = self
            .factors
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != k)
            .map(|(_, f)| f.clone())
            .collect();
        let total_dim = factors.iter().map(|f| f.dim).product();
        HilbertSpace { factors, total_dim }
    }
}

impl fmt::Display for HilbertSpace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.factors.iter().map(|x| format!("{}[{}]", x.label, x.dim)).collect();
        write!(f, "{}", parts.join(" ⊗ "))
    }
}

/// Dense operator on a labeled Hilbert space.
#[derive(Clone, Debug)]
pub struct Operator {
    space: Arc<HilbertSpace>,
    matrix: CMatrix,
}

impl PartialEq for Operator {
    fn eq(&self, other: &Self) -> bool {
        self.space == other.space && self.matrix == other.matrix
    }
}

impl Operator {
    pub fn new(space: Arc<HilbertSpace>, matrix: CMatrix) -> Result<Self> {
        let n = space.dim();
        if matrix.nrows() != n || matrix.ncols() != n {
            return Err(Error::SpaceMismatch(format!(
                "matrix is {}x{} but space {} has dimension {}",
                matrix.nrows(),
                matrix.ncols(),
                space,
                n
            )));
        }
        Ok(Self { space, matrix })
    }

    pub(crate) fn from_parts(space: Arc<HilbertSpace>, matrix: CMatrix) -> Self {
        debug_assert_eq!(matrix.nrows(), space.dim());
        Self { space, matrix }
    }

    pub fn zeros(space: Arc<HilbertSpace>) -> Self {
        let n = space.dim();
        Self { space, matrix: CMatrix::zeros(n, n) }
    }

    pub fn identity(space: Arc<HilbertSpace>) -> Self {
        let n = space.dim();
        Self { space, matrix: CMatrix::identity(n, n) }
    }

    pub fn space(&self) -> &Arc<HilbertSpace> {
        &self.space
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.matrix
    }

    pub fn into_matrix(self) -> CMatrix {
        self.matrix
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn adjoint(&self) -> Self {
        Self { space: self.space.clone(), matrix: self.matrix.adjoint() }
    }

    pub fn scale(&self, c: f64) -> Self {
        Self { space: self.space.clone(), matrix: &self.matrix * re(c) }
    }

    pub fn scale_complex(&self, c: C64) -> Self {
        Self { space: self.space.clone(), matrix: &self.matrix * c }
    }

    pub fn commutator(&self, other: &Operator) -> Result<Operator> {
        self.check_space(other)?;
        Ok(Self::from_parts(
            self.space.clone(),
            &self.matrix * &other.matrix - &other.matrix * &self.matrix,
        ))
    }

    pub fn trace(&self) -> C64 {
        self.matrix.trace()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.matrix.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.matrix.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    /// `‖H − H†‖_F / ‖H‖_F`, zero for the zero operator.
    pub fn hermiticity_error(&self) -> f64 {
        let norm = self.frobenius_norm();
        if norm == 0.0 {
            return 0.0;
        }
        let n = self.dim();
        let mut acc = 0.0;
        for i in 0..n {
            for j in 0..n {
                acc += (self.matrix[(i, j)] - self.matrix[(j, i)].conj()).norm_sqr();
            }
        }
        acc.sqrt() / norm
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        self.hermiticity_error() <= tol
    }

    pub fn hermitian_part(&self) -> Self {
        let m = (&self.matrix + self.matrix.adjoint()) * re(0.5);
        Self { space: self.space.clone(), matrix: m }
    }

    /// `max |U†U − 1|`.
    pub fn unitarity_error(&self) -> f64 {
        let n = self.dim();
        let g = self.matrix.adjoint() * &self.matrix;
        let mut err: f64 = 0.0;
        for i in 0..n {
            for j in 0..n {
                let target = if i == j { ONE } else { ZERO };
                err = err.max((g[(i, j)] - target).norm());
            }
        }
        err
    }

    pub fn is_unitary(&self, tol: f64) -> bool {
        self.unitarity_error() < tol
    }

    fn check_space(&self, other: &Operator) -> Result<()> {
        if self.space != other.space {
            return Err(Error::SpaceMismatch(format!("{} vs {}", self.space, other.space)));
        }
        Ok(())
    }

    /// `U† O U`, the Heisenberg-picture image of `self` under `u`.
    pub fn conjugate_by(&self, u: &Operator) -> Result<Operator> {
        self.check_space(u)?;
        let m = u.matrix.adjoint() * (&self.matrix * &u.matrix);
        Ok(Self::from_parts(self.space.clone(), m))
    }
}

macro_rules! impl_binop {
    ($trait:ident, $method:ident, $op:tt) => {
        impl $trait<&Operator> for &Operator {
            type Output = Operator;

            /// Panics when the operands live on different spaces.
            fn $method(self, rhs: &Operator) -> Operator {
                assert_eq!(self.space, rhs.space, "operator space mismatch");
                Operator::from_parts(self.space.clone(), &self.matrix $op &rhs.matrix)
            }
        }
    };
}

impl_binop!(Add, add, +);
impl_binop!(Sub, sub, -);
impl_binop!(Mul, mul, *);

/// Angular-momentum matrices for a single spin, basis ordered `m = s, s-1, …, -s`.
#[derive(Clone, Debug)]
pub struct SpinOperators {
    pub sx: Operator,
    pub sy: Operator,
    pub sz: Operator,
    pub s_plus: Operator,
    pub s_minus: Operator,
}

impl SpinOperators {
    pub fn dim(&self) -> usize {
        self.sz.dim()
    }
}

/// Twice the spin quantum number for a factor of the given dimension.
pub(crate) fn spin_of_dim(dim: usize) -> f64 {
    (dim as f64 - 1.0) / 2.0
}

pub(crate) fn spin_matrices(dim: usize) -> (CMatrix, CMatrix, CMatrix, CMatrix, CMatrix) {
    let s = spin_of_dim(dim);
    let mut sz = CMatrix::zeros(dim, dim);
    let mut sp = CMatrix::zeros(dim, dim);
    for k in 0..dim {
        let m = s - k as f64;
        sz[(k, k)] = re(m);
        if k > 0 {
            // S+ |m> = sqrt(s(s+1) - m(m+1)) |m+1>, and |m+1> sits at index k-1.
            sp[(k - 1, k)] = re((s * (s + 1.0) - m * (m + 1.0)).sqrt());
        }
    }
    let sm = sp.adjoint();
    let sx = (&sp + &sm) * re(0.5);
    let sy = (&sp - &sm) * C64::new(0.0, -0.5);
    (sx, sy, sz, sp, sm)
}

/// Spin matrices for spin quantum number `s` (a positive half-integer).
pub fn spin_operators(s: f64) -> Result<SpinOperators> {
    let twice = 2.0 * s;
    if !s.is_finite() || s <= 0.0 || (twice - twice.round()).abs() > 1e-12 || twice > 64.0 {
        return Err(Error::invalid(format!("spin quantum number {s} is not a positive half-integer")));
    }
    let dim = twice.round() as usize + 1;
    let space = Arc::new(HilbertSpace::single("spin", dim)?);
    let (sx, sy, sz, sp, sm) = spin_matrices(dim);
    let op = |m: CMatrix| Operator::from_parts(space.clone(), m);
    Ok(SpinOperators { sx: op(sx), sy: op(sy), sz: op(sz), s_plus: op(sp), s_minus: op(sm) })
}

/// Tensor product placing each `(label, local matrix)` on its factor and the
/// identity everywhere else.
pub fn embed_product(space: &Arc<HilbertSpace>, locals: &[(&str, &CMatrix)]) -> Result<Operator> {
    let mut placed: Vec<Option<&CMatrix>> = vec![None; space.factors().len()];
    for (label, m) in locals {
        let k = space.position(label)?;
        let dim = space.factors()[k].dim;
        if m.nrows() != dim || m.ncols() != dim {
            return Err(Error::SpaceMismatch(format!(
                "operator of dimension {} cannot act on factor `{}` of dimension {}",
                m.nrows(),
                label,
                dim
            )));
        }
        if placed[k].is_some() {
            return Err(Error::invalid(format!("site `{label}` appears twice in product")));
        }
        placed[k] = Some(m);
    }
    Ok(Operator::from_parts(space.clone(), kron_chain(space, &placed)))
}

fn kron_chain(space: &HilbertSpace, placed: &[Option<&CMatrix>]) -> CMatrix {
    let mut acc = CMatrix::from_element(1, 1, ONE);
    let mut pending_identity = 1usize;
    for (f, m) in space.factors().iter().zip(placed) {
        match m {
            None => pending_identity *= f.dim,
            Some(m) => {
                if pending_identity > 1 {
                    acc = acc.kronecker(&CMatrix::identity(pending_identity, pending_identity));
                    pending_identity = 1;
                }
                acc = acc.kronecker(*m);
            }
        }
    }
    if pending_identity > 1 {
        acc = acc.kronecker(&CMatrix::identity(pending_identity, pending_identity));
    }
    acc
}

/// Embed a single-factor operator at `site`, identity on all other factors.
pub fn embed(op: &Operator, space: &Arc<HilbertSpace>, site: &str) -> Result<Operator> {
    embed_product(space, &[(site, op.matrix())])
}

/// Eigendecomposition of a Hermitian Hamiltonian, reusable for many durations.
#[derive(Clone, Debug)]
pub struct Spectrum {
    space: Arc<HilbertSpace>,
    energies: DVector<f64>,
    vectors: CMatrix,
}

impl Spectrum {
    pub fn new(h: &Operator) -> Result<Self> {
        let err = h.hermiticity_error();
        if !err.is_finite() || err > HERMITIAN_TOL {
            return Err(Error::numeric(format!("Hamiltonian is not Hermitian (relative error {err:.3e})")));
        }
        let sym = h.hermitian_part();
        let eig = SymmetricEigen::new(sym.matrix);
        Ok(Self { space: h.space.clone(), energies: eig.eigenvalues, vectors: eig.eigenvectors })
    }

    /// Eigenvalues in MHz (unordered).
    pub fn energies(&self) -> &DVector<f64> {
        &self.energies
    }

    pub fn eigenvectors(&self) -> &CMatrix {
        &self.vectors
    }

    /// `exp(-i 2π H t)` with `t` in µs.
    pub fn propagator(&self, t_us: f64) -> Operator {
        let mut w = self.vectors.clone();
        for (j, e) in self.energies.iter().enumerate() {
            let phase = C64::from_polar(1.0, -2.0 * PI * e * t_us);
            for z in w.column_mut(j).iter_mut() {
                *z *= phase;
            }
        }
        Operator::from_parts(self.space.clone(), w * self.vectors.adjoint())
    }
}

/// `exp(-i 2π H t)` via Hermitian eigendecomposition; `H` in MHz, `t` in µs.
pub fn propagator(h: &Operator, t_us: f64) -> Result<Operator> {
    if !t_us.is_finite() {
        return Err(Error::numeric("non-finite evolution time"));
    }
    Ok(Spectrum::new(h)?.propagator(t_us))
}

/// Density matrix on a labeled space.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityState {
    space: Arc<HilbertSpace>,
    matrix: CMatrix,
}

impl DensityState {
    /// Validating constructor: Hermitian, unit trace, positive semidefinite.
    pub fn new(space: Arc<HilbertSpace>, matrix: CMatrix) -> Result<Self> {
        let op = Operator::new(space, matrix)?;
        let state = Self { space: op.space, matrix: op.matrix };
        state.validate()?;
        Ok(state)
    }

    pub fn from_pure(space: Arc<HilbertSpace>, psi: &[C64]) -> Result<Self> {
        if psi.len() != space.dim() {
            return Err(Error::SpaceMismatch(format!("state vector length {} vs dimension {}", psi.len(), space.dim())));
        }
        let norm = psi.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return Err(Error::invalid("state vector has zero norm"));
        }
        let v = DVector::from_iterator(psi.len(), psi.iter().map(|z| z / norm));
        let matrix = &v * v.adjoint();
        Ok(Self { space, matrix })
    }

    pub fn maximally_mixed(space: Arc<HilbertSpace>) -> Self {
        let n = space.dim();
        Self { space, matrix: CMatrix::identity(n, n) * re(1.0 / n as f64) }
    }

    /// Product state from one local density matrix per factor, in factor order.
    pub fn product(space: Arc<HilbertSpace>, locals: &[CMatrix]) -> Result<Self> {
        if locals.len() != space.factors().len() {
            return Err(Error::SpaceMismatch(format!(
                "{} local states for {} factors",
                locals.len(),
                space.factors().len()
            )));
        }
        let placed: Vec<Option<&CMatrix>> = locals.iter().map(Some).collect();
        for (f, m) in space.factors().iter().zip(locals) {
            if m.nrows() != f.dim || m.ncols() != f.dim {
                return Err(Error::SpaceMismatch(format!("local state for `{}` has wrong dimension", f.label)));
            }
        }
        let matrix = kron_chain(&space, &placed);
        Self::new(space, matrix)
    }

    pub(crate) fn from_parts(space: Arc<HilbertSpace>, matrix: CMatrix) -> Self {
        Self { space, matrix }
    }

    pub fn space(&self) -> &Arc<HilbertSpace> {
        &self.space
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.matrix
    }

    pub fn trace(&self) -> C64 {
        self.matrix.trace()
    }

    /// `Tr(ρ²)`.
    pub fn purity(&self) -> f64 {
        // Tr(ρ²) = Σ |ρ_ij|² for Hermitian ρ.
        self.matrix.iter().map(|z| z.norm_sqr()).sum()
    }

    pub fn min_eigenvalue(&self) -> f64 {
        let h = (&self.matrix + self.matrix.adjoint()) * re(0.5);
        SymmetricEigen::new(h).eigenvalues.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn validate(&self) -> Result<()> {
        let op = Operator::from_parts(self.space.clone(), self.matrix.clone());
        let herm = op.hermiticity_error();
        if herm > HERMITIAN_TOL {
            return Err(Error::numeric(format!("density matrix not Hermitian (error {herm:.3e})")));
        }
        let tr = self.trace();
        if (tr - ONE).norm() > TRACE_TOL {
            return Err(Error::numeric(format!("density matrix trace {tr} differs from 1")));
        }
        let min = self.min_eigenvalue();
        if min < -POSITIVITY_TOL {
            return Err(Error::numeric(format!("density matrix has negative eigenvalue {min:.3e}")));
        }
        Ok(())
    }

    /// Reduced state with factor `site` traced out.
    pub fn partial_trace(&self, site: &str) -> Result<DensityState> {
        let k = self.space.position(site)?;
        if self.space.factors().len() == 1 {
            return Err(Error::invalid("cannot trace out the only factor"));
        }
        let (left, d, right) = self.space.strides(k);
        let n = left * right;
        let mut out = CMatrix::zeros(n, n);
        for l in 0..left {
            for r in 0..right {
                for l2 in 0..left {
                    for r2 in 0..right {
                        let mut acc = ZERO;
                        for i in 0..d {
                            acc += self.matrix[((l * d + i) * right + r, (l2 * d + i) * right + r2)];
                        }
                        out[(l * right + r, l2 * right + r2)] = acc;
                    }
                }
            }
        }
        Ok(DensityState { space: Arc::new(self.space.without(k)), matrix: out })
    }

    /// Replace factor `site` with the local state `local`: `ρ → σ ⊗ Tr_site ρ`.
    pub fn reset_factor(&self, site: &str, local: &CMatrix) -> Result<DensityState> {
        let k = self.space.position(site)?;
        let (left, d, right) = self.space.strides(k);
        if local.nrows() != d || local.ncols() != d {
            return Err(Error::SpaceMismatch(format!("reset state for `{site}` has wrong dimension")));
        }
        let n = self.space.dim();
        // Partial trace over the site, inlined to stay in the (left, right) index layout.
        let mut reduced = CMatrix::zeros(left * right, left * right);
        for a in 0..left * right {
            let (l, r) = (a / right, a % right);
            for b in 0..left * right {
                let (l2, r2) = (b / right, b % right);
                let mut acc = ZERO;
                for i in 0..d {
                    acc += self.matrix[((l * d + i) * right + r, (l2 * d + i) * right + r2)];
                }
                reduced[(a, b)] = acc;
            }
        }
        let mut out = CMatrix::zeros(n, n);
        for a in 0..left * right {
            let (l, r) = (a / right, a % right);
            for b in 0..left * right {
                let (l2, r2) = (b / right, b % right);
                let x = reduced[(a, b)];
                if x == ZERO {
                    continue;
                }
                for i in 0..d {
                    for j in 0..d {
                        out[((l * d + i) * right + r, (l2 * d + j) * right + r2)] = local[(i, j)] * x;
                    }
                }
            }
        }
        Ok(DensityState { space: self.space.clone(), matrix: out })
    }
}

/// Heisenberg adjoint of [`DensityState::reset_factor`]:
/// `O → 1_site ⊗ Tr_site[(σ ⊗ 1) O]`, so that `Tr(R(ρ) O) = Tr(ρ R†(O))`.
pub fn reset_adjoint(obs: &Operator, site: &str, local: &CMatrix) -> Result<Operator> {
    let space = obs.space().clone();
    let k = space.position(site)?;
    let (left, d, right) = space.strides(k);
    if local.nrows() != d || local.ncols() != d {
        return Err(Error::SpaceMismatch(format!("reset state for `{site}` has wrong dimension")));
    }
    let m = obs.matrix();
    let n = space.dim();
    let mut out = CMatrix::zeros(n, n);
    for a in 0..left * right {
        let (l, r) = (a / right, a % right);
        for b in 0..left * right {
            let (l2, r2) = (b / right, b % right);
            let mut acc = ZERO;
            for i in 0..d {
                for j in 0..d {
                    acc += local[(i, j)] * m[((l * d + j) * right + r, (l2 * d + i) * right + r2)];
                }
            }
            if acc == ZERO {
                continue;
            }
            for i in 0..d {
                out[((l * d + i) * right + r, (l2 * d + i) * right + r2)] = acc;
            }
        }
    }
    Ok(Operator::from_parts(space, out))
}

/// `ρ → U ρ U†`.
pub fn evolve(state: &DensityState, u: &Operator) -> Result<DensityState> {
    if state.space != *u.space() {
        return Err(Error::SpaceMismatch(format!("state on {} but propagator on {}", state.space, u.space())));
    }
    let m = u.matrix() * &state.matrix * u.matrix().adjoint();
    Ok(DensityState { space: state.space.clone(), matrix: m })
}

/// `Tr(ρ O)`, rejecting results with an imaginary part above 1e-8.
pub fn expectation(state: &DensityState, obs: &Operator) -> Result<f64> {
    if state.space != *obs.space() {
        return Err(Error::SpaceMismatch(format!("state on {} but observable on {}", state.space, obs.space())));
    }
    let v = trace_product(&state.matrix, obs.matrix());
    if v.im.abs() > IMAG_ERROR_TOL || !v.re.is_finite() {
        return Err(Error::numeric(format!("expectation value {v} is not real")));
    }
    Ok(v.re)
}

/// `Tr(A B)` without forming the product.
pub(crate) fn trace_product(a: &CMatrix, b: &CMatrix) -> C64 {
    let n = a.nrows();
    let mut acc = ZERO;
    for i in 0..n {
        for j in 0..n {
            acc += a[(i, j)] * b[(j, i)];
        }
    }
    acc
}
