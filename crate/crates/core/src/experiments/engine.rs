//! Exact propagation of compiled sequences.
//!
//! Hamiltonians are split into the connected blocks of their sparsity pattern
//! before diagonalization, so drive-free or single-species segments stay cheap.
//! A sweep shares the steps common to every point: the state is propagated
//! through the shared prefix once and the observable is pulled back through
//! the shared suffix once.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::hash::{Hash, Hasher};
use std::sync::Arc;

use nalgebra::linalg::SymmetricEigen;

use crate::error::{Error, Result};
use crate::pulse::{CompiledSequence, Ps, Step};
use crate::quantum::{reset_adjoint, trace_product, CMatrix, DensityState, Operator, C64, HERMITIAN_TOL};

struct Block {
    idx: Vec<usize>,
    energies: Vec<f64>,
    vectors: CMatrix,
}

/// Eigen-decomposition of a Hermitian matrix, block by block.
pub struct BlockSpectrum {
    n: usize,
    blocks: Vec<Block>,
}

fn components(h: &CMatrix) -> Vec<Vec<usize>> {
    let n = h.nrows();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], mut i: usize) -> usize {
        while p[i] != i {
            p[i] = p[p[i]];
            i = p[i];
        }
        i
    }
    for i in 0..n {
        for j in i + 1..n {
            if h[(i, j)] != C64::new(0.0, 0.0) || h[(j, i)] != C64::new(0.0, 0.0) {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                if a != b {
                    parent[a.max(b)] = a.min(b);
                }
            }
        }
    }
    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut slot: HashMap<usize, usize> = HashMap::new();
    for i in 0..n {
        let r = find(&mut parent, i);
        let g = *slot.entry(r).or_insert_with(|| {
            groups.push(Vec::new());
            groups.len() - 1
        });
        groups[g].push(i);
    }
    groups
}

impl BlockSpectrum {
    pub fn new(h: &Operator) -> Result<Self> {
        if !h.is_hermitian(HERMITIAN_TOL) {
            return Err(Error::numeric(format!("Hamiltonian is not Hermitian (error {:.3e})", h.hermiticity_error())));
        }
        let m = h.matrix();
        let blocks = components(m)
            .into_iter()
            .map(|idx| {
                let b = idx.len();
                if b == 1 {
                    let e = m[(idx[0], idx[0])].re;
                    return Block { idx, energies: vec![e], vectors: CMatrix::identity(1, 1) };
                }
                let mut sub = CMatrix::zeros(b, b);
                for (r, &i) in idx.iter().enumerate() {
                    for (c, &j) in idx.iter().enumerate() {
                        sub[(r, c)] = (m[(i, j)] + m[(j, i)].conj()) * 0.5;
                    }
                }
                let eig = SymmetricEigen::new(sub);
                Block { idx, energies: eig.eigenvalues.iter().copied().collect(), vectors: eig.eigenvectors }
            })
            .collect();
        Ok(Self { n: m.nrows(), blocks })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn largest_block(&self) -> usize {
        self.blocks.iter().map(|b| b.idx.len()).max().unwrap_or(0)
    }

    /// `exp(−i 2π H t)` with `t` in µs and `H` in MHz.
    pub fn propagator(&self, t_us: f64) -> BlockUnitary {
        let blocks = self
            .blocks
            .iter()
            .map(|b| {
                let phases: Vec<C64> = b.energies.iter().map(|&e| C64::from_polar(1.0, -2.0 * PI * e * t_us)).collect();
                let mut w = b.vectors.clone();
                for (j, ph) in phases.iter().enumerate() {
                    w.column_mut(j).scale_mut_complex(*ph);
                }
                (b.idx.clone(), &w * b.vectors.adjoint())
            })
            .collect();
        BlockUnitary { n: self.n, blocks }
    }

    /// The eigenvector matrix as a block unitary.
    fn basis(&self) -> BlockUnitary {
        BlockUnitary { n: self.n, blocks: self.blocks.iter().map(|b| (b.idx.clone(), b.vectors.clone())).collect() }
    }

    /// Energies indexed like the columns of [`Self::basis`].
    fn energies(&self) -> Vec<f64> {
        let mut e = vec![0.0; self.n];
        for b in &self.blocks {
            for (k, &i) in b.idx.iter().enumerate() {
                e[i] = b.energies[k];
            }
        }
        e
    }
}

trait ScaleComplex {
    fn scale_mut_complex(&mut self, c: C64);
}

impl<S: nalgebra::StorageMut<C64, nalgebra::Dyn, nalgebra::U1>> ScaleComplex for nalgebra::Matrix<C64, nalgebra::Dyn, nalgebra::U1, S> {
    fn scale_mut_complex(&mut self, c: C64) {
        for v in self.iter_mut() {
            *v *= c;
        }
    }
}

/// A block-diagonal unitary (up to a permutation of the basis).
pub struct BlockUnitary {
    n: usize,
    blocks: Vec<(Vec<usize>, CMatrix)>,
}

impl BlockUnitary {
    pub fn to_dense(&self) -> CMatrix {
        let mut u = CMatrix::zeros(self.n, self.n);
        for (idx, b) in &self.blocks {
            for (r, &i) in idx.iter().enumerate() {
                for (c, &j) in idx.iter().enumerate() {
                    u[(i, j)] = b[(r, c)];
                }
            }
        }
        u
    }

    fn is_dense(&self) -> bool {
        self.blocks.len() == 1
    }

    /// `U ρ U†`
    pub fn conjugate(&self, rho: &CMatrix) -> CMatrix {
        self.sandwich(rho, false)
    }

    /// `U† O U`
    pub fn adjoint_conjugate(&self, o: &CMatrix) -> CMatrix {
        self.sandwich(o, true)
    }

    fn sandwich(&self, m: &CMatrix, dagger: bool) -> CMatrix {
        let n = self.n;
        if self.is_dense() {
            let u = self.to_dense();
            return if dagger { u.adjoint() * m * &u } else { &u * m * u.adjoint() };
        }
        // Left factor: rows of the result mix only within a block.
        let mut t = CMatrix::zeros(n, n);
        for (idx, b) in &self.blocks {
            let left = if dagger { b.adjoint() } else { b.clone() };
            if idx.len() == 1 {
                let c = left[(0, 0)];
                for j in 0..n {
                    t[(idx[0], j)] = c * m[(idx[0], j)];
                }
                continue;
            }
            let mut rows = CMatrix::zeros(idx.len(), n);
            for (r, &i) in idx.iter().enumerate() {
                rows.row_mut(r).copy_from(&m.row(i));
            }
            let out = &left * rows;
            for (r, &i) in idx.iter().enumerate() {
                t.row_mut(i).copy_from(&out.row(r));
            }
        }
        // Right factor: columns mix only within a block.
        let mut res = CMatrix::zeros(n, n);
        for (idx, b) in &self.blocks {
            let right = if dagger { b.clone() } else { b.adjoint() };
            if idx.len() == 1 {
                let c = right[(0, 0)];
                for i in 0..n {
                    res[(i, idx[0])] = t[(i, idx[0])] * c;
                }
                continue;
            }
            let mut cols = CMatrix::zeros(n, idx.len());
            for (c, &j) in idx.iter().enumerate() {
                cols.column_mut(c).copy_from(&t.column(j));
            }
            let out = cols * &right;
            for (c, &j) in idx.iter().enumerate() {
                res.column_mut(j).copy_from(&out.column(c));
            }
        }
        res
    }
}

fn fingerprint(m: &CMatrix) -> u64 {
    let mut h = std::collections::hash_map::DefaultHasher::new();
    m.nrows().hash(&mut h);
    for z in m.iter() {
        z.re.to_bits().hash(&mut h);
        z.im.to_bits().hash(&mut h);
    }
    h.finish()
}

#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug)]
enum StepKey {
    Evolve(u64, Ps),
    Reset(u64),
}

fn step_key(step: &Step) -> StepKey {
    match step {
        Step::Evolve(s) => StepKey::Evolve(fingerprint(s.hamiltonian.matrix()), s.duration_ps),
        Step::Reset { state, .. } => StepKey::Reset(fingerprint(state)),
    }
}

/// Propagates compiled sequences for one spin system, caching spectra.
#[derive(Default)]
pub struct Propagator {
    spectra: HashMap<u64, Vec<(CMatrix, Arc<BlockSpectrum>)>>,
}

impl Propagator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn spectrum(&mut self, h: &Operator) -> Result<Arc<BlockSpectrum>> {
        let key = fingerprint(h.matrix());
        let bucket = self.spectra.entry(key).or_default();
        if let Some((_, s)) = bucket.iter().find(|(m, _)| m == h.matrix()) {
            return Ok(s.clone());
        }
        let s = Arc::new(BlockSpectrum::new(h)?);
        bucket.push((h.matrix().clone(), s.clone()));
        Ok(s)
    }

    fn forward(&mut self, rho: CMatrix, step: &Step, space: &Arc<crate::quantum::HilbertSpace>) -> Result<CMatrix> {
        match step {
            Step::Evolve(seg) => Ok(self.spectrum(&seg.hamiltonian)?.propagator(seg.duration_us()).conjugate(&rho)),
            Step::Reset { site, state } => {
                Ok(DensityState::from_parts(space.clone(), rho).reset_factor(site, state)?.matrix().clone())
            }
        }
    }

    fn backward(&mut self, obs: CMatrix, step: &Step, space: &Arc<crate::quantum::HilbertSpace>) -> Result<CMatrix> {
        match step {
            Step::Evolve(seg) => Ok(self.spectrum(&seg.hamiltonian)?.propagator(seg.duration_us()).adjoint_conjugate(&obs)),
            Step::Reset { site, state } => {
                Ok(reset_adjoint(&Operator::new(space.clone(), obs)?, site, state)?.into_matrix())
            }
        }
    }

    /// Final density matrix after every step of `seq`.
    pub fn evolve(&mut self, initial: &DensityState, seq: &CompiledSequence) -> Result<DensityState> {
        let space = initial.space().clone();
        let mut rho = initial.matrix().clone();
        for step in &seq.steps {
            rho = self.forward(rho, step, &space)?;
        }
        Ok(DensityState::from_parts(space, rho))
    }

    /// `Tr(ρ_final O)` for every sequence of a sweep.
    ///
    /// Steps shared by all sequences at the start and at the end are applied
    /// once. The result for each point does not depend on the other points.
    pub fn sweep(&mut self, initial: &DensityState, seqs: &[CompiledSequence]) -> Result<Vec<f64>> {
        if seqs.is_empty() {
            return Ok(Vec::new());
        }
        let space = initial.space().clone();
        let keys: Vec<Vec<StepKey>> = seqs.iter().map(|s| s.steps.iter().map(step_key).collect()).collect();
        let shortest = keys.iter().map(Vec::len).min().unwrap_or(0);
        let mut prefix = 0;
        while prefix < shortest && keys.iter().all(|k| k[prefix] == keys[0][prefix]) {
            prefix += 1;
        }
        let same_obs = seqs.iter().all(|s| s.observable.matrix() == seqs[0].observable.matrix());
        let mut suffix = 0;
        if same_obs {
            while suffix < shortest - prefix && keys.iter().all(|k| k[k.len() - 1 - suffix] == keys[0][keys[0].len() - 1 - suffix]) {
                suffix += 1;
            }
        }

        let mut rho = initial.matrix().clone();
        for step in &seqs[0].steps[..prefix] {
            rho = self.forward(rho, step, &space)?;
        }
        let pulled_back = |this: &mut Self, seq: &CompiledSequence| -> Result<CMatrix> {
            let mut o = seq.observable.matrix().clone();
            for step in seq.steps[seq.steps.len() - suffix..].iter().rev() {
                o = this.backward(o, step, &space)?;
            }
            Ok(o)
        };
        let shared_obs = if same_obs { Some(pulled_back(self, &seqs[0])?) } else { None };

        // A single differing segment with one Hamiltonian: work in its eigenbasis.
        let middles: Vec<&[Step]> = seqs.iter().map(|s| &s.steps[prefix..s.steps.len() - suffix]).collect();
        let single_h = middles.iter().all(|m| m.len() == 1 && matches!(m[0], Step::Evolve(_)))
            && middles.iter().all(|m| match (&m[0], &middles[0][0]) {
                (Step::Evolve(a), Step::Evolve(b)) => a.hamiltonian.matrix() == b.hamiltonian.matrix(),
                _ => false,
            });
        if let (true, Some(o)) = (single_h, shared_obs.as_ref()) {
            let Step::Evolve(first) = &middles[0][0] else { unreachable!() };
            let spec = self.spectrum(&first.hamiltonian)?;
            let basis = spec.basis();
            let r = basis.adjoint_conjugate(&rho);
            let ot = basis.adjoint_conjugate(o);
            let e = spec.energies();
            let n = e.len();
            return Ok(middles
                .iter()
                .map(|m| {
                    let Step::Evolve(seg) = &m[0] else { unreachable!() };
                    let t = seg.duration_us();
                    let mut acc = C64::new(0.0, 0.0);
                    for i in 0..n {
                        for j in 0..n {
                            let w = r[(i, j)] * ot[(j, i)];
                            if w != C64::new(0.0, 0.0) {
                                acc += w * C64::from_polar(1.0, -2.0 * PI * (e[i] - e[j]) * t);
                            }
                        }
                    }
                    real(acc)
                })
                .collect());
        }

        let mut out = Vec::with_capacity(seqs.len());
        for (seq, middle) in seqs.iter().zip(&middles) {
            let mut r = rho.clone();
            for step in middle.iter() {
                r = self.forward(r, step, &space)?;
            }
            let o = match &shared_obs {
                Some(o) => o.clone(),
                None => pulled_back(self, seq)?,
            };
            out.push(real(trace_product(&r, &o)));
        }
        Ok(out)
    }
}

fn real(z: C64) -> f64 {
    z.re
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pulse::{build_spin_lock, compile, five_line_tones, frames_for};
    use crate::quantum::{evolve, expectation, propagator, HilbertSpace};
    use crate::spin_models::{NvParams, Orientation, P1Label, P1Params, P1Site, SpinSystem};

    fn max_diff(a: &CMatrix, b: &CMatrix) -> f64 {
        (a - b).iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    #[test]
    fn block_propagator_matches_dense() {
        let space = Arc::new(HilbertSpace::new([("a", 2), ("b", 2), ("c", 2)]).unwrap());
        let mut m = CMatrix::zeros(8, 8);
        // two blocks {0,3,5} and {1,2}, rest diagonal
        let entries = [(0, 3, C64::new(0.3, 0.1)), (3, 5, C64::new(-0.2, 0.4)), (1, 2, C64::new(1.1, 0.0))];
        for (i, j, z) in entries {
            m[(i, j)] = z;
            m[(j, i)] = z.conj();
        }
        for i in 0..8 {
            m[(i, i)] = C64::new(0.1 * i as f64 - 0.3, 0.0);
        }
        let h = Operator::new(space.clone(), m).unwrap();
        let spec = BlockSpectrum::new(&h).unwrap();
        assert_eq!(spec.largest_block(), 3);
        let u_block = spec.propagator(0.37).to_dense();
        let u_dense = propagator(&h, 0.37).unwrap();
        assert!(max_diff(&u_block, u_dense.matrix()) < 1e-12);
        let rho = DensityState::maximally_mixed(space.clone());
        let mut psi = vec![C64::new(0.0, 0.0); 8];
        psi[0] = C64::new(0.6, 0.0);
        psi[2] = C64::new(0.0, 0.8);
        let pure = DensityState::from_pure(space.clone(), &psi).unwrap();
        for r in [rho, pure] {
            let a = spec.propagator(0.37).conjugate(r.matrix());
            let b = evolve(&r, &u_dense).unwrap();
            assert!(max_diff(&a, b.matrix()) < 1e-12);
            let o = spec.propagator(0.37).adjoint_conjugate(r.matrix());
            let ob = u_dense.adjoint().matrix() * r.matrix() * u_dense.matrix();
            assert!(max_diff(&o, &ob) < 1e-12);
        }
    }

    fn system() -> SpinSystem {
        let sites = (0..3)
            .map(|i| P1Site {
                label: P1Label::new(Orientation::new(1 + i as u8).unwrap(), (i as i8) - 1).unwrap(),
                detuning_mhz: 0.3 * i as f64 - 0.2,
                d_nv_mhz: 0.4 - 0.25 * i as f64,
            })
            .collect();
        SpinSystem::new(128.0, NvParams::default(), P1Params::default(), 0.5, sites, vec![]).unwrap()
    }

    #[test]
    fn sweep_matches_step_by_step_and_is_order_free() {
        let sys = system();
        let rf = five_line_tones(&sys.p1, sys.b0_gauss, 8.0).unwrap();
        let nv = sys.nominal_frequency("nv").unwrap();
        let locks = [0.0, 0.5, 1.7, 3.0];
        let seqs: Vec<CompiledSequence> = locks
            .iter()
            .map(|&l| {
                let s = build_spin_lock(nv, 8.0, l, Some(&rf)).unwrap();
                compile(&s, &sys, &frames_for(&s, &sys).unwrap()).unwrap()
            })
            .collect();
        let rho0 = DensityState::product(
            sys.space().clone(),
            &[sys.nv_zero_projector(), CMatrix::identity(2, 2) * C64::new(0.5, 0.0), CMatrix::identity(2, 2) * C64::new(0.5, 0.0), CMatrix::identity(2, 2) * C64::new(0.5, 0.0)],
        )
        .unwrap();
        let mut prop = Propagator::new();
        let swept = prop.sweep(&rho0, &seqs).unwrap();
        for (k, seq) in seqs.iter().enumerate() {
            // independent dense reference
            let mut r = rho0.clone();
            for step in &seq.steps {
                r = match step {
                    Step::Evolve(s) => evolve(&r, &propagator(&s.hamiltonian, s.duration_us()).unwrap()).unwrap(),
                    Step::Reset { site, state } => r.reset_factor(site, state).unwrap(),
                };
            }
            let v = expectation(&r, &seq.observable).unwrap();
            assert!((v - swept[k]).abs() < 1e-10, "{v} vs {}", swept[k]);
        }
        let reversed: Vec<CompiledSequence> = seqs.iter().rev().cloned().collect();
        let back = Propagator::new().sweep(&rho0, &reversed).unwrap();
        let fwd: Vec<f64> = back.into_iter().rev().collect();
        assert_eq!(fwd, swept);
    }
}
