//! Finite-dimensional quantum channels with classical side wires.
//!
//! Everything is concrete linear algebra:
//!
//! * [`QObject`] — a list of named quantum wires (finite Hilbert-space factors)
//!   together with a list of named classical wires.
//! * [`QMorphism`] — a family of superoperators `blocks[y][x]`, one per pair of a
//!   classical input assignment `x` and classical output assignment `y`. Each block
//!   acts on column-stacked density matrices, so composition is block matrix
//!   multiplication with a sum over the middle classical index.
//! * Complete positivity is decided by the eigenvalues of the Choi matrix,
//!   trace preservation by summing traces across the classical outputs.
//! * Purely classical morphisms embed probability channels and can be extracted
//!   back, which is how quantum models are compared with classical ones.
//!
//! Conventions: `vec` stacks columns, so `vec(A rho B) = (B^T (x) A) vec(rho)`;
//! tensor products put the first factor most significant, matching the classical
//! wire convention; all tolerances are absolute.

use nalgebra::DMatrix;
use num_complex::Complex;
use thiserror::Error;

use crate::stoch::{Channel, ChannelKind, StochError, WireList};

pub type C64 = Complex<f64>;
/// A superoperator in column-stacking convention.
pub type SuperOp = DMatrix<C64>;

#[derive(Debug, Error)]
pub enum QuantumError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("expected equal interfaces, got {lhs} and {rhs}")]
    InterfaceMismatch { lhs: String, rhs: String },
    #[error("matrix is not unitary (deviation {0:.3e})")]
    NotUnitary(f64),
    #[error("not a density matrix: {0}")]
    BadDensity(String),
    #[error("block ({y},{x}) is not classical: {detail}")]
    NotClassical { y: usize, x: usize, detail: String },
    #[error("morphism has quantum wires; only classical morphisms can be extracted")]
    HasQuantumWires,
    #[error(transparent)]
    Stoch(#[from] StochError),
}

/// A named quantum wire with the dimension of its Hilbert-space factor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QWire {
    pub name: String,
    pub dim: usize,
}

impl QWire {
    pub fn new(name: impl Into<String>, dim: usize) -> Self {
        QWire { name: name.into(), dim }
    }
}

/// An interface: quantum wires tensored together, alongside classical wires.
#[derive(Debug, Clone, PartialEq)]
pub struct QObject {
    pub qwires: Vec<QWire>,
    pub cwires: WireList,
}

impl QObject {
    pub fn unit() -> Self {
        QObject { qwires: Vec::new(), cwires: WireList::unit() }
    }

    pub fn quantum(qwires: Vec<QWire>) -> Self {
        QObject { qwires, cwires: WireList::unit() }
    }

    pub fn classical(cwires: WireList) -> Self {
        QObject { qwires: Vec::new(), cwires }
    }

    pub fn hybrid(qwires: Vec<QWire>, cwires: WireList) -> Self {
        QObject { qwires, cwires }
    }

    /// Dimension of the joint Hilbert space (1 when purely classical).
    pub fn qdim(&self) -> usize {
        self.qwires.iter().map(|w| w.dim).product()
    }

    /// Number of classical assignments (1 when purely quantum).
    pub fn ccard(&self) -> usize {
        self.cwires.total_card()
    }

    /// Dimension of the column-stacked operator space each block acts on.
    pub fn vdim(&self) -> usize {
        let d = self.qdim();
        d * d
    }

    pub fn is_classical(&self) -> bool {
        self.qwires.is_empty()
    }

    pub fn tensor(&self, other: &QObject) -> QObject {
        let mut qwires = self.qwires.clone();
        qwires.extend(other.qwires.iter().cloned());
        QObject { qwires, cwires: self.cwires.concat(&other.cwires) }
    }

    pub fn describe(&self) -> String {
        let q = self
            .qwires
            .iter()
            .map(|w| format!("{}:{}", w.name, w.dim))
            .collect::<Vec<_>>()
            .join(",");
        format!("[q:{q}; c:{}]", self.cwires.describe())
    }
}

/// Permutation matrix sending `vec(rho1) (x) vec(rho2)` to `vec(rho1 (x) rho2)`.
///
/// With column stacking, `vec(rho)` indexes as `i + d*j` for entry `(i,j)`; the
/// joint space indexes rows as `i1*d2 + i2`. The permutation is unitary, so its
/// transpose undoes it.
fn vec_interleave(d1: usize, d2: usize) -> SuperOp {
    let dd = d1 * d2;
    let mut p = SuperOp::zeros(dd * dd, d1 * d1 * d2 * d2);
    for i1 in 0..d1 {
        for j1 in 0..d1 {
            for i2 in 0..d2 {
                for j2 in 0..d2 {
                    let from = (i1 + d1 * j1) * d2 * d2 + (i2 + d2 * j2);
                    let to = (i1 * d2 + i2) + dd * (j1 * d2 + j2);
                    p[(to, from)] = C64::new(1.0, 0.0);
                }
            }
        }
    }
    p
}

/// Column-stacking of a matrix.
fn vec_of(m: &DMatrix<C64>) -> DMatrix<C64> {
    let (r, c) = m.shape();
    let mut v = DMatrix::zeros(r * c, 1);
    for j in 0..c {
        for i in 0..r {
            v[(i + r * j, 0)] = m[(i, j)];
        }
    }
    v
}

/// A quantum channel fragment: one superoperator per classical input/output pair.
#[derive(Debug, Clone)]
pub struct QMorphism {
    dom: QObject,
    cod: QObject,
    /// `blocks[y][x]` maps column-stacked operators on the domain Hilbert space to
    /// column-stacked operators on the codomain Hilbert space.
    blocks: Vec<Vec<SuperOp>>,
}

impl QMorphism {
    pub fn new(
        dom: QObject,
        cod: QObject,
        blocks: Vec<Vec<SuperOp>>,
    ) -> Result<Self, QuantumError> {
        if blocks.len() != cod.ccard() {
            return Err(QuantumError::Shape(format!(
                "expected {} classical output rows, got {}",
                cod.ccard(),
                blocks.len()
            )));
        }
        for (y, row) in blocks.iter().enumerate() {
            if row.len() != dom.ccard() {
                return Err(QuantumError::Shape(format!(
                    "row {y}: expected {} classical input columns, got {}",
                    dom.ccard(),
                    row.len()
                )));
            }
            for (x, b) in row.iter().enumerate() {
                if b.nrows() != cod.vdim() || b.ncols() != dom.vdim() {
                    return Err(QuantumError::Shape(format!(
                        "block ({y},{x}): expected {}x{}, got {}x{}",
                        cod.vdim(),
                        dom.vdim(),
                        b.nrows(),
                        b.ncols()
                    )));
                }
            }
        }
        Ok(QMorphism { dom, cod, blocks })
    }

    pub fn dom(&self) -> &QObject {
        &self.dom
    }

    pub fn cod(&self) -> &QObject {
        &self.cod
    }

    pub fn block(&self, y: usize, x: usize) -> &SuperOp {
        &self.blocks[y][x]
    }

    pub fn identity(obj: &QObject) -> Self {
        let v = obj.vdim();
        let n = obj.ccard();
        let blocks = (0..n)
            .map(|y| {
                (0..n)
                    .map(|x| {
                        if x == y {
                            SuperOp::identity(v, v)
                        } else {
                            SuperOp::zeros(v, v)
                        }
                    })
                    .collect()
            })
            .collect();
        QMorphism { dom: obj.clone(), cod: obj.clone(), blocks }
    }

    /// Conjugation by a unitary, `rho -> U rho U^dagger`, between purely quantum
    /// interfaces of equal dimension.
    pub fn unitary(dom: QObject, cod: QObject, u: DMatrix<C64>) -> Result<Self, QuantumError> {
        if !dom.is_classical() && dom.ccard() != 1 {
            return Err(QuantumError::Shape("unitary domain must be purely quantum".into()));
        }
        let d = dom.qdim();
        if cod.qdim() != d || cod.ccard() != 1 || dom.ccard() != 1 {
            return Err(QuantumError::Shape(
                "unitary needs equal quantum dimensions and no classical wires".into(),
            ));
        }
        if u.nrows() != d || u.ncols() != d {
            return Err(QuantumError::Shape(format!(
                "unitary must be {d}x{d}, got {}x{}",
                u.nrows(),
                u.ncols()
            )));
        }
        let dev = (&u * u.adjoint() - DMatrix::<C64>::identity(d, d)).norm();
        if dev > 1e-9 {
            return Err(QuantumError::NotUnitary(dev));
        }
        let sup = u.conjugate().kronecker(&u);
        QMorphism::new(dom, cod, vec![vec![sup]])
    }

    /// Channel given by Kraus operators `rho -> sum_k K_k rho K_k^dagger`.
    pub fn kraus(
        dom: QObject,
        cod: QObject,
        ops: &[DMatrix<C64>],
    ) -> Result<Self, QuantumError> {
        if dom.ccard() != 1 || cod.ccard() != 1 {
            return Err(QuantumError::Shape("kraus channels carry no classical wires".into()));
        }
        let (dd, dc) = (dom.qdim(), cod.qdim());
        let mut sup = SuperOp::zeros(dc * dc, dd * dd);
        for k in ops {
            if k.nrows() != dc || k.ncols() != dd {
                return Err(QuantumError::Shape(format!(
                    "kraus operator must be {dc}x{dd}, got {}x{}",
                    k.nrows(),
                    k.ncols()
                )));
            }
            sup += k.conjugate().kronecker(k);
        }
        QMorphism::new(dom, cod, vec![vec![sup]])
    }

    /// Measurement of a quantum wire in the computational basis, producing a
    /// classical wire of matching cardinality.
    pub fn measure(wire: &QWire, cvar: crate::stoch::FinVar) -> Result<Self, QuantumError> {
        let d = wire.dim;
        if cvar.card != d {
            return Err(QuantumError::Shape(format!(
                "classical wire needs cardinality {d}, got {}",
                cvar.card
            )));
        }
        let dom = QObject::quantum(vec![wire.clone()]);
        let cod = QObject::classical(WireList::single(cvar));
        let blocks = (0..d)
            .map(|y| {
                let mut b = SuperOp::zeros(1, d * d);
                b[(0, y + d * y)] = C64::new(1.0, 0.0);
                vec![b]
            })
            .collect();
        QMorphism::new(dom, cod, blocks)
    }

    /// Encoding of a classical wire into the computational basis of a quantum wire.
    pub fn encode(cvar: crate::stoch::FinVar, wire: QWire) -> Result<Self, QuantumError> {
        let d = wire.dim;
        if cvar.card != d {
            return Err(QuantumError::Shape(format!(
                "quantum wire needs dimension {}, got {d}",
                cvar.card
            )));
        }
        let dom = QObject::classical(WireList::single(cvar));
        let cod = QObject::quantum(vec![wire]);
        let row = (0..d)
            .map(|x| {
                let mut b = SuperOp::zeros(d * d, 1);
                b[(x + d * x, 0)] = C64::new(1.0, 0.0);
                b
            })
            .collect();
        QMorphism::new(dom, cod, vec![row])
    }

    /// A state given by a density matrix on the listed quantum wires.
    pub fn density_state(qwires: Vec<QWire>, rho: DMatrix<C64>) -> Result<Self, QuantumError> {
        let cod = QObject::quantum(qwires);
        let d = cod.qdim();
        if rho.nrows() != d || rho.ncols() != d {
            return Err(QuantumError::BadDensity(format!(
                "expected {d}x{d}, got {}x{}",
                rho.nrows(),
                rho.ncols()
            )));
        }
        let tr: C64 = (0..d).map(|i| rho[(i, i)]).sum();
        if (tr - C64::new(1.0, 0.0)).norm() > 1e-9 {
            return Err(QuantumError::BadDensity(format!("trace {tr} is not 1")));
        }
        if (&rho - rho.adjoint()).norm() > 1e-9 {
            return Err(QuantumError::BadDensity("not Hermitian".into()));
        }
        let m = QMorphism::new(QObject::unit(), cod, vec![vec![vec_of(&rho)]])?;
        if !m.is_cp(1e-9) {
            return Err(QuantumError::BadDensity("not positive semidefinite".into()));
        }
        Ok(m)
    }

    /// Embed a probability channel as a morphism between classical interfaces.
    pub fn classical(ch: &Channel<f64>) -> Self {
        let dom = QObject::classical(ch.dom().clone());
        let cod = QObject::classical(ch.cod().clone());
        let blocks = (0..cod.ccard())
            .map(|y| {
                (0..dom.ccard())
                    .map(|x| {
                        let mut b = SuperOp::zeros(1, 1);
                        b[(0, 0)] = C64::new(ch.entry(y, x), 0.0);
                        b
                    })
                    .collect()
            })
            .collect();
        QMorphism { dom, cod, blocks }
    }

    /// Extract the probability channel of a morphism without quantum wires.
    /// `tol` bounds the imaginary parts and negative dips that are discarded.
    pub fn classical_channel(&self, tol: f64) -> Result<Channel<f64>, QuantumError> {
        if !self.dom.is_classical() || !self.cod.is_classical() {
            return Err(QuantumError::HasQuantumWires);
        }
        let mut rows = vec![vec![0.0; self.dom.ccard()]; self.cod.ccard()];
        for (y, row) in self.blocks.iter().enumerate() {
            for (x, b) in row.iter().enumerate() {
                let v = b[(0, 0)];
                if v.im.abs() > tol || v.re < -tol {
                    return Err(QuantumError::NotClassical {
                        y,
                        x,
                        detail: format!("entry {v}"),
                    });
                }
                rows[y][x] = v.re.max(0.0);
            }
        }
        Ok(Channel::from_rows(
            self.dom.cwires.clone(),
            self.cod.cwires.clone(),
            &rows,
            ChannelKind::General,
            tol,
        )?)
    }

    /// Discard everything: trace out the quantum wires, sum out the classical ones.
    pub fn discard(obj: &QObject) -> Self {
        let d = obj.qdim();
        let mut tr = SuperOp::zeros(1, d * d);
        for i in 0..d {
            tr[(0, i + d * i)] = C64::new(1.0, 0.0);
        }
        let blocks = vec![(0..obj.ccard()).map(|_| tr.clone()).collect()];
        QMorphism { dom: obj.clone(), cod: QObject::unit(), blocks }
    }

    /// Sequential composition `self ; other` (apply `self` first).
    pub fn then(&self, other: &QMorphism) -> Result<QMorphism, QuantumError> {
        if self.cod != other.dom {
            return Err(QuantumError::InterfaceMismatch {
                lhs: self.cod.describe(),
                rhs: other.dom.describe(),
            });
        }
        let rows = other.cod.ccard();
        let cols = self.dom.ccard();
        let mids = self.cod.ccard();
        let blocks = (0..rows)
            .map(|z| {
                (0..cols)
                    .map(|x| {
                        let mut acc =
                            SuperOp::zeros(other.cod.vdim(), self.dom.vdim());
                        for y in 0..mids {
                            acc += &other.blocks[z][y] * &self.blocks[y][x];
                        }
                        acc
                    })
                    .collect()
            })
            .collect();
        Ok(QMorphism { dom: self.dom.clone(), cod: other.cod.clone(), blocks })
    }

    /// Parallel composition. Quantum factors are interleaved by the column-stacking
    /// permutation; classical indices combine with the first factor most
    /// significant.
    pub fn tensor(&self, other: &QMorphism) -> QMorphism {
        let dom = self.dom.tensor(&other.dom);
        let cod = self.cod.tensor(&other.cod);
        let p_cod = vec_interleave(self.cod.qdim(), other.cod.qdim());
        let p_dom = vec_interleave(self.dom.qdim(), other.dom.qdim());
        let p_dom_t = p_dom.transpose();
        let c2_in = other.dom.ccard();
        let c2_out = other.cod.ccard();
        let blocks = (0..cod.ccard())
            .map(|y| {
                let (y1, y2) = (y / c2_out, y % c2_out);
                (0..dom.ccard())
                    .map(|x| {
                        let (x1, x2) = (x / c2_in, x % c2_in);
                        &p_cod
                            * self.blocks[y1][x1].kronecker(&other.blocks[y2][x2])
                            * &p_dom_t
                    })
                    .collect()
            })
            .collect();
        QMorphism { dom, cod, blocks }
    }

    /// Reorder quantum and classical wires of `obj` by the given permutations;
    /// `q_perm[i]` and `c_perm[i]` name the source position of target position `i`.
    pub fn rearrange(
        obj: &QObject,
        q_perm: &[usize],
        c_perm: &[usize],
    ) -> Result<QMorphism, QuantumError> {
        if q_perm.len() != obj.qwires.len() || c_perm.len() != obj.cwires.len() {
            return Err(QuantumError::Shape("permutation length mismatch".into()));
        }
        let cod_q: Vec<QWire> = q_perm.iter().map(|&i| obj.qwires[i].clone()).collect();
        let cod_c: WireList = c_perm.iter().map(|&i| obj.cwires.vars()[i].clone()).collect();
        let cod = QObject::hybrid(cod_q, cod_c);
        // Unitary permutation of the Hilbert-space factors.
        let d = obj.qdim();
        let dims: Vec<usize> = obj.qwires.iter().map(|w| w.dim).collect();
        let mut u = DMatrix::<C64>::zeros(d, d);
        for col in 0..d {
            // Digits of the source basis vector, first factor most significant.
            let mut digits = vec![0usize; dims.len()];
            let mut rest = col;
            for i in (0..dims.len()).rev() {
                digits[i] = rest % dims[i];
                rest /= dims[i];
            }
            let mut row = 0usize;
            for &i in q_perm {
                row = row * dims[i] + digits[i];
            }
            u[(row, col)] = C64::new(1.0, 0.0);
        }
        let sup = u.conjugate().kronecker(&u);
        // Classical permutation via the wire-list machinery.
        let cperm = Channel::<f64>::permutation(&obj.cwires, c_perm)?;
        let blocks = (0..cod.ccard())
            .map(|y| {
                (0..obj.ccard())
                    .map(|x| {
                        if cperm.entry(y, x) > 0.5 {
                            sup.clone()
                        } else {
                            SuperOp::zeros(d * d, d * d)
                        }
                    })
                    .collect()
            })
            .collect();
        Ok(QMorphism { dom: obj.clone(), cod, blocks })
    }

    /// Reorder a tensor product of interface blocks as a whole; `perm[i]` names
    /// the source block of target position `i`. The blocks' quantum and classical
    /// wires move together.
    pub fn block_rearrange(
        slots: &[QObject],
        perm: &[usize],
    ) -> Result<QMorphism, QuantumError> {
        let n = slots.len();
        let mut seen = vec![false; n];
        if perm.len() != n
            || perm.iter().any(|&p| p >= n || std::mem::replace(&mut seen[p], true))
        {
            return Err(QuantumError::Shape(format!(
                "{perm:?} is not a permutation of {n} blocks"
            )));
        }
        let mut q_off = Vec::with_capacity(n);
        let mut c_off = Vec::with_capacity(n);
        let (mut q_acc, mut c_acc) = (0usize, 0usize);
        for s in slots {
            q_off.push(q_acc);
            c_off.push(c_acc);
            q_acc += s.qwires.len();
            c_acc += s.cwires.len();
        }
        let mut q_perm = Vec::with_capacity(q_acc);
        let mut c_perm = Vec::with_capacity(c_acc);
        for &p in perm {
            q_perm.extend((0..slots[p].qwires.len()).map(|k| q_off[p] + k));
            c_perm.extend((0..slots[p].cwires.len()).map(|k| c_off[p] + k));
        }
        let dom = slots.iter().fold(QObject::unit(), |a, b| a.tensor(b));
        QMorphism::rearrange(&dom, &q_perm, &c_perm)
    }

    /// Least eigenvalue across the Choi matrices of all blocks; complete
    /// positivity means this is not meaningfully negative.
    pub fn min_choi_eigenvalue(&self) -> f64 {
        let dd = self.dom.qdim();
        let dc = self.cod.qdim();
        let mut min = f64::INFINITY;
        for row in &self.blocks {
            for b in row {
                let mut choi = DMatrix::<C64>::zeros(dd * dc, dd * dc);
                for i in 0..dd {
                    for j in 0..dd {
                        for k in 0..dc {
                            for l in 0..dc {
                                choi[(i * dc + k, j * dc + l)] = b[(k + dc * l, i + dd * j)];
                            }
                        }
                    }
                }
                // Hermitise to wash out floating-point asymmetry.
                let herm = (&choi + choi.adjoint()) * C64::new(0.5, 0.0);
                let eigs = herm.symmetric_eigenvalues();
                for e in eigs.iter() {
                    if *e < min {
                        min = *e;
                    }
                }
            }
        }
        if min == f64::INFINITY {
            0.0
        } else {
            min
        }
    }

    pub fn is_cp(&self, tol: f64) -> bool {
        self.min_choi_eigenvalue() >= -tol
    }

    /// Worst deviation from joint trace preservation: for each classical input,
    /// the traces of all classical branches must sum to the input trace.
    pub fn tp_deviation(&self) -> f64 {
        let dd = self.dom.qdim();
        let dc = self.cod.qdim();
        let mut worst: f64 = 0.0;
        for x in 0..self.dom.ccard() {
            for col in 0..dd * dd {
                let mut acc = C64::new(0.0, 0.0);
                for row_blocks in &self.blocks {
                    let b = &row_blocks[x];
                    for k in 0..dc {
                        acc += b[(k + dc * k, col)];
                    }
                }
                let expected = if col % dd == col / dd {
                    C64::new(1.0, 0.0)
                } else {
                    C64::new(0.0, 0.0)
                };
                worst = worst.max((acc - expected).norm());
            }
        }
        worst
    }

    pub fn is_trace_preserving(&self, tol: f64) -> bool {
        self.tp_deviation() <= tol
    }

    /// Largest entrywise difference across all blocks.
    pub fn max_abs_diff(&self, other: &QMorphism) -> Result<f64, QuantumError> {
        if self.dom != other.dom || self.cod != other.cod {
            return Err(QuantumError::InterfaceMismatch {
                lhs: format!("{} -> {}", self.dom.describe(), self.cod.describe()),
                rhs: format!("{} -> {}", other.dom.describe(), other.cod.describe()),
            });
        }
        let mut worst: f64 = 0.0;
        for (ra, rb) in self.blocks.iter().zip(&other.blocks) {
            for (a, b) in ra.iter().zip(rb) {
                worst = worst.max((a - b).camax());
            }
        }
        Ok(worst)
    }

    pub fn eq_tol(&self, other: &QMorphism, tol: f64) -> Result<bool, QuantumError> {
        Ok(self.max_abs_diff(other)? <= tol)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stoch::FinVar;

    fn c(re: f64) -> C64 {
        C64::new(re, 0.0)
    }

    fn qubit(name: &str) -> QWire {
        QWire::new(name, 2)
    }

    fn x_gate(dom: &str, cod: &str) -> QMorphism {
        let u = DMatrix::from_row_slice(2, 2, &[c(0.0), c(1.0), c(1.0), c(0.0)]);
        QMorphism::unitary(
            QObject::quantum(vec![qubit(dom)]),
            QObject::quantum(vec![qubit(cod)]),
            u,
        )
        .unwrap()
    }

    #[test]
    fn encode_gate_measure_is_the_classical_not() {
        let enc = QMorphism::encode(FinVar::new("b", 2), qubit("q")).unwrap();
        let gate = x_gate("q", "r");
        let meas = QMorphism::measure(&qubit("r"), FinVar::new("o", 2)).unwrap();
        let composed = enc.then(&gate).unwrap().then(&meas).unwrap();
        let ch = composed.classical_channel(1e-12).unwrap();
        assert!((ch.entry(1, 0) - 1.0).abs() < 1e-12);
        assert!((ch.entry(0, 1) - 1.0).abs() < 1e-12);
        assert!(ch.entry(0, 0).abs() < 1e-12);
    }

    #[test]
    fn measure_after_encode_is_identity() {
        let enc = QMorphism::encode(FinVar::new("b", 3), QWire::new("q", 3)).unwrap();
        let meas = QMorphism::measure(&QWire::new("q", 3), FinVar::new("o", 3)).unwrap();
        let ch = enc.then(&meas).unwrap().classical_channel(1e-12).unwrap();
        for x in 0..3 {
            for y in 0..3 {
                let expected = if x == y { 1.0 } else { 0.0 };
                assert!((ch.entry(y, x) - expected).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn transpose_map_is_positive_but_not_cp() {
        // vec(rho^T): sends entry (i,j) to (j,i).
        let mut b = SuperOp::zeros(4, 4);
        for i in 0..2 {
            for j in 0..2 {
                b[(j + 2 * i, i + 2 * j)] = c(1.0);
            }
        }
        let t = QMorphism::new(
            QObject::quantum(vec![qubit("q")]),
            QObject::quantum(vec![qubit("q")]),
            vec![vec![b]],
        )
        .unwrap();
        assert!(t.is_trace_preserving(1e-9));
        assert!(!t.is_cp(1e-9));
        assert!(t.min_choi_eigenvalue() < -0.5);
    }

    #[test]
    fn depolarising_kraus_channel_is_cp_and_tp() {
        let p: f64 = 0.3;
        let id = DMatrix::from_row_slice(2, 2, &[c(1.0), c(0.0), c(0.0), c(1.0)]);
        let x = DMatrix::from_row_slice(2, 2, &[c(0.0), c(1.0), c(1.0), c(0.0)]);
        let y = DMatrix::from_row_slice(
            2,
            2,
            &[c(0.0), -C64::i(), C64::i(), c(0.0)],
        );
        let z = DMatrix::from_row_slice(2, 2, &[c(1.0), c(0.0), c(0.0), c(-1.0)]);
        let k0 = id * c((1.0 - p).sqrt());
        let kx = x * c((p / 3.0).sqrt());
        let ky = y * c((p / 3.0).sqrt());
        let kz = z * c((p / 3.0).sqrt());
        let ch = QMorphism::kraus(
            QObject::quantum(vec![qubit("q")]),
            QObject::quantum(vec![qubit("q")]),
            &[k0, kx, ky, kz],
        )
        .unwrap();
        assert!(ch.is_cp(1e-9));
        assert!(ch.is_trace_preserving(1e-9));
        // Maximally mixing check: the Bloch vector shrinks by 1 - 4p/3.
        let rho = DMatrix::from_row_slice(2, 2, &[c(0.5), c(0.5), c(0.5), c(0.5)]);
        let st = QMorphism::density_state(vec![qubit("q")], rho).unwrap();
        let out = st.then(&ch).unwrap();
        let shrink = 1.0 - 4.0 * p / 3.0;
        assert!((out.block(0, 0)[(1, 0)].re - 0.5 * shrink).abs() < 1e-9);
    }

    #[test]
    fn tensor_of_unitaries_matches_joint_unitary() {
        let u1 = DMatrix::from_row_slice(2, 2, &[c(0.0), c(1.0), c(1.0), c(0.0)]);
        let h = DMatrix::from_row_slice(
            2,
            2,
            &[
                c(std::f64::consts::FRAC_1_SQRT_2),
                c(std::f64::consts::FRAC_1_SQRT_2),
                c(std::f64::consts::FRAC_1_SQRT_2),
                c(-std::f64::consts::FRAC_1_SQRT_2),
            ],
        );
        let a = QMorphism::unitary(
            QObject::quantum(vec![qubit("a")]),
            QObject::quantum(vec![qubit("a")]),
            u1.clone(),
        )
        .unwrap();
        let b = QMorphism::unitary(
            QObject::quantum(vec![qubit("b")]),
            QObject::quantum(vec![qubit("b")]),
            h.clone(),
        )
        .unwrap();
        let joint_obj = QObject::quantum(vec![qubit("a"), qubit("b")]);
        let joint =
            QMorphism::unitary(joint_obj.clone(), joint_obj, u1.kronecker(&h)).unwrap();
        let tensored = a.tensor(&b);
        assert!(tensored.eq_tol(&joint, 1e-12).unwrap());
    }

    #[test]
    fn classical_embedding_roundtrips() {
        let wires = WireList::single(FinVar::new("A", 2));
        let cod = WireList::single(FinVar::new("B", 2));
        let ch = Channel::<f64>::from_rows(
            wires,
            cod,
            &[vec![0.25, 0.5], vec![0.75, 0.5]],
            ChannelKind::Stochastic,
            1e-12,
        )
        .unwrap();
        let q = QMorphism::classical(&ch);
        assert!(q.is_cp(1e-12));
        assert!(q.is_trace_preserving(1e-12));
        let back = q.classical_channel(1e-12).unwrap();
        assert!(back.eq_tol(&ch, 1e-12).unwrap());
    }

    #[test]
    fn rearrange_swaps_quantum_factors() {
        let obj = QObject::quantum(vec![QWire::new("a", 2), QWire::new("b", 3)]);
        let swap = QMorphism::rearrange(&obj, &[1, 0], &[]).unwrap();
        assert_eq!(swap.cod().qwires[0].name, "b");
        // rho = |0><0| (x) |2><2| maps to |2><2| (x) |0><0|.
        let mut rho = DMatrix::<C64>::zeros(6, 6);
        rho[(2, 2)] = c(1.0); // basis |0,2> at index 0*3+2
        let st = QMorphism::new(QObject::unit(), obj.clone(), vec![vec![vec_of(&rho)]])
            .unwrap();
        let out = st.then(&swap).unwrap();
        // In the swapped ordering, |2,0> sits at index 2*2+0 = 4.
        assert!((out.block(0, 0)[(4 + 6 * 4, 0)].re - 1.0).abs() < 1e-12);
        let tr = QMorphism::discard(swap.cod());
        let total = out.then(&tr).unwrap();
        assert!((total.block(0, 0)[(0, 0)].re - 1.0).abs() < 1e-12);
    }

    #[test]
    fn discard_is_trace() {
        let rho = DMatrix::from_row_slice(
            2,
            2,
            &[c(0.75), c(0.1), c(0.1), c(0.25)],
        );
        let st = QMorphism::density_state(vec![qubit("q")], rho).unwrap();
        let tr = QMorphism::discard(&QObject::quantum(vec![qubit("q")]));
        let out = st.then(&tr).unwrap();
        assert!((out.block(0, 0)[(0, 0)] - c(1.0)).norm() < 1e-12);
    }
}
