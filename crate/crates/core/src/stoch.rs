//! Finite variables, wire lists, and sparse channels.
//!
//! A [`Channel`] is a matrix `p(y|x)` between finite assignment spaces, stored in
//! compressed-sparse-column form: one flat vector of `(row, value)` pairs with a
//! per-column offset table. Columns are indexed by flattening the ordered wire list
//! with the *first* wire most significant, which makes [`Channel::tensor`] the
//! ordinary Kronecker product. The flat layout matters: opened-model sweeps
//! materialise channels with tens of millions of columns, where one allocation per
//! column is prohibitive.
//!
//! Conventions used throughout the crate:
//!
//! - channels are column-stochastic: column `x` holds the distribution over outcomes,
//! - the empty wire list is the monoidal unit (one assignment, index `0`),
//! - equality never reorders wires; callers build explicit permutations,
//! - [`ChannelKind`] records the strongest class the channel is known to inhabit
//!   (stochastic, merely entrywise-nonnegative, or unconstrained).

use std::collections::BTreeMap;

use thiserror::Error;

use crate::scalar::Scalar;

/// A named finite variable with `card` possible values `0..card`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FinVar {
    pub name: String,
    pub card: usize,
}

impl FinVar {
    pub fn new(name: impl Into<String>, card: usize) -> Self {
        FinVar { name: name.into(), card }
    }
}

impl std::fmt::Display for FinVar {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}:{}", self.name, self.card)
    }
}

/// An ordered list of finite variables; the objects channels go between.
///
/// The list may be empty (the monoidal unit `I`, with a single assignment) and may in
/// principle contain repeated names, e.g. when several counterfactual worlds expose the
/// same variable; name-based lookup is only used where uniqueness is guaranteed.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct WireList(Vec<FinVar>);

impl WireList {
    pub fn new(vars: Vec<FinVar>) -> Self {
        WireList(vars)
    }

    /// The monoidal unit: no wires, exactly one assignment.
    pub fn unit() -> Self {
        WireList(Vec::new())
    }

    pub fn single(var: FinVar) -> Self {
        WireList(vec![var])
    }

    pub fn vars(&self) -> &[FinVar] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Total number of joint assignments (`1` for the unit).
    pub fn total_card(&self) -> usize {
        self.0.iter().map(|v| v.card).product()
    }

    /// Multiplier of each position in the flat index (first wire most significant).
    pub fn strides(&self) -> Vec<usize> {
        let mut strides = vec![1usize; self.0.len()];
        for i in (0..self.0.len().saturating_sub(1)).rev() {
            strides[i] = strides[i + 1] * self.0[i + 1].card;
        }
        strides
    }

    /// Flatten a full assignment into an index.
    pub fn flat_index(&self, assignment: &[usize]) -> usize {
        debug_assert_eq!(assignment.len(), self.0.len());
        let mut idx = 0usize;
        for (v, &a) in self.0.iter().zip(assignment) {
            debug_assert!(a < v.card);
            idx = idx * v.card + a;
        }
        idx
    }

    /// Recover the assignment behind a flat index.
    pub fn assignment(&self, mut index: usize) -> Vec<usize> {
        let mut out = vec![0usize; self.0.len()];
        for i in (0..self.0.len()).rev() {
            let c = self.0[i].card;
            out[i] = index % c;
            index /= c;
        }
        out
    }

    /// Visit every assignment in flat-index order, reusing one buffer instead of
    /// allocating per index.
    pub(crate) fn for_each_assignment(&self, mut f: impl FnMut(&[usize])) {
        let total = self.total_card();
        let mut current = vec![0usize; self.0.len()];
        for step in 0..total {
            f(&current);
            if step + 1 < total {
                for i in (0..current.len()).rev() {
                    current[i] += 1;
                    if current[i] < self.0[i].card {
                        break;
                    }
                    current[i] = 0;
                }
            }
        }
    }

    pub fn concat(&self, other: &WireList) -> WireList {
        let mut vars = self.0.clone();
        vars.extend(other.0.iter().cloned());
        WireList(vars)
    }

    /// Position of a wire by name; `None` when absent or ambiguous.
    pub fn position(&self, name: &str) -> Option<usize> {
        let mut found = None;
        for (i, v) in self.0.iter().enumerate() {
            if v.name == name {
                if found.is_some() {
                    return None;
                }
                found = Some(i);
            }
        }
        found
    }

    pub fn names(&self) -> Vec<&str> {
        self.0.iter().map(|v| v.name.as_str()).collect()
    }

    /// Human-readable form for error messages, e.g. `[A:2, B:3]`.
    pub fn describe(&self) -> String {
        let inner: Vec<String> = self.0.iter().map(|v| v.to_string()).collect();
        format!("[{}]", inner.join(", "))
    }

    /// Render an assignment as `A=0, B=2`.
    pub fn describe_assignment(&self, assignment: &[usize]) -> String {
        self.0
            .iter()
            .zip(assignment)
            .map(|(v, a)| format!("{}={}", v.name, a))
            .collect::<Vec<_>>()
            .join(", ")
    }

    /// The permutation `perm` such that `target[i] == self[perm[i]]`, matching wires by
    /// name. Fails when the two lists are not rearrangements of each other or names are
    /// not unique.
    pub fn permutation_to(&self, target: &WireList) -> Result<Vec<usize>, StochError> {
        if self.len() != target.len() {
            return Err(StochError::NotRearrangement {
                left: self.describe(),
                right: target.describe(),
            });
        }
        let mut used = vec![false; self.len()];
        let mut perm = Vec::with_capacity(self.len());
        for t in target.vars() {
            let mut found = None;
            for (i, v) in self.0.iter().enumerate() {
                if !used[i] && v == t {
                    found = Some(i);
                    break;
                }
            }
            match found {
                Some(i) => {
                    used[i] = true;
                    perm.push(i);
                }
                None => {
                    return Err(StochError::NotRearrangement {
                        left: self.describe(),
                        right: target.describe(),
                    })
                }
            }
        }
        Ok(perm)
    }
}

impl FromIterator<FinVar> for WireList {
    fn from_iter<T: IntoIterator<Item = FinVar>>(iter: T) -> Self {
        WireList(iter.into_iter().collect())
    }
}

/// The strongest class a channel is known to belong to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChannelKind {
    /// Every column is a probability distribution.
    Stochastic,
    /// Entries are nonnegative but columns need not normalise.
    Positive,
    /// No constraint.
    General,
}

/// Errors from channel construction and the categorical operations.
#[derive(Debug, Error)]
pub enum StochError {
    #[error("variable `{0}` must have cardinality >= 1")]
    ZeroCardinality(String),
    #[error("{context}: wires {left} do not match {right}")]
    WireMismatch { context: String, left: String, right: String },
    #[error("wire lists {left} and {right} are not rearrangements of each other")]
    NotRearrangement { left: String, right: String },
    #[error("column {col} of channel {dom} -> {cod} has entry at row {row} out of range")]
    RowOutOfRange { dom: String, cod: String, col: usize, row: usize },
    #[error("expected {expected} columns for domain {dom}, got {got}")]
    ColumnCount { dom: String, expected: usize, got: usize },
    #[error("column {col} ({assignment}) sums to {sum}, not 1")]
    NotNormalised { col: usize, assignment: String, sum: String },
    #[error("column {col} ({assignment}) has negative entry {value} at row {row}")]
    NegativeEntry { col: usize, assignment: String, row: usize, value: String },
    #[error("channel {dom} -> {cod} is not deterministic at column {col} ({assignment})")]
    NotDeterministic { dom: String, cod: String, col: usize, assignment: String },
    #[error("feedback requires matching trailing wires; domain ends {dom_tail}, codomain ends {cod_tail}")]
    FeedbackMismatch { dom_tail: String, cod_tail: String },
    #[error("cannot take {wanted} feedback wires: domain has {dom_len}, codomain has {cod_len}")]
    FeedbackArity { wanted: usize, dom_len: usize, cod_len: usize },
    #[error("invalid permutation {perm:?} for {wires}")]
    BadPermutation { perm: Vec<usize>, wires: String },
    #[error("marginal positions {positions:?} invalid for codomain {cod}")]
    BadMarginal { positions: Vec<usize>, cod: String },
    #[error("wire `{name}` not found (or ambiguous) in {wires}")]
    MissingWire { name: String, wires: String },
    #[error("sharp value {value} out of range for {var}")]
    SharpOutOfRange { var: String, value: usize },
}

/// A sparse column-stochastic matrix between assignment spaces of wire lists.
///
/// Storage is compressed-sparse-column: column `x` occupies
/// `entries[col_ptr[x]..col_ptr[x + 1]]`, sorted by row, zero entries omitted.
#[derive(Debug, Clone, PartialEq)]
pub struct Channel<S: Scalar> {
    dom: WireList,
    cod: WireList,
    col_ptr: Vec<usize>,
    entries: Vec<(usize, S)>,
    kind: ChannelKind,
}

/// Incrementally assembled CSC storage; columns are closed in flat-index order.
struct ColsBuf<S> {
    col_ptr: Vec<usize>,
    entries: Vec<(usize, S)>,
}

impl<S: Scalar> ColsBuf<S> {
    fn new(n_cols: usize) -> Self {
        let mut col_ptr = Vec::with_capacity(n_cols + 1);
        col_ptr.push(0);
        ColsBuf { col_ptr, entries: Vec::new() }
    }

    fn push(&mut self, row: usize, value: S) {
        self.entries.push((row, value));
    }

    fn end_col(&mut self) {
        self.col_ptr.push(self.entries.len());
    }
}

impl<S: Scalar> Channel<S> {
    /// Number of columns, i.e. domain assignments.
    fn n_cols(&self) -> usize {
        self.col_ptr.len() - 1
    }

    /// Build a channel from raw sparse columns, validating shape and `kind`.
    ///
    /// Stochastic channels must have each column normalised; positive ones only
    /// nonnegative entries. Validation of numeric claims uses `tol` for inexact
    /// scalars and is exact for rationals.
    pub fn new(
        dom: WireList,
        cod: WireList,
        cols: Vec<Vec<(usize, S)>>,
        kind: ChannelKind,
        tol: f64,
    ) -> Result<Self, StochError> {
        for v in dom.vars().iter().chain(cod.vars()) {
            if v.card == 0 {
                return Err(StochError::ZeroCardinality(v.name.clone()));
            }
        }
        if cols.len() != dom.total_card() {
            return Err(StochError::ColumnCount {
                dom: dom.describe(),
                expected: dom.total_card(),
                got: cols.len(),
            });
        }
        let n_rows = cod.total_card();
        let mut buf = ColsBuf::new(cols.len());
        for (x, col) in cols.into_iter().enumerate() {
            let mut merged: BTreeMap<usize, S> = BTreeMap::new();
            for (row, val) in col {
                if row >= n_rows {
                    return Err(StochError::RowOutOfRange {
                        dom: dom.describe(),
                        cod: cod.describe(),
                        col: x,
                        row,
                    });
                }
                merged
                    .entry(row)
                    .and_modify(|v| *v = v.add(&val))
                    .or_insert(val);
            }
            for (row, val) in merged {
                if !val.is_zero() {
                    buf.push(row, val);
                }
            }
            buf.end_col();
        }
        let ch = Channel { dom, cod, col_ptr: buf.col_ptr, entries: buf.entries, kind };
        ch.assert_kind(kind, tol)?;
        Ok(ch)
    }

    /// Check that the channel satisfies the constraints of `kind`.
    pub fn assert_kind(&self, kind: ChannelKind, tol: f64) -> Result<(), StochError> {
        if matches!(kind, ChannelKind::General) {
            return Ok(());
        }
        for x in 0..self.n_cols() {
            let mut sum = S::zero();
            for (row, val) in self.col(x) {
                if !val.is_nonneg(tol) {
                    return Err(StochError::NegativeEntry {
                        col: x,
                        assignment: self.dom.describe_assignment(&self.dom.assignment(x)),
                        row: *row,
                        value: val.render(),
                    });
                }
                sum = sum.add(val);
            }
            if matches!(kind, ChannelKind::Stochastic) && !sum.eq_tol(&S::one(), tol) {
                return Err(StochError::NotNormalised {
                    col: x,
                    assignment: self.dom.describe_assignment(&self.dom.assignment(x)),
                    sum: sum.render(),
                });
            }
        }
        Ok(())
    }

    /// Build from a per-column callback producing sparse entries.
    pub fn from_fn(
        dom: WireList,
        cod: WireList,
        kind: ChannelKind,
        mut f: impl FnMut(&[usize]) -> Vec<(usize, S)>,
    ) -> Self {
        let mut buf = ColsBuf::new(dom.total_card());
        dom.for_each_assignment(|a| {
            let mut col = f(a);
            col.sort_by_key(|(r, _)| *r);
            for (row, val) in col {
                if !val.is_zero() {
                    buf.push(row, val);
                }
            }
            buf.end_col();
        });
        Channel { dom, cod, col_ptr: buf.col_ptr, entries: buf.entries, kind }
    }

    /// Build a deterministic channel from an assignment map.
    pub fn deterministic(
        dom: WireList,
        cod: WireList,
        mut f: impl FnMut(&[usize]) -> Vec<usize>,
    ) -> Self {
        let n = dom.total_card();
        let mut entries = Vec::with_capacity(n);
        dom.for_each_assignment(|a| {
            entries.push((cod.flat_index(&f(a)), S::one()));
        });
        let col_ptr = (0..=n).collect();
        Channel { dom, cod, col_ptr, entries, kind: ChannelKind::Stochastic }
    }

    /// Build from a dense row-major matrix (`rows[y][x]`).
    pub fn from_rows(
        dom: WireList,
        cod: WireList,
        rows: &[Vec<S>],
        kind: ChannelKind,
        tol: f64,
    ) -> Result<Self, StochError> {
        let n_cols = dom.total_card();
        let mut cols: Vec<Vec<(usize, S)>> = vec![Vec::new(); n_cols];
        for (y, row) in rows.iter().enumerate() {
            if row.len() != n_cols {
                return Err(StochError::ColumnCount {
                    dom: dom.describe(),
                    expected: n_cols,
                    got: row.len(),
                });
            }
            for (x, val) in row.iter().enumerate() {
                if !val.is_zero() {
                    cols[x].push((y, val.clone()));
                }
            }
        }
        Channel::new(dom, cod, cols, kind, tol)
    }

    /// Dense row-major matrix (`rows[y][x]`), for serialisation and display.
    pub fn to_rows(&self) -> Vec<Vec<S>> {
        let mut rows = vec![vec![S::zero(); self.n_cols()]; self.cod.total_card()];
        for x in 0..self.n_cols() {
            for (y, val) in self.col(x) {
                rows[*y][x] = val.clone();
            }
        }
        rows
    }

    pub fn identity(wires: WireList) -> Self {
        let n = wires.total_card();
        let entries = (0..n).map(|x| (x, S::one())).collect();
        let col_ptr = (0..=n).collect();
        Channel { dom: wires.clone(), cod: wires, col_ptr, entries, kind: ChannelKind::Stochastic }
    }

    /// The permutation channel with `cod[i] = dom[perm[i]]`.
    pub fn permutation(wires: &WireList, perm: &[usize]) -> Result<Self, StochError> {
        let n = wires.len();
        let mut seen = vec![false; n];
        if perm.len() != n || perm.iter().any(|&p| p >= n || std::mem::replace(&mut seen[p], true)) {
            return Err(StochError::BadPermutation {
                perm: perm.to_vec(),
                wires: wires.describe(),
            });
        }
        let cod: WireList = perm.iter().map(|&p| wires.vars()[p].clone()).collect();
        let dom = wires.clone();
        let perm = perm.to_vec();
        Ok(Channel::deterministic(dom, cod, move |a| {
            perm.iter().map(|&p| a[p]).collect()
        }))
    }

    /// Copy the whole wire list as a block: `X -> X (x) X`.
    pub fn copy_all(wires: &WireList) -> Self {
        let cod = wires.concat(wires);
        Channel::deterministic(wires.clone(), cod, |a| {
            let mut out = a.to_vec();
            out.extend_from_slice(a);
            out
        })
    }

    /// Copy the wire list `n` times (`n = 0` discards).
    pub fn copy_n(wires: &WireList, n: usize) -> Self {
        let mut cod = WireList::unit();
        for _ in 0..n {
            cod = cod.concat(wires);
        }
        Channel::deterministic(wires.clone(), cod, move |a| {
            let mut out = Vec::with_capacity(a.len() * n);
            for _ in 0..n {
                out.extend_from_slice(a);
            }
            out
        })
    }

    pub fn discard(wires: &WireList) -> Self {
        Channel::deterministic(wires.clone(), WireList::unit(), |_| Vec::new())
    }

    /// The projection onto a subset of wires, in the given target order, discarding the
    /// rest. Wire names in `dom` must be unique for the selected names.
    pub fn projection(dom: &WireList, target_names: &[&str]) -> Result<Self, StochError> {
        let mut positions = Vec::with_capacity(target_names.len());
        for name in target_names {
            let pos = dom.position(name).ok_or_else(|| StochError::MissingWire {
                name: (*name).to_string(),
                wires: dom.describe(),
            })?;
            positions.push(pos);
        }
        let cod: WireList = positions.iter().map(|&p| dom.vars()[p].clone()).collect();
        Ok(Channel::deterministic(dom.clone(), cod, move |a| {
            positions.iter().map(|&p| a[p]).collect()
        }))
    }

    /// The sharp state selecting one assignment: `I -> X`.
    pub fn sharp_state(wires: &WireList, values: &[usize]) -> Result<Self, StochError> {
        for (v, &val) in wires.vars().iter().zip(values) {
            if val >= v.card {
                return Err(StochError::SharpOutOfRange { var: v.to_string(), value: val });
            }
        }
        let idx = wires.flat_index(values);
        Ok(Channel {
            dom: WireList::unit(),
            cod: wires.clone(),
            col_ptr: vec![0, 1],
            entries: vec![(idx, S::one())],
            kind: ChannelKind::Stochastic,
        })
    }

    /// A general state `I -> X` from sparse outcome weights.
    pub fn state(wires: &WireList, weights: Vec<(usize, S)>, tol: f64) -> Result<Self, StochError> {
        Channel::new(WireList::unit(), wires.clone(), vec![weights], ChannelKind::Stochastic, tol)
    }

    /// The "perfect correlation" state `I -> X (x) X` with a unit entry at each `(x,x)`.
    pub fn cup(wires: &WireList) -> Self {
        let n = wires.total_card();
        let cod = wires.concat(wires);
        let entries = (0..n).map(|x| (x * n + x, S::one())).collect();
        Channel {
            dom: WireList::unit(),
            cod,
            col_ptr: vec![0, n],
            entries,
            kind: ChannelKind::Positive,
        }
    }

    /// The matching effect `X (x) X -> I` with a unit entry at each `(x,x)`.
    pub fn cap(wires: &WireList) -> Self {
        let n = wires.total_card();
        let dom = wires.concat(wires);
        let mut buf = ColsBuf::new(n * n);
        for xy in 0..n * n {
            if xy / n == xy % n {
                buf.push(0, S::one());
            }
            buf.end_col();
        }
        Channel {
            dom,
            cod: WireList::unit(),
            col_ptr: buf.col_ptr,
            entries: buf.entries,
            kind: ChannelKind::Positive,
        }
    }

    pub fn dom(&self) -> &WireList {
        &self.dom
    }

    pub fn cod(&self) -> &WireList {
        &self.cod
    }

    pub fn kind(&self) -> ChannelKind {
        self.kind
    }

    pub fn col(&self, x: usize) -> &[(usize, S)] {
        &self.entries[self.col_ptr[x]..self.col_ptr[x + 1]]
    }

    /// Entry `p(y|x)`.
    pub fn entry(&self, y: usize, x: usize) -> S {
        self.col(x)
            .iter()
            .find(|(r, _)| *r == y)
            .map(|(_, v)| v.clone())
            .unwrap_or_else(S::zero)
    }

    fn combine_kind(a: ChannelKind, b: ChannelKind) -> ChannelKind {
        use ChannelKind::*;
        match (a, b) {
            (Stochastic, Stochastic) => Stochastic,
            (General, _) | (_, General) => General,
            _ => Positive,
        }
    }

    /// Diagrammatic composition: `self` then `g`, i.e. the composite `g . self`.
    pub fn then(&self, g: &Channel<S>) -> Result<Channel<S>, StochError> {
        if self.cod != g.dom {
            return Err(StochError::WireMismatch {
                context: "compose".into(),
                left: self.cod.describe(),
                right: g.dom.describe(),
            });
        }
        let n = self.n_cols();
        let mut buf = ColsBuf::new(n);
        let mut acc: BTreeMap<usize, S> = BTreeMap::new();
        for x in 0..n {
            let col = self.col(x);
            if let [(y, p)] = col {
                // Single-entry column: the result is `g`'s column scaled by `p`,
                // already sorted. This is the common case when `self` is
                // deterministic and avoids the accumulator entirely.
                for (z, q) in g.col(*y) {
                    let prod = p.mul(q);
                    if !prod.is_zero() {
                        buf.push(*z, prod);
                    }
                }
            } else {
                for (y, p) in col {
                    for (z, q) in g.col(*y) {
                        let prod = p.mul(q);
                        acc.entry(*z)
                            .and_modify(|v| *v = v.add(&prod))
                            .or_insert(prod);
                    }
                }
                for (z, v) in std::mem::take(&mut acc) {
                    if !v.is_zero() {
                        buf.push(z, v);
                    }
                }
            }
            buf.end_col();
        }
        Ok(Channel {
            dom: self.dom.clone(),
            cod: g.cod.clone(),
            col_ptr: buf.col_ptr,
            entries: buf.entries,
            kind: Self::combine_kind(self.kind, g.kind),
        })
    }

    /// Monoidal product; flat indices make this the standard Kronecker product.
    pub fn tensor(&self, other: &Channel<S>) -> Channel<S> {
        let dom = self.dom.concat(&other.dom);
        let cod = self.cod.concat(&other.cod);
        let other_cod_card = other.cod.total_card();
        let mut buf = ColsBuf::new(self.n_cols() * other.n_cols());
        buf.entries.reserve(self.entries.len() * other.entries.len());
        for xa in 0..self.n_cols() {
            for xb in 0..other.n_cols() {
                for (y, p) in self.col(xa) {
                    for (z, q) in other.col(xb) {
                        buf.push(y * other_cod_card + z, p.mul(q));
                    }
                }
                buf.end_col();
            }
        }
        Channel {
            dom,
            cod,
            col_ptr: buf.col_ptr,
            entries: buf.entries,
            kind: Self::combine_kind(self.kind, other.kind),
        }
    }

    /// Keep the listed codomain positions (ascending), summing out the rest.
    pub fn marginalize(&self, keep: &[usize]) -> Result<Channel<S>, StochError> {
        let n = self.cod.len();
        let ascending = keep.windows(2).all(|w| w[0] < w[1]);
        if !ascending || keep.iter().any(|&p| p >= n) {
            return Err(StochError::BadMarginal {
                positions: keep.to_vec(),
                cod: self.cod.describe(),
            });
        }
        let new_cod: WireList = keep.iter().map(|&p| self.cod.vars()[p].clone()).collect();
        // Map a row of the old codomain to a row of the new one arithmetically, so the
        // per-entry work allocates nothing.
        let old_strides = self.cod.strides();
        let new_strides = new_cod.strides();
        let row_of = |y: usize| -> usize {
            keep.iter()
                .zip(&new_strides)
                .map(|(&k, &s)| (y / old_strides[k]) % self.cod.vars()[k].card * s)
                .sum()
        };
        let mut buf = ColsBuf::new(self.n_cols());
        let mut acc: BTreeMap<usize, S> = BTreeMap::new();
        for x in 0..self.n_cols() {
            for (y, p) in self.col(x) {
                acc.entry(row_of(*y))
                    .and_modify(|v| *v = v.add(p))
                    .or_insert_with(|| p.clone());
            }
            for (row, v) in std::mem::take(&mut acc) {
                if !v.is_zero() {
                    buf.push(row, v);
                }
            }
            buf.end_col();
        }
        Ok(Channel {
            dom: self.dom.clone(),
            cod: new_cod,
            col_ptr: buf.col_ptr,
            entries: buf.entries,
            kind: self.kind,
        })
    }

    /// Marginalize onto named codomain wires, in the given order.
    pub fn marginalize_to(&self, names: &[&str]) -> Result<Channel<S>, StochError> {
        let proj = Channel::projection(&self.cod, names)?;
        self.then(&proj)
    }

    /// Reorder codomain wires to `target` (a rearrangement matched by name).
    pub fn with_cod_order(&self, target: &WireList) -> Result<Channel<S>, StochError> {
        if &self.cod == target {
            return Ok(self.clone());
        }
        let perm = self.cod.permutation_to(target)?;
        self.then(&Channel::permutation(&self.cod, &perm)?)
    }

    /// Reorder domain wires so the channel accepts `target` (a rearrangement by name).
    pub fn with_dom_order(&self, target: &WireList) -> Result<Channel<S>, StochError> {
        if &self.dom == target {
            return Ok(self.clone());
        }
        let perm = target.permutation_to(&self.dom)?;
        Channel::permutation(target, &perm)?.then(self)
    }

    /// Whether every column is a point distribution (entries `0`/`1` up to `tol`).
    pub fn is_deterministic(&self, tol: f64) -> bool {
        (0..self.n_cols()).all(|x| {
            let mut significant = 0usize;
            let mut unit = true;
            for (_, v) in self.col(x) {
                if !v.eq_tol(&S::zero(), tol) {
                    significant += 1;
                    if !v.eq_tol(&S::one(), tol) {
                        unit = false;
                    }
                }
            }
            significant == 1 && unit
        })
    }

    /// The unique outcome of a deterministic column, if the column is sharp.
    pub fn deterministic_value(&self, x: usize, tol: f64) -> Option<usize> {
        let mut out = None;
        for (y, v) in self.col(x) {
            if !v.eq_tol(&S::zero(), tol) {
                if out.is_some() || !v.eq_tol(&S::one(), tol) {
                    return None;
                }
                out = Some(*y);
            }
        }
        out
    }

    /// Whether the channel is deterministic and hits every codomain assignment.
    ///
    /// Calling this on a non-deterministic channel is a contract violation and errors.
    pub fn is_epic_deterministic(&self, tol: f64) -> Result<bool, StochError> {
        let mut hit = vec![false; self.cod.total_card()];
        for x in 0..self.n_cols() {
            match self.deterministic_value(x, tol) {
                Some(y) => hit[y] = true,
                None => {
                    return Err(StochError::NotDeterministic {
                        dom: self.dom.describe(),
                        cod: self.cod.describe(),
                        col: x,
                        assignment: self.dom.describe_assignment(&self.dom.assignment(x)),
                    })
                }
            }
        }
        Ok(hit.into_iter().all(|h| h))
    }

    /// Largest entrywise deviation from `other`, with the worst location.
    ///
    /// Requires identical wire lists on both sides; no implicit reordering.
    pub fn max_deviation(&self, other: &Channel<S>) -> Result<Deviation<S>, StochError> {
        if self.dom != other.dom || self.cod != other.cod {
            return Err(StochError::WireMismatch {
                context: "compare".into(),
                left: format!("{} -> {}", self.dom.describe(), self.cod.describe()),
                right: format!("{} -> {}", other.dom.describe(), other.cod.describe()),
            });
        }
        let mut worst = Deviation {
            max: 0.0,
            exact_equal: true,
            location: None,
        };
        for x in 0..self.n_cols() {
            let mut i = 0usize;
            let mut j = 0usize;
            let a = self.col(x);
            let b = other.col(x);
            while i < a.len() || j < b.len() {
                let (row, va, vb) = match (a.get(i), b.get(j)) {
                    (Some((ra, va)), Some((rb, vb))) if ra == rb => {
                        i += 1;
                        j += 1;
                        (*ra, va.clone(), vb.clone())
                    }
                    (Some((ra, va)), Some((rb, _))) if ra < rb => {
                        i += 1;
                        (*ra, va.clone(), S::zero())
                    }
                    (Some(_), Some((rb, vb))) => {
                        j += 1;
                        (*rb, S::zero(), vb.clone())
                    }
                    (Some((ra, va)), None) => {
                        i += 1;
                        (*ra, va.clone(), S::zero())
                    }
                    (None, Some((rb, vb))) => {
                        j += 1;
                        (*rb, S::zero(), vb.clone())
                    }
                    (None, None) => unreachable!(),
                };
                if va != vb {
                    worst.exact_equal = false;
                    let d = va.abs_diff(&vb);
                    if d >= worst.max {
                        worst.max = d;
                        worst.location = Some(DeviationAt { col: x, row, lhs: va, rhs: vb });
                    }
                }
            }
        }
        Ok(worst)
    }

    /// Equality up to `tol` (exact for rationals). Errors on wire mismatch.
    pub fn eq_tol(&self, other: &Channel<S>, tol: f64) -> Result<bool, StochError> {
        let dev = self.max_deviation(other)?;
        Ok(if S::EXACT { dev.exact_equal } else { dev.max <= tol })
    }

    /// Feedback: connect the last `n` codomain wires back to the last `n` domain wires,
    /// which must be the same wire list, and sum over the looped values.
    ///
    /// For `f : A (x) C -> B (x) C` this produces `Tr_C(f) : A -> B` with
    /// `Tr_C(f)(b|a) = sum_c f(b, c | a, c)`. The result is only guaranteed
    /// entrywise-nonnegative, not stochastic.
    pub fn feedback_trace(&self, n: usize) -> Result<Channel<S>, StochError> {
        if n > self.dom.len() || n > self.cod.len() {
            return Err(StochError::FeedbackArity {
                wanted: n,
                dom_len: self.dom.len(),
                cod_len: self.cod.len(),
            });
        }
        let dom_split = self.dom.len() - n;
        let cod_split = self.cod.len() - n;
        let dom_tail: WireList = self.dom.vars()[dom_split..].iter().cloned().collect();
        let cod_tail: WireList = self.cod.vars()[cod_split..].iter().cloned().collect();
        if dom_tail != cod_tail {
            return Err(StochError::FeedbackMismatch {
                dom_tail: dom_tail.describe(),
                cod_tail: cod_tail.describe(),
            });
        }
        let a_wires: WireList = self.dom.vars()[..dom_split].iter().cloned().collect();
        let b_wires: WireList = self.cod.vars()[..cod_split].iter().cloned().collect();
        let c_card = dom_tail.total_card();
        let mut buf = ColsBuf::new(a_wires.total_card());
        let mut acc: BTreeMap<usize, S> = BTreeMap::new();
        for a in 0..a_wires.total_card() {
            for c in 0..c_card {
                for (row, p) in self.col(a * c_card + c) {
                    if row % c_card == c {
                        let b = row / c_card;
                        acc.entry(b)
                            .and_modify(|v| *v = v.add(p))
                            .or_insert_with(|| p.clone());
                    }
                }
            }
            for (b, v) in std::mem::take(&mut acc) {
                if !v.is_zero() {
                    buf.push(b, v);
                }
            }
            buf.end_col();
        }
        Ok(Channel {
            dom: a_wires,
            cod: b_wires,
            col_ptr: buf.col_ptr,
            entries: buf.entries,
            kind: match self.kind {
                ChannelKind::General => ChannelKind::General,
                _ => ChannelKind::Positive,
            },
        })
    }

    /// Override the recorded kind after an external argument establishes it.
    pub fn into_kind(mut self, kind: ChannelKind, tol: f64) -> Result<Channel<S>, StochError> {
        self.assert_kind(kind, tol)?;
        self.kind = kind;
        Ok(self)
    }
}

/// The outcome of an entrywise comparison.
#[derive(Debug, Clone)]
pub struct Deviation<S: Scalar> {
    /// Largest `|lhs - rhs|` seen, as `f64`.
    pub max: f64,
    /// Whether every entry matched exactly (scalar equality).
    pub exact_equal: bool,
    /// Location and values of the worst entry, if any differed or existed.
    pub location: Option<DeviationAt<S>>,
}

impl<S: Scalar> Deviation<S> {
    /// Whether the comparison counts as equal for this scalar type.
    pub fn within(&self, tol: f64) -> bool {
        if S::EXACT {
            self.exact_equal
        } else {
            self.max <= tol
        }
    }
}

/// Worst-entry detail of a comparison.
#[derive(Debug, Clone)]
pub struct DeviationAt<S: Scalar> {
    pub col: usize,
    pub row: usize,
    pub lhs: S,
    pub rhs: S,
}
