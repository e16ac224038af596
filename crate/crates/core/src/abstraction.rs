//! Checkers relating a fine-grained ("low") model to a coarse-grained ("high") one.
//!
//! A [`VariableAlignment`] maps every high-level variable to a disjoint block of
//! low-level variables and supplies, per variable, a deterministic surjective channel
//! from the block to the variable. From it the checkers derive translation channels
//! between whole wire lists and test commutation squares of the form
//! `tau_cod . Q_low = Q_high . tau_dom` for entire query families:
//!
//! - [`check_constructive`]: one square per subset of high non-inputs, comparing the
//!   opened low model against the opened high model;
//! - [`check_interchange`]: squares for interchange queries up to the enumeration
//!   bounds;
//! - [`check_counterfactual`]: squares for multi-world queries against functional
//!   models with shared noise;
//! - [`check_query_translation`]: squares for a caller-supplied list of concrete
//!   multi-world queries, translated upward through the alignment;
//! - [`check_exact_transformation`] / [`check_strong_abstraction`]: consistency of an
//!   explicit table pairing low interventions with high interventions, the strong
//!   variant additionally demanding that the table covers every sharp high
//!   intervention and maps trivial to trivial;
//! - [`map_from_alignment`]: the canonical intervention table induced by an alignment,
//!   pairing `do(pi(S) = s)` with `do(S = tau(s))`;
//! - [`check_homomorphism`] / [`check_order_preserving`]: algebraic laws of an
//!   intervention table under the "left wins" composition and the refinement order.
//!
//! Every check returns a [`Verdict`] whose [`Witness`]es pin down a failing query, the
//! location inside the compared channels, and both conflicting values.

use std::collections::{BTreeMap, BTreeSet};

use itertools::Itertools;
use thiserror::Error;

use crate::model::{CausalModel, FunctionalCausalModel, Intervention, ModelError};
use crate::queries::{
    enumerate_queries, eval_fcm_query, eval_query, subsets_by_size, CfWorld, EnumBounds, Query,
    QueryError, QueryFamily,
};
use crate::scalar::Scalar;
use crate::stoch::{Channel, StochError, WireList};

#[derive(Debug, Error)]
pub enum AbstractionError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Stoch(#[from] StochError),
    #[error(transparent)]
    Query(#[from] QueryError),
    #[error("alignment invalid: {0}")]
    AlignmentInvalid(String),
    #[error("precondition failed: {0}")]
    PreconditionFailed(String),
    #[error("set {{{0}}} is not a union of alignment blocks")]
    NotBlockAligned(String),
}

/// Options shared by the checkers.
#[derive(Debug, Clone, Copy)]
pub struct CheckOptions {
    /// Absolute tolerance for floating-point scalars (ignored by exact scalars).
    pub tol: f64,
    /// Maximum number of witnesses kept per verdict; counting continues past the cap.
    pub witness_cap: usize,
    /// Enumeration bounds for query families.
    pub bounds: EnumBounds,
}

impl Default for CheckOptions {
    fn default() -> Self {
        CheckOptions {
            tol: crate::DEFAULT_TOLERANCE,
            witness_cap: crate::DEFAULT_WITNESS_CAP,
            bounds: EnumBounds::default(),
        }
    }
}

/// A counterexample: the query whose square failed, where, and the two values.
#[derive(Debug, Clone, PartialEq)]
pub struct Witness {
    /// Label of the failing query or table entry.
    pub query: String,
    /// Human-readable location (domain and codomain assignment, or a description).
    pub location: String,
    /// Value on the low-then-translate side.
    pub lhs: String,
    /// Value on the translate-then-high side.
    pub rhs: String,
    /// Absolute difference (infinite for structural failures such as missing entries).
    pub deviation: f64,
}

/// Outcome of a check over a family of queries.
#[derive(Debug, Clone, PartialEq)]
pub struct Verdict {
    /// True when no square failed.
    pub holds: bool,
    /// True when nothing was checked (no queries in range), making `holds` vacuous.
    pub vacuous: bool,
    /// Number of squares compared.
    pub checked: usize,
    /// Up to `witness_cap` counterexamples.
    pub witnesses: Vec<Witness>,
    /// Total number of failing squares (may exceed `witnesses.len()`).
    pub failures: usize,
    /// Largest deviation seen across all squares.
    pub max_deviation: f64,
}

pub(crate) struct VerdictBuilder {
    pub(crate) checked: usize,
    pub(crate) failures: usize,
    pub(crate) witnesses: Vec<Witness>,
    pub(crate) max_deviation: f64,
    pub(crate) cap: usize,
}

impl VerdictBuilder {
    pub(crate) fn new(cap: usize) -> Self {
        VerdictBuilder { checked: 0, failures: 0, witnesses: Vec::new(), max_deviation: 0.0, cap }
    }

    /// Compare one square `lhs = rhs` (both already composed) under `tol`.
    pub(crate) fn compare<S: Scalar>(
        &mut self,
        label: &str,
        lhs: &Channel<S>,
        rhs: &Channel<S>,
        tol: f64,
    ) -> Result<(), AbstractionError> {
        let dev = lhs.max_deviation(rhs)?;
        self.checked += 1;
        if dev.max > self.max_deviation {
            self.max_deviation = dev.max;
        }
        if !dev.within(tol) {
            self.failures += 1;
            if self.witnesses.len() < self.cap {
                let location = match &dev.location {
                    Some(at) => format!(
                        "dom({}) cod({})",
                        lhs.dom().describe_assignment(&lhs.dom().assignment(at.col)),
                        lhs.cod().describe_assignment(&lhs.cod().assignment(at.row)),
                    ),
                    None => "unlocated".to_string(),
                };
                let (lhs_s, rhs_s) = match dev.location {
                    Some(at) => (at.lhs.render(), at.rhs.render()),
                    None => ("?".into(), "?".into()),
                };
                self.witnesses.push(Witness {
                    query: label.to_string(),
                    location,
                    lhs: lhs_s,
                    rhs: rhs_s,
                    deviation: dev.max,
                });
            }
        }
        Ok(())
    }

    /// Record a structural failure that has no numeric comparison behind it.
    pub(crate) fn structural(&mut self, label: &str, detail: &str) {
        self.checked += 1;
        self.failures += 1;
        if self.witnesses.len() < self.cap {
            self.witnesses.push(Witness {
                query: label.to_string(),
                location: detail.to_string(),
                lhs: "absent".into(),
                rhs: "required".into(),
                deviation: f64::INFINITY,
            });
        }
        self.max_deviation = f64::INFINITY;
    }

    pub(crate) fn finish(self) -> Verdict {
        Verdict {
            holds: self.failures == 0,
            vacuous: self.checked == 0,
            checked: self.checked,
            witnesses: self.witnesses,
            failures: self.failures,
            max_deviation: self.max_deviation,
        }
    }
}

/// Blockwise correspondence between high variables and low variables.
///
/// `pi[X]` lists the low-level block of high variable `X` (the order fixes the domain
/// of `tau[X]`); blocks of distinct variables must be disjoint. `tau[X]` maps the
/// block to `X` and must be deterministic and surjective.
#[derive(Debug, Clone, PartialEq)]
pub struct VariableAlignment<S: Scalar> {
    pub pi: BTreeMap<String, Vec<String>>,
    pub tau: BTreeMap<String, Channel<S>>,
}

impl<S: Scalar> VariableAlignment<S> {
    pub fn block(&self, high: &str) -> Result<&[String], AbstractionError> {
        self.pi
            .get(high)
            .map(|v| v.as_slice())
            .ok_or_else(|| AbstractionError::AlignmentInvalid(format!("no block for `{high}`")))
    }

    pub fn tau(&self, high: &str) -> Result<&Channel<S>, AbstractionError> {
        self.tau
            .get(high)
            .ok_or_else(|| AbstractionError::AlignmentInvalid(format!("no map for `{high}`")))
    }

    /// The low-level image `pi(S)` of a set of high variables.
    pub fn image(&self, high_set: &BTreeSet<String>) -> Result<BTreeSet<String>, AbstractionError> {
        let mut out = BTreeSet::new();
        for h in high_set {
            out.extend(self.block(h)?.iter().cloned());
        }
        Ok(out)
    }

    /// The set of high variables whose blocks partition `low_set`; errors when the
    /// blocks do not reproduce the set exactly.
    pub fn cover(&self, low_set: &BTreeSet<String>) -> Result<BTreeSet<String>, AbstractionError> {
        let mut cover = BTreeSet::new();
        for (h, block) in &self.pi {
            if block.iter().any(|l| low_set.contains(l)) {
                cover.insert(h.clone());
            }
        }
        let image = self.image(&cover)?;
        if &image != low_set {
            return Err(AbstractionError::NotBlockAligned(low_set.iter().join(",")));
        }
        Ok(cover)
    }

    /// Internal consistency plus the shape constraints every checker relies on: the
    /// blocks are disjoint, every map is deterministic and surjective, and each map's
    /// wires match its block.
    fn validate_maps(&self, tol: f64) -> Result<(), AbstractionError> {
        let mut seen: BTreeMap<&str, &str> = BTreeMap::new();
        for (h, block) in &self.pi {
            for l in block {
                if let Some(other) = seen.insert(l, h) {
                    return Err(AbstractionError::AlignmentInvalid(format!(
                        "`{l}` lies in the blocks of both `{other}` and `{h}`"
                    )));
                }
            }
            let tau = self.tau(h)?;
            if tau.cod().len() != 1 || tau.cod().vars()[0].name != *h {
                return Err(AbstractionError::AlignmentInvalid(format!(
                    "map for `{h}` must end in the single wire `{h}`, got {}",
                    tau.cod().describe()
                )));
            }
            let dom_names: Vec<&str> = tau.dom().names();
            let block_names: Vec<&str> = block.iter().map(|s| s.as_str()).collect();
            if dom_names != block_names {
                return Err(AbstractionError::AlignmentInvalid(format!(
                    "map for `{h}` has domain {} but block [{}]",
                    tau.dom().describe(),
                    block_names.join(", ")
                )));
            }
            match tau.is_epic_deterministic(tol) {
                Ok(true) => {}
                Ok(false) => {
                    return Err(AbstractionError::AlignmentInvalid(format!(
                        "map for `{h}` is not surjective"
                    )))
                }
                Err(_) => {
                    return Err(AbstractionError::AlignmentInvalid(format!(
                        "map for `{h}` is not deterministic"
                    )))
                }
            }
        }
        Ok(())
    }

    /// Validate against a pair of ordinary models: blocks exactly cover the high
    /// variable set, high inputs align with exactly the low inputs, and high outputs
    /// land inside the low outputs.
    pub fn validate_models(
        &self,
        low: &CausalModel<S>,
        high: &CausalModel<S>,
        tol: f64,
    ) -> Result<(), AbstractionError> {
        self.validate_maps(tol)?;
        let high_names: BTreeSet<String> =
            high.dag().vars().iter().map(|v| v.name.clone()).collect();
        let aligned: BTreeSet<String> = self.pi.keys().cloned().collect();
        if aligned != high_names {
            return Err(AbstractionError::AlignmentInvalid(format!(
                "blocks are declared for {{{}}} but the high variables are {{{}}}",
                aligned.iter().join(","),
                high_names.iter().join(",")
            )));
        }
        for (h, block) in &self.pi {
            let tau = self.tau(h)?;
            if tau.cod().vars()[0].card != high.dag().var(h)?.card {
                return Err(AbstractionError::AlignmentInvalid(format!(
                    "map for `{h}` has the wrong cardinality"
                )));
            }
            for (l, wire) in block.iter().zip(tau.dom().vars()) {
                let low_var = low.dag().var(l).map_err(|_| {
                    AbstractionError::AlignmentInvalid(format!(
                        "block of `{h}` mentions unknown low variable `{l}`"
                    ))
                })?;
                if low_var.card != wire.card {
                    return Err(AbstractionError::AlignmentInvalid(format!(
                        "`{l}` has cardinality {} in the low model but {} in the map for `{h}`",
                        low_var.card, wire.card
                    )));
                }
            }
        }
        let high_inputs: BTreeSet<String> = high.dag().inputs().clone();
        let image_inputs = self.image(&high_inputs)?;
        if &image_inputs != low.dag().inputs() {
            return Err(AbstractionError::AlignmentInvalid(format!(
                "high inputs map onto {{{}}} but the low inputs are {{{}}}",
                image_inputs.iter().join(","),
                low.dag().inputs().iter().join(",")
            )));
        }
        let image_outputs = self.image(high.dag().outputs())?;
        if !image_outputs.is_subset(low.dag().outputs()) {
            return Err(AbstractionError::AlignmentInvalid(format!(
                "high outputs map onto {{{}}} which is not inside the low outputs {{{}}}",
                image_outputs.iter().join(","),
                low.dag().outputs().iter().join(",")
            )));
        }
        // Blocks of non-inputs must consist of low non-inputs (inputs are pinned to
        // inputs by the equality above and disjointness).
        for (h, block) in &self.pi {
            if !high.dag().is_input(h) {
                for l in block {
                    if low.dag().is_input(l) {
                        return Err(AbstractionError::AlignmentInvalid(format!(
                            "non-input `{h}` has the low input `{l}` in its block"
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// Validate against functional models: blocks partition within the endogenous
    /// variables of both sides (noise variables are never aligned).
    pub fn validate_fcms(
        &self,
        low: &FunctionalCausalModel<S>,
        high: &FunctionalCausalModel<S>,
        tol: f64,
    ) -> Result<(), AbstractionError> {
        self.validate_maps(tol)?;
        let high_names: BTreeSet<String> = high.endo_names().into_iter().collect();
        let aligned: BTreeSet<String> = self.pi.keys().cloned().collect();
        if aligned != high_names {
            return Err(AbstractionError::AlignmentInvalid(format!(
                "blocks are declared for {{{}}} but the high endogenous variables are {{{}}}",
                aligned.iter().join(","),
                high_names.iter().join(",")
            )));
        }
        let low_names: BTreeSet<String> = low.endo_names().into_iter().collect();
        for block in self.pi.values() {
            for l in block {
                if !low_names.contains(l) {
                    return Err(AbstractionError::AlignmentInvalid(format!(
                        "unknown low endogenous variable `{l}` in a block"
                    )));
                }
            }
        }
        Ok(())
    }

    /// The translation channel from a low wire list onto the listed high variables:
    /// project onto the blocks (discarding unaligned wires), then apply the maps.
    pub fn tau_map(
        &self,
        low: &WireList,
        high_names: &[String],
    ) -> Result<Channel<S>, AbstractionError> {
        let mut block_names: Vec<&str> = Vec::new();
        for h in high_names {
            for l in self.block(h)? {
                block_names.push(l.as_str());
            }
        }
        let proj = Channel::projection(low, &block_names)?;
        let mut prod = Channel::identity(WireList::unit());
        for h in high_names {
            prod = prod.tensor(self.tau(h)?);
        }
        Ok(proj.then(&prod)?)
    }

    /// Composite alignment: `self` relates mid to high, `base` relates low to mid; the
    /// result relates low to high with concatenated blocks and composed maps.
    pub fn compose_over(
        &self,
        base: &VariableAlignment<S>,
    ) -> Result<VariableAlignment<S>, AbstractionError> {
        let mut pi = BTreeMap::new();
        let mut tau = BTreeMap::new();
        for (h, mids) in &self.pi {
            let mut block = Vec::new();
            let mut lift = Channel::identity(WireList::unit());
            for m in mids {
                block.extend(base.block(m)?.iter().cloned());
                lift = lift.tensor(base.tau(m)?);
            }
            let composed = lift.then(self.tau(h)?)?;
            pi.insert(h.clone(), block);
            tau.insert(h.clone(), composed);
        }
        Ok(VariableAlignment { pi, tau })
    }

    /// Apply the map of each variable in `high_set` to a sharp low assignment of its
    /// block, yielding the sharp high assignment.
    pub fn push_values(
        &self,
        high_set: &BTreeSet<String>,
        low_values: &BTreeMap<String, usize>,
    ) -> Result<BTreeMap<String, usize>, AbstractionError> {
        let mut out = BTreeMap::new();
        for h in high_set {
            let tau = self.tau(h)?;
            let assignment: Vec<usize> = self
                .block(h)?
                .iter()
                .map(|l| {
                    low_values.get(l).copied().ok_or_else(|| {
                        AbstractionError::AlignmentInvalid(format!(
                            "missing a value for `{l}` in the block of `{h}`"
                        ))
                    })
                })
                .collect::<Result<_, _>>()?;
            let col = tau.dom().flat_index(&assignment);
            let v = tau
                .deterministic_value(col, 0.0)
                .expect("validated deterministic map");
            out.insert(h.clone(), v);
        }
        Ok(out)
    }
}

/// One prepared commutation square: compare `low . tau_cod` with `tau_dom . high`.
#[derive(Debug, Clone)]
pub struct AlignedQuery<S: Scalar> {
    pub label: String,
    pub low: Channel<S>,
    pub high: Channel<S>,
    pub tau_dom: Channel<S>,
    pub tau_cod: Channel<S>,
}

/// Check a batch of prepared squares. This is the primitive the family checkers feed.
pub fn check_consistency<S: Scalar>(
    squares: &[AlignedQuery<S>],
    opts: &CheckOptions,
) -> Result<Verdict, AbstractionError> {
    let mut builder = VerdictBuilder::new(opts.witness_cap);
    for sq in squares {
        let lhs = sq.low.then(&sq.tau_cod)?;
        let rhs = sq.tau_dom.then(&sq.high)?;
        let rhs = rhs.with_cod_order(lhs.cod())?;
        builder.compare(&sq.label, &lhs, &rhs, opts.tol)?;
    }
    Ok(builder.finish())
}

/// Check the opened-model square for every subset of high non-inputs.
///
/// Requires every high non-input to be observable (otherwise the opened squares are
/// not comparable) and the alignment to be valid for the model pair.
pub fn check_constructive<S: Scalar>(
    low: &CausalModel<S>,
    high: &CausalModel<S>,
    align: &VariableAlignment<S>,
    opts: &CheckOptions,
) -> Result<Verdict, AbstractionError> {
    align.validate_models(low, high, opts.tol)?;
    let high_non_inputs = high.dag().non_inputs();
    for v in &high_non_inputs {
        if !high.dag().outputs().contains(v) {
            return Err(AbstractionError::PreconditionFailed(format!(
                "high non-input `{v}` is not an output; opened squares would not type-check"
            )));
        }
    }
    // Squares are built, compared, and dropped one at a time: with every non-input
    // opened at once the low io channel runs to millions of columns, so holding all
    // subsets simultaneously would dominate peak memory.
    let mut builder = VerdictBuilder::new(opts.witness_cap);
    for targets in subsets_by_size(&high_non_inputs, high_non_inputs.len()) {
        let low_targets = align.image(&targets)?;
        let high_opened = high.open_model(&targets)?;
        let low_opened = low.open_model(&low_targets)?;
        let qh = high_opened.io_channel()?;
        let ql = low_opened.io_channel()?;
        let dom_names: Vec<String> = high_opened.dag().input_order().to_vec();
        let cod_names: Vec<String> = qh.cod().names().iter().map(|s| s.to_string()).collect();
        let tau_dom = align.tau_map(ql.dom(), &dom_names)?;
        let tau_cod = align.tau_map(ql.cod(), &cod_names)?;
        let label =
            Query::OpenedDo { targets, outputs: high.dag().outputs().clone() }.describe();
        let lhs = ql.then(&tau_cod)?;
        drop(ql);
        let rhs = tau_dom.then(&qh)?.with_cod_order(lhs.cod())?;
        drop(tau_dom);
        builder.compare(&label, &lhs, &rhs, opts.tol)?;
    }
    Ok(builder.finish())
}

/// Check the interchange-query square for every enumerated high interchange query.
pub fn check_interchange<S: Scalar>(
    low: &CausalModel<S>,
    high: &CausalModel<S>,
    align: &VariableAlignment<S>,
    opts: &CheckOptions,
) -> Result<Verdict, AbstractionError> {
    align.validate_models(low, high, opts.tol)?;
    let tau_in = align.tau_map(&low.dag().input_wires(), high.dag().input_order())?;
    let mut squares = Vec::new();
    for q in enumerate_queries(high, QueryFamily::Interchange, &opts.bounds) {
        let Query::Interchange { groups, outputs } = &q else { continue };
        let low_groups: Vec<BTreeSet<String>> = groups
            .iter()
            .map(|g| align.image(g))
            .collect::<Result<_, _>>()?;
        let low_query = Query::Interchange {
            groups: low_groups,
            outputs: low.dag().outputs().clone(),
        };
        let ql = eval_query(low, &low_query)?;
        let qh = eval_query(high, &q)?;
        let mut tau_dom = tau_in.clone();
        for _ in 0..groups.len() {
            tau_dom = tau_dom.tensor(&tau_in);
        }
        let cod_names: Vec<String> = outputs.iter().cloned().collect();
        let tau_cod = align.tau_map(ql.cod(), &cod_names)?;
        squares.push(AlignedQuery { label: q.describe(), low: ql, high: qh, tau_dom, tau_cod });
    }
    check_consistency(&squares, opts)
}

/// Check the multi-world square for every enumerated high counterfactual query.
pub fn check_counterfactual<S: Scalar>(
    low: &FunctionalCausalModel<S>,
    high: &FunctionalCausalModel<S>,
    align: &VariableAlignment<S>,
    opts: &CheckOptions,
) -> Result<Verdict, AbstractionError> {
    align.validate_fcms(low, high, opts.tol)?;
    let mut squares = Vec::new();
    let low_all: BTreeSet<String> = low.endo_names().into_iter().collect();
    for q in crate::queries::enumerate_cf_queries(high, &opts.bounds) {
        let Query::Counterfactual { worlds } = &q else { continue };
        let low_worlds: Vec<CfWorld> = worlds
            .iter()
            .map(|w| {
                Ok(CfWorld { targets: align.image(&w.targets)?, outputs: low_all.clone() })
            })
            .collect::<Result<_, AbstractionError>>()?;
        let ql = eval_fcm_query(low, &Query::Counterfactual { worlds: low_worlds.clone() })?;
        let qh = eval_fcm_query(high, &q)?;
        // Domain: per-world target blocks; codomain: per-world output blocks.
        let mut tau_dom = Channel::identity(WireList::unit());
        let mut cursor = 0usize;
        for w in worlds {
            let names: Vec<String> = w.targets.iter().cloned().collect();
            let low_block_len: usize = align.image(&w.targets)?.len();
            let block: WireList =
                ql.dom().vars()[cursor..cursor + low_block_len].iter().cloned().collect();
            cursor += low_block_len;
            tau_dom = tau_dom.tensor(&align.tau_map(&block, &names)?);
        }
        let mut tau_cod = Channel::identity(WireList::unit());
        let mut cod_cursor = 0usize;
        for w in worlds {
            let names: Vec<String> = w.outputs.iter().cloned().collect();
            let block: WireList = ql.cod().vars()
                [cod_cursor..cod_cursor + low_all.len()]
                .iter()
                .cloned()
                .collect();
            cod_cursor += low_all.len();
            tau_cod = tau_cod.tensor(&align.tau_map(&block, &names)?);
        }
        squares.push(AlignedQuery { label: q.describe(), low: ql, high: qh, tau_dom, tau_cod });
    }
    check_consistency(&squares, opts)
}

/// Translate concrete multi-world queries upward and check that their outcome
/// distributions agree: for each given low query (sharp world values on block-aligned
/// targets), the high counterpart applies the alignment maps to the values, and the
/// translated low outcome must equal the high outcome.
pub fn check_query_translation<S: Scalar>(
    low: &FunctionalCausalModel<S>,
    high: &FunctionalCausalModel<S>,
    align: &VariableAlignment<S>,
    low_queries: &[Query],
    opts: &CheckOptions,
) -> Result<Verdict, AbstractionError> {
    align.validate_fcms(low, high, opts.tol)?;
    let mut squares = Vec::new();
    for q in low_queries {
        let Query::SharpCounterfactual { worlds } = q else {
            return Err(AbstractionError::PreconditionFailed(
                "query translation expects concrete multi-world queries".into(),
            ));
        };
        let mut high_worlds = Vec::with_capacity(worlds.len());
        for (values, outputs) in worlds {
            let target_set: BTreeSet<String> = values.keys().cloned().collect();
            let high_targets = align.cover(&target_set)?;
            let high_values = align.push_values(&high_targets, values)?;
            let high_outputs = align.cover(outputs)?;
            high_worlds.push((high_values, high_outputs));
        }
        let high_query = Query::SharpCounterfactual { worlds: high_worlds.clone() };
        let ql = eval_fcm_query(low, q)?;
        let qh = eval_fcm_query(high, &high_query)?;
        let mut tau_cod = Channel::identity(WireList::unit());
        let mut cursor = 0usize;
        for ((_, low_outputs), (_, high_outputs)) in worlds.iter().zip(&high_worlds) {
            let block: WireList =
                ql.cod().vars()[cursor..cursor + low_outputs.len()].iter().cloned().collect();
            cursor += low_outputs.len();
            let names: Vec<String> = high_outputs.iter().cloned().collect();
            tau_cod = tau_cod.tensor(&align.tau_map(&block, &names)?);
        }
        let tau_dom = Channel::identity(WireList::unit());
        squares.push(AlignedQuery { label: q.describe(), low: ql, high: qh, tau_dom, tau_cod });
    }
    check_consistency(&squares, opts)
}

/// A table pairing low interventions with the high interventions they realise.
pub type InterventionMap<S> = Vec<(Intervention<S>, Intervention<S>)>;

fn describe_intervention<S: Scalar>(iv: &Intervention<S>) -> String {
    if iv.is_trivial() {
        return "do()".into();
    }
    match iv.sharp_signature() {
        Some(sig) => format!(
            "do({})",
            sig.iter().map(|(n, v)| format!("{n}={v}")).join(",")
        ),
        None => format!("replace({})", iv.targets().iter().join(",")),
    }
}

/// Check the io square for every intervention pair in the table:
/// `tau_out . io(low after sigma) = io(high after omega(sigma)) . tau_in`.
pub fn check_exact_transformation<S: Scalar>(
    low: &CausalModel<S>,
    high: &CausalModel<S>,
    tau_in: &Channel<S>,
    tau_out: &Channel<S>,
    pairs: &InterventionMap<S>,
    opts: &CheckOptions,
) -> Result<Verdict, AbstractionError> {
    let mut builder = VerdictBuilder::new(opts.witness_cap);
    for (low_iv, high_iv) in pairs {
        let label = format!(
            "{} ~ {}",
            describe_intervention(low_iv),
            describe_intervention(high_iv)
        );
        let low_io = low.apply_intervention(low_iv)?.io_channel()?;
        let high_io = high.apply_intervention(high_iv)?.io_channel()?;
        let lhs = low_io.then(tau_out)?;
        let rhs = tau_in.then(&high_io)?.with_cod_order(lhs.cod())?;
        builder.compare(&label, &lhs, &rhs, opts.tol)?;
    }
    Ok(builder.finish())
}

/// Enumerate every sharp intervention on the model: each non-input is either left
/// alone or fixed to one of its values. Includes the trivial intervention.
pub fn all_sharp_interventions<S: Scalar>(
    model: &CausalModel<S>,
) -> Result<Vec<Intervention<S>>, AbstractionError> {
    let non_inputs = model.dag().non_inputs();
    let mut out: Vec<BTreeMap<String, usize>> = vec![BTreeMap::new()];
    for v in &non_inputs {
        let card = model.dag().var(v)?.card;
        let mut next = Vec::with_capacity(out.len() * (card + 1));
        for assignment in &out {
            next.push(assignment.clone());
            for value in 0..card {
                let mut with = assignment.clone();
                with.insert(v.clone(), value);
                next.push(with);
            }
        }
        out = next;
    }
    out.into_iter()
        .map(|values| Intervention::do_values(model.dag(), &values).map_err(Into::into))
        .collect()
}

/// Strong variant of [`check_exact_transformation`]: additionally requires that every
/// high non-input is observable, that the trivial low intervention maps to the trivial
/// high intervention, and that every sharp high intervention is realised by some table
/// entry. Structural gaps are reported as witnesses with infinite deviation.
pub fn check_strong_abstraction<S: Scalar>(
    low: &CausalModel<S>,
    high: &CausalModel<S>,
    tau_in: &Channel<S>,
    tau_out: &Channel<S>,
    pairs: &InterventionMap<S>,
    opts: &CheckOptions,
) -> Result<Verdict, AbstractionError> {
    for v in high.dag().non_inputs() {
        if !high.dag().outputs().contains(&v) {
            return Err(AbstractionError::PreconditionFailed(format!(
                "high non-input `{v}` is not an output"
            )));
        }
    }
    let mut builder = VerdictBuilder::new(opts.witness_cap);
    for (low_iv, high_iv) in pairs {
        if low_iv.is_trivial() && !high_iv.is_trivial() {
            builder.structural(
                &format!(
                    "{} ~ {}",
                    describe_intervention(low_iv),
                    describe_intervention(high_iv)
                ),
                "the trivial intervention must map to the trivial intervention",
            );
        }
    }
    let covered: BTreeSet<Option<Vec<(String, usize)>>> =
        pairs.iter().map(|(_, h)| h.sharp_signature()).collect();
    for high_iv in all_sharp_interventions(high)? {
        let sig = high_iv.sharp_signature();
        if !covered.contains(&sig) {
            builder.structural(
                &describe_intervention(&high_iv),
                "no table entry realises this intervention",
            );
        }
    }
    let structural = builder.finish();
    let squares = check_exact_transformation(low, high, tau_in, tau_out, pairs, opts)?;
    Ok(merge_verdicts(structural, squares, opts))
}

pub(crate) fn merge_verdicts(a: Verdict, b: Verdict, opts: &CheckOptions) -> Verdict {
    let mut witnesses = a.witnesses;
    for w in b.witnesses {
        if witnesses.len() >= opts.witness_cap {
            break;
        }
        witnesses.push(w);
    }
    Verdict {
        holds: a.holds && b.holds,
        vacuous: a.vacuous && b.vacuous,
        checked: a.checked + b.checked,
        witnesses,
        failures: a.failures + b.failures,
        max_deviation: a.max_deviation.max(b.max_deviation),
    }
}

/// The intervention table induced by an alignment: for every subset `S` of high
/// non-inputs and every sharp assignment `s` of the blocks `pi(S)`, pair
/// `do(pi(S) = s)` on the low side with `do(S = tau(s))` on the high side.
/// Because the maps are surjective, the resulting table realises every sharp high
/// intervention, so it is a candidate for [`check_strong_abstraction`].
pub fn map_from_alignment<S: Scalar>(
    low: &CausalModel<S>,
    high: &CausalModel<S>,
    align: &VariableAlignment<S>,
) -> Result<InterventionMap<S>, AbstractionError> {
    let high_non_inputs = high.dag().non_inputs();
    let mut pairs = Vec::new();
    for targets in subsets_by_size(&high_non_inputs, high_non_inputs.len()) {
        let low_targets: Vec<String> = align.image(&targets)?.into_iter().collect();
        let low_wires = low.dag().wires(&low_targets)?;
        for idx in 0..low_wires.total_card() {
            let assignment = low_wires.assignment(idx);
            let low_values: BTreeMap<String, usize> = low_targets
                .iter()
                .cloned()
                .zip(assignment.iter().copied())
                .collect();
            let high_values = align.push_values(&targets, &low_values)?;
            pairs.push((
                Intervention::do_values(low.dag(), &low_values)?,
                Intervention::do_values(high.dag(), &high_values)?,
            ));
        }
    }
    Ok(pairs)
}

/// The "left wins" composition on interventions: targets of `a` keep `a`'s
/// replacement, all other targets of `b` are adopted.
pub fn compose_interventions<S: Scalar>(
    a: &Intervention<S>,
    b: &Intervention<S>,
) -> Intervention<S> {
    a.combine(b)
}

/// The refinement order: `a <= b` when `b` extends `a`'s replacements, equivalently
/// when composing `a` over `b` gives back `b`.
pub fn intervention_leq<S: Scalar>(a: &Intervention<S>, b: &Intervention<S>) -> bool {
    a.replacements.iter().all(|(k, m)| b.replacements.get(k) == Some(m))
}

/// Check that a table is a homomorphism for the "left wins" composition wherever all
/// three of `a`, `b`, `a . b` appear in it, and that trivial maps to trivial.
pub fn check_homomorphism<S: Scalar>(
    pairs: &InterventionMap<S>,
    opts: &CheckOptions,
) -> Result<Verdict, AbstractionError> {
    let mut builder = VerdictBuilder::new(opts.witness_cap);
    let lookup: Vec<(&Intervention<S>, &Intervention<S>)> =
        pairs.iter().map(|(l, h)| (l, h)).collect();
    let find = |iv: &Intervention<S>| -> Option<&Intervention<S>> {
        lookup.iter().find(|(l, _)| *l == iv).map(|(_, h)| *h)
    };
    for (low_iv, high_iv) in pairs {
        builder.checked += 1;
        if low_iv.is_trivial() && !high_iv.is_trivial() {
            builder.failures += 1;
            if builder.witnesses.len() < opts.witness_cap {
                builder.witnesses.push(Witness {
                    query: "do() ~ do()".into(),
                    location: "unit must be preserved".into(),
                    lhs: describe_intervention(high_iv),
                    rhs: "do()".into(),
                    deviation: f64::INFINITY,
                });
            }
        }
    }
    for (a_low, a_high) in pairs {
        for (b_low, b_high) in pairs {
            let ab_low = compose_interventions(a_low, b_low);
            let Some(ab_high) = find(&ab_low) else { continue };
            builder.checked += 1;
            let expect = compose_interventions(a_high, b_high);
            if *ab_high != expect {
                builder.failures += 1;
                if builder.witnesses.len() < opts.witness_cap {
                    builder.witnesses.push(Witness {
                        query: format!(
                            "{} . {}",
                            describe_intervention(a_low),
                            describe_intervention(b_low)
                        ),
                        location: describe_intervention(&ab_low),
                        lhs: describe_intervention(ab_high),
                        rhs: describe_intervention(&expect),
                        deviation: f64::INFINITY,
                    });
                }
                builder.max_deviation = f64::INFINITY;
            }
        }
    }
    Ok(builder.finish())
}

/// Check that a table preserves the refinement order on the pairs it contains.
pub fn check_order_preserving<S: Scalar>(
    pairs: &InterventionMap<S>,
    opts: &CheckOptions,
) -> Result<Verdict, AbstractionError> {
    let mut builder = VerdictBuilder::new(opts.witness_cap);
    for (a_low, a_high) in pairs {
        for (b_low, b_high) in pairs {
            if !intervention_leq(a_low, b_low) {
                continue;
            }
            builder.checked += 1;
            if !intervention_leq(a_high, b_high) {
                builder.failures += 1;
                if builder.witnesses.len() < opts.witness_cap {
                    builder.witnesses.push(Witness {
                        query: format!(
                            "{} <= {}",
                            describe_intervention(a_low),
                            describe_intervention(b_low)
                        ),
                        location: "images are not ordered".into(),
                        lhs: describe_intervention(a_high),
                        rhs: describe_intervention(b_high),
                        deviation: f64::INFINITY,
                    });
                }
                builder.max_deviation = f64::INFINITY;
            }
        }
    }
    Ok(builder.finish())
}
