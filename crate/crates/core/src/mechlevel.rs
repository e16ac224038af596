//! Mechanism-level decomposition of a block alignment.
//!
//! The whole-model checkers in [`crate::abstraction`] compare entire input-output
//! behaviours. This module cuts the comparison down to one square per high-level
//! mechanism, which is both cheaper and more diagnostic: a failure names the high
//! variable whose mechanism does not commute with the alignment.
//!
//! * [`mechanism_var_set`] — the low variables feeding the block of a high variable
//!   once the blocks of its high parents are cut out of the graph.
//! * [`classify_partition`] — structural quality of those sets: `strong` (no set
//!   touches another block), `extra_strong` (sets pairwise disjoint), `full` (every
//!   parent-block variable can influence the child block without detouring through
//!   another parent block).
//! * [`StructureClass`] — which compositional structure a syntactic expansion of the
//!   high model would live in; each class demands a different partition quality.
//! * [`mechanism_fragment`] — the sub-model computing one high mechanism, with the
//!   parent blocks as dangling input wires.
//! * [`check_mechanism_level`] — runs the whole-model route (consistency of every
//!   opened behaviour, plus the partition-quality requirement) and the per-mechanism
//!   route (fragment naturality squares, plus the same requirement read off the
//!   fragments) independently, and reports whether the two verdicts agree.
//!
//! The two routes are deliberately implemented against different primitives — one
//! composes monolithic io channels, the other never builds a channel larger than a
//! single fragment — so each serves as an oracle for the other on random instances.

use std::collections::{BTreeMap, BTreeSet};

use crate::abstraction::{
    check_constructive, merge_verdicts, AbstractionError, CheckOptions, VariableAlignment,
    Verdict, VerdictBuilder,
};
use crate::model::{CausalModel, OpenDag};
use crate::scalar::Scalar;
use crate::stoch::{Channel, WireList};

/// Compositional structure in which a syntactic expansion of the high model is read.
///
/// The names follow the usual hierarchy of monoidal categories with copying and
/// deleting: `Cartesian` (copying and deleting are natural), `Markov` (deleting is
/// natural), `CopyDiscard` (neither is assumed natural).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StructureClass {
    Cartesian,
    Markov,
    CopyDiscard,
}

impl StructureClass {
    pub fn label(&self) -> &'static str {
        match self {
            StructureClass::Cartesian => "cartesian",
            StructureClass::Markov => "markov",
            StructureClass::CopyDiscard => "copy-discard",
        }
    }

    /// Whether a partition of the given quality supports this reading.
    ///
    /// A cartesian reading may duplicate work, so it only needs `strong`; a Markov
    /// reading discards unused branches, so overlapping mechanism sets would count
    /// shared noise twice and `extra_strong` is required; a copy-discard reading can
    /// do neither, so it additionally needs `full` to guarantee each wire it keeps
    /// is genuinely used.
    pub fn admits(&self, partition: &MechanismPartition) -> bool {
        match self {
            StructureClass::Cartesian => partition.strong,
            StructureClass::Markov => partition.extra_strong,
            StructureClass::CopyDiscard => partition.extra_strong && partition.full,
        }
    }
}

/// Mechanism variable sets of an alignment, plus the three quality flags.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MechanismPartition {
    /// For each high variable `X`, the set `M(X)` of low variables with a directed
    /// path to `pi(X)` that avoids the blocks of the high parents of `X`.
    pub sets: BTreeMap<String, BTreeSet<String>>,
    /// `M(X)` never touches the block of another high variable.
    pub strong: bool,
    /// The sets `M(X)` are pairwise disjoint.
    pub extra_strong: bool,
    /// Every variable in the block of a non-input high parent of `X` reaches
    /// `pi(X)` by a path whose interior avoids all parent blocks of `X`.
    pub full: bool,
}

/// Low variables backward-reachable from `pi(x)` once the blocks of the high
/// parents of `x` are deleted from the low graph. The block `pi(x)` itself is
/// always included.
pub fn mechanism_var_set<S: Scalar>(
    low: &CausalModel<S>,
    high: &CausalModel<S>,
    align: &VariableAlignment<S>,
    x: &str,
) -> Result<BTreeSet<String>, AbstractionError> {
    let parents: BTreeSet<String> = high.dag().parents(x).iter().cloned().collect();
    let forbidden = align.image(&parents)?;
    let start: BTreeSet<String> = align.block(x)?.iter().cloned().collect();
    Ok(backward_avoiding(low.dag(), &start, &forbidden))
}

/// Reverse reachability that never enters `forbidden` vertices. Start vertices are
/// kept even when forbidden elsewhere (callers guarantee they are not here, since
/// blocks are disjoint and the graph is acyclic).
fn backward_avoiding(
    dag: &OpenDag,
    start: &BTreeSet<String>,
    forbidden: &BTreeSet<String>,
) -> BTreeSet<String> {
    let mut seen = start.clone();
    let mut stack: Vec<String> = start.iter().cloned().collect();
    while let Some(v) = stack.pop() {
        for p in dag.parents(&v) {
            if forbidden.contains(p) || seen.contains(p) {
                continue;
            }
            seen.insert(p.clone());
            stack.push(p.clone());
        }
    }
    seen
}

/// Whether some directed path `start -> ... -> t` with `t` in `targets` has all its
/// interior vertices outside `forbidden`. The start vertex itself may be forbidden.
fn reaches_avoiding(
    dag: &OpenDag,
    start: &str,
    targets: &BTreeSet<String>,
    forbidden: &BTreeSet<String>,
) -> bool {
    let mut seen: BTreeSet<String> = BTreeSet::new();
    seen.insert(start.to_string());
    let mut stack = vec![start.to_string()];
    while let Some(v) = stack.pop() {
        for c in dag.children(&v) {
            if targets.contains(&c) {
                return true;
            }
            if !forbidden.contains(&c) && seen.insert(c.clone()) {
                stack.push(c);
            }
        }
    }
    false
}

/// Compute every mechanism variable set and grade the partition.
pub fn classify_partition<S: Scalar>(
    low: &CausalModel<S>,
    high: &CausalModel<S>,
    align: &VariableAlignment<S>,
) -> Result<MechanismPartition, AbstractionError> {
    let hd = high.dag();
    let ld = low.dag();
    let mut sets = BTreeMap::new();
    for v in hd.vars() {
        sets.insert(v.name.clone(), mechanism_var_set(low, high, align, &v.name)?);
    }
    let names: Vec<&String> = sets.keys().collect();
    let mut strong = true;
    let mut extra_strong = true;
    for (i, x) in names.iter().enumerate() {
        for (j, y) in names.iter().enumerate() {
            if i == j {
                continue;
            }
            let block_y: BTreeSet<String> = align.block(y)?.iter().cloned().collect();
            if sets[*x].intersection(&block_y).next().is_some() {
                strong = false;
            }
            if i < j && sets[*x].intersection(&sets[*y]).next().is_some() {
                extra_strong = false;
            }
        }
    }
    let mut full = true;
    'outer: for x in hd.non_inputs() {
        let parents: BTreeSet<String> = hd.parents(&x).iter().cloned().collect();
        let forbidden = align.image(&parents)?;
        let targets: BTreeSet<String> = align.block(&x)?.iter().cloned().collect();
        for p in &parents {
            if hd.is_input(p) {
                continue;
            }
            for z in align.block(p)? {
                if !reaches_avoiding(ld, z, &targets, &forbidden) {
                    full = false;
                    break 'outer;
                }
            }
        }
    }
    Ok(MechanismPartition { sets, strong, extra_strong, full })
}

/// The low-level sub-model computing one high mechanism.
///
/// `body` is the mechanism variable set `M(x)`; `cut` lists the parent-block
/// variables with at least one child inside the body — they become the dangling
/// input wires of the fragment. The fragment keeps the original low mechanisms and
/// exposes `pi(x)` as its outputs, so its io channel is the candidate low-level
/// implementation of the high mechanism of `x`.
#[derive(Debug, Clone)]
pub struct MechanismFragment<S: Scalar> {
    pub target: String,
    pub body: BTreeSet<String>,
    pub cut: Vec<String>,
    pub model: CausalModel<S>,
}

/// Build the fragment for non-input high variable `x`.
///
/// Fails when `M(x)` reaches a low input: such a fragment would depend on a wire
/// that no parent block provides, so no mechanism map exists for it.
pub fn mechanism_fragment<S: Scalar>(
    low: &CausalModel<S>,
    high: &CausalModel<S>,
    align: &VariableAlignment<S>,
    x: &str,
    tol: f64,
) -> Result<MechanismFragment<S>, AbstractionError> {
    let hd = high.dag();
    let ld = low.dag();
    if hd.is_input(x) {
        return Err(AbstractionError::PreconditionFailed(format!(
            "`{x}` is an input; only non-input variables have mechanism fragments"
        )));
    }
    let body = mechanism_var_set(low, high, align, x)?;
    let leaked: Vec<&String> = body.iter().filter(|v| ld.is_input(v)).collect();
    if !leaked.is_empty() {
        return Err(AbstractionError::PreconditionFailed(format!(
            "fragment for `{x}` depends on low inputs outside its parent blocks: {}",
            leaked.iter().map(|s| s.as_str()).collect::<Vec<_>>().join(", ")
        )));
    }
    let parents: BTreeSet<String> = hd.parents(x).iter().cloned().collect();
    let deleted = align.image(&parents)?;
    let cut: Vec<String> = deleted
        .iter()
        .filter(|d| ld.children(d).iter().any(|c| body.contains(c)))
        .cloned()
        .collect();
    let mut vars = Vec::new();
    for name in body.iter().chain(cut.iter()) {
        vars.push(ld.var(name)?.clone());
    }
    let mut edges: Vec<(String, String)> = Vec::new();
    for v in &body {
        for p in ld.parents(v) {
            edges.push((p.clone(), v.clone()));
        }
    }
    let edge_refs: Vec<(&str, &str)> =
        edges.iter().map(|(a, b)| (a.as_str(), b.as_str())).collect();
    let input_refs: Vec<&str> = cut.iter().map(|s| s.as_str()).collect();
    let output_names = align.block(x)?;
    let output_refs: Vec<&str> = output_names.iter().map(|s| s.as_str()).collect();
    let dag = OpenDag::new(vars, &input_refs, &output_refs, &edge_refs)?;
    let mut mechanisms = BTreeMap::new();
    for v in &body {
        mechanisms.insert(v.clone(), low.mechanism(v)?.clone());
    }
    let model = CausalModel::new(dag, mechanisms, tol)?;
    Ok(MechanismFragment { target: x.to_string(), body, cut, model })
}

/// Whole-model route: the opened-behaviour consistency check plus the structural
/// requirement of `class` on the partition.
pub fn check_whole_model<S: Scalar>(
    low: &CausalModel<S>,
    high: &CausalModel<S>,
    align: &VariableAlignment<S>,
    class: StructureClass,
    opts: &CheckOptions,
) -> Result<Verdict, AbstractionError> {
    let partition = classify_partition(low, high, align)?;
    whole_model_route(low, high, align, class, &partition, opts)
}

fn whole_model_route<S: Scalar>(
    low: &CausalModel<S>,
    high: &CausalModel<S>,
    align: &VariableAlignment<S>,
    class: StructureClass,
    partition: &MechanismPartition,
    opts: &CheckOptions,
) -> Result<Verdict, AbstractionError> {
    let mut builder = VerdictBuilder::new(opts.witness_cap);
    if class.admits(partition) {
        builder.checked += 1;
    } else {
        builder.structural(
            &format!("structure({})", class.label()),
            &format!(
                "partition grades: strong={} extra_strong={} full={}",
                partition.strong, partition.extra_strong, partition.full
            ),
        );
    }
    let structural = builder.finish();
    let behavioural = check_constructive(low, high, align, opts)?;
    Ok(merge_verdicts(structural, behavioural, opts))
}

/// Per-mechanism route: every fragment must exist (no low-input leakage), its io
/// channel must commute with the alignment maps against the high mechanism, and
/// the fragments must satisfy the structural requirement of `class`.
pub fn check_per_mechanism<S: Scalar>(
    low: &CausalModel<S>,
    high: &CausalModel<S>,
    align: &VariableAlignment<S>,
    class: StructureClass,
    opts: &CheckOptions,
) -> Result<Verdict, AbstractionError> {
    align.validate_models(low, high, opts.tol)?;
    let partition = classify_partition(low, high, align)?;
    per_mechanism_route(low, high, align, class, &partition, opts)
}

fn per_mechanism_route<S: Scalar>(
    low: &CausalModel<S>,
    high: &CausalModel<S>,
    align: &VariableAlignment<S>,
    class: StructureClass,
    partition: &MechanismPartition,
    opts: &CheckOptions,
) -> Result<Verdict, AbstractionError> {
    let hd = high.dag();
    let ld = low.dag();
    let mut builder = VerdictBuilder::new(opts.witness_cap);
    let mut fragments: BTreeMap<String, MechanismFragment<S>> = BTreeMap::new();
    for x in hd.non_inputs() {
        let body = &partition.sets[&x];
        let leaked: Vec<&str> =
            body.iter().filter(|v| ld.is_input(v)).map(|s| s.as_str()).collect();
        if !leaked.is_empty() {
            builder.structural(
                &format!("fragment({x})"),
                &format!("depends on low inputs outside its parent blocks: {}", leaked.join(", ")),
            );
            continue;
        }
        builder.checked += 1;
        fragments.insert(x.clone(), mechanism_fragment(low, high, align, &x, opts.tol)?);
    }

    // Naturality: high mechanism after the parent maps equals the target map after
    // the fragment io (padded with the parent-block wires the fragment discards).
    for (x, frag) in &fragments {
        let pa: Vec<String> = hd.parents(x).to_vec();
        let mut ext_vars = Vec::new();
        for h in &pa {
            for l in align.block(h)? {
                ext_vars.push(ld.var(l)?.clone());
            }
        }
        let ext_dom = WireList::new(ext_vars);
        let tau_pa = align.tau_map(&ext_dom, &pa)?;
        let lhs = tau_pa.then(high.mechanism(x)?)?;
        let cut_refs: Vec<&str> = frag.cut.iter().map(|s| s.as_str()).collect();
        let proj = Channel::projection(&ext_dom, &cut_refs)?;
        let io = frag.model.io_channel()?;
        let tau_x = align.tau(x)?;
        let rhs = proj.then(&io)?.with_cod_order(tau_x.dom())?.then(tau_x)?;
        builder.compare(&format!("mechanism({x})"), &lhs, &rhs, opts.tol)?;
    }

    // Structural requirement of the class, stated on the fragments.
    match class {
        StructureClass::Cartesian => {
            for (x, frag) in &fragments {
                for v in hd.vars() {
                    if &v.name == x {
                        continue;
                    }
                    let block: BTreeSet<String> =
                        align.block(&v.name)?.iter().cloned().collect();
                    let overlap: Vec<&str> = frag
                        .body
                        .intersection(&block)
                        .map(|s| s.as_str())
                        .collect();
                    if overlap.is_empty() {
                        builder.checked += 1;
                    } else {
                        builder.structural(
                            &format!("fragments({x},{})", v.name),
                            &format!(
                                "fragment body meets the block of `{}`: {}",
                                v.name,
                                overlap.join(", ")
                            ),
                        );
                    }
                }
            }
        }
        StructureClass::Markov | StructureClass::CopyDiscard => {
            let names: Vec<&String> = fragments.keys().collect();
            for i in 0..names.len() {
                for j in (i + 1)..names.len() {
                    let overlap: Vec<&str> = fragments[names[i]]
                        .body
                        .intersection(&fragments[names[j]].body)
                        .map(|s| s.as_str())
                        .collect();
                    if overlap.is_empty() {
                        builder.checked += 1;
                    } else {
                        builder.structural(
                            &format!("fragments({},{})", names[i], names[j]),
                            &format!("fragment bodies overlap: {}", overlap.join(", ")),
                        );
                    }
                }
            }
            if class == StructureClass::CopyDiscard {
                // Every non-input parent-block wire must actually enter the fragment
                // and influence its outputs; otherwise the expansion would need a
                // discard that copy-discard structure does not supply.
                for (x, frag) in &fragments {
                    let targets: BTreeSet<String> =
                        align.block(x)?.iter().cloned().collect();
                    for p in hd.parents(x) {
                        if hd.is_input(p) {
                            continue;
                        }
                        for z in align.block(p)? {
                            if !frag.cut.contains(z) {
                                builder.structural(
                                    &format!("fragment({x})"),
                                    &format!("parent-block wire `{z}` has no edge into the fragment"),
                                );
                                continue;
                            }
                            if targets.iter().any(|t| frag.model.dag().has_path(z, t)) {
                                builder.checked += 1;
                            } else {
                                builder.structural(
                                    &format!("fragment({x})"),
                                    &format!("parent-block wire `{z}` cannot influence the fragment outputs"),
                                );
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(builder.finish())
}

/// Outcome of running both routes.
#[derive(Debug, Clone)]
pub struct MechanismLevelReport {
    pub partition: MechanismPartition,
    /// Whole-model route: opened-behaviour consistency plus the partition grade.
    pub whole_model: Verdict,
    /// Per-mechanism route: fragment naturality plus the fragment-level grade.
    pub per_mechanism: Verdict,
    /// Whether the two routes reach the same verdict.
    pub agree: bool,
}

/// Run both routes for `class` and compare their verdicts.
pub fn check_mechanism_level<S: Scalar>(
    low: &CausalModel<S>,
    high: &CausalModel<S>,
    align: &VariableAlignment<S>,
    class: StructureClass,
    opts: &CheckOptions,
) -> Result<MechanismLevelReport, AbstractionError> {
    align.validate_models(low, high, opts.tol)?;
    let partition = classify_partition(low, high, align)?;
    let whole_model = whole_model_route(low, high, align, class, &partition, opts)?;
    let per_mechanism = per_mechanism_route(low, high, align, class, &partition, opts)?;
    let agree = whole_model.holds == per_mechanism.holds;
    Ok(MechanismLevelReport { partition, whole_model, per_mechanism, agree })
}
