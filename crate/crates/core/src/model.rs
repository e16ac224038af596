//! Open DAGs and causal models with their core constructions.
//!
//! A [`CausalModel`] assigns a stochastic mechanism `c_X : Pa(X) -> X` to every
//! non-input vertex of an [`OpenDag`]. The module provides:
//!
//! - [`CausalModel::io_channel`]: the input-output semantics, computed by a topological
//!   fold that copies wires on demand and discards branches that cannot reach an output;
//! - [`CausalModel::open_model`]: cutting mechanisms so their targets become inputs;
//! - [`Intervention`] / [`CausalModel::apply_intervention`]: mechanism replacement;
//! - [`CausalModel::parallel_mechanism`]: the one-step endo-channel `F : V -> V` of a
//!   deterministic model, and [`CausalModel::from_parallel_channel`] for the converse
//!   reconstruction with least parent sets;
//! - [`CausalModel::induce_model`]: transporting a model across a deterministic
//!   isomorphism of joint state spaces and validating that the result is again a model;
//! - [`FunctionalCausalModel`]: endogenous variables driven by deterministic functions
//!   of parents plus independent noise, convertible to an ordinary model and exposing
//!   the deterministic part and joint noise state used by counterfactual evaluation.
//!
//! Variable order is canonical (lexicographic by name) everywhere; the only ordered
//! exception is the input list of an opened model, which appends newly opened variables
//! after the existing inputs.

use std::collections::{BTreeMap, BTreeSet};

use petgraph::algo::toposort;
use petgraph::graph::DiGraph;
use thiserror::Error;

use crate::scalar::Scalar;
use crate::stoch::{Channel, ChannelKind, FinVar, StochError, WireList};

/// Largest variable count accepted by the parallel-channel reconstruction.
pub const MAX_RECONSTRUCTION_VARS: usize = 20;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Stoch(#[from] StochError),
    #[error("duplicate variable name `{0}`")]
    DuplicateVariable(String),
    #[error("unknown variable `{0}`")]
    UnknownVariable(String),
    #[error("graph is cyclic (involving `{0}`)")]
    Cyclic(String),
    #[error("input `{0}` cannot have parents")]
    InputWithParents(String),
    #[error("non-input `{0}` has no mechanism")]
    MissingMechanism(String),
    #[error("mechanism for `{var}` expects domain {expected}, got {got}")]
    MechanismDomain { var: String, expected: String, got: String },
    #[error("mechanism for `{var}` expects codomain {expected}, got {got}")]
    MechanismCodomain { var: String, expected: String, got: String },
    #[error("`{0}` is an input and cannot be opened or intervened on")]
    TargetIsInput(String),
    #[error("model is not deterministic: mechanism for `{0}` has a non-sharp column")]
    NotDeterministicModel(String),
    #[error("outputs {outputs} must equal the non-inputs {non_inputs} for this operation")]
    OutputsNotNonInputs { outputs: String, non_inputs: String },
    #[error("channel is not an endo-channel: domain {dom} differs from codomain {cod}")]
    NotEndo { dom: String, cod: String },
    #[error("channel on {0} variables exceeds the reconstruction cap of {MAX_RECONSTRUCTION_VARS}")]
    TooManyVariables(usize),
    #[error("variable `{0}` depends on itself; the channel is not acyclic")]
    SelfDependent(String),
    #[error("map is not a deterministic isomorphism: {0}")]
    NotIso(String),
    #[error("isomorphism does not split over inputs: coordinate `{cod_var}` depends on `{dom_var}`")]
    NotSplit { cod_var: String, dom_var: String },
    #[error("induced inputs {derived} do not match the declared inputs {declared}")]
    InducedInputsMismatch { derived: String, declared: String },
    #[error("induced model disagrees with the transported one on io semantics (max deviation {deviation})")]
    InducedIoMismatch { deviation: f64 },
    #[error("noise for `{0}` must be a normalised state")]
    BadNoise(String),
    #[error("function for `{0}` must be deterministic")]
    FunctionNotDeterministic(String),
    #[error("functional model endogenous variables cannot have inputs")]
    FcmHasInputs,
}

/// A DAG with designated input vertices (no parents) and output vertices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OpenDag {
    vars: Vec<FinVar>,
    input_order: Vec<String>,
    inputs: BTreeSet<String>,
    outputs: BTreeSet<String>,
    parents: BTreeMap<String, Vec<String>>,
}

impl OpenDag {
    /// Build and validate an open DAG. `vars` may arrive in any order; they are stored
    /// canonically (sorted by name). Parent lists are sorted by name too.
    pub fn new(
        vars: Vec<FinVar>,
        inputs: &[&str],
        outputs: &[&str],
        edges: &[(&str, &str)],
    ) -> Result<Self, ModelError> {
        let mut sorted = vars;
        sorted.sort_by(|a, b| a.name.cmp(&b.name));
        for pair in sorted.windows(2) {
            if pair[0].name == pair[1].name {
                return Err(ModelError::DuplicateVariable(pair[0].name.clone()));
            }
        }
        let known: BTreeSet<&str> = sorted.iter().map(|v| v.name.as_str()).collect();
        for name in inputs.iter().chain(outputs.iter()) {
            if !known.contains(name) {
                return Err(ModelError::UnknownVariable((*name).to_string()));
            }
        }
        let inputs_set: BTreeSet<String> = inputs.iter().map(|s| s.to_string()).collect();
        let outputs_set: BTreeSet<String> = outputs.iter().map(|s| s.to_string()).collect();
        let mut parents: BTreeMap<String, Vec<String>> = sorted
            .iter()
            .filter(|v| !inputs_set.contains(&v.name))
            .map(|v| (v.name.clone(), Vec::new()))
            .collect();
        for (src, dst) in edges {
            if !known.contains(src) {
                return Err(ModelError::UnknownVariable((*src).to_string()));
            }
            if !known.contains(dst) {
                return Err(ModelError::UnknownVariable((*dst).to_string()));
            }
            if inputs_set.contains(*dst) {
                return Err(ModelError::InputWithParents((*dst).to_string()));
            }
            let list = parents.get_mut(*dst).expect("non-input has a parent list");
            if !list.iter().any(|p| p == src) {
                list.push((*src).to_string());
            }
        }
        for list in parents.values_mut() {
            list.sort();
        }
        // Canonical input order: sorted names. (Opened models extend this list.)
        let input_order: Vec<String> = inputs_set.iter().cloned().collect();
        let dag = OpenDag {
            vars: sorted,
            input_order,
            inputs: inputs_set,
            outputs: outputs_set,
            parents,
        };
        dag.check_acyclic()?;
        Ok(dag)
    }

    fn check_acyclic(&self) -> Result<(), ModelError> {
        let mut graph = DiGraph::<&str, ()>::new();
        let mut idx = BTreeMap::new();
        for v in &self.vars {
            idx.insert(v.name.as_str(), graph.add_node(v.name.as_str()));
        }
        for (child, ps) in &self.parents {
            for p in ps {
                graph.add_edge(idx[p.as_str()], idx[child.as_str()], ());
            }
        }
        toposort(&graph, None)
            .map(|_| ())
            .map_err(|c| ModelError::Cyclic(graph[c.node_id()].to_string()))
    }

    pub fn vars(&self) -> &[FinVar] {
        &self.vars
    }

    pub fn var(&self, name: &str) -> Result<&FinVar, ModelError> {
        self.vars
            .iter()
            .find(|v| v.name == name)
            .ok_or_else(|| ModelError::UnknownVariable(name.to_string()))
    }

    pub fn inputs(&self) -> &BTreeSet<String> {
        &self.inputs
    }

    pub fn outputs(&self) -> &BTreeSet<String> {
        &self.outputs
    }

    /// Non-input variable names in canonical order.
    pub fn non_inputs(&self) -> Vec<String> {
        self.vars
            .iter()
            .filter(|v| !self.inputs.contains(&v.name))
            .map(|v| v.name.clone())
            .collect()
    }

    pub fn is_input(&self, name: &str) -> bool {
        self.inputs.contains(name)
    }

    pub fn parents(&self, name: &str) -> &[String] {
        self.parents.get(name).map(|v| v.as_slice()).unwrap_or(&[])
    }

    pub fn children(&self, name: &str) -> Vec<String> {
        self.parents
            .iter()
            .filter(|(_, ps)| ps.iter().any(|p| p == name))
            .map(|(c, _)| c.clone())
            .collect()
    }

    /// The ordered input list defining the io domain. For base models this is the
    /// canonical order; opened models append the opened variables at the end.
    pub fn input_order(&self) -> &[String] {
        &self.input_order
    }

    pub fn wire(&self, name: &str) -> Result<FinVar, ModelError> {
        self.var(name).cloned()
    }

    pub fn wires(&self, names: &[String]) -> Result<WireList, ModelError> {
        names.iter().map(|n| self.wire(n)).collect()
    }

    pub fn input_wires(&self) -> WireList {
        self.wires(&self.input_order).expect("inputs are known variables")
    }

    /// Output wires in canonical (sorted) order.
    pub fn output_wires(&self) -> WireList {
        let names: Vec<String> = self.outputs.iter().cloned().collect();
        self.wires(&names).expect("outputs are known variables")
    }

    /// All variables as wires, canonical order.
    pub fn all_wires(&self) -> WireList {
        WireList::new(self.vars.clone())
    }

    /// Deterministic topological order (Kahn with lexicographic tie-breaking).
    pub fn topo_order(&self) -> Vec<String> {
        let mut remaining_parents: BTreeMap<&str, BTreeSet<&str>> = self
            .vars
            .iter()
            .map(|v| {
                (
                    v.name.as_str(),
                    self.parents(&v.name).iter().map(|p| p.as_str()).collect(),
                )
            })
            .collect();
        let mut ready: BTreeSet<&str> = remaining_parents
            .iter()
            .filter(|(_, ps)| ps.is_empty())
            .map(|(n, _)| *n)
            .collect();
        let mut order = Vec::with_capacity(self.vars.len());
        while let Some(&next) = ready.iter().next() {
            ready.remove(next);
            order.push(next.to_string());
            for (name, ps) in remaining_parents.iter_mut() {
                if ps.remove(next) && ps.is_empty() {
                    ready.insert(*name);
                }
            }
        }
        debug_assert_eq!(order.len(), self.vars.len());
        order
    }

    /// All variables with a directed path into `targets` (targets included).
    pub fn backward_closure(&self, targets: &BTreeSet<String>) -> BTreeSet<String> {
        let mut seen: BTreeSet<String> = targets.clone();
        let mut stack: Vec<String> = targets.iter().cloned().collect();
        while let Some(v) = stack.pop() {
            for p in self.parents(&v) {
                if seen.insert(p.clone()) {
                    stack.push(p.clone());
                }
            }
        }
        seen
    }

    /// All variables reachable from `sources` (sources included).
    pub fn forward_closure(&self, sources: &BTreeSet<String>) -> BTreeSet<String> {
        let mut seen: BTreeSet<String> = sources.clone();
        let mut stack: Vec<String> = sources.iter().cloned().collect();
        while let Some(v) = stack.pop() {
            for c in self.children(&v) {
                if seen.insert(c.clone()) {
                    stack.push(c);
                }
            }
        }
        seen
    }

    /// Whether a directed path `from -> ... -> to` exists (including `from == to`).
    pub fn has_path(&self, from: &str, to: &str) -> bool {
        let mut targets = BTreeSet::new();
        targets.insert(to.to_string());
        self.backward_closure(&targets).contains(from)
    }
}

/// A replacement mechanism: new parents and the channel `parents -> target`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mechanism<S: Scalar> {
    pub parents: Vec<String>,
    pub channel: Channel<S>,
}

/// A mechanism-replacement intervention on a subset of non-input variables.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Intervention<S: Scalar> {
    pub replacements: BTreeMap<String, Mechanism<S>>,
}

impl<S: Scalar> Intervention<S> {
    /// The trivial intervention (replaces nothing).
    pub fn trivial() -> Self {
        Intervention { replacements: BTreeMap::new() }
    }

    pub fn is_trivial(&self) -> bool {
        self.replacements.is_empty()
    }

    /// The intervention fixing each listed variable to a sharp value.
    pub fn do_values(dag: &OpenDag, values: &BTreeMap<String, usize>) -> Result<Self, ModelError> {
        let mut replacements = BTreeMap::new();
        for (name, &value) in values {
            let wire = dag.wire(name)?;
            let channel = Channel::sharp_state(&WireList::single(wire), &[value])?;
            replacements.insert(name.clone(), Mechanism { parents: Vec::new(), channel });
        }
        Ok(Intervention { replacements })
    }

    /// The intervention fixing each listed variable to a (parentless) state.
    pub fn do_states(dag: &OpenDag, states: &BTreeMap<String, Channel<S>>) -> Result<Self, ModelError> {
        let mut replacements = BTreeMap::new();
        for (name, state) in states {
            let wire = dag.wire(name)?;
            let expected = WireList::single(wire);
            if state.cod() != &expected || !state.dom().is_empty() {
                return Err(ModelError::MechanismCodomain {
                    var: name.clone(),
                    expected: expected.describe(),
                    got: state.cod().describe(),
                });
            }
            replacements.insert(
                name.clone(),
                Mechanism { parents: Vec::new(), channel: state.clone() },
            );
        }
        Ok(Intervention { replacements })
    }

    /// Targets of the intervention.
    pub fn targets(&self) -> BTreeSet<String> {
        self.replacements.keys().cloned().collect()
    }

    /// Sequential composition `self` after `other` does not arise; the monoid product
    /// used by the intervention algebra keeps `self`'s mechanisms on overlapping
    /// targets and takes `other`'s elsewhere.
    pub fn combine(&self, other: &Intervention<S>) -> Intervention<S> {
        let mut replacements = self.replacements.clone();
        for (name, mech) in &other.replacements {
            replacements.entry(name.clone()).or_insert_with(|| mech.clone());
        }
        Intervention { replacements }
    }

    /// Normal form used for equality and lookup of concrete Do interventions: the
    /// sorted `(target, value)` list, or `None` if some replacement is not sharp.
    pub fn sharp_signature(&self) -> Option<Vec<(String, usize)>> {
        let mut out = Vec::with_capacity(self.replacements.len());
        for (name, mech) in &self.replacements {
            if !mech.parents.is_empty() || !mech.channel.dom().is_empty() {
                return None;
            }
            let value = mech.channel.deterministic_value(0, 0.0)?;
            out.push((name.clone(), value));
        }
        Some(out)
    }
}

/// A causal model: an open DAG plus one stochastic mechanism per non-input.
#[derive(Debug, Clone, PartialEq)]
pub struct CausalModel<S: Scalar> {
    dag: OpenDag,
    mechanisms: BTreeMap<String, Channel<S>>,
}

impl<S: Scalar> CausalModel<S> {
    /// Validate mechanism shapes against the DAG. Mechanism domains must list the
    /// parents in canonical order with matching cardinalities; every mechanism must be
    /// stochastic (validated with `tol` for inexact scalars).
    pub fn new(
        dag: OpenDag,
        mechanisms: BTreeMap<String, Channel<S>>,
        tol: f64,
    ) -> Result<Self, ModelError> {
        for v in dag.vars() {
            if dag.is_input(&v.name) {
                continue;
            }
            let mech = mechanisms
                .get(&v.name)
                .ok_or_else(|| ModelError::MissingMechanism(v.name.clone()))?;
            let expected_dom = dag.wires(dag.parents(&v.name))?;
            if mech.dom() != &expected_dom {
                return Err(ModelError::MechanismDomain {
                    var: v.name.clone(),
                    expected: expected_dom.describe(),
                    got: mech.dom().describe(),
                });
            }
            let expected_cod = WireList::single(v.clone());
            if mech.cod() != &expected_cod {
                return Err(ModelError::MechanismCodomain {
                    var: v.name.clone(),
                    expected: expected_cod.describe(),
                    got: mech.cod().describe(),
                });
            }
            mech.assert_kind(ChannelKind::Stochastic, tol)?;
        }
        for name in mechanisms.keys() {
            if dag.is_input(name) {
                return Err(ModelError::TargetIsInput(name.clone()));
            }
            dag.var(name)?;
        }
        Ok(CausalModel { dag, mechanisms })
    }

    pub fn dag(&self) -> &OpenDag {
        &self.dag
    }

    pub fn mechanism_names(&self) -> Vec<&str> {
        self.mechanisms.keys().map(|s| s.as_str()).collect()
    }

    pub fn mechanism(&self, name: &str) -> Result<&Channel<S>, ModelError> {
        self.mechanisms
            .get(name)
            .ok_or_else(|| ModelError::MissingMechanism(name.to_string()))
    }

    pub fn mechanisms(&self) -> &BTreeMap<String, Channel<S>> {
        &self.mechanisms
    }

    /// Whether every mechanism is deterministic.
    pub fn is_deterministic(&self, tol: f64) -> bool {
        self.mechanisms.values().all(|m| m.is_deterministic(tol))
    }

    /// The input-output semantics `V_in -> V_out`.
    ///
    /// Computed by a topological fold over a frontier of live wires: variables without
    /// a directed path to any output are discarded eagerly (inputs among them stay in
    /// the domain and are summed out), parents are copied exactly as often as needed,
    /// and the codomain is reordered to the canonical output order at the end.
    pub fn io_channel(&self) -> Result<Channel<S>, ModelError> {
        let dag = &self.dag;
        let live = dag.backward_closure(dag.outputs());
        // Remaining uses per live variable: one per live child plus one output slot.
        let mut uses: BTreeMap<String, usize> = BTreeMap::new();
        for v in &live {
            let child_uses = dag
                .children(v)
                .into_iter()
                .filter(|c| live.contains(c))
                .count();
            let out_use = usize::from(dag.outputs().contains(v));
            uses.insert(v.clone(), child_uses + out_use);
        }

        let mut frontier: Vec<String> = dag.input_order().to_vec();
        let mut chan = Channel::<S>::identity(dag.wires(&frontier)?);

        // Discard inputs that cannot reach an output (they stay in the domain).
        if frontier.iter().any(|v| !live.contains(v)) {
            let kept: Vec<String> = frontier.iter().filter(|v| live.contains(*v)).cloned().collect();
            let kept_refs: Vec<&str> = kept.iter().map(|s| s.as_str()).collect();
            let proj = Channel::projection(chan.cod(), &kept_refs)?;
            chan = chan.then(&proj)?;
            frontier = kept;
        }

        for x in dag.topo_order() {
            if dag.is_input(&x) || !live.contains(&x) {
                continue;
            }
            let mech = self.mechanism(&x)?;
            let parent_names: Vec<String> = dag.parents(&x).to_vec();
            for p in &parent_names {
                *uses.get_mut(p).expect("parent of a live var is live") -= 1;
            }
            let kept: Vec<String> = frontier
                .iter()
                .filter(|v| uses.get(*v).copied().unwrap_or(0) > 0)
                .cloned()
                .collect();
            // Gather: frontier -> kept ++ parents (copying wires needed by both).
            let frontier_wl = dag.wires(&frontier)?;
            let kept_wl = dag.wires(&kept)?;
            let parent_wl = dag.wires(&parent_names)?;
            let positions: Vec<usize> = kept
                .iter()
                .chain(parent_names.iter())
                .map(|n| frontier.iter().position(|f| f == n).expect("wire on frontier"))
                .collect();
            let gather = Channel::<S>::deterministic(
                frontier_wl,
                kept_wl.concat(&parent_wl),
                move |a| positions.iter().map(|&p| a[p]).collect(),
            );
            let step = gather.then(&Channel::identity(kept_wl).tensor(mech))?;
            chan = chan.then(&step)?;
            frontier = kept;
            frontier.push(x.clone());
        }

        chan.with_cod_order(&dag.output_wires()).map_err(Into::into)
    }

    /// The io semantics marginalised onto the listed outputs, canonical order.
    pub fn io_marginal(&self, outputs: &BTreeSet<String>) -> Result<Channel<S>, ModelError> {
        for o in outputs {
            if !self.dag.outputs().contains(o) {
                return Err(ModelError::UnknownVariable(o.clone()));
            }
        }
        let names: Vec<&str> = outputs.iter().map(|s| s.as_str()).collect();
        self.io_channel()?.marginalize_to(&names).map_err(Into::into)
    }

    /// Delete the mechanisms of `targets`, turning them into inputs appended (in
    /// canonical order) after the existing input list.
    pub fn open_model(&self, targets: &BTreeSet<String>) -> Result<CausalModel<S>, ModelError> {
        let mut mechanisms = self.mechanisms.clone();
        for t in targets {
            self.dag.var(t)?;
            if self.dag.is_input(t) {
                return Err(ModelError::TargetIsInput(t.clone()));
            }
            mechanisms.remove(t);
        }
        let mut parents = self.dag.parents.clone();
        for t in targets {
            parents.remove(t);
        }
        let mut inputs = self.dag.inputs.clone();
        inputs.extend(targets.iter().cloned());
        let mut input_order = self.dag.input_order.clone();
        input_order.extend(targets.iter().cloned());
        let dag = OpenDag {
            vars: self.dag.vars.clone(),
            input_order,
            inputs,
            outputs: self.dag.outputs.clone(),
            parents,
        };
        Ok(CausalModel { dag, mechanisms })
    }

    /// Replace mechanisms according to the intervention, revalidating the graph.
    pub fn apply_intervention(&self, iv: &Intervention<S>) -> Result<CausalModel<S>, ModelError> {
        let mut mechanisms = self.mechanisms.clone();
        let mut parents = self.dag.parents.clone();
        for (name, mech) in &iv.replacements {
            self.dag.var(name)?;
            if self.dag.is_input(name) {
                return Err(ModelError::TargetIsInput(name.clone()));
            }
            let mut ps = mech.parents.clone();
            ps.sort();
            ps.dedup();
            let expected_dom = self.dag.wires(&ps)?;
            if mech.channel.dom() != &expected_dom {
                return Err(ModelError::MechanismDomain {
                    var: name.clone(),
                    expected: expected_dom.describe(),
                    got: mech.channel.dom().describe(),
                });
            }
            let expected_cod = WireList::single(self.dag.wire(name)?);
            if mech.channel.cod() != &expected_cod {
                return Err(ModelError::MechanismCodomain {
                    var: name.clone(),
                    expected: expected_cod.describe(),
                    got: mech.channel.cod().describe(),
                });
            }
            parents.insert(name.clone(), ps);
            mechanisms.insert(name.clone(), mech.channel.clone());
        }
        let dag = OpenDag {
            vars: self.dag.vars.clone(),
            input_order: self.dag.input_order.clone(),
            inputs: self.dag.inputs.clone(),
            outputs: self.dag.outputs.clone(),
            parents,
        };
        dag.check_acyclic()?;
        Ok(CausalModel { dag, mechanisms })
    }

    fn require_outputs_are_non_inputs(&self) -> Result<(), ModelError> {
        let non_inputs: BTreeSet<String> = self.dag.non_inputs().into_iter().collect();
        if &non_inputs != self.dag.outputs() {
            return Err(ModelError::OutputsNotNonInputs {
                outputs: format!("{:?}", self.dag.outputs()),
                non_inputs: format!("{non_inputs:?}"),
            });
        }
        Ok(())
    }

    /// The parallel mechanism channel `F : V -> V` of a deterministic model whose
    /// outputs are exactly its non-inputs: each non-input coordinate applies its
    /// mechanism to the (copied) parent coordinates, each input coordinate is passed
    /// through unchanged.
    pub fn parallel_mechanism(&self) -> Result<Channel<S>, ModelError> {
        self.require_outputs_are_non_inputs()?;
        for (name, mech) in &self.mechanisms {
            if !mech.is_deterministic(0.0) {
                return Err(ModelError::NotDeterministicModel(name.clone()));
            }
        }
        let wires = self.dag.all_wires();
        let positions: BTreeMap<&str, usize> = wires
            .vars()
            .iter()
            .enumerate()
            .map(|(i, v)| (v.name.as_str(), i))
            .collect();
        type MechSpec<S> = (Option<(Channel<S>, Vec<usize>)>, usize);
        let spec: Vec<MechSpec<S>> = wires
            .vars()
            .iter()
            .map(|v| {
                let self_pos = positions[v.name.as_str()];
                if self.dag.is_input(&v.name) {
                    (None, self_pos)
                } else {
                    let mech = self.mechanisms[&v.name].clone();
                    let parent_pos = self
                        .dag
                        .parents(&v.name)
                        .iter()
                        .map(|p| positions[p.as_str()])
                        .collect();
                    (Some((mech, parent_pos)), self_pos)
                }
            })
            .collect();
        Ok(Channel::deterministic(wires.clone(), wires, move |a| {
            spec.iter()
                .map(|(mech, self_pos)| match mech {
                    None => a[*self_pos],
                    Some((ch, parent_pos)) => {
                        let pa: Vec<usize> = parent_pos.iter().map(|&p| a[p]).collect();
                        let col = ch.dom().flat_index(&pa);
                        ch.deterministic_value(col, 0.0).expect("validated deterministic")
                    }
                })
                .collect()
        }))
    }

    /// Reconstruct a model from a deterministic endo-channel `F : V -> V`.
    ///
    /// A coordinate is an input exactly when its marginal is the projection onto
    /// itself; otherwise its parent set is the least set of coordinates the marginal
    /// depends on (unique for deterministic channels) and the mechanism is the induced
    /// map. The resulting model has outputs = non-inputs. Fails when some non-input
    /// coordinate depends on itself or the parent graph is cyclic.
    pub fn from_parallel_channel(f: &Channel<S>) -> Result<CausalModel<S>, ModelError> {
        if f.dom() != f.cod() {
            return Err(ModelError::NotEndo {
                dom: f.dom().describe(),
                cod: f.cod().describe(),
            });
        }
        let wires = f.dom().clone();
        let n = wires.len();
        if n > MAX_RECONSTRUCTION_VARS {
            return Err(ModelError::TooManyVariables(n));
        }
        let total = wires.total_card();
        // Tabulate the deterministic global map.
        let mut table: Vec<Vec<usize>> = Vec::with_capacity(total);
        for x in 0..total {
            match f.deterministic_value(x, 0.0) {
                Some(y) => table.push(wires.assignment(y)),
                None => {
                    return Err(ModelError::NotDeterministicModel(
                        wires.describe_assignment(&wires.assignment(x)),
                    ))
                }
            }
        }
        let strides = wires.strides();
        // depends[i][j]: coordinate i of the output varies with input coordinate j.
        let mut depends = vec![vec![false; n]; n];
        for x in 0..total {
            let a = wires.assignment(x);
            for j in 0..n {
                let card = wires.vars()[j].card;
                // Compare against the neighbour with coordinate j incremented.
                if a[j] + 1 < card {
                    let x2 = x + strides[j];
                    for i in 0..n {
                        if table[x][i] != table[x2][i] {
                            depends[i][j] = true;
                        }
                    }
                }
            }
        }
        let mut inputs: Vec<&str> = Vec::new();
        let mut edges: Vec<(&str, &str)> = Vec::new();
        let mut mech_parents: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for i in 0..n {
            let name = wires.vars()[i].name.as_str();
            let dep: Vec<usize> = (0..n).filter(|&j| depends[i][j]).collect();
            let is_projection =
                dep == [i] && (0..total).all(|x| table[x][i] == wires.assignment(x)[i]);
            let is_constant_projection = dep.is_empty()
                && wires.vars()[i].card == 1;
            if is_projection || is_constant_projection {
                inputs.push(name);
                continue;
            }
            if dep.contains(&i) {
                return Err(ModelError::SelfDependent(name.to_string()));
            }
            for &j in &dep {
                edges.push((wires.vars()[j].name.as_str(), name));
            }
            mech_parents.insert(name.to_string(), dep);
        }
        let non_inputs: Vec<&str> = wires
            .vars()
            .iter()
            .map(|v| v.name.as_str())
            .filter(|nm| !inputs.contains(nm))
            .collect();
        let dag = OpenDag::new(wires.vars().to_vec(), &inputs, &non_inputs, &edges)?;
        let mut mechanisms = BTreeMap::new();
        for (name, dep) in &mech_parents {
            let self_pos = wires.position(name).expect("unique name");
            // Parent order in the mechanism is canonical; petgraph order of `dep` is
            // positional, so resolve through sorted parent names.
            let parent_names: Vec<String> = dag.parents(name).to_vec();
            let parent_positions: Vec<usize> = parent_names
                .iter()
                .map(|p| wires.position(p).expect("unique name"))
                .collect();
            let dom = dag.wires(&parent_names)?;
            let cod = WireList::single(dag.wire(name)?);
            debug_assert_eq!(dep.len(), parent_positions.len());
            let table_ref = &table;
            let mech = Channel::deterministic(dom, cod, |pa| {
                // Evaluate on a representative assignment extending `pa` with zeros.
                let mut full = vec![0usize; n];
                for (slot, &pos) in parent_positions.iter().enumerate() {
                    full[pos] = pa[slot];
                }
                let x = wires.flat_index(&full);
                vec![table_ref[x][self_pos]]
            });
            mechanisms.insert(name.clone(), mech);
        }
        CausalModel::new(dag, mechanisms, 0.0)
    }

    /// Transport the model across a deterministic isomorphism `phi : V -> W` of joint
    /// state spaces, checking that the conjugated parallel channel is again an acyclic
    /// model with the declared inputs, that `phi` splits as an input part tensored with
    /// a non-input part, and that io semantics transport as expected.
    pub fn induce_model(
        &self,
        phi: &Channel<S>,
        w_inputs: &BTreeSet<String>,
    ) -> Result<InducedModel<S>, ModelError> {
        let f1 = self.parallel_mechanism()?;
        let v_wires = self.dag.all_wires();
        if phi.dom() != &v_wires {
            return Err(ModelError::NotIso(format!(
                "domain {} does not match the model variables {}",
                phi.dom().describe(),
                v_wires.describe()
            )));
        }
        let phi_inv = invert_deterministic(phi)?;
        let f2 = phi_inv.then(&f1)?.then(phi)?;
        let m2 = CausalModel::from_parallel_channel(&f2)?;
        if m2.dag().inputs() != w_inputs {
            return Err(ModelError::InducedInputsMismatch {
                derived: format!("{:?}", m2.dag().inputs()),
                declared: format!("{w_inputs:?}"),
            });
        }
        // Split check: input coordinates of phi may depend only on input coordinates,
        // non-input coordinates only on non-input coordinates.
        let w_wires = phi.cod().clone();
        let (phi_in, phi_nin) = split_iso(phi, &self.dag, &w_wires, w_inputs)?;
        // Transported io semantics must agree with the induced model's own.
        let lhs = self.io_channel()?.then(&phi_nin)?;
        let rhs = phi_in.then(&m2.io_channel()?)?;
        let rhs = rhs.with_cod_order(lhs.cod())?;
        let dev = lhs.max_deviation(&rhs)?;
        if !dev.within(0.0) && S::EXACT {
            return Err(ModelError::InducedIoMismatch { deviation: dev.max });
        }
        if !S::EXACT && !dev.within(crate::DEFAULT_TOLERANCE) {
            return Err(ModelError::InducedIoMismatch { deviation: dev.max });
        }
        Ok(InducedModel { model: m2, phi_in, phi_nin, phi_inv })
    }
}

/// The result of transporting a model across an isomorphism.
#[derive(Debug, Clone)]
pub struct InducedModel<S: Scalar> {
    /// The induced model on the new variables.
    pub model: CausalModel<S>,
    /// Input part of the isomorphism, `V_in -> W_in` (canonical orders).
    pub phi_in: Channel<S>,
    /// Non-input part, `V_nin -> W_nin` (canonical orders).
    pub phi_nin: Channel<S>,
    /// Inverse of the full isomorphism, `W -> V`.
    pub phi_inv: Channel<S>,
}

/// Invert a deterministic bijection; errors when not deterministic or not bijective.
pub fn invert_deterministic<S: Scalar>(phi: &Channel<S>) -> Result<Channel<S>, ModelError> {
    let n_dom = phi.dom().total_card();
    let n_cod = phi.cod().total_card();
    if n_dom != n_cod {
        return Err(ModelError::NotIso(format!(
            "state spaces{} and {} have different sizes",
            phi.dom().describe(),
            phi.cod().describe()
        )));
    }
    let mut preimage: Vec<Option<usize>> = vec![None; n_cod];
    for x in 0..n_dom {
        let y = phi
            .deterministic_value(x, 0.0)
            .ok_or_else(|| ModelError::NotIso("map is not deterministic".into()))?;
        if preimage[y].replace(x).is_some() {
            return Err(ModelError::NotIso(format!(
                "two assignments map to index {y}"
            )));
        }
    }
    let dom = phi.cod().clone();
    let cod = phi.dom().clone();
    Ok(Channel::deterministic(dom, cod.clone(), move |a| {
        let y = phi.cod().flat_index(a);
        cod.assignment(preimage[y].expect("bijection covers all indices"))
    }))
}

/// Split a deterministic isomorphism `phi : V -> W` into independent input and
/// non-input parts, failing when a coordinate crosses the boundary.
fn split_iso<S: Scalar>(
    phi: &Channel<S>,
    v_dag: &OpenDag,
    w_wires: &WireList,
    w_inputs: &BTreeSet<String>,
) -> Result<(Channel<S>, Channel<S>), ModelError> {
    let v_wires = phi.dom().clone();
    let n = v_wires.len();
    let total = v_wires.total_card();
    let mut table: Vec<Vec<usize>> = Vec::with_capacity(total);
    for x in 0..total {
        let y = phi
            .deterministic_value(x, 0.0)
            .ok_or_else(|| ModelError::NotIso("map is not deterministic".into()))?;
        table.push(w_wires.assignment(y));
    }
    let strides = v_wires.strides();
    for x in 0..total {
        let a = v_wires.assignment(x);
        for j in 0..n {
            if a[j] + 1 < v_wires.vars()[j].card {
                let x2 = x + strides[j];
                for (i, wv) in w_wires.vars().iter().enumerate() {
                    if table[x][i] != table[x2][i] {
                        let dom_is_input = v_dag.is_input(&v_wires.vars()[j].name);
                        let cod_is_input = w_inputs.contains(&wv.name);
                        if dom_is_input != cod_is_input {
                            return Err(ModelError::NotSplit {
                                cod_var: wv.name.clone(),
                                dom_var: v_wires.vars()[j].name.clone(),
                            });
                        }
                    }
                }
            }
        }
    }
    // Extract the two factors by restricting to each block with the other zeroed.
    let v_in_positions: Vec<usize> = (0..n)
        .filter(|&j| v_dag.is_input(&v_wires.vars()[j].name))
        .collect();
    let v_nin_positions: Vec<usize> = (0..n)
        .filter(|&j| !v_dag.is_input(&v_wires.vars()[j].name))
        .collect();
    let w_in_positions: Vec<usize> = (0..w_wires.len())
        .filter(|&i| w_inputs.contains(&w_wires.vars()[i].name))
        .collect();
    let w_nin_positions: Vec<usize> = (0..w_wires.len())
        .filter(|&i| !w_inputs.contains(&w_wires.vars()[i].name))
        .collect();
    let extract = |v_pos: &[usize], w_pos: &[usize]| -> Channel<S> {
        let dom: WireList = v_pos.iter().map(|&j| v_wires.vars()[j].clone()).collect();
        let cod: WireList = w_pos.iter().map(|&i| w_wires.vars()[i].clone()).collect();
        Channel::deterministic(dom, cod, |a| {
            let mut full = vec![0usize; n];
            for (slot, &j) in v_pos.iter().enumerate() {
                full[j] = a[slot];
            }
            let x = v_wires.flat_index(&full);
            w_pos.iter().map(|&i| table[x][i]).collect()
        })
    };
    Ok((
        extract(&v_in_positions, &w_in_positions),
        extract(&v_nin_positions, &w_nin_positions),
    ))
}

/// A functional model: endogenous variables computed deterministically from parents
/// and one independent noise source each.
#[derive(Debug, Clone, PartialEq)]
pub struct FunctionalCausalModel<S: Scalar> {
    endo: Vec<FinVar>,
    exo: BTreeMap<String, FinVar>,
    noise: BTreeMap<String, Channel<S>>,
    functions: BTreeMap<String, Channel<S>>,
    parents: BTreeMap<String, Vec<String>>,
}

impl<S: Scalar> FunctionalCausalModel<S> {
    /// Build and validate. For each endogenous `X`: `exo[X]` is its noise variable,
    /// `noise[X]` a normalised state of it, and `functions[X]` a deterministic channel
    /// `Pa(X) ++ [U_X] -> X` with `Pa(X)` sorted canonically.
    pub fn new(
        endo: Vec<FinVar>,
        exo: BTreeMap<String, FinVar>,
        noise: BTreeMap<String, Channel<S>>,
        functions: BTreeMap<String, Channel<S>>,
        parents: BTreeMap<String, Vec<String>>,
        tol: f64,
    ) -> Result<Self, ModelError> {
        let mut endo_sorted = endo;
        endo_sorted.sort_by(|a, b| a.name.cmp(&b.name));
        let mut names: BTreeSet<String> = BTreeSet::new();
        for v in &endo_sorted {
            if !names.insert(v.name.clone()) {
                return Err(ModelError::DuplicateVariable(v.name.clone()));
            }
        }
        for u in exo.values() {
            if !names.insert(u.name.clone()) {
                return Err(ModelError::DuplicateVariable(u.name.clone()));
            }
        }
        let endo_names: BTreeSet<&str> = endo_sorted.iter().map(|v| v.name.as_str()).collect();
        for v in &endo_sorted {
            let name = &v.name;
            let u = exo
                .get(name)
                .ok_or_else(|| ModelError::MissingMechanism(name.clone()))?;
            let lambda = noise
                .get(name)
                .ok_or_else(|| ModelError::BadNoise(name.clone()))?;
            if lambda.cod() != &WireList::single(u.clone()) || !lambda.dom().is_empty() {
                return Err(ModelError::BadNoise(name.clone()));
            }
            lambda
                .assert_kind(ChannelKind::Stochastic, tol)
                .map_err(|_| ModelError::BadNoise(name.clone()))?;
            let f = functions
                .get(name)
                .ok_or_else(|| ModelError::MissingMechanism(name.clone()))?;
            if !f.is_deterministic(tol) {
                return Err(ModelError::FunctionNotDeterministic(name.clone()));
            }
            let mut ps = parents.get(name).cloned().unwrap_or_default();
            ps.sort();
            for p in &ps {
                if !endo_names.contains(p.as_str()) {
                    return Err(ModelError::UnknownVariable(p.clone()));
                }
            }
            let mut dom_vars: Vec<FinVar> = ps
                .iter()
                .map(|p| {
                    endo_sorted
                        .iter()
                        .find(|e| &e.name == p)
                        .cloned()
                        .expect("validated endo parent")
                })
                .collect();
            dom_vars.push(u.clone());
            let expected_dom = WireList::new(dom_vars);
            if f.dom() != &expected_dom {
                return Err(ModelError::MechanismDomain {
                    var: name.clone(),
                    expected: expected_dom.describe(),
                    got: f.dom().describe(),
                });
            }
            if f.cod() != &WireList::single(v.clone()) {
                return Err(ModelError::MechanismCodomain {
                    var: name.clone(),
                    expected: WireList::single(v.clone()).describe(),
                    got: f.cod().describe(),
                });
            }
        }
        let fcm = FunctionalCausalModel {
            endo: endo_sorted,
            exo,
            noise,
            functions,
            parents: {
                let mut sorted = parents;
                for v in sorted.values_mut() {
                    v.sort();
                }
                sorted
            },
        };
        // Acyclicity of the endogenous graph comes out of building the closed model.
        fcm.to_causal_model(tol)?;
        Ok(fcm)
    }

    pub fn endo_vars(&self) -> &[FinVar] {
        &self.endo
    }

    pub fn endo_names(&self) -> Vec<String> {
        self.endo.iter().map(|v| v.name.clone()).collect()
    }

    pub fn exo_var(&self, endo: &str) -> Option<&FinVar> {
        self.exo.get(endo)
    }

    pub fn parents_of(&self, endo: &str) -> &[String] {
        self.parents.get(endo).map(|v| v.as_slice()).unwrap_or(&[])
    }

    pub fn function(&self, endo: &str) -> &Channel<S> {
        &self.functions[endo]
    }

    pub fn noise_state(&self, endo: &str) -> &Channel<S> {
        &self.noise[endo]
    }

    /// The ordinary causal model on the endogenous variables: each mechanism is the
    /// function with its noise summed in, `c_X = f_X . (id (x) lambda_X)`.
    pub fn to_causal_model(&self, tol: f64) -> Result<CausalModel<S>, ModelError> {
        let endo_names: Vec<&str> = self.endo.iter().map(|v| v.name.as_str()).collect();
        let mut edges = Vec::new();
        for v in &self.endo {
            for p in self.parents_of(&v.name) {
                edges.push((p.clone(), v.name.clone()));
            }
        }
        let edge_refs: Vec<(&str, &str)> =
            edges.iter().map(|(a, b)| (a.as_str(), b.as_str())).collect();
        let dag = OpenDag::new(self.endo.clone(), &[], &endo_names, &edge_refs)?;
        let mut mechanisms = BTreeMap::new();
        for v in &self.endo {
            let f = &self.functions[&v.name];
            let lambda = &self.noise[&v.name];
            let pa_wires: WireList = f.dom().vars()[..f.dom().len() - 1].iter().cloned().collect();
            let with_noise = Channel::identity(pa_wires).tensor(lambda);
            mechanisms.insert(v.name.clone(), with_noise.then(f)?);
        }
        CausalModel::new(dag, mechanisms, tol)
    }

    /// The deterministic part: an open model over endo + exo variables with the exo
    /// variables as inputs and the endogenous ones as outputs.
    pub fn deterministic_part(&self) -> Result<CausalModel<S>, ModelError> {
        let mut vars = self.endo.clone();
        vars.extend(self.exo.values().cloned());
        let exo_names: Vec<&str> = self.exo.values().map(|v| v.name.as_str()).collect();
        let endo_names: Vec<&str> = self.endo.iter().map(|v| v.name.as_str()).collect();
        let mut edges: Vec<(String, String)> = Vec::new();
        for v in &self.endo {
            for p in self.parents_of(&v.name) {
                edges.push((p.clone(), v.name.clone()));
            }
            edges.push((self.exo[&v.name].name.clone(), v.name.clone()));
        }
        let edge_refs: Vec<(&str, &str)> =
            edges.iter().map(|(a, b)| (a.as_str(), b.as_str())).collect();
        let dag = OpenDag::new(vars, &exo_names, &endo_names, &edge_refs)?;
        let mut mechanisms = BTreeMap::new();
        for v in &self.endo {
            // The stored function lists parents then noise; the model wants the
            // canonical sorted order over parents + noise names.
            let f = &self.functions[&v.name];
            let mut names: Vec<String> = self.parents_of(&v.name).to_vec();
            names.push(self.exo[&v.name].name.clone());
            names.sort();
            let target = dag.wires(&names)?;
            mechanisms.insert(v.name.clone(), f.with_dom_order(&target)?);
        }
        CausalModel::new(dag, mechanisms, 0.0)
    }

    /// The joint noise state over all exo variables, canonical order.
    pub fn joint_noise(&self) -> Channel<S> {
        let mut ordered: Vec<(&FinVar, &Channel<S>)> = self
            .exo
            .iter()
            .map(|(endo, var)| (var, &self.noise[endo]))
            .collect();
        ordered.sort_by(|a, b| a.0.name.cmp(&b.0.name));
        let mut joint = Channel::identity(WireList::unit());
        for (_, lambda) in ordered {
            joint = joint.tensor(lambda);
        }
        joint
    }

    /// Exo wires in canonical order.
    pub fn exo_wires(&self) -> WireList {
        let mut exo: Vec<FinVar> = self.exo.values().cloned().collect();
        exo.sort_by(|a, b| a.name.cmp(&b.name));
        WireList::new(exo)
    }
}
