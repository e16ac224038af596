//! Quantum network models over open DAGs, and checks that a classical causal
//! model abstracts one.
//!
//! * [`QuantumDagModel`] — every variable carries a vertex interface, every DAG
//!   edge a wire interface, every output an emission interface. A mechanism maps
//!   the incoming edge wires to the vertex; a splitter maps the vertex to the
//!   outgoing edge wires (plus the emission for outputs). Splitters are explicit
//!   data because quantum states cannot be broadcast.
//! * The io morphism folds the diagram in topological order, permuting frontier
//!   wires as needed. Opened variants skip a mechanism, discard its incoming
//!   wires, and accept the vertex state from outside; vertex marginals stop at an
//!   antichain of vertices and trace out everything else.
//! * [`check_qc_abstraction`] compares the quantum model against a classical one
//!   through per-block measurements (and encoders in the reverse direction) at
//!   three nested strengths: observable behaviour only, interchange
//!   compositions, and full openings. A relation that survives a stronger tier
//!   survives the weaker ones by construction.

use std::collections::{BTreeMap, BTreeSet};

use itertools::Itertools;
use thiserror::Error;

use crate::abstraction::{AbstractionError, CheckOptions, Verdict, VerdictBuilder};
use crate::model::{CausalModel, ModelError, OpenDag};
use crate::quantum::{QMorphism, QObject, QuantumError};
use crate::queries::{
    enumerate_queries, eval_query, subsets_by_size, Query, QueryError, QueryFamily,
};
use crate::stoch::{StochError, WireList};

#[derive(Debug, Error)]
pub enum QabsError {
    #[error(transparent)]
    Quantum(#[from] QuantumError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Stoch(#[from] StochError),
    #[error(transparent)]
    Query(#[from] QueryError),
    #[error(transparent)]
    Abstraction(#[from] AbstractionError),
    #[error("invalid structure: {0}")]
    Structure(String),
    #[error("{label} is not completely positive (least Choi eigenvalue {min_eig:.3e})")]
    NotCp { label: String, min_eig: f64 },
    #[error("{label} is not trace-preserving (deviation {dev:.3e})")]
    NotTp { label: String, dev: f64 },
    #[error("vertices {0} are causally ordered, so their joint state is undefined")]
    NotParallelisable(String),
}

fn require_channel(m: &QMorphism, label: &str, tol: f64) -> Result<(), QabsError> {
    let min_eig = m.min_choi_eigenvalue();
    if min_eig < -tol {
        return Err(QabsError::NotCp { label: label.into(), min_eig });
    }
    let dev = m.tp_deviation();
    if dev > tol {
        return Err(QabsError::NotTp { label: label.into(), dev });
    }
    Ok(())
}

/// A quantum diagram shaped by an open DAG.
#[derive(Debug, Clone)]
pub struct QuantumDagModel {
    dag: OpenDag,
    vertex: BTreeMap<String, QObject>,
    edge: BTreeMap<(String, String), QObject>,
    out: BTreeMap<String, QObject>,
    mech: BTreeMap<String, QMorphism>,
    split: BTreeMap<String, QMorphism>,
}

/// What occupies a slot of the frontier while folding a diagram.
#[derive(Debug, Clone, PartialEq, Eq)]
enum Tag {
    /// A vertex state waiting to be split (inputs and opened vertices start here).
    Avail(String),
    /// A wire between two vertices.
    Edge(String, String),
    /// An emitted output.
    Out(String),
    /// A vertex state retained as a marginal target.
    Kept(String),
}

struct Frontier {
    slots: Vec<(Tag, QObject)>,
    m: QMorphism,
}

impl Frontier {
    fn start(slots: Vec<(Tag, QObject)>) -> Self {
        let obj = slots.iter().fold(QObject::unit(), |a, (_, b)| a.tensor(b));
        Frontier { m: QMorphism::identity(&obj), slots }
    }

    fn objects(&self) -> Vec<QObject> {
        self.slots.iter().map(|(_, o)| o.clone()).collect()
    }

    fn find(&self, tag: &Tag) -> Option<usize> {
        self.slots.iter().position(|(t, _)| t == tag)
    }

    fn rearrange(&mut self, perm: &[usize]) -> Result<(), QuantumError> {
        if perm.iter().enumerate().all(|(i, &p)| i == p) {
            return Ok(());
        }
        let r = QMorphism::block_rearrange(&self.objects(), perm)?;
        self.m = self.m.then(&r)?;
        self.slots = perm.iter().map(|&i| self.slots[i].clone()).collect();
        Ok(())
    }

    fn move_to_end(&mut self, idxs: &[usize]) -> Result<(), QuantumError> {
        let mut perm: Vec<usize> =
            (0..self.slots.len()).filter(|i| !idxs.contains(i)).collect();
        perm.extend_from_slice(idxs);
        self.rearrange(&perm)
    }

    /// Apply `op` to the last `k` slots (identity elsewhere), replacing them with
    /// the tagged decomposition of its codomain.
    fn apply_last(
        &mut self,
        k: usize,
        op: &QMorphism,
        new_slots: Vec<(Tag, QObject)>,
    ) -> Result<(), QuantumError> {
        let n = self.slots.len();
        let prefix = self.slots[..n - k]
            .iter()
            .fold(QObject::unit(), |a, (_, b)| a.tensor(b));
        let lifted = QMorphism::identity(&prefix).tensor(op);
        self.m = self.m.then(&lifted)?;
        self.slots.truncate(n - k);
        self.slots.extend(new_slots);
        Ok(())
    }
}

impl QuantumDagModel {
    /// Validate and assemble a model. Mechanisms must exist for every non-input,
    /// splitters for every variable (childless ones are filled in: identity when
    /// the emission equals the vertex interface, discard when nothing is
    /// emitted). All pieces must be completely positive and trace-preserving
    /// within `tol`.
    pub fn new(
        dag: OpenDag,
        vertex: BTreeMap<String, QObject>,
        edge: BTreeMap<(String, String), QObject>,
        out: BTreeMap<String, QObject>,
        mech: BTreeMap<String, QMorphism>,
        mut split: BTreeMap<String, QMorphism>,
        tol: f64,
    ) -> Result<Self, QabsError> {
        let names: BTreeSet<String> =
            dag.vars().iter().map(|v| v.name.clone()).collect();
        for x in &names {
            if !vertex.contains_key(x) {
                return Err(QabsError::Structure(format!("missing vertex interface for {x}")));
            }
        }
        for x in vertex.keys().chain(mech.keys()).chain(split.keys()) {
            if !names.contains(x) {
                return Err(QabsError::Structure(format!("unknown variable {x}")));
            }
        }
        for (x, y) in edge.keys() {
            if !dag.parents(y).iter().any(|p| p == x) {
                return Err(QabsError::Structure(format!("no DAG edge {x} -> {y}")));
            }
        }
        for x in dag.outputs() {
            if !out.contains_key(x) {
                return Err(QabsError::Structure(format!("missing emission interface for {x}")));
            }
        }
        for x in out.keys() {
            if !dag.outputs().contains(x) {
                return Err(QabsError::Structure(format!("{x} is not an output")));
            }
        }
        for x in &names {
            let is_input = dag.is_input(x);
            match (is_input, mech.contains_key(x)) {
                (true, true) => {
                    return Err(QabsError::Structure(format!("input {x} cannot have a mechanism")))
                }
                (false, false) => {
                    return Err(QabsError::Structure(format!("missing mechanism for {x}")))
                }
                _ => {}
            }
            if let Some(m) = mech.get(x) {
                let mut dom = QObject::unit();
                for p in dag.parents(x) {
                    let e = edge.get(&(p.clone(), x.clone())).ok_or_else(|| {
                        QabsError::Structure(format!("missing wire interface {p} -> {x}"))
                    })?;
                    dom = dom.tensor(e);
                }
                if m.dom() != &dom || m.cod() != &vertex[x] {
                    return Err(QabsError::Structure(format!(
                        "mechanism for {x} has interface {} -> {}, expected {} -> {}",
                        m.dom().describe(),
                        m.cod().describe(),
                        dom.describe(),
                        vertex[x].describe()
                    )));
                }
                require_channel(m, &format!("mechanism for {x}"), tol)?;
            }
            // Splitter codomain: edges to children in order, then the emission.
            let children = dag.children(x);
            let mut cod = QObject::unit();
            for c in &children {
                let e = edge.get(&(x.clone(), c.clone())).ok_or_else(|| {
                    QabsError::Structure(format!("missing wire interface {x} -> {c}"))
                })?;
                cod = cod.tensor(e);
            }
            let emits = dag.outputs().contains(x);
            if emits {
                cod = cod.tensor(&out[x]);
            }
            if !split.contains_key(x) {
                if !children.is_empty() {
                    return Err(QabsError::Structure(format!("missing splitter for {x}")));
                }
                let s = if emits {
                    if out[x] != vertex[x] {
                        return Err(QabsError::Structure(format!(
                            "cannot default the splitter for {x}: emission differs from vertex"
                        )));
                    }
                    QMorphism::identity(&vertex[x])
                } else {
                    QMorphism::discard(&vertex[x])
                };
                split.insert(x.clone(), s);
            }
            let s = &split[x];
            if s.dom() != &vertex[x] || s.cod() != &cod {
                return Err(QabsError::Structure(format!(
                    "splitter for {x} has interface {} -> {}, expected {} -> {}",
                    s.dom().describe(),
                    s.cod().describe(),
                    vertex[x].describe(),
                    cod.describe()
                )));
            }
            require_channel(s, &format!("splitter for {x}"), tol)?;
        }
        Ok(QuantumDagModel { dag, vertex, edge, out, mech, split })
    }

    pub fn dag(&self) -> &OpenDag {
        &self.dag
    }

    pub fn vertex_object(&self, name: &str) -> Result<&QObject, QabsError> {
        self.vertex
            .get(name)
            .ok_or_else(|| QabsError::Structure(format!("unknown variable {name}")))
    }

    pub fn out_object(&self, name: &str) -> Result<&QObject, QabsError> {
        self.out
            .get(name)
            .ok_or_else(|| QabsError::Structure(format!("{name} is not an output")))
    }

    /// The domain of the io morphism: vertex interfaces of the inputs in input
    /// order.
    pub fn input_object(&self) -> QObject {
        self.dag
            .input_order()
            .iter()
            .fold(QObject::unit(), |a, x| a.tensor(&self.vertex[x]))
    }

    /// Split codomain decomposed into tagged frontier slots.
    fn split_slots(&self, x: &str) -> Vec<(Tag, QObject)> {
        let mut slots = Vec::new();
        for c in self.dag.children(x) {
            let e = self.edge[&(x.to_string(), c.clone())].clone();
            slots.push((Tag::Edge(x.to_string(), c), e));
        }
        if self.dag.outputs().contains(x) {
            slots.push((Tag::Out(x.to_string()), self.out[x].clone()));
        }
        slots
    }

    /// Fold the diagram. `opened` vertices skip their mechanism (incoming wires
    /// are discarded; the vertex state arrives through an extra domain slot after
    /// the inputs, in name order). With `keep`, processing stops at those
    /// vertices and everything else is traced out.
    fn fold(
        &self,
        opened: &BTreeSet<String>,
        keep: Option<&BTreeSet<String>>,
    ) -> Result<QMorphism, QabsError> {
        let needed: BTreeSet<String> = match keep {
            Some(targets) => self.dag.backward_closure(targets),
            None => self.dag.vars().iter().map(|v| v.name.clone()).collect(),
        };
        let mut init: Vec<(Tag, QObject)> = Vec::new();
        for x in self.dag.input_order() {
            init.push((Tag::Avail(x.clone()), self.vertex[x].clone()));
        }
        for x in opened {
            init.push((Tag::Avail(x.clone()), self.vertex[x].clone()));
        }
        let mut fr = Frontier::start(init);
        for x in self.dag.topo_order() {
            if !needed.contains(&x) {
                continue;
            }
            if opened.contains(&x) {
                // The vertex state comes from outside; incoming wires are dropped.
                let idxs: Vec<usize> = self
                    .dag
                    .parents(&x)
                    .iter()
                    .filter_map(|p| fr.find(&Tag::Edge(p.clone(), x.clone())))
                    .collect();
                if !idxs.is_empty() {
                    fr.move_to_end(&idxs)?;
                    let tail = fr.slots[fr.slots.len() - idxs.len()..]
                        .iter()
                        .fold(QObject::unit(), |a, (_, b)| a.tensor(b));
                    fr.apply_last(idxs.len(), &QMorphism::discard(&tail), vec![])?;
                }
            } else if !self.dag.is_input(&x) {
                let idxs: Vec<usize> = self
                    .dag
                    .parents(&x)
                    .iter()
                    .map(|p| {
                        fr.find(&Tag::Edge(p.clone(), x.clone())).ok_or_else(|| {
                            QabsError::Structure(format!("internal: wire {p} -> {x} not on frontier"))
                        })
                    })
                    .collect::<Result<_, _>>()?;
                fr.move_to_end(&idxs)?;
                fr.apply_last(
                    idxs.len(),
                    &self.mech[&x],
                    vec![(Tag::Avail(x.clone()), self.vertex[&x].clone())],
                )?;
            }
            if let Some(targets) = keep {
                if targets.contains(&x) {
                    let i = fr.find(&Tag::Avail(x.clone())).ok_or_else(|| {
                        QabsError::Structure(format!("internal: vertex {x} not on frontier"))
                    })?;
                    fr.slots[i].0 = Tag::Kept(x.clone());
                    continue;
                }
            }
            let i = fr.find(&Tag::Avail(x.clone())).ok_or_else(|| {
                QabsError::Structure(format!("internal: vertex {x} not on frontier"))
            })?;
            fr.move_to_end(&[i])?;
            fr.apply_last(1, &self.split[&x], self.split_slots(&x))?;
        }
        match keep {
            Some(targets) => {
                let mut perm: Vec<usize> = targets
                    .iter()
                    .map(|t| {
                        fr.find(&Tag::Kept(t.clone())).ok_or_else(|| {
                            QabsError::Structure(format!("internal: lost marginal target {t}"))
                        })
                    })
                    .collect::<Result<_, _>>()?;
                let rest: Vec<usize> =
                    (0..fr.slots.len()).filter(|i| !perm.contains(i)).collect();
                let k = rest.len();
                perm.extend(rest);
                fr.rearrange(&perm)?;
                if k > 0 {
                    let tail = fr.slots[fr.slots.len() - k..]
                        .iter()
                        .fold(QObject::unit(), |a, (_, b)| a.tensor(b));
                    fr.apply_last(k, &QMorphism::discard(&tail), vec![])?;
                }
            }
            None => {
                let perm: Vec<usize> = self
                    .dag
                    .outputs()
                    .iter()
                    .map(|x| {
                        fr.find(&Tag::Out(x.clone())).ok_or_else(|| {
                            QabsError::Structure(format!("internal: output {x} was not emitted"))
                        })
                    })
                    .collect::<Result<_, _>>()?;
                if perm.len() != fr.slots.len() {
                    return Err(QabsError::Structure(
                        "internal: unconsumed wires at the end of the fold".into(),
                    ));
                }
                fr.rearrange(&perm)?;
            }
        }
        Ok(fr.m)
    }

    /// The morphism from input vertices to emitted outputs (name order).
    pub fn io(&self) -> Result<QMorphism, QabsError> {
        self.fold(&BTreeSet::new(), None)
    }

    /// The io morphism with the listed mechanisms deleted: their vertex states
    /// become extra domain slots (after the inputs, name order) and their
    /// incoming wires are discarded.
    pub fn opened(&self, opened: &BTreeSet<String>) -> Result<QMorphism, QabsError> {
        for x in opened {
            self.vertex_object(x)?;
            if self.dag.is_input(x) {
                return Err(QabsError::Structure(format!("cannot open the input {x}")));
            }
        }
        self.fold(opened, None)
    }

    /// Joint state of an antichain of vertices: run the ancestors, keep the
    /// target vertex states (name order), trace out everything else.
    pub fn vertex_marginal(&self, targets: &BTreeSet<String>) -> Result<QMorphism, QabsError> {
        if targets.is_empty() {
            return Err(QabsError::Structure("empty marginal target".into()));
        }
        for t in targets {
            self.vertex_object(t)?;
        }
        for (a, b) in targets.iter().tuple_combinations() {
            if self.dag.has_path(a, b) || self.dag.has_path(b, a) {
                return Err(QabsError::NotParallelisable(format!("{a},{b}")));
            }
        }
        self.fold(&BTreeSet::new(), Some(targets))
    }

    /// Interchange composition: one free copy of the inputs plus, per group, a
    /// branch copy whose marginal vertex states replace the opened group. The
    /// branch states stay quantum all the way into the opened diagram.
    pub fn interchange(&self, groups: &[BTreeSet<String>]) -> Result<QMorphism, QabsError> {
        let mut union: BTreeSet<String> = BTreeSet::new();
        for g in groups {
            if g.is_empty() {
                return Err(QabsError::Structure("empty interchange group".into()));
            }
            for v in g {
                if !union.insert(v.clone()) {
                    return Err(QabsError::Structure(format!(
                        "variable {v} appears in two interchange groups"
                    )));
                }
            }
        }
        let opened = self.opened(&union)?;
        let mut assembled = QMorphism::identity(&self.input_object());
        let mut slots: Vec<QObject> = vec![self.input_object()];
        let mut names: Vec<Option<String>> = vec![None];
        for g in groups {
            assembled = assembled.tensor(&self.vertex_marginal(g)?);
            for v in g {
                slots.push(self.vertex[v].clone());
                names.push(Some(v.clone()));
            }
        }
        let mut perm = vec![0usize];
        for v in &union {
            let i = names
                .iter()
                .position(|n| n.as_deref() == Some(v.as_str()))
                .expect("union member comes from a group");
            perm.push(i);
        }
        let r = QMorphism::block_rearrange(&slots, &perm)?;
        Ok(assembled.then(&r)?.then(&opened)?)
    }
}

/// How far the quantum-to-classical comparison reaches. Each tier repeats the
/// checks of the weaker ones.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QcTier {
    /// Observable behaviour only.
    Io,
    /// Plus interchange compositions with quantum branch states.
    Interchange,
    /// Plus openings fed with encoded classical values.
    Opening,
}

impl QcTier {
    fn rank(self) -> u8 {
        match self {
            QcTier::Io => 0,
            QcTier::Interchange => 1,
            QcTier::Opening => 2,
        }
    }
}

/// Measurements (and encoders) connecting quantum blocks to classical variables.
///
/// For a classical variable `x` aligned with the block `pi(x)`:
/// * `tau[x]` measures the emitted interfaces of the block into `x` (required
///   when `x` is an output);
/// * `enc[x]` prepares the block's vertex interfaces from a value of `x`
///   (required when `x` is an input, and for every non-input at the opening
///   tier).
///
/// Where both exist on matching interfaces, encoding then measuring must be the
/// identity, otherwise values would not survive the round trip.
#[derive(Debug, Clone, Default)]
pub struct TauSpec {
    pub tau: BTreeMap<String, QMorphism>,
    pub enc: BTreeMap<String, QMorphism>,
}

fn block_sorted(pi: &BTreeMap<String, Vec<String>>, x: &str) -> Result<Vec<String>, QabsError> {
    let mut b = pi
        .get(x)
        .ok_or_else(|| QabsError::Structure(format!("no block for {x}")))?
        .clone();
    b.sort();
    Ok(b)
}

fn image(
    pi: &BTreeMap<String, Vec<String>>,
    set: &BTreeSet<String>,
) -> Result<BTreeSet<String>, QabsError> {
    let mut out = BTreeSet::new();
    for x in set {
        out.extend(block_sorted(pi, x)?);
    }
    Ok(out)
}

fn validate_blocks(
    low: &QuantumDagModel,
    high: &CausalModel<f64>,
    pi: &BTreeMap<String, Vec<String>>,
) -> Result<(), QabsError> {
    let high_vars: BTreeSet<String> =
        high.dag().vars().iter().map(|v| v.name.clone()).collect();
    if pi.keys().cloned().collect::<BTreeSet<_>>() != high_vars {
        return Err(QabsError::Structure(
            "blocks must be declared for exactly the classical variables".into(),
        ));
    }
    let mut seen: BTreeSet<String> = BTreeSet::new();
    for (x, block) in pi {
        if block.is_empty() {
            return Err(QabsError::Structure(format!("empty block for {x}")));
        }
        for v in block {
            low.vertex_object(v)?;
            if !seen.insert(v.clone()) {
                return Err(QabsError::Structure(format!("{v} appears in two blocks")));
            }
        }
    }
    let low_vars: BTreeSet<String> =
        low.dag().vars().iter().map(|v| v.name.clone()).collect();
    if seen != low_vars {
        let missing: Vec<String> = low_vars.difference(&seen).cloned().collect();
        return Err(QabsError::Structure(format!(
            "blocks must cover the quantum model; missing {}",
            missing.join(",")
        )));
    }
    let in_image = image(pi, high.dag().inputs())?;
    let low_inputs: BTreeSet<String> = low.dag().inputs().clone();
    if in_image != low_inputs {
        return Err(QabsError::Structure(
            "input blocks must cover exactly the quantum inputs".into(),
        ));
    }
    let out_image = image(pi, high.dag().outputs())?;
    if !out_image.is_subset(low.dag().outputs()) {
        return Err(QabsError::Structure(
            "output blocks must consist of quantum outputs".into(),
        ));
    }
    Ok(())
}

fn validate_taus(
    low: &QuantumDagModel,
    high: &CausalModel<f64>,
    pi: &BTreeMap<String, Vec<String>>,
    taus: &TauSpec,
    tier: QcTier,
    tol: f64,
) -> Result<(), QabsError> {
    let mut enc_required: Vec<String> =
        high.dag().input_order().to_vec();
    if tier.rank() >= QcTier::Opening.rank() {
        enc_required.extend(high.dag().non_inputs());
    }
    for x in &enc_required {
        let e = taus.enc.get(x).ok_or_else(|| {
            QabsError::Structure(format!("missing encoder for {x}"))
        })?;
        let want_dom = QObject::classical(WireList::single(high.dag().wire(x)?));
        let mut want_cod = QObject::unit();
        for v in block_sorted(pi, x)? {
            want_cod = want_cod.tensor(low.vertex_object(&v)?);
        }
        if e.dom() != &want_dom || e.cod() != &want_cod {
            return Err(QabsError::Structure(format!(
                "encoder for {x} has interface {} -> {}, expected {} -> {}",
                e.dom().describe(),
                e.cod().describe(),
                want_dom.describe(),
                want_cod.describe()
            )));
        }
        require_channel(e, &format!("encoder for {x}"), tol)?;
    }
    for x in high.dag().outputs() {
        let t = taus.tau.get(x).ok_or_else(|| {
            QabsError::Structure(format!("missing measurement for {x}"))
        })?;
        let mut want_dom = QObject::unit();
        for v in block_sorted(pi, x)? {
            want_dom = want_dom.tensor(low.out_object(&v)?);
        }
        let want_cod = QObject::classical(WireList::single(high.dag().wire(x)?));
        if t.dom() != &want_dom || t.cod() != &want_cod {
            return Err(QabsError::Structure(format!(
                "measurement for {x} has interface {} -> {}, expected {} -> {}",
                t.dom().describe(),
                t.cod().describe(),
                want_dom.describe(),
                want_cod.describe()
            )));
        }
        require_channel(t, &format!("measurement for {x}"), tol)?;
        // Round trip: encoding a value and measuring it back must be lossless.
        if let Some(e) = taus.enc.get(x) {
            if e.cod() == t.dom() {
                let round = e.then(t)?.classical_channel(tol)?;
                let id = crate::stoch::Channel::<f64>::identity(
                    WireList::single(high.dag().wire(x)?),
                );
                if !round.eq_tol(&id, tol)? {
                    return Err(QabsError::Structure(format!(
                        "measuring an encoded value of {x} must return it unchanged"
                    )));
                }
            }
        }
    }
    Ok(())
}

/// Encoders for the inputs (input order) plus the `pending` classical variables,
/// rearranged so the quantum side lines up with the opened diagram's domain.
fn encode_stage(
    low: &QuantumDagModel,
    high: &CausalModel<f64>,
    pi: &BTreeMap<String, Vec<String>>,
    taus: &TauSpec,
    pending: &[String],
) -> Result<QMorphism, QabsError> {
    let mut stage = QMorphism::identity(&QObject::unit());
    let mut slot_objs: Vec<QObject> = Vec::new();
    let mut slot_names: Vec<String> = Vec::new();
    let order: Vec<String> = high
        .dag()
        .input_order()
        .iter()
        .chain(pending.iter())
        .cloned()
        .collect();
    for x in &order {
        stage = stage.tensor(&taus.enc[x]);
        for v in block_sorted(pi, x)? {
            slot_objs.push(low.vertex_object(&v)?.clone());
            slot_names.push(v);
        }
    }
    let pending_set: BTreeSet<String> = pending.iter().cloned().collect();
    let mut target: Vec<String> = low.dag().input_order().to_vec();
    target.extend(image(pi, &pending_set)?);
    let perm: Vec<usize> = target
        .iter()
        .map(|v| {
            slot_names.iter().position(|n| n == v).ok_or_else(|| {
                QabsError::Structure(format!("internal: {v} missing from encoder image"))
            })
        })
        .collect::<Result<_, _>>()?;
    Ok(stage.then(&QMorphism::block_rearrange(&slot_objs, &perm)?)?)
}

/// Measurements for the classical outputs; unmatched quantum outputs are traced
/// out.
fn measure_stage(
    low: &QuantumDagModel,
    high: &CausalModel<f64>,
    pi: &BTreeMap<String, Vec<String>>,
    taus: &TauSpec,
) -> Result<QMorphism, QabsError> {
    let louts: Vec<String> = low.dag().outputs().iter().cloned().collect();
    let slot_objs: Vec<QObject> = louts
        .iter()
        .map(|v| low.out_object(v).cloned())
        .collect::<Result<_, _>>()?;
    let matched = image(pi, high.dag().outputs())?;
    let mut target: Vec<String> = Vec::new();
    for x in high.dag().outputs() {
        target.extend(block_sorted(pi, x)?);
    }
    target.extend(louts.iter().filter(|v| !matched.contains(*v)).cloned());
    let perm: Vec<usize> = target
        .iter()
        .map(|v| {
            louts.iter().position(|n| n == v).ok_or_else(|| {
                QabsError::Structure(format!("internal: {v} is not a quantum output"))
            })
        })
        .collect::<Result<_, _>>()?;
    let r = QMorphism::block_rearrange(&slot_objs, &perm)?;
    let mut meas = QMorphism::identity(&QObject::unit());
    for x in high.dag().outputs() {
        meas = meas.tensor(&taus.tau[x]);
    }
    let mut rest = QObject::unit();
    for v in louts.iter().filter(|v| !matched.contains(*v)) {
        rest = rest.tensor(low.out_object(v)?);
    }
    meas = meas.tensor(&QMorphism::discard(&rest));
    Ok(r.then(&meas)?)
}

fn is_antichain(dag: &OpenDag, set: &BTreeSet<String>) -> bool {
    set.iter()
        .tuple_combinations()
        .all(|(a, b)| !dag.has_path(a, b) && !dag.has_path(b, a))
}

/// Check that the classical model abstracts the quantum one through the given
/// measurements, up to the requested tier. Interchange groups whose blocks are
/// causally ordered on the quantum side have no joint state and are skipped.
pub fn check_qc_abstraction(
    low: &QuantumDagModel,
    high: &CausalModel<f64>,
    pi: &BTreeMap<String, Vec<String>>,
    taus: &TauSpec,
    tier: QcTier,
    opts: &CheckOptions,
) -> Result<Verdict, QabsError> {
    validate_blocks(low, high, pi)?;
    validate_taus(low, high, pi, taus, tier, opts.tol)?;
    let mut b = VerdictBuilder::new(opts.witness_cap);
    let enc_in = encode_stage(low, high, pi, taus, &[])?;
    let meas = measure_stage(low, high, pi, taus)?;

    let lhs = enc_in.then(&low.io()?)?.then(&meas)?.classical_channel(opts.tol)?;
    let rhs = high.io_channel()?.with_cod_order(lhs.cod())?;
    b.compare("io", &lhs, &rhs, opts.tol)?;

    if tier.rank() >= QcTier::Interchange.rank() {
        for q in enumerate_queries(high, QueryFamily::Interchange, &opts.bounds) {
            let Query::Interchange { groups, .. } = &q else { continue };
            if groups.is_empty() {
                continue;
            }
            let low_groups: Vec<BTreeSet<String>> = groups
                .iter()
                .map(|g| image(pi, g))
                .collect::<Result<_, _>>()?;
            if !low_groups.iter().all(|g| is_antichain(low.dag(), g)) {
                continue;
            }
            let qi = low.interchange(&low_groups)?;
            let mut enc_all = enc_in.clone();
            for _ in 0..groups.len() {
                enc_all = enc_all.tensor(&enc_in);
            }
            let lhs = enc_all.then(&qi)?.then(&meas)?.classical_channel(opts.tol)?;
            let rhs = eval_query(high, &q)?.with_cod_order(lhs.cod())?;
            b.compare(&q.describe(), &lhs, &rhs, opts.tol)?;
        }
    }

    if tier.rank() >= QcTier::Opening.rank() {
        let pool = high.dag().non_inputs();
        for s in subsets_by_size(&pool, opts.bounds.max_set) {
            if s.is_empty() {
                continue;
            }
            let pending: Vec<String> = s.iter().cloned().collect();
            let enc = encode_stage(low, high, pi, taus, &pending)?;
            let low_opened = image(pi, &s)?;
            let qo = low.opened(&low_opened)?;
            let lhs = enc.then(&qo)?.then(&meas)?.classical_channel(opts.tol)?;
            let rhs = high.open_model(&s)?.io_channel()?.with_cod_order(lhs.cod())?;
            b.compare(&format!("open[{}]", s.iter().join(",")), &lhs, &rhs, opts.tol)?;
        }
    }
    Ok(b.finish())
}
