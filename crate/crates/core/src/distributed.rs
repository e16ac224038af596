//! Interventions transported across a change of variables, checked by dual routes.
//!
//! A deterministic bijection `phi` between the joint state spaces of two variable
//! sets lets a model `m1` act as a *distributed* implementation of the induced model
//! `m2 = phi . m1 . phi^-1`: no single variable of `m1` carries a variable of `m2`,
//! yet every intervention on `m2` has a concrete meaning on `m1` by conjugation.
//!
//! * [`IsoSetup`] — the original model plus the isomorphism and the declared inputs
//!   of the induced side; [`IsoSetup::induce`] validates that the conjugated system
//!   is again an acyclic model, that `phi` splits into independent input and
//!   non-input parts, and that observable behaviour transports.
//! * [`distributed_do_direct`] / [`distributed_do_conjugated`] — two routes to the
//!   model obtained by clamping induced variables to sharp values: conjugate the
//!   overwrite through `phi` and reconstruct on the original variables, versus
//!   perform surgery on the induced model and transport the result back. The routes
//!   share no intermediate; agreement is evidence both are right.
//! * [`distributed_interchange_direct`] / [`distributed_interchange_conjugated`] —
//!   the same discipline for interchange interventions, which clamp variable groups
//!   to the laws they have under alternative input assignments. The direct route
//!   computes branch laws from the original model's behaviour pushed through `phi`
//!   and feeds them into an opened induced model; the conjugated route evaluates
//!   the pinned interchange query on the induced model.
//! * [`check_iso_cca`] — given additionally a high-level model and a block
//!   alignment on the induced variables, checks the distributed abstraction squares
//!   intervention by intervention and, independently, the ordinary whole-model
//!   check between the induced and high models; the report records whether the two
//!   verdicts agree.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::abstraction::{
    check_constructive, check_interchange, map_from_alignment, AbstractionError, CheckOptions,
    VariableAlignment, Verdict, VerdictBuilder,
};
use crate::model::{invert_deterministic, CausalModel, InducedModel, Intervention, ModelError};
use crate::queries::{enumerate_queries, eval_query, Query, QueryError, QueryFamily};
use crate::scalar::Scalar;
use crate::stoch::{Channel, StochError, WireList};

/// Joint state spaces beyond this size are rejected up front; conjugation works on
/// the full joint table, so the cost is linear in this number.
pub const MAX_JOINT_STATES: usize = 1 << 12;

/// Branch-assignment tuples beyond this count are rejected; interchange checks
/// enumerate one square per tuple.
pub const MAX_BRANCH_TUPLES: usize = 1 << 10;

#[derive(Debug, Error)]
pub enum DistributedError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Stoch(#[from] StochError),
    #[error(transparent)]
    Query(#[from] QueryError),
    #[error(transparent)]
    Abstraction(#[from] AbstractionError),
    #[error("the isomorphism does not fit the model: {0}")]
    MismatchedIso(String),
    #[error("joint state space has {0} assignments, above the cap of {MAX_JOINT_STATES}")]
    StateSpaceTooLarge(usize),
    #[error("{0} branch-assignment tuples to enumerate, above the cap of {MAX_BRANCH_TUPLES}")]
    TooManyBranchTuples(usize),
    #[error("overwrite target `{0}` is not a variable of the induced side")]
    BadTarget(String),
}

/// A deterministic model together with a joint-state isomorphism onto new
/// variables. `phi` must map the canonical wire list of `m1`'s variables onto the
/// canonical wire list of the induced variables; `w_inputs` declares which induced
/// variables are inputs (the reconstruction derives the same set or fails).
#[derive(Debug, Clone)]
pub struct IsoSetup<S: Scalar> {
    pub m1: CausalModel<S>,
    pub phi: Channel<S>,
    pub w_inputs: BTreeSet<String>,
}

impl<S: Scalar> IsoSetup<S> {
    pub fn new(
        m1: CausalModel<S>,
        phi: Channel<S>,
        w_inputs: BTreeSet<String>,
    ) -> Result<Self, DistributedError> {
        let wires = m1.dag().all_wires();
        if phi.dom() != &wires {
            return Err(DistributedError::MismatchedIso(format!(
                "domain {} does not match the model variables {}",
                phi.dom().describe(),
                wires.describe()
            )));
        }
        let states = wires.total_card();
        if states > MAX_JOINT_STATES {
            return Err(DistributedError::StateSpaceTooLarge(states));
        }
        Ok(IsoSetup { m1, phi, w_inputs })
    }

    /// Transport the model across the isomorphism, validating splitness and io
    /// transport along the way.
    pub fn induce(&self) -> Result<InducedModel<S>, DistributedError> {
        Ok(self.m1.induce_model(&self.phi, &self.w_inputs)?)
    }
}

/// The endo channel replacing the listed coordinates with fixed values and passing
/// every other coordinate through.
fn overwrite_values<S: Scalar>(
    wires: &WireList,
    values: &BTreeMap<String, usize>,
) -> Result<Channel<S>, DistributedError> {
    let mut fixed: Vec<Option<usize>> = vec![None; wires.len()];
    for (name, &value) in values {
        let pos = wires
            .vars()
            .iter()
            .position(|v| &v.name == name)
            .ok_or_else(|| DistributedError::BadTarget(name.clone()))?;
        if value >= wires.vars()[pos].card {
            return Err(DistributedError::BadTarget(format!("{name}={value}")));
        }
        fixed[pos] = Some(value);
    }
    Ok(Channel::deterministic(wires.clone(), wires.clone(), move |a| {
        a.iter().enumerate().map(|(i, &x)| fixed[i].unwrap_or(x)).collect()
    }))
}

/// Clamp induced variables to sharp values, working entirely on the original side:
/// conjugate the overwrite through `phi`, compose with the parallel mechanism, and
/// reconstruct a model from the resulting endo channel.
pub fn distributed_do_direct<S: Scalar>(
    setup: &IsoSetup<S>,
    values: &BTreeMap<String, usize>,
) -> Result<CausalModel<S>, DistributedError> {
    let f1 = setup.m1.parallel_mechanism()?;
    let phi_inv = invert_deterministic(&setup.phi)?;
    let ow = overwrite_values(setup.phi.cod(), values)?;
    let g = f1.then(&setup.phi)?.then(&ow)?.then(&phi_inv)?;
    Ok(CausalModel::from_parallel_channel(&g)?)
}

/// The same clamp via the induced side: surgery on the induced model, then
/// transport the intervened model back through the inverse isomorphism.
pub fn distributed_do_conjugated<S: Scalar>(
    setup: &IsoSetup<S>,
    induced: &InducedModel<S>,
    values: &BTreeMap<String, usize>,
) -> Result<CausalModel<S>, DistributedError> {
    let iv = Intervention::do_values(induced.model.dag(), values)?;
    let m2p = induced.model.apply_intervention(&iv)?;
    let phi_inv = invert_deterministic(&setup.phi)?;
    let back = m2p.induce_model(&phi_inv, setup.m1.dag().inputs())?;
    Ok(back.model)
}

/// Interchange intervention computed with branch laws from the original side.
///
/// For each group `groups[j]` of induced variables, the law clamped onto it is the
/// behaviour of `m1` under the sharp input assignment `branch_inputs[j]`, pushed
/// through the non-input part of the isomorphism and marginalised to the group.
/// The groups are then opened in the induced model and the laws fed in; the result
/// maps induced inputs to induced outputs.
pub fn distributed_interchange_direct<S: Scalar>(
    setup: &IsoSetup<S>,
    induced: &InducedModel<S>,
    groups: &[BTreeSet<String>],
    branch_inputs: &[Vec<usize>],
) -> Result<Channel<S>, DistributedError> {
    assert_eq!(groups.len(), branch_inputs.len());
    let io1 = setup.m1.io_channel()?;
    let mut union: BTreeSet<String> = BTreeSet::new();
    let mut feed = Channel::identity(induced.model.dag().input_wires());
    for (group, x) in groups.iter().zip(branch_inputs) {
        let sharp = Channel::sharp_state(io1.dom(), x)?;
        let pushed = sharp.then(&io1)?.then(&induced.phi_nin)?;
        let names: Vec<&str> = group.iter().map(|s| s.as_str()).collect();
        let law = pushed.marginalize_to(&names)?;
        feed = feed.tensor(&law);
        union.extend(group.iter().cloned());
    }
    let opened = induced.model.open_model(&union)?;
    let io_open = opened.io_channel()?;
    Ok(feed.with_cod_order(io_open.dom())?.then(&io_open)?)
}

/// The same interchange intervention via the induced side's own query machinery:
/// evaluate the pinned interchange query on the induced model, with each branch's
/// inputs fixed to the image of the original assignment under the input part of
/// the isomorphism.
pub fn distributed_interchange_conjugated<S: Scalar>(
    setup: &IsoSetup<S>,
    induced: &InducedModel<S>,
    groups: &[BTreeSet<String>],
    branch_inputs: &[Vec<usize>],
) -> Result<Channel<S>, DistributedError> {
    assert_eq!(groups.len(), branch_inputs.len());
    let v1_in = setup.m1.dag().input_wires();
    let mut pinned = Vec::with_capacity(groups.len());
    for (group, x) in groups.iter().zip(branch_inputs) {
        let flat = v1_in.flat_index(x);
        let image = induced
            .phi_in
            .deterministic_value(flat, 0.0)
            .expect("input part of a split isomorphism is deterministic");
        let assignment = induced.phi_in.cod().assignment(image);
        let values: BTreeMap<String, usize> = induced
            .phi_in
            .cod()
            .vars()
            .iter()
            .zip(&assignment)
            .map(|(v, &val)| (v.name.clone(), val))
            .collect();
        pinned.push((group.clone(), values));
    }
    let query = Query::SharpInterchange {
        groups: pinned,
        outputs: induced.model.dag().outputs().clone(),
    };
    Ok(eval_query(&induced.model, &query)?)
}

/// Which intervention family the distributed check ranges over.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DistributedFlavor {
    /// Sharp clamps of block variables, one square per entry of the canonical
    /// intervention table of the alignment.
    Constructive,
    /// Interchange interventions, one square per group tuple and branch-assignment
    /// tuple within the enumeration bounds.
    Interchange,
}

/// Verdicts of the staged distributed check.
#[derive(Debug, Clone)]
pub struct DistributedReport {
    /// Direct and conjugated routes produce the same intervened behaviour.
    pub dual_route: Verdict,
    /// Distributed abstraction squares between the original model and the high
    /// model, through the isomorphism and the alignment.
    pub squares: Verdict,
    /// The ordinary whole-model check between the induced model and the high model.
    pub composite: Verdict,
    /// Whether `squares` and `composite` reach the same verdict.
    pub agree: bool,
}

fn fmt_sharp<S: Scalar>(iv: &Intervention<S>) -> String {
    match iv.sharp_signature() {
        Some(sig) if sig.is_empty() => "trivial".to_string(),
        Some(sig) => sig
            .iter()
            .map(|(n, v)| format!("{n}={v}"))
            .collect::<Vec<_>>()
            .join(","),
        None => "non-sharp".to_string(),
    }
}

/// Run the distributed check: per-intervention squares on the original side versus
/// the ordinary check on the induced side, plus dual-route agreement per
/// intervention.
pub fn check_iso_cca<S: Scalar>(
    setup: &IsoSetup<S>,
    high: &CausalModel<S>,
    align: &VariableAlignment<S>,
    flavor: DistributedFlavor,
    opts: &CheckOptions,
) -> Result<DistributedReport, DistributedError> {
    let induced = setup.induce()?;
    align.validate_models(&induced.model, high, opts.tol)?;
    let tau_in = align.tau_map(&induced.model.dag().input_wires(), high.dag().input_order())?;
    let high_out_names: Vec<String> = high.dag().outputs().iter().cloned().collect();
    let tau_out = align.tau_map(&induced.model.dag().output_wires(), &high_out_names)?;

    let mut routes = VerdictBuilder::new(opts.witness_cap);
    let mut squares = VerdictBuilder::new(opts.witness_cap);

    match flavor {
        DistributedFlavor::Constructive => {
            for (low_iv, high_iv) in map_from_alignment(&induced.model, high, align)? {
                let values: BTreeMap<String, usize> = low_iv
                    .sharp_signature()
                    .expect("canonical table entries are sharp")
                    .into_iter()
                    .collect();
                let label = format!("ddo({})", fmt_sharp(&low_iv));
                let direct = match distributed_do_direct(setup, &values) {
                    Ok(m) => m,
                    Err(e) => {
                        routes.structural(&label, &format!("direct route failed: {e}"));
                        continue;
                    }
                };
                match distributed_do_conjugated(setup, &induced, &values) {
                    Ok(conjugated) => {
                        if direct == conjugated {
                            routes.checked += 1;
                        } else {
                            routes.structural(&label, "routes reconstruct different models");
                        }
                        let lhs = direct.io_channel()?;
                        let rhs = conjugated.io_channel()?.with_cod_order(lhs.cod())?;
                        routes.compare(&format!("{label} io"), &lhs, &rhs, opts.tol)?;
                    }
                    Err(e) => {
                        routes.structural(&label, &format!("conjugated route failed: {e}"));
                    }
                }
                let lhs = direct.io_channel()?.then(&induced.phi_nin)?.then(&tau_out)?;
                let high_model = high.apply_intervention(&high_iv)?;
                let rhs = induced
                    .phi_in
                    .then(&tau_in)?
                    .then(&high_model.io_channel()?)?
                    .with_cod_order(lhs.cod())?;
                squares.compare(
                    &format!("{label} => do({})", fmt_sharp(&high_iv)),
                    &lhs,
                    &rhs,
                    opts.tol,
                )?;
            }
        }
        DistributedFlavor::Interchange => {
            let v1_in = setup.m1.dag().input_wires();
            let total = v1_in.total_card();
            for q in enumerate_queries(high, QueryFamily::Interchange, &opts.bounds) {
                let Query::Interchange { groups: high_groups, outputs } = &q else {
                    continue;
                };
                let n = high_groups.len();
                let tuples = total
                    .checked_pow(n as u32)
                    .ok_or(DistributedError::TooManyBranchTuples(usize::MAX))?;
                if tuples > MAX_BRANCH_TUPLES {
                    return Err(DistributedError::TooManyBranchTuples(tuples));
                }
                let mut v2_groups = Vec::with_capacity(n);
                for g in high_groups {
                    v2_groups.push(align.image(g)?);
                }
                let tau_sel = align.tau_map(
                    &induced.model.dag().output_wires(),
                    &outputs.iter().cloned().collect::<Vec<_>>(),
                )?;
                for k in 0..tuples {
                    let mut branch_inputs = Vec::with_capacity(n);
                    let mut rest = k;
                    for _ in 0..n {
                        branch_inputs.push(v1_in.assignment(rest % total));
                        rest /= total;
                    }
                    let label = format!(
                        "dii({}; branches {:?})",
                        q.describe(),
                        branch_inputs
                    );
                    let direct = distributed_interchange_direct(
                        setup,
                        &induced,
                        &v2_groups,
                        &branch_inputs,
                    )?;
                    let conjugated = distributed_interchange_conjugated(
                        setup,
                        &induced,
                        &v2_groups,
                        &branch_inputs,
                    )?;
                    routes.compare(
                        &format!("{label} routes"),
                        &direct,
                        &conjugated.with_cod_order(direct.cod())?,
                        opts.tol,
                    )?;
                    // High-side analogue: pin each branch to the image of its
                    // original assignment under the isomorphism and the alignment.
                    let mut high_pinned = Vec::with_capacity(n);
                    for (g, x) in high_groups.iter().zip(&branch_inputs) {
                        let flat = v1_in.flat_index(x);
                        let image = induced
                            .phi_in
                            .deterministic_value(flat, 0.0)
                            .expect("split input part is deterministic");
                        let v2_assignment = induced.phi_in.cod().assignment(image);
                        let v2_values: BTreeMap<String, usize> = induced
                            .phi_in
                            .cod()
                            .vars()
                            .iter()
                            .zip(&v2_assignment)
                            .map(|(v, &val)| (v.name.clone(), val))
                            .collect();
                        let high_values = align.push_values(high.dag().inputs(), &v2_values)?;
                        high_pinned.push((g.clone(), high_values));
                    }
                    let high_q = Query::SharpInterchange {
                        groups: high_pinned,
                        outputs: outputs.clone(),
                    };
                    let high_chan = eval_query(high, &high_q)?;
                    let lhs = induced.phi_in.then(&direct)?.then(&tau_sel)?;
                    let rhs = induced
                        .phi_in
                        .then(&tau_in)?
                        .then(&high_chan)?
                        .with_cod_order(lhs.cod())?;
                    squares.compare(&label, &lhs, &rhs, opts.tol)?;
                }
            }
        }
    }

    let composite = match flavor {
        DistributedFlavor::Constructive => check_constructive(&induced.model, high, align, opts)?,
        DistributedFlavor::Interchange => check_interchange(&induced.model, high, align, opts)?,
    };
    let squares = squares.finish();
    let agree = squares.holds == composite.holds;
    Ok(DistributedReport { dual_route: routes.finish(), squares, composite, agree })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::OpenDag;
    use crate::scalar::Rat;
    use crate::stoch::FinVar;

    fn var(name: &str) -> FinVar {
        FinVar::new(name, 2)
    }

    /// P is an input, Q negates it; the only output is Q.
    fn negated_pair() -> CausalModel<Rat> {
        let dag = OpenDag::new(vec![var("P"), var("Q")], &["P"], &["Q"], &[("P", "Q")]).unwrap();
        let mut mechanisms = BTreeMap::new();
        mechanisms.insert(
            "Q".to_string(),
            Channel::deterministic(WireList::single(var("P")), WireList::single(var("Q")), |a| {
                vec![1 - a[0]]
            }),
        );
        CausalModel::new(dag, mechanisms, 0.0).unwrap()
    }

    /// Split isomorphism [P,Q] -> [A2,B2]: the input passes through, the non-input
    /// is negated. The induced model is B2 = A2.
    fn pair_setup() -> IsoSetup<Rat> {
        let m1 = negated_pair();
        let dom = m1.dag().all_wires();
        let cod = WireList::new(vec![var("A2"), var("B2")]);
        let phi = Channel::deterministic(dom, cod, |a| vec![a[0], 1 - a[1]]);
        IsoSetup::new(m1, phi, ["A2".to_string()].into_iter().collect()).unwrap()
    }

    /// High model: I an input, N copies it (or negates it when `broken`).
    fn high_pair(broken: bool) -> CausalModel<Rat> {
        let dag = OpenDag::new(vec![var("I"), var("N")], &["I"], &["N"], &[("I", "N")]).unwrap();
        let mut mechanisms = BTreeMap::new();
        mechanisms.insert(
            "N".to_string(),
            Channel::deterministic(
                WireList::single(var("I")),
                WireList::single(var("N")),
                move |a| vec![if broken { 1 - a[0] } else { a[0] }],
            ),
        );
        CausalModel::new(dag, mechanisms, 0.0).unwrap()
    }

    fn pair_align() -> VariableAlignment<Rat> {
        let mut pi = BTreeMap::new();
        let mut tau = BTreeMap::new();
        for (h, l) in [("I", "A2"), ("N", "B2")] {
            pi.insert(h.to_string(), vec![l.to_string()]);
            tau.insert(
                h.to_string(),
                Channel::deterministic(WireList::single(var(l)), WireList::single(var(h)), |a| {
                    vec![a[0]]
                }),
            );
        }
        VariableAlignment { pi, tau }
    }

    /// Three-variable chain P -> Q -> R with a non-input-mixing isomorphism:
    /// B2 = Q, C2 = Q xor R.
    fn chain_setup() -> IsoSetup<Rat> {
        let dag = OpenDag::new(
            vec![var("P"), var("Q"), var("R")],
            &["P"],
            &["Q", "R"],
            &[("P", "Q"), ("Q", "R")],
        )
        .unwrap();
        let mut mechanisms = BTreeMap::new();
        mechanisms.insert(
            "Q".to_string(),
            Channel::deterministic(WireList::single(var("P")), WireList::single(var("Q")), |a| {
                vec![1 - a[0]]
            }),
        );
        mechanisms.insert(
            "R".to_string(),
            Channel::deterministic(WireList::single(var("Q")), WireList::single(var("R")), |a| {
                vec![a[0]]
            }),
        );
        let m1 = CausalModel::new(dag, mechanisms, 0.0).unwrap();
        let dom = m1.dag().all_wires();
        let cod = WireList::new(vec![var("A2"), var("B2"), var("C2")]);
        let phi = Channel::deterministic(dom, cod, |a| vec![a[0], a[1], a[1] ^ a[2]]);
        IsoSetup::new(m1, phi, ["A2".to_string()].into_iter().collect()).unwrap()
    }

    #[test]
    fn ddo_routes_reconstruct_the_same_model() {
        let setup = chain_setup();
        let induced = setup.induce().unwrap();
        let targets: Vec<Vec<&str>> =
            vec![vec![], vec!["B2"], vec!["C2"], vec!["B2", "C2"]];
        for names in targets {
            let m = names.len();
            for mask in 0..(1usize << m) {
                let values: BTreeMap<String, usize> = names
                    .iter()
                    .enumerate()
                    .map(|(i, n)| (n.to_string(), (mask >> i) & 1))
                    .collect();
                let direct = distributed_do_direct(&setup, &values).unwrap();
                let conjugated = distributed_do_conjugated(&setup, &induced, &values).unwrap();
                assert_eq!(direct, conjugated, "values {values:?}");
                let lhs = direct.io_channel().unwrap();
                let rhs = conjugated.io_channel().unwrap();
                assert!(lhs.eq_tol(&rhs, 0.0).unwrap());
            }
        }
    }

    #[test]
    fn induced_model_negates_away_the_negation() {
        let setup = pair_setup();
        let induced = setup.induce().unwrap();
        let io = induced.model.io_channel().unwrap();
        // B2 copies A2.
        assert_eq!(io.entry(0, 0), Rat::one());
        assert_eq!(io.entry(1, 1), Rat::one());
    }

    #[test]
    fn non_split_isomorphism_is_rejected() {
        let m1 = negated_pair();
        let dom = m1.dag().all_wires();
        let cod = WireList::new(vec![var("A2"), var("B2")]);
        // B2 mixes the input into the non-input coordinate.
        let phi = Channel::deterministic(dom, cod, |a| vec![a[0], a[0] ^ a[1]]);
        let setup = IsoSetup::new(m1, phi, ["A2".to_string()].into_iter().collect()).unwrap();
        assert!(matches!(
            setup.induce(),
            Err(DistributedError::Model(ModelError::NotSplit { .. }))
        ));
    }

    #[test]
    fn iso_cca_do_flavor_holds_and_agrees() {
        let setup = pair_setup();
        let report = check_iso_cca(
            &setup,
            &high_pair(false),
            &pair_align(),
            DistributedFlavor::Constructive,
            &CheckOptions::default(),
        )
        .unwrap();
        assert!(report.dual_route.holds, "{:?}", report.dual_route.witnesses);
        assert!(report.squares.holds, "{:?}", report.squares.witnesses);
        assert!(report.composite.holds, "{:?}", report.composite.witnesses);
        assert!(report.agree);
    }

    #[test]
    fn iso_cca_do_flavor_rejects_wrong_high_model() {
        let setup = pair_setup();
        let report = check_iso_cca(
            &setup,
            &high_pair(true),
            &pair_align(),
            DistributedFlavor::Constructive,
            &CheckOptions::default(),
        )
        .unwrap();
        assert!(report.dual_route.holds);
        assert!(!report.squares.holds);
        assert!(!report.composite.holds);
        assert!(report.agree);
    }

    #[test]
    fn iso_cca_interchange_flavor_holds_and_agrees() {
        let setup = pair_setup();
        let report = check_iso_cca(
            &setup,
            &high_pair(false),
            &pair_align(),
            DistributedFlavor::Interchange,
            &CheckOptions::default(),
        )
        .unwrap();
        assert!(report.dual_route.holds, "{:?}", report.dual_route.witnesses);
        assert!(report.squares.holds, "{:?}", report.squares.witnesses);
        assert!(report.composite.holds, "{:?}", report.composite.witnesses);
        assert!(report.agree);
    }
}
