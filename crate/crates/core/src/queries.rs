//! Query families evaluated against causal models.
//!
//! A [`Query`] denotes a channel derived from a model:
//!
//! - [`Query::Io`]: the plain input-output behaviour, marginalised onto chosen outputs;
//! - [`Query::OpenedDo`]: the behaviour after deleting the mechanisms of a target set,
//!   leaving the targets as extra inputs ("abstract" interventional queries);
//! - [`Query::SharpDo`]: the same with the targets fed fixed values;
//! - [`Query::Interchange`]: `n` independent copies of the model each produce the
//!   values of one target group, which are then fed into an opened copy — the query
//!   whose degeneracy properties detect when interventions commute with observation;
//! - [`Query::SharpInterchange`]: the interchange query with each branch's inputs fixed;
//! - [`Query::Counterfactual`] / [`Query::SharpCounterfactual`]: several hypothetical
//!   worlds share one sample of the noise variables of a functional model; each world
//!   applies its own mechanism replacement and reports its own outputs.
//!
//! Counterfactual queries need access to noise and therefore evaluate only against a
//! [`FunctionalCausalModel`]; the other families work for any [`CausalModel`].
//! [`enumerate_queries`] and [`enumerate_cf_queries`] list the queries of a family up
//! to size bounds, in a deterministic order (subsets by size, then lexicographically).

use std::collections::{BTreeMap, BTreeSet};

use itertools::Itertools;
use thiserror::Error;

use crate::model::{CausalModel, FunctionalCausalModel, ModelError};
use crate::scalar::Scalar;
use crate::stoch::{Channel, StochError, WireList};

#[derive(Debug, Error)]
pub enum QueryError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Stoch(#[from] StochError),
    #[error("counterfactual queries need a functional model with explicit noise")]
    NeedsFunctionalModel,
    #[error("interchange groups must be nonempty and pairwise disjoint: {0}")]
    BadGroups(String),
    #[error("query targets `{0}` must be non-input variables")]
    NotIntervenable(String),
    #[error("query outputs `{0}` must be model outputs")]
    NotObservable(String),
    #[error("value {value} out of range for `{var}`")]
    ValueOutOfRange { var: String, value: usize },
    #[error("counterfactual query needs at least one world")]
    NoWorlds,
}

/// One hypothetical world of a counterfactual query: open `targets` and observe
/// `outputs`, under noise shared with the other worlds.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CfWorld {
    pub targets: BTreeSet<String>,
    pub outputs: BTreeSet<String>,
}

/// A query against a model; see the module docs for the intended reading.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Query {
    Io {
        outputs: BTreeSet<String>,
    },
    OpenedDo {
        targets: BTreeSet<String>,
        outputs: BTreeSet<String>,
    },
    SharpDo {
        values: BTreeMap<String, usize>,
        outputs: BTreeSet<String>,
    },
    Interchange {
        groups: Vec<BTreeSet<String>>,
        outputs: BTreeSet<String>,
    },
    SharpInterchange {
        groups: Vec<(BTreeSet<String>, BTreeMap<String, usize>)>,
        outputs: BTreeSet<String>,
    },
    Counterfactual {
        worlds: Vec<CfWorld>,
    },
    SharpCounterfactual {
        worlds: Vec<(BTreeMap<String, usize>, BTreeSet<String>)>,
    },
}

fn fmt_set(s: &BTreeSet<String>) -> String {
    s.iter().join(",")
}

fn fmt_values(v: &BTreeMap<String, usize>) -> String {
    v.iter().map(|(k, x)| format!("{k}={x}")).join(",")
}

impl Query {
    /// Compact label used in witnesses and reports.
    pub fn describe(&self) -> String {
        match self {
            Query::Io { outputs } => format!("io[{}]", fmt_set(outputs)),
            Query::OpenedDo { targets, outputs } => {
                format!("open({})[{}]", fmt_set(targets), fmt_set(outputs))
            }
            Query::SharpDo { values, outputs } => {
                format!("do({})[{}]", fmt_values(values), fmt_set(outputs))
            }
            Query::Interchange { groups, outputs } => format!(
                "interchange({})[{}]",
                groups.iter().map(fmt_set).join(" | "),
                fmt_set(outputs)
            ),
            Query::SharpInterchange { groups, outputs } => format!(
                "interchange({})[{}]",
                groups
                    .iter()
                    .map(|(g, v)| format!("{}@{}", fmt_set(g), fmt_values(v)))
                    .join(" | "),
                fmt_set(outputs)
            ),
            Query::Counterfactual { worlds } => format!(
                "worlds({})",
                worlds
                    .iter()
                    .map(|w| format!("open({})[{}]", fmt_set(&w.targets), fmt_set(&w.outputs)))
                    .join(" | ")
            ),
            Query::SharpCounterfactual { worlds } => format!(
                "worlds({})",
                worlds
                    .iter()
                    .map(|(v, o)| format!("do({})[{}]", fmt_values(v), fmt_set(o)))
                    .join(" | ")
            ),
        }
    }
}

fn check_intervenable<S: Scalar>(
    model: &CausalModel<S>,
    targets: &BTreeSet<String>,
) -> Result<(), QueryError> {
    for t in targets {
        model.dag().var(t)?;
        if model.dag().is_input(t) {
            return Err(QueryError::NotIntervenable(t.clone()));
        }
    }
    Ok(())
}

fn check_observable<S: Scalar>(
    model: &CausalModel<S>,
    outputs: &BTreeSet<String>,
) -> Result<(), QueryError> {
    for o in outputs {
        if !model.dag().outputs().contains(o) {
            return Err(QueryError::NotObservable(o.clone()));
        }
    }
    Ok(())
}

fn check_groups(groups: &[BTreeSet<String>]) -> Result<(), QueryError> {
    let mut seen: BTreeSet<&String> = BTreeSet::new();
    for g in groups {
        if g.is_empty() {
            return Err(QueryError::BadGroups("a group is empty".into()));
        }
        for v in g {
            if !seen.insert(v) {
                return Err(QueryError::BadGroups(format!("`{v}` appears in two groups")));
            }
        }
    }
    Ok(())
}

fn sharp_for<S: Scalar>(
    model: &CausalModel<S>,
    values: &BTreeMap<String, usize>,
) -> Result<Channel<S>, QueryError> {
    let names: Vec<String> = values.keys().cloned().collect();
    let wires = model.dag().wires(&names)?;
    for (var, &value) in values {
        let card = model.dag().var(var)?.card;
        if value >= card {
            return Err(QueryError::ValueOutOfRange { var: var.clone(), value });
        }
    }
    let vals: Vec<usize> = values.values().copied().collect();
    Ok(Channel::sharp_state(&wires, &vals)?)
}

/// The opened model's io channel restricted to `outputs`; domain is the original
/// inputs followed by the opened targets in canonical order.
fn opened_channel<S: Scalar>(
    model: &CausalModel<S>,
    targets: &BTreeSet<String>,
    outputs: &BTreeSet<String>,
) -> Result<Channel<S>, QueryError> {
    check_intervenable(model, targets)?;
    check_observable(model, outputs)?;
    let opened = model.open_model(targets)?;
    Ok(opened.io_marginal(outputs)?)
}

/// The interchange query: the base model is opened at the union of the groups, and
/// branch `j` supplies the values of group `j` from an independent copy of the model
/// run on its own inputs. Domain: `n + 1` copies of the input wires.
fn interchange_channel<S: Scalar>(
    model: &CausalModel<S>,
    groups: &[BTreeSet<String>],
    outputs: &BTreeSet<String>,
) -> Result<Channel<S>, QueryError> {
    check_groups(groups)?;
    for g in groups {
        check_intervenable(model, g)?;
        // Branch values are read off the model's observable behaviour.
        check_observable(model, g)?;
    }
    check_observable(model, outputs)?;
    let union: BTreeSet<String> = groups.iter().flatten().cloned().collect();
    let opened = opened_channel(model, &union, outputs)?;
    if groups.is_empty() {
        return Ok(opened);
    }
    let io = model.io_channel()?;
    let mut branches: Option<Channel<S>> = None;
    for g in groups {
        let names: Vec<&str> = g.iter().map(|s| s.as_str()).collect();
        let branch = io.marginalize_to(&names)?;
        branches = Some(match branches {
            None => branch,
            Some(b) => b.tensor(&branch),
        });
    }
    let branches = branches.expect("nonempty groups");
    let inputs = model.dag().input_wires();
    let assembled = Channel::identity(inputs).tensor(&branches);
    // Reorder the group part of the codomain to the canonical order of the union.
    let target = model
        .dag()
        .input_wires()
        .concat(&model.dag().wires(&union.iter().cloned().collect::<Vec<_>>())?);
    let assembled = assembled.with_cod_order(&target)?;
    Ok(assembled.then(&opened)?)
}

/// Evaluate a query against a model. Counterfactual queries are rejected here; use
/// [`eval_fcm_query`] for those.
pub fn eval_query<S: Scalar>(
    model: &CausalModel<S>,
    query: &Query,
) -> Result<Channel<S>, QueryError> {
    match query {
        Query::Io { outputs } => {
            check_observable(model, outputs)?;
            Ok(model.io_marginal(outputs)?)
        }
        Query::OpenedDo { targets, outputs } => opened_channel(model, targets, outputs),
        Query::SharpDo { values, outputs } => {
            let targets: BTreeSet<String> = values.keys().cloned().collect();
            let opened = opened_channel(model, &targets, outputs)?;
            let sharp = sharp_for(model, values)?;
            let feed = Channel::identity(model.dag().input_wires()).tensor(&sharp);
            Ok(feed.then(&opened)?)
        }
        Query::Interchange { groups, outputs } => interchange_channel(model, groups, outputs),
        Query::SharpInterchange { groups, outputs } => {
            let abstract_groups: Vec<BTreeSet<String>> =
                groups.iter().map(|(g, _)| g.clone()).collect();
            let q = interchange_channel(model, &abstract_groups, outputs)?;
            // Fix each branch's inputs; the first input block stays free.
            let inputs = model.dag().input_wires();
            let mut feed = Channel::identity(inputs.clone());
            for (_, branch_inputs) in groups {
                for (var, &value) in branch_inputs {
                    if model.dag().var(var).is_err() || !model.dag().is_input(var) {
                        return Err(QueryError::BadGroups(format!(
                            "`{var}` is not an input variable"
                        )));
                    }
                    let card = model.dag().var(var)?.card;
                    if value >= card {
                        return Err(QueryError::ValueOutOfRange { var: var.clone(), value });
                    }
                }
                let values: Vec<usize> = {
                    let by_name: BTreeMap<&str, usize> =
                        branch_inputs.iter().map(|(k, &v)| (k.as_str(), v)).collect();
                    model
                        .dag()
                        .input_order()
                        .iter()
                        .map(|n| {
                            by_name.get(n.as_str()).copied().ok_or_else(|| {
                                QueryError::BadGroups(format!(
                                    "branch needs a value for input `{n}`"
                                ))
                            })
                        })
                        .collect::<Result<_, _>>()?
                };
                let sharp = Channel::sharp_state(&inputs, &values)?;
                feed = feed.tensor(&sharp);
            }
            Ok(feed.then(&q)?)
        }
        Query::Counterfactual { .. } | Query::SharpCounterfactual { .. } => {
            Err(QueryError::NeedsFunctionalModel)
        }
    }
}

/// Evaluate a query against a functional model. Counterfactual families use the
/// deterministic part with shared noise; the other families are evaluated on the
/// ordinary model obtained by folding the noise into the mechanisms.
pub fn eval_fcm_query<S: Scalar>(
    fcm: &FunctionalCausalModel<S>,
    query: &Query,
) -> Result<Channel<S>, QueryError> {
    match query {
        Query::Counterfactual { worlds } => {
            let worlds: Vec<(Option<&BTreeMap<String, usize>>, &CfWorld)> =
                worlds.iter().map(|w| (None, w)).collect();
            counterfactual_channel(fcm, &worlds)
        }
        Query::SharpCounterfactual { worlds } => {
            let owned: Vec<CfWorld> = worlds
                .iter()
                .map(|(values, outputs)| CfWorld {
                    targets: values.keys().cloned().collect(),
                    outputs: outputs.clone(),
                })
                .collect();
            let paired: Vec<(Option<&BTreeMap<String, usize>>, &CfWorld)> = worlds
                .iter()
                .zip(owned.iter())
                .map(|((values, _), world)| (Some(values), world))
                .collect();
            counterfactual_channel(fcm, &paired)
        }
        _ => Ok(eval_query(&fcm.to_causal_model(0.0)?, query)?),
    }
}

/// Assemble the multi-world channel: one copy of the joint noise is shared by every
/// world, world `j` opens its own targets and reports its own outputs. Worlds with
/// sharp values contribute no free wires; abstract worlds expose their targets.
fn counterfactual_channel<S: Scalar>(
    fcm: &FunctionalCausalModel<S>,
    worlds: &[(Option<&BTreeMap<String, usize>>, &CfWorld)],
) -> Result<Channel<S>, QueryError> {
    if worlds.is_empty() {
        return Err(QueryError::NoWorlds);
    }
    let det = fcm.deterministic_part()?;
    let noise_wires = fcm.exo_wires();
    let m = worlds.len();

    // Per-world channels `U (x) W_j -> Y_j` (or `U -> Y_j` once values are fed).
    let mut world_channels: Vec<Channel<S>> = Vec::with_capacity(m);
    let mut free_wires = WireList::unit();
    for (values, world) in worlds {
        let opened = det.open_model(&world.targets)?;
        let mut chan = opened.io_marginal(&world.outputs)?;
        if let Some(values) = values {
            let target_names: Vec<String> = world.targets.iter().cloned().collect();
            let target_wires = det.dag().wires(&target_names)?;
            let vals: Vec<usize> = target_names
                .iter()
                .map(|n| {
                    values.get(n).copied().ok_or_else(|| QueryError::BadGroups(format!(
                        "world is missing a value for `{n}`"
                    )))
                })
                .collect::<Result<_, _>>()?;
            for (w, &v) in target_wires.vars().iter().zip(vals.iter()) {
                if v >= w.card {
                    return Err(QueryError::ValueOutOfRange { var: w.name.clone(), value: v });
                }
            }
            let sharp = Channel::sharp_state(&target_wires, &vals)?;
            chan = Channel::identity(noise_wires.clone())
                .tensor(&sharp)
                .then(&chan)?;
        } else {
            let target_names: Vec<String> = world.targets.iter().cloned().collect();
            free_wires = free_wires.concat(&det.dag().wires(&target_names)?);
        }
        world_channels.push(chan);
    }

    // Shared noise: lambda copied m times, tensored with the free world inputs.
    let lambda = fcm.joint_noise();
    let copies = lambda.then(&Channel::copy_n(&noise_wires, m))?;
    let pre = copies.tensor(&Channel::identity(free_wires.clone()));
    // pre : free -> U^m ++ free. Rearrange positionally to (U ++ W_1) ++ (U ++ W_2) ...
    let u_len = noise_wires.len();
    let mut perm: Vec<usize> = Vec::new();
    let mut free_cursor = m * u_len;
    for (j, (values, world)) in worlds.iter().enumerate() {
        for k in 0..u_len {
            perm.push(j * u_len + k);
        }
        if values.is_none() {
            let w_len = world.targets.len();
            for k in 0..w_len {
                perm.push(free_cursor + k);
            }
            free_cursor += w_len;
        }
    }
    let arranged = {
        let perm_chan = Channel::<S>::permutation(pre.cod(), &perm)?;
        pre.then(&perm_chan)?
    };

    let mut product: Option<Channel<S>> = None;
    for chan in &world_channels {
        product = Some(match product {
            None => chan.clone(),
            Some(p) => p.tensor(chan),
        });
    }
    Ok(arranged.then(&product.expect("at least one world"))?)
}

/// Bounds for query enumeration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EnumBounds {
    /// Largest target-set size for opened/do queries (and interchange unions).
    pub max_set: usize,
    /// Largest number of interchange groups.
    pub max_groups: usize,
    /// Largest number of counterfactual worlds.
    pub max_worlds: usize,
}

impl Default for EnumBounds {
    fn default() -> Self {
        EnumBounds { max_set: 3, max_groups: 2, max_worlds: 2 }
    }
}

/// The query families subject to enumeration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QueryFamily {
    Observational,
    Interventional,
    Interchange,
    Counterfactual,
}

/// All subsets of `pool` with size `<= max`, ordered by size then lexicographically.
/// Includes the empty set.
pub fn subsets_by_size(pool: &[String], max: usize) -> Vec<BTreeSet<String>> {
    let mut out = Vec::new();
    for size in 0..=max.min(pool.len()) {
        for combo in pool.iter().combinations(size) {
            out.push(combo.into_iter().cloned().collect());
        }
    }
    out
}

/// Enumerate the queries of a family against a model, deterministically ordered.
///
/// Opened/do targets range over non-inputs; interchange groups additionally must be
/// observable since branch values are read from the model's outputs. Counterfactual
/// families are not meaningful here and come back empty — use
/// [`enumerate_cf_queries`].
pub fn enumerate_queries<S: Scalar>(
    model: &CausalModel<S>,
    family: QueryFamily,
    bounds: &EnumBounds,
) -> Vec<Query> {
    let outputs = model.dag().outputs().clone();
    match family {
        QueryFamily::Observational => vec![Query::Io { outputs }],
        QueryFamily::Interventional => {
            let pool = model.dag().non_inputs();
            subsets_by_size(&pool, bounds.max_set)
                .into_iter()
                .map(|targets| Query::OpenedDo { targets, outputs: outputs.clone() })
                .collect()
        }
        QueryFamily::Interchange => {
            let pool: Vec<String> = model
                .dag()
                .non_inputs()
                .into_iter()
                .filter(|v| outputs.contains(v))
                .collect();
            let nonempty: Vec<BTreeSet<String>> = subsets_by_size(&pool, bounds.max_set)
                .into_iter()
                .filter(|s| !s.is_empty())
                .collect();
            let mut queries = vec![Query::Interchange { groups: vec![], outputs: outputs.clone() }];
            let mut stack: Vec<Vec<BTreeSet<String>>> =
                nonempty.iter().map(|s| vec![s.clone()]).collect();
            while let Some(groups) = stack.pop() {
                let union_size: usize = groups.iter().map(|g| g.len()).sum();
                if union_size > bounds.max_set {
                    continue;
                }
                if groups.len() < bounds.max_groups {
                    for s in &nonempty {
                        if groups.iter().all(|g| g.is_disjoint(s)) {
                            let mut next = groups.clone();
                            next.push(s.clone());
                            stack.push(next);
                        }
                    }
                }
                queries.push(Query::Interchange { groups, outputs: outputs.clone() });
            }
            // Stack order is exploration-dependent; normalise.
            queries.sort_by_key(|q| match q {
                Query::Interchange { groups, .. } => {
                    (groups.len(), format!("{groups:?}"))
                }
                _ => (0, String::new()),
            });
            queries
        }
        QueryFamily::Counterfactual => Vec::new(),
    }
}

/// Enumerate counterfactual queries: `m` worlds, each opening one subset of the
/// endogenous variables and observing all of them.
pub fn enumerate_cf_queries<S: Scalar>(
    fcm: &FunctionalCausalModel<S>,
    bounds: &EnumBounds,
) -> Vec<Query> {
    let endo = fcm.endo_names();
    let all: BTreeSet<String> = endo.iter().cloned().collect();
    let world_choices = subsets_by_size(&endo, endo.len());
    let mut queries = Vec::new();
    for m in 1..=bounds.max_worlds {
        for combo in (0..m)
            .map(|_| world_choices.iter())
            .multi_cartesian_product()
        {
            let worlds: Vec<CfWorld> = combo
                .into_iter()
                .map(|targets| CfWorld { targets: targets.clone(), outputs: all.clone() })
                .collect();
            queries.push(Query::Counterfactual { worlds });
        }
    }
    queries
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::OpenDag;
    use crate::scalar::Rat;
    use crate::stoch::FinVar;

    fn var(name: &str, card: usize) -> FinVar {
        FinVar::new(name, card)
    }

    fn chain_model() -> CausalModel<Rat> {
        // I input; X = I with a 1/4 flip; Y = X; outputs X, Y.
        let vars = vec![var("I", 2), var("X", 2), var("Y", 2)];
        let dag =
            OpenDag::new(vars, &["I"], &["X", "Y"], &[("I", "X"), ("X", "Y")]).unwrap();
        let mut mechanisms = BTreeMap::new();
        mechanisms.insert(
            "X".to_string(),
            Channel::from_fn(
                WireList::single(var("I", 2)),
                WireList::single(var("X", 2)),
                crate::stoch::ChannelKind::Stochastic,
                |a| {
                    vec![
                        (a[0], Rat::from_ratio(3, 4)),
                        (1 - a[0], Rat::from_ratio(1, 4)),
                    ]
                },
            ),
        );
        mechanisms.insert(
            "Y".to_string(),
            Channel::deterministic(
                WireList::single(var("X", 2)),
                WireList::single(var("Y", 2)),
                |a| vec![a[0]],
            ),
        );
        CausalModel::new(dag, mechanisms, 0.0).unwrap()
    }

    #[test]
    fn sharp_do_agrees_with_model_surgery() {
        let m = chain_model();
        let q = Query::SharpDo {
            values: [("X".to_string(), 1usize)].into_iter().collect(),
            outputs: m.dag().outputs().clone(),
        };
        let by_opening = eval_query(&m, &q).unwrap();
        let iv = crate::model::Intervention::do_values(
            m.dag(),
            &[("X".to_string(), 1usize)].into_iter().collect(),
        )
        .unwrap();
        let by_surgery = m.apply_intervention(&iv).unwrap().io_channel().unwrap();
        assert!(by_opening.eq_tol(&by_surgery, 0.0).unwrap());
    }

    #[test]
    fn empty_interchange_is_the_io_query() {
        let m = chain_model();
        let io = eval_query(&m, &Query::Io { outputs: m.dag().outputs().clone() }).unwrap();
        let q = eval_query(
            &m,
            &Query::Interchange { groups: vec![], outputs: m.dag().outputs().clone() },
        )
        .unwrap();
        assert!(io.eq_tol(&q, 0.0).unwrap());
    }

    #[test]
    fn interchange_feeds_branch_values_into_opened_model() {
        let m = chain_model();
        let q = Query::Interchange {
            groups: vec![["X".to_string()].into_iter().collect()],
            outputs: ["Y".to_string()].into_iter().collect(),
        };
        let chan = eval_query(&m, &q).unwrap();
        // Domain: two copies of I. Branch computes X from the second copy, the opened
        // model maps X straight to Y, so Y follows the second input's X-distribution.
        assert_eq!(chan.dom().names(), vec!["I", "I"]);
        assert_eq!(chan.cod().names(), vec!["Y"]);
        // (I=0, I'=1): P(Y=1) = P(X=1 | I'=1) = 3/4.
        assert_eq!(chan.entry(1, 1), Rat::from_ratio(3, 4));
        // First input is irrelevant once Y's only ancestor is supplied by the branch.
        assert_eq!(chan.entry(1, 3), Rat::from_ratio(3, 4));
    }

    #[test]
    fn sharp_interchange_pins_branch_inputs() {
        let m = chain_model();
        let q = Query::SharpInterchange {
            groups: vec![(
                ["X".to_string()].into_iter().collect(),
                [("I".to_string(), 1usize)].into_iter().collect(),
            )],
            outputs: ["Y".to_string()].into_iter().collect(),
        };
        let chan = eval_query(&m, &q).unwrap();
        // Only the free input block remains in the domain.
        assert_eq!(chan.dom().names(), vec!["I"]);
        // Y follows the branch's X-distribution regardless of the free input.
        assert_eq!(chan.entry(1, 0), Rat::from_ratio(3, 4));
        assert_eq!(chan.entry(1, 1), Rat::from_ratio(3, 4));

        let missing = Query::SharpInterchange {
            groups: vec![(["X".to_string()].into_iter().collect(), BTreeMap::new())],
            outputs: ["Y".to_string()].into_iter().collect(),
        };
        assert!(matches!(eval_query(&m, &missing), Err(QueryError::BadGroups(_))));
    }

    #[test]
    fn groups_must_be_disjoint_and_nonempty() {
        let m = chain_model();
        let dup = Query::Interchange {
            groups: vec![
                ["X".to_string()].into_iter().collect(),
                ["X".to_string()].into_iter().collect(),
            ],
            outputs: ["Y".to_string()].into_iter().collect(),
        };
        assert!(matches!(eval_query(&m, &dup), Err(QueryError::BadGroups(_))));
        let empty = Query::Interchange {
            groups: vec![BTreeSet::new()],
            outputs: ["Y".to_string()].into_iter().collect(),
        };
        assert!(matches!(eval_query(&m, &empty), Err(QueryError::BadGroups(_))));
    }

    fn coin_pair_fcm() -> FunctionalCausalModel<Rat> {
        // X = U (biased 3/4 on 0); Y = X.
        let endo = vec![var("X", 2), var("Y", 2)];
        let exo: BTreeMap<String, FinVar> = [
            ("X".to_string(), var("UX", 2)),
            ("Y".to_string(), var("UY", 1)),
        ]
        .into_iter()
        .collect();
        let noise: BTreeMap<String, Channel<Rat>> = [
            (
                "X".to_string(),
                Channel::state(
                    &WireList::single(var("UX", 2)),
                    vec![(0, Rat::from_ratio(3, 4)), (1, Rat::from_ratio(1, 4))],
                    0.0,
                )
                .unwrap(),
            ),
            (
                "Y".to_string(),
                Channel::state(&WireList::single(var("UY", 1)), vec![(0, Rat::one())], 0.0)
                    .unwrap(),
            ),
        ]
        .into_iter()
        .collect();
        let functions: BTreeMap<String, Channel<Rat>> = [
            (
                "X".to_string(),
                Channel::deterministic(
                    WireList::single(var("UX", 2)),
                    WireList::single(var("X", 2)),
                    |a| vec![a[0]],
                ),
            ),
            (
                "Y".to_string(),
                Channel::deterministic(
                    WireList::new(vec![var("X", 2), var("UY", 1)]),
                    WireList::single(var("Y", 2)),
                    |a| vec![a[0]],
                ),
            ),
        ]
        .into_iter()
        .collect();
        let parents: BTreeMap<String, Vec<String>> = [
            ("X".to_string(), vec![]),
            ("Y".to_string(), vec!["X".to_string()]),
        ]
        .into_iter()
        .collect();
        FunctionalCausalModel::new(endo, exo, noise, functions, parents, 0.0).unwrap()
    }

    #[test]
    fn shared_noise_couples_counterfactual_worlds() {
        let fcm = coin_pair_fcm();
        // World 1: observe everything untouched. World 2: force X = 1, observe Y.
        let q = Query::SharpCounterfactual {
            worlds: vec![
                (BTreeMap::new(), ["X".to_string(), "Y".to_string()].into_iter().collect()),
                (
                    [("X".to_string(), 1usize)].into_iter().collect(),
                    ["Y".to_string()].into_iter().collect(),
                ),
            ],
        };
        let chan = eval_fcm_query(&fcm, &q).unwrap();
        assert!(chan.dom().is_empty());
        assert_eq!(chan.cod().names(), vec!["X", "Y", "Y"]);
        // Factual X = Y = U; forced world always has Y = 1.
        // P(X=0, Y=0, Y'=1) = 3/4; P(X=1, Y=1, Y'=1) = 1/4.
        assert_eq!(chan.entry(0b001, 0), Rat::from_ratio(3, 4));
        assert_eq!(chan.entry(0b111, 0), Rat::from_ratio(1, 4));
        // Worlds disagreeing with the shared noise never occur.
        assert_eq!(chan.entry(0b000, 0), Rat::zero());
    }

    #[test]
    fn abstract_worlds_expose_their_targets_as_inputs() {
        let fcm = coin_pair_fcm();
        let q = Query::Counterfactual {
            worlds: vec![
                CfWorld {
                    targets: BTreeSet::new(),
                    outputs: ["Y".to_string()].into_iter().collect(),
                },
                CfWorld {
                    targets: ["X".to_string()].into_iter().collect(),
                    outputs: ["Y".to_string()].into_iter().collect(),
                },
            ],
        };
        let chan = eval_fcm_query(&fcm, &q).unwrap();
        assert_eq!(chan.dom().names(), vec!["X"]);
        assert_eq!(chan.cod().names(), vec!["Y", "Y"]);
        // Feeding X'=1: factual Y = U, hypothetical Y' = 1.
        assert_eq!(chan.entry(0b01, 1), Rat::from_ratio(3, 4));
        assert_eq!(chan.entry(0b11, 1), Rat::from_ratio(1, 4));
    }

    #[test]
    fn enumeration_is_deterministic_and_bounded() {
        let m = chain_model();
        let bounds = EnumBounds::default();
        let dos = enumerate_queries(&m, QueryFamily::Interventional, &bounds);
        // Subsets of {X, Y} by size: {}, {X}, {Y}, {X,Y}.
        assert_eq!(dos.len(), 4);
        assert_eq!(
            dos[1],
            Query::OpenedDo {
                targets: ["X".to_string()].into_iter().collect(),
                outputs: m.dag().outputs().clone(),
            }
        );
        let inter = enumerate_queries(&m, QueryFamily::Interchange, &bounds);
        // Empty tuple, 3 singleton tuples, and ordered disjoint pairs ({X}),({Y}).
        assert!(inter.iter().any(|q| matches!(q, Query::Interchange { groups, .. } if groups.is_empty())));
        assert!(inter.len() > 4);
        let again = enumerate_queries(&m, QueryFamily::Interchange, &bounds);
        assert_eq!(inter, again);
    }
}
