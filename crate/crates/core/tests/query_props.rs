//! Relationships between the query families: sharp interventions factor through
//! opened models, interchange queries degenerate to io behaviour without
//! groups and decompose into branch laws with one group, intervention tables
//! compose with left precedence, and counterfactual worlds reduce to
//! interventions when run alone while sharing noise when run together.

mod common;

use std::collections::{BTreeMap, BTreeSet};

use causalign::model::Intervention;
use causalign::queries::{
    enumerate_queries, eval_fcm_query, eval_query, CfWorld, EnumBounds, Query, QueryFamily,
};
use causalign::scalar::Rat;
use causalign::stoch::Channel;
use common::{fcm_fixture, five_var_model};

fn set(names: &[&str]) -> BTreeSet<String> {
    names.iter().map(|s| s.to_string()).collect()
}

#[test]
fn sharp_interventions_factor_through_opened_models() {
    let m = five_var_model();
    let cases: Vec<BTreeMap<String, usize>> = {
        let mut cs = Vec::new();
        for y in 0..3 {
            cs.push([("Y".to_string(), y)].into());
        }
        for x in 0..2 {
            for y in 0..3 {
                cs.push([("X".to_string(), x), ("Y".to_string(), y)].into());
            }
        }
        cs
    };
    for values in cases {
        let targets: BTreeSet<String> = values.keys().cloned().collect();
        let outputs = set(&["T", "X"]);
        let sharp = eval_query(&m, &Query::SharpDo { values: values.clone(), outputs: outputs.clone() })
            .unwrap();
        let opened = eval_query(&m, &Query::OpenedDo { targets: targets.clone(), outputs }).unwrap();
        // The opened channel's extra wires sit after the inputs, in name order.
        let target_names: Vec<String> = targets.iter().cloned().collect();
        let target_wires = m.dag().wires(&target_names).unwrap();
        let vals: Vec<usize> = target_names.iter().map(|n| values[n]).collect();
        let feed = Channel::identity(m.dag().input_wires())
            .tensor(&Channel::sharp_state(&target_wires, &vals).unwrap());
        let manual = feed.then(&opened).unwrap();
        assert!(sharp.max_deviation(&manual).unwrap().exact_equal);
    }
}

#[test]
fn interchange_without_groups_is_io() {
    let m = five_var_model();
    let outputs = set(&["T", "X"]);
    let empty = eval_query(&m, &Query::Interchange { groups: vec![], outputs: outputs.clone() })
        .unwrap();
    let io = eval_query(&m, &Query::Io { outputs }).unwrap();
    assert!(empty.max_deviation(&io).unwrap().exact_equal);
}

#[test]
fn one_group_interchange_runs_the_branch_law_into_the_opened_model() {
    let m = five_var_model();
    let outputs = set(&["T", "X"]);
    let q = eval_query(
        &m,
        &Query::Interchange { groups: vec![set(&["X"])], outputs: outputs.clone() },
    )
    .unwrap();
    let branch = m.io_channel().unwrap().marginalize_to(&["X"]).unwrap();
    let opened = eval_query(&m, &Query::OpenedDo { targets: set(&["X"]), outputs }).unwrap();
    let manual = Channel::identity(m.dag().input_wires())
        .tensor(&branch)
        .then(&opened)
        .unwrap();
    assert!(q.max_deviation(&manual).unwrap().exact_equal);
}

#[test]
fn sharp_interchange_pins_each_branch() {
    let m = five_var_model();
    let outputs = set(&["T", "X"]);
    let pins: BTreeMap<String, usize> = [("U".to_string(), 1), ("W".to_string(), 0)].into();
    let sharp = eval_query(
        &m,
        &Query::SharpInterchange {
            groups: vec![(set(&["X"]), pins)],
            outputs: outputs.clone(),
        },
    )
    .unwrap();
    let abstract_q =
        eval_query(&m, &Query::Interchange { groups: vec![set(&["X"])], outputs }).unwrap();
    let feed = Channel::identity(m.dag().input_wires())
        .tensor(&Channel::sharp_state(&m.dag().input_wires(), &[1, 0]).unwrap());
    let manual = feed.then(&abstract_q).unwrap();
    assert!(sharp.max_deviation(&manual).unwrap().exact_equal);
}

#[test]
fn enumeration_is_deterministic_and_bounded() {
    let m = five_var_model();
    let bounds = EnumBounds::default();
    for family in [
        QueryFamily::Observational,
        QueryFamily::Interventional,
        QueryFamily::Interchange,
    ] {
        let a = enumerate_queries(&m, family, &bounds);
        let b = enumerate_queries(&m, family, &bounds);
        assert_eq!(a, b);
        assert!(!a.is_empty());
        for q in &a {
            // Every enumerated query must evaluate.
            eval_query(&m, q).unwrap();
        }
    }
}

#[test]
fn combining_interventions_prefers_the_left_one() {
    let m = five_var_model();
    let a = Intervention::<Rat>::do_values(m.dag(), &[("Y".to_string(), 2)].into()).unwrap();
    let b = Intervention::<Rat>::do_values(
        m.dag(),
        &[("Y".to_string(), 0), ("X".to_string(), 1)].into(),
    )
    .unwrap();
    let combined = m.apply_intervention(&a.combine(&b)).unwrap();
    let sequential = m.apply_intervention(&b).unwrap().apply_intervention(&a).unwrap();
    let io_combined = combined.io_channel().unwrap();
    let io_sequential = sequential.io_channel().unwrap();
    assert!(io_combined.max_deviation(&io_sequential).unwrap().exact_equal);
    // a wins on Y, so the combined io differs from applying b alone.
    let io_b = m.apply_intervention(&b).unwrap().io_channel().unwrap();
    assert!(!io_combined.eq_tol(&io_b, 0.0).unwrap());
}

#[test]
fn single_world_counterfactuals_are_interventions() {
    let fcm = fcm_fixture();
    let world = CfWorld { targets: set(&["X"]), outputs: set(&["Y"]) };
    let cf = eval_fcm_query(&fcm, &Query::Counterfactual { worlds: vec![world] }).unwrap();
    let closed = fcm.to_causal_model(0.0).unwrap();
    let opened =
        eval_query(&closed, &Query::OpenedDo { targets: set(&["X"]), outputs: set(&["Y"]) })
            .unwrap();
    assert!(cf.max_deviation(&opened).unwrap().exact_equal);
}

#[test]
fn parallel_worlds_share_their_noise() {
    let fcm = fcm_fixture();
    let world = CfWorld { targets: set(&["X"]), outputs: set(&["Y"]) };
    let single =
        eval_fcm_query(&fcm, &Query::Counterfactual { worlds: vec![world.clone()] }).unwrap();
    let double =
        eval_fcm_query(&fcm, &Query::Counterfactual { worlds: vec![world.clone(), world] })
            .unwrap();
    let x_wire = single.dom().clone();
    let diagonal = Channel::copy_all(&x_wire).then(&double).unwrap();
    // Both marginals agree with the single world.
    for keep in [0, 1] {
        let marg = diagonal.marginalize(&[keep]).unwrap();
        assert!(marg.max_deviation(&single).unwrap().exact_equal);
    }
    // But the worlds are correlated: under the same intervention they share
    // noise, so the joint is not the product of its marginals.
    let product = Channel::copy_all(&x_wire)
        .then(&single.tensor(&single))
        .unwrap();
    assert!(!diagonal.eq_tol(&product, 0.0).unwrap());
}

#[test]
fn sharp_worlds_match_fed_abstract_worlds() {
    let fcm = fcm_fixture();
    let world = CfWorld { targets: set(&["X"]), outputs: set(&["Y"]) };
    let double =
        eval_fcm_query(&fcm, &Query::Counterfactual { worlds: vec![world.clone(), world] })
            .unwrap();
    let sharp = eval_fcm_query(
        &fcm,
        &Query::SharpCounterfactual {
            worlds: vec![
                ([("X".to_string(), 0)].into(), set(&["Y"])),
                ([("X".to_string(), 1)].into(), set(&["Y"])),
            ],
        },
    )
    .unwrap();
    let feed = Channel::sharp_state(double.dom(), &[0, 1]).unwrap();
    let manual = feed.then(&double).unwrap();
    assert!(sharp.max_deviation(&manual).unwrap().exact_equal);
    // The frozen two-world table: with X forced to 0 and 1 in otherwise
    // identical worlds, both outcomes add the same noise parity, so they are
    // perfectly anticorrelated; the parity itself is even with weight 2/3.
    let y_pair = manual.cod();
    for (y0, y1, expect) in [
        (0, 0, common::r(0, 1)),
        (0, 1, common::r(2, 3)),
        (1, 0, common::r(1, 3)),
        (1, 1, common::r(0, 1)),
    ] {
        assert_eq!(manual.entry(y_pair.flat_index(&[y0, y1]), 0), expect);
    }
}
