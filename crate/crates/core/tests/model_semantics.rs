//! Network evaluation against brute-force enumeration, plus the two facts that
//! justify evaluating acyclic networks by substitution: every input assignment
//! of a deterministic model admits exactly one consistent joint assignment, and
//! closing the one-step update map in a feedback loop recovers the io channel.

mod common;

use std::collections::BTreeSet;

use causalign::model::{CausalModel, Intervention};
use causalign::oracle::{feed_suffix_by_enumeration, io_by_enumeration, joint_by_enumeration};
use causalign::scalar::Rat;
use causalign::stoch::Channel;
use common::{det_endo_model, det_endo_model_interleaved, five_var_model, r};

#[test]
fn io_matches_brute_force_enumeration() {
    let m = five_var_model();
    let fast = m.io_channel().unwrap();
    let slow = io_by_enumeration(&m).unwrap();
    assert!(fast.max_deviation(&slow).unwrap().exact_equal);
}

#[test]
fn io_has_the_hand_computed_entries() {
    let m = five_var_model();
    let io = m.io_channel().unwrap();
    // U=0, W=0: X = 0, T = [Y >= 1] with Y in {1,2} half the time.
    let x00 = io.dom().flat_index(&[0, 0]);
    assert_eq!(io.entry(io.cod().flat_index(&[1, 0]), x00), r(1, 2));
    assert_eq!(io.entry(io.cod().flat_index(&[0, 0]), x00), r(1, 2));
    // U=0, W=1: X = 1, Y >= 1 surely, so T = 1 xor 1 = 0 surely.
    let x01 = io.dom().flat_index(&[0, 1]);
    assert_eq!(io.entry(io.cod().flat_index(&[0, 1]), x01), r(1, 1));
}

#[test]
fn joint_distribution_matches_brute_force() {
    let m = five_var_model();
    let slow = joint_by_enumeration(&m).unwrap();
    // The joint marginalised onto the outputs is the io channel.
    let out_names: Vec<&str> = vec!["T", "X"];
    let marg = slow.marginalize_to(&out_names).unwrap();
    let io = m.io_channel().unwrap().with_cod_order(marg.cod()).unwrap();
    assert!(marg.max_deviation(&io).unwrap().exact_equal);
    // Its columns are normalised.
    assert!(slow.assert_kind(causalign::stoch::ChannelKind::Stochastic, 0.0).is_ok());
}

#[test]
fn opened_models_match_suffix_feeding() {
    let m = five_var_model();
    let targets: BTreeSet<String> = ["Y".to_string()].into();
    let opened = m.open_model(&targets).unwrap();
    let opened_io = opened.io_channel().unwrap();
    for y in 0..3 {
        let fed = feed_suffix_by_enumeration(&opened_io, &[y]).unwrap();
        let slow = io_by_enumeration(&opened).unwrap();
        let fed_slow = feed_suffix_by_enumeration(&slow, &[y]).unwrap();
        assert!(fed.max_deviation(&fed_slow).unwrap().exact_equal);
    }
}

#[test]
fn interventions_replace_mechanisms() {
    let m = five_var_model();
    let iv = Intervention::do_values(m.dag(), &[("Y".to_string(), 2)].into()).unwrap();
    let intervened = m.apply_intervention(&iv).unwrap();
    let fast = intervened.io_channel().unwrap();
    let slow = io_by_enumeration(&intervened).unwrap();
    assert!(fast.max_deviation(&slow).unwrap().exact_equal);
    // With Y clamped to 2, T = 1 xor W ignores U entirely.
    for u in 0..2 {
        for w in 0..2 {
            let x = fast.dom().flat_index(&[u, w]);
            let t = (1 + w) % 2;
            let xv = (u + w) % 2;
            assert_eq!(fast.entry(fast.cod().flat_index(&[t, xv]), x), r(1, 1));
        }
    }
}

fn unique_fixed_points(model: &CausalModel<Rat>) {
    let f = model.parallel_mechanism().unwrap();
    let all = model.dag().all_wires();
    let input_positions: Vec<usize> = model
        .dag()
        .input_order()
        .iter()
        .map(|n| all.position(n).unwrap())
        .collect();
    let inputs = model.dag().input_wires();
    let io = model.io_channel().unwrap();
    let out_positions: Vec<usize> =
        io.cod().vars().iter().map(|v| all.position(&v.name).unwrap()).collect();
    let mut counts = vec![0usize; inputs.total_card()];
    for x in 0..all.total_card() {
        if f.deterministic_value(x, 0.0) == Some(x) {
            let joint = all.assignment(x);
            let key: Vec<usize> = input_positions.iter().map(|&p| joint[p]).collect();
            counts[inputs.flat_index(&key)] += 1;
            // The fixed point projects onto exactly what the io channel reports.
            let outs: Vec<usize> = out_positions.iter().map(|&p| joint[p]).collect();
            assert_eq!(
                io.entry(io.cod().flat_index(&outs), inputs.flat_index(&key)),
                r(1, 1)
            );
        }
    }
    assert!(counts.iter().all(|&c| c == 1), "fixed points per input: {counts:?}");
}

#[test]
fn deterministic_models_have_unique_fixed_points() {
    unique_fixed_points(&det_endo_model());
    unique_fixed_points(&det_endo_model_interleaved());
}

fn trace_recovers_io(model: &CausalModel<Rat>) {
    let f = model.parallel_mechanism().unwrap();
    let inputs = model.dag().input_wires();
    let nin_names = model.dag().non_inputs();
    let nin = model.dag().wires(&nin_names).unwrap();
    let loop_order = inputs.concat(&nin);
    let arranged = f
        .with_dom_order(&loop_order)
        .unwrap()
        .with_cod_order(&loop_order)
        .unwrap();
    let split = Channel::<Rat>::discard(&inputs).tensor(&Channel::copy_all(&nin));
    let looped = arranged.then(&split).unwrap();
    let traced = looped.feedback_trace(nin.len()).unwrap();
    let io = model.io_channel().unwrap();
    assert!(traced.max_deviation(&io).unwrap().exact_equal);
}

#[test]
fn feedback_on_the_one_step_update_recovers_io() {
    trace_recovers_io(&det_endo_model());
    trace_recovers_io(&det_endo_model_interleaved());
}

#[test]
fn parallel_channels_reconstruct_their_model() {
    let m = det_endo_model();
    let f = m.parallel_mechanism().unwrap();
    let rebuilt = CausalModel::from_parallel_channel(&f).unwrap();
    assert_eq!(rebuilt.dag().inputs(), m.dag().inputs());
    assert_eq!(rebuilt.dag().non_inputs(), m.dag().non_inputs());
    let io_a = m.io_channel().unwrap();
    let io_b = rebuilt.io_channel().unwrap();
    assert!(io_a.max_deviation(&io_b).unwrap().exact_equal);
}
