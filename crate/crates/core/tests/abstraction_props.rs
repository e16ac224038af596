//! Behaviour of the abstraction checkers on generated model pairs: expansions
//! built to respect an alignment pass every family check, a single perturbed
//! mechanism is always caught with concrete witnesses, alignments stack, and the
//! intervention tables derived from an alignment inherit its guarantees.

use std::collections::{BTreeMap, BTreeSet};

use causalign::abstraction::{
    check_constructive, check_exact_transformation, check_homomorphism, check_interchange,
    check_order_preserving, check_strong_abstraction, map_from_alignment, CheckOptions,
};
use causalign::gen::{expand_with_alignment, rng_for, LatentFlavor};
use causalign::model::{CausalModel, Intervention, OpenDag};
use causalign::scalar::Rat;
use causalign::stoch::{Channel, FinVar, WireList};
use rand::Rng;

const FLAVORS: [LatentFlavor; 3] =
    [LatentFlavor::None, LatentFlavor::Private, LatentFlavor::Shared];

/// `V0 -> V1 -> V2` with every non-input observable: negation then copy.
fn chain3() -> CausalModel<Rat> {
    let dag = OpenDag::new(
        vec![FinVar::new("V0", 2), FinVar::new("V1", 2), FinVar::new("V2", 2)],
        &["V0"],
        &["V1", "V2"],
        &[("V0", "V1"), ("V1", "V2")],
    )
    .unwrap();
    let w = |n: &str| WireList::single(FinVar::new(n, 2));
    let mechs: BTreeMap<String, Channel<Rat>> = [
        ("V1".to_string(), Channel::deterministic(w("V0"), w("V1"), |v| vec![1 - v[0]])),
        ("V2".to_string(), Channel::deterministic(w("V1"), w("V2"), |v| vec![v[0]])),
    ]
    .into();
    CausalModel::new(dag, mechs, 0.0).unwrap()
}

#[test]
fn expansions_pass_the_family_checks() {
    let high = chain3();
    let opts = CheckOptions::default();
    for flavor in FLAVORS {
        for seed in 0..5 {
            let mut rng = rng_for(seed);
            let (low, align) = expand_with_alignment(&mut rng, &high, flavor, false).unwrap();
            let v = check_constructive(&low, &high, &align, &opts).unwrap();
            assert!(v.holds, "{flavor:?} seed {seed}: {:?}", v.witnesses);
            assert_eq!(v.checked, 4, "one square per subset of the two non-inputs");
            let v = check_interchange(&low, &high, &align, &opts).unwrap();
            assert!(v.holds, "{flavor:?} seed {seed}: {:?}", v.witnesses);
            assert!(!v.vacuous);
        }
    }
}

#[test]
fn perturbed_expansions_fail_with_witnesses() {
    let high = chain3();
    let opts = CheckOptions::default();
    for flavor in FLAVORS {
        for seed in 0..5 {
            let mut rng = rng_for(seed);
            let (low, align) = expand_with_alignment(&mut rng, &high, flavor, true).unwrap();
            let v = check_constructive(&low, &high, &align, &opts).unwrap();
            assert!(!v.holds, "{flavor:?} seed {seed} should fail");
            assert!(v.failures > 0);
            let w = &v.witnesses[0];
            assert!(!w.location.is_empty());
            assert!(w.deviation > 0.0);
        }
    }
}

#[test]
fn stacked_expansions_compose() {
    let high = chain3();
    let mut rng = rng_for(42);
    let (mid, mid_align) = expand_with_alignment(&mut rng, &high, LatentFlavor::Private, false)
        .unwrap();
    let (low, low_align) = expand_with_alignment(&mut rng, &mid, LatentFlavor::Shared, false)
        .unwrap();
    let composed = mid_align.compose_over(&low_align).unwrap();
    composed.validate_models(&low, &high, 0.0).unwrap();

    let opts = CheckOptions::default();
    let v = check_constructive(&low, &high, &composed, &opts).unwrap();
    assert!(v.holds, "{:?}", v.witnesses);

    // Pushing sharp values through the composite equals pushing them in stages.
    let low_all = low.dag().all_wires();
    let mid_set: BTreeSet<String> =
        mid.dag().vars().iter().map(|v| v.name.clone()).collect();
    let high_set: BTreeSet<String> =
        high.dag().vars().iter().map(|v| v.name.clone()).collect();
    for _ in 0..8 {
        let flat = rng.gen_range(0..low_all.total_card());
        let joint = low_all.assignment(flat);
        let low_values: BTreeMap<String, usize> = low_all
            .vars()
            .iter()
            .zip(&joint)
            .map(|(v, &x)| (v.name.clone(), x))
            .collect();
        let staged = {
            let mid_values = low_align.push_values(&mid_set, &low_values).unwrap();
            mid_align.push_values(&high_set, &mid_values).unwrap()
        };
        let direct = composed.push_values(&high_set, &low_values).unwrap();
        assert_eq!(staged, direct);
    }
}

#[test]
fn alignment_tables_inherit_exactness() {
    let high = chain3();
    let opts = CheckOptions::default();
    let high_inputs: Vec<String> = high.dag().input_order().to_vec();
    let high_outputs: Vec<String> = high.dag().outputs().iter().cloned().collect();
    for flavor in FLAVORS {
        let mut rng = rng_for(9);
        let (low, align) = expand_with_alignment(&mut rng, &high, flavor, false).unwrap();
        let tau_in = align.tau_map(&low.dag().input_wires(), &high_inputs).unwrap();
        let tau_out = align.tau_map(&low.dag().output_wires(), &high_outputs).unwrap();
        let pairs = map_from_alignment(&low, &high, &align).unwrap();
        let v = check_exact_transformation(&low, &high, &tau_in, &tau_out, &pairs, &opts)
            .unwrap();
        assert!(v.holds, "{flavor:?}: {:?}", v.witnesses);
        assert_eq!(v.failures, 0);
        let v = check_strong_abstraction(&low, &high, &tau_in, &tau_out, &pairs, &opts).unwrap();
        assert!(v.holds, "{flavor:?} strong: {:?}", v.witnesses);

        let mut rng = rng_for(9);
        let (bad_low, bad_align) = expand_with_alignment(&mut rng, &high, flavor, true).unwrap();
        let tau_in = bad_align.tau_map(&bad_low.dag().input_wires(), &high_inputs).unwrap();
        let tau_out = bad_align.tau_map(&bad_low.dag().output_wires(), &high_outputs).unwrap();
        let pairs = map_from_alignment(&bad_low, &high, &bad_align).unwrap();
        let v = check_exact_transformation(&bad_low, &high, &tau_in, &tau_out, &pairs, &opts)
            .unwrap();
        assert!(!v.holds, "{flavor:?} perturbed should fail");
    }
}

#[test]
fn alignment_tables_are_lawful() {
    let high = chain3();
    let opts = CheckOptions::default();
    let mut rng = rng_for(15);
    let (low, align) =
        expand_with_alignment(&mut rng, &high, LatentFlavor::Private, false).unwrap();
    let pairs = map_from_alignment(&low, &high, &align).unwrap();
    assert!(check_homomorphism(&pairs, &opts).unwrap().holds);
    assert!(check_order_preserving(&pairs, &opts).unwrap().holds);

    // Sending the trivial low intervention to a genuine high one breaks the
    // homomorphism law.
    let mut broken = pairs.clone();
    let trivial_at = broken
        .iter()
        .position(|(l, _)| l.is_trivial())
        .expect("table contains the trivial pair");
    broken[trivial_at].1 =
        Intervention::do_values(high.dag(), &[("V2".to_string(), 0)].into()).unwrap();
    let v = check_homomorphism(&broken, &opts).unwrap();
    assert!(!v.holds);
}
