//! Structural properties of the hybrid quantum/classical layer: composition and
//! tensoring preserve complete positivity and trace preservation, the classical
//! embedding is functorial and inverted by extraction, basis encoding is
//! lossless under measurement, and randomly parameterised quantum networks fold
//! to well-formed channels.

use std::collections::{BTreeMap, BTreeSet};

use causalign::gen::{gen_kraus_morphism, gen_stochastic_channel, rng_for};
use causalign::model::OpenDag;
use causalign::qabs::QuantumDagModel;
use causalign::quantum::{QMorphism, QObject, QWire};
use causalign::scalar::{Rat, Scalar};
use causalign::stoch::{Channel, ChannelKind, FinVar, WireList};
use proptest::prelude::*;

fn to_f64(ch: &Channel<Rat>) -> Channel<f64> {
    let rows: Vec<Vec<f64>> = ch
        .to_rows()
        .iter()
        .map(|r| r.iter().map(Scalar::to_f64).collect())
        .collect();
    Channel::from_rows(ch.dom().clone(), ch.cod().clone(), &rows, ChannelKind::Stochastic, 1e-9)
        .unwrap()
}

fn wire(name: &str, card: usize) -> WireList {
    WireList::single(FinVar::new(name, card))
}

#[test]
fn encoding_then_measuring_is_lossless() {
    for d in 2..=4 {
        let var = FinVar::new("m", d);
        let q = QWire::new("m", d);
        let enc = QMorphism::encode(var.clone(), q.clone()).unwrap();
        let meas = QMorphism::measure(&q, var.clone()).unwrap();
        let roundtrip = enc.then(&meas).unwrap().classical_channel(1e-9).unwrap();
        let id = Channel::<f64>::identity(WireList::single(var));
        assert!(roundtrip.max_deviation(&id).unwrap().max <= 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn composition_preserves_channel_structure(seed in any::<u64>()) {
        let mut rng = rng_for(seed);
        let a = QWire::new("a", 2);
        let b = QWire::new("b", 3);
        let c = QWire::new("c", 2);
        let f = gen_kraus_morphism(&mut rng, &a, &b, 2);
        let g = gen_kraus_morphism(&mut rng, &b, &c, 3);
        let fg = f.then(&g).unwrap();
        prop_assert!(fg.is_cp(1e-7));
        prop_assert!(fg.is_trace_preserving(1e-6));
    }

    #[test]
    fn tensors_preserve_channel_structure(seed in any::<u64>()) {
        let mut rng = rng_for(seed);
        let f = gen_kraus_morphism(&mut rng, &QWire::new("a", 2), &QWire::new("b", 3), 2);
        let g = gen_kraus_morphism(&mut rng, &QWire::new("p", 3), &QWire::new("q", 2), 2);
        let t = f.tensor(&g);
        prop_assert!(t.is_cp(1e-7));
        prop_assert!(t.is_trace_preserving(1e-6));
        // Mixing in a classical leg keeps the structure too.
        let cf = gen_stochastic_channel(&mut rng, wire("M", 2), wire("N", 3));
        let hybrid = t.tensor(&QMorphism::classical(&to_f64(&cf)));
        prop_assert!(hybrid.is_cp(1e-7));
        prop_assert!(hybrid.is_trace_preserving(1e-6));
    }

    #[test]
    fn classical_embedding_is_functorial(seed in any::<u64>()) {
        let mut rng = rng_for(seed);
        let f = gen_stochastic_channel(&mut rng, wire("A", 2), wire("B", 3));
        let g = gen_stochastic_channel(&mut rng, wire("B", 3), wire("C", 2));
        let embedded = QMorphism::classical(&to_f64(&f))
            .then(&QMorphism::classical(&to_f64(&g)))
            .unwrap();
        let composed = QMorphism::classical(&to_f64(&f.then(&g).unwrap()));
        prop_assert!(embedded.max_abs_diff(&composed).unwrap() <= 1e-12);

        let h = gen_stochastic_channel(&mut rng, wire("P", 2), wire("Q", 2));
        let tensored = QMorphism::classical(&to_f64(&f)).tensor(&QMorphism::classical(&to_f64(&h)));
        let joint = QMorphism::classical(&to_f64(&f.tensor(&h)));
        prop_assert!(tensored.max_abs_diff(&joint).unwrap() <= 1e-12);
    }

    #[test]
    fn extraction_inverts_the_embedding(seed in any::<u64>()) {
        let mut rng = rng_for(seed);
        let f = to_f64(&gen_stochastic_channel(&mut rng, wire("A", 3), wire("B", 2)));
        let back = QMorphism::classical(&f).classical_channel(1e-9).unwrap();
        prop_assert!(back.max_deviation(&f).unwrap().max <= 1e-12);
    }

    #[test]
    fn random_quantum_networks_fold_to_channels(seed in any::<u64>()) {
        let mut rng = rng_for(seed);
        let dag = OpenDag::new(
            vec![FinVar::new("I", 2), FinVar::new("X", 2), FinVar::new("O", 2)],
            &["I"],
            &["O"],
            &[("I", "X"), ("X", "O")],
        )
        .unwrap();
        let v_i = QWire::new("I", 2);
        let v_x = QWire::new("X", 3);
        let v_o = QWire::new("O", 2);
        let e_ix = QWire::new("I>X", 2);
        let e_xo = QWire::new("X>O", 2);
        let qobj = |w: &QWire| QObject::quantum(vec![w.clone()]);
        let vertex: BTreeMap<String, QObject> = [
            ("I".to_string(), qobj(&v_i)),
            ("X".to_string(), qobj(&v_x)),
            ("O".to_string(), qobj(&v_o)),
        ]
        .into();
        let edge: BTreeMap<(String, String), QObject> = [
            (("I".to_string(), "X".to_string()), qobj(&e_ix)),
            (("X".to_string(), "O".to_string()), qobj(&e_xo)),
        ]
        .into();
        let out: BTreeMap<String, QObject> = [("O".to_string(), qobj(&v_o))].into();
        let mech: BTreeMap<String, QMorphism> = [
            ("X".to_string(), gen_kraus_morphism(&mut rng, &e_ix, &v_x, 2)),
            ("O".to_string(), gen_kraus_morphism(&mut rng, &e_xo, &v_o, 2)),
        ]
        .into();
        let split: BTreeMap<String, QMorphism> = [
            ("I".to_string(), gen_kraus_morphism(&mut rng, &v_i, &e_ix, 1)),
            ("X".to_string(), gen_kraus_morphism(&mut rng, &v_x, &e_xo, 2)),
        ]
        .into();
        let model = QuantumDagModel::new(dag, vertex, edge, out, mech, split, 1e-9).unwrap();

        let io = model.io().unwrap();
        prop_assert!(io.is_cp(1e-7));
        prop_assert!(io.is_trace_preserving(1e-6));

        let opened = model.opened(&["X".to_string()].into_iter().collect::<BTreeSet<_>>())
            .unwrap();
        prop_assert!(opened.is_cp(1e-7));
        prop_assert!(opened.is_trace_preserving(1e-6));

        let marginal = model
            .vertex_marginal(&["X".to_string()].into_iter().collect::<BTreeSet<_>>())
            .unwrap();
        prop_assert!(marginal.is_cp(1e-7));
        prop_assert!(marginal.is_trace_preserving(1e-6));
    }
}
