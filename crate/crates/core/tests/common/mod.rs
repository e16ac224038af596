//! Fixtures shared by the integration suites.
#![allow(dead_code)]

use std::collections::BTreeMap;

use causalign::model::{CausalModel, FunctionalCausalModel, OpenDag};
use causalign::scalar::Rat;
use causalign::stoch::{Channel, ChannelKind, FinVar, WireList};

pub fn r(n: i64, d: i64) -> Rat {
    use causalign::scalar::Scalar;
    Rat::from_ratio(n, d)
}

/// Five variables, two of them inputs, mixing deterministic and stochastic
/// mechanisms: `X = U xor W`, `Y` drawn from a row depending on `X`, and
/// `T = [Y >= 1] xor W`. Observed outputs are `X` and `T`.
pub fn five_var_model() -> CausalModel<Rat> {
    let u = FinVar::new("U", 2);
    let w = FinVar::new("W", 2);
    let x = FinVar::new("X", 2);
    let y = FinVar::new("Y", 3);
    let t = FinVar::new("T", 2);
    let dag = OpenDag::new(
        vec![u.clone(), w.clone(), x.clone(), y.clone(), t.clone()],
        &["U", "W"],
        &["X", "T"],
        &[("U", "X"), ("W", "X"), ("X", "Y"), ("W", "T"), ("Y", "T")],
    )
    .unwrap();
    let mut mechs: BTreeMap<String, Channel<Rat>> = BTreeMap::new();
    mechs.insert(
        "X".into(),
        Channel::deterministic(
            WireList::new(vec![u, w.clone()]),
            WireList::single(x.clone()),
            |v| vec![(v[0] + v[1]) % 2],
        ),
    );
    mechs.insert(
        "Y".into(),
        Channel::from_rows(
            WireList::single(x),
            WireList::single(y.clone()),
            &[
                vec![r(1, 2), r(0, 1)],
                vec![r(1, 3), r(1, 2)],
                vec![r(1, 6), r(1, 2)],
            ],
            ChannelKind::Stochastic,
            0.0,
        )
        .unwrap(),
    );
    mechs.insert(
        "T".into(),
        Channel::deterministic(
            WireList::new(vec![w, y]),
            WireList::single(t),
            |v| vec![(usize::from(v[1] >= 1) + v[0]) % 2],
        ),
    );
    CausalModel::new(dag, mechs, 0.0).unwrap()
}

/// Deterministic model whose outputs are exactly its non-inputs, with the
/// canonical variable order `[A, P, Q]` coinciding with inputs-then-rest.
pub fn det_endo_model() -> CausalModel<Rat> {
    let a = FinVar::new("A", 2);
    let p = FinVar::new("P", 3);
    let q = FinVar::new("Q", 2);
    let dag = OpenDag::new(
        vec![a.clone(), p.clone(), q.clone()],
        &["A"],
        &["P", "Q"],
        &[("A", "P"), ("A", "Q"), ("P", "Q")],
    )
    .unwrap();
    let mut mechs: BTreeMap<String, Channel<Rat>> = BTreeMap::new();
    mechs.insert(
        "P".into(),
        Channel::deterministic(WireList::single(a.clone()), WireList::single(p.clone()), |v| {
            vec![v[0] + 1]
        }),
    );
    mechs.insert(
        "Q".into(),
        Channel::deterministic(WireList::new(vec![a, p]), WireList::single(q), |v| {
            vec![(v[0] + v[1]) % 2]
        }),
    );
    CausalModel::new(dag, mechs, 0.0).unwrap()
}

/// Like [`det_endo_model`] but with the input in the middle of the canonical
/// order, so assembling the loop-shaped channel needs genuine wire reordering.
pub fn det_endo_model_interleaved() -> CausalModel<Rat> {
    let a = FinVar::new("A", 2);
    let b = FinVar::new("B", 2);
    let c = FinVar::new("C", 2);
    let dag = OpenDag::new(
        vec![a.clone(), b.clone(), c.clone()],
        &["B"],
        &["A", "C"],
        &[("B", "A"), ("A", "C"), ("B", "C")],
    )
    .unwrap();
    let mut mechs: BTreeMap<String, Channel<Rat>> = BTreeMap::new();
    mechs.insert(
        "A".into(),
        Channel::deterministic(WireList::single(b.clone()), WireList::single(a.clone()), |v| {
            vec![1 - v[0]]
        }),
    );
    mechs.insert(
        "C".into(),
        Channel::deterministic(WireList::new(vec![a, b]), WireList::single(c), |v| {
            vec![v[0] * v[1]]
        }),
    );
    CausalModel::new(dag, mechs, 0.0).unwrap()
}

/// Functional model `X <- U_X`, `Y = (X + U_Y) mod 2`, with non-uniform noise on
/// both variables so counterfactual correlations are visible.
pub fn fcm_fixture() -> FunctionalCausalModel<Rat> {
    let x = FinVar::new("X", 2);
    let y = FinVar::new("Y", 2);
    let ux = FinVar::new("U_X", 2);
    let uy = FinVar::new("U_Y", 3);
    let exo: BTreeMap<String, FinVar> =
        [("X".to_string(), ux.clone()), ("Y".to_string(), uy.clone())].into();
    let noise: BTreeMap<String, Channel<Rat>> = [
        (
            "X".to_string(),
            Channel::state(&WireList::single(ux.clone()), vec![(0, r(3, 4)), (1, r(1, 4))], 0.0)
                .unwrap(),
        ),
        (
            "Y".to_string(),
            Channel::state(
                &WireList::single(uy.clone()),
                vec![(0, r(1, 2)), (1, r(1, 3)), (2, r(1, 6))],
                0.0,
            )
            .unwrap(),
        ),
    ]
    .into();
    let functions: BTreeMap<String, Channel<Rat>> = [
        (
            "X".to_string(),
            Channel::deterministic(WireList::single(ux), WireList::single(x.clone()), |v| {
                vec![v[0]]
            }),
        ),
        (
            "Y".to_string(),
            Channel::deterministic(
                WireList::new(vec![x.clone(), uy]),
                WireList::single(y.clone()),
                |v| vec![(v[0] + v[1]) % 2],
            ),
        ),
    ]
    .into();
    let parents: BTreeMap<String, Vec<String>> =
        [("X".to_string(), vec![]), ("Y".to_string(), vec!["X".to_string()])].into();
    FunctionalCausalModel::new(vec![x, y], exo, noise, functions, parents, 0.0).unwrap()
}
