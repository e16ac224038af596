//! Seeded random generators for models, alignments, isomorphisms, and quantum
//! channels.
//!
//! Randomised suites elsewhere in the workspace draw their instances from here so
//! that every case is reproducible from a single `u64` seed. The generators
//! produce *valid* objects by construction:
//!
//! * [`gen_model`] — random open-DAG models with exact rational mechanisms.
//! * [`expand_with_alignment`] — grows a low-level model out of a high-level one
//!   together with a block alignment; the [`LatentFlavor`] controls which
//!   partition grades the result earns (shared latent noise, private dead-end
//!   detail, or a clean one-to-one expansion), and `perturb` breaks one
//!   mechanism so failing instances are covered too.
//! * [`gen_value_iso`] — a deterministic bijection on the joint state space that
//!   permutes each variable's values and mixes non-inputs triangularly along the
//!   topological order, so the conjugated dynamics stay acyclic.
//! * [`gen_kraus_morphism`] — random completely positive trace-preserving maps
//!   via Kraus operators normalised through an inverse matrix square root.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::DMatrix;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::model::{CausalModel, OpenDag};
use crate::quantum::{C64, QMorphism, QObject, QWire};
use crate::scalar::{Rat, Scalar};
use crate::stoch::{Channel, ChannelKind, FinVar, WireList};

/// The workspace-wide reproducible generator.
pub fn rng_for(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random stochastic channel with small exact-rational columns.
pub fn gen_stochastic_channel(
    rng: &mut impl Rng,
    dom: WireList,
    cod: WireList,
) -> Channel<Rat> {
    let rows = cod.total_card();
    let mut cols = Vec::with_capacity(dom.total_card());
    for _ in 0..dom.total_card() {
        let mut weights: Vec<i64> = (0..rows).map(|_| rng.gen_range(0..4)).collect();
        let total: i64 = weights.iter().sum();
        if total == 0 {
            weights[rng.gen_range(0..rows)] = 1;
        }
        let total: i64 = weights.iter().sum();
        let col: Vec<(usize, Rat)> = weights
            .iter()
            .enumerate()
            .filter(|(_, &w)| w > 0)
            .map(|(y, &w)| (y, Rat::from_ratio(w, total)))
            .collect();
        cols.push(col);
    }
    Channel::new(dom, cod, cols, ChannelKind::Stochastic, 0.0)
        .expect("normalised columns form a stochastic channel")
}

/// Random deterministic channel (a uniformly drawn function table).
pub fn gen_deterministic_channel(
    rng: &mut impl Rng,
    dom: WireList,
    cod: WireList,
) -> Channel<Rat> {
    let table: Vec<Vec<usize>> = (0..dom.total_card())
        .map(|_| cod.vars().iter().map(|v| rng.gen_range(0..v.card)).collect())
        .collect();
    let dom_for_index = dom.clone();
    Channel::deterministic(dom, cod, move |x| {
        table[dom_for_index.flat_index(x)].clone()
    })
}

/// Shape parameters for [`gen_model`].
#[derive(Debug, Clone)]
pub struct ModelShape {
    pub vars: usize,
    pub max_card: usize,
    /// Probability (percent) of each forward edge.
    pub edge_percent: u32,
    /// Draw function tables instead of stochastic columns.
    pub deterministic: bool,
    /// Make every non-input an output (the shape expected by dynamics-style
    /// models that get conjugated by isomorphisms).
    pub endo: bool,
}

impl Default for ModelShape {
    fn default() -> Self {
        ModelShape { vars: 4, max_card: 3, edge_percent: 50, deterministic: false, endo: false }
    }
}

/// Random open-DAG model: variables `V0..`, forward edges, parentless variables
/// become inputs or root states, and at least one input and output exist.
pub fn gen_model(rng: &mut impl Rng, shape: &ModelShape) -> CausalModel<Rat> {
    let n = shape.vars.max(2);
    let vars: Vec<FinVar> = (0..n)
        .map(|i| FinVar::new(format!("V{i}"), rng.gen_range(2..=shape.max_card.max(2))))
        .collect();
    let mut edges: Vec<(String, String)> = Vec::new();
    for j in 1..n {
        for i in 0..j {
            if rng.gen_range(0..100) < shape.edge_percent {
                edges.push((format!("V{i}"), format!("V{j}")));
            }
        }
    }
    let has_parent: BTreeSet<String> = edges.iter().map(|(_, c)| c.clone()).collect();
    let mut inputs: Vec<String> = Vec::new();
    for v in &vars {
        if !has_parent.contains(&v.name) && (inputs.is_empty() || rng.gen_bool(0.5)) {
            inputs.push(v.name.clone());
        }
    }
    // V0 is always parentless, so an input always exists.
    let outputs: Vec<String> = if shape.endo {
        vars.iter()
            .filter(|v| !inputs.contains(&v.name))
            .map(|v| v.name.clone())
            .collect()
    } else {
        let mut outs: Vec<String> = vars
            .iter()
            .filter(|_| rng.gen_bool(0.5))
            .map(|v| v.name.clone())
            .collect();
        if outs.is_empty() {
            outs.push(vars[n - 1].name.clone());
        }
        outs
    };
    let input_refs: Vec<&str> = inputs.iter().map(|s| s.as_str()).collect();
    let output_refs: Vec<&str> = outputs.iter().map(|s| s.as_str()).collect();
    let edge_refs: Vec<(&str, &str)> =
        edges.iter().map(|(a, b)| (a.as_str(), b.as_str())).collect();
    let dag = OpenDag::new(vars.clone(), &input_refs, &output_refs, &edge_refs)
        .expect("forward edges over fresh names form a DAG");
    let mut mechs = BTreeMap::new();
    for v in &vars {
        if dag.is_input(&v.name) {
            continue;
        }
        let dom = dag.wires(dag.parents(&v.name)).expect("parents exist");
        let cod = WireList::single(v.clone());
        let ch = if shape.deterministic {
            gen_deterministic_channel(rng, dom, cod)
        } else {
            gen_stochastic_channel(rng, dom, cod)
        };
        mechs.insert(v.name.clone(), ch);
    }
    CausalModel::new(dag, mechs, 0.0).expect("generated mechanisms match the DAG")
}

/// What kind of low-level detail the expansion adds around the high model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LatentFlavor {
    /// One-to-one expansion: mechanism sets stay inside their own blocks and
    /// every parent-block wire is used.
    None,
    /// One interior block gains a dead-end member, so a parent-block wire exists
    /// that never reaches the child block.
    Private,
    /// An uncovered noise source feeds two mechanisms, so their variable sets
    /// overlap outside every block.
    Shared,
}

/// Grow a low model and alignment out of `high`. Returns `None` when the high
/// model lacks the structure the flavor needs (an interior variable with a
/// child, or two non-inputs). With `perturb`, one copied mechanism is composed
/// with a value rotation so the abstraction genuinely fails.
pub fn expand_with_alignment(
    rng: &mut impl Rng,
    high: &CausalModel<Rat>,
    flavor: LatentFlavor,
    perturb: bool,
) -> Option<(CausalModel<Rat>, crate::abstraction::VariableAlignment<Rat>)> {
    let hd = high.dag();
    let mut vars: Vec<FinVar> = hd.vars().to_vec();
    let mut edges: Vec<(String, String)> = Vec::new();
    for v in hd.vars() {
        for p in hd.parents(&v.name) {
            edges.push((p.clone(), v.name.clone()));
        }
    }
    let mut pi: BTreeMap<String, Vec<String>> = hd
        .vars()
        .iter()
        .map(|v| (v.name.clone(), vec![v.name.clone()]))
        .collect();
    let mut tau: BTreeMap<String, Channel<Rat>> = hd
        .vars()
        .iter()
        .map(|v| (v.name.clone(), Channel::identity(WireList::single(v.clone()))))
        .collect();
    let mut mechs: BTreeMap<String, Channel<Rat>> = hd
        .non_inputs()
        .into_iter()
        .map(|x| (x.clone(), high.mechanism(&x).expect("non-input").clone()))
        .collect();
    let mut out_names: Vec<String> = hd.outputs().iter().cloned().collect();

    match flavor {
        LatentFlavor::None => {}
        LatentFlavor::Private => {
            // A child is needed so that the dead end actually interrupts a
            // parent-to-child route.
            let interior: Vec<String> = hd
                .non_inputs()
                .into_iter()
                .filter(|x| !hd.children(x).is_empty())
                .collect();
            if interior.is_empty() {
                return None;
            }
            let p = interior[rng.gen_range(0..interior.len())].clone();
            let pe = format!("{p}_e");
            if hd.outputs().contains(&p) {
                out_names.push(pe.clone());
            }
            vars.push(FinVar::new(pe.clone(), 2));
            edges.push((p.clone(), pe.clone()));
            let p_wire = WireList::single(hd.var(&p).expect("chosen above").clone());
            mechs.insert(
                pe.clone(),
                Channel::deterministic(
                    p_wire.clone(),
                    WireList::single(FinVar::new(pe.clone(), 2)),
                    |v| vec![v[0] % 2],
                ),
            );
            let block_wires = p_wire.concat(&WireList::single(FinVar::new(pe.clone(), 2)));
            tau.insert(
                p.clone(),
                Channel::projection(&block_wires, &[p.as_str()]).expect("member of block"),
            );
            pi.insert(p.clone(), vec![p.clone(), pe]);
        }
        LatentFlavor::Shared => {
            let non_inputs = hd.non_inputs();
            if non_inputs.len() < 2 {
                return None;
            }
            let i = rng.gen_range(0..non_inputs.len());
            let mut j = rng.gen_range(0..non_inputs.len() - 1);
            if j >= i {
                j += 1;
            }
            let noise = "Wnoise".to_string();
            let noise_wire = WireList::single(FinVar::new(noise.clone(), 2));
            vars.push(FinVar::new(noise.clone(), 2));
            mechs.insert(
                noise.clone(),
                Channel::state(
                    &noise_wire,
                    vec![(0, Rat::from_ratio(1, 2)), (1, Rat::from_ratio(1, 2))],
                    0.0,
                )
                .expect("uniform weights"),
            );
            for x in [&non_inputs[i], &non_inputs[j]] {
                edges.push((noise.clone(), x.clone()));
                // New mechanism: project the noise away, then run the original.
                let mut parent_names: Vec<String> = hd.parents(x).to_vec();
                parent_names.push(noise.clone());
                parent_names.sort();
                let dom: WireList = parent_names
                    .iter()
                    .map(|p| {
                        if p == &noise {
                            FinVar::new(noise.clone(), 2)
                        } else {
                            hd.var(p).expect("high parent").clone()
                        }
                    })
                    .collect();
                let keep: Vec<&str> = hd.parents(x).iter().map(|s| s.as_str()).collect();
                let proj = Channel::projection(&dom, &keep).expect("parents kept");
                let ch = proj.then(&mechs[x]).expect("matching interfaces");
                mechs.insert(x.clone(), ch);
            }
        }
    }

    if perturb {
        let candidates = hd.non_inputs();
        let x = candidates[rng.gen_range(0..candidates.len())].clone();
        let wire = WireList::single(hd.var(&x).expect("non-input").clone());
        let card = wire.vars()[0].card;
        let rot = Channel::deterministic(wire.clone(), wire, move |v| vec![(v[0] + 1) % card]);
        let ch = mechs[&x].then(&rot).expect("endo rotation");
        mechs.insert(x, ch);
    }

    let inputs: Vec<&str> = hd.inputs().iter().map(|s| s.as_str()).collect();
    let outputs: Vec<&str> = out_names.iter().map(|s| s.as_str()).collect();
    let edge_refs: Vec<(&str, &str)> =
        edges.iter().map(|(a, b)| (a.as_str(), b.as_str())).collect();
    let dag = OpenDag::new(vars, &inputs, &outputs, &edge_refs)
        .expect("expansion adds only forward structure");
    let low = CausalModel::new(dag, mechs, 0.0).expect("expanded mechanisms fit");
    let align = crate::abstraction::VariableAlignment { pi, tau };
    Some((low, align))
}

/// A deterministic bijection on the joint state space of `model`: each variable's
/// values are rotated, and each non-input may additionally absorb the value of an
/// earlier (topologically) non-input. Variable `V` maps to wire `V2`. Returns the
/// bijection and the renamed input set.
pub fn gen_value_iso(
    rng: &mut impl Rng,
    model: &CausalModel<Rat>,
) -> (Channel<Rat>, BTreeSet<String>) {
    let dag = model.dag();
    let dom = dag.all_wires();
    let cod: WireList = dom
        .vars()
        .iter()
        .map(|v| FinVar::new(format!("{}2", v.name), v.card))
        .collect();
    let topo = dag.topo_order();
    let topo_idx: BTreeMap<&str, usize> =
        topo.iter().enumerate().map(|(i, v)| (v.as_str(), i)).collect();
    let n = dom.len();
    let mut rot = Vec::with_capacity(n);
    let mut mix: Vec<Option<usize>> = vec![None; n];
    for (i, v) in dom.vars().iter().enumerate() {
        rot.push(rng.gen_range(0..v.card));
        if !dag.is_input(&v.name) && rng.gen_bool(0.5) {
            let earlier: Vec<usize> = dom
                .vars()
                .iter()
                .enumerate()
                .filter(|(j, u)| {
                    *j != i
                        && !dag.is_input(&u.name)
                        && topo_idx[u.name.as_str()] < topo_idx[v.name.as_str()]
                })
                .map(|(j, _)| j)
                .collect();
            if !earlier.is_empty() {
                mix[i] = Some(earlier[rng.gen_range(0..earlier.len())]);
            }
        }
    }
    let cards: Vec<usize> = dom.vars().iter().map(|v| v.card).collect();
    let phi = Channel::deterministic(dom, cod, move |x| {
        (0..n)
            .map(|i| {
                let mixed = mix[i].map_or(0, |j| x[j]);
                (x[i] + rot[i] + mixed) % cards[i]
            })
            .collect()
    });
    let w_inputs: BTreeSet<String> =
        dag.inputs().iter().map(|v| format!("{v}2")).collect();
    (phi, w_inputs)
}

/// Random completely positive trace-preserving map between the given quantum
/// wires, as `ops` Kraus operators: random matrices are normalised by the
/// inverse square root of their joint Gram sum.
pub fn gen_kraus_morphism(
    rng: &mut impl Rng,
    dom: &QWire,
    cod: &QWire,
    ops: usize,
) -> QMorphism {
    let (d_in, d_out) = (dom.dim, cod.dim);
    let ops = ops.max(1);
    // Trace preservation needs the Gram sum to be invertible, which in turn
    // needs the stacked operators to span the input space.
    assert!(ops * d_out >= d_in, "need at least {d_in} stacked rows");
    let raw: Vec<DMatrix<C64>> = (0..ops)
        .map(|_| {
            DMatrix::from_fn(d_out, d_in, |_, _| {
                C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
            })
        })
        .collect();
    let mut gram = DMatrix::<C64>::zeros(d_in, d_in);
    for g in &raw {
        gram += g.adjoint() * g;
    }
    let eig = nalgebra::SymmetricEigen::new(gram);
    let mut inv_sqrt = DMatrix::<C64>::zeros(d_in, d_in);
    for (k, lambda) in eig.eigenvalues.iter().enumerate() {
        let col = eig.eigenvectors.column(k);
        let scale = C64::new(1.0 / lambda.sqrt(), 0.0);
        inv_sqrt += (col * col.adjoint()) * scale;
    }
    let kraus: Vec<DMatrix<C64>> = raw.iter().map(|g| g * &inv_sqrt).collect();
    QMorphism::kraus(
        QObject::quantum(vec![dom.clone()]),
        QObject::quantum(vec![cod.clone()]),
        &kraus,
    )
    .expect("normalised Kraus operators")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::abstraction::{check_constructive, CheckOptions};
    use crate::distributed::IsoSetup;
    use crate::mechlevel::classify_partition;

    fn chain_high(outputs: &[&str]) -> CausalModel<Rat> {
        let dag = OpenDag::new(
            vec![FinVar::new("V0", 2), FinVar::new("V1", 2), FinVar::new("V2", 2)],
            &["V0"],
            outputs,
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
    fn generated_models_are_valid_and_reproducible() {
        for seed in 0..20 {
            let mut rng = rng_for(seed);
            let m = gen_model(&mut rng, &ModelShape::default());
            assert!(!m.dag().inputs().is_empty());
            assert!(!m.dag().outputs().is_empty());
            let mut rng2 = rng_for(seed);
            let m2 = gen_model(&mut rng2, &ModelShape::default());
            assert_eq!(m, m2);
        }
    }

    #[test]
    fn expansion_flavors_hit_the_intended_partition_grades() {
        let high = chain_high(&["V2"]);
        let mut rng = rng_for(7);
        let (low, align) =
            expand_with_alignment(&mut rng, &high, LatentFlavor::None, false).unwrap();
        align.validate_models(&low, &high, 0.0).unwrap();
        let p = classify_partition(&low, &high, &align).unwrap();
        assert!(p.strong && p.extra_strong && p.full);

        let (low, align) =
            expand_with_alignment(&mut rng, &high, LatentFlavor::Private, false).unwrap();
        align.validate_models(&low, &high, 0.0).unwrap();
        let p = classify_partition(&low, &high, &align).unwrap();
        assert!(p.strong && p.extra_strong && !p.full);

        let (low, align) =
            expand_with_alignment(&mut rng, &high, LatentFlavor::Shared, false).unwrap();
        align.validate_models(&low, &high, 0.0).unwrap();
        let p = classify_partition(&low, &high, &align).unwrap();
        assert!(p.strong && !p.extra_strong);
    }

    #[test]
    fn expansion_holds_until_perturbed() {
        let high = chain_high(&["V1", "V2"]);
        let opts = CheckOptions::default();
        for flavor in [LatentFlavor::None, LatentFlavor::Private, LatentFlavor::Shared] {
            let mut rng = rng_for(11);
            let (low, align) = expand_with_alignment(&mut rng, &high, flavor, false).unwrap();
            let v = check_constructive(&low, &high, &align, &opts).unwrap();
            assert!(v.holds, "{flavor:?}: {:?}", v.witnesses);
            let mut rng = rng_for(11);
            let (low, align) = expand_with_alignment(&mut rng, &high, flavor, true).unwrap();
            let v = check_constructive(&low, &high, &align, &opts).unwrap();
            assert!(!v.holds, "{flavor:?} should fail after perturbation");
        }
    }

    #[test]
    fn value_isos_induce_models() {
        let mut ok = 0;
        for seed in 0..10 {
            let mut rng = rng_for(seed);
            let shape = ModelShape {
                vars: 3,
                max_card: 2,
                edge_percent: 70,
                deterministic: true,
                endo: true,
            };
            let m = gen_model(&mut rng, &shape);
            if m.dag().non_inputs().is_empty() {
                continue;
            }
            let (phi, w_inputs) = gen_value_iso(&mut rng, &m);
            let setup = match IsoSetup::new(m, phi, w_inputs) {
                Ok(s) => s,
                Err(_) => continue,
            };
            if setup.induce().is_ok() {
                ok += 1;
            }
        }
        assert!(ok >= 5, "only {ok} of 10 seeds induced");
    }

    #[test]
    fn random_kraus_maps_are_channels() {
        let mut rng = rng_for(3);
        for (d_in, d_out, ops) in [(2, 2, 2), (2, 3, 1), (3, 2, 4)] {
            let m =
                gen_kraus_morphism(&mut rng, &QWire::new("a", d_in), &QWire::new("b", d_out), ops);
            assert!(m.is_cp(1e-9));
            assert!(m.is_trace_preserving(1e-7));
        }
    }
}
