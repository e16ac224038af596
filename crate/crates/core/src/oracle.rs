//! Brute-force reference semantics for causal models.
//!
//! Everything here enumerates full joint assignments and multiplies mechanism entries
//! directly, with no graph surgery, pruning, or wire bookkeeping. It is exponentially
//! slower than [`crate::model::CausalModel::io_channel`] but independent of it, which
//! makes it the arbiter in tests: the two implementations share no code paths beyond
//! the channel container itself.

use std::collections::BTreeMap;

use crate::model::{CausalModel, ModelError};
use crate::scalar::Scalar;
use crate::stoch::{Channel, ChannelKind, WireList};

/// The io semantics computed by summing `prod_X c_X(v_X | v_{Pa(X)})` over all joint
/// assignments `v` compatible with the given inputs, then projecting onto the outputs.
pub fn io_by_enumeration<S: Scalar>(model: &CausalModel<S>) -> Result<Channel<S>, ModelError> {
    let dag = model.dag();
    let all = dag.all_wires();
    let dom = dag.input_wires();
    let cod = dag.output_wires();
    let positions: BTreeMap<&str, usize> = all
        .vars()
        .iter()
        .enumerate()
        .map(|(i, v)| (v.name.as_str(), i))
        .collect();
    let input_positions: Vec<usize> = dag
        .input_order()
        .iter()
        .map(|n| positions[n.as_str()])
        .collect();
    let output_positions: Vec<usize> = cod
        .vars()
        .iter()
        .map(|v| positions[v.name.as_str()])
        .collect();
    let mut cols: Vec<BTreeMap<usize, S>> = vec![BTreeMap::new(); dom.total_card()];
    for idx in 0..all.total_card() {
        let joint = all.assignment(idx);
        let mut weight = S::one();
        let mut zero = false;
        for v in all.vars() {
            if dag.is_input(&v.name) {
                continue;
            }
            let mech = model.mechanism(&v.name)?;
            let pa: Vec<usize> = dag
                .parents(&v.name)
                .iter()
                .map(|p| joint[positions[p.as_str()]])
                .collect();
            let col = mech.dom().flat_index(&pa);
            let p = mech.entry(joint[positions[v.name.as_str()]], col);
            if p.is_zero() {
                zero = true;
                break;
            }
            weight = weight.mul(&p);
        }
        if zero {
            continue;
        }
        let x = dom.flat_index(&input_positions.iter().map(|&p| joint[p]).collect::<Vec<_>>());
        let y = cod.flat_index(&output_positions.iter().map(|&p| joint[p]).collect::<Vec<_>>());
        let slot = cols[x].entry(y).or_insert_with(S::zero);
        *slot = slot.add(&weight);
    }
    let cols: Vec<Vec<(usize, S)>> = cols
        .into_iter()
        .map(|m| m.into_iter().collect())
        .collect();
    Channel::new(dom, cod, cols, ChannelKind::Stochastic, 0.0).map_err(Into::into)
}

/// The joint distribution over every variable (inputs included, passed through from the
/// domain), for tests that want the full table rather than the projected io channel.
pub fn joint_by_enumeration<S: Scalar>(model: &CausalModel<S>) -> Result<Channel<S>, ModelError> {
    let dag = model.dag();
    let all = dag.all_wires();
    let dom = dag.input_wires();
    let positions: BTreeMap<&str, usize> = all
        .vars()
        .iter()
        .enumerate()
        .map(|(i, v)| (v.name.as_str(), i))
        .collect();
    let input_positions: Vec<usize> = dag
        .input_order()
        .iter()
        .map(|n| positions[n.as_str()])
        .collect();
    let mut cols: Vec<BTreeMap<usize, S>> = vec![BTreeMap::new(); dom.total_card()];
    for idx in 0..all.total_card() {
        let joint = all.assignment(idx);
        let mut weight = S::one();
        let mut zero = false;
        for v in all.vars() {
            if dag.is_input(&v.name) {
                continue;
            }
            let mech = model.mechanism(&v.name)?;
            let pa: Vec<usize> = dag
                .parents(&v.name)
                .iter()
                .map(|p| joint[positions[p.as_str()]])
                .collect();
            let col = mech.dom().flat_index(&pa);
            let p = mech.entry(joint[positions[v.name.as_str()]], col);
            if p.is_zero() {
                zero = true;
                break;
            }
            weight = weight.mul(&p);
        }
        if zero {
            continue;
        }
        let x = dom.flat_index(&input_positions.iter().map(|&p| joint[p]).collect::<Vec<_>>());
        let slot = cols[x].entry(idx).or_insert_with(S::zero);
        *slot = slot.add(&weight);
    }
    let cols: Vec<Vec<(usize, S)>> = cols
        .into_iter()
        .map(|m| m.into_iter().collect())
        .collect();
    Channel::new(dom, all, cols, ChannelKind::Stochastic, 0.0).map_err(Into::into)
}

/// Compose a channel with sharp states on a suffix of its domain, one column at a time:
/// the reference implementation of "feed these inputs with fixed values".
pub fn feed_suffix_by_enumeration<S: Scalar>(
    chan: &Channel<S>,
    suffix_values: &[usize],
) -> Result<Channel<S>, ModelError> {
    let dom = chan.dom();
    let n = dom.len();
    let k = suffix_values.len();
    assert!(k <= n, "suffix longer than the domain");
    let head: WireList = dom.vars()[..n - k].iter().cloned().collect();
    let tail: WireList = dom.vars()[n - k..].iter().cloned().collect();
    let tail_index = tail.flat_index(suffix_values);
    let tail_card = tail.total_card();
    let cols: Vec<Vec<(usize, S)>> = (0..head.total_card())
        .map(|h| chan.col(h * tail_card + tail_index).to_vec())
        .collect();
    Channel::new(head, chan.cod().clone(), cols, chan.kind(), 0.0).map_err(Into::into)
}
