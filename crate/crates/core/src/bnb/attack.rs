//! Greedy flip search for a negative-margin adjacency matrix.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::graph::{Adjacency, GraphInstance};
use crate::model::MpnnModel;
use crate::perturbation::{flip_candidates, is_admissible, PerturbationMode, PerturbationSpec};

fn toggle(adj: &mut Adjacency, mode: PerturbationMode, (u, v): (usize, usize)) {
    let value = !adj.get(u, v);
    match mode {
        PerturbationMode::UndirectedFlip => adj.set_pair(u, v, value),
        PerturbationMode::DirectedRemoveOnly => adj.set(u, v, value),
    }
}

/// Steepest single-flip descent on the margin with random restarts.
///
/// Restart 0 starts at `A*`; later restarts start from a random admissible
/// perturbation. Returns the first admissible matrix found with a negative
/// margin.
pub fn attack_search(
    model: &MpnnModel,
    instance: &GraphInstance,
    spec: &PerturbationSpec,
    restarts: usize,
    seed: u64,
) -> Result<Option<Adjacency>> {
    let base = &instance.adjacency;
    let features = &instance.features;
    let (c_star, c, target) = (instance.label_true, instance.label_attack, instance.target);
    let margin = |adj: &Adjacency| model.margin(features, adj, c_star, c, target);
    let candidates = flip_candidates(base, spec);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    for restart in 0..restarts {
        let mut current = base.clone();
        if restart > 0 {
            let mut order = candidates.clone();
            order.shuffle(&mut rng);
            for pair in order {
                if !rng.gen_bool(0.5) {
                    continue;
                }
                toggle(&mut current, spec.mode, pair);
                if !is_admissible(&current, base, spec)? {
                    toggle(&mut current, spec.mode, pair);
                }
            }
        }
        let mut value = margin(&current)?;
        loop {
            if value < 0.0 {
                return Ok(Some(current));
            }
            let mut best: Option<((usize, usize), f64)> = None;
            for &pair in &candidates {
                toggle(&mut current, spec.mode, pair);
                if is_admissible(&current, base, spec)? {
                    let m = margin(&current)?;
                    if best.map_or(true, |(_, b)| m < b) {
                        best = Some((pair, m));
                    }
                }
                toggle(&mut current, spec.mode, pair);
            }
            match best {
                Some((pair, m)) if m < value => {
                    toggle(&mut current, spec.mode, pair);
                    value = m;
                }
                _ => break,
            }
        }
    }
    Ok(None)
}
