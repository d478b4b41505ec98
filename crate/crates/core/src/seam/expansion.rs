//! Alpha-expansion over an [`EnergyModel`], plus an exhaustive minimizer
//! for tiny instances.

use rayon::prelude::*;

use super::energy::{EnergyBreakdown, EnergyModel};
use super::maxflow::{Graph, Segment};
use super::{Labeling, Truncation};
use crate::error::{Result, StitchError};

/// Smallest decrease of the total energy that counts as progress.
const PROGRESS: f64 = 1e-9;
const MAX_CYCLES: usize = 30;
const BRUTE_FORCE_LIMIT: f64 = 1e7;

#[derive(Clone, Debug, PartialEq)]
pub struct MoveRecord {
    pub cycle: usize,
    pub label: usize,
    pub energy: EnergyBreakdown,
}

#[derive(Clone, Debug)]
pub struct Expansion {
    pub labeling: Labeling,
    pub initial: EnergyBreakdown,
    /// Energy after every accepted move, in order.
    pub trace: Vec<MoveRecord>,
    pub cycles: usize,
    /// Moves whose cut did not lower the energy and were discarded.
    pub rejected_moves: usize,
}

impl Expansion {
    pub fn energy(&self) -> EnergyBreakdown {
        self.trace.last().map_or(self.initial, |m| m.energy)
    }

    /// Whether the energy never increased along the accepted moves.
    pub fn is_monotone(&self, tolerance: f64) -> bool {
        let mut prev = self.initial.total();
        for m in &self.trace {
            if m.energy.total() > prev + tolerance {
                return false;
            }
            prev = m.energy.total();
        }
        true
    }
}

/// Per-pixel argmin of the unary costs; ties go to the lower label.
pub fn initial_labeling(model: &EnergyModel) -> Labeling {
    let labels: Vec<usize> = (0..model.pixels())
        .into_par_iter()
        .map(|p| {
            let mut best = 0;
            for l in 1..model.labels() {
                if model.unary(p, l) < model.unary(p, best) {
                    best = l;
                }
            }
            best
        })
        .collect();
    Labeling::from_vec(model.width(), model.height(), labels)
}

/// Binary energy of one expansion move, accumulated into a cut graph.
/// Variable `y = 0` keeps the current label (source side), `y = 1` switches
/// to `α` (sink side).
struct MoveGraph {
    graph: Graph,
    /// Cost of `y = 1` minus cost of `y = 0`, per node.
    unary_delta: Vec<f64>,
    constant: f64,
    truncation: Truncation,
}

impl MoveGraph {
    fn new(nodes: usize, edges: usize, truncation: Truncation) -> Self {
        MoveGraph {
            graph: Graph::new(nodes, edges),
            unary_delta: vec![0.0; nodes],
            constant: 0.0,
            truncation,
        }
    }

    fn add_unary(&mut self, i: usize, keep: f64, switch: f64) {
        self.constant += keep;
        self.unary_delta[i] += switch - keep;
    }

    /// Adds the table `E(y_i, y_j)`: `a = E(0,0)`, `b = E(0,1)`,
    /// `c = E(1,0)`, `d = E(1,1)`.
    fn add_pair(&mut self, i: usize, j: usize, mut a: f64, mut b: f64, mut c: f64, mut d: f64) {
        let excess = a + d - b - c;
        if excess > 0.0 {
            match self.truncation {
                Truncation::Truncate => {
                    a -= excess / 2.0;
                    d -= excess / 2.0;
                }
                Truncation::Majorize => {
                    b += excess / 2.0;
                    c += excess / 2.0;
                }
            }
        }
        self.constant += a;
        self.unary_delta[i] += c - a;
        self.unary_delta[j] += d - c;
        let k = b + c - a - d;
        if k > 0.0 {
            self.graph.add_edge(i, j, k, 0.0);
        }
    }

    /// Solves the cut; returns which nodes switch.
    fn solve(mut self) -> Vec<bool> {
        for (i, &delta) in self.unary_delta.iter().enumerate() {
            if delta > 0.0 {
                self.graph.add_terminal(i, delta, 0.0);
            } else if delta < 0.0 {
                self.constant += delta;
                self.graph.add_terminal(i, 0.0, -delta);
            }
        }
        self.graph.max_flow();
        (0..self.graph.node_count())
            .map(|i| self.graph.segment(i) == Segment::Sink)
            .collect()
    }
}

fn expansion_move(model: &EnergyModel, current: &[usize], alpha: usize) -> Vec<usize> {
    let n = model.pixels();
    let mut mg = MoveGraph::new(
        n,
        2 * n + model.duplication_edges().len(),
        model.truncation(),
    );
    let unaries: Vec<(f64, f64)> = (0..n)
        .into_par_iter()
        .map(|p| (model.unary(p, current[p]), model.unary(p, alpha)))
        .collect();
    for (p, &(keep, switch)) in unaries.iter().enumerate() {
        mg.add_unary(p, keep, switch);
    }
    for (p, q) in model.neighbors() {
        let (lp, lq) = (current[p], current[q]);
        if lp == alpha && lq == alpha {
            continue;
        }
        mg.add_pair(
            p,
            q,
            model.pairwise(p, q, lp, lq),
            model.pairwise(p, q, lp, alpha),
            model.pairwise(p, q, alpha, lq),
            0.0,
        );
    }
    for e in model.duplication_edges() {
        let la = [current[e.a], alpha];
        let lb = [current[e.b], alpha];
        let cost = |ya: usize, yb: usize| {
            if la[ya] == 0 && lb[yb] == e.label {
                e.weight
            } else {
                0.0
            }
        };
        let table = [cost(0, 0), cost(0, 1), cost(1, 0), cost(1, 1)];
        if table.iter().all(|&v| v == 0.0) {
            continue;
        }
        mg.add_pair(e.a, e.b, table[0], table[1], table[2], table[3]);
    }
    let switch = mg.solve();
    current
        .iter()
        .zip(switch)
        .map(|(&l, s)| if s { alpha } else { l })
        .collect()
}

/// One expansion run starting from `init`.
///
/// Cycles over the labels; each move solves a binary cut deciding which
/// pixels switch to `α`. Pairwise terms a cut cannot represent are
/// approximated per the model's truncation policy, so a move is kept only
/// if the true energy goes down. Stops after a full cycle without progress.
pub fn expand_from(model: &EnergyModel, init: Labeling) -> Expansion {
    assert_eq!(
        (init.width(), init.height()),
        (model.width(), model.height())
    );
    assert!(
        init.as_slice().iter().all(|&l| l < model.labels()),
        "label out of range"
    );
    let initial = model.total_energy(&init);
    let mut labeling = init;
    let mut energy = initial;
    let mut trace = Vec::new();
    let mut rejected_moves = 0;
    let mut cycles = 0;
    while cycles < MAX_CYCLES {
        cycles += 1;
        let mut progress = false;
        for alpha in 0..model.labels() {
            let proposal = expansion_move(model, labeling.as_slice(), alpha);
            if proposal == labeling.as_slice() {
                continue;
            }
            let candidate = Labeling::from_vec(model.width(), model.height(), proposal);
            let e = model.total_energy(&candidate);
            if e.total() < energy.total() {
                progress |= energy.total() - e.total() >= PROGRESS;
                labeling = candidate;
                energy = e;
                trace.push(MoveRecord {
                    cycle: cycles,
                    label: alpha,
                    energy,
                });
                log::debug!("cycle {cycles} label {alpha}: {energy}");
            } else {
                rejected_moves += 1;
            }
        }
        if !progress {
            break;
        }
    }
    Expansion {
        labeling,
        initial,
        trace,
        cycles,
        rejected_moves,
    }
}

/// Minimizes the model by expansion moves.
///
/// Runs [`expand_from`] from `init` and then from every uniform labeling,
/// returning the run that ends at the lowest energy (the earliest on ties).
/// The restarts escape minima where the duplication term blocks every
/// single expansion move. Each run's trace is monotone on its own.
pub fn alpha_expansion(model: &EnergyModel, init: Labeling) -> Expansion {
    let starts = std::iter::once(init)
        .chain((0..model.labels()).map(|l| Labeling::uniform(model.width(), model.height(), l)));
    let mut best: Option<Expansion> = None;
    for start in starts {
        let run = expand_from(model, start);
        if best
            .as_ref()
            .is_none_or(|b| run.energy().total() < b.energy().total())
        {
            best = Some(run);
        }
    }
    best.expect("at least one start")
}

/// Global minimum by enumeration; ties go to the lexicographically smallest
/// labeling (pixels in row-major order).
pub fn brute_force_minimize(model: &EnergyModel) -> Result<(Labeling, EnergyBreakdown)> {
    let n = model.pixels();
    let l = model.labels();
    let count = (l as f64).powi(n as i32);
    if count > BRUTE_FORCE_LIMIT {
        return Err(StitchError::TooLarge(format!(
            "{l}^{n} labelings exceeds the enumeration limit of {BRUTE_FORCE_LIMIT}"
        )));
    }
    let mut labels = vec![0usize; n];
    let mut current = Labeling::from_vec(model.width(), model.height(), labels.clone());
    let mut best = (current.clone(), model.total_energy(&current));
    loop {
        // Odometer with the last pixel fastest gives lexicographic order.
        let mut k = n;
        loop {
            if k == 0 {
                return Ok(best);
            }
            k -= 1;
            labels[k] += 1;
            if labels[k] < l {
                break;
            }
            labels[k] = 0;
        }
        current.as_mut_slice().copy_from_slice(&labels);
        let e = model.total_energy(&current);
        if e.total() < best.1.total() {
            best = (current.clone(), e);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::super::DuplicationEdge;
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_model(rng: &mut ChaCha8Rng, w: usize, h: usize, labels: usize) -> EnergyModel {
        let n = w * h;
        let unary = (0..n * labels)
            .map(|_| rng.gen_range(0..=10) as f64)
            .collect();
        let colors = (0..labels)
            .map(|_| {
                (0..n)
                    .map(|_| [rng.gen_range(0..4) as f32, rng.gen_range(0..4) as f32, 0.0])
                    .collect()
            })
            .collect();
        let dup = (0..rng.gen_range(0..=3))
            .filter_map(|_| {
                let (a, b) = (rng.gen_range(0..n), rng.gen_range(0..n));
                (a != b).then(|| DuplicationEdge {
                    a,
                    b,
                    label: rng.gen_range(1..labels),
                    weight: rng.gen_range(1..=10) as f64,
                })
            })
            .collect();
        EnergyModel::from_unary(w, h, labels, unary)
            .with_colors(colors, rng.gen_range(0..=1) as f64)
            .with_potts(rng.gen_range(0..=2) as f64)
            .with_duplication(dup)
    }

    #[test]
    fn consistent_unaries_give_argmin() {
        let unary = vec![3.0, 1.0, 0.0, 5.0, 2.0, 2.0, 9.0, 8.0, 7.0];
        let model = EnergyModel::from_unary(3, 1, 3, unary);
        let out = alpha_expansion(&model, Labeling::uniform(3, 1, 0));
        assert_eq!(out.labeling.as_slice(), &[2, 1, 2]);
        assert_eq!(initial_labeling(&model).as_slice(), &[2, 1, 2]);
    }

    #[test]
    fn brute_force_one_pixel() {
        let model = EnergyModel::from_unary(1, 1, 4, vec![4.0, 2.0, 2.0, 3.0]);
        let (labels, e) = brute_force_minimize(&model).unwrap();
        assert_eq!(labels.as_slice(), &[1]);
        assert_eq!(e.total(), 2.0);
    }

    #[test]
    fn brute_force_matches_independent_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let model = random_model(&mut rng, 3, 2, 3);
        let (labels, e) = brute_force_minimize(&model).unwrap();
        let mut min = f64::INFINITY;
        for code in 0..729usize {
            let v: Vec<usize> = (0..6)
                .map(|k| code / 3usize.pow(5 - k as u32) % 3)
                .collect();
            min = min.min(model.total_energy(&Labeling::from_vec(3, 2, v)).total());
        }
        assert_eq!(e.total(), min);
        assert_eq!(model.total_energy(&labels).total(), min);
    }

    #[test]
    fn brute_force_refuses_large_instances() {
        let model = EnergyModel::from_unary(10, 10, 4, vec![0.0; 400]);
        assert!(matches!(
            brute_force_minimize(&model),
            Err(StitchError::TooLarge(_))
        ));
    }

    #[test]
    fn expansion_is_near_optimal_and_monotone() {
        let mut optimal = 0;
        for seed in 0..100 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let model = random_model(&mut rng, 3, 2, 3);
            let out = alpha_expansion(&model, initial_labeling(&model));
            let (_, best) = brute_force_minimize(&model).unwrap();
            let got = out.energy().total();
            assert!(
                got <= 1.05 * best.total() + 1e-9,
                "seed {seed}: {got} vs {}",
                best.total()
            );
            assert!(out.is_monotone(1e-9));
            assert_eq!(model.total_energy(&out.labeling).total(), got);
            if (got - best.total()).abs() < 1e-9 {
                optimal += 1;
            }
        }
        assert!(optimal >= 90, "{optimal}");
    }

    #[test]
    fn single_start_is_usually_optimal() {
        let mut optimal = 0;
        for seed in 0..100 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let model = random_model(&mut rng, 3, 2, 3);
            let out = expand_from(&model, initial_labeling(&model));
            let (_, best) = brute_force_minimize(&model).unwrap();
            assert!(out.is_monotone(1e-9));
            assert!(out.energy().total() <= model.total_energy(&initial_labeling(&model)).total());
            optimal += ((out.energy().total() - best.total()).abs() < 1e-9) as usize;
        }
        assert!(optimal >= 90, "{optimal}");
    }

    #[test]
    fn majorize_policy_is_also_monotone() {
        for seed in 0..30 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let model = random_model(&mut rng, 4, 3, 3).with_truncation(Truncation::Majorize);
            let out = alpha_expansion(&model, Labeling::uniform(4, 3, 0));
            assert!(out.is_monotone(1e-9));
        }
    }

    #[test]
    fn deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let model = random_model(&mut rng, 8, 6, 4);
        let a = alpha_expansion(&model, initial_labeling(&model));
        let b = alpha_expansion(&model, initial_labeling(&model));
        assert_eq!(a.labeling, b.labeling);
        assert_eq!(a.trace, b.trace);
    }
}
