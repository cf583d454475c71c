use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{
    best_of, better, evaluate_all, run_single, stream_rng, Columns, Evolver, ExprTree, Individual, RunConfig,
    RunResult, Sampler, LEAF_START, SLOTS,
};

pub const TOURNAMENT_SIZE: usize = 4;
pub const CROSSOVER_RATE: f64 = 0.9;
pub const MUTATION_RATE: f64 = 0.1;

/// Generational GP with tournament selection, subtree crossover and point
/// mutation on the fixed template.
#[derive(Debug, Clone)]
pub struct GpTrad {
    pop: Vec<Individual>,
    best: Individual,
    rng: ChaCha8Rng,
    sampler: Sampler,
    generation: usize,
}

fn active_slots(t: &ExprTree) -> Vec<usize> {
    let act = t.active();
    (0..SLOTS).filter(|&s| act[s]).collect()
}

/// Copies the subtree rooted at `src` of `donor` onto slot `dst` of `t`.
fn graft(t: &mut ExprTree, dst: usize, donor: &ExprTree, src: usize) {
    t.slots[dst] = donor.slots[src];
    if dst < LEAF_START && src < LEAF_START {
        graft(t, 2 * dst + 1, donor, 2 * src + 1);
        graft(t, 2 * dst + 2, donor, 2 * src + 2);
    }
}

/// Subtree crossover: a random active slot of `a` receives a random active
/// subtree of `b` that is no taller than the space below the slot.
pub(crate) fn crossover<R: Rng>(a: &ExprTree, b: &ExprTree, rng: &mut R) -> ExprTree {
    let targets = active_slots(a);
    let dst = targets[rng.random_range(0..targets.len())];
    let sources: Vec<usize> =
        active_slots(b).into_iter().filter(|&s| ExprTree::depth(s) >= ExprTree::depth(dst)).collect();
    let mut child = *a;
    if !sources.is_empty() {
        let src = sources[rng.random_range(0..sources.len())];
        graft(&mut child, dst, b, src);
    }
    child
}

/// Redraws the symbol of one random active slot.
pub(crate) fn point_mutation<R: Rng>(t: &ExprTree, sampler: &Sampler, rng: &mut R) -> ExprTree {
    let slots = active_slots(t);
    let s = slots[rng.random_range(0..slots.len())];
    let mut child = *t;
    child.slots[s] = sampler.for_slot(s, rng);
    child
}

impl GpTrad {
    fn tournament(&mut self) -> Individual {
        let n = self.pop.len();
        let mut best = self.pop[self.rng.random_range(0..n)];
        for _ in 1..TOURNAMENT_SIZE {
            let c = self.pop[self.rng.random_range(0..n)];
            if better(&c, &best) {
                best = c;
            }
        }
        best
    }

    pub fn population_slice(&self) -> &[Individual] {
        &self.pop
    }
}

impl Evolver for GpTrad {
    fn start(data: &Columns, population: usize, seed: u64) -> (Self, u64) {
        let population = population.max(1);
        let sampler = Sampler { n_features: data.n_features() };
        let mut rng = stream_rng(seed, 0, 0);
        let trees: Vec<ExprTree> = (0..population).map(|i| sampler.ramped(i, &mut rng)).collect();
        let pop = evaluate_all(&trees, data);
        let best = best_of(&pop);
        let work = population as u64 * data.eval_cost();
        (GpTrad { pop, best, rng, sampler, generation: 0 }, work)
    }

    fn step(&mut self, data: &Columns) -> u64 {
        let n = self.pop.len();
        let mut trees = Vec::with_capacity(n);
        for _ in 0..n {
            let p1 = self.tournament();
            let mut child = if self.rng.random_bool(CROSSOVER_RATE) {
                let p2 = self.tournament();
                crossover(&p1.tree, &p2.tree, &mut self.rng)
            } else {
                p1.tree
            };
            if self.rng.random_bool(MUTATION_RATE) {
                child = point_mutation(&child, &self.sampler, &mut self.rng);
            }
            trees.push(child);
        }
        self.pop = evaluate_all(&trees, data);
        let gen_best = best_of(&self.pop);
        if better(&gen_best, &self.best) {
            self.best = gen_best;
        }
        self.generation += 1;
        n as u64 * data.eval_cost()
    }

    fn best(&self) -> &Individual {
        &self.best
    }

    fn generations(&self) -> usize {
        self.generation
    }

    fn population(&self) -> usize {
        self.pop.len()
    }
}

/// A single GP-Trad run.
pub fn gp_trad_run(data: &Columns, cfg: &RunConfig) -> RunResult {
    run_single::<GpTrad>(data, cfg).1
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gp::{Budget, Symbol};
    use rand::SeedableRng;

    fn planted(n: usize, seed: u64, f: impl Fn(&[f64]) -> f64) -> Columns {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..4).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
        let y: Vec<f64> = rows.iter().map(|r| f(r)).collect();
        Columns::new(&rows, &y)
    }

    #[test]
    fn variation_respects_the_template() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let s = Sampler { n_features: 5 };
        for i in 0..2000 {
            let a = s.ramped(i, &mut rng);
            let b = s.ramped(i + 1, &mut rng);
            let c = crossover(&a, &b, &mut rng);
            let m = point_mutation(&c, &s, &mut rng);
            assert!(c.is_valid(5) && m.is_valid(5));
            assert!(m.height() <= 2);
        }
    }

    #[test]
    fn graft_moves_whole_subtrees() {
        let v = Symbol::Var;
        let a = ExprTree::new([Symbol::Add, v(0), v(1), v(2), v(2), v(2), v(2)]);
        let b = ExprTree::new([Symbol::Mul, Symbol::Sub, v(3), v(4), v(0), v(1), v(1)]);
        let mut t = a;
        graft(&mut t, 1, &b, 1);
        assert_eq!(t.eval(&[1.0, 2.0, 0.0, 7.0, 3.0]), (3.0 - 1.0) + 2.0);
    }

    #[test]
    fn finds_identity_target() {
        let data = planted(60, 1, |r| r[0]);
        let cfg = RunConfig { population: 64, max_generations: Some(30), budget: Budget::Work(u64::MAX), seed: 7 };
        let r = gp_trad_run(&data, &cfg);
        assert!(r.mae < 1e-6, "{}", r.mae);
    }

    #[test]
    fn tiny_runs_are_reproducible() {
        let data = planted(30, 2, |r| r[1] * r[2]);
        let cfg = RunConfig { population: 2, max_generations: Some(1), budget: Budget::Work(u64::MAX), seed: 3 };
        let a = gp_trad_run(&data, &cfg);
        let b = gp_trad_run(&data, &cfg);
        assert_eq!(a, b);
        assert_eq!(a.generations, 1);
        assert!(a.best.tree.height() <= 2);
    }
}
