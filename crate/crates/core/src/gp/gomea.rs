use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    best_of, better, evaluate_all, fitness, run_single, stream_rng, Columns, Evolver, ExprTree, Individual,
    RunConfig, RunResult, Sampler, Scratch, Symbol, SLOTS,
};

/// Counters over Gene-pool Optimal Mixing steps.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GomStats {
    /// Changes that were evaluated.
    pub evaluated: u64,
    pub accepted: u64,
    /// Accepted changes whose MAE exceeded the MAE before the change.
    pub violations: u64,
}

impl GomStats {
    fn add(&mut self, o: &GomStats) {
        self.evaluated += o.evaluated;
        self.accepted += o.accepted;
        self.violations += o.violations;
    }
}

/// Category of a slot symbol for linkage learning; all constants share one.
fn category(sym: Symbol, n_features: usize) -> usize {
    match sym {
        Symbol::Add => 0,
        Symbol::Sub => 1,
        Symbol::Mul => 2,
        Symbol::Aq => 3,
        Symbol::Exp => 4,
        Symbol::Log => 5,
        Symbol::Var(i) => 6 + i,
        Symbol::Const(_) => 6 + n_features,
    }
}

fn entropy(counts: impl Iterator<Item = usize>, n: f64) -> f64 {
    counts.filter(|&c| c > 0).map(|c| c as f64 / n).map(|p| -p * p.ln()).sum()
}

/// Normalized mutual information `2 MI / (H_i + H_j)` between slot symbols;
/// two constant slots count as fully dependent.
pub fn slot_nmi(trees: &[ExprTree], n_features: usize) -> [[f64; SLOTS]; SLOTS] {
    let k = 7 + n_features;
    let n = trees.len() as f64;
    let cats: Vec<[usize; SLOTS]> = trees.iter().map(|t| t.slots.map(|s| category(s, n_features))).collect();
    let mut h = [0.0; SLOTS];
    for (s, hs) in h.iter_mut().enumerate() {
        let mut c = vec![0usize; k];
        cats.iter().for_each(|t| c[t[s]] += 1);
        *hs = entropy(c.into_iter(), n);
    }
    let mut nmi = [[1.0; SLOTS]; SLOTS];
    let mut joint = vec![0usize; k * k];
    for i in 0..SLOTS {
        for j in i + 1..SLOTS {
            joint.iter_mut().for_each(|c| *c = 0);
            cats.iter().for_each(|t| joint[t[i] * k + t[j]] += 1);
            let hij = entropy(joint.iter().copied(), n);
            let denom = h[i] + h[j];
            let v = if denom <= 0.0 { 1.0 } else { (2.0 * (h[i] + h[j] - hij) / denom).clamp(0.0, 1.0) };
            nmi[i][j] = v;
            nmi[j][i] = v;
        }
    }
    nmi
}

/// Linkage tree over the template slots: singletons plus every cluster
/// merged by average-linkage agglomeration on NMI, the root excluded.
pub fn linkage_tree(trees: &[ExprTree], n_features: usize) -> Vec<Vec<usize>> {
    let nmi = slot_nmi(trees, n_features);
    let mut fos: Vec<Vec<usize>> = (0..SLOTS).map(|s| vec![s]).collect();
    let mut clusters = fos.clone();
    while clusters.len() > 2 {
        let mut best = (f64::NEG_INFINITY, 0, 1);
        for a in 0..clusters.len() {
            for b in a + 1..clusters.len() {
                let mut sum = 0.0;
                for &i in &clusters[a] {
                    for &j in &clusters[b] {
                        sum += nmi[i][j];
                    }
                }
                let sim = sum / (clusters[a].len() * clusters[b].len()) as f64;
                if sim > best.0 {
                    best = (sim, a, b);
                }
            }
        }
        let (_, a, b) = best;
        let right = clusters.remove(b);
        clusters[a].extend(right);
        clusters[a].sort_unstable();
        fos.push(clusters[a].clone());
    }
    fos
}

/// GP-GOMEA population.
#[derive(Debug, Clone)]
pub struct Gomea {
    pop: Vec<Individual>,
    best: Individual,
    seed: u64,
    sampler: Sampler,
    generation: usize,
    stats: GomStats,
}

impl Gomea {
    pub fn stats(&self) -> GomStats {
        self.stats
    }

    pub fn population_slice(&self) -> &[Individual] {
        &self.pop
    }
}

/// Gene-pool Optimal Mixing of one individual against the donor pool.
fn gom(
    index: usize,
    donors: &[Individual],
    fos: &[Vec<usize>],
    data: &Columns,
    rng: &mut impl Rng,
    scratch: &mut Scratch,
) -> (Individual, u64, GomStats) {
    let mut current = donors[index];
    let mut work = 0u64;
    let mut stats = GomStats::default();
    if donors.len() < 2 {
        return (current, 0, stats);
    }
    let mut order: Vec<usize> = (0..fos.len()).collect();
    order.shuffle(rng);
    for &f in &order {
        let mut d = rng.random_range(0..donors.len() - 1);
        if d >= index {
            d += 1;
        }
        let mut cand = current.tree;
        for &s in &fos[f] {
            cand.slots[s] = donors[d].tree.slots[s];
        }
        if cand == current.tree {
            continue;
        }
        let mae = fitness(&cand, data, scratch).0;
        work += data.eval_cost();
        stats.evaluated += 1;
        if mae <= current.mae {
            stats.accepted += 1;
            if mae > current.mae {
                stats.violations += 1;
            }
            current = Individual { tree: cand, mae };
        }
    }
    (current, work, stats)
}

impl Evolver for Gomea {
    fn start(data: &Columns, population: usize, seed: u64) -> (Self, u64) {
        let population = population.max(1);
        let sampler = Sampler { n_features: data.n_features() };
        let mut rng = stream_rng(seed, 0, 0);
        let trees: Vec<ExprTree> = (0..population).map(|i| sampler.ramped(i, &mut rng)).collect();
        let pop = evaluate_all(&trees, data);
        let best = best_of(&pop);
        let work = population as u64 * data.eval_cost();
        (Gomea { pop, best, seed, sampler, generation: 0, stats: GomStats::default() }, work)
    }

    fn step(&mut self, data: &Columns) -> u64 {
        let trees: Vec<ExprTree> = self.pop.iter().map(|i| i.tree).collect();
        let fos = linkage_tree(&trees, self.sampler.n_features);
        let donors = &self.pop;
        let gen = self.generation as u64 + 1;
        let seed = self.seed;
        let out: Vec<(Individual, u64, GomStats)> = (0..donors.len())
            .into_par_iter()
            .map_init(Scratch::default, |scratch, i| {
                let mut rng = stream_rng(seed, gen, i as u64 + 1);
                gom(i, donors, &fos, data, &mut rng, scratch)
            })
            .collect();
        let mut work = 0;
        self.pop = out
            .into_iter()
            .map(|(ind, w, s)| {
                work += w;
                self.stats.add(&s);
                ind
            })
            .collect();
        let gen_best = best_of(&self.pop);
        if better(&gen_best, &self.best) {
            self.best = gen_best;
        }
        self.generation += 1;
        work
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

/// A single GP-GOMEA run; also returns the mixing statistics.
pub fn gomea_run(data: &Columns, cfg: &RunConfig) -> (RunResult, GomStats) {
    let (run, result) = run_single::<Gomea>(data, cfg);
    (result, run.stats())
}
