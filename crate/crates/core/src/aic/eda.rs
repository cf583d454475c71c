//! Gaussian estimation-of-distribution search on the unit cube with
//! constraint domination.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Fitness of one candidate. `violation == 0` means feasible.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Fitness {
    pub violation: usize,
    pub objective: f64,
}

impl Fitness {
    pub fn infeasible(violation: usize) -> Self {
        Fitness { violation, objective: f64::NEG_INFINITY }
    }

    pub fn is_feasible(&self) -> bool {
        self.violation == 0
    }

    /// Constraint domination: feasible beats infeasible, infeasible compare by
    /// violation, feasible by objective (maximized).
    pub fn better_than(&self, other: &Fitness) -> bool {
        match (self.is_feasible(), other.is_feasible()) {
            (true, false) => true,
            (false, true) => false,
            (false, false) => self.violation < other.violation,
            (true, true) => self.objective > other.objective,
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct EdaSettings {
    pub population: usize,
    pub max_evaluations: usize,
    pub seed: u64,
    /// Generations without improvement of a feasible best before stopping.
    pub patience: usize,
}

pub(crate) struct EdaOutcome {
    pub best: Vec<f64>,
    pub fitness: Fitness,
    pub first_feasible: Option<f64>,
    pub evaluations: usize,
    pub generations: usize,
}

const SELECTION_FRACTION: f64 = 0.35;
const MULTIPLIER_STEP: f64 = 0.9;
const MULTIPLIER_MAX: f64 = 10.0;
const MIN_SPREAD: f64 = 1e-10;

/// Maximizes under constraint domination. `start` is evaluated first; the rest
/// of the first generation is uniform. `evaluate` scores a batch in order.
pub(crate) fn run(
    settings: &EdaSettings,
    start: &[f64],
    mut evaluate: impl FnMut(&[Vec<f64>]) -> Vec<Fitness>,
) -> EdaOutcome {
    let dim = start.len();
    let n = settings.population.max(2);
    let n_sel = ((SELECTION_FRACTION * n as f64).round() as usize).clamp(2, n);
    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);

    let mut pop: Vec<Vec<f64>> = Vec::with_capacity(n);
    pop.push(start.to_vec());
    while pop.len() < n {
        pop.push((0..dim).map(|_| rng.random::<f64>()).collect());
    }

    let mut best: Option<(Vec<f64>, Fitness)> = None;
    let mut first_feasible = None;
    let mut evaluations = 0;
    let mut generations = 0;
    let mut multiplier: f64 = 1.0;
    let mut stale = 0;
    loop {
        let room = settings.max_evaluations.saturating_sub(evaluations);
        pop.truncate(room);
        if pop.is_empty() {
            break;
        }
        let fit = evaluate(&pop);
        evaluations += pop.len();
        generations += 1;

        let mut improved = false;
        for (x, f) in pop.iter().zip(&fit) {
            if f.is_feasible() && first_feasible.is_none() {
                first_feasible = Some(f.objective);
            }
            if best.as_ref().is_none_or(|(_, b)| f.better_than(b)) {
                best = Some((x.clone(), *f));
                improved = true;
            }
        }
        let (best_x, best_f) = best.clone().expect("population is never empty");
        stale = if improved { 0 } else { stale + 1 };
        if best_f.is_feasible() && stale >= settings.patience {
            break;
        }

        let mut order: Vec<usize> = (0..pop.len()).collect();
        order.sort_by(|&a, &b| {
            if fit[a].better_than(&fit[b]) {
                std::cmp::Ordering::Less
            } else if fit[b].better_than(&fit[a]) {
                std::cmp::Ordering::Greater
            } else {
                std::cmp::Ordering::Equal
            }
        });
        let sel: Vec<&Vec<f64>> = order.iter().take(n_sel).map(|&i| &pop[i]).collect();
        let k = sel.len() as f64;
        let mean = DVector::from_fn(dim, |d, _| sel.iter().map(|x| x[d]).sum::<f64>() / k);
        let mut cov = DMatrix::zeros(dim, dim);
        for x in &sel {
            let dx = DVector::from_fn(dim, |d, _| x[d] - mean[d]);
            cov += &dx * dx.transpose();
        }
        cov /= k;

        multiplier = if improved { (multiplier.max(1.0) / MULTIPLIER_STEP).min(MULTIPLIER_MAX) } else { multiplier * MULTIPLIER_STEP };
        let spread = (0..dim).map(|d| cov[(d, d)]).fold(0.0, f64::max) * multiplier;
        if best_f.is_feasible() && spread < MIN_SPREAD {
            break;
        }
        cov *= multiplier;
        for d in 0..dim {
            cov[(d, d)] += MIN_SPREAD;
        }
        let chol = match cov.clone().cholesky() {
            Some(c) => c.l(),
            None => DMatrix::from_diagonal(&cov.diagonal().map(f64::sqrt)),
        };

        pop = Vec::with_capacity(n);
        pop.push(best_x);
        while pop.len() < n {
            let z = DVector::from_fn(dim, |_, _| rng.sample::<f64, _>(StandardNormal));
            let x = &mean + &chol * z;
            pop.push(x.iter().map(|v| v.clamp(0.0, 1.0)).collect());
        }
    }
    let (best, fitness) = best.expect("at least one evaluation");
    EdaOutcome { best, fitness, first_feasible, evaluations, generations }
}
