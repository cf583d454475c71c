use serde::{Deserialize, Serialize};

use super::{better, scaled, Budget, Columns, Evolver, GomStats, Gomea, GpTrad, Individual, ScaledExpr, WorkMeter, PERFECT_FIT};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GpAlgo {
    Trad,
    Gomea,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImsConfig {
    /// Generations of the newest run before the next run is launched.
    pub g_ims: usize,
    pub base_population: usize,
    /// Largest population that may still be launched.
    pub max_population: usize,
    pub budget: Budget,
    pub seed: u64,
}

impl Default for ImsConfig {
    fn default() -> Self {
        ImsConfig {
            g_ims: 4,
            base_population: 64,
            max_population: 64 << 10,
            budget: Budget::nominal_seconds(60.0),
            seed: 0,
        }
    }
}

impl ImsConfig {
    pub fn with_budget(budget: Budget, seed: u64) -> Self {
        ImsConfig { budget, seed, ..Default::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub population: usize,
    pub generations: usize,
    /// Completed rounds (first-run generations) when this run was launched.
    pub started_after: usize,
    pub terminated: bool,
    pub best_mae: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImsOutcome {
    pub best: ScaledExpr,
    pub mae: f64,
    pub runs: Vec<RunSummary>,
    pub work: u64,
    pub gom: GomStats,
}

/// Round-based interleaving: each round every live run performs one
/// generation, smallest population first. A new run with twice the
/// population is launched once the newest run has completed `g_ims`
/// generations.
struct Slot<E> {
    run: E,
    summary: RunSummary,
}

fn drive<E: Evolver>(data: &Columns, cfg: &ImsConfig, gom_stats: impl Fn(&E) -> GomStats) -> ImsOutcome {
    let mut meter = WorkMeter::new(cfg.budget);
    let mut runs: Vec<Slot<E>> = Vec::new();
    let mut best: Option<Individual> = None;
    let offer = |best: &mut Option<Individual>, cand: &Individual| {
        if best.as_ref().is_none_or(|b| better(cand, b)) {
            *best = Some(*cand);
        }
    };

    let base = cfg.base_population.max(2);
    let (run, w) = E::start(data, base, cfg.seed);
    meter.charge(w);
    offer(&mut best, run.best());
    runs.push(Slot {
        summary: RunSummary { population: base, generations: 0, started_after: 0, terminated: false, best_mae: run.best().mae },
        run,
    });

    let mut rounds = 0usize;
    'outer: loop {
        if meter.exhausted() || best.as_ref().is_some_and(|b| b.mae <= PERFECT_FIT) {
            break;
        }
        for slot in runs.iter_mut().filter(|s| !s.summary.terminated) {
            let w = slot.run.step(data);
            meter.charge(w);
            slot.summary.generations = slot.run.generations();
            slot.summary.best_mae = slot.run.best().mae;
            offer(&mut best, slot.run.best());
            if meter.exhausted() || slot.summary.best_mae <= PERFECT_FIT {
                break 'outer;
            }
        }
        rounds += 1;
        // Smaller runs are overtaken by strictly better larger ones.
        for i in 0..runs.len() {
            if runs[i].summary.terminated {
                continue;
            }
            let mine = runs[i].summary.best_mae;
            if runs[i + 1..].iter().any(|r| !r.summary.terminated && r.summary.best_mae < mine) {
                runs[i].summary.terminated = true;
            }
        }
        let newest = runs.last().expect("at least one run");
        let next_pop = newest.summary.population.saturating_mul(2);
        if newest.summary.generations >= cfg.g_ims && next_pop <= cfg.max_population {
            let cost = next_pop as u64 * data.eval_cost();
            if meter.affords(cost) {
                let seed = cfg.seed.wrapping_add((runs.len() as u64).wrapping_mul(0x5851_F42D_4C95_7F2D));
                let (run, w) = E::start(data, next_pop, seed);
                meter.charge(w);
                offer(&mut best, run.best());
                runs.push(Slot {
                    summary: RunSummary {
                        population: next_pop,
                        generations: 0,
                        started_after: rounds,
                        terminated: false,
                        best_mae: run.best().mae,
                    },
                    run,
                });
            }
        }
    }

    let best = best.expect("initial population evaluated");
    let gom = runs.iter().fold(GomStats::default(), |mut acc, s| {
        let g = gom_stats(&s.run);
        acc.evaluated += g.evaluated;
        acc.accepted += g.accepted;
        acc.violations += g.violations;
        acc
    });
    ImsOutcome {
        best: scaled(&best, data),
        mae: best.mae,
        runs: runs.into_iter().map(|s| s.summary).collect(),
        work: meter.used(),
        gom,
    }
}

/// Runs the interleaved multistart scheme and returns the best expression
/// over all runs (ties to the smaller expression).
pub fn ims_run(data: &Columns, algo: GpAlgo, cfg: &ImsConfig) -> ImsOutcome {
    match algo {
        GpAlgo::Trad => drive::<GpTrad>(data, cfg, |_| GomStats::default()),
        GpAlgo::Gomea => drive::<Gomea>(data, cfg, |g| g.stats()),
    }
}

/// Launch points (in first-run generations) of the runs started while the
/// first run completes `first_run_generations` generations, assuming no run
/// is terminated.
pub fn ims_schedule(g_ims: usize, first_run_generations: usize) -> Vec<usize> {
    let mut starts = vec![0usize];
    let mut gens = vec![0usize];
    while gens[0] < first_run_generations {
        gens.iter_mut().for_each(|g| *g += 1);
        if gens[0] >= first_run_generations {
            break;
        }
        if *gens.last().expect("non-empty") >= g_ims {
            starts.push(gens[0]);
            gens.push(0);
        }
    }
    starts
}
