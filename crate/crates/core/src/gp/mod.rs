//! Symbolic regression on a fixed height-2 expression template, evolved by
//! traditional GP or GP-GOMEA and scheduled by the interleaved multistart
//! scheme.

mod budget;
mod gomea;
mod ims;
mod render;
mod trad;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use budget::{Budget, WorkMeter, EVAL_OVERHEAD_ROWS, NOMINAL_ROW_EVALS_PER_SECOND};
pub use gomea::{gomea_run, linkage_tree, slot_nmi, GomStats, Gomea};
pub use ims::{ims_run, ims_schedule, GpAlgo, ImsConfig, ImsOutcome, RunSummary};
pub use render::{expr_to_string, expr_to_string_exact, parse_expr, ParseError};
pub use trad::{gp_trad_run, GpTrad};

/// Number of slots in the height-2 template.
pub const SLOTS: usize = 7;
/// First leaf slot; slots `LEAF_START..SLOTS` only hold terminals.
pub const LEAF_START: usize = 3;
pub const ERC_RANGE: f64 = 10.0;
/// Pre-image clamp applied to `exp`.
pub const EXP_CLAMP: f64 = 700.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Symbol {
    Add,
    Sub,
    Mul,
    /// Analytic quotient `a / sqrt(1 + b^2)`.
    Aq,
    Exp,
    /// Protected logarithm `ln|a|`, 0 at 0.
    Log,
    Var(usize),
    Const(f64),
}

pub const FUNCTIONS: [Symbol; 6] = [Symbol::Add, Symbol::Sub, Symbol::Mul, Symbol::Aq, Symbol::Exp, Symbol::Log];

impl Symbol {
    pub fn arity(self) -> usize {
        match self {
            Symbol::Add | Symbol::Sub | Symbol::Mul | Symbol::Aq => 2,
            Symbol::Exp | Symbol::Log => 1,
            Symbol::Var(_) | Symbol::Const(_) => 0,
        }
    }

    pub fn is_terminal(self) -> bool {
        self.arity() == 0
    }
}

#[inline]
fn finite(v: f64) -> f64 {
    v.clamp(-f64::MAX, f64::MAX)
}

#[inline]
pub fn aq(a: f64, b: f64) -> f64 {
    finite(a / 1f64.hypot(b))
}

#[inline]
pub fn log_p(a: f64) -> f64 {
    if a == 0.0 {
        0.0
    } else {
        a.abs().ln()
    }
}

#[inline]
pub fn exp_c(a: f64) -> f64 {
    finite(a.min(EXP_CLAMP).exp())
}

#[inline]
fn apply(sym: Symbol, a: f64, b: f64) -> f64 {
    match sym {
        Symbol::Add => finite(a + b),
        Symbol::Sub => finite(a - b),
        Symbol::Mul => finite(a * b),
        Symbol::Aq => aq(a, b),
        Symbol::Exp => exp_c(a),
        Symbol::Log => log_p(a),
        Symbol::Var(_) | Symbol::Const(_) => unreachable!("terminals have no operands"),
    }
}

/// A perfect binary tree of height 2 stored in heap order: the children of
/// slot `i` are `2i + 1` and `2i + 2`. Unary functions read their left child;
/// slots under terminals are inert.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExprTree {
    pub slots: [Symbol; SLOTS],
}

impl ExprTree {
    pub fn new(slots: [Symbol; SLOTS]) -> Self {
        ExprTree { slots }
    }

    /// A single terminal at the root.
    pub fn terminal(sym: Symbol) -> Self {
        let mut slots = [Symbol::Const(0.0); SLOTS];
        slots[0] = sym;
        ExprTree { slots }
    }

    pub fn depth(slot: usize) -> usize {
        match slot {
            0 => 0,
            1 | 2 => 1,
            _ => 2,
        }
    }

    /// Slots that contribute to the output.
    pub fn active(&self) -> [bool; SLOTS] {
        let mut act = [false; SLOTS];
        act[0] = true;
        for s in 0..LEAF_START {
            if act[s] {
                let a = self.slots[s].arity();
                if a >= 1 {
                    act[2 * s + 1] = true;
                }
                if a == 2 {
                    act[2 * s + 2] = true;
                }
            }
        }
        act
    }

    /// Number of non-inert nodes.
    pub fn size(&self) -> usize {
        self.active().iter().filter(|&&a| a).count()
    }

    /// Height of the active tree.
    pub fn height(&self) -> usize {
        let act = self.active();
        (0..SLOTS).filter(|&s| act[s]).map(Self::depth).max().unwrap_or(0)
    }

    /// Checks arity placement: leaves hold terminals and feature indices are in range.
    pub fn is_valid(&self, n_features: usize) -> bool {
        self.slots.iter().enumerate().all(|(s, sym)| {
            (s < LEAF_START || sym.is_terminal())
                && match *sym {
                    Symbol::Var(i) => i < n_features,
                    Symbol::Const(c) => c.is_finite(),
                    _ => true,
                }
        })
    }

    pub fn eval(&self, row: &[f64]) -> f64 {
        self.eval_slot(0, row)
    }

    fn eval_slot(&self, s: usize, row: &[f64]) -> f64 {
        match self.slots[s] {
            Symbol::Var(i) => row[i],
            Symbol::Const(c) => c,
            sym if sym.arity() == 1 => apply(sym, self.eval_slot(2 * s + 1, row), 0.0),
            sym => apply(sym, self.eval_slot(2 * s + 1, row), self.eval_slot(2 * s + 2, row)),
        }
    }

    /// Evaluates every row of column-major data into `out`.
    pub fn eval_columns(&self, data: &Columns, scratch: &mut Scratch, out: &mut Vec<f64>) {
        let n = data.n_rows;
        let act = self.active();
        let Scratch { bufs, consts: [c0, c1], .. } = scratch;
        for s in (0..SLOTS).rev() {
            if !act[s] {
                continue;
            }
            let sym = self.slots[s];
            if sym.is_terminal() {
                continue;
            }
            let (lo, hi) = bufs.split_at_mut(s + 1);
            let dst = &mut lo[s];
            dst.resize(n, 0.0);
            let l = 2 * s + 1;
            let left: &[f64] = match self.slots[l] {
                Symbol::Var(i) => &data.cols[i],
                Symbol::Const(c) => {
                    c0.clear();
                    c0.resize(n, c);
                    c0
                }
                _ => &hi[l - s - 1],
            };
            if sym.arity() == 1 {
                match sym {
                    Symbol::Exp => dst.iter_mut().zip(left).for_each(|(d, &a)| *d = exp_c(a)),
                    _ => dst.iter_mut().zip(left).for_each(|(d, &a)| *d = log_p(a)),
                }
                continue;
            }
            let r = 2 * s + 2;
            let right: &[f64] = match self.slots[r] {
                Symbol::Var(i) => &data.cols[i],
                Symbol::Const(c) => {
                    c1.clear();
                    c1.resize(n, c);
                    c1
                }
                _ => &hi[r - s - 1],
            };
            match sym {
                Symbol::Add => dst.iter_mut().zip(left.iter().zip(right)).for_each(|(d, (&a, &b))| *d = finite(a + b)),
                Symbol::Sub => dst.iter_mut().zip(left.iter().zip(right)).for_each(|(d, (&a, &b))| *d = finite(a - b)),
                Symbol::Mul => dst.iter_mut().zip(left.iter().zip(right)).for_each(|(d, (&a, &b))| *d = finite(a * b)),
                _ => dst.iter_mut().zip(left.iter().zip(right)).for_each(|(d, (&a, &b))| *d = aq(a, b)),
            }
        }
        out.clear();
        match self.slots[0] {
            Symbol::Var(i) => out.extend_from_slice(&data.cols[i]),
            Symbol::Const(c) => out.resize(n, c),
            _ => out.extend_from_slice(&bufs[0]),
        }
    }
}

/// Column-major copy of a design matrix with its target.
#[derive(Debug, Clone)]
pub struct Columns {
    pub cols: Vec<Vec<f64>>,
    pub y: Vec<f64>,
    pub n_rows: usize,
}

impl Columns {
    pub fn new(rows: &[Vec<f64>], y: &[f64]) -> Self {
        let p = rows.first().map_or(0, |r| r.len());
        let cols = (0..p).map(|j| rows.iter().map(|r| r[j]).collect()).collect();
        Columns { cols, y: y.to_vec(), n_rows: rows.len() }
    }

    pub fn n_features(&self) -> usize {
        self.cols.len()
    }

    /// Budget units charged for evaluating one expression on every row.
    pub fn eval_cost(&self) -> u64 {
        self.n_rows as u64 + EVAL_OVERHEAD_ROWS
    }
}

/// Reusable buffers for [`ExprTree::eval_columns`].
#[derive(Debug, Clone, Default)]
pub struct Scratch {
    bufs: [Vec<f64>; SLOTS],
    consts: [Vec<f64>; 2],
    out: Vec<f64>,
}

/// Expression with the least-squares linear scaling `intercept + slope * f`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScaledExpr {
    pub tree: ExprTree,
    pub intercept: f64,
    pub slope: f64,
}

impl ScaledExpr {
    pub fn predict(&self, row: &[f64]) -> f64 {
        finite(self.intercept + self.slope * self.tree.eval(row))
    }
}

/// Least-squares intercept and slope of `y ~ a + b * f`; slope 0 when `f`
/// is (numerically) constant or the fit is not finite.
pub fn linear_scaling(f: &[f64], y: &[f64]) -> (f64, f64) {
    let n = f.len() as f64;
    let mf = f.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    if !mf.is_finite() {
        return (my, 0.0);
    }
    let mut sff = 0.0;
    let mut sfy = 0.0;
    for (&a, &b) in f.iter().zip(y) {
        let d = a - mf;
        sff += d * d;
        sfy += d * (b - my);
    }
    let slope = sfy / sff;
    if !(sff > 1e-12 * n) || !slope.is_finite() || !sff.is_finite() {
        return (my, 0.0);
    }
    let intercept = my - slope * mf;
    if !intercept.is_finite() {
        return (my, 0.0);
    }
    (intercept, slope)
}

/// Training MAE after linear scaling, plus the scaling itself. Non-finite
/// results map to `+inf`.
pub fn fitness(tree: &ExprTree, data: &Columns, scratch: &mut Scratch) -> (f64, f64, f64) {
    let mut out = std::mem::take(&mut scratch.out);
    tree.eval_columns(data, scratch, &mut out);
    let (a, b) = linear_scaling(&out, &data.y);
    let mae = out.iter().zip(&data.y).map(|(&f, &y)| (a + b * f - y).abs()).sum::<f64>() / data.n_rows as f64;
    scratch.out = out;
    let mae = if mae.is_finite() { mae } else { f64::INFINITY };
    (mae, a, b)
}

/// An individual: tree plus cached fitness.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Individual {
    pub tree: ExprTree,
    pub mae: f64,
}

/// `true` if `a` is preferred over `b`: lower MAE, ties to the smaller tree.
pub fn better(a: &Individual, b: &Individual) -> bool {
    a.mae < b.mae || (a.mae == b.mae && a.tree.size() < b.tree.size())
}

/// Draw helpers shared by both variants.
#[derive(Debug, Clone)]
pub(crate) struct Sampler {
    pub n_features: usize,
}

impl Sampler {
    pub fn terminal<R: Rng>(&self, rng: &mut R) -> Symbol {
        let k = rng.random_range(0..=self.n_features);
        if k == self.n_features {
            Symbol::Const(rng.random_range(-ERC_RANGE..=ERC_RANGE))
        } else {
            Symbol::Var(k)
        }
    }

    pub fn function<R: Rng>(&self, rng: &mut R) -> Symbol {
        FUNCTIONS[rng.random_range(0..FUNCTIONS.len())]
    }

    pub fn any<R: Rng>(&self, rng: &mut R) -> Symbol {
        let nt = self.n_features + 1;
        if rng.random_range(0..nt + FUNCTIONS.len()) < FUNCTIONS.len() {
            self.function(rng)
        } else {
            self.terminal(rng)
        }
    }

    /// Symbol valid for `slot`.
    pub fn for_slot<R: Rng>(&self, slot: usize, rng: &mut R) -> Symbol {
        if slot >= LEAF_START {
            self.terminal(rng)
        } else {
            self.any(rng)
        }
    }

    /// Ramped half-and-half initialization over heights 1 and 2.
    pub fn ramped<R: Rng>(&self, index: usize, rng: &mut R) -> ExprTree {
        let height = 1 + index % 2;
        let full = (index / 2) % 2 == 0;
        let mut slots = [Symbol::Const(0.0); SLOTS];
        for (s, slot) in slots.iter_mut().enumerate() {
            let d = ExprTree::depth(s);
            *slot = if d >= height {
                self.terminal(rng)
            } else if full || d == 0 {
                self.function(rng)
            } else if rng.random_bool(0.5) {
                self.function(rng)
            } else {
                self.terminal(rng)
            };
        }
        ExprTree { slots }
    }
}

/// Output of one evolutionary run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub best: ScaledExpr,
    pub mae: f64,
    pub generations: usize,
    pub work: u64,
}

pub(crate) fn scaled(ind: &Individual, data: &Columns) -> ScaledExpr {
    let (_, a, b) = fitness(&ind.tree, data, &mut Scratch::default());
    ScaledExpr { tree: ind.tree, intercept: a, slope: b }
}

/// Independent random stream for `(seed, a, b)`, used to give every
/// individual of every generation its own generator.
pub(crate) fn stream_rng(seed: u64, a: u64, b: u64) -> rand_chacha::ChaCha8Rng {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(a.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ b);
    rng
}

/// Evaluates trees in parallel; results do not depend on scheduling.
pub(crate) fn evaluate_all(trees: &[ExprTree], data: &Columns) -> Vec<Individual> {
    use rayon::prelude::*;
    trees
        .par_iter()
        .map_init(Scratch::default, |scratch, t| Individual { tree: *t, mae: fitness(t, data, scratch).0 })
        .collect()
}

/// Best individual of a slice under [`better`]; earlier entries win ties.
pub(crate) fn best_of(pop: &[Individual]) -> Individual {
    let mut best = pop[0];
    for ind in &pop[1..] {
        if better(ind, &best) {
            best = *ind;
        }
    }
    best
}

/// One evolutionary run that can be advanced a generation at a time.
pub trait Evolver: Send {
    /// Initial population; returns the run and the work spent evaluating it.
    fn start(data: &Columns, population: usize, seed: u64) -> (Self, u64)
    where
        Self: Sized;
    /// Advances one generation; returns the work spent.
    fn step(&mut self, data: &Columns) -> u64;
    fn best(&self) -> &Individual;
    fn generations(&self) -> usize;
    fn population(&self) -> usize;
}

/// Drives a single run until the budget, the generation cap, or a perfect
/// fit stops it.
pub(crate) fn run_single<E: Evolver>(data: &Columns, cfg: &RunConfig) -> (E, RunResult) {
    let mut meter = WorkMeter::new(cfg.budget);
    let (mut run, w) = E::start(data, cfg.population, cfg.seed);
    meter.charge(w);
    while !meter.exhausted()
        && cfg.max_generations.is_none_or(|g| run.generations() < g)
        && run.best().mae > PERFECT_FIT
    {
        let w = run.step(data);
        meter.charge(w);
    }
    let best = *run.best();
    let result = RunResult { best: scaled(&best, data), mae: best.mae, generations: run.generations(), work: meter.used() };
    (run, result)
}

/// Training MAE treated as an exact fit; search stops early once reached.
pub const PERFECT_FIT: f64 = 1e-12;

/// Settings shared by single runs of either variant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub population: usize,
    pub max_generations: Option<usize>,
    pub budget: Budget,
    pub seed: u64,
}
