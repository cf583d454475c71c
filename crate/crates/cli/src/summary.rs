use std::fmt::Write as _;

use serde::Serialize;

use phantom_core::cohort::{Cohort, FEATURE_NAMES};

const DESCRIPTIONS: [(&str, &str); 12] = [
    ("Age", "years"),
    ("Abdominal diameter in AP at typical isocenter", "cm"),
    ("Abdominal diameter in LR at middle of L2", "cm"),
    ("Distance from top of iliac crest to spinal cord along LR", "cm"),
    ("Gender", "-"),
    ("Heart size along LR", "cm"),
    ("Height", "cm"),
    ("Left diaphragm length along LR", "cm"),
    ("Right diaphragm length along LR", "cm"),
    ("Right diaphragm top to T12 distance along IS", "cm"),
    ("Spinal cord length along IS from T12 to L4", "cm"),
    ("Weight", "kg"),
];

const GENDER: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FeatureSummary {
    pub name: &'static str,
    pub abbreviation: &'static str,
    pub unit: &'static str,
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    pub sd: f64,
    /// Female and male counts for the gender row.
    pub counts: Option<(usize, usize)>,
}

/// Per-feature minimum, maximum, mean and sample standard deviation.
pub fn feature_summary(cohort: &Cohort) -> Vec<FeatureSummary> {
    let rows: Vec<[f64; 12]> = cohort.records().iter().map(|r| r.features.to_array()).collect();
    let n = rows.len() as f64;
    (0..FEATURE_NAMES.len())
        .map(|i| {
            let v: Vec<f64> = rows.iter().map(|r| r[i]).collect();
            let mean = v.iter().sum::<f64>() / n;
            let sd = if v.len() > 1 { (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt() } else { 0.0 };
            let males = v.iter().filter(|x| **x == 1.0).count();
            FeatureSummary {
                name: DESCRIPTIONS[i].0,
                abbreviation: FEATURE_NAMES[i],
                unit: DESCRIPTIONS[i].1,
                min: v.iter().copied().fold(f64::INFINITY, f64::min),
                max: v.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                mean,
                sd,
                counts: (i == GENDER).then_some((v.len() - males, males)),
            }
        })
        .collect()
}

pub(crate) fn render(rows: &[FeatureSummary]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{:<58} {:<5} {:<6} {:>7} {:>7} {:>7} {:>7}", "Feature", "Abbr", "Unit", "Min", "Max", "Mean", "SD");
    for r in rows {
        match r.counts {
            Some((f, m)) => {
                let _ = writeln!(s, "{:<58} {:<5} {:<6} {f} females, {m} males", r.name, r.abbreviation, r.unit);
            }
            None => {
                let _ = writeln!(
                    s,
                    "{:<58} {:<5} {:<6} {:>7.1} {:>7.1} {:>7.1} {:>7.1}",
                    r.name, r.abbreviation, r.unit, r.min, r.max, r.mean, r.sd
                );
            }
        }
    }
    s
}
