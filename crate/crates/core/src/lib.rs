//! Automatic construction of patient-specific CT phantoms.
//!
//! Patient features recorded on 2D radiographs drive nine regression models
//! that pick a receiver CT, predict liver and spleen positions and retrieve
//! donor organ shapes from a database of segmented CTs. The assembled phantom
//! is then repaired for anatomical inconsistencies by constrained
//! derivative-free optimization.

pub mod aic;
pub mod cohort;
pub mod evaluation;
pub mod gp;
pub mod pipeline;
pub mod regressors;
pub mod voxelgeom;

/// Deterministic child seed for a labelled sub-task (splitmix64 mixing).
pub fn derive_seed(seed: u64, parts: &[u64]) -> u64 {
    let mix = |mut z: u64| {
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    };
    parts.iter().fold(mix(seed.wrapping_add(0x9E37_79B9_7F4A_7C15)), |acc, &p| {
        mix(acc ^ p.wrapping_add(0x9E37_79B9_7F4A_7C15))
    })
}
