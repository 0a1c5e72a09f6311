//! Synthetic ground truth and the three task-specific degradation models.

mod dataset;
mod degrade;
mod phantom;

pub use dataset::{
    generate_dataset, load_split, sample_seed, Aux, DatasetManifest, DatasetParams, Sample, Split, Task,
};
pub use degrade::{
    degrade_denoise, degrade_recon, degrade_sr, make_g_field, make_g_field_with, sr_block, GFieldParams,
    SensitivityLossField,
};
pub use phantom::{make_phantom, PhantomSpec};

/// SplitMix64 step, used to derive independent sub-seeds.
pub fn mix_seed(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
