#![allow(dead_code)]

use echoflow::data::{lorenz_generate, split, LorenzParams, Series, SplitFractions};
use echoflow::fusion::FusionConfig;
use echoflow::group::{default_group, GroupConfig};
use echoflow::models::{ModelConfig, Variant};
use echoflow::training::Dataset;

/// Two units of eight neurons, k = 8, τ = 2, d_model = 16.
pub fn toy_config(variant: Variant) -> ModelConfig {
    let mut group: GroupConfig = default_group().truncate(2);
    for u in &mut group.units {
        u.size = 8;
    }
    group.readout_dim = 4;
    ModelConfig {
        variant,
        embedding_dim: 2,
        embedding_enabled: true,
        group,
        fusion: FusionConfig {
            d_model: 16,
            heads: 2,
            layers: 2,
            dropout: 0.2,
            norm_eps: 1e-5,
        },
        lookback: 8,
        horizon: 2,
        base_hidden: 12,
    }
}

pub fn lorenz_x(steps: usize) -> Series {
    lorenz_generate(steps, 0.01, [1.0, 1.0, 1.0], LorenzParams::default())
        .unwrap()
        .select(&[0])
        .unwrap()
}

/// Normalized chronological dataset from `series`.
pub fn dataset(series: &Series, min_len: usize) -> Dataset {
    let splits = split(series, SplitFractions::default(), min_len).unwrap();
    let (norm, _) = splits.normalized().unwrap();
    Dataset::from_splits(&norm)
}
