use serde::{Deserialize, Serialize};

use crate::error::{MppError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub embed_dim: usize,
    pub mlp_dim: usize,
    pub n_heads: usize,
    pub n_blocks: usize,
    pub patch: [usize; 2],
    /// Per-stage strides of the hMLP patcher; their product is the patch size.
    pub stage_strides: Vec<usize>,
    /// Context length `T`.
    pub history: usize,
    pub drop_path_rate: f64,
    pub rpe_buckets: usize,
    pub rpe_max_exact: usize,
    pub rpe_max_distance: usize,
}

impl ModelConfig {
    fn base(embed_dim: usize, mlp_dim: usize, n_heads: usize, n_blocks: usize, patch: usize, stage_strides: Vec<usize>) -> Self {
        Self {
            embed_dim,
            mlp_dim,
            n_heads,
            n_blocks,
            patch: [patch, patch],
            stage_strides,
            history: 16,
            drop_path_rate: 0.1,
            rpe_buckets: 32,
            rpe_max_exact: 8,
            rpe_max_distance: 128,
        }
    }

    /// Desk-scale preset: D=64, MLP 256, 4 heads, 4 blocks, patch 4.
    pub fn micro() -> Self {
        Self::base(64, 256, 4, 4, 4, vec![2, 2])
    }

    /// Gradient-check size: D=8, 2 heads, 1 block, T=3.
    pub fn tiny() -> Self {
        let mut c = Self::base(8, 16, 2, 1, 4, vec![2, 2]);
        c.history = 3;
        c.drop_path_rate = 0.0;
        c
    }

    pub fn preset(name: &str) -> Result<Self> {
        let strides16 = vec![4, 2, 2];
        Ok(match name {
            "tiny" => Self::tiny(),
            "micro" => Self::micro(),
            "ti" | "avit-ti" => Self::base(192, 768, 3, 12, 16, strides16),
            "s" | "avit-s" => Self::base(384, 1536, 6, 12, 16, strides16),
            "b" | "avit-b" => Self::base(768, 3072, 12, 12, 16, strides16),
            "l" | "avit-l" => Self::base(1024, 4096, 16, 24, 16, strides16),
            other => {
                return Err(MppError::Unknown {
                    kind: "model preset",
                    name: other.to_string(),
                })
            }
        })
    }

    pub fn head_dim(&self) -> usize {
        self.embed_dim / self.n_heads
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            self.embed_dim,
            self.mlp_dim,
            self.n_heads,
            self.n_blocks,
            self.history,
            self.rpe_buckets,
            self.rpe_max_exact,
        ];
        if positive.contains(&0) {
            return Err(MppError::config("model dimensions must be positive"));
        }
        if !self.embed_dim.is_multiple_of(self.n_heads) {
            return Err(MppError::config(format!(
                "embed_dim {} not divisible by n_heads {}",
                self.embed_dim, self.n_heads
            )));
        }
        let prod: usize = self.stage_strides.iter().product();
        if self.stage_strides.is_empty() || self.patch[0] != self.patch[1] || prod != self.patch[0] {
            return Err(MppError::config(format!(
                "stage strides {:?} must multiply to the square patch {:?}",
                self.stage_strides, self.patch
            )));
        }
        if !self.rpe_buckets.is_multiple_of(2) || self.rpe_max_exact >= self.rpe_buckets / 2 || self.rpe_max_distance <= self.rpe_max_exact {
            return Err(MppError::config("need even rpe_buckets with rpe_max_exact < rpe_buckets/2 < ... < rpe_max_distance"));
        }
        if !(0.0..1.0).contains(&self.drop_path_rate) {
            return Err(MppError::config("drop_path_rate must be in [0, 1)"));
        }
        Ok(())
    }

    /// Closed-form parameter count for a registry of `n_fields` fields.
    pub fn parameter_count(&self, n_fields: usize) -> usize {
        let d = self.embed_dim;
        let filters = 2 * d * n_fields;
        let stages: usize = self.stage_strides.iter().map(|s| s * s * d * d + d).sum::<usize>() * 2;
        let attn = d * 3 * d + d * d + d + self.n_heads;
        let mlp = d * self.mlp_dim + self.mlp_dim + self.mlp_dim * d + d;
        let block = 4 * 2 * d + 2 * attn + mlp;
        let rpe = 2 * self.rpe_buckets * self.n_heads;
        filters + stages + self.n_blocks * block + rpe
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        for name in ["tiny", "micro", "ti", "s", "b", "l"] {
            ModelConfig::preset(name).unwrap().validate().unwrap();
        }
        let ti = ModelConfig::preset("ti").unwrap();
        assert_eq!((ti.embed_dim, ti.mlp_dim, ti.n_heads, ti.n_blocks, ti.patch), (192, 768, 3, 12, [16, 16]));
    }

    #[test]
    fn ti_parameter_count_is_in_published_range() {
        // 7.6M reported for the tiny preset with a multi-field registry
        let n = ModelConfig::preset("ti").unwrap().parameter_count(12);
        assert!((6_000_000..9_000_000).contains(&n), "{n}");
    }

    #[test]
    fn invalid_configs() {
        let mut c = ModelConfig::micro();
        c.n_heads = 3;
        assert!(c.validate().is_err());
        let mut c = ModelConfig::micro();
        c.stage_strides = vec![2, 4];
        assert!(c.validate().is_err());
    }
}
