use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::schema::{AttributeSchema, Scale, TargetSpec};

/// Architecture hyperparameters plus the attribute/target schema the heads are
/// sized for.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Square input side in pixels.
    pub image_size: usize,
    /// Must divide `image_size`.
    pub patch_size: usize,
    pub channels: usize,
    pub embed_dim: usize,
    pub heads: usize,
    pub mlp_ratio: usize,
    pub backbone_layers: usize,
    pub attr_layers_per_branch: usize,
    pub target_layers: usize,
    pub decoder_enabled: bool,
    pub decoder_layers: usize,
    /// Adds learned positions to the stacked attribute tokens. Off by default,
    /// which makes the target branch invariant to attribute order.
    pub target_positional_embedding: bool,
    pub init_seed: u64,
    pub attributes: AttributeSchema,
    pub target: TargetSpec,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl ModelConfig {
    /// CPU-sized model for the synthetic blob data.
    pub fn desk() -> Self {
        Self {
            image_size: 64,
            patch_size: 8,
            channels: 1,
            embed_dim: 64,
            heads: 4,
            mlp_ratio: 4,
            backbone_layers: 2,
            attr_layers_per_branch: 1,
            target_layers: 1,
            decoder_enabled: true,
            decoder_layers: 2,
            target_positional_embedding: false,
            init_seed: 0,
            attributes: AttributeSchema::synthetic(),
            target: TargetSpec::new("target", Scale::ordinal(1, 5)),
        }
    }

    /// ViT-Base geometry with LIDC-IDRI attributes and a segmentation decoder.
    pub fn lidc() -> Self {
        Self {
            image_size: 224,
            patch_size: 16,
            channels: 1,
            embed_dim: 768,
            heads: 12,
            backbone_layers: 12,
            decoder_layers: 12,
            attributes: AttributeSchema::lidc(),
            target: TargetSpec::malignancy(),
            ..Self::desk()
        }
    }

    /// ViT-Base geometry with derm7pt criteria; no masks, so no decoder.
    pub fn derm7pt() -> Self {
        Self {
            channels: 3,
            decoder_enabled: false,
            attributes: AttributeSchema::derm7pt(),
            target: TargetSpec::diagnosis(),
            ..Self::lidc()
        }
    }

    pub fn grid_size(&self) -> usize {
        self.image_size / self.patch_size
    }

    pub fn num_patches(&self) -> usize {
        self.grid_size() * self.grid_size()
    }

    pub fn patch_dim(&self) -> usize {
        self.patch_size * self.patch_size * self.channels
    }

    pub fn num_attributes(&self) -> usize {
        self.attributes.len()
    }

    pub fn check(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.patch_size == 0 || self.image_size == 0 || self.image_size % self.patch_size != 0 {
            return fail(format!(
                "image_size {} must be a positive multiple of patch_size {}",
                self.image_size, self.patch_size
            ));
        }
        if self.heads == 0 || self.embed_dim == 0 || self.embed_dim % self.heads != 0 {
            return fail(format!(
                "embed_dim {} must be a positive multiple of heads {}",
                self.embed_dim, self.heads
            ));
        }
        if self.channels == 0 || self.mlp_ratio == 0 {
            return fail("channels and mlp_ratio must be positive".into());
        }
        if self.attr_layers_per_branch == 0 {
            return fail("attr_layers_per_branch must be at least 1".into());
        }
        self.attributes.check()?;
        self.target.scale.check()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_are_valid() {
        for cfg in [ModelConfig::desk(), ModelConfig::lidc(), ModelConfig::derm7pt()] {
            cfg.check().unwrap();
        }
        assert_eq!(ModelConfig::lidc().num_patches(), 196);
        assert_eq!(ModelConfig::desk().num_patches(), 64);
    }

    #[test]
    fn rejects_bad_geometry() {
        let cfg = ModelConfig {
            patch_size: 7,
            ..ModelConfig::desk()
        };
        assert!(matches!(cfg.check(), Err(Error::Config(_))));
        let cfg = ModelConfig {
            heads: 5,
            ..ModelConfig::desk()
        };
        assert!(cfg.check().is_err());
    }

    #[test]
    fn toml_round_trip() {
        let cfg = ModelConfig::derm7pt();
        let text = toml::to_string(&cfg).unwrap();
        let back: ModelConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, cfg);
    }
}
