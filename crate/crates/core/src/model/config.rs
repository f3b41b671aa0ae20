use crate::error::{Error, Result};

/// Architecture and SIE settings for the model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub image_h: usize,
    pub image_w: usize,
    pub channels: usize,
    /// Patch side length P.
    pub patch: usize,
    /// Embedding width D.
    pub dim: usize,
    /// Encoder depth.
    pub layers: usize,
    pub heads: usize,
    /// Local part-token count (face / torso / lower body by default).
    pub k_local: usize,
    /// SIE table size (domain, camera, or joint cardinality).
    pub n_sie: usize,
    /// SIE strength lambda.
    pub lambda_sie: f64,
    pub n_classes: usize,
    pub gem_enabled: bool,
    pub gem_p_init: f64,
}

impl Default for ModelConfig {
    /// Reference desk-scale configuration. Full scale would be 384x128
    /// images, patch 16, ViT-B; these defaults keep finite-difference
    /// checks cheap.
    fn default() -> Self {
        ModelConfig {
            image_h: 64,
            image_w: 32,
            channels: 3,
            patch: 8,
            dim: 64,
            layers: 2,
            heads: 4,
            k_local: 3,
            n_sie: 2,
            lambda_sie: 3.0,
            n_classes: 8,
            gem_enabled: false,
            gem_p_init: 3.0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.image_h == 0 || self.image_w == 0 || self.channels == 0 {
            return Err(Error::Config("model: image dimensions must be positive".into()));
        }
        if self.patch == 0 || self.image_h % self.patch != 0 || self.image_w % self.patch != 0 {
            return Err(Error::Config(format!(
                "model: image {}x{} not divisible by patch {}",
                self.image_h, self.image_w, self.patch
            )));
        }
        if self.dim == 0 || self.heads == 0 || self.dim % self.heads != 0 {
            return Err(Error::Config(format!(
                "model: dim {} not divisible by heads {}",
                self.dim, self.heads
            )));
        }
        if self.k_local == 0 {
            return Err(Error::Config("model: k_local must be >= 1".into()));
        }
        if self.n_sie == 0 {
            return Err(Error::Config("model: n_sie must be >= 1".into()));
        }
        if self.lambda_sie < 0.0 {
            return Err(Error::Config("model: lambda_sie must be >= 0".into()));
        }
        if self.n_classes == 0 {
            return Err(Error::Config("model: n_classes must be >= 1".into()));
        }
        if self.gem_enabled && self.gem_p_init < 1.0 {
            return Err(Error::Config("model: gem_p_init must be >= 1".into()));
        }
        Ok(())
    }

    /// N = (h/P) * (w/P)
    pub fn n_patches(&self) -> usize {
        (self.image_h / self.patch) * (self.image_w / self.patch)
    }

    /// N + K_local + 1
    pub fn seq_len(&self) -> usize {
        self.n_patches() + self.k_local + 1
    }

    pub fn patch_values(&self) -> usize {
        self.patch * self.patch * self.channels
    }

    pub fn mlp_hidden(&self) -> usize {
        4 * self.dim
    }

    /// 2*dim without GeM, 3*dim with it.
    pub fn feature_dim(&self) -> usize {
        if self.gem_enabled {
            3 * self.dim
        } else {
            2 * self.dim
        }
    }
}
