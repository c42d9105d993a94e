use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::flows::FlowKind;

/// What the posterior network sees.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Conditioning {
    /// `q(Z | x)`: usable at prediction time.
    SourceOnly,
    /// `q(Z | x, y)`: training and likelihood evaluation only.
    SourceAndTarget,
}

/// How (and whether) a sentence-level code reaches the decoder.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum LatentMode {
    /// Plain Transformer, no injection.
    Off,
    /// Deterministic `Z = meanpool(x)`, injected through the same gate.
    Static,
    /// Sampled `Z` from the flow posterior, trained with the ELBO.
    Variational,
}

macro_rules! text_enum {
    ($ty:ty, $what:literal, $($variant:path => $name:literal),+ $(,)?) => {
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(match self { $($variant => $name),+ })
            }
        }
        impl FromStr for $ty {
            type Err = Error;
            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($name => Ok($variant),)+
                    other => Err(Error::Config(format!(concat!("unknown ", $what, " {:?}"), other))),
                }
            }
        }
    };
}

text_enum!(Conditioning, "posterior conditioning",
    Conditioning::SourceOnly => "source_only",
    Conditioning::SourceAndTarget => "source_and_target");
text_enum!(LatentMode, "latent mode",
    LatentMode::Off => "off",
    LatentMode::Static => "static",
    LatentMode::Variational => "variational");

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub n_layers_enc: usize,
    pub n_layers_dec: usize,
    pub d_ffn: usize,
    pub latent_dim: usize,
    pub latent: LatentMode,
    pub flow_kind: FlowKind,
    /// `K`; zero gives a plain Gaussian posterior.
    pub n_flows: usize,
    /// `M`, hidden units of each Sylvester flow.
    pub ortho_columns: usize,
    pub conditioning: Conditioning,
}

impl Default for ModelConfig {
    /// Desk-scale defaults.
    fn default() -> Self {
        Self {
            vocab_size: 64,
            d_model: 64,
            n_heads: 2,
            n_layers_enc: 2,
            n_layers_dec: 2,
            d_ffn: 128,
            latent_dim: 16,
            latent: LatentMode::Variational,
            flow_kind: FlowKind::Planar,
            n_flows: 4,
            ortho_columns: 8,
            conditioning: Conditioning::SourceOnly,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.vocab_size <= crate::datasim::FIRST_CONTENT_ID {
            return fail(format!("vocab_size {} leaves no content tokens", self.vocab_size));
        }
        if self.d_model == 0 || self.n_heads == 0 || self.d_model % self.n_heads != 0 {
            return fail(format!("d_model {} is not divisible by n_heads {}", self.d_model, self.n_heads));
        }
        if self.d_ffn == 0 || self.n_layers_dec == 0 || self.n_layers_enc == 0 {
            return fail("layer sizes must be positive".into());
        }
        if self.latent == LatentMode::Variational {
            if self.latent_dim == 0 {
                return fail("latent_dim must be positive".into());
            }
            if self.n_flows > 0 && self.flow_kind == FlowKind::Coupling && self.latent_dim % 2 != 0 {
                return fail(format!("coupling flows need an even latent_dim, got {}", self.latent_dim));
            }
            if self.n_flows > 0
                && self.flow_kind == FlowKind::Sylvester
                && (self.ortho_columns == 0 || self.ortho_columns > self.latent_dim)
            {
                return fail(format!(
                    "sylvester flows need 0 < ortho_columns <= latent_dim, got M={} D={}",
                    self.ortho_columns, self.latent_dim
                ));
            }
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    /// Width of the vector the posterior networks read.
    pub fn context_dim(&self) -> usize {
        match self.conditioning {
            Conditioning::SourceOnly => self.d_model,
            Conditioning::SourceAndTarget => 2 * self.d_model,
        }
    }

    /// Width of the code mixed into the decoder state.
    pub fn code_dim(&self) -> usize {
        match self.latent {
            LatentMode::Off => 0,
            LatentMode::Static => self.d_model,
            LatentMode::Variational => self.latent_dim,
        }
    }
}
