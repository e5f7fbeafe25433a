//! Encoders: the channel-adaptive transformer and its two baselines.

pub mod baselines;
pub mod config;
pub mod encoder;
pub mod nn;
pub mod transformer;

use serde::{Deserialize, Serialize};

pub use baselines::{InterchannelEncoder, OneChannelEncoder, TokenLearner};
pub use config::{EncoderConfig, Pooling};
pub use encoder::{parameter_census, AttentionMaps, ChadaEncoder, Embedding};
pub use transformer::{Block, LayerAttention, MultiHeadAttention, TransformerStack};

use crate::autodiff::{ParamInit, ParamStore, Session, Var};
use crate::error::{Error, Result};
use crate::image::MultiChannelImage;
use crate::io::checkpoint::CheckpointError;
use crate::tensor::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arch {
    Chada,
    OneChannel,
    Interchannel,
}

impl std::str::FromStr for Arch {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "chada" => Ok(Arch::Chada),
            "onechannel" => Ok(Arch::OneChannel),
            "interchannel" => Ok(Arch::Interchannel),
            other => Err(Error::invalid(format!(
                "unknown architecture {other:?} (expected chada, onechannel or interchannel)"
            ))),
        }
    }
}

impl std::fmt::Display for Arch {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Arch::Chada => "chada",
            Arch::OneChannel => "onechannel",
            Arch::Interchannel => "interchannel",
        })
    }
}

/// Any of the three encoders behind one interface.
#[derive(Clone, Debug)]
pub enum Backbone {
    Chada(ChadaEncoder),
    OneChannel(OneChannelEncoder),
    Interchannel(InterchannelEncoder),
}

impl Backbone {
    pub fn init<T: Scalar, R: rand::Rng>(arch: Arch, config: &EncoderConfig, init: &mut ParamInit<'_, T, R>) -> Result<Self> {
        Ok(match arch {
            Arch::Chada => Backbone::Chada(ChadaEncoder::init(config, init)?),
            Arch::OneChannel => Backbone::OneChannel(OneChannelEncoder::init(config, init)?),
            Arch::Interchannel => Backbone::Interchannel(InterchannelEncoder::init(config, init)?),
        })
    }

    pub fn arch(&self) -> Arch {
        match self {
            Backbone::Chada(_) => Arch::Chada,
            Backbone::OneChannel(_) => Arch::OneChannel,
            Backbone::Interchannel(_) => Arch::Interchannel,
        }
    }

    /// Width of the vector produced by [`Backbone::forward_unit`].
    pub fn unit_dim(&self) -> usize {
        match self {
            Backbone::Chada(e) => e.config.dim,
            Backbone::OneChannel(e) => e.segment_width(),
            Backbone::Interchannel(e) => e.config.dim,
        }
    }

    /// Embedding width for an image with `n` channels.
    pub fn output_width(&self, n: usize) -> usize {
        match self {
            Backbone::OneChannel(e) => n * e.segment_width(),
            _ => self.unit_dim(),
        }
    }

    /// The training unit's `[1, unit_dim]` representation. For the
    /// one-channel baseline the unit is a single-channel image.
    pub fn forward_unit<T: Scalar>(&self, sess: &mut Session<'_, T>, image: &MultiChannelImage) -> Result<Var> {
        match self {
            Backbone::Chada(e) => e.forward(sess, image),
            Backbone::OneChannel(e) => {
                if image.channels() != 1 {
                    return Err(Error::ChannelCount {
                        count: image.channels(),
                        max: 1,
                    });
                }
                e.vit.forward(sess, image)
            }
            Backbone::Interchannel(e) => e.forward(sess, image),
        }
    }

    /// Full-image embedding, differentiable.
    pub fn forward<T: Scalar>(&self, sess: &mut Session<'_, T>, image: &MultiChannelImage) -> Result<Var> {
        match self {
            Backbone::Chada(e) => e.forward(sess, image),
            Backbone::OneChannel(e) => e.forward(sess, image),
            Backbone::Interchannel(e) => e.forward(sess, image),
        }
    }

    pub fn encode<T: Scalar>(&self, store: &ParamStore<T>, image: &MultiChannelImage) -> Result<Embedding<T>> {
        match self {
            Backbone::Chada(e) => e.encode(store, image),
            Backbone::OneChannel(e) => e.encode(store, image),
            Backbone::Interchannel(e) => e.encode(store, image),
        }
    }
}

/// Checks that `found` has exactly the names and shapes of `expected`, in
/// order, naming the first difference.
pub fn check_layout<T: Scalar>(expected: &ParamStore<T>, found: &ParamStore<T>) -> Result<()> {
    for (i, e) in expected.entries().iter().enumerate() {
        let Some(f) = found.entries().get(i) else {
            return Err(CheckpointError::MissingEntry(e.name.clone()).into());
        };
        if f.name != e.name || f.value.shape() != e.value.shape() {
            return Err(CheckpointError::EntryMismatch {
                name: e.name.clone(),
                expected: e.value.shape().to_vec(),
                found: f.value.shape().to_vec(),
            }
            .into());
        }
    }
    if found.len() > expected.len() {
        return Err(CheckpointError::UnexpectedEntry(found.entries()[expected.len()].name.clone()).into());
    }
    Ok(())
}
