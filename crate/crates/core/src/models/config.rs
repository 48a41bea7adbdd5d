use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::encoding::DEFAULT_EMBED_DIM;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arch {
    Mlp,
    Rnn,
    Lstm,
    Attention,
    SetTransformer,
}

impl Arch {
    pub const ALL: [Arch; 5] = [Arch::Mlp, Arch::Rnn, Arch::Lstm, Arch::Attention, Arch::SetTransformer];

    pub fn name(self) -> &'static str {
        match self {
            Arch::Mlp => "mlp",
            Arch::Rnn => "rnn",
            Arch::Lstm => "lstm",
            Arch::Attention => "attention",
            Arch::SetTransformer => "set_transformer",
        }
    }

    /// Row label used in comparison tables.
    pub fn display_name(self) -> &'static str {
        match self {
            Arch::Mlp => "MLP",
            Arch::Rnn => "RNN",
            Arch::Lstm => "LSTM",
            Arch::Attention => "Attention",
            Arch::SetTransformer => "Set Transformer",
        }
    }

    /// Width of the hidden layers at the default, capacity-matched configuration.
    pub fn default_hidden(self) -> usize {
        match self {
            Arch::Mlp | Arch::Rnn | Arch::Attention => 310,
            Arch::Lstm => 150,
            Arch::SetTransformer => 64,
        }
    }
}

impl fmt::Display for Arch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Arch {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Arch::ALL.into_iter().find(|a| a.name() == s).ok_or_else(|| {
            Error::Config(format!("unknown architecture `{s}`, expected one of mlp, rnn, lstm, attention, set_transformer"))
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub arch: Arch,
    /// BSSID embedding width `d`; rows fed to set/sequence models have `d + 1` columns.
    pub embed_dim: usize,
    /// Hidden width (MLP layers, recurrent state, attention-head MLP, or Set Transformer model width).
    pub hidden: usize,
    pub sab_blocks: usize,
    pub heads: usize,
    /// Width of the hidden layer in the Set Transformer's regression head.
    pub head_hidden: usize,
    pub multi_task: bool,
    pub num_classes: usize,
}

impl ModelConfig {
    pub fn new(arch: Arch) -> Self {
        ModelConfig {
            arch,
            embed_dim: DEFAULT_EMBED_DIM,
            hidden: arch.default_hidden(),
            sab_blocks: 2,
            heads: 4,
            head_hidden: 64,
            multi_task: false,
            num_classes: 0,
        }
    }

    pub fn with_classes(mut self, num_classes: usize) -> Self {
        self.multi_task = true;
        self.num_classes = num_classes;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.embed_dim == 0 || self.hidden == 0 {
            return Err(Error::Config("embedding and hidden widths must be positive".into()));
        }
        if self.arch == Arch::SetTransformer {
            if self.sab_blocks == 0 {
                return Err(Error::Config("set transformer needs at least one SAB".into()));
            }
            if self.heads == 0 || !self.hidden.is_multiple_of(self.heads) {
                return Err(Error::Config(format!(
                    "model width {} not divisible by {} heads",
                    self.hidden, self.heads
                )));
            }
            if self.head_hidden == 0 {
                return Err(Error::Config("head width must be positive".into()));
            }
        }
        if self.multi_task && self.num_classes < 2 {
            return Err(Error::Config(format!("multi-task head needs at least 2 classes, got {}", self.num_classes)));
        }
        Ok(())
    }
}
