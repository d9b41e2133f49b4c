use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which convolution paths feed the GRU gates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// Flow-aware graph convolution plus 2D convolution.
    Full,
    /// Graph convolution only (no grid convolution).
    Nc,
    /// 2D convolution only (no flow convolution).
    Nf,
    /// Plain GRU with dense maps over the flattened grid.
    Fc,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Full, Variant::Nc, Variant::Nf, Variant::Fc];

    pub fn uses_graph(self) -> bool {
        matches!(self, Variant::Full | Variant::Nc)
    }

    pub fn uses_conv(self) -> bool {
        matches!(self, Variant::Full | Variant::Nf)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::Nc => "nc",
            Variant::Nf => "nf",
            Variant::Fc => "fc",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "full" => Ok(Variant::Full),
            "nc" => Ok(Variant::Nc),
            "nf" => Ok(Variant::Nf),
            "fc" => Ok(Variant::Fc),
            other => Err(Error::Config(format!("unknown variant {other:?}"))),
        }
    }
}

/// Architecture of a stacked model on an `m x k` grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub m: usize,
    pub k: usize,
    pub layers: usize,
    pub hidden: usize,
    pub diffusion_steps: usize,
    pub history: usize,
    pub kernel_size: usize,
    pub variant: Variant,
}

impl ModelSpec {
    pub fn new(m: usize, k: usize) -> Self {
        ModelSpec {
            m,
            k,
            layers: 3,
            hidden: 64,
            diffusion_steps: 2,
            history: 6,
            kernel_size: 3,
            variant: Variant::Full,
        }
    }

    pub fn regions(&self) -> usize {
        self.m * self.k
    }

    /// Input channels of layer `l`.
    pub fn layer_input(&self, l: usize) -> usize {
        if l == 0 {
            2
        } else {
            self.hidden
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.m >= 1
            && self.k >= 1
            && self.layers >= 1
            && self.hidden >= 1
            && self.diffusion_steps >= 1
            && self.history >= 1
            && self.kernel_size % 2 == 1;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid model spec {self:?}")))
        }
    }
}
