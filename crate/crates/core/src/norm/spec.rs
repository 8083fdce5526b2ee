use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which normalizer a layer applies.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum NormKind {
    /// Per-sample l2 normalization.
    L2,
    Bn,
    Ln,
    In,
    /// Positional normalization: across channels at each spatial position.
    Pn,
    Gn { channels_per_group: usize },
    /// l2 normalization followed by batch normalization.
    L2Bn,
    LnBn,
    InBn,
    PnBn,
}

impl NormKind {
    pub const ALL: [NormKind; 10] = [
        NormKind::L2,
        NormKind::Bn,
        NormKind::Ln,
        NormKind::In,
        NormKind::Pn,
        NormKind::Gn {
            channels_per_group: 1,
        },
        NormKind::L2Bn,
        NormKind::LnBn,
        NormKind::InBn,
        NormKind::PnBn,
    ];

    /// Composites are a per-sample normalizer followed by BN.
    pub fn is_composite(self) -> bool {
        matches!(
            self,
            NormKind::L2Bn | NormKind::LnBn | NormKind::InBn | NormKind::PnBn
        )
    }

    /// Kinds that use batch statistics and keep running estimates.
    pub fn uses_batch_stats(self) -> bool {
        self == NormKind::Bn || self.is_composite()
    }

    /// The per-sample stage of a composite.
    pub fn inner(self) -> Option<NormKind> {
        match self {
            NormKind::L2Bn => Some(NormKind::L2),
            NormKind::LnBn => Some(NormKind::Ln),
            NormKind::InBn => Some(NormKind::In),
            NormKind::PnBn => Some(NormKind::Pn),
            _ => None,
        }
    }

    /// Whether the kind only accepts `[N, C, H, W]` inputs.
    pub fn needs_rank4(self) -> bool {
        matches!(
            self,
            NormKind::In | NormKind::Pn | NormKind::Gn { .. } | NormKind::InBn | NormKind::PnBn
        )
    }

    /// Whether a layer of this kind carries a learnable scale and shift when
    /// the spec asks for one. Plain l2 never does.
    pub fn supports_affine(self) -> bool {
        self != NormKind::L2
    }
}

impl fmt::Display for NormKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NormKind::L2 => f.write_str("l2"),
            NormKind::Bn => f.write_str("bn"),
            NormKind::Ln => f.write_str("ln"),
            NormKind::In => f.write_str("in"),
            NormKind::Pn => f.write_str("pn"),
            NormKind::Gn { channels_per_group } => write!(f, "gn:{channels_per_group}"),
            NormKind::L2Bn => f.write_str("l2bn"),
            NormKind::LnBn => f.write_str("lnbn"),
            NormKind::InBn => f.write_str("inbn"),
            NormKind::PnBn => f.write_str("pnbn"),
        }
    }
}

impl FromStr for NormKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        Ok(match s.as_str() {
            "l2" => NormKind::L2,
            "bn" => NormKind::Bn,
            "ln" => NormKind::Ln,
            "in" => NormKind::In,
            "pn" => NormKind::Pn,
            "gn" => NormKind::Gn {
                channels_per_group: 4,
            },
            "l2bn" => NormKind::L2Bn,
            "lnbn" => NormKind::LnBn,
            "inbn" => NormKind::InBn,
            "pnbn" => NormKind::PnBn,
            other => match other.strip_prefix("gn:") {
                Some(n) => {
                    let channels_per_group = n
                        .parse()
                        .ok()
                        .filter(|&c: &usize| c > 0)
                        .ok_or_else(|| Error::InvalidConfig(format!("bad group size in {other:?}")))?;
                    NormKind::Gn { channels_per_group }
                }
                None => return Err(Error::InvalidConfig(format!("unknown norm kind {other:?}"))),
            },
        })
    }
}

impl TryFrom<String> for NormKind {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<NormKind> for String {
    fn from(k: NormKind) -> String {
        k.to_string()
    }
}

pub const DEFAULT_EPS_L2: f64 = 1e-12;
pub const DEFAULT_EPS_VAR: f64 = 1e-5;
pub const DEFAULT_MOMENTUM: f64 = 0.1;

/// Normalization layer configuration.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NormSpec {
    pub kind: NormKind,
    /// Floor for the l2 denominator.
    pub eps_l2: f64,
    /// Added to the variance under the square root.
    pub eps_var: f64,
    pub momentum: f64,
    pub affine: bool,
    /// Multiply l2 output by the square root of the per-sample element count.
    /// `None` selects it for rank-4 inputs only.
    pub scale_by_sqrt_numel: Option<bool>,
}

impl Default for NormSpec {
    fn default() -> Self {
        NormSpec::new(NormKind::Bn)
    }
}

impl NormSpec {
    pub fn new(kind: NormKind) -> Self {
        NormSpec {
            kind,
            eps_l2: DEFAULT_EPS_L2,
            eps_var: DEFAULT_EPS_VAR,
            momentum: DEFAULT_MOMENTUM,
            affine: true,
            scale_by_sqrt_numel: None,
        }
    }

    pub fn with_kind(mut self, kind: NormKind) -> Self {
        self.kind = kind;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eps_l2 > 0.0 && self.eps_l2.is_finite()) {
            return Err(Error::InvalidConfig(format!("eps_l2 must be > 0, got {}", self.eps_l2)));
        }
        if !(self.eps_var > 0.0 && self.eps_var.is_finite()) {
            return Err(Error::InvalidConfig(format!("eps_var must be > 0, got {}", self.eps_var)));
        }
        if !(self.momentum > 0.0 && self.momentum <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "momentum must be in (0, 1], got {}",
                self.momentum
            )));
        }
        if let NormKind::Gn {
            channels_per_group: 0,
        } = self.kind
        {
            return Err(Error::InvalidConfig("channels_per_group must be > 0".into()));
        }
        Ok(())
    }

    pub(crate) fn sqrt_numel_for_rank(&self, rank: usize) -> bool {
        self.scale_by_sqrt_numel.unwrap_or(rank == 4)
    }

    /// Whether a layer with this spec owns gamma/beta.
    pub fn has_affine(&self) -> bool {
        self.affine && self.kind.supports_affine()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kind_round_trips_through_text() {
        for k in NormKind::ALL {
            assert_eq!(k.to_string().parse::<NormKind>().unwrap(), k);
        }
        assert_eq!(
            "GN:8".parse::<NormKind>().unwrap(),
            NormKind::Gn {
                channels_per_group: 8
            }
        );
        assert!("gn:0".parse::<NormKind>().is_err());
        assert!("sn".parse::<NormKind>().is_err());
    }

    #[test]
    fn validation() {
        let mut s = NormSpec::new(NormKind::Bn);
        assert!(s.validate().is_ok());
        s.momentum = 0.0;
        assert!(s.validate().is_err());
        s.momentum = 1.0;
        s.eps_var = 0.0;
        assert!(s.validate().is_err());
        s.eps_var = 1e-5;
        s.eps_l2 = -1.0;
        assert!(s.validate().is_err());
    }

    #[test]
    fn sqrt_numel_defaults_by_rank() {
        let s = NormSpec::new(NormKind::L2);
        assert!(!s.sqrt_numel_for_rank(2));
        assert!(s.sqrt_numel_for_rank(4));
    }
}
