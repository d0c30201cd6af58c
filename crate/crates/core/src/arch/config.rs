use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

use crate::autodiff::Activation;
use crate::error::{Error, Result};

macro_rules! named_enum {
    ($(#[$meta:meta])* $name:ident { $($variant:ident => $text:literal),+ $(,)? }) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
        pub enum $name {
            $(#[serde(rename = $text)] $variant),+
        }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn as_str(self) -> &'static str {
                match self { $($name::$variant => $text),+ }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl FromStr for $name {
            type Err = Error;
            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($text => Ok($name::$variant),)+
                    _ => Err(Error::InvalidArgument(format!(
                        concat!("unknown ", stringify!($name), " `{}`"), s
                    ))),
                }
            }
        }
    };
}

named_enum!(
    /// Residual block instantiation.
    BlockKind {
        Normal => "normal",
        Invert => "invert",
        InvertUp => "invert_up",
    }
);

named_enum!(
    /// Which activation layers a block keeps. `ActN` keeps only the one after
    /// the N-th convolution.
    ActPlacement {
        All => "all",
        Act1 => "act1",
        Act2 => "act2",
        Act3 => "act3",
    }
);

named_enum!(
    /// Which normalization layers a block keeps. `NormN` keeps only the one
    /// after the N-th convolution.
    NormPlacement {
        All => "all",
        Norm1 => "norm1",
        Norm2 => "norm2",
        Norm3 => "norm3",
        NoNorm => "no_norm",
    }
);

named_enum!(
    /// Downsampling stem. Every variant reduces resolution by exactly 4x.
    StemKind {
        ResNetStem => "resnet",
        SwinStem => "swin",
        ConvStem => "conv",
        SwinStemK5 => "swin_k5",
        ResNetStemNoPool => "resnet_no_pool",
    }
);

named_enum!(
    NormKind {
        LayerNormC => "ln_c",
        BatchNorm => "bn",
        None => "none",
    }
);

impl ActPlacement {
    pub fn from_index(i: usize) -> Result<Self> {
        match i {
            1 => Ok(ActPlacement::Act1),
            2 => Ok(ActPlacement::Act2),
            3 => Ok(ActPlacement::Act3),
            _ => Err(Error::InvalidArgument(format!(
                "activation placement index {i} outside 1..=3"
            ))),
        }
    }

    /// Whether an activation follows convolution `conv` (1-based).
    pub fn keeps(self, conv: usize) -> bool {
        match self {
            ActPlacement::All => true,
            ActPlacement::Act1 => conv == 1,
            ActPlacement::Act2 => conv == 2,
            ActPlacement::Act3 => conv == 3,
        }
    }
}

impl NormPlacement {
    pub fn keeps(self, conv: usize) -> bool {
        match self {
            NormPlacement::All => true,
            NormPlacement::Norm1 => conv == 1,
            NormPlacement::Norm2 => conv == 2,
            NormPlacement::Norm3 => conv == 3,
            NormPlacement::NoNorm => false,
        }
    }
}

impl BlockKind {
    /// The activation position that follows the channel-expanding convolution.
    pub fn best_act(self) -> ActPlacement {
        match self {
            BlockKind::Normal => ActPlacement::Act3,
            BlockKind::Invert => ActPlacement::Act1,
            BlockKind::InvertUp => ActPlacement::Act2,
        }
    }
}

/// Full declarative model description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchConfig {
    pub stem: StemKind,
    pub block: BlockKind,
    pub channels: [usize; 4],
    pub depths: [usize; 4],
    pub kernel_size: usize,
    pub activation: Activation,
    pub act_placement: ActPlacement,
    pub norm_placement: NormPlacement,
    pub norm_kind: NormKind,
    pub num_classes: usize,
    pub input_resolution: usize,
}

pub const FULL_CHANNELS: [usize; 4] = [96, 192, 384, 768];
pub const FULL_DEPTHS: [usize; 4] = [3, 3, 9, 3];
pub const TINY_CHANNELS: [usize; 4] = [8, 16, 32, 64];
pub const TINY_DEPTHS: [usize; 4] = [1, 1, 2, 1];

impl ArchConfig {
    /// Depth-wise ResNet with LN-C and GELU: the baseline every ablation
    /// starts from.
    pub fn resnet_m() -> Self {
        ArchConfig {
            stem: StemKind::ResNetStem,
            block: BlockKind::Normal,
            channels: FULL_CHANNELS,
            depths: FULL_DEPTHS,
            kernel_size: 3,
            activation: Activation::Gelu,
            act_placement: ActPlacement::All,
            norm_placement: NormPlacement::All,
            norm_kind: NormKind::LayerNormC,
            num_classes: 10,
            input_resolution: 224,
        }
    }

    /// SiLU, one activation per block, no normalization, ConvStem, kernel 9.
    pub fn fedconv(block: BlockKind) -> Self {
        ArchConfig {
            stem: StemKind::ConvStem,
            block,
            channels: FULL_CHANNELS,
            depths: FULL_DEPTHS,
            kernel_size: 9,
            activation: Activation::Silu,
            act_placement: block.best_act(),
            norm_placement: NormPlacement::NoNorm,
            norm_kind: NormKind::None,
            num_classes: 10,
            input_resolution: 224,
        }
    }

    /// Desk-scale FedConv: widths (8,16,32,64), depths (1,1,2,1), 32x32 input.
    pub fn fedconv_tiny(block: BlockKind, num_classes: usize) -> Self {
        ArchConfig {
            channels: TINY_CHANNELS,
            depths: TINY_DEPTHS,
            num_classes,
            input_resolution: 32,
            ..ArchConfig::fedconv(block)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let err = |field: &str, reason: String| Err(Error::config(format!("arch.{field}"), reason));
        if self.kernel_size < 3 || self.kernel_size % 2 == 0 {
            return err("kernel_size", format!("must be odd and >= 3, got {}", self.kernel_size));
        }
        if let Some(i) = self.depths.iter().position(|&d| d == 0) {
            return err("depths", format!("stage {i} has zero blocks"));
        }
        if let Some(i) = self.channels.iter().position(|&c| c == 0) {
            return err("channels", format!("stage {i} has zero width"));
        }
        if self.block == BlockKind::Normal {
            if let Some(c) = self.channels.iter().find(|&&c| c % 4 != 0) {
                return err("channels", format!("normal block width {c} is not divisible by 4"));
            }
        }
        if self.stem == StemKind::ConvStem && self.channels[0] % 2 != 0 {
            return err("channels", format!("conv stem needs an even first width, got {}", self.channels[0]));
        }
        if self.norm_kind == NormKind::None && self.norm_placement != NormPlacement::NoNorm {
            return err(
                "norm_placement",
                format!("norm_kind none requires no_norm, got {}", self.norm_placement),
            );
        }
        if self.num_classes < 2 {
            return err("num_classes", format!("need at least 2 classes, got {}", self.num_classes));
        }
        if self.input_resolution == 0 || self.input_resolution % 32 != 0 {
            return err(
                "input_resolution",
                format!("must be a positive multiple of 32, got {}", self.input_resolution),
            );
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        ArchConfig::resnet_m().validate().unwrap();
        for &b in BlockKind::ALL {
            ArchConfig::fedconv(b).validate().unwrap();
            ArchConfig::fedconv_tiny(b, 4).validate().unwrap();
        }
    }

    #[test]
    fn invariants_are_enforced() {
        let mut c = ArchConfig::fedconv_tiny(BlockKind::InvertUp, 4);
        c.kernel_size = 4;
        assert!(c.validate().is_err());
        let mut c = ArchConfig::fedconv_tiny(BlockKind::InvertUp, 4);
        c.norm_placement = NormPlacement::Norm1;
        let e = c.validate().unwrap_err().to_string();
        assert!(e.contains("arch.norm_placement"), "{e}");
        let mut c = ArchConfig::fedconv_tiny(BlockKind::InvertUp, 4);
        c.depths[2] = 0;
        assert!(c.validate().is_err());
        let mut c = ArchConfig::fedconv_tiny(BlockKind::InvertUp, 4);
        c.input_resolution = 48;
        assert!(c.validate().is_err());
    }

    #[test]
    fn placement_parsing() {
        assert_eq!("act2".parse::<ActPlacement>().unwrap(), ActPlacement::Act2);
        assert!("act4".parse::<ActPlacement>().is_err());
        assert!(ActPlacement::from_index(4).is_err());
        assert_eq!("no_norm".parse::<NormPlacement>().unwrap(), NormPlacement::NoNorm);
        assert_eq!("swin_k5".parse::<StemKind>().unwrap(), StemKind::SwinStemK5);
    }

    #[test]
    fn toml_roundtrip() {
        let c = ArchConfig::fedconv_tiny(BlockKind::Invert, 4);
        let s = toml::to_string(&c).unwrap();
        assert!(s.contains("activation = \"silu\""));
        let back: ArchConfig = toml::from_str(&s).unwrap();
        assert_eq!(back, c);
    }
}
