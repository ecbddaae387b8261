use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::rcu::RcuSpec;

/// Layer widths and decoding layout of a NABLA-N network.
///
/// The encoder is a chain of recurrent units separated by 2×2 max pooling.
/// Decoding stream `j` starts at encoder level `L-1-j` and climbs back to
/// full resolution through `upsample → recurrent unit` stages whose widths are
/// the tail of `decoder_widths`. Stream outputs are summed and a 1×1
/// convolution with a sigmoid produces the per-pixel probability.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NablaArchitecture {
    pub encoder_widths: Vec<usize>,
    pub decoder_widths: Vec<usize>,
    pub n_decode_levels: usize,
    pub input_channels: usize,
    pub output_channels: usize,
    pub patch_side: usize,
    pub t_steps: usize,
}

/// One decoding stream: its originating encoder level and its stages.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DecodeStream {
    pub origin_level: usize,
    pub stages: Vec<RcuSpec>,
}

impl Default for NablaArchitecture {
    fn default() -> Self {
        Self::nabla3()
    }
}

impl NablaArchitecture {
    /// 3 → 16 → 32 → 64 → 128 → 256 → 512 → 256 → 128 → 64 → 32 → 16 → 1,
    /// decoding from the three deepest levels, t = 2, 128-pixel patches.
    pub fn nabla3() -> Self {
        Self::with_base_width(16, 6, 3)
    }

    /// Same topology with widths `base·2^level` over `levels` encoder levels.
    pub fn with_base_width(base: usize, levels: usize, n_decode_levels: usize) -> Self {
        let encoder_widths: Vec<usize> = (0..levels).map(|l| base << l).collect();
        let decoder_widths = encoder_widths[..levels.saturating_sub(1)]
            .iter()
            .rev()
            .copied()
            .collect();
        NablaArchitecture {
            encoder_widths,
            decoder_widths,
            n_decode_levels,
            input_channels: 3,
            output_channels: 1,
            patch_side: 128,
            t_steps: 2,
        }
    }

    pub fn with_patch_side(mut self, patch_side: usize) -> Self {
        self.patch_side = patch_side;
        self
    }

    pub fn levels(&self) -> usize {
        self.encoder_widths.len()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(format!("architecture: {msg}")));
        let levels = self.levels();
        if levels == 0 {
            return bad("at least one encoder level required".into());
        }
        if self.encoder_widths.iter().chain(&self.decoder_widths).any(|&w| w == 0) {
            return bad("widths must be positive".into());
        }
        let mirrored: Vec<usize> = self.encoder_widths[..levels - 1].iter().rev().copied().collect();
        if self.decoder_widths != mirrored {
            return bad(format!(
                "decoder widths {:?} must mirror encoder widths {:?}",
                self.decoder_widths, self.encoder_widths
            ));
        }
        if self.n_decode_levels == 0 || self.n_decode_levels > levels {
            return bad(format!(
                "n_decode_levels {} must be in 1..={levels}",
                self.n_decode_levels
            ));
        }
        if self.t_steps == 0 {
            return bad("t_steps must be >= 1".into());
        }
        if self.input_channels == 0 || self.output_channels == 0 {
            return bad("channel counts must be positive".into());
        }
        let factor = 1usize << (levels - 1);
        if self.patch_side == 0 || self.patch_side % factor != 0 {
            return bad(format!(
                "patch_side {} must be a positive multiple of {factor}",
                self.patch_side
            ));
        }
        Ok(())
    }

    pub fn encoder_units(&self) -> Vec<RcuSpec> {
        let mut cin = self.input_channels;
        self.encoder_widths
            .iter()
            .map(|&w| {
                let spec = RcuSpec {
                    in_channels: cin,
                    out_channels: w,
                    t_steps: self.t_steps,
                };
                cin = w;
                spec
            })
            .collect()
    }

    pub fn decode_streams(&self) -> Vec<DecodeStream> {
        let levels = self.levels();
        (0..self.n_decode_levels)
            .map(|j| {
                let origin_level = levels - 1 - j;
                let mut cin = self.encoder_widths[origin_level];
                let stages = self.decoder_widths[j..]
                    .iter()
                    .map(|&w| {
                        let spec = RcuSpec {
                            in_channels: cin,
                            out_channels: w,
                            t_steps: self.t_steps,
                        };
                        cin = w;
                        spec
                    })
                    .collect();
                DecodeStream {
                    origin_level,
                    stages,
                }
            })
            .collect()
    }

    /// Channel count entering the 1×1 head.
    pub fn fused_channels(&self) -> usize {
        self.encoder_widths[0]
    }

    /// Parameter count implied by the layout, without building the network.
    pub fn param_count(&self) -> usize {
        let units: usize = self
            .encoder_units()
            .iter()
            .chain(self.decode_streams().iter().flat_map(|s| s.stages.iter()))
            .map(RcuSpec::param_count)
            .sum();
        units + self.fused_channels() * self.output_channels + self.output_channels
    }
}
