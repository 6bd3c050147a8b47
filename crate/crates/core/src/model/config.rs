use crate::error::{Error, Result};

/// Architecture hyperparameters.
///
/// Encoder block `i` (0-based) has `base_width · 2^i` channels. Decoder
/// stage `i` upsamples to `decoder_widths[i]` channels before concatenating
/// with the attention-refined skips.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub in_channels: usize,
    pub out_channels: usize,
    pub base_width: usize,
    pub dropout_rate: f64,
    pub decoder_widths: [usize; 4],
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::with_base_width(16)
    }
}

impl ModelConfig {
    /// Default configuration for a given base width `W`: encoder
    /// `[W, 2W, 4W, 8W]`, decoder `[8W, 4W, 2W, W]`.
    pub fn with_base_width(w: usize) -> Self {
        ModelConfig {
            in_channels: 3,
            out_channels: 1,
            base_width: w,
            dropout_rate: 0.2,
            decoder_widths: [8 * w, 4 * w, 2 * w, w],
        }
    }

    pub fn encoder_widths(&self) -> [usize; 4] {
        let w = self.base_width;
        [w, 2 * w, 4 * w, 8 * w]
    }

    /// Channel count of decoder output `B_D^{i+1}`.
    pub fn decoder_output_channels(&self, i: usize) -> usize {
        let enc = self.encoder_widths();
        match i {
            0 => self.decoder_widths[0] + enc[3],
            _ => self.decoder_widths[i] + 2 * enc[3 - i],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.base_width == 0 {
            return Err(Error::Config("base_width must be at least 1".into()));
        }
        if self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::Config("channel counts must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config(format!(
                "dropout_rate {} outside [0, 1)",
                self.dropout_rate
            )));
        }
        if self.decoder_widths.contains(&0) {
            return Err(Error::Config("decoder widths must be at least 1".into()));
        }
        Ok(())
    }
}
