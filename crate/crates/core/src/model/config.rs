use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Widths of the fully connected head; the last layer emits the two class
/// logits (normal, abnormal).
pub const FC_WIDTHS: [usize; 4] = [1024, 512, 128, 2];

/// Length of the penultimate activation exported as a feature vector.
pub const FEATURE_LENGTH: usize = 128;

/// Architecture description of the hybrid network.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HybridModelConfig {
    /// Square input side; must be a positive multiple of 16 so the four 2x2
    /// pools halve exactly.
    pub input_size: usize,
    /// Output channels of conv blocks 1..=4, shared by all three branches.
    pub channel_widths: [usize; 4],
    pub use_attention: bool,
    pub use_cnc_branch: bool,
    pub use_dsc_branch: bool,
    pub use_mfe_branch: bool,
    pub fc_widths: [usize; 4],
    /// Internal width of the attention layer.
    pub attention_width: usize,
    /// Residual blocks in the attention trunk.
    pub attention_residual_blocks: usize,
    pub seed: u64,
}

impl Default for HybridModelConfig {
    fn default() -> Self {
        HybridModelConfig {
            input_size: 224,
            channel_widths: [32, 64, 128, 128],
            use_attention: true,
            use_cnc_branch: true,
            use_dsc_branch: true,
            use_mfe_branch: true,
            fc_widths: FC_WIDTHS,
            attention_width: 16,
            attention_residual_blocks: 2,
            seed: 0,
        }
    }
}

/// One row of the ablation grid: which components are present.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Toggles {
    pub attention: bool,
    pub dsc: bool,
    pub mfe: bool,
    pub cnc: bool,
}

/// The eight component combinations of the ablation study, in the order
/// they are usually tabulated (full model first).
pub const ABLATION_GRID: [Toggles; 8] = [
    Toggles { attention: true, dsc: true, mfe: true, cnc: true },
    Toggles { attention: false, dsc: true, mfe: true, cnc: true },
    Toggles { attention: true, dsc: true, mfe: false, cnc: true },
    Toggles { attention: true, dsc: false, mfe: false, cnc: true },
    Toggles { attention: true, dsc: true, mfe: false, cnc: false },
    Toggles { attention: false, dsc: true, mfe: false, cnc: true },
    Toggles { attention: false, dsc: false, mfe: false, cnc: true },
    Toggles { attention: false, dsc: true, mfe: false, cnc: false },
];

impl HybridModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_size == 0 || self.input_size % 16 != 0 {
            return Err(Error::Config(format!(
                "input_size must be a positive multiple of 16, got {}",
                self.input_size
            )));
        }
        if self.branch_count() == 0 {
            return Err(Error::Config("at least one branch must be enabled".into()));
        }
        if self.fc_widths != FC_WIDTHS {
            return Err(Error::Config(format!(
                "fc_widths are fixed at {:?}, got {:?}",
                FC_WIDTHS, self.fc_widths
            )));
        }
        if self.channel_widths.contains(&0) || self.attention_width == 0 {
            return Err(Error::Config("channel widths must be positive".into()));
        }
        if self.use_attention && self.attention_residual_blocks == 0 {
            return Err(Error::Config("attention needs at least one residual block".into()));
        }
        Ok(())
    }

    pub fn branch_count(&self) -> usize {
        [self.use_cnc_branch, self.use_dsc_branch, self.use_mfe_branch]
            .iter()
            .filter(|&&b| b)
            .count()
    }

    /// Channels entering global average pooling.
    pub fn concat_width(&self) -> usize {
        self.branch_count() * self.channel_widths[3]
    }

    pub fn toggles(&self) -> Toggles {
        Toggles {
            attention: self.use_attention,
            dsc: self.use_dsc_branch,
            mfe: self.use_mfe_branch,
            cnc: self.use_cnc_branch,
        }
    }

    pub fn with_toggles(&self, t: Toggles) -> Self {
        HybridModelConfig {
            use_attention: t.attention,
            use_dsc_branch: t.dsc,
            use_mfe_branch: t.mfe,
            use_cnc_branch: t.cnc,
            ..self.clone()
        }
    }

    /// Channels of the statistical input to MFE blocks 2..=4: a (max,
    /// variance) pair per enabled feeder plus the MFE's own pair.
    pub fn mfe_stat_channels(&self) -> usize {
        2 * (1 + self.use_cnc_branch as usize + self.use_dsc_branch as usize)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        let c = HybridModelConfig::default();
        c.validate().unwrap();
        assert_eq!(c.concat_width(), 384);
    }

    #[test]
    fn rejects_bad_configs() {
        let mut c = HybridModelConfig { input_size: 100, ..Default::default() };
        assert!(c.validate().is_err());
        c.input_size = 64;
        c.use_cnc_branch = false;
        c.use_dsc_branch = false;
        c.use_mfe_branch = false;
        assert!(c.validate().is_err());
        let c = HybridModelConfig { fc_widths: [512, 256, 128, 2], ..Default::default() };
        assert!(c.validate().is_err());
    }

    #[test]
    fn ablation_rows_are_distinct_and_valid() {
        for (i, a) in ABLATION_GRID.iter().enumerate() {
            HybridModelConfig::default().with_toggles(*a).validate().unwrap();
            for b in &ABLATION_GRID[i + 1..] {
                assert_ne!(a, b);
            }
        }
    }

    #[test]
    fn partial_json_fills_defaults() {
        let c: HybridModelConfig = serde_json::from_str(r#"{"input_size": 64, "use_mfe_branch": false}"#).unwrap();
        assert_eq!(c.input_size, 64);
        assert!(!c.use_mfe_branch);
        assert_eq!(c.channel_widths, [32, 64, 128, 128]);
        assert!(serde_json::from_str::<HybridModelConfig>(r#"{"bogus": 1}"#).is_err());
    }
}
