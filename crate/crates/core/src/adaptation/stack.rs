use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Variant {
    #[serde(rename = "MAD-X")]
    MadX,
    /// Drops the adapter in the last transformer layer.
    #[serde(rename = "MAD-X-2.0")]
    MadX2,
}

/// Which transformer layers (1-based) carry an adapter.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StackConfig {
    pub num_layers: usize,
    pub variant: Variant,
    pub adapter_layers: Vec<usize>,
}

impl StackConfig {
    pub fn validate(&self) -> Result<()> {
        if let Some(&bad) = self
            .adapter_layers
            .iter()
            .find(|&&l| l == 0 || l > self.num_layers)
        {
            return Err(Error::InvalidArgument(format!(
                "adapter layer {bad} outside 1..={}",
                self.num_layers
            )));
        }
        if self.adapter_layers.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidArgument("adapter layers must be strictly increasing".into()));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let config: StackConfig = serde_json::from_str(text)?;
        config.validate()?;
        Ok(config)
    }
}

pub fn madx_stack_config(num_layers: usize, variant: Variant) -> Result<StackConfig> {
    if num_layers == 0 {
        return Err(Error::InvalidArgument("a stack needs at least one layer".into()));
    }
    let last = match variant {
        Variant::MadX => num_layers,
        Variant::MadX2 => num_layers - 1,
    };
    Ok(StackConfig {
        num_layers,
        variant,
        adapter_layers: (1..=last).collect(),
    })
}
