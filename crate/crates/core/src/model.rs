//! Model and GPU configuration plus the KV-cache byte arithmetic.
//!
//! Every byte quantity in the simulator is an exact integer; only time is a
//! floating-point model. The KV cache of a transformer grows by
//! `2 * bytes_per_number * num_layers * hidden_dim` bytes for each token a
//! sequence holds (key and value vectors, one pair per layer), and every
//! feasibility decision in the scheduler reduces to multiples of that number.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Architecture parameters of the served model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Human-readable name, carried into reports.
    pub name: String,
    /// Number of transformer layers.
    pub num_layers: u64,
    /// Hidden dimension of the model.
    pub hidden_dim: u64,
    /// Maximum sequence length (prompt + output) the model supports.
    pub max_seq_len: u64,
    /// Bytes per stored number (2 for half precision).
    pub bytes_per_number: u64,
    /// Resident size of the model weights in bytes.
    pub weight_bytes: u64,
}

impl ModelConfig {
    /// A 20B-parameter reference configuration: 44 layers, 6144 hidden
    /// dimension, 2048-token context, half precision, 40 GB of weights.
    pub fn reference() -> Self {
        Self {
            name: "gpt-neox-20b-class".to_string(),
            num_layers: 44,
            hidden_dim: 6144,
            max_seq_len: 2048,
            bytes_per_number: 2,
            weight_bytes: 40_000_000_000,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_layers < 1 {
            return Err(Error::InvalidConfig("num_layers must be >= 1".into()));
        }
        if self.hidden_dim < 1 {
            return Err(Error::InvalidConfig("hidden_dim must be >= 1".into()));
        }
        if self.max_seq_len < 1 {
            return Err(Error::InvalidConfig("max_seq_len must be >= 1".into()));
        }
        if self.bytes_per_number < 1 {
            return Err(Error::InvalidConfig("bytes_per_number must be >= 1".into()));
        }
        Ok(())
    }

    /// KV-cache bytes one token occupies: key and value vectors across all
    /// layers, `2 * bytes_per_number * num_layers * hidden_dim`.
    pub fn kv_bytes_per_token(&self) -> u64 {
        2 * self.bytes_per_number * self.num_layers * self.hidden_dim
    }

    /// KV-cache bytes for `tokens` tokens.
    pub fn kv_cache_bytes(&self, tokens: u64) -> u64 {
        tokens * self.kv_bytes_per_token()
    }
}

/// GPU memory system parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpuConfig {
    /// HBM capacity per GPU in bytes.
    pub hbm_capacity: u64,
    /// HBM bandwidth in bytes per second.
    pub bw_hbm: f64,
    /// Host-to-device (and device-to-host) bandwidth in bytes per second.
    pub bw_h2d: f64,
    /// Number of GPUs the model is sharded across (pipeline stages).
    pub num_gpus: u64,
}

impl GpuConfig {
    /// An 80 GB accelerator on PCIe 4.0 x8: 2 TB/s HBM, 16 GB/s host link.
    pub fn reference() -> Self {
        Self {
            hbm_capacity: 80_000_000_000,
            bw_hbm: 2.0e12,
            bw_h2d: 16.0e9,
            num_gpus: 1,
        }
    }

    pub fn validate(&self, model: &ModelConfig) -> Result<()> {
        if self.num_gpus < 1 {
            return Err(Error::InvalidConfig("num_gpus must be >= 1".into()));
        }
        if self.bw_hbm <= 0.0 || !self.bw_hbm.is_finite() {
            return Err(Error::InvalidConfig("bw_hbm must be positive".into()));
        }
        if self.bw_h2d <= 0.0 || !self.bw_h2d.is_finite() {
            return Err(Error::InvalidConfig("bw_h2d must be positive".into()));
        }
        if self.hbm_capacity * self.num_gpus <= model.weight_bytes {
            return Err(Error::InvalidConfig(format!(
                "model weights ({} bytes) do not fit in {} GPUs x {} bytes of HBM",
                model.weight_bytes, self.num_gpus, self.hbm_capacity
            )));
        }
        Ok(())
    }

    /// Total HBM bytes left for KV caches once the weights are resident.
    ///
    /// Pipeline setups divide the weights across stages but the KV capacity
    /// is pooled into one logical ledger.
    pub fn kv_capacity_bytes(&self, model: &ModelConfig) -> u64 {
        self.hbm_capacity * self.num_gpus - model.weight_bytes
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tiny(l: u64, d: u64) -> ModelConfig {
        ModelConfig {
            name: "tiny".into(),
            num_layers: l,
            hidden_dim: d,
            max_seq_len: 2048,
            bytes_per_number: 2,
            weight_bytes: 0,
        }
    }

    #[test]
    fn kv_bytes_per_token_reference_model() {
        // 44 layers x 6144 hidden at half precision: about 1 MB per token.
        assert_eq!(ModelConfig::reference().kv_bytes_per_token(), 1_081_344);
    }

    #[test]
    fn kv_bytes_per_token_unit_case() {
        assert_eq!(tiny(1, 1).kv_bytes_per_token(), 4);
    }

    #[test]
    fn kv_bytes_per_token_28_layer_model() {
        // 2 * 2 * 28 * 5120 worked out by hand.
        let m = ModelConfig {
            name: "6b-class".into(),
            num_layers: 28,
            hidden_dim: 5120,
            max_seq_len: 2048,
            bytes_per_number: 2,
            weight_bytes: 12_000_000_000,
        };
        assert_eq!(m.kv_bytes_per_token(), 573_440);
    }

    #[test]
    fn kv_cache_bytes_zero_tokens() {
        assert_eq!(ModelConfig::reference().kv_cache_bytes(0), 0);
    }

    #[test]
    fn kv_cache_bytes_full_context() {
        // A max-length reservation on the reference model is ~2.2 GB.
        assert_eq!(ModelConfig::reference().kv_cache_bytes(2048), 2_214_592_512);
    }

    #[test]
    fn kv_cache_bytes_three_tokens_minimal_model() {
        assert_eq!(tiny(1, 1).kv_cache_bytes(3), 12);
    }

    #[test]
    fn weights_must_fit() {
        let model = ModelConfig::reference();
        let mut gpu = GpuConfig::reference();
        gpu.hbm_capacity = 40_000_000_000; // == weight_bytes, no KV room
        assert!(gpu.validate(&model).is_err());
        gpu.num_gpus = 2;
        assert!(gpu.validate(&model).is_ok());
        assert_eq!(gpu.kv_capacity_bytes(&model), 40_000_000_000);
    }

    #[test]
    fn rejects_degenerate_dimensions() {
        let mut m = tiny(1, 1);
        m.num_layers = 0;
        assert!(m.validate().is_err());
        let mut m = tiny(1, 1);
        m.hidden_dim = 0;
        assert!(m.validate().is_err());
        let mut m = tiny(1, 1);
        m.max_seq_len = 0;
        assert!(m.validate().is_err());
        let mut m = tiny(1, 1);
        m.bytes_per_number = 0;
        assert!(m.validate().is_err());
    }

    proptest! {
        #[test]
        fn kv_cache_bytes_is_linear(l in 1u64..64, d in 1u64..8192, a in 0u64..4096, b in 0u64..4096) {
            let m = tiny(l, d);
            prop_assert_eq!(m.kv_cache_bytes(a + b), m.kv_cache_bytes(a) + m.kv_cache_bytes(b));
        }

        #[test]
        fn kv_bytes_per_token_monotone(l in 1u64..64, d in 1u64..8192) {
            let m = tiny(l, d);
            prop_assert!(tiny(l + 1, d).kv_bytes_per_token() > m.kv_bytes_per_token());
            prop_assert!(tiny(l, d + 1).kv_bytes_per_token() > m.kv_bytes_per_token());
        }
    }
}
