//! TOML linkage configuration shared by both parties.
//!
//! ```toml
//! bands = 20
//! rows = 9
//! seed = "00112233..."   # 64 hex characters, identical on both sides
//! threshold = 0.72
//!
//! [[group]]
//! name = "name"
//! fields = ["first_name", "last_name"]
//! k = 3
//! weight = 1
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lsh::{LshParams, SEED_LEN};
use crate::model::{validate_specs, FieldGroupSpec};
use crate::protocol::{ProtocolConfig, Variant};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkageConfig {
    pub bands: usize,
    pub rows: usize,
    /// Hex-encoded 32-byte seed for the Min-Hash coefficients.
    pub seed: String,
    /// Jaccard threshold the curve targets; reported, not enforced.
    #[serde(default)]
    pub threshold: f64,
    /// CSV column holding record ids; row numbers are used when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id_column: Option<String>,
    /// Run the shingle-cardinality sub-protocol on every matched pair.
    #[serde(default)]
    pub exact_jaccard: bool,
    #[serde(rename = "group")]
    pub groups: Vec<FieldGroupSpec>,
}

impl LinkageConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: LinkageConfig = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.lsh_params()?;
        validate_specs(&self.groups)?;
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(Error::Config(format!("threshold {} outside [0, 1]", self.threshold)));
        }
        Ok(())
    }

    pub fn seed_bytes(&self) -> Result<[u8; SEED_LEN]> {
        let bytes = hex::decode(self.seed.trim()).map_err(|e| Error::Config(format!("seed: {e}")))?;
        bytes
            .try_into()
            .map_err(|b: Vec<u8>| Error::Config(format!("seed must be {SEED_LEN} bytes, got {}", b.len())))
    }

    pub fn lsh_params(&self) -> Result<LshParams> {
        LshParams::new(self.bands, self.rows, self.seed_bytes()?)
    }

    pub fn protocol_config(&self, variant: Variant) -> Result<ProtocolConfig> {
        let mut cfg = ProtocolConfig::new(variant, self.lsh_params()?, self.groups.clone());
        cfg.threshold = self.threshold;
        cfg.exact_jaccard = self.exact_jaccard;
        Ok(cfg)
    }

    /// Configuration for the generated person schema: five groups of
    /// 3-shingles over the high-entropy fields, `B = 20`, `R = 9`.
    pub fn synthetic_default(seed: [u8; SEED_LEN]) -> Self {
        LinkageConfig {
            bands: 20,
            rows: 9,
            seed: hex::encode(seed),
            threshold: 0.72,
            id_column: Some("id".into()),
            exact_jaccard: false,
            groups: vec![
                FieldGroupSpec::new("name", ["first_name", "last_name"], 3, 1),
                FieldGroupSpec::new("email", ["email"], 3, 1),
                FieldGroupSpec::new("address", ["address_number", "address_location", "address_line"], 3, 1),
                FieldGroupSpec::new("place", ["city", "zip_base", "zip_ext"], 3, 1),
                FieldGroupSpec::new("phone", ["phone_area_code", "phone_exchange_code", "phone_line_number"], 3, 1),
            ],
        }
    }
}
