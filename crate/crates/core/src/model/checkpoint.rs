//! Binary checkpoint container.
//!
//! Layout: `EGOFRONT` magic, `u32` format version, `u64` header length, JSON header,
//! then little-endian `f32` sections in the order listed by the header.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::nn::{Adam, AdamConfig, Parameterized};

use super::{Discriminator, DiscriminatorConfig, Generator, GeneratorConfig};

const MAGIC: &[u8; 8] = b"EGOFRONT";
pub const CHECKPOINT_VERSION: u32 = 1;

/// SHA-256 over the canonical JSON of both network configurations.
pub fn config_hash(generator: &GeneratorConfig, discriminator: &DiscriminatorConfig) -> String {
    let json = serde_json::to_vec(&(generator, discriminator)).expect("configs serialize");
    hex::encode(Sha256::digest(json))
}

/// Optimizer moments for both networks.
#[derive(Clone, Debug)]
pub struct OptimizerState {
    pub generator: Adam<f32>,
    pub discriminator: Adam<f32>,
}

#[derive(Clone, Debug)]
pub struct ModelCheckpoint {
    pub generator: Generator<f32>,
    pub discriminator: Discriminator<f32>,
    pub optimizer: Option<OptimizerState>,
    pub epoch: usize,
    pub validation_score: f64,
    /// Free-form run metadata (training configuration, conditioning mode, ...).
    pub metadata: serde_json::Value,
}

#[derive(Serialize, Deserialize)]
struct Header {
    version: u32,
    generator: GeneratorConfig,
    discriminator: DiscriminatorConfig,
    config_hash: String,
    epoch: usize,
    validation_score: f64,
    metadata: serde_json::Value,
    optimizer: Option<OptimizerHeader>,
    sections: Vec<(String, usize)>,
}

#[derive(Serialize, Deserialize)]
struct OptimizerHeader {
    generator: AdamConfig,
    discriminator: AdamConfig,
    generator_steps: u64,
    discriminator_steps: u64,
}

impl ModelCheckpoint {
    pub fn config_hash(&self) -> String {
        config_hash(self.generator.config(), self.discriminator.config())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut sections: Vec<(String, Vec<f32>)> = vec![
            ("generator".into(), self.generator.flat_values()),
            ("discriminator".into(), self.discriminator.flat_values()),
        ];
        let optimizer = self.optimizer.as_ref().map(|o| {
            let (gm, gv) = o.generator.flat_moments();
            let (dm, dv) = o.discriminator.flat_moments();
            sections.push(("generator_m".into(), gm));
            sections.push(("generator_v".into(), gv));
            sections.push(("discriminator_m".into(), dm));
            sections.push(("discriminator_v".into(), dv));
            OptimizerHeader {
                generator: o.generator.config(),
                discriminator: o.discriminator.config(),
                generator_steps: o.generator.steps(),
                discriminator_steps: o.discriminator.steps(),
            }
        });
        let header = Header {
            version: CHECKPOINT_VERSION,
            generator: self.generator.config().clone(),
            discriminator: self.discriminator.config().clone(),
            config_hash: self.config_hash(),
            epoch: self.epoch,
            validation_score: self.validation_score,
            metadata: self.metadata.clone(),
            optimizer,
            sections: sections.iter().map(|(n, v)| (n.clone(), v.len())).collect(),
        };
        let header = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::with_capacity(
            20 + header.len() + sections.iter().map(|s| s.1.len() * 4).sum::<usize>(),
        );
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for (_, values) in &sections {
            for v in values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    /// Parses a checkpoint. When `expected` is given, the stored configuration hash must
    /// match the hash of those configurations.
    pub fn from_bytes(
        bytes: &[u8],
        expected: Option<(&GeneratorConfig, &DiscriminatorConfig)>,
    ) -> Result<Self> {
        let bad = |msg: &str| Error::InvalidData(format!("checkpoint: {msg}"));
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(bad("missing magic"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != CHECKPOINT_VERSION {
            return Err(bad(&format!("unsupported version {version}")));
        }
        let header_len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
        let header_end = 20usize
            .checked_add(header_len)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| bad("truncated header"))?;
        let header: Header = serde_json::from_slice(&bytes[20..header_end])?;

        let stored = config_hash(&header.generator, &header.discriminator);
        if stored != header.config_hash {
            return Err(Error::ConfigMismatch(
                "stored configuration hash does not match stored configuration".into(),
            ));
        }
        if let Some((g, d)) = expected {
            let want = config_hash(g, d);
            if want != header.config_hash {
                return Err(Error::ConfigMismatch(format!(
                    "checkpoint config hash {} differs from expected {want}",
                    header.config_hash
                )));
            }
        }

        let mut offset = header_end;
        let mut sections = std::collections::HashMap::new();
        for (name, len) in &header.sections {
            let end = offset
                .checked_add(len * 4)
                .filter(|&e| e <= bytes.len())
                .ok_or_else(|| bad("truncated data"))?;
            let values: Vec<f32> = bytes[offset..end]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            sections.insert(name.as_str(), values);
            offset = end;
        }
        if offset != bytes.len() {
            return Err(bad("trailing bytes"));
        }
        let take = |name: &str| {
            sections
                .get(name)
                .ok_or_else(|| bad(&format!("missing section {name}")))
        };

        // Weights are overwritten below; the seed is irrelevant.
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
        let mut generator = Generator::new(header.generator.clone(), &mut rng)?;
        generator.load_flat_values(take("generator")?)?;
        let mut discriminator = Discriminator::new(header.discriminator.clone(), &mut rng)?;
        discriminator.load_flat_values(take("discriminator")?)?;

        let optimizer = match &header.optimizer {
            None => None,
            Some(o) => {
                let g = Adam::restore(
                    o.generator,
                    &generator.params(),
                    take("generator_m")?,
                    take("generator_v")?,
                    o.generator_steps,
                )
                .ok_or_else(|| bad("generator optimizer state size"))?;
                let d = Adam::restore(
                    o.discriminator,
                    &discriminator.params(),
                    take("discriminator_m")?,
                    take("discriminator_v")?,
                    o.discriminator_steps,
                )
                .ok_or_else(|| bad("discriminator optimizer state size"))?;
                Some(OptimizerState {
                    generator: g,
                    discriminator: d,
                })
            }
        };

        Ok(Self {
            generator,
            discriminator,
            optimizer,
            epoch: header.epoch,
            validation_score: header.validation_score,
            metadata: header.metadata,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(
        path: impl AsRef<Path>,
        expected: Option<(&GeneratorConfig, &DiscriminatorConfig)>,
    ) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, expected)
    }

    /// SHA-256 of the serialized checkpoint.
    pub fn content_hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_bytes()))
    }
}
