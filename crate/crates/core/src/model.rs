//! All learned parameters of the segmenter and their on-disk layout.
//!
//! A saved model is a directory holding `manifest.txt` (key=value geometry
//! lines followed by one `tensor=<name>` line per parameter) and one
//! `<name>.stma` tensor file per parameter.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::conv::{Conv2d, Linear};
use crate::embedding::{ConvStem, EmbedConfig, EIGHTH_CHANNELS, QUARTER_CHANNELS};
use crate::error::{Result, StmaError};
use crate::idassoc::{DecoderWeights, ResidualBlock};
use crate::init::seeded_rng;
use crate::memory::IdEncoder;
use crate::stml::{LayerNormParams, StmlWeights};
use crate::tensor::{read_tensor_file, write_tensor_file, Tensor};

/// Frame geometry and layer widths.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelConfig {
    pub height: usize,
    pub width: usize,
    pub patch_size: usize,
    pub channels: usize,
    pub heads: usize,
    pub blocks: usize,
    pub value_channels: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self { height: 64, width: 64, patch_size: 16, channels: 64, heads: 4, blocks: 2, value_channels: 32 }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.patch_size != 16 {
            return Err(StmaError::contract(
                "patch size must be 16: the stem, encoder and decoder assume a 1/16 token grid",
            ));
        }
        if self.height == 0 || self.width == 0 || !self.height.is_multiple_of(16) || !self.width.is_multiple_of(16) {
            return Err(StmaError::contract(format!(
                "frame {}x{} must be a nonzero multiple of 16 on both sides",
                self.height, self.width
            )));
        }
        if self.heads == 0 || !self.channels.is_multiple_of(self.heads) {
            return Err(StmaError::contract(format!(
                "{} channels cannot split into {} heads",
                self.channels, self.heads
            )));
        }
        if self.blocks == 0 || self.value_channels == 0 {
            return Err(StmaError::contract("blocks and value channels must be positive"));
        }
        Ok(())
    }

    pub fn tokens(&self) -> usize {
        (self.height / self.patch_size) * (self.width / self.patch_size)
    }

    pub fn to_pairs(&self) -> Vec<(&'static str, String)> {
        vec![
            ("height", self.height.to_string()),
            ("width", self.width.to_string()),
            ("patch_size", self.patch_size.to_string()),
            ("channels", self.channels.to_string()),
            ("heads", self.heads.to_string()),
            ("blocks", self.blocks.to_string()),
            ("value_channels", self.value_channels.to_string()),
        ]
    }

    /// Applies a recognised key; returns `false` for keys it does not own.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        let slot = match key {
            "height" => &mut self.height,
            "width" => &mut self.width,
            "patch_size" => &mut self.patch_size,
            "channels" => &mut self.channels,
            "heads" => &mut self.heads,
            "blocks" => &mut self.blocks,
            "value_channels" => &mut self.value_channels,
            _ => return Ok(false),
        };
        *slot = value.parse().map_err(|_| StmaError::Parse(format!("{key}: '{value}' is not a count")))?;
        Ok(true)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelWeights {
    pub config: ModelConfig,
    pub embed: EmbedConfig,
    pub stem: ConvStem,
    pub blocks: Vec<StmlWeights>,
    pub encoder: IdEncoder,
    pub object_projection: Linear,
    pub decoder: DecoderWeights,
}

fn conv_slots<'a>(prefix: &str, c: &'a mut Conv2d, out: &mut Vec<(String, &'a mut Tensor)>) {
    out.push((format!("{prefix}.weight"), &mut c.weight));
    out.push((format!("{prefix}.bias"), &mut c.bias));
}

fn linear_slots<'a>(prefix: &str, l: &'a mut Linear, out: &mut Vec<(String, &'a mut Tensor)>) {
    out.push((format!("{prefix}.weight"), &mut l.weight));
    out.push((format!("{prefix}.bias"), &mut l.bias));
}

fn ln_slots<'a>(prefix: &str, l: &'a mut LayerNormParams, out: &mut Vec<(String, &'a mut Tensor)>) {
    out.push((format!("{prefix}.gamma"), &mut l.gamma));
    out.push((format!("{prefix}.beta"), &mut l.beta));
}

fn residual_slots<'a>(prefix: &str, r: &'a mut ResidualBlock, out: &mut Vec<(String, &'a mut Tensor)>) {
    conv_slots(&format!("{prefix}.conv_a"), &mut r.conv_a, out);
    conv_slots(&format!("{prefix}.conv_b"), &mut r.conv_b, out);
}

impl ModelWeights {
    pub fn random(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = seeded_rng(seed);
        let embed = EmbedConfig::random(&mut rng, config.patch_size, config.channels, config.height, config.width)?;
        let stem = ConvStem::random(&mut rng);
        let blocks = (0..config.blocks)
            .map(|_| StmlWeights::random(&mut rng, config.channels, config.heads))
            .collect::<Result<_>>()?;
        let encoder = IdEncoder::random(&mut rng, config.value_channels);
        let object_projection = Linear::random(&mut rng, config.value_channels, config.channels);
        let decoder = DecoderWeights::random(&mut rng, config.value_channels, EIGHTH_CHANNELS, QUARTER_CHANNELS);
        Ok(Self { config, embed, stem, blocks, encoder, object_projection, decoder })
    }

    /// Every parameter tensor with its stable name.
    pub fn named_tensors_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = Vec::new();
        out.push(("embed.projection".to_string(), &mut self.embed.projection));
        out.push(("embed.positional".to_string(), &mut self.embed.positional));
        conv_slots("stem.conv1", &mut self.stem.conv1, &mut out);
        conv_slots("stem.conv2", &mut self.stem.conv2, &mut out);
        conv_slots("stem.conv3", &mut self.stem.conv3, &mut out);
        for (i, b) in self.blocks.iter_mut().enumerate() {
            let p = format!("stml.{i}");
            ln_slots(&format!("{p}.ln_attn"), &mut b.ln_attn, &mut out);
            out.push((format!("{p}.w_q"), &mut b.w_q));
            out.push((format!("{p}.w_k"), &mut b.w_k));
            out.push((format!("{p}.w_v"), &mut b.w_v));
            out.push((format!("{p}.w_o"), &mut b.w_o));
            ln_slots(&format!("{p}.ln_ffn"), &mut b.ln_ffn, &mut out);
            linear_slots(&format!("{p}.ffn_in"), &mut b.ffn_in, &mut out);
            linear_slots(&format!("{p}.ffn_out"), &mut b.ffn_out, &mut out);
        }
        for (i, layer) in self.encoder.layers.iter_mut().enumerate() {
            conv_slots(&format!("encoder.{i}"), layer, &mut out);
        }
        linear_slots("object_projection", &mut self.object_projection, &mut out);
        let d = &mut self.decoder;
        linear_slots("decoder.input", &mut d.input, &mut out);
        residual_slots("decoder.stage16", &mut d.stage16, &mut out);
        linear_slots("decoder.skip8", &mut d.skip8, &mut out);
        residual_slots("decoder.stage8", &mut d.stage8, &mut out);
        linear_slots("decoder.skip4", &mut d.skip4, &mut out);
        conv_slots("decoder.head", &mut d.head, &mut out);
        out
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let mut copy = self.clone();
        let mut manifest = String::from("format=stma-model\n");
        for (k, v) in self.config.to_pairs() {
            manifest.push_str(&format!("{k}={v}\n"));
        }
        for (name, t) in copy.named_tensors_mut() {
            write_tensor_file(dir.join(format!("{name}.stma")), t)?;
            manifest.push_str(&format!("tensor={name}\n"));
        }
        fs::write(dir.join("manifest.txt"), manifest)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let manifest = fs::read_to_string(dir.join("manifest.txt"))?;
        let mut config = ModelConfig::default();
        let mut listed = Vec::new();
        let mut format_seen = false;
        for line in manifest.lines().map(str::trim).filter(|l| !l.is_empty()) {
            let (k, v) =
                line.split_once('=').ok_or_else(|| StmaError::Parse(format!("manifest line '{line}' has no '='")))?;
            match k {
                "format" if v == "stma-model" => format_seen = true,
                "format" => return Err(StmaError::Parse(format!("unknown model format '{v}'"))),
                "tensor" => listed.push(v.to_string()),
                _ if config.set(k, v)? => {}
                _ => return Err(StmaError::Parse(format!("unknown manifest key '{k}'"))),
            }
        }
        if !format_seen {
            return Err(StmaError::Parse("manifest lacks format=stma-model".into()));
        }
        let mut weights = Self::random(config, 0)?;
        let mut slots: BTreeMap<String, &mut Tensor> = weights.named_tensors_mut().into_iter().collect();
        if listed.len() != slots.len() || listed.iter().any(|n| !slots.contains_key(n)) {
            return Err(StmaError::Parse("manifest tensor list does not match the model layout".into()));
        }
        for name in &listed {
            let t = read_tensor_file(dir.join(format!("{name}.stma")))?;
            let slot = slots.get_mut(name).expect("checked above");
            if t.shape() != slot.shape() {
                return Err(StmaError::dim("model load", slot.shape(), t.shape()));
            }
            **slot = t;
        }
        Ok(weights)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ModelConfig {
        ModelConfig {
            height: 32,
            width: 48,
            channels: 16,
            heads: 2,
            blocks: 1,
            value_channels: 8,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let w = ModelWeights::random(small(), 42).unwrap();
        w.save(dir.path()).unwrap();
        assert_eq!(ModelWeights::load(dir.path()).unwrap(), w);
    }

    #[test]
    fn names_are_unique() {
        let mut w = ModelWeights::random(small(), 1).unwrap();
        let names: Vec<String> = w.named_tensors_mut().into_iter().map(|(n, _)| n).collect();
        let set: std::collections::BTreeSet<&String> = names.iter().collect();
        assert_eq!(set.len(), names.len());
    }

    #[test]
    fn seed_determines_weights() {
        assert_eq!(ModelWeights::random(small(), 3).unwrap(), ModelWeights::random(small(), 3).unwrap());
        assert_ne!(ModelWeights::random(small(), 3).unwrap(), ModelWeights::random(small(), 4).unwrap());
    }

    #[test]
    fn rejects_other_patch_sizes() {
        let cfg = ModelConfig { patch_size: 8, ..ModelConfig::default() };
        assert!(ModelWeights::random(cfg, 0).is_err());
    }

    #[test]
    fn load_rejects_bad_manifests() {
        let dir = tempfile::tempdir().unwrap();
        ModelWeights::random(small(), 5).unwrap().save(dir.path()).unwrap();
        let path = dir.path().join("manifest.txt");
        let text = fs::read_to_string(&path).unwrap();
        fs::write(&path, text.replace("channels=16", "channels=32")).unwrap();
        assert!(ModelWeights::load(dir.path()).is_err());
        fs::write(&path, text.replace("tensor=decoder.head.bias\n", "")).unwrap();
        assert!(ModelWeights::load(dir.path()).is_err());
    }
}
