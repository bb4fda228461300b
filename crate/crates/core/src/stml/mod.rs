//! Spatial-temporal multi-level association: a stack of transformer blocks
//! whose attention is decomposed into three asymmetric sub-streams.
//!
//! Within one block every stream reads the block *inputs*:
//!
//! * objects attend to objects;
//! * reference `i` attends to itself and the objects, never to another
//!   reference;
//! * the test frame attends to itself and every reference.
//!
//! Keys and values for all streams come from the same `W^K`/`W^V`. The
//! decomposition is exactly one masked joint attention over the stacked rows
//! `[objects; ref_1; …; ref_m; test]`, which [`joint_attention_oracle`]
//! computes directly.

mod block;
mod oracle;

use rand::Rng;

pub use block::{
    object_self_attention, reference_object_enhancement, stml_block, stml_block_on_tape, stml_forward,
    test_reference_correlation, StateVars, WeightVars,
};
pub use oracle::{joint_attention_oracle, Visibility};

use crate::conv::Linear;
use crate::embedding::FeatureMap;
use crate::error::{Result, StmaError};
use crate::init::fan_in_uniform;
use crate::tensor::{ops, Tensor};

pub const LAYERNORM_EPS: f64 = 1e-5;
pub const FFN_EXPANSION: usize = 4;

/// One summary vector per target, rows in target-ID order (ID 1 first).
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectFeatures {
    pub vectors: Tensor,
}

impl ObjectFeatures {
    pub fn new(vectors: Tensor) -> Result<Self> {
        vectors.dims2()?;
        Ok(Self { vectors })
    }

    pub fn zeros(n: usize, c: usize) -> Self {
        Self { vectors: Tensor::zeros(&[n, c]) }
    }

    pub fn count(&self) -> usize {
        self.vectors.shape()[0]
    }
}

/// Which attention pattern a block applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AttentionMode {
    /// Decomposed object / reference / test streams.
    #[default]
    Full,
    /// References attend only to themselves; objects are carried unchanged.
    NoObject,
    /// References are ignored and carried unchanged; test attends to itself.
    NoSpatial,
    /// Unmasked self-attention over all stacked rows.
    Joint,
}

impl std::str::FromStr for AttentionMode {
    type Err = StmaError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Self::Full),
            "no_object" => Ok(Self::NoObject),
            "no_spatial" => Ok(Self::NoSpatial),
            "joint" => Ok(Self::Joint),
            other => Err(StmaError::Parse(format!("unknown attention mode '{other}'"))),
        }
    }
}

impl std::fmt::Display for AttentionMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Full => "full",
            Self::NoObject => "no_object",
            Self::NoSpatial => "no_spatial",
            Self::Joint => "joint",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockConfig {
    pub mode: AttentionMode,
    /// Whether the object stream takes the residual/FFN update. When false
    /// the block returns the objects it was given.
    pub update_objects: bool,
}

impl Default for BlockConfig {
    fn default() -> Self {
        Self { mode: AttentionMode::Full, update_objects: true }
    }
}

impl From<AttentionMode> for BlockConfig {
    fn from(mode: AttentionMode) -> Self {
        Self { mode, ..Self::default() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNormParams {
    pub gamma: Tensor,
    pub beta: Tensor,
}

impl LayerNormParams {
    pub fn identity(c: usize) -> Self {
        Self { gamma: Tensor::full(&[c], 1.0), beta: Tensor::zeros(&[c]) }
    }

    pub fn apply(&self, x: &Tensor) -> Result<Tensor> {
        ops::layernorm(x, &self.gamma, &self.beta, LAYERNORM_EPS)
    }
}

/// Parameters of one pre-LN block. `W^Q`, `W^K`, `W^V` are shared by the
/// object, reference, and test streams.
#[derive(Debug, Clone, PartialEq)]
pub struct StmlWeights {
    pub heads: usize,
    pub ln_attn: LayerNormParams,
    pub w_q: Tensor,
    pub w_k: Tensor,
    pub w_v: Tensor,
    pub w_o: Tensor,
    pub ln_ffn: LayerNormParams,
    pub ffn_in: Linear,
    pub ffn_out: Linear,
}

impl StmlWeights {
    pub fn random(rng: &mut impl Rng, channels: usize, heads: usize) -> Result<Self> {
        if heads == 0 || !channels.is_multiple_of(heads) {
            return Err(StmaError::contract(format!("channel dim {channels} is not divisible by {heads} heads")));
        }
        let c = channels;
        let hidden = FFN_EXPANSION * c;
        let ln = |rng: &mut dyn rand::RngCore| LayerNormParams {
            gamma: Tensor::from_fn(&[c], |_| rng.gen_range(0.8..1.2)),
            beta: Tensor::from_fn(&[c], |_| rng.gen_range(-0.1..0.1)),
        };
        let ln_attn = ln(rng);
        let ln_ffn = ln(rng);
        Ok(Self {
            heads,
            ln_attn,
            w_q: fan_in_uniform(rng, &[c, c], c),
            w_k: fan_in_uniform(rng, &[c, c], c),
            w_v: fan_in_uniform(rng, &[c, c], c),
            w_o: fan_in_uniform(rng, &[c, c], c),
            ln_ffn,
            ffn_in: Linear::random(rng, c, hidden),
            ffn_out: Linear::random(rng, hidden, c),
        })
    }

    /// Weights whose attention output and FFN output vanish, so the block is
    /// the identity on every stream.
    pub fn passthrough(channels: usize, heads: usize) -> Result<Self> {
        let mut w = Self::random(&mut crate::init::seeded_rng(0), channels, heads)?;
        w.w_o = Tensor::zeros(&[channels, channels]);
        w.ffn_out = Linear::zeros(FFN_EXPANSION * channels, channels);
        Ok(w)
    }

    pub fn channels(&self) -> usize {
        self.w_q.shape()[0]
    }

    pub fn head_dim(&self) -> usize {
        self.channels() / self.heads
    }

    /// `relu(x·W₁ + b₁)·W₂ + b₂`, row-wise.
    pub fn feed_forward(&self, x: &Tensor) -> Result<Tensor> {
        self.ffn_out.apply(&ops::relu(&self.ffn_in.apply(x)?))
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.channels();
        if self.heads == 0 || !c.is_multiple_of(self.heads) {
            return Err(StmaError::contract("channel dim not divisible by head count"));
        }
        for (name, t) in [("w_q", &self.w_q), ("w_k", &self.w_k), ("w_v", &self.w_v), ("w_o", &self.w_o)] {
            if t.shape() != [c, c] {
                return Err(StmaError::Contract(format!("{name} must be [{c}, {c}], got {:?}", t.shape())));
            }
        }
        Ok(())
    }
}

/// Inputs and outputs of a block: test map, `m` references, `n` objects.
#[derive(Debug, Clone, PartialEq)]
pub struct StmlState {
    pub test: FeatureMap,
    pub references: Vec<FeatureMap>,
    pub objects: ObjectFeatures,
}

impl StmlState {
    pub fn validate(&self) -> Result<()> {
        let (n, c) = self.test.tokens.dims2()?;
        for r in &self.references {
            if r.tokens.shape() != [n, c] {
                return Err(StmaError::dim("stml state", self.test.tokens.shape(), r.tokens.shape()));
            }
        }
        let (_, oc) = self.objects.vectors.dims2()?;
        if oc != c {
            return Err(StmaError::dim("stml state", self.test.tokens.shape(), self.objects.vectors.shape()));
        }
        Ok(())
    }

    pub fn channels(&self) -> usize {
        self.test.channels()
    }

    /// Rows stacked as `[objects; ref_1; …; ref_m; test]`.
    pub fn stacked_rows(&self) -> Result<Tensor> {
        let mut parts = vec![&self.objects.vectors];
        parts.extend(self.references.iter().map(|r| &r.tokens));
        parts.push(&self.test.tokens);
        ops::concat_rows(&parts)
    }

    /// Inverse of [`stacked_rows`](Self::stacked_rows) using this state's
    /// geometry.
    pub fn unstack_like(&self, rows: &Tensor) -> Result<StmlState> {
        let n = self.objects.count();
        let len = self.test.len();
        let objects = ObjectFeatures::new(ops::slice_rows(rows, 0, n)?)?;
        let mut references = Vec::with_capacity(self.references.len());
        for (i, r) in self.references.iter().enumerate() {
            let start = n + i * len;
            references.push(FeatureMap::new(ops::slice_rows(rows, start, start + len)?, r.grid_h, r.grid_w)?);
        }
        let start = n + self.references.len() * len;
        let test = FeatureMap::new(ops::slice_rows(rows, start, start + len)?, self.test.grid_h, self.test.grid_w)?;
        Ok(StmlState { test, references, objects })
    }

    /// Largest elementwise difference over every stream.
    pub fn max_abs_diff(&self, other: &StmlState) -> Result<f64> {
        if self.references.len() != other.references.len() {
            return Err(StmaError::contract("states hold different reference counts"));
        }
        let mut worst = self.test.tokens.max_abs_diff(&other.test.tokens)?;
        worst = worst.max(self.objects.vectors.max_abs_diff(&other.objects.vectors)?);
        for (a, b) in self.references.iter().zip(&other.references) {
            worst = worst.max(a.tokens.max_abs_diff(&b.tokens)?);
        }
        Ok(worst)
    }
}
