use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::optim::OptimizerState;
use super::tensor::Tensor;
use super::NnError;

pub const EMBEDDING_INIT_LIMIT: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderConfig {
    pub embed_dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub ffn_dim: usize,
    pub max_seq_len: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            embed_dim: 300,
            layers: 1,
            heads: 2,
            ffn_dim: 32,
            max_seq_len: 256,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<(), NnError> {
        let dims = [
            self.embed_dim,
            self.layers,
            self.heads,
            self.ffn_dim,
            self.max_seq_len,
        ];
        if dims.iter().any(|&d| d == 0) {
            return Err(NnError::InvalidConfig(
                "all dimensions must be at least 1".into(),
            ));
        }
        if self.embed_dim % self.heads != 0 {
            return Err(NnError::InvalidConfig(format!(
                "embed_dim {} is not divisible by heads {}",
                self.embed_dim, self.heads
            )));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.embed_dim / self.heads
    }
}

/// Named, ordered collection of tensors. Gradients and optimizer moments
/// reuse the owning group's type so they line up tensor by tensor.
pub trait ParamGroup: Clone {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor));
    fn visit_mut<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(String, &'a mut Tensor));

    fn named(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        self.visit("", &mut |name, t| out.push((name, t)));
        out
    }

    fn named_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = Vec::new();
        self.visit_mut("", &mut |name, t| out.push((name, t)));
        out
    }

    fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.visit_mut("", &mut |_, t| t.data.fill(0.0));
        z
    }

    fn add_scaled(&mut self, other: &Self, factor: f64) {
        let others = other.named();
        for ((_, t), (_, o)) in self.named_mut().into_iter().zip(others) {
            for (a, b) in t.data.iter_mut().zip(&o.data) {
                *a += factor * b;
            }
        }
    }

    fn scale(&mut self, factor: f64) {
        self.visit_mut("", &mut |_, t| t.scale(factor));
    }

    fn param_count(&self) -> usize {
        self.named().iter().map(|(_, t)| t.len()).sum()
    }

    /// Order-sensitive checksum over the exact bit patterns of every value.
    fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for (_, t) in self.named() {
            for v in &t.data {
                for b in v.to_bits().to_le_bytes() {
                    h ^= b as u64;
                    h = h.wrapping_mul(0x0100_0000_01b3);
                }
            }
        }
        h
    }
}

fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderLayer {
    pub wq: Tensor,
    pub bq: Tensor,
    pub wk: Tensor,
    pub bk: Tensor,
    pub wv: Tensor,
    pub bv: Tensor,
    pub wo: Tensor,
    pub bo: Tensor,
    pub ln1_gain: Tensor,
    pub ln1_bias: Tensor,
    pub ffn_w1: Tensor,
    pub ffn_b1: Tensor,
    pub ffn_w2: Tensor,
    pub ffn_b2: Tensor,
    pub ln2_gain: Tensor,
    pub ln2_bias: Tensor,
}

impl EncoderLayer {
    fn init(cfg: &EncoderConfig, rng: &mut ChaCha8Rng) -> Self {
        let d = cfg.embed_dim;
        let f = cfg.ffn_dim;
        Self {
            wq: Tensor::xavier(d, d, rng),
            bq: Tensor::zeros(&[d]),
            wk: Tensor::xavier(d, d, rng),
            bk: Tensor::zeros(&[d]),
            wv: Tensor::xavier(d, d, rng),
            bv: Tensor::zeros(&[d]),
            wo: Tensor::xavier(d, d, rng),
            bo: Tensor::zeros(&[d]),
            ln1_gain: Tensor::filled(&[d], 1.0),
            ln1_bias: Tensor::zeros(&[d]),
            ffn_w1: Tensor::xavier(d, f, rng),
            ffn_b1: Tensor::zeros(&[f]),
            ffn_w2: Tensor::xavier(f, d, rng),
            ffn_b2: Tensor::zeros(&[d]),
            ln2_gain: Tensor::filled(&[d], 1.0),
            ln2_bias: Tensor::zeros(&[d]),
        }
    }
}

macro_rules! visit_fields {
    ($self:ident, $prefix:ident, $f:ident, $($field:ident),+) => {
        $( $f(join($prefix, stringify!($field)), &$self.$field); )+
    };
}

macro_rules! visit_fields_mut {
    ($self:ident, $prefix:ident, $f:ident, $($field:ident),+) => {
        $( $f(join($prefix, stringify!($field)), &mut $self.$field); )+
    };
}

impl ParamGroup for EncoderLayer {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor)) {
        visit_fields!(
            self, prefix, f, wq, bq, wk, bk, wv, bv, wo, bo, ln1_gain, ln1_bias, ffn_w1, ffn_b1,
            ffn_w2, ffn_b2, ln2_gain, ln2_bias
        );
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(String, &'a mut Tensor)) {
        visit_fields_mut!(
            self, prefix, f, wq, bq, wk, bk, wv, bv, wo, bo, ln1_gain, ln1_bias, ffn_w1, ffn_b1,
            ffn_w2, ffn_b2, ln2_gain, ln2_bias
        );
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Encoder {
    pub layers: Vec<EncoderLayer>,
}

impl Encoder {
    fn init(cfg: &EncoderConfig, rng: &mut ChaCha8Rng) -> Self {
        Self {
            layers: (0..cfg.layers)
                .map(|_| EncoderLayer::init(cfg, rng))
                .collect(),
        }
    }
}

impl ParamGroup for Encoder {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor)) {
        for (i, layer) in self.layers.iter().enumerate() {
            layer.visit(&join(prefix, &format!("layers.{i}")), f);
        }
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(String, &'a mut Tensor)) {
        for (i, layer) in self.layers.iter_mut().enumerate() {
            layer.visit_mut(&join(prefix, &format!("layers.{i}")), f);
        }
    }
}

/// Parameters shared by the Dialogue and Feedback tasks: one embedding
/// table feeding separate context and candidate encoders.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingGroup {
    pub embeddings: Tensor,
    pub context: Encoder,
    pub candidate: Encoder,
}

impl ParamGroup for RankingGroup {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor)) {
        f(join(prefix, "embeddings"), &self.embeddings);
        self.context.visit(&join(prefix, "context"), f);
        self.candidate.visit(&join(prefix, "candidate"), f);
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(String, &'a mut Tensor)) {
        f(join(prefix, "embeddings"), &mut self.embeddings);
        self.context.visit_mut(&join(prefix, "context"), f);
        self.candidate.visit_mut(&join(prefix, "candidate"), f);
    }
}

/// Parameters of the Satisfaction task, disjoint from [`RankingGroup`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SatisfactionGroup {
    pub embeddings: Tensor,
    pub encoder: Encoder,
    pub head_weight: Tensor,
    pub head_bias: Tensor,
}

impl ParamGroup for SatisfactionGroup {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor)) {
        f(join(prefix, "embeddings"), &self.embeddings);
        self.encoder.visit(&join(prefix, "encoder"), f);
        f(join(prefix, "head_weight"), &self.head_weight);
        f(join(prefix, "head_bias"), &self.head_bias);
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(String, &'a mut Tensor)) {
        f(join(prefix, "embeddings"), &mut self.embeddings);
        self.encoder.visit_mut(&join(prefix, "encoder"), f);
        f(join(prefix, "head_weight"), &mut self.head_weight);
        f(join(prefix, "head_bias"), &mut self.head_bias);
    }
}

/// Every trainable tensor of the agent plus the optimizer state of each
/// parameter group.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub config: EncoderConfig,
    pub vocab_size: usize,
    pub seed: u64,
    pub version: u64,
    pub ranking: RankingGroup,
    pub satisfaction: SatisfactionGroup,
    pub ranking_opt: OptimizerState<RankingGroup>,
    pub satisfaction_opt: OptimizerState<SatisfactionGroup>,
}

impl ModelParams {
    /// Seeded initialization: embeddings uniform in ±0.05, linear layers
    /// Xavier-uniform, layer-norm gain 1 and bias 0, head bias 0.
    pub fn init(config: EncoderConfig, vocab_size: usize, seed: u64) -> Result<Self, NnError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = config.embed_dim;
        let ranking = RankingGroup {
            embeddings: Tensor::uniform(&[vocab_size, d], EMBEDDING_INIT_LIMIT, &mut rng),
            context: Encoder::init(&config, &mut rng),
            candidate: Encoder::init(&config, &mut rng),
        };
        let head = Tensor::xavier(d, 1, &mut rng);
        let satisfaction = SatisfactionGroup {
            embeddings: Tensor::uniform(&[vocab_size, d], EMBEDDING_INIT_LIMIT, &mut rng),
            encoder: Encoder::init(&config, &mut rng),
            head_weight: Tensor {
                shape: vec![d],
                data: head.data,
            },
            head_bias: Tensor::zeros(&[1]),
        };
        Ok(Self {
            config,
            vocab_size,
            seed,
            version: 0,
            ranking_opt: OptimizerState::new(&ranking),
            satisfaction_opt: OptimizerState::new(&satisfaction),
            ranking,
            satisfaction,
        })
    }

    pub fn all_finite(&self) -> bool {
        self.ranking.named().iter().all(|(_, t)| t.all_finite())
            && self
                .satisfaction
                .named()
                .iter()
                .all(|(_, t)| t.all_finite())
    }

    pub fn checksum(&self) -> u64 {
        self.ranking.checksum() ^ self.satisfaction.checksum().rotate_left(1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> EncoderConfig {
        EncoderConfig {
            embed_dim: 8,
            layers: 2,
            heads: 2,
            ffn_dim: 8,
            max_seq_len: 16,
        }
    }

    #[test]
    fn init_is_bit_reproducible() {
        let a = ModelParams::init(toy(), 20, 7).unwrap();
        let b = ModelParams::init(toy(), 20, 7).unwrap();
        let c = ModelParams::init(toy(), 20, 8).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.checksum(), b.checksum());
        assert_ne!(a.checksum(), c.checksum());
        assert!(a.all_finite());
    }

    #[test]
    fn init_follows_documented_scheme() {
        let p = ModelParams::init(toy(), 20, 1).unwrap();
        assert!(p
            .ranking
            .embeddings
            .data
            .iter()
            .all(|v| v.abs() <= EMBEDDING_INIT_LIMIT));
        let layer = &p.ranking.context.layers[0];
        assert!(layer.ln1_gain.data.iter().all(|&v| v == 1.0));
        assert!(layer.ln2_bias.data.iter().all(|&v| v == 0.0));
        let limit = (6.0f64 / 16.0).sqrt();
        assert!(layer.wq.data.iter().all(|v| v.abs() <= limit));
        assert_eq!(p.satisfaction.head_bias.data, vec![0.0]);
    }

    #[test]
    fn groups_are_disjoint_and_named() {
        let p = ModelParams::init(toy(), 20, 1).unwrap();
        let names: Vec<String> = p.ranking.named().into_iter().map(|(n, _)| n).collect();
        assert_eq!(names[0], "embeddings");
        assert!(names.contains(&"context.layers.1.ffn_w2".to_string()));
        assert!(names.contains(&"candidate.layers.0.wq".to_string()));
        assert_eq!(names.len(), 1 + 2 * 2 * 16);
        let sat: Vec<String> = p.satisfaction.named().into_iter().map(|(n, _)| n).collect();
        assert_eq!(sat.last().unwrap(), "head_bias");
    }

    #[test]
    fn config_validation() {
        let mut cfg = toy();
        cfg.heads = 3;
        assert!(cfg.validate().is_err());
        cfg.heads = 0;
        assert!(cfg.validate().is_err());
        assert!(EncoderConfig::default().validate().is_ok());
    }
}
