//! Central finite-difference oracle for the analytic gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use selffeed::nn::{
    classification_loss, ranking_loss, EncoderConfig, ModelParams, ParamGroup, RankingPair,
};
use selffeed::text::TokenId;

pub const STEP: f64 = 1e-5;

/// Below this magnitude both sides are finite-difference round-off
/// (about eps * |L| / STEP ~ 1e-11), so relative error is undefined there.
pub const NOISE_FLOOR: f64 = 1e-8;

#[derive(Debug)]
pub struct CoordinateCheck {
    pub tensor: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

impl CoordinateCheck {
    pub fn is_informative(&self) -> bool {
        self.analytic.abs().max(self.numeric.abs()) >= NOISE_FLOOR
    }

    pub fn relative_error(&self) -> f64 {
        if !self.is_informative() {
            return 0.0;
        }
        let denom = self.analytic.abs().max(self.numeric.abs());
        (self.analytic - self.numeric).abs() / denom
    }
}

/// Picks coordinates spread over every tensor: one random tensor, then a
/// random element. Embedding picks are restricted to rows the batch uses.
fn pick_coordinates<G: ParamGroup>(
    group: &G,
    used_rows: &[TokenId],
    count: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<(usize, usize)> {
    let named = group.named();
    let mut picks = Vec::with_capacity(count);
    // one per tensor first so every tensor is covered
    for (t, (name, tensor)) in named.iter().enumerate() {
        picks.push((t, pick_index(name, tensor.shape.as_slice(), used_rows, rng)));
    }
    while picks.len() < count {
        let t = rng.gen_range(0..named.len());
        let (name, tensor) = &named[t];
        picks.push((t, pick_index(name, tensor.shape.as_slice(), used_rows, rng)));
    }
    picks
}

fn pick_index(name: &str, shape: &[usize], used_rows: &[TokenId], rng: &mut ChaCha8Rng) -> usize {
    if name.ends_with("embeddings") {
        let row = used_rows[rng.gen_range(0..used_rows.len())] as usize;
        row * shape[1] + rng.gen_range(0..shape[1])
    } else {
        rng.gen_range(0..shape.iter().product::<usize>())
    }
}

fn check<G, F>(
    group: &G,
    analytic: &G,
    used_rows: &[TokenId],
    count: usize,
    seed: u64,
    loss: F,
) -> Vec<CoordinateCheck>
where
    G: ParamGroup,
    F: Fn(&G) -> f64,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let analytic = analytic.named();
    let mut out = Vec::new();
    for (t, i) in pick_coordinates(group, used_rows, count, &mut rng) {
        let mut plus = group.clone();
        plus.named_mut()[t].1.data[i] += STEP;
        let mut minus = group.clone();
        minus.named_mut()[t].1.data[i] -= STEP;
        let numeric = (loss(&plus) - loss(&minus)) / (2.0 * STEP);
        out.push(CoordinateCheck {
            tensor: analytic[t].0.clone(),
            index: i,
            analytic: analytic[t].1.data[i],
            numeric,
        });
    }
    out
}

pub fn toy_config(layers: usize) -> EncoderConfig {
    EncoderConfig {
        embed_dim: 8,
        layers,
        heads: 2,
        ffn_dim: 8,
        max_seq_len: 32,
    }
}

fn random_ids(rng: &mut ChaCha8Rng, vocab: usize, len: usize) -> Vec<TokenId> {
    (0..len)
        .map(|_| rng.gen_range(2..vocab as TokenId))
        .collect()
}

pub fn ranking_check(layers: usize, coordinates: usize, seed: u64) -> Vec<CoordinateCheck> {
    let cfg = toy_config(layers);
    let vocab = 20;
    let params = ModelParams::init(cfg, vocab, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let batch: Vec<RankingPair> = (0..4)
        .map(|_| {
            let cl = rng.gen_range(2..7);
            let tl = rng.gen_range(1..5);
            (
                random_ids(&mut rng, vocab, cl),
                random_ids(&mut rng, vocab, tl),
            )
        })
        .collect();
    let used: Vec<TokenId> = batch
        .iter()
        .flat_map(|(c, t)| c.iter().chain(t).copied())
        .collect();
    let analytic = ranking_loss(&params.ranking, &cfg, &batch).unwrap().grads;
    check(&params.ranking, &analytic, &used, coordinates, seed, |g| {
        ranking_loss(g, &cfg, &batch).unwrap().loss
    })
}

pub fn classification_check(layers: usize, coordinates: usize, seed: u64) -> Vec<CoordinateCheck> {
    let cfg = toy_config(layers);
    let vocab = 20;
    let params = ModelParams::init(cfg, vocab, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xc1a5);
    let batch: Vec<(Vec<TokenId>, u8)> = (0..4)
        .map(|i| {
            let len = rng.gen_range(2..7);
            (random_ids(&mut rng, vocab, len), (i % 2) as u8)
        })
        .collect();
    let used: Vec<TokenId> = batch.iter().flat_map(|(c, _)| c.iter().copied()).collect();
    let analytic = classification_loss(&params.satisfaction, &cfg, &batch)
        .unwrap()
        .grads;
    check(
        &params.satisfaction,
        &analytic,
        &used,
        coordinates,
        seed,
        |g| classification_loss(g, &cfg, &batch).unwrap().loss,
    )
}
