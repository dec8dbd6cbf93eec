//! Variational state-density estimator conditioned on policy parameters.
//!
//! The encoder reads the flattened policy table and produces a diagonal
//! Gaussian over a latent `z`; the decoder maps `z` to a categorical
//! distribution over states. Gradients are hand-derived for this fixed
//! architecture:
//!
//! ```text
//! θ ─ W1,b1 ─ tanh ─┬─ Wμ,bμ ─ μ ──┐
//!                   └─ Ws,bs ─ logσ ┴─ z = μ + σ ε ─ W3,b3 ─ tanh ─ W4,b4 ─ log_softmax
//! ```

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::CounterRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LatentConfig {
    pub z_dim: usize,
    pub hidden_dim: usize,
    pub n_z_samples: usize,
}

impl Default for LatentConfig {
    fn default() -> Self {
        Self {
            z_dim: 64,
            hidden_dim: 64,
            n_z_samples: 1,
        }
    }
}

impl LatentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.z_dim == 0 || self.hidden_dim == 0 || self.n_z_samples == 0 {
            return Err(Error::InvalidArgument(format!(
                "latent config needs positive sizes, got {self:?}"
            )));
        }
        Ok(())
    }
}

/// Dimensions of every weight block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct VaeShape {
    pub input_dim: usize,
    pub n_states: usize,
    pub latent: LatentConfig,
}

/// Named parameter blocks, in storage order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Block {
    EncW,
    EncB,
    MuW,
    MuB,
    LogSigmaW,
    LogSigmaB,
    DecW,
    DecB,
    OutW,
    OutB,
}

impl Block {
    pub const ALL: [Block; 10] = [
        Block::EncW,
        Block::EncB,
        Block::MuW,
        Block::MuB,
        Block::LogSigmaW,
        Block::LogSigmaB,
        Block::DecW,
        Block::DecB,
        Block::OutW,
        Block::OutB,
    ];

    /// `(rows, cols)`; biases are `(rows, 1)`.
    fn dims(self, shape: &VaeShape) -> (usize, usize) {
        let (d, h, z, s) = (
            shape.input_dim,
            shape.latent.hidden_dim,
            shape.latent.z_dim,
            shape.n_states,
        );
        match self {
            Block::EncW => (h, d),
            Block::EncB => (h, 1),
            Block::MuW | Block::LogSigmaW => (z, h),
            Block::MuB | Block::LogSigmaB => (z, 1),
            Block::DecW => (h, z),
            Block::DecB => (h, 1),
            Block::OutW => (s, h),
            Block::OutB => (s, 1),
        }
    }

    fn is_bias(self) -> bool {
        matches!(
            self,
            Block::EncB | Block::MuB | Block::LogSigmaB | Block::DecB | Block::OutB
        )
    }
}

/// Density-estimator parameters: a shape header plus one flat buffer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VaeParams {
    pub shape: VaeShape,
    pub data: Vec<f64>,
}

impl VaeParams {
    pub fn zeros(shape: VaeShape) -> Self {
        let len = Block::ALL
            .iter()
            .map(|b| {
                let (r, c) = b.dims(&shape);
                r * c
            })
            .sum();
        Self {
            shape,
            data: vec![0.0; len],
        }
    }

    fn range(&self, block: Block) -> std::ops::Range<usize> {
        let mut start = 0;
        for b in Block::ALL {
            let (r, c) = b.dims(&self.shape);
            if b == block {
                return start..start + r * c;
            }
            start += r * c;
        }
        unreachable!()
    }

    pub fn block(&self, block: Block) -> &[f64] {
        &self.data[self.range(block)]
    }

    pub fn block_mut(&mut self, block: Block) -> &mut [f64] {
        let r = self.range(block);
        &mut self.data[r]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// `self += step * other`.
    pub fn axpy(&mut self, step: f64, other: &VaeParams) {
        for (x, g) in self.data.iter_mut().zip(&other.data) {
            *x += step * g;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

/// Weights uniform in `±1/√fan_in`, biases zero, deterministic per seed.
pub fn init(cfg: LatentConfig, input_dim: usize, n_states: usize, seed: u64) -> Result<VaeParams> {
    cfg.validate()?;
    if input_dim == 0 || n_states == 0 {
        return Err(Error::InvalidArgument("input_dim and n_states must be positive".into()));
    }
    let shape = VaeShape {
        input_dim,
        n_states,
        latent: cfg,
    };
    let mut params = VaeParams::zeros(shape);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for block in Block::ALL.into_iter().filter(|b| !b.is_bias()) {
        let (_, fan_in) = block.dims(&shape);
        let bound = 1.0 / (fan_in as f64).sqrt();
        for w in params.block_mut(block) {
            *w = rng.gen_range(-bound..=bound);
        }
    }
    Ok(params)
}

/// `out = W x + b` for a row-major `W`.
fn affine(w: &[f64], b: &[f64], x: &[f64]) -> Vec<f64> {
    let cols = x.len();
    b.iter()
        .zip(w.chunks(cols))
        .map(|(bi, row)| bi + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>())
        .collect()
}

/// `out += Wᵀ g`.
fn affine_transpose_into(w: &[f64], g: &[f64], out: &mut [f64]) {
    let cols = out.len();
    for (gi, row) in g.iter().zip(w.chunks(cols)) {
        if *gi == 0.0 {
            continue;
        }
        for (o, wij) in out.iter_mut().zip(row) {
            *o += gi * wij;
        }
    }
}

/// `dW += g xᵀ`, `db += g`.
fn outer_into(dw: &mut [f64], db: &mut [f64], g: &[f64], x: &[f64]) {
    let cols = x.len();
    for ((gi, row), b) in g.iter().zip(dw.chunks_mut(cols)).zip(db.iter_mut()) {
        *b += gi;
        if *gi == 0.0 {
            continue;
        }
        for (d, xj) in row.iter_mut().zip(x) {
            *d += gi * xj;
        }
    }
}

fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
    logits.iter().map(|l| l - lse).collect()
}

/// Forward intermediates needed by [`backprop`].
#[derive(Debug, Clone, PartialEq)]
pub struct ElboCache {
    pub theta: Vec<f64>,
    pub state: usize,
    pub weight: f64,
    pub seed: u64,
    pub hidden: Vec<f64>,
    pub mu: Vec<f64>,
    pub log_sigma: Vec<f64>,
    /// One noise vector per latent sample.
    pub eps: Vec<Vec<f64>>,
    pub z: Vec<Vec<f64>>,
    pub dec_hidden: Vec<Vec<f64>>,
    pub log_probs: Vec<Vec<f64>>,
    pub reconstruction: f64,
    pub kl: f64,
    pub value: f64,
}

fn check_finite(values: &[f64], layer: &str) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(format!("{layer} layer of the density estimator")))
    }
}

/// Standard normal noise for one `(seed, sample)` pair.
fn noise(seed: u64, n: usize, z_dim: usize) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| (0..z_dim).map(|_| rng.sample(StandardNormal)).collect())
        .collect()
}

/// Decoder head: `log p(· | z)`.
pub fn decode_log_probs(phi: &VaeParams, z: &[f64]) -> Vec<f64> {
    let h = affine(phi.block(Block::DecW), phi.block(Block::DecB), z);
    let h: Vec<f64> = h.into_iter().map(f64::tanh).collect();
    log_softmax(&affine(phi.block(Block::OutW), phi.block(Block::OutB), &h))
}

/// Encoder head: `(μ, log σ)` of `q(z | θ)`.
pub fn encode(phi: &VaeParams, theta: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let h: Vec<f64> = affine(phi.block(Block::EncW), phi.block(Block::EncB), theta)
        .into_iter()
        .map(f64::tanh)
        .collect();
    (
        affine(phi.block(Block::MuW), phi.block(Block::MuB), &h),
        affine(phi.block(Block::LogSigmaW), phi.block(Block::LogSigmaB), &h),
    )
}

/// Weighted ELBO `w · (mean_k log p(s | z_k) − KL(q(z|θ) ‖ N(0, I)))` with
/// `z_k = μ + σ ε_k`.
pub fn elbo(phi: &VaeParams, theta: &[f64], state: usize, weight: f64, seed: u64) -> Result<(f64, ElboCache)> {
    let shape = phi.shape;
    if theta.len() != shape.input_dim {
        return Err(Error::Shape(format!(
            "encoder expects {} inputs, got {}",
            shape.input_dim,
            theta.len()
        )));
    }
    if state >= shape.n_states {
        return Err(Error::InvalidArgument(format!("state {state} out of range")));
    }
    if !(weight >= 0.0) {
        return Err(Error::InvalidArgument(format!("weight {weight} must be >= 0")));
    }
    let hidden: Vec<f64> = affine(phi.block(Block::EncW), phi.block(Block::EncB), theta)
        .into_iter()
        .map(f64::tanh)
        .collect();
    check_finite(&hidden, "encoder hidden")?;
    let mu = affine(phi.block(Block::MuW), phi.block(Block::MuB), &hidden);
    let log_sigma = affine(phi.block(Block::LogSigmaW), phi.block(Block::LogSigmaB), &hidden);
    check_finite(&mu, "mean head")?;
    check_finite(&log_sigma, "log-sigma head")?;

    let n = shape.latent.n_z_samples;
    let eps = noise(seed, n, shape.latent.z_dim);
    let mut z = Vec::with_capacity(n);
    let mut dec_hidden = Vec::with_capacity(n);
    let mut log_probs = Vec::with_capacity(n);
    let mut reconstruction = 0.0;
    for e in &eps {
        let zk: Vec<f64> = mu
            .iter()
            .zip(&log_sigma)
            .zip(e)
            .map(|((m, ls), e)| m + ls.exp() * e)
            .collect();
        check_finite(&zk, "latent sample")?;
        let hk: Vec<f64> = affine(phi.block(Block::DecW), phi.block(Block::DecB), &zk)
            .into_iter()
            .map(f64::tanh)
            .collect();
        let lp = log_softmax(&affine(phi.block(Block::OutW), phi.block(Block::OutB), &hk));
        check_finite(&lp, "decoder output")?;
        reconstruction += lp[state] / n as f64;
        z.push(zk);
        dec_hidden.push(hk);
        log_probs.push(lp);
    }
    let kl = 0.5
        * mu
            .iter()
            .zip(&log_sigma)
            .map(|(m, ls)| m * m + (2.0 * ls).exp() - 1.0 - 2.0 * ls)
            .sum::<f64>();
    check_finite(&[kl], "KL")?;
    let value = weight * (reconstruction - kl);
    let cache = ElboCache {
        theta: theta.to_vec(),
        state,
        weight,
        seed,
        hidden,
        mu,
        log_sigma,
        eps,
        z,
        dec_hidden,
        log_probs,
        reconstruction,
        kl,
        value,
    };
    Ok((value, cache))
}

/// Reverse-mode gradients of the cached ELBO value with respect to every
/// parameter and every policy-table input.
pub fn backprop(phi: &VaeParams, cache: &ElboCache) -> (VaeParams, Vec<f64>) {
    let shape = phi.shape;
    let mut grad = VaeParams::zeros(shape);
    let mut d_theta = vec![0.0; shape.input_dim];
    let w = cache.weight;
    if w == 0.0 {
        return (grad, d_theta);
    }
    let (h, zd) = (shape.latent.hidden_dim, shape.latent.z_dim);
    let n = cache.z.len() as f64;
    let sigma: Vec<f64> = cache.log_sigma.iter().map(|ls| ls.exp()).collect();

    // KL part of −w·KL.
    let mut d_mu: Vec<f64> = cache.mu.iter().map(|m| -w * m).collect();
    let mut d_ls: Vec<f64> = sigma.iter().map(|s| -w * (s * s - 1.0)).collect();

    for k in 0..cache.z.len() {
        let lp = &cache.log_probs[k];
        let d_logits: Vec<f64> = lp
            .iter()
            .enumerate()
            .map(|(i, l)| {
                let target = if i == cache.state { 1.0 } else { 0.0 };
                w / n * (target - l.exp())
            })
            .collect();
        let hk = &cache.dec_hidden[k];
        {
            let r_w = grad.range(Block::OutW);
            let r_b = grad.range(Block::OutB);
            let (head, tail) = grad.data.split_at_mut(r_b.start);
            outer_into(&mut head[r_w], &mut tail[..r_b.len()], &d_logits, hk);
        }
        let mut d_hk = vec![0.0; h];
        affine_transpose_into(phi.block(Block::OutW), &d_logits, &mut d_hk);
        let d_a2: Vec<f64> = d_hk.iter().zip(hk).map(|(g, t)| g * (1.0 - t * t)).collect();
        {
            let r_w = grad.range(Block::DecW);
            let r_b = grad.range(Block::DecB);
            let (head, tail) = grad.data.split_at_mut(r_b.start);
            outer_into(&mut head[r_w], &mut tail[..r_b.len()], &d_a2, &cache.z[k]);
        }
        let mut d_z = vec![0.0; zd];
        affine_transpose_into(phi.block(Block::DecW), &d_a2, &mut d_z);
        for j in 0..zd {
            d_mu[j] += d_z[j];
            d_ls[j] += d_z[j] * cache.eps[k][j] * sigma[j];
        }
    }

    for (block_w, block_b, g) in [
        (Block::MuW, Block::MuB, &d_mu),
        (Block::LogSigmaW, Block::LogSigmaB, &d_ls),
    ] {
        let r_w = grad.range(block_w);
        let r_b = grad.range(block_b);
        let (head, tail) = grad.data.split_at_mut(r_b.start);
        outer_into(&mut head[r_w], &mut tail[..r_b.len()], g, &cache.hidden);
    }
    let mut d_h1 = vec![0.0; h];
    affine_transpose_into(phi.block(Block::MuW), &d_mu, &mut d_h1);
    affine_transpose_into(phi.block(Block::LogSigmaW), &d_ls, &mut d_h1);
    let d_a1: Vec<f64> = d_h1
        .iter()
        .zip(&cache.hidden)
        .map(|(g, t)| g * (1.0 - t * t))
        .collect();
    {
        let r_w = grad.range(Block::EncW);
        let r_b = grad.range(Block::EncB);
        let (head, tail) = grad.data.split_at_mut(r_b.start);
        outer_into(&mut head[r_w], &mut tail[..r_b.len()], &d_a1, &cache.theta);
    }
    affine_transpose_into(phi.block(Block::EncW), &d_a1, &mut d_theta);
    (grad, d_theta)
}

/// One training example: policy inputs, visited state, importance weight.
#[derive(Debug, Clone, PartialEq)]
pub struct DensitySample<'a> {
    pub theta: &'a [f64],
    pub state: usize,
    pub weight: f64,
}

/// Per-example noise seed derived from a batch seed.
pub fn sample_seed(seed: u64, index: usize) -> u64 {
    CounterRng::new(seed, 0x5EED).bits(index as u64)
}

/// Mean batch ELBO and its gradient.
pub fn batch_gradient(phi: &VaeParams, batch: &[DensitySample<'_>], seed: u64) -> Result<(f64, VaeParams)> {
    let mut grad = VaeParams::zeros(phi.shape);
    let mut total = 0.0;
    for (i, sample) in batch.iter().enumerate() {
        let (value, cache) = elbo(phi, sample.theta, sample.state, sample.weight, sample_seed(seed, i))?;
        total += value;
        let (g, _) = backprop(phi, &cache);
        grad.axpy(1.0, &g);
    }
    let n = batch.len().max(1) as f64;
    grad.data.iter_mut().for_each(|g| *g /= n);
    Ok((total / n, grad))
}

/// `φ + a_k ∇_φ mean ELBO`: one ascent step on the batch bound.
pub fn update_phi(phi: &VaeParams, batch: &[DensitySample<'_>], rate: f64, seed: u64) -> Result<VaeParams> {
    if !(rate >= 0.0) {
        return Err(Error::InvalidArgument(format!("rate {rate} must be >= 0")));
    }
    let mut next = phi.clone();
    if rate == 0.0 || batch.is_empty() {
        return Ok(next);
    }
    let (_, grad) = batch_gradient(phi, batch, seed)?;
    next.axpy(rate, &grad);
    Ok(next)
}

/// Unit-weight ELBO, the estimator's proxy for `log p(s | θ)`.
pub fn log_density(phi: &VaeParams, theta: &[f64], state: usize, seed: u64) -> Result<f64> {
    Ok(elbo(phi, theta, state, 1.0, seed)?.0)
}

/// `(1/m) Σ_k softmax(decoder(z_k))` with `z_k` drawn from the prior.
pub fn decoder_marginal(phi: &VaeParams, n_samples: usize, seed: u64) -> Vec<f64> {
    let eps = noise(seed, n_samples, phi.shape.latent.z_dim);
    let mut marginal = vec![0.0; phi.shape.n_states];
    for z in &eps {
        for (m, lp) in marginal.iter_mut().zip(decode_log_probs(phi, z)) {
            *m += lp.exp() / n_samples as f64;
        }
    }
    marginal
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg() -> LatentConfig {
        LatentConfig {
            z_dim: 3,
            hidden_dim: 4,
            n_z_samples: 2,
        }
    }

    fn fixture(seed: u64) -> (VaeParams, Vec<f64>) {
        let mut phi = init(small_cfg(), 5, 6, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 99);
        // Nonzero biases so every path is exercised.
        for b in Block::ALL.into_iter().filter(|b| b.is_bias()) {
            for x in phi.block_mut(b) {
                *x = rng.gen_range(-0.5..0.5);
            }
        }
        let theta = (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect();
        (phi, theta)
    }

    #[test]
    fn init_is_deterministic_and_bounded() {
        let a = init(LatentConfig::default(), 64, 16, 3).unwrap();
        let b = init(LatentConfig::default(), 64, 16, 3).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, init(LatentConfig::default(), 64, 16, 4).unwrap());
        for block in Block::ALL {
            let (_, fan_in) = block.dims(&a.shape);
            let bound = 1.0 / (fan_in as f64).sqrt();
            for &w in a.block(block) {
                if block.is_bias() {
                    assert_eq!(w, 0.0);
                } else {
                    assert!(w.abs() <= bound);
                }
            }
        }
    }

    #[test]
    fn zero_sizes_are_rejected() {
        let cfg = LatentConfig {
            hidden_dim: 0,
            ..LatentConfig::default()
        };
        assert!(init(cfg, 4, 4, 0).is_err());
        assert!(init(LatentConfig::default(), 0, 4, 0).is_err());
    }

    #[test]
    fn zero_weight_gives_zero_value_and_gradients() {
        let (phi, theta) = fixture(1);
        let (v, cache) = elbo(&phi, &theta, 2, 0.0, 7).unwrap();
        assert_eq!(v, 0.0);
        let (g, gt) = backprop(&phi, &cache);
        assert!(g.data.iter().all(|&x| x == 0.0));
        assert!(gt.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn standard_posterior_has_zero_kl() {
        let (mut phi, theta) = fixture(2);
        for b in [Block::MuW, Block::MuB, Block::LogSigmaW, Block::LogSigmaB] {
            phi.block_mut(b).fill(0.0);
        }
        let (_, cache) = elbo(&phi, &theta, 0, 1.0, 1).unwrap();
        assert_eq!(cache.kl, 0.0);
    }

    #[test]
    fn hand_set_decoder_returns_log_density() {
        let (mut phi, theta) = fixture(3);
        let target = [0.1, 0.2, 0.3, 0.15, 0.05, 0.2];
        phi.block_mut(Block::OutW).fill(0.0);
        for (b, p) in phi.block_mut(Block::OutB).iter_mut().zip(target) {
            *b = f64::ln(p);
        }
        let (_, cache) = elbo(&phi, &theta, 4, 1.0, 0).unwrap();
        let ld = log_density(&phi, &theta, 4, 0).unwrap();
        assert!((ld - (target[4].ln() - cache.kl)).abs() < 1e-12);
        for b in [Block::MuW, Block::MuB, Block::LogSigmaW, Block::LogSigmaB] {
            phi.block_mut(b).fill(0.0);
        }
        let ld = log_density(&phi, &theta, 4, 0).unwrap();
        assert!((ld - target[4].ln()).abs() < 1e-12);
    }

    #[test]
    fn log_density_is_unit_weight_elbo() {
        let (phi, theta) = fixture(4);
        let (v, _) = elbo(&phi, &theta, 1, 1.0, 11).unwrap();
        assert_eq!(log_density(&phi, &theta, 1, 11).unwrap(), v);
    }

    #[test]
    fn decoder_output_is_normalised() {
        let (phi, _) = fixture(5);
        for seed in 0..10 {
            let z = &noise(seed, 1, 3)[0];
            let lp = decode_log_probs(&phi, z);
            let max = lp.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + lp.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
            assert!(lse.abs() < 1e-9);
        }
    }

    #[test]
    fn cache_replays_bitwise() {
        let (phi, theta) = fixture(6);
        let (_, a) = elbo(&phi, &theta, 3, 0.7, 5).unwrap();
        let (_, b) = elbo(&phi, &a.theta, a.state, a.weight, a.seed).unwrap();
        assert_eq!(a, b);
        assert_eq!(backprop(&phi, &a), backprop(&phi, &b));
    }

    #[test]
    fn gradients_scale_linearly_in_weight() {
        let (phi, theta) = fixture(7);
        let (_, c1) = elbo(&phi, &theta, 3, 0.5, 5).unwrap();
        let (_, c2) = elbo(&phi, &theta, 3, 1.0, 5).unwrap();
        let (g1, t1) = backprop(&phi, &c1);
        let (g2, t2) = backprop(&phi, &c2);
        for (a, b) in g1.data.iter().zip(&g2.data).chain(t1.iter().zip(&t2)) {
            assert_eq!(2.0 * a, *b);
        }
    }

    #[test]
    fn gradients_match_central_differences() {
        let h = 1e-6;
        for seed in 0..3 {
            let (phi, theta) = fixture(20 + seed);
            let (_, cache) = elbo(&phi, &theta, 1, 0.8, seed).unwrap();
            let (g, gt) = backprop(&phi, &cache);
            let f = |p: &VaeParams, t: &[f64]| elbo(p, t, 1, 0.8, seed).unwrap().0;
            for i in 0..phi.len() {
                let (mut up, mut dn) = (phi.clone(), phi.clone());
                up.data[i] += h;
                dn.data[i] -= h;
                let fd = (f(&up, &theta) - f(&dn, &theta)) / (2.0 * h);
                assert!((fd - g.data[i]).abs() < 1e-6 * (1.0 + fd.abs()), "phi[{i}]: {fd} vs {}", g.data[i]);
            }
            for i in 0..theta.len() {
                let (mut up, mut dn) = (theta.clone(), theta.clone());
                up[i] += h;
                dn[i] -= h;
                let fd = (f(&phi, &up) - f(&phi, &dn)) / (2.0 * h);
                assert!((fd - gt[i]).abs() < 1e-6 * (1.0 + fd.abs()), "theta[{i}]");
            }
        }
    }

    #[test]
    fn zero_rate_keeps_parameters() {
        let (phi, theta) = fixture(8);
        let batch = [DensitySample {
            theta: &theta,
            state: 0,
            weight: 1.0,
        }];
        assert_eq!(update_phi(&phi, &batch, 0.0, 1).unwrap(), phi);
        assert!(update_phi(&phi, &batch, -1.0, 1).is_err());
    }

    #[test]
    fn shape_errors() {
        let (phi, theta) = fixture(9);
        assert!(elbo(&phi, &theta[..4], 0, 1.0, 0).is_err());
        assert!(elbo(&phi, &theta, 6, 1.0, 0).is_err());
        assert!(elbo(&phi, &theta, 0, -0.1, 0).is_err());
    }

    #[test]
    fn non_finite_forward_names_the_layer() {
        let (mut phi, theta) = fixture(10);
        phi.block_mut(Block::LogSigmaB)[0] = 1e6;
        let err = elbo(&phi, &theta, 0, 1.0, 0).unwrap_err();
        assert!(err.to_string().contains("latent sample") || err.to_string().contains("KL"), "{err}");
    }

    #[test]
    fn serialises_with_shape_header() {
        let (phi, _) = fixture(11);
        let json = serde_json::to_value(&phi).unwrap();
        assert_eq!(json["shape"]["input_dim"], 5);
        assert_eq!(json["data"].as_array().unwrap().len(), phi.len());
        let back: VaeParams = serde_json::from_value(json).unwrap();
        assert_eq!(back, phi);
    }
}
