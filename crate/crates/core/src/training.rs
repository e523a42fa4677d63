//! Fitting a QUBO to the empirical bit distribution by KL-gradient descent.
//!
//! For `P_Q(z) = exp(-zᵀQz) / Z_Q` and a data distribution `P_D`,
//!
//! ```text
//! ∂ KL(P_D ‖ P_Q) / ∂Q_ij = E_D[z_i z_j] - E_Q[z_i z_j]        (i <= j)
//! ```
//!
//! Each `z_i z_j` with `i < j` appears once in `zᵀQz`, so only the upper
//! triangle of the symmetric moment matrices enters the gradient. Model
//! moments come from a fresh Gibbs batch every iteration; data moments are
//! computed once. ADAM smooths the stochastic gradient.

use std::collections::BTreeMap;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::boltzmann::{GibbsConfig, GibbsSampler, Qubo, QuboModel};
use crate::encoding::{BitVector, EncodingScheme};
use crate::{seeded_rng, Error, Result};

/// Dense symmetric `n × n` matrix of `E[z_i z_j]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SecondMomentMatrix {
    n: usize,
    m: Vec<f64>,
}

impl SecondMomentMatrix {
    pub fn from_dense(n: usize, m: Vec<f64>) -> Result<Self> {
        if m.len() != n * n {
            return Err(Error::LengthMismatch {
                expected: n * n,
                actual: m.len(),
            });
        }
        Ok(Self { n, m })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.m[i * self.n + j]
    }

    pub fn as_dense(&self) -> &[f64] {
        &self.m
    }
}

/// `(1/m) Σ z zᵀ` over the given vectors.
pub fn empirical_moments(vectors: &[BitVector]) -> Result<SecondMomentMatrix> {
    let first = vectors
        .first()
        .ok_or_else(|| Error::InvalidArgument("no vectors to average".into()))?;
    let n = first.len();
    let mut counts = vec![0u64; n * n];
    let mut ones = Vec::with_capacity(n);
    for z in vectors {
        if z.len() != n {
            return Err(Error::LengthMismatch {
                expected: n,
                actual: z.len(),
            });
        }
        ones.clear();
        ones.extend(z.ones());
        for (a, &i) in ones.iter().enumerate() {
            let row = &mut counts[i * n..(i + 1) * n];
            for &j in &ones[a..] {
                row[j] += 1;
            }
        }
    }
    let total = vectors.len() as f64;
    let mut m = vec![0.0; n * n];
    for i in 0..n {
        for j in i..n {
            let v = counts[i * n + j] as f64 / total;
            m[i * n + j] = v;
            m[j * n + i] = v;
        }
    }
    Ok(SecondMomentMatrix { n, m })
}

/// Gradient of `KL(P_D ‖ P_Q)` with respect to the upper triangle of `Q`:
/// entry `(i, j)`, `i <= j`, is `D_ij - M_ij`.
pub fn kl_gradient_estimate(model: &SecondMomentMatrix, data: &SecondMomentMatrix) -> Result<Qubo> {
    if model.n != data.n {
        return Err(Error::LengthMismatch {
            expected: data.n,
            actual: model.n,
        });
    }
    let n = model.n;
    let mut grad = Qubo::zeros(n);
    for i in 0..n {
        for j in i..n {
            grad.set(i, j, data.get(i, j) - model.get(i, j));
        }
    }
    Ok(grad)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamParams {
    pub step_size: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        Self {
            step_size: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// First and second moment accumulators over the dense `n × n` layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub t: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        Self {
            t: 0,
            m: vec![0.0; n * n],
            v: vec![0.0; n * n],
        }
    }
}

/// One bias-corrected ADAM descent step at time `t = state.t + 1`.
///
/// Only the upper triangle is touched.
pub fn adam_update(
    q: &mut Qubo,
    grad: &Qubo,
    state: &mut AdamState,
    params: &AdamParams,
) -> Result<()> {
    let n = q.n();
    if grad.n() != n || state.m.len() != n * n || state.v.len() != n * n {
        return Err(Error::LengthMismatch {
            expected: n,
            actual: grad.n(),
        });
    }
    state.t += 1;
    let t = state.t as i32;
    let correct1 = 1.0 - params.beta1.powi(t);
    let correct2 = 1.0 - params.beta2.powi(t);
    let g = grad.as_dense();
    let entries = q.as_dense_mut();
    for i in 0..n {
        for idx in i * n + i..(i + 1) * n {
            let m = params.beta1 * state.m[idx] + (1.0 - params.beta1) * g[idx];
            let v = params.beta2 * state.v[idx] + (1.0 - params.beta2) * g[idx] * g[idx];
            state.m[idx] = m;
            state.v[idx] = v;
            let m_hat = m / correct1;
            let v_hat = v / correct2;
            entries[idx] -= params.step_size * m_hat / (v_hat.sqrt() + params.epsilon);
        }
    }
    Ok(())
}

/// Initial QUBO: `penalty` on every pair of bits inside the same one-hot
/// block of the same token position, zero elsewhere.
pub fn init_qubo(scheme: &EncodingScheme, max_tokens: usize, penalty: f64) -> Result<QuboModel> {
    if !(penalty >= 0.0 && penalty.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "penalty {penalty} must be finite and >= 0"
        )));
    }
    let k = scheme.bits();
    let mut qubo = Qubo::zeros(k * max_tokens);
    if penalty > 0.0 {
        for pos in 0..max_tokens {
            for block in scheme.block_ranges() {
                let (start, end) = (pos * k + block.start, pos * k + block.end);
                for i in start..end {
                    for j in i + 1..end {
                        qubo.set(i, j, penalty);
                    }
                }
            }
        }
    }
    QuboModel::new(qubo, scheme.clone(), max_tokens)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub iterations: usize,
    pub samples_per_iter: usize,
    pub gibbs: GibbsConfig,
    pub adam: AdamParams,
    pub init_penalty: f64,
    pub seed: u64,
    /// Exact KL is tracked while `n` does not exceed this.
    pub exact_kl_max_bits: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 1000,
            samples_per_iter: 10_000,
            gibbs: GibbsConfig {
                burn_in: 100,
                thinning: 10,
                chains: 8,
            },
            adam: AdamParams::default(),
            init_penalty: 0.1,
            seed: 0,
            exact_kl_max_bits: 20,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        let p = &self.adam;
        if self.samples_per_iter == 0 || self.gibbs.thinning == 0 || self.gibbs.chains == 0 {
            return Err(Error::InvalidArgument(
                "sample count, thinning and chains must be positive".into(),
            ));
        }
        if p.step_size.is_nan()
            || p.step_size <= 0.0
            || !(0.0..1.0).contains(&p.beta1)
            || !(0.0..1.0).contains(&p.beta2)
            || p.epsilon.is_nan()
            || p.epsilon <= 0.0
        {
            return Err(Error::InvalidArgument(format!(
                "invalid ADAM parameters {p:?}"
            )));
        }
        Ok(())
    }
}

/// Empirical distribution over distinct bit vectors.
#[derive(Debug, Clone)]
pub struct EmpiricalDistribution {
    n: usize,
    entries: Vec<(BitVector, f64)>,
}

impl EmpiricalDistribution {
    pub fn from_vectors(vectors: &[BitVector]) -> Result<Self> {
        let first = vectors
            .first()
            .ok_or_else(|| Error::InvalidArgument("no vectors".into()))?;
        let n = first.len();
        let mut counts: BTreeMap<&BitVector, usize> = BTreeMap::new();
        for z in vectors {
            if z.len() != n {
                return Err(Error::LengthMismatch {
                    expected: n,
                    actual: z.len(),
                });
            }
            *counts.entry(z).or_default() += 1;
        }
        let total = vectors.len() as f64;
        Ok(Self {
            n,
            entries: counts
                .into_iter()
                .map(|(z, c)| (z.clone(), c as f64 / total))
                .collect(),
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn entries(&self) -> &[(BitVector, f64)] {
        &self.entries
    }

    /// Exact `KL(self ‖ P_Q) = Σ p ln p + Σ p E_Q(z) + ln Z_Q`.
    pub fn kl_to(&self, qubo: &Qubo) -> Result<f64> {
        if qubo.n() != self.n {
            return Err(Error::LengthMismatch {
                expected: self.n,
                actual: qubo.n(),
            });
        }
        let log_z = qubo.log_partition()?;
        let mut kl = log_z;
        for (z, p) in &self.entries {
            let ones: Vec<usize> = z.ones().collect();
            kl += p * (p.ln() + qubo.energy_of_ones(&ones));
        }
        Ok(kl)
    }
}

/// Loss proxies measured at `Q^t`, before its update.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub iteration: usize,
    pub grad_norm: f64,
    pub kl: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: QuboModel,
    pub history: Vec<LossRecord>,
    pub adam: AdamState,
    /// Exact KL of the returned model, when tracked.
    pub final_kl: Option<f64>,
}

impl TrainOutcome {
    /// CSV with columns `iteration,grad_norm,kl`; `kl` is blank when not tracked.
    pub fn loss_csv(&self) -> String {
        let mut out = String::from("iteration,grad_norm,kl\n");
        for r in &self.history {
            let kl = r.kl.map(|k| format!("{k:.12e}")).unwrap_or_default();
            out.push_str(&format!("{},{:.12e},{}\n", r.iteration, r.grad_norm, kl));
        }
        out
    }
}

/// Runs `config.iterations` rounds of sample → moments → gradient → ADAM.
pub fn train(
    corpus_bits: &[BitVector],
    scheme: &EncodingScheme,
    max_tokens: usize,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    let mut model = init_qubo(scheme, max_tokens, config.init_penalty)?;
    let n = model.n();
    if let Some(bad) = corpus_bits.iter().find(|z| z.len() != n) {
        return Err(Error::LengthMismatch {
            expected: n,
            actual: bad.len(),
        });
    }
    let data_moments = empirical_moments(corpus_bits)?;
    let data = EmpiricalDistribution::from_vectors(corpus_bits)?;
    let track_kl = n <= config.exact_kl_max_bits;
    let kl_of = |q: &Qubo| -> Result<Option<f64>> {
        if track_kl {
            data.kl_to(q).map(Some)
        } else {
            Ok(None)
        }
    };

    let mut seeds = seeded_rng(config.seed, 0);
    let mut adam = AdamState::new(n);
    let mut history = Vec::with_capacity(config.iterations);
    for iteration in 0..config.iterations {
        let sampler = GibbsSampler::new(&model.qubo);
        let batch = sampler.sample(config.samples_per_iter, &config.gibbs, seeds.next_u64());
        let model_moments = empirical_moments(&batch.vectors)?;
        let grad = kl_gradient_estimate(&model_moments, &data_moments)?;
        history.push(LossRecord {
            iteration,
            grad_norm: grad.max_abs(),
            kl: kl_of(&model.qubo)?,
        });
        adam_update(&mut model.qubo, &grad, &mut adam, &config.adam)?;
    }
    let final_kl = kl_of(&model.qubo)?;
    Ok(TrainOutcome {
        model,
        history,
        adam,
        final_kl,
    })
}

/// Resumable training snapshot.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub model: QuboModel,
    pub iteration: usize,
    pub adam: AdamState,
    pub config: TrainConfig,
    pub seed: u64,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bits(b: &[u8]) -> BitVector {
        BitVector::from_bits(b.iter().copied())
    }

    #[test]
    fn moments_examples() {
        let m = empirical_moments(&[bits(&[1, 1, 1])]).unwrap();
        assert!(m.as_dense().iter().all(|&v| v == 1.0));
        let m = empirical_moments(&[bits(&[0, 0]), bits(&[1, 1])]).unwrap();
        assert!(m.as_dense().iter().all(|&v| v == 0.5));
        assert!(empirical_moments(&[]).is_err());
        assert!(empirical_moments(&[bits(&[0]), bits(&[0, 1])]).is_err());
    }

    #[test]
    fn zero_gradient_at_matching_moments() {
        let m = empirical_moments(&[bits(&[0, 1, 1]), bits(&[1, 0, 1])]).unwrap();
        let g = kl_gradient_estimate(&m, &m).unwrap();
        assert_eq!(g.max_abs(), 0.0);
    }

    #[test]
    fn uniform_model_against_point_mass() {
        let model = Qubo::zeros(2)
            .exact_distribution()
            .unwrap()
            .second_moments();
        let model = SecondMomentMatrix::from_dense(2, model).unwrap();
        assert!((model.get(0, 0) - 0.5).abs() < 1e-15 && (model.get(0, 1) - 0.25).abs() < 1e-15);
        let data = empirical_moments(&[bits(&[0, 0])]).unwrap();
        let g = kl_gradient_estimate(&model, &data).unwrap();
        // Descent direction raises the energy of the unwanted ones.
        assert!((g.get(0, 0) + 0.5).abs() < 1e-15);
        assert!((g.get(1, 1) + 0.5).abs() < 1e-15);
        assert!((g.get(0, 1) + 0.25).abs() < 1e-15);
        assert_eq!(g.get(1, 0), 0.0);
    }

    #[test]
    fn adam_first_step_is_sign_of_gradient() {
        let params = AdamParams::default();
        let mut q = Qubo::zeros(3);
        let mut state = AdamState::new(3);
        adam_update(&mut q, &Qubo::zeros(3), &mut state, &params).unwrap();
        assert_eq!(q, Qubo::zeros(3));

        let mut grad = Qubo::zeros(3);
        grad.set(0, 0, 0.3);
        grad.set(0, 2, -2.0);
        grad.set(1, 2, 1e-3);
        let mut q = Qubo::zeros(3);
        let mut state = AdamState::new(3);
        adam_update(&mut q, &grad, &mut state, &params).unwrap();
        assert!((q.get(0, 0) + 0.01).abs() < 1e-9);
        assert!((q.get(0, 2) - 0.01).abs() < 1e-9);
        assert!((q.get(1, 2) + 0.01).abs() < 1e-7);
        assert_eq!(q.get(1, 1), 0.0);
        for i in 0..3 {
            for j in 0..i {
                assert_eq!(q.get(i, j), 0.0);
            }
        }
    }

    #[test]
    fn init_penalizes_one_hot_pairs_only() {
        let scheme = EncodingScheme::stacked(16, vec![2, 2, 2, 2]).unwrap();
        let model = init_qubo(&scheme, 3, 0.1).unwrap();
        let q = &model.qubo;
        assert_eq!(q.n(), 24);
        for i in 0..24 {
            for j in i..24 {
                let expected = if j == i + 1 && i % 2 == 0 { 0.1 } else { 0.0 };
                assert_eq!(q.get(i, j), expected, "({i},{j})");
            }
        }
        let binary = init_qubo(&EncodingScheme::binary(256).unwrap(), 6, 0.1).unwrap();
        assert_eq!(binary.qubo.max_abs(), 0.0);
        let zero = init_qubo(
            &EncodingScheme::from_name("stacked20", 256).unwrap(),
            6,
            0.0,
        )
        .unwrap();
        assert_eq!(zero.qubo.max_abs(), 0.0);
        assert!(init_qubo(&scheme, 3, -1.0).is_err());

        let wide = init_qubo(
            &EncodingScheme::from_name("stacked20", 256).unwrap(),
            1,
            0.1,
        )
        .unwrap();
        // Block (8) spans bits 4..12: 28 penalized pairs; blocks of 2 add one each.
        let nonzero = wide.qubo.as_dense().iter().filter(|&&v| v != 0.0).count();
        assert_eq!(nonzero, 1 + 1 + 28 + 28);
    }

    #[test]
    fn zero_iterations_returns_initial_model() {
        let scheme = EncodingScheme::stacked(4, vec![2, 2]).unwrap();
        let data = vec![bits(&[1, 0, 1, 0])];
        let config = TrainConfig {
            iterations: 0,
            ..TrainConfig::default()
        };
        let out = train(&data, &scheme, 1, &config).unwrap();
        assert_eq!(out.model, init_qubo(&scheme, 1, 0.1).unwrap());
        assert!(out.history.is_empty());
    }

    #[test]
    fn kl_matches_direct_sum() {
        let mut q = Qubo::zeros(3);
        q.set(0, 1, -1.0);
        q.set(2, 2, 0.7);
        let data = EmpiricalDistribution::from_vectors(&[
            bits(&[1, 1, 0]),
            bits(&[1, 1, 0]),
            bits(&[0, 0, 1]),
        ])
        .unwrap();
        let exact = q.exact_distribution().unwrap();
        let direct: f64 = data
            .entries()
            .iter()
            .map(|(z, p)| p * (p / exact.probability(z)).ln())
            .sum();
        assert!((data.kl_to(&q).unwrap() - direct).abs() < 1e-12);
    }

    #[test]
    fn training_is_deterministic_and_upper_triangular() {
        let scheme = EncodingScheme::stacked(4, vec![2, 2]).unwrap();
        let data = vec![
            bits(&[1, 0, 0, 1]),
            bits(&[0, 1, 1, 0]),
            bits(&[1, 0, 0, 1]),
        ];
        let config = TrainConfig {
            iterations: 30,
            samples_per_iter: 500,
            seed: 3,
            ..TrainConfig::default()
        };
        let a = train(&data, &scheme, 1, &config).unwrap();
        let b = train(&data, &scheme, 1, &config).unwrap();
        assert_eq!(a.model, b.model);
        assert_eq!(a.history.len(), 30);
        assert!(a.final_kl.unwrap() < a.history[0].kl.unwrap());
        let q = &a.model.qubo;
        for i in 0..4 {
            for j in 0..i {
                assert_eq!(q.get(i, j), 0.0);
            }
        }
        assert!(a.loss_csv().starts_with("iteration,grad_norm,kl\n0,"));
    }
}
