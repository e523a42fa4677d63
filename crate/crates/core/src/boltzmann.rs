//! QUBO instances and their Boltzmann distribution `P(z) ∝ exp(-zᵀQz)`.

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::encoding::{BitVector, EncodingScheme};
use crate::{seeded_rng, Error, Result};

/// Largest `n` accepted by exact enumeration.
pub const MAX_EXACT_BITS: usize = 24;

/// Upper-triangular `n × n` QUBO matrix, stored dense and row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Qubo {
    n: usize,
    q: Vec<f64>,
}

impl Qubo {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            q: vec![0.0; n * n],
        }
    }

    /// Builds from a dense row-major matrix. Entries below the diagonal must be zero.
    pub fn from_dense(n: usize, q: Vec<f64>) -> Result<Self> {
        if q.len() != n * n {
            return Err(Error::LengthMismatch {
                expected: n * n,
                actual: q.len(),
            });
        }
        let qubo = Self { n, q };
        qubo.validate()?;
        Ok(qubo)
    }

    /// Builds from rows of the upper triangle: row `i` holds `Q[i][i..n]`.
    pub fn from_upper_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let mut qubo = Self::zeros(n);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != n - i {
                return Err(Error::InvalidModel(format!(
                    "row {i} of the upper triangle has {} entries, expected {}",
                    row.len(),
                    n - i
                )));
            }
            qubo.q[i * n + i..(i + 1) * n].copy_from_slice(row);
        }
        qubo.validate()?;
        Ok(qubo)
    }

    pub fn upper_rows(&self) -> Vec<Vec<f64>> {
        (0..self.n)
            .map(|i| self.q[i * self.n + i..(i + 1) * self.n].to_vec())
            .collect()
    }

    fn validate(&self) -> Result<()> {
        for i in 0..self.n {
            for j in 0..self.n {
                let v = self.q[i * self.n + j];
                if !v.is_finite() {
                    return Err(Error::InvalidModel(format!(
                        "Q[{i}][{j}] = {v} is not finite"
                    )));
                }
                if j < i && v != 0.0 {
                    return Err(Error::InvalidModel(format!(
                        "Q[{i}][{j}] = {v} lies below the diagonal"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// `Q[i][j]`; zero below the diagonal.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.q[i * self.n + j]
    }

    /// Coefficient of `z_i z_j` regardless of argument order.
    pub fn coupling(&self, i: usize, j: usize) -> f64 {
        let (a, b) = if i <= j { (i, j) } else { (j, i) };
        self.q[a * self.n + b]
    }

    /// Sets `Q[i][j]`, `i <= j`.
    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        assert!(i <= j, "Q[{i}][{j}] is below the diagonal");
        self.q[i * self.n + j] = value;
    }

    pub fn as_dense(&self) -> &[f64] {
        &self.q
    }

    pub(crate) fn as_dense_mut(&mut self) -> &mut [f64] {
        &mut self.q
    }

    /// Largest absolute entry.
    pub fn max_abs(&self) -> f64 {
        self.q.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    fn check_len(&self, z: &BitVector) -> Result<()> {
        if z.len() != self.n {
            return Err(Error::LengthMismatch {
                expected: self.n,
                actual: z.len(),
            });
        }
        Ok(())
    }

    /// `zᵀQz = Σ_{i<=j} Q_ij z_i z_j`.
    pub fn energy(&self, z: &BitVector) -> Result<f64> {
        self.check_len(z)?;
        let ones: Vec<usize> = z.ones().collect();
        Ok(self.energy_of_ones(&ones))
    }

    /// Energy of the state whose set bits are `ones`, sorted ascending.
    pub(crate) fn energy_of_ones(&self, ones: &[usize]) -> f64 {
        let mut e = 0.0;
        for (a, &i) in ones.iter().enumerate() {
            let row = &self.q[i * self.n..(i + 1) * self.n];
            e += ones[a..].iter().map(|&j| row[j]).sum::<f64>();
        }
        e
    }

    /// `E(z | z_site = 1) - E(z | z_site = 0)`.
    pub fn energy_delta(&self, z: &BitVector, site: usize) -> Result<f64> {
        self.check_len(z)?;
        if site >= self.n {
            return Err(Error::InvalidArgument(format!(
                "site {site} outside 0..{}",
                self.n
            )));
        }
        let bits = z.as_slice();
        let mut delta = self.get(site, site);
        for (j, &b) in bits.iter().enumerate() {
            if b == 1 && j != site {
                delta += self.coupling(site, j);
            }
        }
        Ok(delta)
    }

    /// `P(z_site = 1 | rest)` under the Boltzmann distribution.
    pub fn conditional_probability(&self, z: &BitVector, site: usize) -> Result<f64> {
        Ok(sigmoid(-self.energy_delta(z, site)?))
    }

    /// Full Boltzmann table by enumeration; refuses `n > MAX_EXACT_BITS`.
    pub fn exact_distribution(&self) -> Result<ExactDistribution> {
        let energies = self.all_energies()?;
        let log_partition = log_sum_exp(energies.iter().map(|e| -e));
        let probs = energies
            .iter()
            .map(|e| (-e - log_partition).exp())
            .collect();
        Ok(ExactDistribution {
            n: self.n,
            probs,
            log_partition,
        })
    }

    /// `ln Z` by enumeration.
    pub fn log_partition(&self) -> Result<f64> {
        Ok(log_sum_exp(self.all_energies()?.iter().map(|e| -e)))
    }

    /// Energies of all `2^n` states; state `s` has `z_i = (s >> i) & 1`.
    /// Walks a Gray code so each step costs `O(n)`.
    fn all_energies(&self) -> Result<Vec<f64>> {
        if self.n > MAX_EXACT_BITS {
            return Err(Error::TooManyBits {
                n: self.n,
                limit: MAX_EXACT_BITS,
            });
        }
        let n = self.n;
        let couplings = symmetric_couplings(self);
        let size = 1usize << n;
        let mut energies = vec![0.0; size];
        let mut field = vec![0.0; n];
        let mut state = 0usize;
        let mut energy = 0.0;
        for step in 1..size {
            let bit = step.trailing_zeros() as usize;
            let row = &couplings[bit * n..(bit + 1) * n];
            if state >> bit & 1 == 0 {
                energy += self.q[bit * n + bit] + field[bit];
                field.iter_mut().zip(row).for_each(|(f, w)| *f += w);
            } else {
                field.iter_mut().zip(row).for_each(|(f, w)| *f -= w);
                energy -= self.q[bit * n + bit] + field[bit];
            }
            state ^= 1 << bit;
            energies[state] = energy;
        }
        Ok(energies)
    }
}

/// Symmetric coupling matrix `W` with `W_ij = W_ji = Q_ij` for `i < j` and zero diagonal.
fn symmetric_couplings(qubo: &Qubo) -> Vec<f64> {
    let n = qubo.n;
    let mut w = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let v = qubo.q[i * n + j];
            w[i * n + j] = v;
            w[j * n + i] = v;
        }
    }
    w
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Exact Boltzmann probabilities; index `s` encodes `z_i = (s >> i) & 1`.
#[derive(Debug, Clone)]
pub struct ExactDistribution {
    n: usize,
    probs: Vec<f64>,
    log_partition: f64,
}

impl ExactDistribution {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.probs
    }

    pub fn log_partition(&self) -> f64 {
        self.log_partition
    }

    pub fn state_index(z: &BitVector) -> usize {
        z.ones().fold(0, |s, i| s | 1 << i)
    }

    pub fn state(index: usize, n: usize) -> BitVector {
        BitVector::from_bits((0..n).map(|i| (index >> i & 1) as u8))
    }

    pub fn probability(&self, z: &BitVector) -> f64 {
        self.probs[Self::state_index(z)]
    }

    /// `E[z_i z_j]` as a dense symmetric matrix.
    pub fn second_moments(&self) -> Vec<f64> {
        let n = self.n;
        let mut m = vec![0.0; n * n];
        for (s, &p) in self.probs.iter().enumerate() {
            let ones: Vec<usize> = (0..n).filter(|i| s >> i & 1 == 1).collect();
            for &i in &ones {
                for &j in &ones {
                    m[i * n + j] += p;
                }
            }
        }
        m
    }

    /// `P(z_site = 1 | all other bits of z)`.
    pub fn conditional(&self, z: &BitVector, site: usize) -> f64 {
        let s = Self::state_index(z) & !(1 << site);
        let p0 = self.probs[s];
        let p1 = self.probs[s | 1 << site];
        p1 / (p0 + p1)
    }

    /// Total-variation distance to the empirical distribution of `samples`.
    pub fn total_variation(&self, samples: &[BitVector]) -> f64 {
        let mut counts = vec![0usize; self.probs.len()];
        for z in samples {
            counts[Self::state_index(z)] += 1;
        }
        let total = samples.len() as f64;
        0.5 * self
            .probs
            .iter()
            .zip(&counts)
            .map(|(p, &c)| (p - c as f64 / total).abs())
            .sum::<f64>()
    }
}

/// Burn-in and thinning in full sweeps, plus the number of independent chains.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GibbsConfig {
    pub burn_in: usize,
    pub thinning: usize,
    pub chains: usize,
}

impl Default for GibbsConfig {
    fn default() -> Self {
        Self {
            burn_in: 100,
            thinning: 10,
            chains: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleBatch {
    pub vectors: Vec<BitVector>,
    pub seed: u64,
    pub config: GibbsConfig,
}

/// Systematic-scan Gibbs sampler.
///
/// Each chain keeps the local fields `h_s = Σ_j W_sj z_j`, so a site update
/// costs `O(1)` unless the bit flips, in which case it costs `O(n)`.
pub struct GibbsSampler {
    n: usize,
    diag: Vec<f64>,
    couplings: Vec<f64>,
}

impl GibbsSampler {
    pub fn new(qubo: &Qubo) -> Self {
        Self {
            n: qubo.n,
            diag: (0..qubo.n).map(|i| qubo.get(i, i)).collect(),
            couplings: symmetric_couplings(qubo),
        }
    }

    fn sweep(&self, z: &mut [u8], field: &mut [f64], rng: &mut crate::Rng) {
        let n = self.n;
        for s in 0..n {
            let p_one = sigmoid(-(self.diag[s] + field[s]));
            let bit = u8::from(rng.gen::<f64>() < p_one);
            if bit != z[s] {
                z[s] = bit;
                let row = &self.couplings[s * n..(s + 1) * n];
                if bit == 1 {
                    field.iter_mut().zip(row).for_each(|(f, w)| *f += w);
                } else {
                    field.iter_mut().zip(row).for_each(|(f, w)| *f -= w);
                }
            }
        }
    }

    fn run_chain(
        &self,
        count: usize,
        config: &GibbsConfig,
        seed: u64,
        chain: u64,
    ) -> Vec<BitVector> {
        let n = self.n;
        let mut rng = seeded_rng(seed, chain);
        let mut z: Vec<u8> = (0..n).map(|_| u8::from(rng.gen::<bool>())).collect();
        let mut field = vec![0.0; n];
        for (s, _) in z.iter().enumerate().filter(|(_, &b)| b == 1) {
            for (t, f) in field.iter_mut().enumerate() {
                *f += self.couplings[s * n + t];
            }
        }
        for _ in 0..config.burn_in {
            self.sweep(&mut z, &mut field, &mut rng);
        }
        let mut out = Vec::with_capacity(count);
        for _ in 0..count {
            for _ in 0..config.thinning.max(1) {
                self.sweep(&mut z, &mut field, &mut rng);
            }
            out.push(BitVector::from_bits(z.iter().copied()));
        }
        out
    }

    /// Draws `count` vectors split over `config.chains` chains.
    ///
    /// Chain `c` uses stream `c` of `seed`; results are concatenated in chain
    /// order, so the batch does not depend on thread scheduling.
    pub fn sample(&self, count: usize, config: &GibbsConfig, seed: u64) -> SampleBatch {
        let chains = config.chains.max(1);
        let per_chain: Vec<usize> = (0..chains)
            .map(|c| count / chains + usize::from(c < count % chains))
            .collect();
        let vectors = per_chain
            .par_iter()
            .enumerate()
            .map(|(c, &k)| self.run_chain(k, config, seed, c as u64))
            .collect::<Vec<_>>()
            .into_iter()
            .flatten()
            .collect();
        SampleBatch {
            vectors,
            seed,
            config: *config,
        }
    }
}

/// Convenience wrapper around [`GibbsSampler::sample`].
pub fn gibbs_sample(qubo: &Qubo, count: usize, config: &GibbsConfig, seed: u64) -> SampleBatch {
    GibbsSampler::new(qubo).sample(count, config, seed)
}

/// A QUBO together with the password layout it models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ModelFile", into = "ModelFile")]
pub struct QuboModel {
    pub qubo: Qubo,
    pub scheme: EncodingScheme,
    pub max_tokens: usize,
}

/// Bit order of binary-encoded token blocks, recorded in every model file.
pub const BIT_ORDER: &str = "big-endian";

#[derive(Serialize, Deserialize)]
struct ModelFile {
    n: usize,
    #[serde(rename = "M")]
    max_tokens: usize,
    scheme: EncodingScheme,
    bit_order: String,
    #[serde(rename = "Q")]
    q: Vec<Vec<f64>>,
}

impl From<QuboModel> for ModelFile {
    fn from(m: QuboModel) -> Self {
        Self {
            n: m.qubo.n(),
            max_tokens: m.max_tokens,
            scheme: m.scheme,
            bit_order: BIT_ORDER.to_string(),
            q: m.qubo.upper_rows(),
        }
    }
}

impl TryFrom<ModelFile> for QuboModel {
    type Error = Error;

    fn try_from(f: ModelFile) -> Result<Self> {
        if f.bit_order != BIT_ORDER {
            return Err(Error::InvalidModel(format!(
                "unsupported bit order {:?}",
                f.bit_order
            )));
        }
        let qubo = Qubo::from_upper_rows(&f.q)?;
        Self::new(qubo, f.scheme, f.max_tokens).and_then(|m| {
            if m.qubo.n() == f.n {
                Ok(m)
            } else {
                Err(Error::InvalidModel(format!(
                    "n = {} but Q has {} rows",
                    f.n,
                    m.qubo.n()
                )))
            }
        })
    }
}

impl QuboModel {
    pub fn new(qubo: Qubo, scheme: EncodingScheme, max_tokens: usize) -> Result<Self> {
        let expected = scheme.bits() * max_tokens;
        if qubo.n() != expected {
            return Err(Error::InvalidModel(format!(
                "Q is {0}x{0} but M * k = {expected}",
                qubo.n()
            )));
        }
        Ok(Self {
            qubo,
            scheme,
            max_tokens,
        })
    }

    pub fn n(&self) -> usize {
        self.qubo.n()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bits(b: &[u8]) -> BitVector {
        BitVector::from_bits(b.iter().copied())
    }

    fn random_qubo(n: usize, scale: f64, seed: u64) -> Qubo {
        let mut rng = seeded_rng(seed, 99);
        let mut q = Qubo::zeros(n);
        for i in 0..n {
            for j in i..n {
                q.set(i, j, rng.gen_range(-scale..scale));
            }
        }
        q
    }

    #[test]
    fn energy_examples() {
        assert_eq!(Qubo::zeros(3).energy(&bits(&[1, 0, 1])).unwrap(), 0.0);
        let mut q = Qubo::zeros(2);
        q.set(0, 0, 1.0);
        q.set(1, 1, 1.0);
        assert_eq!(q.energy(&bits(&[1, 1])).unwrap(), 2.0);
        let mut q = Qubo::zeros(2);
        q.set(0, 1, 3.0);
        assert_eq!(q.energy(&bits(&[1, 1])).unwrap(), 3.0);
        assert!(q.energy(&bits(&[1])).is_err());
    }

    #[test]
    fn energy_matches_symmetrized_quadratic_form() {
        let q = random_qubo(7, 2.0, 1);
        let n = q.n();
        for s in 0..1usize << n {
            let z = ExactDistribution::state(s, n);
            let x = z.as_slice();
            let mut full = 0.0;
            for i in 0..n {
                for j in 0..n {
                    let sym = 0.5 * (q.get(i, j) + q.get(j, i));
                    full += sym * (x[i] * x[j]) as f64;
                }
            }
            assert!((full - q.energy(&z).unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_lower_triangle_and_nan() {
        assert!(Qubo::from_dense(2, vec![0.0, 0.0, 1.0, 0.0]).is_err());
        assert!(Qubo::from_dense(2, vec![f64::NAN, 0.0, 0.0, 0.0]).is_err());
        assert!(Qubo::from_upper_rows(&[vec![1.0, 2.0], vec![3.0]]).is_ok());
        assert!(Qubo::from_upper_rows(&[vec![1.0], vec![3.0]]).is_err());
    }

    #[test]
    fn uniform_at_zero_energy() {
        let dist = Qubo::zeros(2).exact_distribution().unwrap();
        for &p in dist.probabilities() {
            assert!((p - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn single_bit_closed_form() {
        let mut q = Qubo::zeros(1);
        q.set(0, 0, 2f64.ln());
        let dist = q.exact_distribution().unwrap();
        assert!((dist.probability(&bits(&[1])) - 1.0 / 3.0).abs() < 1e-12);
        assert!((dist.probability(&bits(&[0])) - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn diagonal_shift_lowers_marginals() {
        let base = random_qubo(4, 1.0, 5);
        let marginal = |c: f64| {
            let mut q = Qubo::zeros(4);
            for i in 0..4 {
                q.set(i, i, base.get(i, i) + c);
            }
            let m = q.exact_distribution().unwrap().second_moments();
            (0..4).map(|i| m[i * 4 + i]).collect::<Vec<_>>()
        };
        let (lo, hi) = (marginal(0.0), marginal(0.5));
        for i in 0..4 {
            assert!(hi[i] < lo[i]);
            // Product distribution: closed form σ(-Q_ii - c).
            assert!((hi[i] - sigmoid(-(base.get(i, i) + 0.5))).abs() < 1e-12);
        }
    }

    #[test]
    fn exact_distribution_normalized_and_positive() {
        let dist = random_qubo(10, 2.0, 3).exact_distribution().unwrap();
        let total: f64 = dist.probabilities().iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
        assert!(dist.probabilities().iter().all(|&p| p > 0.0));
    }

    #[test]
    fn gray_code_energies_match_direct_evaluation() {
        let q = random_qubo(9, 3.0, 8);
        let energies = q.all_energies().unwrap();
        for (s, e) in energies.iter().enumerate() {
            let direct = q.energy(&ExactDistribution::state(s, 9)).unwrap();
            assert!((e - direct).abs() < 1e-9, "state {s}");
        }
    }

    #[test]
    fn exact_guard() {
        let err = Qubo::zeros(25).exact_distribution().unwrap_err();
        assert!(matches!(err, Error::TooManyBits { n: 25, limit: 24 }));
    }

    #[test]
    fn conditional_matches_enumeration() {
        let q = random_qubo(8, 2.0, 11);
        let dist = q.exact_distribution().unwrap();
        let mut rng = seeded_rng(4, 0);
        for _ in 0..50 {
            let z = BitVector::from_bits((0..8).map(|_| rng.gen_range(0..2u8)));
            for site in 0..8 {
                let fast = q.conditional_probability(&z, site).unwrap();
                assert!((fast - dist.conditional(&z, site)).abs() < 1e-12);
            }
        }
        assert_eq!(
            Qubo::zeros(3)
                .conditional_probability(&bits(&[1, 0, 1]), 1)
                .unwrap(),
            0.5
        );
        let mut big = Qubo::zeros(1);
        big.set(0, 0, 50.0);
        assert!(big.conditional_probability(&bits(&[0]), 0).unwrap() < 1e-20);
    }

    #[test]
    fn gibbs_uniform_marginals() {
        let cfg = GibbsConfig {
            chains: 4,
            ..GibbsConfig::default()
        };
        let batch = gibbs_sample(&Qubo::zeros(5), 100_000, &cfg, 1);
        assert_eq!(batch.vectors.len(), 100_000);
        for i in 0..5 {
            let ones = batch
                .vectors
                .iter()
                .filter(|z| z.as_slice()[i] == 1)
                .count();
            let frac = ones as f64 / 1e5;
            assert!((0.49..=0.51).contains(&frac), "bit {i}: {frac}");
        }
    }

    #[test]
    fn gibbs_strong_penalty() {
        let mut q = Qubo::zeros(1);
        q.set(0, 0, 10.0);
        let batch = gibbs_sample(&q, 10_000, &GibbsConfig::default(), 2);
        let ones = batch
            .vectors
            .iter()
            .filter(|z| z.as_slice()[0] == 1)
            .count();
        assert!((ones as f64) / 1e4 < 0.001);
    }

    #[test]
    fn gibbs_deterministic() {
        let q = random_qubo(6, 1.0, 2);
        let cfg = GibbsConfig {
            burn_in: 10,
            thinning: 2,
            chains: 3,
        };
        assert_eq!(
            gibbs_sample(&q, 101, &cfg, 9),
            gibbs_sample(&q, 101, &cfg, 9)
        );
        assert_ne!(
            gibbs_sample(&q, 101, &cfg, 9).vectors,
            gibbs_sample(&q, 101, &cfg, 10).vectors
        );
        assert!(gibbs_sample(&q, 0, &cfg, 9).vectors.is_empty());
    }

    #[test]
    fn model_json_round_trip() {
        let scheme = EncodingScheme::stacked(4, vec![2, 2]).unwrap();
        let model = QuboModel::new(random_qubo(8, 1.0, 3), scheme, 2).unwrap();
        let json = serde_json::to_string(&model).unwrap();
        assert!(json.contains(r#""bit_order":"big-endian""#));
        let back: QuboModel = serde_json::from_str(&json).unwrap();
        assert_eq!(back, model);
        let wrong = QuboModel::new(Qubo::zeros(5), EncodingScheme::binary(4).unwrap(), 2);
        assert!(wrong.is_err());
    }
}
