//! Tanh-squashed diagonal Gaussian policy, value network, and checkpoint files.

use std::f64::consts::{LN_2, PI};
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;

use super::mlp::Mlp;
use crate::error::{Error, Result};

const CHECKPOINT_MAGIC: &[u8; 4] = b"SCRP";
pub const CHECKPOINT_VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    pub net: Mlp,
    /// State-independent log standard deviations, one per action dimension.
    pub log_std: Vec<f64>,
}

/// One stochastic action draw.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    /// Squashed action in `[-1, 1]`.
    pub action: Vec<f64>,
    /// Gaussian draw before the squash.
    pub pre_squash: Vec<f64>,
    pub log_prob: f64,
}

/// `log(1 − tanh²u)`, evaluated stably as `2(log 2 − u − softplus(−2u))`.
pub fn log_squash_jacobian(u: f64) -> f64 {
    let x = -2.0 * u;
    let softplus = if x > 0.0 { x + (-x).exp().ln_1p() } else { x.exp().ln_1p() };
    2.0 * (LN_2 - u - softplus)
}

/// Gaussian log-density of `u` without the squash correction.
pub fn gaussian_log_prob(u: &[f64], mean: &[f64], log_std: &[f64]) -> f64 {
    u.iter()
        .zip(mean)
        .zip(log_std)
        .map(|((&u, &m), &ls)| {
            let z = (u - m) * (-ls).exp();
            -0.5 * z * z - ls - 0.5 * (2.0 * PI).ln()
        })
        .sum()
}

/// Log-density of the squashed action `tanh(u)`.
pub fn squashed_log_prob(u: &[f64], mean: &[f64], log_std: &[f64]) -> f64 {
    gaussian_log_prob(u, mean, log_std) - u.iter().map(|&v| log_squash_jacobian(v)).sum::<f64>()
}

/// Differential entropy of the pre-squash Gaussian.
pub fn gaussian_entropy(log_std: &[f64]) -> f64 {
    log_std.iter().map(|ls| ls + 0.5 * (2.0 * PI * std::f64::consts::E).ln()).sum()
}

impl Policy {
    pub fn new(sizes: &[usize], init_log_std: f64, rng: &mut impl Rng) -> Self {
        let net = Mlp::new(sizes, 0.01, rng);
        let log_std = vec![init_log_std; net.output_dim()];
        Self { net, log_std }
    }

    pub fn obs_dim(&self) -> usize {
        self.net.input_dim()
    }

    pub fn act_dim(&self) -> usize {
        self.log_std.len()
    }

    pub fn mean(&self, obs: &[f64]) -> Vec<f64> {
        self.net.forward(obs)
    }

    /// Deterministic mode: the squashed mean.
    pub fn deterministic_action(&self, obs: &[f64]) -> Result<Vec<f64>> {
        let mean = self.mean(obs);
        if mean.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!("policy produced non-finite mean {mean:?}")));
        }
        Ok(mean.into_iter().map(f64::tanh).collect())
    }

    pub fn sample(&self, obs: &[f64], rng: &mut impl Rng) -> Result<Sample> {
        let mean = self.mean(obs);
        if mean.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!("policy produced non-finite mean {mean:?} for {obs:?}")));
        }
        let pre_squash: Vec<f64> = mean
            .iter()
            .zip(&self.log_std)
            .map(|(m, ls)| m + ls.exp() * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let log_prob = squashed_log_prob(&pre_squash, &mean, &self.log_std);
        let action = pre_squash.iter().map(|u| u.tanh()).collect();
        Ok(Sample { action, pre_squash, log_prob })
    }

    /// Checkpoint bytes: `SCRP`, version u16, layer count u32, per-layer
    /// `(rows, cols)` u32 pairs, row-major f64 weights, log-std values, then an
    /// FNV-1a 64-bit checksum over everything before it. All little-endian.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut b = Vec::new();
        b.extend_from_slice(CHECKPOINT_MAGIC);
        b.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        let shapes = self.net.layer_shapes();
        b.extend_from_slice(&(shapes.len() as u32).to_le_bytes());
        for &(r, c) in shapes {
            b.extend_from_slice(&(r as u32).to_le_bytes());
            b.extend_from_slice(&(c as u32).to_le_bytes());
        }
        for w in self.net.params() {
            b.extend_from_slice(&w.to_le_bytes());
        }
        for s in &self.log_std {
            b.extend_from_slice(&s.to_le_bytes());
        }
        let sum = fnv1a64(&b);
        b.extend_from_slice(&sum.to_le_bytes());
        b
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Format(format!("checkpoint: {m}"));
        if bytes.len() < 4 + 2 + 4 + 8 || &bytes[..4] != CHECKPOINT_MAGIC {
            return Err(bad("bad magic"));
        }
        let (payload, tail) = bytes.split_at(bytes.len() - 8);
        let stored = u64::from_le_bytes(tail.try_into().expect("8 bytes"));
        if stored != fnv1a64(payload) {
            return Err(bad("checksum mismatch"));
        }
        let mut r = Reader { buf: payload, pos: 4 };
        let version = u16::from_le_bytes(r.take::<2>()?);
        if version != CHECKPOINT_VERSION {
            return Err(bad(&format!("unsupported version {version}")));
        }
        let layers = u32::from_le_bytes(r.take::<4>()?) as usize;
        if layers == 0 || layers > 64 {
            return Err(bad("implausible layer count"));
        }
        let mut shapes = Vec::with_capacity(layers);
        for _ in 0..layers {
            let rows = u32::from_le_bytes(r.take::<4>()?) as usize;
            let cols = u32::from_le_bytes(r.take::<4>()?) as usize;
            shapes.push((rows, cols));
        }
        let n: usize = shapes.iter().map(|(a, b)| a * b).sum();
        let act_dim = shapes.last().expect("non-empty").0;
        if r.remaining() != 8 * (n + act_dim) {
            return Err(bad("payload length does not match layer shapes"));
        }
        let params = (0..n).map(|_| r.take::<8>().map(f64::from_le_bytes)).collect::<Result<Vec<_>>>()?;
        let log_std = (0..act_dim).map(|_| r.take::<8>().map(f64::from_le_bytes)).collect::<Result<Vec<_>>>()?;
        Ok(Self { net: Mlp::from_parts(shapes, params)?, log_std })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take<const N: usize>(&mut self) -> Result<[u8; N]> {
        let end = self.pos + N;
        let s = self.buf.get(self.pos..end).ok_or_else(|| Error::Format("checkpoint: truncated".into()))?;
        self.pos = end;
        Ok(s.try_into().expect("slice of length N"))
    }

    fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }
}

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// Policy plus state-value network, updated together by one optimizer.
#[derive(Debug, Clone, PartialEq)]
pub struct ActorCritic {
    pub policy: Policy,
    pub value: Mlp,
}

impl ActorCritic {
    pub fn new(obs_dim: usize, act_dim: usize, hidden: &[usize], init_log_std: f64, rng: &mut impl Rng) -> Self {
        let sizes = |out: usize| [&[obs_dim][..], hidden, &[out]].concat();
        let policy = Policy::new(&sizes(act_dim), init_log_std, rng);
        let value = Mlp::new(&sizes(1), 1.0, rng);
        Self { policy, value }
    }

    pub fn value_of(&self, obs: &[f64]) -> f64 {
        self.value.forward(obs)[0]
    }

    pub fn num_params(&self) -> usize {
        self.policy.net.num_params() + self.policy.log_std.len() + self.value.num_params()
    }

    /// Parameters in optimizer order: policy weights, log-std, value weights.
    pub fn flat_params(&self) -> Vec<f64> {
        [self.policy.net.params(), &self.policy.log_std, self.value.params()].concat()
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.num_params());
        let (a, rest) = flat.split_at(self.policy.net.num_params());
        let (b, c) = rest.split_at(self.policy.log_std.len());
        self.policy.net.params_mut().copy_from_slice(a);
        self.policy.log_std.copy_from_slice(b);
        self.value.params_mut().copy_from_slice(c);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded_rng;

    fn policy() -> Policy {
        let mut p = Policy::new(&[4, 8, 8, 3], -0.5, &mut seeded_rng(1));
        let mut rng = seeded_rng(2);
        for w in p.net.params_mut() {
            *w += rng.random_range(-0.3..0.3);
        }
        p
    }

    #[test]
    fn squash_jacobian_matches_direct_formula() {
        for u in [-3.0, -0.7, 0.0, 0.2, 1.5, 4.0] {
            let direct = (1.0 - f64::tanh(u).powi(2)).ln();
            assert!((log_squash_jacobian(u) - direct).abs() < 1e-12);
        }
        assert!(log_squash_jacobian(40.0).is_finite());
    }

    #[test]
    fn squashed_density_integrates_to_one() {
        // one dimension: change of variables a = tanh(u), integrate over a
        let (m, ls) = (0.3, -0.2);
        let n = 200_000;
        let mut total = 0.0;
        for i in 0..n {
            let a = -1.0 + (i as f64 + 0.5) * 2.0 / n as f64;
            let u = a.atanh();
            total += squashed_log_prob(&[u], &[m], &[ls]).exp() * 2.0 / n as f64;
        }
        assert!((total - 1.0).abs() < 1e-3, "{total}");
    }

    #[test]
    fn sampling_is_deterministic_and_collapses_without_noise() {
        let p = policy();
        let obs = [0.1, -0.2, 0.3, 0.4];
        let a = p.sample(&obs, &mut seeded_rng(7)).unwrap();
        let b = p.sample(&obs, &mut seeded_rng(7)).unwrap();
        assert_eq!(a, b);
        let mut tight = p.clone();
        tight.log_std = vec![-40.0; 3];
        let s = tight.sample(&obs, &mut seeded_rng(8)).unwrap();
        let det = tight.deterministic_action(&obs).unwrap();
        for (x, y) in s.action.iter().zip(&det) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn monte_carlo_mean_of_pre_squash_samples() {
        let p = policy();
        let obs = [0.5, 0.1, -0.4, 0.2];
        let mean = p.mean(&obs);
        let n = 100_000;
        let mut rng = seeded_rng(11);
        let mut acc = [0.0; 3];
        for _ in 0..n {
            let s = p.sample(&obs, &mut rng).unwrap();
            for j in 0..3 {
                acc[j] += s.pre_squash[j];
            }
        }
        for j in 0..3 {
            let sigma = p.log_std[j].exp();
            assert!((acc[j] / n as f64 - mean[j]).abs() < 3.0 * sigma / (n as f64).sqrt());
        }
    }

    #[test]
    fn checkpoint_round_trip_and_corruption() {
        let p = policy();
        let bytes = p.to_bytes();
        assert_eq!(&bytes[..4], b"SCRP");
        assert_eq!(u16::from_le_bytes([bytes[4], bytes[5]]), CHECKPOINT_VERSION);
        assert_eq!(bytes.len(), 4 + 2 + 4 + 3 * 8 + 8 * (p.net.num_params() + 3) + 8);
        let back = Policy::from_bytes(&bytes).unwrap();
        assert_eq!(back, p);
        let obs = [0.2, 0.2, -0.1, 0.0];
        assert_eq!(back.deterministic_action(&obs).unwrap(), p.deterministic_action(&obs).unwrap());
        let mut bad = bytes.clone();
        bad[20] ^= 1;
        assert!(Policy::from_bytes(&bad).is_err());
        assert!(Policy::from_bytes(&bytes[..bytes.len() - 1]).is_err());
    }

    #[test]
    fn flat_params_round_trip() {
        let mut ac = ActorCritic::new(3, 2, &[5], 0.0, &mut seeded_rng(4));
        let mut flat = ac.flat_params();
        assert_eq!(flat.len(), ac.num_params());
        flat.iter_mut().for_each(|v| *v += 1.0);
        ac.set_flat_params(&flat);
        assert_eq!(ac.flat_params(), flat);
    }

    #[test]
    fn fnv_reference_values() {
        assert_eq!(fnv1a64(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a64(b"a"), 0xaf63dc4c8601ec8c);
    }
}
