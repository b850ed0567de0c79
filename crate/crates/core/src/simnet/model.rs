use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::SimError;

/// Simulator cost parameters, in abstract time units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostModel {
    /// Per-message latency.
    pub alpha: f64,
    /// Per-byte wire time.
    pub beta: f64,
    /// Per posted-receive entry scanned when a message arrives.
    pub gamma: f64,
    /// A rank's NIC puts one message on the wire at a time.
    pub inject_serialize: bool,
    /// A rank's NIC takes one message off the wire at a time.
    pub recv_serialize: bool,
    /// Local time burned by each unsuccessful `test_any`.
    pub poll_cost: f64,
    /// Per-byte cost of a message a rank sends to itself.
    pub local_copy_cost: f64,
}

impl CostModel {
    /// All costs zero, no serialization.
    pub const fn zero() -> Self {
        CostModel {
            alpha: 0.0,
            beta: 0.0,
            gamma: 0.0,
            inject_serialize: false,
            recv_serialize: false,
            poll_cost: 0.0,
            local_copy_cost: 0.0,
        }
    }

    /// Shipped default: alpha 1000, beta 1, gamma 10, poll 50, copy 0.1.
    pub const fn preset() -> Self {
        CostModel {
            alpha: 1000.0,
            beta: 1.0,
            gamma: 10.0,
            inject_serialize: true,
            recv_serialize: false,
            poll_cost: 50.0,
            local_copy_cost: 0.1,
        }
    }

    /// Search cost of scanning `scanned` posted receives.
    pub fn match_cost(&self, scanned: usize) -> f64 {
        self.gamma * scanned as f64
    }

    pub fn validate(&self) -> Result<(), SimError> {
        for (name, v) in [
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("gamma", self.gamma),
            ("poll_cost", self.poll_cost),
            ("local_copy_cost", self.local_copy_cost),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(SimError::BadCost { name, value: v });
            }
        }
        Ok(())
    }
}

impl Default for CostModel {
    fn default() -> Self {
        Self::preset()
    }
}

/// Per-rank start delays modeling load imbalance before the exchange.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum SkewProfile {
    #[default]
    None,
    /// Explicit offset per rank.
    Explicit(Vec<f64>),
    /// One rank, chosen by the seed, starts `delay` late.
    OneSlow { delay: f64 },
    /// Every rank starts at a uniform offset in `[0, max)`.
    Uniform { max: f64 },
}

impl SkewProfile {
    /// Resolves the profile to concrete offsets for `n` ranks.
    pub fn offsets(&self, n: usize, seed: u64) -> Result<Vec<f64>, SimError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let offsets = match self {
            SkewProfile::None => vec![0.0; n],
            SkewProfile::Explicit(v) => {
                if v.len() != n {
                    return Err(SimError::SkewLength { expected: n, got: v.len() });
                }
                v.clone()
            }
            SkewProfile::OneSlow { delay } => {
                let mut v = vec![0.0; n];
                v[rng.gen_range(0..n)] = *delay;
                v
            }
            SkewProfile::Uniform { max } => (0..n)
                .map(|_| if *max > 0.0 { rng.gen_range(0.0..*max) } else { 0.0 })
                .collect(),
        };
        if let Some(&bad) = offsets.iter().find(|o| !(o.is_finite() && **o >= 0.0)) {
            return Err(SimError::BadCost {
                name: "skew offset",
                value: bad,
            });
        }
        Ok(offsets)
    }

    /// Rank delayed by a [`SkewProfile::OneSlow`] profile under `seed`.
    pub fn slow_rank(n: usize, seed: u64) -> usize {
        ChaCha8Rng::seed_from_u64(seed).gen_range(0..n)
    }
}
