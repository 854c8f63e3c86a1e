use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::forward::WeightMap;
use crate::graph::{NetworkGraph, NodeId};

/// Which hidden units survive one update. Input and output units are always
/// retained.
#[derive(Debug, Clone, PartialEq)]
pub struct DropoutMask {
    retained: Vec<bool>,
    retain_probability: f64,
}

pub(crate) fn check_probability(p: f64) -> Result<()> {
    if p > 0.0 && p <= 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidParams(format!("retain probability must be in (0, 1], got {p}")))
    }
}

impl DropoutMask {
    pub fn all(g: &NetworkGraph) -> Self {
        Self {
            retained: vec![true; g.num_nodes()],
            retain_probability: 1.0,
        }
    }

    pub fn sample<R: Rng + ?Sized>(g: &NetworkGraph, retain_probability: f64, rng: &mut R) -> Result<Self> {
        check_probability(retain_probability)?;
        let mut retained = vec![true; g.num_nodes()];
        if retain_probability < 1.0 {
            for v in g.hidden_nodes() {
                retained[v] = rng.random::<f64>() < retain_probability;
            }
        }
        Ok(Self {
            retained,
            retain_probability,
        })
    }

    pub fn is_retained(&self, v: NodeId) -> bool {
        self.retained[v]
    }

    pub fn retain_probability(&self) -> f64 {
        self.retain_probability
    }

    pub fn retained_hidden(&self, g: &NetworkGraph) -> usize {
        g.hidden_nodes().filter(|&v| self.retained[v]).count()
    }

    /// Zeroes the activations of dropped units.
    pub fn apply_to_activations(&self, post: &mut [f64]) {
        for (a, &keep) in post.iter_mut().zip(&self.retained) {
            if !keep {
                *a = 0.0;
            }
        }
    }

    /// Zeroes the gradient of every edge touching a dropped unit.
    pub fn apply_to_gradient(&self, g: &NetworkGraph, grad: &mut WeightMap) {
        for (e, edge) in g.edges().iter().enumerate() {
            if !self.retained[edge.source] || !self.retained[edge.target] {
                grad[e] = 0.0;
            }
        }
    }
}

pub fn sample_dropout(g: &NetworkGraph, retain_probability: f64, seed: u64) -> Result<DropoutMask> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    DropoutMask::sample(g, retain_probability, &mut rng)
}
