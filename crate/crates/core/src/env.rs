//! Reproducible lazily-evaluated random fields.
//!
//! Every weight is a pure function of (seed, site-or-edge, channel): the value
//! is drawn from a ChaCha stream keyed by those coordinates, so repeated
//! queries agree bit-exactly and a box can be extended without perturbing
//! existing values. Shape parameters are part of the key, which makes
//! environments with different boundary rho but equal seed share identical
//! bulk weights.

use crate::lattice::{LatticePoint, E1, E2};
use crate::{Error, Result};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Independent sub-streams of one seed. The channel index becomes the ChaCha
/// stream number, so channels at the same site never overlap.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Channel {
    Bulk = 0,
    SwHorizontal = 1,
    SwVertical = 2,
    NeHorizontal = 3,
    NeVertical = 4,
    DiaHorizontal = 5,
    DiaVertical = 6,
    Theta = 7,
}

/// Keyed counter stream for one (seed, site, channel, shape) tuple.
pub fn site_stream(seed: u64, p: LatticePoint, channel: Channel, param_bits: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[0..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&p.x.to_le_bytes());
    key[16..24].copy_from_slice(&p.y.to_le_bytes());
    key[24..32].copy_from_slice(&param_bits.to_le_bytes());
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(channel as u64);
    rng
}

/// SplitMix64 finalizer; used to derive independent replica seeds.
pub fn mix_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// One Ga(shape) draw from the given stream (Marsaglia-Tsang, with the
/// boosting exponent for shape < 1).
pub fn sample_gamma<R: RngCore>(shape: f64, stream: &mut R) -> Result<f64> {
    if !(shape > 0.0) {
        return Err(Error::domain(format!("gamma shape must be positive, got {shape}")));
    }
    let dist = rand_distr::Gamma::new(shape, 1.0)
        .map_err(|e| Error::domain(format!("gamma sampler: {e}")))?;
    Ok(rand_distr::Distribution::sample(&dist, stream))
}

/// Boundary declaration of an environment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BoundarySpec {
    None,
    Southwest {
        rho: f64,
        #[serde(with = "point_array")]
        anchor: LatticePoint,
    },
    Northeast {
        rho: f64,
        #[serde(with = "point_array")]
        anchor: LatticePoint,
    },
    Antidiagonal {
        rho: f64,
        #[serde(with = "point_array")]
        anchor: LatticePoint,
    },
}

mod point_array {
    use super::LatticePoint;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(p: &LatticePoint, s: S) -> Result<S::Ok, S::Error> {
        [p.x, p.y].serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<LatticePoint, D::Error> {
        let [x, y] = <[i64; 2]>::deserialize(d)?;
        Ok(LatticePoint::new(x, y))
    }
}

impl BoundarySpec {
    pub fn rho(&self) -> Option<f64> {
        match *self {
            BoundarySpec::None => None,
            BoundarySpec::Southwest { rho, .. }
            | BoundarySpec::Northeast { rho, .. }
            | BoundarySpec::Antidiagonal { rho, .. } => Some(rho),
        }
    }

    pub fn anchor(&self) -> Option<LatticePoint> {
        match *self {
            BoundarySpec::None => None,
            BoundarySpec::Southwest { anchor, .. }
            | BoundarySpec::Northeast { anchor, .. }
            | BoundarySpec::Antidiagonal { anchor, .. } => Some(anchor),
        }
    }
}

/// A reproducible random environment: bulk inverse-gamma weights, optional
/// stationary boundary weights, and the coupling uniforms theta_z.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvironmentSpec {
    pub mu: f64,
    pub seed: u64,
    pub boundary: BoundarySpec,
}

impl EnvironmentSpec {
    pub fn new(mu: f64, seed: u64, boundary: BoundarySpec) -> Result<Self> {
        if !(mu > 0.0) {
            return Err(Error::domain(format!("mu must be positive, got {mu}")));
        }
        if let Some(rho) = boundary.rho() {
            if !(rho > 0.0 && rho < mu) {
                return Err(Error::domain(format!(
                    "boundary rho must satisfy 0 < rho < mu, got rho={rho}, mu={mu}"
                )));
            }
        }
        Ok(Self { mu, seed, boundary })
    }

    pub fn bulk(mu: f64, seed: u64) -> Result<Self> {
        Self::new(mu, seed, BoundarySpec::None)
    }

    /// True when `z` belongs to the declared boundary vertex set.
    pub fn on_boundary(&self, z: LatticePoint) -> bool {
        match self.boundary {
            BoundarySpec::None => false,
            BoundarySpec::Southwest { anchor, .. } => {
                (z.x == anchor.x && z.y >= anchor.y) || (z.y == anchor.y && z.x >= anchor.x)
            }
            BoundarySpec::Northeast { anchor, .. } => {
                (z.x == anchor.x && z.y <= anchor.y) || (z.y == anchor.y && z.x <= anchor.x)
            }
            BoundarySpec::Antidiagonal { anchor, .. } => {
                let s = (z.x - anchor.x) + (z.y - anchor.y);
                s == 0 || s == -1
            }
        }
    }

    /// Bulk weight Y_z ~ Ga^{-1}(mu); usage error on declared boundary sites.
    pub fn bulk_weight(&self, z: LatticePoint) -> Result<f64> {
        if self.on_boundary(z) {
            return Err(Error::usage(format!(
                "site {z} is on the declared boundary; query it through boundary_weight"
            )));
        }
        self.raw_bulk_weight(z)
    }

    /// Bulk weight without the boundary check (for environments whose bulk is
    /// shared with a differently-bounded sibling).
    pub fn raw_bulk_weight(&self, z: LatticePoint) -> Result<f64> {
        let mut rng = site_stream(self.seed, z, Channel::Bulk, self.mu.to_bits());
        Ok(1.0 / sample_gamma(self.mu, &mut rng)?)
    }

    pub fn log_bulk_weight(&self, z: LatticePoint) -> Result<f64> {
        Ok(self.bulk_weight(z)?.ln())
    }

    /// Boundary edge weight for the ordered adjacent pair (from, to).
    pub fn boundary_weight(&self, from: LatticePoint, to: LatticePoint) -> Result<f64> {
        let step = to - from;
        let horizontal = step == E1;
        if !horizontal && step != E2 {
            return Err(Error::usage(format!(
                "boundary edge must step by e1 or e2, got {from} -> {to}"
            )));
        }
        match self.boundary {
            BoundarySpec::None => Err(Error::usage("environment declares no boundary")),
            BoundarySpec::Southwest { rho, anchor } => {
                if horizontal {
                    if !(from.y == anchor.y && from.x >= anchor.x) {
                        return Err(Error::usage(format!(
                            "edge {from}->{to} not on the southwest e1-axis"
                        )));
                    }
                    let mut rng =
                        site_stream(self.seed, to, Channel::SwHorizontal, (self.mu - rho).to_bits());
                    Ok(1.0 / sample_gamma(self.mu - rho, &mut rng)?)
                } else {
                    if !(from.x == anchor.x && from.y >= anchor.y) {
                        return Err(Error::usage(format!(
                            "edge {from}->{to} not on the southwest e2-axis"
                        )));
                    }
                    let mut rng = site_stream(self.seed, to, Channel::SwVertical, rho.to_bits());
                    Ok(1.0 / sample_gamma(rho, &mut rng)?)
                }
            }
            BoundarySpec::Northeast { rho, anchor } => {
                if horizontal {
                    if !(from.y == anchor.y && to.x <= anchor.x) {
                        return Err(Error::usage(format!(
                            "edge {from}->{to} not on the northeast horizontal boundary"
                        )));
                    }
                    let mut rng =
                        site_stream(self.seed, from, Channel::NeHorizontal, (self.mu - rho).to_bits());
                    Ok(1.0 / sample_gamma(self.mu - rho, &mut rng)?)
                } else {
                    if !(from.x == anchor.x && to.y <= anchor.y) {
                        return Err(Error::usage(format!(
                            "edge {from}->{to} not on the northeast vertical boundary"
                        )));
                    }
                    let mut rng = site_stream(self.seed, from, Channel::NeVertical, rho.to_bits());
                    Ok(1.0 / sample_gamma(rho, &mut rng)?)
                }
            }
            BoundarySpec::Antidiagonal { rho, anchor } => {
                // Every staircase edge is identified by its lower-left
                // endpoint l = anchor + (k, -k-1). Edges with k >= 0 lie to
                // the right of the anchor and carry inverse weights on the
                // horizontal side, direct weights on the vertical side; the
                // left side swaps the two.
                let l = from;
                let rel = l - anchor;
                if rel.x + rel.y != -1 {
                    return Err(Error::usage(format!(
                        "edge {from}->{to} is not a staircase edge of the antidiagonal boundary"
                    )));
                }
                let k = rel.x;
                let right_side = k >= 0;
                if horizontal {
                    let shape = self.mu - rho;
                    let mut rng = site_stream(self.seed, l, Channel::DiaHorizontal, shape.to_bits());
                    let g = sample_gamma(shape, &mut rng)?;
                    Ok(if right_side { 1.0 / g } else { g })
                } else {
                    let mut rng = site_stream(self.seed, l, Channel::DiaVertical, rho.to_bits());
                    let g = sample_gamma(rho, &mut rng)?;
                    Ok(if right_side { g } else { 1.0 / g })
                }
            }
        }
    }

    /// The coupling uniform theta_z in [0, 1).
    pub fn uniform_theta(&self, z: LatticePoint) -> f64 {
        uniform_theta_seeded(self.seed, z)
    }
}

/// Theta draw keyed off an explicit seed (used for theta-replication with
/// fixed weights).
pub fn uniform_theta_seeded(seed: u64, z: LatticePoint) -> f64 {
    let mut rng = site_stream(seed, z, Channel::Theta, 0);
    rng.gen::<f64>()
}
