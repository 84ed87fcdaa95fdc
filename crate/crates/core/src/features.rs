//! State encoders for linear function approximation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// What an environment exposes: a tabular index, a continuous point, or both.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub state: Option<usize>,
    pub point: Vec<f64>,
}

impl Observation {
    pub fn tabular(s: usize) -> Self {
        Self { state: Some(s), point: Vec::new() }
    }

    pub fn continuous(point: Vec<f64>) -> Self {
        Self { state: None, point }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Offsets {
    /// Tiling k is displaced by k / n_tilings of a tile width in every dimension.
    Even,
    /// Uniform in [0, tile width) per tiling and dimension.
    Random { seed: u64 },
    /// Explicit displacements as fractions of a tile width, one row per tiling.
    Explicit(Vec<Vec<f64>>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TileCoder {
    pub bounds: Vec<(f64, f64)>,
    pub tiles_per_dim: usize,
    pub n_tilings: usize,
    pub offsets: Vec<Vec<f64>>,
}

impl TileCoder {
    pub fn new(bounds: Vec<(f64, f64)>, tiles_per_dim: usize, n_tilings: usize, offsets: Offsets) -> Result<Self> {
        if bounds.is_empty() || tiles_per_dim == 0 || n_tilings == 0 {
            return Err(Error::Config("tile coding needs bounds, tiles and tilings".into()));
        }
        if bounds.iter().any(|(lo, hi)| !(hi > lo)) {
            return Err(Error::Config(format!("empty interval in {bounds:?}")));
        }
        let dims = bounds.len();
        let offsets = match offsets {
            Offsets::Even => (0..n_tilings).map(|k| vec![k as f64 / n_tilings as f64; dims]).collect(),
            Offsets::Random { seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                (0..n_tilings).map(|_| (0..dims).map(|_| rng.gen::<f64>()).collect()).collect()
            }
            Offsets::Explicit(rows) => {
                if rows.len() != n_tilings || rows.iter().any(|r| r.len() != dims) {
                    return Err(Error::Config("explicit offsets must be n_tilings x dims".into()));
                }
                rows
            }
        };
        Ok(Self { bounds, tiles_per_dim, n_tilings, offsets })
    }

    pub fn tiles_per_tiling(&self) -> usize {
        self.tiles_per_dim.pow(self.bounds.len() as u32)
    }

    pub fn dimension(&self) -> usize {
        self.n_tilings * self.tiles_per_tiling()
    }

    /// Index of the active tile in each tiling.
    pub fn active(&self, point: &[f64]) -> Vec<usize> {
        let per = self.tiles_per_tiling();
        (0..self.n_tilings)
            .map(|k| {
                let mut idx = 0;
                for (i, &(lo, hi)) in self.bounds.iter().enumerate() {
                    let width = (hi - lo) / self.tiles_per_dim as f64;
                    let u = (point[i] - lo) / width + self.offsets[k][i];
                    let c = (u.floor().max(0.0) as usize).min(self.tiles_per_dim - 1);
                    idx = idx * self.tiles_per_dim + c;
                }
                k * per + idx
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FeatureMap {
    OneHot { n: usize },
    TileCoding(TileCoder),
}

impl FeatureMap {
    pub fn onehot(n_states: usize) -> Result<Self> {
        if n_states == 0 {
            return Err(Error::Config("one-hot encoding needs at least one state".into()));
        }
        Ok(FeatureMap::OneHot { n: n_states })
    }

    pub fn tile_coding(
        bounds: Vec<(f64, f64)>,
        tiles_per_dim: usize,
        n_tilings: usize,
        offsets: Offsets,
    ) -> Result<Self> {
        Ok(FeatureMap::TileCoding(TileCoder::new(bounds, tiles_per_dim, n_tilings, offsets)?))
    }

    pub fn dimension(&self) -> usize {
        match self {
            FeatureMap::OneHot { n } => *n,
            FeatureMap::TileCoding(t) => t.dimension(),
        }
    }

    /// Sizes of the consecutive index blocks that hold exactly one active feature each.
    pub fn blocks(&self) -> Vec<usize> {
        match self {
            FeatureMap::OneHot { n } => vec![*n],
            FeatureMap::TileCoding(t) => vec![t.tiles_per_tiling(); t.n_tilings],
        }
    }

    pub fn active(&self, obs: &Observation) -> Result<Vec<usize>> {
        match self {
            FeatureMap::OneHot { n } => {
                let s = obs.state.ok_or_else(|| Error::Config("one-hot needs a tabular state".into()))?;
                if s >= *n {
                    return Err(Error::StateOutOfRange { state: s, n: *n });
                }
                Ok(vec![s])
            }
            FeatureMap::TileCoding(t) => {
                if obs.point.len() != t.bounds.len() {
                    return Err(Error::ShapeMismatch { expected: t.bounds.len(), got: obs.point.len() });
                }
                Ok(t.active(&obs.point))
            }
        }
    }

    pub fn encode(&self, obs: &Observation) -> Result<Vec<f64>> {
        let mut x = vec![0.0; self.dimension()];
        for i in self.active(obs)? {
            x[i] = 1.0;
        }
        Ok(x)
    }

    pub fn encode_state(&self, s: usize) -> Result<Vec<f64>> {
        self.encode(&Observation::tabular(s))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn onehot_examples() {
        let f = FeatureMap::onehot(3).unwrap();
        assert_eq!(f.encode_state(1).unwrap(), vec![0.0, 1.0, 0.0]);
        assert!(matches!(f.encode_state(3), Err(Error::StateOutOfRange { state: 3, n: 3 })));
        assert!(FeatureMap::onehot(0).is_err());
    }

    #[test]
    fn sixty_four_features() {
        let f = FeatureMap::tile_coding(vec![(0.0, 1.0), (0.0, 1.0)], 4, 4, Offsets::Even).unwrap();
        assert_eq!(f.dimension(), 64);
        for p in [[0.0, 0.0], [0.3, 0.9], [0.999, 0.5], [2.0, -3.0]] {
            let x = f.encode(&Observation::continuous(p.to_vec())).unwrap();
            assert_eq!(x.iter().sum::<f64>(), 4.0);
        }
    }

    #[test]
    fn single_tile_is_bias() {
        let f = FeatureMap::tile_coding(vec![(-1.0, 1.0)], 1, 1, Offsets::Explicit(vec![vec![0.0]])).unwrap();
        for p in [-5.0, -0.2, 0.9, 10.0] {
            assert_eq!(f.encode(&Observation::continuous(vec![p])).unwrap(), vec![1.0]);
        }
    }

    #[test]
    fn random_offsets_are_seeded() {
        let a = TileCoder::new(vec![(0.0, 1.0)], 4, 3, Offsets::Random { seed: 9 }).unwrap();
        let b = TileCoder::new(vec![(0.0, 1.0)], 4, 3, Offsets::Random { seed: 9 }).unwrap();
        assert_eq!(a, b);
        assert!(a.offsets.iter().flatten().all(|&o| (0.0..1.0).contains(&o)));
    }

    #[test]
    fn serde_round_trip() {
        let f = FeatureMap::tile_coding(vec![(0.0, 4.0), (0.0, 4.0)], 4, 4, Offsets::Even).unwrap();
        let text = serde_json::to_string(&f).unwrap();
        assert_eq!(serde_json::from_str::<FeatureMap>(&text).unwrap(), f);
    }
}
