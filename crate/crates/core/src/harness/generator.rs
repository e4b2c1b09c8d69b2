use ndarray::{s, Array1, Array3, Array4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::allocator::{DualConfig, Planning, RunConfig};
use crate::confidence::LogArgument;
use crate::error::{Error, Result};
use crate::mdp::{EpisodeFunctions, MdpShape, TransitionKernel};

const KERNEL_STREAM: u64 = 1;
const EPISODE_STREAM: u64 = 2;

/// Random instance family: Dirichlet kernel rows and independent uniform
/// reward and consumption cells, null-action column zeroed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorConfig {
    pub states: usize,
    pub actions: usize,
    pub horizon: usize,
    pub star_action: usize,
    /// Symmetric Dirichlet concentration for kernel rows and the initial
    /// distribution.
    pub alpha: f64,
    pub rho: f64,
    pub delta: f64,
    pub episodes: usize,
    pub dual: DualConfig,
    pub planning: Planning,
    pub log_argument: LogArgument,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            states: 3,
            actions: 3,
            horizon: 4,
            star_action: 0,
            alpha: 1.0,
            rho: 0.5,
            delta: 0.1,
            episodes: 200,
            dual: DualConfig::default(),
            planning: Planning::default(),
            log_argument: LogArgument::default(),
        }
    }
}

impl GeneratorConfig {
    pub fn shape(&self) -> Result<MdpShape> {
        MdpShape::new(self.states, self.actions, self.horizon, self.star_action)
    }

    pub fn validate(&self) -> Result<()> {
        self.shape()?;
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::InvalidArgument(format!("Dirichlet concentration must be positive, got {}", self.alpha)));
        }
        self.run_config(0).validate()
    }

    /// Allocator settings for one run; the run draws from its own seed stream.
    pub fn run_config(&self, seed: u64) -> RunConfig {
        RunConfig {
            rho: self.rho,
            delta: self.delta,
            episodes: self.episodes,
            dual: self.dual,
            planning: self.planning,
            log_argument: self.log_argument,
            seed,
        }
    }
}

fn dirichlet_row<R: Rng>(rng: &mut R, gamma: &Gamma<f64>, n: usize) -> Array1<f64> {
    let mut row: Array1<f64> = (0..n).map(|_| gamma.sample(rng)).collect();
    let total = row.sum();
    if total > 0.0 && total.is_finite() {
        row /= total;
    } else {
        // every draw underflowed: the limit of a vanishing concentration
        row.fill(0.0);
        row[rng.random_range(0..n)] = 1.0;
    }
    row
}

/// Samples the kernel and initial distribution for `seed`.
pub fn generate_kernel(cfg: &GeneratorConfig, seed: u64) -> Result<TransitionKernel> {
    cfg.validate()?;
    let shape = cfg.shape()?;
    let gamma = Gamma::new(cfg.alpha, 1.0).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(KERNEL_STREAM);
    let init = dirichlet_row(&mut rng, &gamma, shape.states);
    let mut trans = Array4::zeros(shape.transition_dims());
    let (hn, sn, an, _) = shape.transition_dims();
    for h in 0..hn {
        for st in 0..sn {
            for a in 0..an {
                let row = dirichlet_row(&mut rng, &gamma, sn);
                trans.slice_mut(s![h, st, a, ..]).assign(&row);
            }
        }
    }
    TransitionKernel::with_tolerance(shape, trans, init, 1e-9)
}

/// Lazy stream of i.i.d. episode functions for `seed`. Every prefix is
/// independent of how many episodes are eventually drawn.
#[derive(Clone, Debug)]
pub struct EpisodeStream {
    shape: MdpShape,
    rng: ChaCha8Rng,
}

impl EpisodeStream {
    pub fn new(shape: MdpShape, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(EPISODE_STREAM);
        Self { shape, rng }
    }
}

impl Iterator for EpisodeStream {
    type Item = EpisodeFunctions;

    fn next(&mut self) -> Option<EpisodeFunctions> {
        let dims = self.shape.stage_dims();
        let mut reward = Array3::from_shape_simple_fn(dims, || self.rng.random::<f64>());
        let mut consumption = Array3::from_shape_simple_fn(dims, || self.rng.random::<f64>());
        reward.slice_mut(s![.., .., self.shape.star_action]).fill(0.0);
        consumption.slice_mut(s![.., .., self.shape.star_action]).fill(0.0);
        Some(EpisodeFunctions { reward, consumption })
    }
}

/// Kernel plus `cfg.episodes` episode functions, deterministic in `seed`.
pub fn generate_instance(cfg: &GeneratorConfig, seed: u64) -> Result<(TransitionKernel, Vec<EpisodeFunctions>)> {
    let kernel = generate_kernel(cfg, seed)?;
    let episodes = EpisodeStream::new(kernel.shape(), seed).take(cfg.episodes).collect();
    Ok((kernel, episodes))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn large_concentration_is_near_uniform() {
        let cfg = GeneratorConfig { alpha: 1e6, ..Default::default() };
        let k = generate_kernel(&cfg, 3).unwrap();
        let dev = k.trans().iter().map(|p| (p - 1.0 / 3.0).abs()).fold(0.0, f64::max);
        assert!(dev < 1e-2, "max deviation {dev}");
    }

    #[test]
    fn null_column_is_zero_and_cells_in_range() {
        let cfg = GeneratorConfig { episodes: 5, ..Default::default() };
        let (k, eps) = generate_instance(&cfg, 11).unwrap();
        for ep in &eps {
            ep.validate(k.shape()).unwrap();
            assert!(ep.reward.slice(s![.., .., 0]).iter().all(|&v| v == 0.0));
            assert!(ep.consumption.slice(s![.., .., 0]).iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn seeds_differ_and_repeat() {
        let cfg = GeneratorConfig { episodes: 3, ..Default::default() };
        let a = generate_instance(&cfg, 1).unwrap();
        let b = generate_instance(&cfg, 2).unwrap();
        let c = generate_instance(&cfg, 1).unwrap();
        assert_ne!(a.0, b.0);
        assert_ne!(a.1, b.1);
        assert_eq!(a, c);
    }

    #[test]
    fn episode_prefixes_agree_across_lengths() {
        let short = generate_instance(&GeneratorConfig { episodes: 4, ..Default::default() }, 5).unwrap();
        let long = generate_instance(&GeneratorConfig { episodes: 9, ..Default::default() }, 5).unwrap();
        assert_eq!(short.0, long.0);
        assert_eq!(short.1[..], long.1[..4]);
    }

    #[test]
    fn invalid_concentration_rejected() {
        assert!(generate_kernel(&GeneratorConfig { alpha: 0.0, ..Default::default() }, 0).is_err());
    }
}
