//! Fixtures shared by the criterion benches: a seeded model plus matching
//! random inputs for one image shape.

use bga_core::aggregation::Paradigm;
use bga_core::autograd::Tape;
use bga_core::features::Variant;
use bga_core::model::{ModelConfig, StereoModel};
use bga_core::nn::Binder;
use bga_core::{Result, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use bga_core::bench::{DEFAULT_D_MAX, DEFAULT_SHAPES};

pub struct Fixture {
    pub model: StereoModel<f32>,
    /// `[1, G, D, H/4, W/4]` correlation volume.
    pub volume: Tensor<f32>,
    pub left: Tensor<f32>,
    pub right: Tensor<f32>,
}

impl Fixture {
    pub fn new(variant: Variant, paradigm: Paradigm, (h, w): (usize, usize), d_max: usize) -> Result<Self> {
        let cfg = ModelConfig::new(variant, paradigm, d_max);
        let model = StereoModel::new(&cfg, 0)?;
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let volume = Tensor::randn(&[1, cfg.groups(), cfg.levels()?, h / 4, w / 4], 1.0, &mut rng);
        let left = Tensor::uniform(&[1, 3, h, w], 0.0, 1.0, &mut rng);
        let right = Tensor::uniform(&[1, 3, h, w], 0.0, 1.0, &mut rng);
        Ok(Fixture {
            model,
            volume,
            left,
            right,
        })
    }

    /// Aggregation alone, returning the final scores.
    pub fn aggregate(&self) -> Result<Tensor<f32>> {
        let tape = Tape::new();
        let p = Binder::new(&tape, &self.model.params, false);
        let out = self.model.aggregator().forward(&p, tape.constant(self.volume.clone()), None)?;
        let scores = (*out.scores.value()).clone();
        Ok(scores)
    }

    /// Both images through the whole network.
    pub fn full(&self) -> Result<Tensor<f32>> {
        Ok(self.model.predict(&self.left, &self.right)?.d_final)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixture_shapes() {
        let f = Fixture::new(Variant::Tiny, Paradigm::Bga, (64, 96), 32).unwrap();
        assert_eq!(f.aggregate().unwrap().shape(), &[1, 8, 16, 24]);
        assert_eq!(f.full().unwrap().shape(), &[1, 1, 64, 96]);
        let g = Fixture::new(Variant::Tiny, Paradigm::Conv3d, (64, 96), 32).unwrap();
        assert_eq!(g.aggregate().unwrap().shape(), &[1, 8, 16, 24]);
    }
}
