use rand::Rng;
use serde::{Deserialize, Serialize};

use super::layout::Layout;
use crate::error::{Error, Result};
use crate::rng;

/// Binary keep-masks over the inputs of every non-first layer.
///
/// Kept activations are scaled by `1 / (1 - rate)` so the expected layer
/// input is unchanged. Raw features are never dropped.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DropoutMask {
    rate: f64,
    seed: u64,
    draw: u64,
    keep: Vec<Vec<bool>>,
}

pub(crate) const DRAW_STREAM: &str = "dropout-draw";

impl DropoutMask {
    /// The mask for posterior draw `draw`; a pure function of its arguments.
    pub fn for_draw(layout: &Layout, rate: f64, seed: u64, draw: u64) -> Result<Self> {
        let mut m = Self::empty(layout, rate)?;
        m.seed = seed;
        m.draw = draw;
        let mut r = rng::stream(seed, DRAW_STREAM, draw);
        m.resample(&mut r);
        Ok(m)
    }

    /// A mask with every unit kept, to be filled by [`DropoutMask::resample`].
    pub fn empty(layout: &Layout, rate: f64) -> Result<Self> {
        check_rate(rate)?;
        let keep = layout.layers()[1..]
            .iter()
            .map(|l| vec![true; l.in_dim])
            .collect();
        Ok(Self {
            rate,
            seed: 0,
            draw: 0,
            keep,
        })
    }

    pub fn resample<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        let rate = self.rate;
        for layer in &mut self.keep {
            for k in layer.iter_mut() {
                *k = rate == 0.0 || rng.random::<f64>() >= rate;
            }
        }
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn draw(&self) -> u64 {
        self.draw
    }

    pub fn scale(&self) -> f64 {
        1.0 / (1.0 - self.rate)
    }

    /// Keep flags for the input of `layer` (`layer >= 1`).
    pub fn keep(&self, layer: usize) -> &[bool] {
        &self.keep[layer - 1]
    }

    pub fn kept(&self, layer: usize) -> usize {
        self.keep(layer).iter().filter(|&&k| k).count()
    }

    pub(crate) fn matches(&self, layout: &Layout) -> bool {
        self.keep.len() + 1 == layout.depth()
            && self
                .keep
                .iter()
                .zip(&layout.layers()[1..])
                .all(|(k, l)| k.len() == l.in_dim)
    }
}

pub(crate) fn check_rate(rate: f64) -> Result<()> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::Argument(format!(
            "dropout rate must lie in [0, 1), got {rate}"
        )));
    }
    Ok(())
}
