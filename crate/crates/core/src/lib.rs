//! Fast-moving-object deblurring toolkit.
//!
//! * [`image`]: pixel containers, median background, PNG I/O
//! * [`synth`]: procedural benchmark scenes and the on-disk dataset layout
//! * [`formation`]: forward image-formation operators
//! * [`energy`]: loss terms, analytic gradients
//! * [`solver`]: per-image projected-gradient recovery of a rendering stack
//! * [`metrics`]: PSNR, SSIM, trajectories, TIoU and the evaluation protocol
//! * [`oracle`]: brute-force references used for verification

pub mod energy;
pub mod error;
pub mod formation;
pub mod image;
pub mod metrics;
pub mod ncc;
pub mod oracle;
pub mod solver;
pub mod synth;

use serde::{Deserialize, Serialize};

pub use energy::{EnergyBreakdown, EnergyWeights, StackGradient};
pub use error::{Error, Result};
pub use image::{Image, Rendering, RenderingStack};
pub use metrics::{EvalReport, Trajectory};
pub use solver::{SolveResult, SolverConfig};
pub use synth::SynthSample;

/// Pairing of an estimated sub-frame sequence with the ground truth.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    #[default]
    Forward,
    Backward,
}

impl Direction {
    pub fn flipped(self) -> Self {
        match self {
            Direction::Forward => Direction::Backward,
            Direction::Backward => Direction::Forward,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Direction::Forward => "forward",
            Direction::Backward => "backward",
        }
    }
}

impl std::fmt::Display for Direction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Sum of a per-sub-frame sequence taken in mirrored pairs, so that the
/// sequence and its reversal sum to the same bits.
pub(crate) fn mirrored_sum(vals: &[f64]) -> f64 {
    let n = vals.len();
    (0..n.div_ceil(2))
        .map(|i| {
            let j = n - 1 - i;
            if i == j {
                vals[i]
            } else {
                vals[i] + vals[j]
            }
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mirrored_sum_is_reversal_exact() {
        let v = [0.1, 0.7, 1e-17, 3.3, 0.2];
        let mut r = v;
        r.reverse();
        assert_eq!(mirrored_sum(&v), mirrored_sum(&r));
        assert_eq!(mirrored_sum(&[]), 0.0);
    }
}
