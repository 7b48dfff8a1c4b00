use rand::seq::index::sample;
use rand::Rng;

use super::MaskStrategy;

/// Masking ratio at training progress `u`: a linear ramp reaching 1 at `alpha`.
pub fn mask_ratio(u: f64, alpha: f64) -> f64 {
    (u / alpha).clamp(0.0, 1.0)
}

/// Number of masked positions: `ceil(ratio * len)`, clamped to `len`.
pub fn masked_count(len: usize, ratio: f64) -> usize {
    // The small offset keeps products like 0.3 * 10 from rounding up to 4.
    let raw = (ratio * len as f64 - 1e-9).ceil().max(0.0) as usize;
    raw.min(len)
}

/// 0-based masked positions inside a block whose first `len` slots hold
/// response tokens. Sorted ascending.
pub fn select_masked_positions<R: Rng + ?Sized>(len: usize, ratio: f64, strategy: MaskStrategy, rng: &mut R) -> Vec<usize> {
    let k = masked_count(len, ratio);
    match strategy {
        MaskStrategy::End => (len - k..len).collect(),
        MaskStrategy::Start => (0..k).collect(),
        MaskStrategy::Random => {
            let mut v = sample(rng, len, k).into_vec();
            v.sort_unstable();
            v
        }
    }
}

/// Training progress as seen by the masking schedule.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CurriculumState {
    pub progress: f64,
    pub alpha: f64,
    pub strategy: MaskStrategy,
    pub enabled: bool,
    pub seed: u64,
}

impl CurriculumState {
    /// Full masking; used at inference and when the curriculum is off.
    pub fn full(strategy: MaskStrategy) -> Self {
        Self {
            progress: 1.0,
            alpha: 1.0,
            strategy,
            enabled: false,
            seed: 0,
        }
    }

    pub fn ratio(&self) -> f64 {
        if self.enabled {
            mask_ratio(self.progress, self.alpha)
        } else {
            1.0
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn ratio_schedule() {
        assert_eq!(mask_ratio(0.0, 0.4), 0.0);
        assert!((mask_ratio(0.2, 0.4) - 0.5).abs() < 1e-15);
        assert_eq!(mask_ratio(0.4, 0.4), 1.0);
        assert_eq!(mask_ratio(0.9, 0.4), 1.0);
    }

    #[test]
    fn positions_by_strategy() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        // 1-based {3,4} and {1,2} in the usual notation
        assert_eq!(select_masked_positions(4, 0.5, MaskStrategy::End, &mut rng), vec![2, 3]);
        assert_eq!(select_masked_positions(4, 0.5, MaskStrategy::Start, &mut rng), vec![0, 1]);
        for s in [MaskStrategy::End, MaskStrategy::Start, MaskStrategy::Random] {
            assert_eq!(select_masked_positions(5, 1.0, s, &mut rng), vec![0, 1, 2, 3, 4]);
            assert!(select_masked_positions(5, 0.0, s, &mut rng).is_empty());
        }
        let r = select_masked_positions(10, 0.3, MaskStrategy::Random, &mut rng);
        assert_eq!(r.len(), 3);
    }

    #[test]
    fn any_positive_ratio_masks_something() {
        assert_eq!(masked_count(10, 1e-6), 1);
        assert_eq!(masked_count(10, 0.3), 3);
        assert_eq!(masked_count(10, 0.5), 5);
    }
}
