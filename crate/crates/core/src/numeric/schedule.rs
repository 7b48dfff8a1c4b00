use std::f64::consts::PI;

use super::TensorError;

/// Shape of the post-warmup decay.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Decay {
    Cosine,
    Linear,
}

/// Linear warmup from zero to `base`, then decay to `min` at `total` steps.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LrSchedule {
    pub base: f64,
    pub min: f64,
    pub total: usize,
    pub warmup: usize,
    pub decay: Decay,
}

impl LrSchedule {
    pub fn new(base: f64, min: f64, total: usize, warmup: usize, decay: Decay) -> Result<Self, TensorError> {
        if !(base.is_finite() && base >= 0.0 && min >= 0.0 && min <= base) {
            return Err(TensorError::Contract(format!("invalid learning rates base={base} min={min}")));
        }
        if total == 0 || warmup >= total {
            return Err(TensorError::Contract(format!(
                "warmup ({warmup}) must be shorter than total steps ({total})"
            )));
        }
        Ok(Self {
            base,
            min,
            total,
            warmup,
            decay,
        })
    }

    /// Cosine schedule with warmup over the first `warmup_frac` of steps.
    pub fn cosine_with_warmup(base: f64, min: f64, total: usize, warmup_frac: f64) -> Result<Self, TensorError> {
        let warmup = ((total as f64) * warmup_frac).floor() as usize;
        Self::new(base, min, total, warmup.min(total.saturating_sub(1)), Decay::Cosine)
    }

    pub fn lr_at(&self, step: usize) -> Result<f64, TensorError> {
        if step > self.total {
            return Err(TensorError::Contract(format!(
                "step {step} outside schedule of {} steps",
                self.total
            )));
        }
        if step < self.warmup {
            return Ok(self.base * step as f64 / self.warmup as f64);
        }
        let p = (step - self.warmup) as f64 / (self.total - self.warmup) as f64;
        let frac = match self.decay {
            Decay::Cosine => 0.5 * (1.0 + (PI * p).cos()),
            Decay::Linear => 1.0 - p,
        };
        Ok(self.min + (self.base - self.min) * frac)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn boundaries_and_midpoint() {
        let s = LrSchedule::new(5e-5, 1e-6, 1000, 100, Decay::Cosine).unwrap();
        assert_eq!(s.lr_at(0).unwrap(), 0.0);
        assert_eq!(s.lr_at(100).unwrap(), 5e-5);
        assert!((s.lr_at(1000).unwrap() - 1e-6).abs() < 1e-18);
        let mid = s.lr_at(100 + 450).unwrap();
        assert!((mid - (5e-5 + 1e-6) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn continuous_at_warmup_end() {
        let s = LrSchedule::new(1.0, 0.0, 200, 20, Decay::Cosine).unwrap();
        let before = s.lr_at(19).unwrap();
        let at = s.lr_at(20).unwrap();
        let after = s.lr_at(21).unwrap();
        assert!((at - before).abs() < 0.06 && (at - after).abs() < 0.06);
    }

    #[test]
    fn out_of_range_step() {
        let s = LrSchedule::new(1.0, 0.0, 10, 1, Decay::Linear).unwrap();
        assert!(s.lr_at(11).is_err());
        assert!(LrSchedule::new(1.0, 0.0, 10, 10, Decay::Linear).is_err());
    }

    #[test]
    fn linear_decay() {
        let s = LrSchedule::new(1.0, 0.0, 110, 10, Decay::Linear).unwrap();
        assert!((s.lr_at(60).unwrap() - 0.5).abs() < 1e-15);
        assert_eq!(s.lr_at(5).unwrap(), 0.5);
    }
}
