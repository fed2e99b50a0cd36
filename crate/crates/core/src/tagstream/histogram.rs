use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{CoincidencePair, TimeTag};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum HistogramError {
    #[error("bin width must be positive")]
    ZeroBinWidth,
    #[error("histogram is empty; FWHM is undefined")]
    Empty,
    #[error("distribution does not fall below half maximum inside the span")]
    NoHalfMaximumCrossing,
}

/// Histogram of signed time differences, bins centred on multiples of the
/// bin width, covering ±span. Bin `k` holds deltas in
/// `[k·w − w/2, k·w + w/2)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeltaHistogram {
    bin_width_ps: u64,
    half_bins: i64,
    counts: Vec<u64>,
    total: u64,
    overflow: u64,
}

impl DeltaHistogram {
    pub fn new(bin_width_ps: u64, span_ps: u64) -> Result<Self, HistogramError> {
        if bin_width_ps == 0 {
            return Err(HistogramError::ZeroBinWidth);
        }
        let half_bins = span_ps.div_ceil(bin_width_ps) as i64;
        Ok(Self {
            bin_width_ps,
            half_bins,
            counts: vec![0; (2 * half_bins + 1) as usize],
            total: 0,
            overflow: 0,
        })
    }

    pub fn from_deltas(
        deltas: impl IntoIterator<Item = i64>,
        bin_width_ps: u64,
        span_ps: u64,
    ) -> Result<Self, HistogramError> {
        let mut h = Self::new(bin_width_ps, span_ps)?;
        for d in deltas {
            h.add(d);
        }
        Ok(h)
    }

    pub fn from_pairs(
        pairs: &[CoincidencePair],
        bin_width_ps: u64,
        span_ps: u64,
    ) -> Result<Self, HistogramError> {
        Self::from_deltas(pairs.iter().map(|p| p.delta_ps), bin_width_ps, span_ps)
    }

    /// Start-stop cross-correlation of two sorted raw streams: every
    /// (alice, bob) combination with |Δt| ≤ span contributes.
    pub fn from_streams(
        alice: &[TimeTag],
        bob: &[TimeTag],
        bin_width_ps: u64,
        span_ps: u64,
    ) -> Result<Self, HistogramError> {
        let mut h = Self::new(bin_width_ps, span_ps)?;
        let mut start = 0;
        for a in alice {
            while start < bob.len() && bob[start].time.saturating_add(span_ps) < a.time {
                start += 1;
            }
            for b in &bob[start..] {
                if b.time > a.time.saturating_add(span_ps) {
                    break;
                }
                h.add(b.time as i64 - a.time as i64);
            }
        }
        Ok(h)
    }

    pub fn add(&mut self, delta_ps: i64) {
        let w = self.bin_width_ps as i64;
        let k = (delta_ps + w / 2).div_euclid(w);
        if k.abs() > self.half_bins {
            self.overflow += 1;
            return;
        }
        self.counts[(k + self.half_bins) as usize] += 1;
        self.total += 1;
    }

    pub fn bin_width_ps(&self) -> u64 {
        self.bin_width_ps
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    /// Deltas that landed inside the span.
    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn overflow(&self) -> u64 {
        self.overflow
    }

    pub fn is_empty(&self) -> bool {
        self.total == 0
    }

    pub fn bin_center_ps(&self, i: usize) -> f64 {
        ((i as i64 - self.half_bins) * self.bin_width_ps as i64) as f64
    }

    pub fn mean_ps(&self) -> Option<f64> {
        if self.total == 0 {
            return None;
        }
        let sum: f64 = self
            .counts
            .iter()
            .enumerate()
            .map(|(i, &c)| c as f64 * self.bin_center_ps(i))
            .sum();
        Some(sum / self.total as f64)
    }

    /// Full width at half maximum, by linear interpolation between the bins
    /// that straddle half of the peak count on each side.
    pub fn fwhm_ps(&self) -> Result<f64, HistogramError> {
        if self.total == 0 {
            return Err(HistogramError::Empty);
        }
        let (peak, &max) = self
            .counts
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))
            .expect("non-empty");
        let half = max as f64 / 2.0;
        let c = |i: usize| self.counts[i] as f64;

        let mut left = None;
        let mut i = peak;
        while i > 0 {
            if c(i - 1) < half {
                let (lo, hi) = (c(i - 1), c(i));
                let frac = (half - lo) / (hi - lo);
                left = Some(self.bin_center_ps(i - 1) + frac * self.bin_width_ps as f64);
                break;
            }
            i -= 1;
        }
        let mut right = None;
        let mut i = peak;
        while i + 1 < self.counts.len() {
            if c(i + 1) < half {
                let (hi, lo) = (c(i), c(i + 1));
                let frac = (hi - half) / (hi - lo);
                right = Some(self.bin_center_ps(i) + frac * self.bin_width_ps as f64);
                break;
            }
            i += 1;
        }
        match (left, right) {
            (Some(l), Some(r)) => Ok(r - l),
            _ => Err(HistogramError::NoHalfMaximumCrossing),
        }
    }

    /// `center_ps,count` lines.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("delta_ps,count\n");
        for (i, c) in self.counts.iter().enumerate() {
            out.push_str(&format!("{},{}\n", self.bin_center_ps(i), c));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_deltas_fill_central_bin() {
        let h = DeltaHistogram::from_deltas(std::iter::repeat_n(0, 100), 10, 100).unwrap();
        let nonzero: Vec<_> = h
            .counts()
            .iter()
            .enumerate()
            .filter(|(_, &c)| c > 0)
            .collect();
        assert_eq!(nonzero.len(), 1);
        assert_eq!(h.bin_center_ps(nonzero[0].0), 0.0);
        assert_eq!(h.total(), 100);
        assert_eq!(h.fwhm_ps().unwrap(), 10.0);
    }

    #[test]
    fn binning_edges() {
        let mut h = DeltaHistogram::new(10, 20).unwrap();
        for d in [-5, 4, 5, -6, 24, -26] {
            h.add(d);
        }
        // bins: -20,-10,0,10,20
        assert_eq!(h.counts(), &[0, 1, 2, 1, 1]);
        assert_eq!(h.overflow(), 1);
        assert_eq!(h.total(), 5);
    }

    #[test]
    fn empty_histogram_has_no_fwhm() {
        let h = DeltaHistogram::new(4, 100).unwrap();
        assert_eq!(h.fwhm_ps(), Err(HistogramError::Empty));
        assert!(h.mean_ps().is_none());
        assert_eq!(
            DeltaHistogram::new(0, 10),
            Err(HistogramError::ZeroBinWidth)
        );
    }

    #[test]
    fn triangle_fwhm() {
        // counts 0,2,4,2,0 at -20..20: half max 2 is hit exactly at ±10
        let deltas = [-10, -10, 0, 0, 0, 0, 10, 10];
        let h = DeltaHistogram::from_deltas(deltas, 10, 20).unwrap();
        assert!((h.fwhm_ps().unwrap() - 20.0).abs() < 1e-12);
    }

    #[test]
    fn stream_cross_correlation() {
        let a = [TimeTag::new(100, 0), TimeTag::new(1000, 0)];
        let b = [
            TimeTag::new(110, 2),
            TimeTag::new(990, 2),
            TimeTag::new(5000, 2),
        ];
        let h = DeltaHistogram::from_streams(&a, &b, 10, 50).unwrap();
        assert_eq!(h.total(), 2);
        let h = DeltaHistogram::from_streams(&a, &b, 10, 1000).unwrap();
        assert_eq!(h.total(), 4);
    }
}
