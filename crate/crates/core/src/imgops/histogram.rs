//! 256-bin intensity histograms and Pearson correlation between them.

use crate::measure::Measurable;

use super::{Image, ImgError};

pub const HISTOGRAM_BINS: usize = 256;

/// Intensity histogram over one channel. Bins hold counts for a freshly
/// computed histogram and fractional frequencies after averaging.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    pub bins: Vec<f64>,
    pub channel: u8,
}

impl Histogram {
    pub fn zeroed(channel: u8) -> Self {
        Self {
            bins: vec![0.0; HISTOGRAM_BINS],
            channel,
        }
    }

    pub fn total(&self) -> f64 {
        self.bins.iter().sum()
    }

    /// Element-wise sum; used by chunked averaging.
    pub fn add(&mut self, other: &Histogram) {
        for (a, b) in self.bins.iter_mut().zip(&other.bins) {
            *a += b;
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for b in &mut self.bins {
            *b *= factor;
        }
    }
}

impl Measurable for Histogram {
    fn size_bytes(&self) -> u64 {
        self.bins.len() as u64 * 8 + 16
    }
}

/// Exact bin counts of a single-channel image.
pub fn compute_histogram(img: &Image) -> Result<Histogram, ImgError> {
    if img.channels != 1 {
        return Err(ImgError::BadChannels(format!(
            "histogram needs a 1-channel image, got {}",
            img.channels
        )));
    }
    let mut hist = Histogram::zeroed(0);
    for &v in &img.data {
        hist.bins[v as usize] += 1.0;
    }
    Ok(hist)
}

/// Element-wise arithmetic mean over a non-empty list of histograms.
pub fn mean_histograms(hists: &[Histogram]) -> Result<Histogram, ImgError> {
    if hists.is_empty() {
        return Err(ImgError::EmptyInput("mean of zero histograms".into()));
    }
    let mut sum = Histogram::zeroed(hists[0].channel);
    for h in hists {
        sum.add(h);
    }
    sum.scale(1.0 / hists.len() as f64);
    Ok(sum)
}

/// Pearson correlation between two histograms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correlation {
    pub value: f64,
    /// Set when either vector is constant and the correlation is undefined;
    /// `value` is then the 0.0 sentinel.
    pub degenerate: bool,
}

pub fn correlate_histograms(a: &Histogram, b: &Histogram) -> Result<Correlation, ImgError> {
    if a.bins.len() != HISTOGRAM_BINS || b.bins.len() != HISTOGRAM_BINS {
        return Err(ImgError::BadParam("histograms must have 256 bins".into()));
    }
    let n = HISTOGRAM_BINS as f64;
    let mean_a = a.total() / n;
    let mean_b = b.total() / n;
    let mut cov = 0.0;
    let mut var_a = 0.0;
    let mut var_b = 0.0;
    for (x, y) in a.bins.iter().zip(&b.bins) {
        let dx = x - mean_a;
        let dy = y - mean_b;
        cov += dx * dy;
        var_a += dx * dx;
        var_b += dy * dy;
    }
    if var_a <= 0.0 || var_b <= 0.0 {
        return Ok(Correlation {
            value: 0.0,
            degenerate: true,
        });
    }
    Ok(Correlation {
        value: cov / (var_a.sqrt() * var_b.sqrt()),
        degenerate: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_counts() {
        let img = Image::new(2, 2, 1, vec![0, 0, 255, 7]);
        let h = compute_histogram(&img).unwrap();
        assert_eq!(h.bins[0], 2.0);
        assert_eq!(h.bins[7], 1.0);
        assert_eq!(h.bins[255], 1.0);
        assert_eq!(h.total(), 4.0);
    }

    #[test]
    fn counts_sum_to_pixel_count() {
        let img = Image::new(5, 3, 1, (0u8..15).collect());
        assert_eq!(compute_histogram(&img).unwrap().total(), 15.0);
    }

    #[test]
    fn mean_of_identical_is_identity() {
        let img = Image::new(2, 2, 1, vec![1, 2, 3, 4]);
        let h = compute_histogram(&img).unwrap();
        let mean = mean_histograms(&[h.clone(), h.clone(), h.clone()]).unwrap();
        assert_eq!(mean, h);
    }

    #[test]
    fn mean_averages_bins() {
        let mut a = Histogram::zeroed(0);
        a.bins[0] = 2.0;
        let b = Histogram::zeroed(0);
        let mean = mean_histograms(&[a, b]).unwrap();
        assert_eq!(mean.bins[0], 1.0);
        assert!(mean_histograms(&[]).is_err());
    }

    #[test]
    fn correlation_of_identical_nonconstant_is_one() {
        let img = Image::new(4, 1, 1, vec![0, 10, 10, 200]);
        let h = compute_histogram(&img).unwrap();
        let c = correlate_histograms(&h, &h).unwrap();
        assert!(!c.degenerate);
        assert!((c.value - 1.0).abs() < 1e-12);
    }

    #[test]
    fn correlation_of_negated_is_minus_one() {
        let mut a = Histogram::zeroed(0);
        let mut b = Histogram::zeroed(0);
        for i in 0..HISTOGRAM_BINS {
            a.bins[i] = i as f64;
            b.bins[i] = -(i as f64); // mirror around the shared mean shape
        }
        let c = correlate_histograms(&a, &b).unwrap();
        assert!((c.value + 1.0).abs() < 1e-12);
    }

    #[test]
    fn constant_vector_is_flagged_zero() {
        let mut a = Histogram::zeroed(0);
        a.bins.iter_mut().for_each(|b| *b = 3.0);
        let mut b = Histogram::zeroed(0);
        b.bins[0] = 5.0;
        let c = correlate_histograms(&a, &b).unwrap();
        assert!(c.degenerate);
        assert_eq!(c.value, 0.0);
    }

    #[test]
    fn size_rule() {
        assert_eq!(Histogram::zeroed(0).size_bytes(), 256 * 8 + 16);
    }
}
