/// Fixed-width 1D histogram.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    pub lo: f64,
    pub width: f64,
    pub counts: Vec<f64>,
}

/// Upper bound on the number of bins a projection histogram may use.
pub const MAX_BINS: usize = 4096;

impl Histogram {
    pub fn with_width(values: &[f64], width: f64) -> Self {
        let (min, max) = min_max(values);
        let span = (max - min).max(f64::MIN_POSITIVE);
        let width = width.max(span / MAX_BINS as f64);
        let n = ((span / width).floor() as usize + 1).clamp(1, MAX_BINS);
        let mut counts = vec![0.0; n];
        for &v in values {
            let k = (((v - min) / width) as usize).min(n - 1);
            counts[k] += 1.0;
        }
        Self {
            lo: min,
            width,
            counts,
        }
    }

    /// Histogram with the Freeman–Diaconis bin width scaled by `scale`.
    pub fn freedman_diaconis(values: &[f64], scale: f64) -> Self {
        Self::with_width(values, scale * freedman_diaconis_width(values))
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn edges(&self, k: usize) -> (f64, f64) {
        let a = self.lo + k as f64 * self.width;
        (a, a + self.width)
    }

    pub fn center(&self, k: usize) -> f64 {
        self.lo + (k as f64 + 0.5) * self.width
    }

    pub fn total(&self) -> f64 {
        self.counts.iter().sum()
    }
}

pub fn min_max(values: &[f64]) -> (f64, f64) {
    values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
}

/// `2·IQR·n^{-1/3}`.
pub fn freedman_diaconis_width(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 4 {
        let (lo, hi) = min_max(values);
        return (hi - lo).max(1.0);
    }
    let mut buf = values.to_vec();
    let q1 = quantile_in_place(&mut buf, 0.25);
    let q3 = quantile_in_place(&mut buf, 0.75);
    let iqr = q3 - q1;
    if iqr > 0.0 {
        2.0 * iqr / (n as f64).cbrt()
    } else {
        let (lo, hi) = min_max(values);
        ((hi - lo) / 100.0).max(f64::MIN_POSITIVE)
    }
}

/// Order statistic at fraction `q`; reorders `buf`.
pub fn quantile_in_place(buf: &mut [f64], q: f64) -> f64 {
    let k = ((buf.len() - 1) as f64 * q).round() as usize;
    let (_, v, _) = buf.select_nth_unstable_by(k, f64::total_cmp);
    *v
}
