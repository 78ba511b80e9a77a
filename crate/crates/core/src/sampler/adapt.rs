//! Warmup adaptation: dual-averaging step size and windowed diagonal metric.

#[derive(Debug, Clone)]
pub(crate) struct DualAveraging {
    delta: f64,
    mu: f64,
    counter: f64,
    s_bar: f64,
    x_bar: f64,
}

impl DualAveraging {
    const GAMMA: f64 = 0.05;
    const T0: f64 = 10.0;
    const KAPPA: f64 = 0.75;

    pub fn new(delta: f64, eps: f64) -> Self {
        Self { delta, mu: (10.0 * eps).ln(), counter: 0.0, s_bar: 0.0, x_bar: 0.0 }
    }

    pub fn restart(&mut self, eps: f64) {
        *self = Self::new(self.delta, eps);
    }

    /// Updates with the latest acceptance statistic and returns the next step size.
    pub fn update(&mut self, accept_stat: f64) -> f64 {
        self.counter += 1.0;
        let a = accept_stat.min(1.0);
        let eta = 1.0 / (self.counter + Self::T0);
        self.s_bar = (1.0 - eta) * self.s_bar + eta * (self.delta - a);
        let x = self.mu - self.s_bar * self.counter.sqrt() / Self::GAMMA;
        let w = self.counter.powf(-Self::KAPPA);
        self.x_bar = (1.0 - w) * self.x_bar + w * x;
        x.exp()
    }

    /// Step size to use after adaptation ends.
    pub fn final_step(&self) -> f64 {
        self.x_bar.exp()
    }
}

/// Running mean and variance (Welford).
#[derive(Debug, Clone)]
pub(crate) struct Welford {
    n: f64,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl Welford {
    pub fn new(dim: usize) -> Self {
        Self { n: 0.0, mean: vec![0.0; dim], m2: vec![0.0; dim] }
    }

    pub fn add(&mut self, x: &[f64]) {
        self.n += 1.0;
        for ((m, s), &v) in self.mean.iter_mut().zip(self.m2.iter_mut()).zip(x) {
            let d = v - *m;
            *m += d / self.n;
            *s += d * (v - *m);
        }
    }

    /// Sample variances shrunk towards 1e-3, as a metric estimate.
    pub fn regularized_variance(&self) -> Vec<f64> {
        let n = self.n;
        self.m2
            .iter()
            .map(|s| {
                let var = if n > 1.0 { s / (n - 1.0) } else { 1.0 };
                (n / (n + 5.0)) * var + 1e-3 * (5.0 / (n + 5.0))
            })
            .collect()
    }

    pub fn reset(&mut self) {
        self.n = 0.0;
        self.mean.iter_mut().for_each(|v| *v = 0.0);
        self.m2.iter_mut().for_each(|v| *v = 0.0);
    }
}

/// Metric adaptation windows as half-open iteration ranges.
///
/// The first 15% of warmup adapts the step size only and the last 10% is a
/// final step-size phase; the remainder is split into doubling windows starting
/// at 25 iterations, the last one stretched to the end of the slow phase.
pub(crate) fn metric_windows(warmup: usize) -> Vec<(usize, usize)> {
    let init = (warmup as f64 * 0.15).round() as usize;
    let term = (warmup as f64 * 0.10).round() as usize;
    let end = warmup.saturating_sub(term);
    let mut out = Vec::new();
    if end <= init {
        return out;
    }
    let mut start = init;
    let mut size = 25usize;
    loop {
        let mut stop = (start + size).min(end);
        if stop + 2 * size > end {
            stop = end;
        }
        out.push((start, stop));
        if stop == end {
            break;
        }
        start = stop;
        size *= 2;
    }
    out
}
