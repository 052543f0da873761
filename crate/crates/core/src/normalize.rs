use ndarray::Array2;
use serde::{Deserialize, Serialize};

const CLIP: f64 = 10.0;
const EPSILON: f64 = 1e-8;

/// Running mean/variance observation normalizer.
///
/// Statistics change only through [`RunningNorm::update`], which the training
/// loop calls on freshly collected observations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunningNorm {
    count: f64,
    mean: Vec<f64>,
    // sum of squared deviations (Welford)
    m2: Vec<f64>,
}

impl RunningNorm {
    pub fn new(dim: usize) -> Self {
        Self {
            count: 0.0,
            mean: vec![0.0; dim],
            m2: vec![0.0; dim],
        }
    }

    pub fn count(&self) -> f64 {
        self.count
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn variance(&self) -> Vec<f64> {
        if self.count < 2.0 {
            return vec![1.0; self.mean.len()];
        }
        self.m2.iter().map(|m| m / self.count).collect()
    }

    pub fn update(&mut self, x: &[f64]) {
        self.count += 1.0;
        for ((m, s), &v) in self.mean.iter_mut().zip(&mut self.m2).zip(x) {
            let delta = v - *m;
            *m += delta / self.count;
            *s += delta * (v - *m);
        }
    }

    pub fn normalize(&self, x: &[f64]) -> Vec<f64> {
        let var = self.variance();
        x.iter()
            .zip(&self.mean)
            .zip(&var)
            .map(|((v, m), s)| ((v - m) / (s + EPSILON).sqrt()).clamp(-CLIP, CLIP))
            .collect()
    }

    pub fn normalize_rows(&self, x: &Array2<f64>) -> Array2<f64> {
        let var = self.variance();
        let mut out = x.clone();
        for mut row in out.rows_mut() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = ((*v - self.mean[j]) / (var[j] + EPSILON).sqrt()).clamp(-CLIP, CLIP);
            }
        }
        out
    }
}

/// Optional normalization: identity when disabled.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObservationFilter(Option<RunningNorm>);

impl ObservationFilter {
    pub fn new(enabled: bool, dim: usize) -> Self {
        Self(enabled.then(|| RunningNorm::new(dim)))
    }

    pub fn is_enabled(&self) -> bool {
        self.0.is_some()
    }

    pub fn update(&mut self, x: &[f64]) {
        if let Some(n) = &mut self.0 {
            n.update(x);
        }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        match &self.0 {
            Some(n) => n.normalize(x),
            None => x.to_vec(),
        }
    }

    pub fn apply_rows(&self, x: &Array2<f64>) -> Array2<f64> {
        match &self.0 {
            Some(n) => n.normalize_rows(x),
            None => x.clone(),
        }
    }
}
