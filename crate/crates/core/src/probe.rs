//! Linear probe: multinomial logistic regression on standardised features.
//! Used to measure how much language identity survives in encoder outputs.

use ndarray::{Array1, Array2, Axis};

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct LinearProbe {
    mean: Array1<f64>,
    std: Array1<f64>,
    weight: Array2<f64>,
    bias: Array1<f64>,
}

#[derive(Debug, Clone, Copy)]
pub struct ProbeOptions {
    pub epochs: usize,
    pub learning_rate: f64,
    pub l2: f64,
}

impl Default for ProbeOptions {
    fn default() -> Self {
        ProbeOptions {
            epochs: 300,
            learning_rate: 0.5,
            l2: 1e-4,
        }
    }
}

fn softmax_rows(z: &mut Array2<f64>) {
    for mut row in z.rows_mut() {
        let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - m).exp());
        let s = row.sum();
        row /= s;
    }
}

impl LinearProbe {
    /// Full-batch gradient descent on the mean cross-entropy.
    pub fn fit(x: &Array2<f64>, y: &[usize], num_classes: usize, opts: ProbeOptions) -> Result<Self> {
        let (n, d) = x.dim();
        if n == 0 || n != y.len() {
            return Err(Error::Data(format!("probe needs matching non-empty data ({n} rows, {} labels)", y.len())));
        }
        if let Some(&bad) = y.iter().find(|&&c| c >= num_classes) {
            return Err(Error::Label {
                row: y.iter().position(|&c| c == bad).unwrap(),
                target: bad as i64,
                classes: num_classes,
            });
        }
        let mean = x.mean_axis(Axis(0)).unwrap();
        let std = x.std_axis(Axis(0), 0.0).mapv(|s| if s > 1e-12 { s } else { 1.0 });
        let xs = (x - &mean) / &std;
        let mut onehot = Array2::<f64>::zeros((n, num_classes));
        for (i, &c) in y.iter().enumerate() {
            onehot[[i, c]] = 1.0;
        }
        let mut weight = Array2::<f64>::zeros((d, num_classes));
        let mut bias = Array1::<f64>::zeros(num_classes);
        for _ in 0..opts.epochs {
            let mut p = xs.dot(&weight) + &bias;
            softmax_rows(&mut p);
            let g = (p - &onehot) / n as f64;
            let gw = xs.t().dot(&g) + &(&weight * opts.l2);
            let gb = g.sum_axis(Axis(0));
            weight.scaled_add(-opts.learning_rate, &gw);
            bias.scaled_add(-opts.learning_rate, &gb);
        }
        Ok(LinearProbe { mean, std, weight, bias })
    }

    pub fn predict(&self, x: &Array2<f64>) -> Vec<usize> {
        let z = ((x - &self.mean) / &self.std).dot(&self.weight) + &self.bias;
        z.rows()
            .into_iter()
            .map(|r| crate::mil::argmax(&r.to_vec()))
            .collect()
    }

    pub fn accuracy(&self, x: &Array2<f64>, y: &[usize]) -> f64 {
        let pred = self.predict(x);
        let correct = pred.iter().zip(y).filter(|(a, b)| a == b).count();
        correct as f64 / y.len().max(1) as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn separates_linearly_separable_data() {
        let x = array![[0.0, 5.0], [1.0, 4.0], [0.5, 6.0], [10.0, 5.0], [11.0, 4.0], [9.5, 6.0]];
        let y = [0, 0, 0, 1, 1, 1];
        let probe = LinearProbe::fit(&x, &y, 2, ProbeOptions::default()).unwrap();
        assert_eq!(probe.accuracy(&x, &y), 1.0);
    }

    #[test]
    fn constant_features_fall_back_to_majority() {
        let x = Array2::from_elem((5, 3), 2.0);
        let y = [1, 1, 1, 0, 0];
        let probe = LinearProbe::fit(&x, &y, 2, ProbeOptions::default()).unwrap();
        assert_eq!(probe.predict(&x), vec![1; 5]);
    }
}
