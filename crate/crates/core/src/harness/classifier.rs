//! Frozen multinomial-logistic classifier used to score reconstructions.

use serde::{Deserialize, Serialize};

use crate::error::{ensure_len, Error, Result};
use crate::mathcore::{softmax, Matrix, Rng};

const CLASSES: usize = 10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Trained {
    weights: Matrix,
    biases: Vec<f64>,
}

/// Softmax regression on raw pixels. Starts untrained; [`Self::fit`] trains
/// it once and it is read-only afterwards.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SurrogateClassifier {
    trained: Option<Trained>,
}

impl SurrogateClassifier {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn is_trained(&self) -> bool {
        self.trained.is_some()
    }

    /// Plain SGD over shuffled epochs, step size `0.1 / (1 + epoch)`, with a
    /// small L2 penalty. Deterministic given `seed`.
    pub fn fit(&mut self, images: &[Vec<f64>], labels: &[u8], epochs: usize, seed: u64) -> Result<()> {
        if self.trained.is_some() {
            return Err(Error::State("classifier is frozen once trained".into()));
        }
        ensure_len("classifier labels", labels.len(), images.len())?;
        let dim = images
            .first()
            .map(Vec::len)
            .ok_or_else(|| Error::invalid("no training images"))?;
        if labels.iter().any(|&l| usize::from(l) >= CLASSES) {
            return Err(Error::invalid("labels must be digits 0-9"));
        }
        let mut w = Matrix::zeros(CLASSES, dim);
        let mut b = vec![0.0; CLASSES];
        let mut rng = Rng::new(seed, 5);
        let mut order: Vec<usize> = (0..images.len()).collect();
        let l2 = 1e-4;
        for epoch in 0..epochs {
            rng.shuffle(&mut order);
            let lr = 0.1 / (1.0 + epoch as f64);
            for &n in &order {
                let x = &images[n];
                ensure_len("classifier input", x.len(), dim)?;
                let mut logits = w.mul_vec(x);
                for (o, bias) in logits.iter_mut().zip(&b) {
                    *o += bias;
                }
                let mut g = softmax(&logits);
                g[usize::from(labels[n])] -= 1.0;
                for (c, &gc) in g.iter().enumerate() {
                    let row = w.row_mut(c);
                    for (wj, &xj) in row.iter_mut().zip(x) {
                        *wj -= lr * (gc * xj + l2 * *wj);
                    }
                    b[c] -= lr * gc;
                }
            }
        }
        self.trained = Some(Trained { weights: w, biases: b });
        Ok(())
    }

    pub fn predict(&self, image: &[f64]) -> Result<usize> {
        let t = self
            .trained
            .as_ref()
            .ok_or_else(|| Error::State("classifier has not been trained".into()))?;
        ensure_len("classifier input", image.len(), t.weights.cols())?;
        let logits = t.weights.mul_vec(image);
        let mut best = 0;
        let mut best_v = f64::NEG_INFINITY;
        for (c, (l, bias)) in logits.iter().zip(&t.biases).enumerate() {
            if l + bias > best_v {
                best_v = l + bias;
                best = c;
            }
        }
        Ok(best)
    }
}

/// Fraction of `reconstructions` the frozen classifier assigns to `labels`.
pub fn evaluate_classifier(
    classifier: &SurrogateClassifier,
    reconstructions: &[Vec<f64>],
    labels: &[u8],
) -> Result<f64> {
    ensure_len("labels", labels.len(), reconstructions.len())?;
    if reconstructions.is_empty() {
        return Err(Error::invalid("no reconstructions to classify"));
    }
    let mut correct = 0;
    for (img, &l) in reconstructions.iter().zip(labels) {
        if classifier.predict(img)? == usize::from(l) {
            correct += 1;
        }
    }
    Ok(correct as f64 / reconstructions.len() as f64)
}
