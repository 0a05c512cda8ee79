//! Dense f64 building blocks for the two learned models: a named parameter
//! store with flat addressing, matrix kernels, softmax cross-entropy, the
//! adaptive-moment optimizer, and central-difference gradient verification.
//!
//! Everything is plain row-major `Vec<f64>`; the models are small enough that
//! clarity and exact reproducibility beat vectorization tricks.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::{Error, Result};

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "shape/data mismatch");
        Self { rows, cols, data }
    }

    pub fn randn(rows: usize, cols: usize, sd: f64, rng: &mut ChaCha8Rng) -> Self {
        let mut m = Self::zeros(rows, cols);
        for v in &mut m.data {
            *v = sd * standard_normal(rng);
        }
        m
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn at_mut(&mut self, i: usize, j: usize) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    /// self (m×k) · other (k×n) → m×n
    pub fn matmul(&self, other: &Mat) -> Mat {
        assert_eq!(self.cols, other.rows, "matmul shape mismatch");
        let (m, k, n) = (self.rows, self.cols, other.cols);
        let mut out = Mat::zeros(m, n);
        for i in 0..m {
            for p in 0..k {
                let a = self.data[i * k + p];
                if a == 0.0 {
                    continue;
                }
                let brow = &other.data[p * n..(p + 1) * n];
                let orow = &mut out.data[i * n..(i + 1) * n];
                for j in 0..n {
                    orow[j] += a * brow[j];
                }
            }
        }
        out
    }

    /// selfᵀ · other where self is k×m and other k×n → m×n
    pub fn matmul_tn(&self, other: &Mat) -> Mat {
        assert_eq!(self.rows, other.rows, "matmul_tn shape mismatch");
        let (k, m, n) = (self.rows, self.cols, other.cols);
        let mut out = Mat::zeros(m, n);
        for p in 0..k {
            let arow = &self.data[p * m..(p + 1) * m];
            let brow = &other.data[p * n..(p + 1) * n];
            for i in 0..m {
                let a = arow[i];
                if a == 0.0 {
                    continue;
                }
                let orow = &mut out.data[i * n..(i + 1) * n];
                for j in 0..n {
                    orow[j] += a * brow[j];
                }
            }
        }
        out
    }

    /// self (m×k) · otherᵀ where other is n×k → m×n
    pub fn matmul_nt(&self, other: &Mat) -> Mat {
        assert_eq!(self.cols, other.cols, "matmul_nt shape mismatch");
        let (m, k, n) = (self.rows, self.cols, other.rows);
        let mut out = Mat::zeros(m, n);
        for i in 0..m {
            let arow = &self.data[i * k..(i + 1) * k];
            for j in 0..n {
                let brow = &other.data[j * k..(j + 1) * k];
                let mut acc = 0.0;
                for p in 0..k {
                    acc += arow[p] * brow[p];
                }
                out.data[i * n + j] = acc;
            }
        }
        out
    }

    pub fn transpose(&self) -> Mat {
        let mut out = Mat::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        out
    }

    pub fn add_assign(&mut self, other: &Mat) {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale(&mut self, s: f64) {
        for v in &mut self.data {
            *v *= s;
        }
    }
}

/// Draw one standard normal variate (Box–Muller, deterministic under the rng).
pub fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// A set of named tensors with flat element addressing: the single source of
/// truth for optimizer state, checkpointing, and gradient checking.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Mat>,
    offsets: Vec<usize>,
    total: usize,
}

/// Index of one tensor inside a `ParamStore`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TensorId(pub usize);

impl ParamStore {
    pub fn new() -> Self {
        Self { names: Vec::new(), tensors: Vec::new(), offsets: Vec::new(), total: 0 }
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Mat) -> TensorId {
        self.offsets.push(self.total);
        self.total += tensor.data.len();
        self.names.push(name.into());
        self.tensors.push(tensor);
        TensorId(self.names.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.total
    }

    pub fn is_empty(&self) -> bool {
        self.total == 0
    }

    pub fn tensor_count(&self) -> usize {
        self.tensors.len()
    }

    pub fn name(&self, id: TensorId) -> &str {
        &self.names[id.0]
    }

    pub fn get(&self, id: TensorId) -> &Mat {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: TensorId) -> &mut Mat {
        &mut self.tensors[id.0]
    }

    pub fn find(&self, name: &str) -> Option<TensorId> {
        self.names.iter().position(|n| n == name).map(TensorId)
    }

    /// Same names and shapes, all elements zero. The gradient buffer.
    pub fn zeros_like(&self) -> Self {
        let mut out = Self::new();
        for (name, t) in self.names.iter().zip(&self.tensors) {
            out.add(name.clone(), Mat::zeros(t.rows, t.cols));
        }
        out
    }

    pub fn flat_get(&self, k: usize) -> f64 {
        let (t, e) = self.locate(k);
        self.tensors[t].data[e]
    }

    pub fn flat_set(&mut self, k: usize, v: f64) {
        let (t, e) = self.locate(k);
        self.tensors[t].data[e] = v;
    }

    fn locate(&self, k: usize) -> (usize, usize) {
        assert!(k < self.total, "flat index {k} out of {}", self.total);
        let t = match self.offsets.binary_search(&k) {
            Ok(i) => i,
            Err(i) => i - 1,
        };
        (t, k - self.offsets[t])
    }

    /// Iterate (name, tensor) in insertion order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &Mat)> {
        self.names.iter().map(String::as_str).zip(self.tensors.iter())
    }

    pub fn for_each_tensor_mut(&mut self, mut f: impl FnMut(&str, &mut Mat)) {
        for (name, t) in self.names.iter().zip(self.tensors.iter_mut()) {
            f(name, t);
        }
    }

    pub(crate) fn tensors(&self) -> &[Mat] {
        &self.tensors
    }

    pub(crate) fn tensors_mut(&mut self) -> &mut [Mat] {
        &mut self.tensors
    }
}

impl Default for ParamStore {
    fn default() -> Self {
        Self::new()
    }
}

/// Adaptive-moment estimation over a parameter store.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(lr: f64, param_len: usize) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: vec![0.0; param_len],
            v: vec![0.0; param_len],
        }
    }

    pub fn step(&mut self, params: &mut ParamStore, grads: &ParamStore) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::Contract(format!(
                "optimizer built for {} parameters, got {}/{}",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        self.t += 1;
        let b1t = 1.0 - self.beta1.powi(self.t as i32);
        let b2t = 1.0 - self.beta2.powi(self.t as i32);
        let mut k = 0;
        let grads_t = grads.tensors();
        for (ti, p) in params.tensors_mut().iter_mut().enumerate() {
            for (pv, gv) in p.data.iter_mut().zip(&grads_t[ti].data) {
                self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * gv;
                self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * gv * gv;
                let m_hat = self.m[k] / b1t;
                let v_hat = self.v[k] / b2t;
                *pv -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
                k += 1;
            }
        }
        Ok(())
    }
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Cross-entropy loss of one sample and its gradient w.r.t. the logits.
pub fn cross_entropy(logits: &[f64], label: usize) -> (f64, Vec<f64>) {
    let probs = softmax(logits);
    let loss = -(probs[label].max(1e-300)).ln();
    let mut grad = probs;
    grad[label] -= 1.0;
    (loss, grad)
}

/// Central-difference check of `analytic` gradients at the given flat indices.
///
/// Returns the maximum relative error `|a - n| / max(|a|, |n|)`, falling back
/// to absolute error when both are tiny. `loss` must be a pure function of
/// the parameters.
pub fn grad_check_indices<F>(
    params: &mut ParamStore,
    analytic: &ParamStore,
    indices: &[usize],
    step: f64,
    mut loss: F,
) -> f64
where
    F: FnMut(&ParamStore) -> f64,
{
    let mut worst = 0.0f64;
    for &k in indices {
        let orig = params.flat_get(k);
        params.flat_set(k, orig + step);
        let up = loss(params);
        params.flat_set(k, orig - step);
        let down = loss(params);
        params.flat_set(k, orig);
        let numeric = (up - down) / (2.0 * step);
        let a = analytic.flat_get(k);
        let denom = a.abs().max(numeric.abs());
        let err = if denom > 1e-6 { (a - numeric).abs() / denom } else { (a - numeric).abs() };
        worst = worst.max(err);
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn naive_matmul(a: &Mat, b: &Mat) -> Mat {
        let mut out = Mat::zeros(a.rows, b.cols);
        for i in 0..a.rows {
            for j in 0..b.cols {
                let mut acc = 0.0;
                for p in 0..a.cols {
                    acc += a.at(i, p) * b.at(p, j);
                }
                *out.at_mut(i, j) = acc;
            }
        }
        out
    }

    #[test]
    fn matmul_variants_agree_with_naive() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let (m, k, n) =
                (rng.gen_range(1..8usize), rng.gen_range(1..8usize), rng.gen_range(1..8usize));
            let a = Mat::randn(m, k, 1.0, &mut rng);
            let b = Mat::randn(k, n, 1.0, &mut rng);
            let expect = naive_matmul(&a, &b);
            for (x, y) in a.matmul(&b).data.iter().zip(&expect.data) {
                assert!((x - y).abs() < 1e-12);
            }
            for (x, y) in a.transpose().matmul_tn(&b).data.iter().zip(&expect.data) {
                assert!((x - y).abs() < 1e-12);
            }
            for (x, y) in a.matmul_nt(&b.transpose()).data.iter().zip(&expect.data) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn param_store_flat_addressing_roundtrips() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut store = ParamStore::new();
        store.add("a", Mat::randn(3, 4, 1.0, &mut rng));
        store.add("b", Mat::randn(1, 7, 1.0, &mut rng));
        store.add("c", Mat::randn(5, 2, 1.0, &mut rng));
        assert_eq!(store.len(), 12 + 7 + 10);
        for k in 0..store.len() {
            let v = store.flat_get(k);
            store.flat_set(k, v + 1.0);
            assert_eq!(store.flat_get(k), v + 1.0);
            store.flat_set(k, v);
        }
        let b = store.find("b").unwrap();
        assert_eq!(store.get(b).cols, 7);
    }

    #[test]
    fn adam_minimizes_a_quadratic() {
        let mut store = ParamStore::new();
        store.add("p", Mat::from_vec(1, 4, vec![5.0, -3.0, 2.0, 9.0]));
        let target = [1.0, 1.0, 1.0, 1.0];
        let mut opt = Adam::new(0.05, store.len());
        for _ in 0..2000 {
            let mut grads = store.zeros_like();
            let id = TensorId(0);
            for j in 0..4 {
                grads.get_mut(id).data[j] = 2.0 * (store.get(id).data[j] - target[j]);
            }
            opt.step(&mut store, &grads).unwrap();
        }
        for j in 0..4 {
            assert!((store.get(TensorId(0)).data[j] - 1.0).abs() < 1e-3);
        }
    }

    #[test]
    fn softmax_outputs_are_probabilities() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let logits: Vec<f64> = (0..5).map(|_| rng.gen_range(-30.0..30.0)).collect();
            let p = softmax(&logits);
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(p.iter().all(|&x| x >= 0.0));
        }
    }

    #[test]
    fn cross_entropy_gradient_matches_finite_differences() {
        let mut store = ParamStore::new();
        store.add("logits", Mat::from_vec(1, 4, vec![0.3, -1.2, 0.8, 0.1]));
        let label = 2;
        let logits = store.get(TensorId(0)).data.clone();
        let (_, analytic_vec) = cross_entropy(&logits, label);
        let mut analytic = store.zeros_like();
        analytic.get_mut(TensorId(0)).data = analytic_vec;
        let idx: Vec<usize> = (0..4).collect();
        let err = grad_check_indices(&mut store, &analytic, &idx, 1e-6, |p| {
            cross_entropy(p.get(TensorId(0)).row(0), label).0
        });
        assert!(err < 1e-8, "max relative error {err}");
    }
}
