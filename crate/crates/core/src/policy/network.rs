//! Feedforward network with a point-pooling input layer, three output heads
//! and hand-written backpropagation. All parameters live in one flat vector.

use nalgebra::{DMatrix, DMatrixView, DVectorView};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};


use super::features::FeatureVector;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Architecture {
    pub flat_inputs: usize,
    /// Width of the shared per-point map (0 disables the point input).
    pub point_features: usize,
    pub hidden: Vec<usize>,
    pub dof: usize,
}

impl Architecture {
    pub fn outputs(&self) -> usize {
        6 + self.dof
    }

    fn trunk_inputs(&self) -> usize {
        self.flat_inputs + self.point_features
    }

    /// `(rows, cols)` of every weight matrix; each is followed by its bias.
    /// Order: point map, trunk layers, translation, rotation and finger heads.
    fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let mut shapes = Vec::new();
        if self.point_features > 0 {
            shapes.push((self.point_features, 3));
        }
        let mut fan_in = self.trunk_inputs();
        for &h in &self.hidden {
            shapes.push((h, fan_in));
            fan_in = h;
        }
        shapes.extend([(3, fan_in), (3, fan_in), (self.dof, fan_in)]);
        shapes
    }

    pub fn parameter_count(&self) -> usize {
        self.layer_shapes().iter().map(|(r, c)| r * c + r).sum()
    }
}

/// Affine standardization of inputs and outputs, fitted on training data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Normalizer {
    pub flat_mean: Vec<f64>,
    pub flat_std: Vec<f64>,
    pub point_mean: [f64; 3],
    pub point_std: [f64; 3],
    pub out_mean: Vec<f64>,
    pub out_std: Vec<f64>,
}

fn mean_std<'a>(rows: impl Iterator<Item = &'a [f64]> + Clone, dim: usize) -> (Vec<f64>, Vec<f64>) {
    let mut mean = vec![0.0; dim];
    let mut n = 0usize;
    for r in rows.clone() {
        for (m, x) in mean.iter_mut().zip(r) {
            *m += x;
        }
        n += 1;
    }
    let n = n.max(1) as f64;
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; dim];
    for r in rows {
        for ((v, x), m) in var.iter_mut().zip(r).zip(&mean) {
            *v += (x - m) * (x - m);
        }
    }
    let std = var.iter().map(|v| (v / n).sqrt()).map(|s| if s < 1e-6 { 1.0 } else { s }).collect();
    (mean, std)
}

impl Normalizer {
    pub fn identity(arch: &Architecture) -> Self {
        Self {
            flat_mean: vec![0.0; arch.flat_inputs],
            flat_std: vec![1.0; arch.flat_inputs],
            point_mean: [0.0; 3],
            point_std: [1.0; 3],
            out_mean: vec![0.0; arch.outputs()],
            out_std: vec![1.0; arch.outputs()],
        }
    }

    pub fn fit(arch: &Architecture, inputs: &[FeatureVector], targets: &[Vec<f64>]) -> Self {
        let (flat_mean, flat_std) = mean_std(inputs.iter().map(|f| f.flat.as_slice()), arch.flat_inputs);
        let pts: Vec<[f64; 3]> = inputs.iter().flat_map(|f| f.points.iter().map(|p| [p.x, p.y, p.z])).collect();
        let (pm, ps) = mean_std(pts.iter().map(|p| p.as_slice()), 3);
        let (out_mean, out_std) = mean_std(targets.iter().map(|t| t.as_slice()), arch.outputs());
        Self {
            flat_mean,
            flat_std,
            point_mean: [pm[0], pm[1], pm[2]],
            point_std: [ps[0], ps[1], ps[2]],
            out_mean,
            out_std,
        }
    }
}

/// Network definition plus its flat parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Network {
    pub arch: Architecture,
    pub norm: Normalizer,
    pub params: Vec<f64>,
}

/// Intermediate values of a batched forward pass.
pub struct Forward {
    /// Denormalized outputs, one column per sample.
    pub outputs: DMatrix<f64>,
    /// Normalized points (3 × M) per sample.
    points: Vec<DMatrix<f64>>,
    /// Per sample, per pooled feature: arg-max point, if the pooled value is positive.
    argmax: Vec<Vec<Option<usize>>>,
    /// Trunk activations: input, then after each hidden layer.
    acts: Vec<DMatrix<f64>>,
}

struct Layer<'a> {
    w: DMatrixView<'a, f64>,
    b: DVectorView<'a, f64>,
    offset: usize,
}

impl Network {
    /// He-initialized hidden layers and small heads; deterministic per seed.
    pub fn new(arch: Architecture, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::with_capacity(arch.parameter_count());
        let shapes = arch.layer_shapes();
        let heads = shapes.len() - 3;
        for (i, (rows, cols)) in shapes.iter().enumerate() {
            let gain = if i >= heads { 1.0 } else { 2.0 };
            let n = Normal::new(0.0, (gain / *cols as f64).sqrt()).expect("finite");
            params.extend((0..rows * cols).map(|_| n.sample(&mut rng)));
            params.extend(std::iter::repeat_n(0.0, *rows));
        }
        let norm = Normalizer::identity(&arch);
        Self { arch, norm, params }
    }

    fn layers_of<'a>(&self, params: &'a [f64]) -> Vec<Layer<'a>> {
        let mut off = 0;
        self.arch
            .layer_shapes()
            .into_iter()
            .map(|(r, c)| {
                let w = DMatrixView::from_slice(&params[off..off + r * c], r, c);
                let b = DVectorView::from_slice(&params[off + r * c..off + r * c + r], r);
                let layer = Layer { w, b, offset: off };
                off += r * c + r;
                layer
            })
            .collect()
    }

    pub fn forward(&self, batch: &[&FeatureVector]) -> Forward {
        self.forward_with(&self.params, batch)
    }

    pub fn forward_with(&self, params: &[f64], batch: &[&FeatureVector]) -> Forward {
        let a = &self.arch;
        let n = batch.len();
        let layers = self.layers_of(params);
        let mut li = 0;
        let mut x = DMatrix::zeros(a.trunk_inputs(), n);
        for (j, f) in batch.iter().enumerate() {
            for (i, v) in f.flat.iter().enumerate() {
                x[(i, j)] = (v - self.norm.flat_mean[i]) / self.norm.flat_std[i];
            }
        }
        let mut points = Vec::new();
        let mut argmax = Vec::new();
        if a.point_features > 0 {
            let pl = &layers[0];
            li = 1;
            for (j, f) in batch.iter().enumerate() {
                let m = f.points.len();
                let mut p = DMatrix::zeros(3, m);
                for (k, v) in f.points.iter().enumerate() {
                    for d in 0..3 {
                        p[(d, k)] = (v[d] - self.norm.point_mean[d]) / self.norm.point_std[d];
                    }
                }
                let z = pl.w * &p;
                let mut am = Vec::with_capacity(a.point_features);
                for h in 0..a.point_features {
                    let mut best: Option<(usize, f64)> = None;
                    for k in 0..m {
                        let v = z[(h, k)] + pl.b[h];
                        if v > 0.0 && best.is_none_or(|(_, b)| v > b) {
                            best = Some((k, v));
                        }
                    }
                    x[(a.flat_inputs + h, j)] = best.map_or(0.0, |(_, v)| v);
                    am.push(best.map(|(k, _)| k));
                }
                points.push(p);
                argmax.push(am);
            }
        }
        let mut acts = vec![x];
        for layer in &layers[li..li + a.hidden.len()] {
            let mut z = layer.w * acts.last().expect("input");
            for mut col in z.column_iter_mut() {
                col += &layer.b;
            }
            z.apply(|v| *v = v.max(0.0));
            acts.push(z);
        }
        let last = acts.last().expect("trunk");
        let mut outputs = DMatrix::zeros(a.outputs(), n);
        let mut row = 0;
        for head in &layers[li + a.hidden.len()..] {
            let mut u = head.w * last;
            for mut col in u.column_iter_mut() {
                col += &head.b;
            }
            outputs.rows_mut(row, u.nrows()).copy_from(&u);
            row += u.nrows();
        }
        for (i, mut r) in outputs.row_iter_mut().enumerate() {
            let (m, s) = (self.norm.out_mean[i], self.norm.out_std[i]);
            r.apply(|v| *v = m + s * *v);
        }
        Forward {
            outputs,
            points,
            argmax,
            acts,
        }
    }

    /// One sample's packed output `[Δt, Δr, q]`.
    pub fn predict(&self, f: &FeatureVector) -> Vec<f64> {
        self.forward(&[f]).outputs.column(0).iter().copied().collect()
    }

    /// Gradient of `Σ_j ⟨d_out[:, j], outputs[:, j]⟩` with respect to the parameters.
    pub fn backward(&self, fwd: &Forward, d_out: &DMatrix<f64>) -> Vec<f64> {
        self.backward_with(&self.params, fwd, d_out)
    }

    pub fn backward_with(&self, params: &[f64], fwd: &Forward, d_out: &DMatrix<f64>) -> Vec<f64> {
        let a = &self.arch;
        let layers = self.layers_of(params);
        let mut grad = vec![0.0; params.len()];
        let mut du = d_out.clone();
        for (i, mut r) in du.row_iter_mut().enumerate() {
            let s = self.norm.out_std[i];
            r.apply(|v| *v *= s);
        }
        let li = usize::from(a.point_features > 0);
        let last = fwd.acts.last().expect("trunk");
        let mut da = DMatrix::zeros(last.nrows(), last.ncols());
        let mut row = 0;
        for head in &layers[li + a.hidden.len()..] {
            let rows = head.w.nrows();
            let dz = du.rows(row, rows);
            write_dense_grad(&mut grad, head, &dz, last);
            da += head.w.tr_mul(&dz);
            row += rows;
        }
        for (k, layer) in layers[li..li + a.hidden.len()].iter().enumerate().rev() {
            let out = &fwd.acts[k + 1];
            let mut dz = da;
            dz.zip_apply(out, |g, o| {
                if o <= 0.0 {
                    *g = 0.0
                }
            });
            write_dense_grad(&mut grad, layer, &dz.as_view(), &fwd.acts[k]);
            da = layer.w.tr_mul(&dz);
        }
        if a.point_features > 0 {
            let pl = &layers[0];
            let (wo, bo) = (pl.offset, pl.offset + 3 * a.point_features);
            for (j, am) in fwd.argmax.iter().enumerate() {
                for (h, best) in am.iter().enumerate() {
                    let Some(k) = best else { continue };
                    let g = da[(a.flat_inputs + h, j)];
                    for d in 0..3 {
                        grad[wo + d * a.point_features + h] += g * fwd.points[j][(d, *k)];
                    }
                    grad[bo + h] += g;
                }
            }
        }
        grad
    }
}

fn write_dense_grad(grad: &mut [f64], layer: &Layer, dz: &DMatrixView<f64>, input: &DMatrix<f64>) {
    let (r, c) = (layer.w.nrows(), layer.w.ncols());
    let dw = dz * input.transpose();
    for (g, v) in grad[layer.offset..layer.offset + r * c].iter_mut().zip(dw.as_slice()) {
        *g += v;
    }
    for (i, s) in dz.row_iter().map(|row| row.sum()).enumerate() {
        grad[layer.offset + r * c + i] += s;
    }
}

/// First-order adaptive-moment optimizer state.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(n: usize, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            params[i] -= self.lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + self.eps);
        }
    }
}

/// Small random feature vectors for tests.
#[cfg(test)]
pub(crate) fn random_features(rng: &mut impl rand::Rng, flat: usize, points: usize) -> FeatureVector {
    FeatureVector {
        flat: (0..flat).map(|_| rng.random_range(-1.0..1.0)).collect(),
        points: (0..points)
            .map(|_| crate::geometry::Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect(),
    }
}
