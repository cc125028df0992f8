//! Shared fixtures and independent scalar-loop oracles.
#![allow(dead_code)]

use fusionkit::autodiff::{Graph, Tensor};
use fusionkit::decoders::Decoder;
use fusionkit::fusion::Afg;
use fusionkit::params::ParamStore;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn random_tensor<R: Rng>(rng: &mut R, rows: usize, cols: usize, scale: f64) -> Tensor {
    Tensor::new(rows, cols, (0..rows * cols).map(|_| rng.random_range(-scale..=scale)).collect()).unwrap()
}

/// Overwrites every parameter with uniform noise in `[-scale, scale]`.
pub fn scramble<R: Rng>(store: &mut ParamStore, rng: &mut R, scale: f64) {
    for t in store.tensors_mut() {
        for x in t.data_mut() {
            *x = rng.random_range(-scale..=scale);
        }
    }
}

pub struct AfgCase {
    pub store: ParamStore,
    pub afg: Afg,
    pub inputs: Vec<Tensor>,
}

impl AfgCase {
    pub fn random(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.random_range(1..=5);
        let dim = rng.random_range(1..=6);
        let batch = rng.random_range(1..=4);
        let dims: Vec<usize> = (0..n).map(|_| rng.random_range(1..=6)).collect();
        Self::with_dims(&mut rng, &dims, dim, batch)
    }

    pub fn with_dims<R: Rng>(rng: &mut R, dims: &[usize], dim: usize, batch: usize) -> Self {
        let mut store = ParamStore::new();
        let afg = Afg::new(&mut store, "afg", dims, dim, rng).unwrap();
        scramble(&mut store, rng, 2.0);
        let inputs = dims.iter().map(|&d| random_tensor(rng, batch, d, 2.0)).collect();
        AfgCase { store, afg, inputs }
    }

    pub fn forward(&self) -> (Tensor, Tensor) {
        let mut g = Graph::new();
        let p = self.store.bind_frozen(&mut g);
        let xs: Vec<_> = self.inputs.iter().map(|t| g.constant(t.clone())).collect();
        let out = self.afg.forward(&mut g, &p, &xs).unwrap();
        (g.value(out.output).clone(), g.value(out.alpha).clone())
    }

    /// Aligned projections `p[n][b][k]`, by explicit loops.
    pub fn projections(&self) -> Vec<Vec<Vec<f64>>> {
        let d = self.afg.dim;
        self.inputs
            .iter()
            .zip(&self.afg.align)
            .map(|(x, aff)| {
                let (w, bias) = (self.store.get(aff.weight), self.store.get(aff.bias));
                (0..x.rows())
                    .map(|b| {
                        (0..d)
                            .map(|k| bias.get(0, k) + (0..x.cols()).map(|i| x.get(b, i) * w.get(i, k)).sum::<f64>())
                            .collect()
                    })
                    .collect()
            })
            .collect()
    }

    /// Scalar-loop reference for the whole block: `(output[b][k], alpha[b][n])`.
    pub fn oracle(&self) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let p = self.projections();
        let n = p.len();
        let batch = self.inputs[0].rows();
        let d = self.afg.dim;
        let (wa, ba) = (self.store.get(self.afg.w_alpha), self.store.get(self.afg.b_alpha));
        let mut outs = Vec::new();
        let mut alphas = Vec::new();
        for b in 0..batch {
            let s: Vec<f64> = (0..n)
                .map(|j| ba.get(0, j) + (0..d).map(|k| p[j][b][k] * wa.get(k, j)).sum::<f64>())
                .collect();
            let m = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = s.iter().map(|v| (v - m).exp()).sum();
            let a: Vec<f64> = s.iter().map(|v| (v - m).exp() / z).collect();
            outs.push((0..d).map(|k| (0..n).map(|j| a[j] * p[j][b][k]).sum()).collect());
            alphas.push(a);
        }
        (outs, alphas)
    }

    /// The same block with inputs (and their parameters) reordered so that
    /// new input `i` is old input `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> AfgCase {
        let dims: Vec<usize> = perm.iter().map(|&j| self.afg.input_dims[j]).collect();
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let afg = Afg::new(&mut store, "afg", &dims, self.afg.dim, &mut rng).unwrap();
        for (i, &j) in perm.iter().enumerate() {
            *store.get_mut(afg.align[i].weight) = self.store.get(self.afg.align[j].weight).clone();
            *store.get_mut(afg.align[i].bias) = self.store.get(self.afg.align[j].bias).clone();
        }
        let (wa, ba) = (self.store.get(self.afg.w_alpha).clone(), self.store.get(self.afg.b_alpha).clone());
        for (i, &j) in perm.iter().enumerate() {
            for k in 0..self.afg.dim {
                store.get_mut(afg.w_alpha).set(k, i, wa.get(k, j));
            }
            store.get_mut(afg.b_alpha).set(0, i, ba.get(0, j));
        }
        AfgCase {
            store,
            afg,
            inputs: perm.iter().map(|&j| self.inputs[j].clone()).collect(),
        }
    }
}

/// Checks convexity, alpha normalisation, the loop oracle and equivariance
/// under a seeded random permutation. Returns the first violation.
pub fn check_afg_invariants(seed: u64) -> Result<(), String> {
    use rand::seq::SliceRandom;
    let case = AfgCase::random(seed);
    let (out, alpha) = case.forward();
    let (ref_out, ref_alpha) = case.oracle();
    let p = case.projections();
    for b in 0..out.rows() {
        let total: f64 = alpha.row_slice(b).iter().sum();
        if (total - 1.0).abs() > 1e-12 || alpha.row_slice(b).iter().any(|&a| a < 0.0) {
            return Err(format!("seed {seed}: alpha row {b} = {:?}", alpha.row_slice(b)));
        }
        for k in 0..out.cols() {
            let lo = p.iter().map(|pn| pn[b][k]).fold(f64::INFINITY, f64::min);
            let hi = p.iter().map(|pn| pn[b][k]).fold(f64::NEG_INFINITY, f64::max);
            let y = out.get(b, k);
            if y < lo - 1e-12 || y > hi + 1e-12 {
                return Err(format!("seed {seed}: output {y} outside [{lo}, {hi}]"));
            }
            if (y - ref_out[b][k]).abs() > 1e-12 {
                return Err(format!("seed {seed}: output {y} vs oracle {}", ref_out[b][k]));
            }
        }
        for (n, &a) in ref_alpha[b].iter().enumerate() {
            if (alpha.get(b, n) - a).abs() > 1e-12 {
                return Err(format!("seed {seed}: alpha {} vs oracle {a}", alpha.get(b, n)));
            }
        }
    }
    let mut perm: Vec<usize> = (0..case.inputs.len()).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 0xa5a5));
    let (pout, palpha) = case.permuted(&perm).forward();
    for b in 0..out.rows() {
        for k in 0..out.cols() {
            if (pout.get(b, k) - out.get(b, k)).abs() > 1e-12 {
                return Err(format!("seed {seed}: permutation {perm:?} changed the output"));
            }
        }
        for (i, &j) in perm.iter().enumerate() {
            if (palpha.get(b, i) - alpha.get(b, j)).abs() > 1e-12 {
                return Err(format!("seed {seed}: permutation {perm:?} did not permute alpha"));
            }
        }
    }
    Ok(())
}

/// Scalar-loop decoder reference: `(logits, probs, valence)` per row.
pub fn decoder_oracle(store: &ParamStore, decoder: &Decoder, h: &Tensor) -> Vec<(Vec<f64>, Vec<f64>, f64)> {
    let heads = decoder.heads();
    let (we, be) = (store.get(heads.w_e), store.get(heads.b_e));
    let (wv, bv) = (store.get(heads.w_v), store.get(heads.b_v));
    let c = we.cols();
    (0..h.rows())
        .map(|b| {
            let row = h.row_slice(b);
            let logits: Vec<f64> = (0..c)
                .map(|j| be.get(0, j) + row.iter().enumerate().map(|(k, x)| x * we.get(k, j)).sum::<f64>())
                .collect();
            let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = logits.iter().map(|l| (l - m).exp()).sum();
            let probs: Vec<f64> = logits.iter().map(|l| (l - m).exp() / z).collect();
            let direct = bv.get(0, 0) + row.iter().enumerate().map(|(k, x)| x * wv.get(k, 0)).sum::<f64>();
            let valence = match decoder {
                Decoder::Baseline(_) => direct,
                Decoder::Jdev(j) => {
                    let (wev, bev) = (store.get(j.w_ev), store.get(j.b_ev));
                    let (wvv, bvv) = (store.get(j.w_vv), store.get(j.b_vv));
                    let ve = (bev.get(0, 0) + logits.iter().enumerate().map(|(k, l)| l * wev.get(k, 0)).sum::<f64>()).tanh();
                    bvv.get(0, 0) + direct * wvv.get(0, 0) + ve * wvv.get(1, 0)
                }
            };
            (logits, probs, valence)
        })
        .collect()
}
