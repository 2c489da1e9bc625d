//! Single-layer LSTM with a time-distributed linear head.
//!
//! Gate blocks are stacked in the order input, forget, cell, output, each
//! `h` rows tall:
//!
//! ```text
//! z_t = W x_t + U h_{t-1} + b
//! i, f, o = sigmoid(z_i), sigmoid(z_f), sigmoid(z_o);  g = tanh(z_g)
//! c_t = f * c_{t-1} + i * g
//! h_t = o * tanh(c_t)
//! y_t = w_out . h_t + b_out
//! ```

use ndarray::{s, Array1, Array2, Array3, ArrayView2, ArrayView3, Axis, Zip};
use rand::Rng;

use super::SeqnetError;
use crate::rng;

/// Trainable parameters of a `d`-input, `h`-unit LSTM plus the scalar head.
pub fn count_params(d: usize, h: usize) -> usize {
    4 * (h * d + h * h + h) + h + 1
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmWeights {
    w: Array2<f64>,
    u: Array2<f64>,
    b: Array1<f64>,
    w_out: Array1<f64>,
    b_out: f64,
    /// Bumped on every mutable access; caches remember the value they saw.
    generation: u64,
}

impl LstmWeights {
    pub fn zeros(d: usize, h: usize) -> Self {
        Self {
            w: Array2::zeros((4 * h, d)),
            u: Array2::zeros((4 * h, h)),
            b: Array1::zeros(4 * h),
            w_out: Array1::zeros(h),
            b_out: 0.0,
            generation: 0,
        }
    }

    /// Uniform `[-1/sqrt(h), 1/sqrt(h)]` matrices, zero biases except a
    /// forget-gate bias of 1.
    pub fn init(d: usize, h: usize, seed: u64) -> Self {
        let mut rng = rng::stream(seed, &[0x1A17]);
        let bound = 1.0 / (h as f64).sqrt();
        let mut draw = |_: (usize, usize)| rng.gen_range(-bound..=bound);
        let w = Array2::from_shape_fn((4 * h, d), &mut draw);
        let u = Array2::from_shape_fn((4 * h, h), &mut draw);
        let w_out = Array1::from_shape_fn(h, |k| draw((k, 0)));
        let mut b = Array1::zeros(4 * h);
        b.slice_mut(s![h..2 * h]).fill(1.0);
        Self {
            w,
            u,
            b,
            w_out,
            b_out: 0.0,
            generation: 0,
        }
    }

    pub fn from_parts(
        w: Array2<f64>,
        u: Array2<f64>,
        b: Array1<f64>,
        w_out: Array1<f64>,
        b_out: f64,
    ) -> Result<Self, SeqnetError> {
        let h = w_out.len();
        let d = w.ncols();
        if h == 0 || d == 0 || w.nrows() != 4 * h || u.dim() != (4 * h, h) || b.len() != 4 * h {
            return Err(SeqnetError::ShapeMismatch(format!(
                "W {:?}, U {:?}, b {}, w_out {}",
                w.dim(),
                u.dim(),
                b.len(),
                h
            )));
        }
        Ok(Self {
            w,
            u,
            b,
            w_out,
            b_out,
            generation: 0,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.w.ncols()
    }

    pub fn hidden_units(&self) -> usize {
        self.w_out.len()
    }

    pub fn w(&self) -> &Array2<f64> {
        &self.w
    }
    pub fn u(&self) -> &Array2<f64> {
        &self.u
    }
    pub fn b(&self) -> &Array1<f64> {
        &self.b
    }
    pub fn w_out(&self) -> &Array1<f64> {
        &self.w_out
    }
    pub fn b_out(&self) -> f64 {
        self.b_out
    }

    pub fn generation(&self) -> u64 {
        self.generation
    }

    /// Parameter blocks in the order W, U, b, w_out, b_out (row-major).
    pub fn blocks(&self) -> [&[f64]; 5] {
        [
            self.w.as_slice().expect("standard layout"),
            self.u.as_slice().expect("standard layout"),
            self.b.as_slice().expect("standard layout"),
            self.w_out.as_slice().expect("standard layout"),
            std::slice::from_ref(&self.b_out),
        ]
    }

    pub fn blocks_mut(&mut self) -> [&mut [f64]; 5] {
        self.generation += 1;
        [
            self.w.as_slice_mut().expect("standard layout"),
            self.u.as_slice_mut().expect("standard layout"),
            self.b.as_slice_mut().expect("standard layout"),
            self.w_out.as_slice_mut().expect("standard layout"),
            std::slice::from_mut(&mut self.b_out),
        ]
    }

    pub fn num_scalars(&self) -> usize {
        self.blocks().iter().map(|b| b.len()).sum()
    }

    fn same_shape(&self, other: &Self) -> bool {
        self.w.dim() == other.w.dim() && self.u.dim() == other.u.dim()
    }
}

/// Per-step activations retained for backpropagation.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    inputs: Array3<f64>,
    /// Activated gates per step, `(n, 4h)` in i, f, g, o order.
    gates: Vec<Array2<f64>>,
    /// Cell states `c_0 .. c_T`.
    cells: Vec<Array2<f64>>,
    /// Hidden states `h_0 .. h_T`.
    hidden: Vec<Array2<f64>>,
    /// `tanh(c_t)` for `t = 1 .. T`.
    cell_tanh: Vec<Array2<f64>>,
    outputs: Array3<f64>,
    generation: u64,
}

impl ForwardCache {
    pub fn outputs(&self) -> &Array3<f64> {
        &self.outputs
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Run a batch `(n, T, d)` through the network; returns `(n, T, 1)` predictions.
pub fn forward(
    weights: &LstmWeights,
    batch: ArrayView3<f64>,
) -> Result<(Array3<f64>, ForwardCache), SeqnetError> {
    let (n, steps, d) = batch.dim();
    if d != weights.input_dim() {
        return Err(SeqnetError::ShapeMismatch(format!(
            "batch has {d} channels, network expects {}",
            weights.input_dim()
        )));
    }
    let h = weights.hidden_units();
    let w_t = weights.w.t();
    let u_t = weights.u.t();

    let mut gates = Vec::with_capacity(steps);
    let mut cells = Vec::with_capacity(steps + 1);
    let mut hidden = Vec::with_capacity(steps + 1);
    let mut cell_tanh = Vec::with_capacity(steps);
    let mut outputs = Array3::zeros((n, steps, 1));
    cells.push(Array2::zeros((n, h)));
    hidden.push(Array2::zeros((n, h)));

    for t in 0..steps {
        let x_t = batch.index_axis(Axis(1), t);
        let mut z = x_t.dot(&w_t) + hidden[t].dot(&u_t);
        z += &weights.b;
        for mut row in z.rows_mut() {
            row.slice_mut(s![..2 * h]).mapv_inplace(sigmoid);
            row.slice_mut(s![2 * h..3 * h]).mapv_inplace(f64::tanh);
            row.slice_mut(s![3 * h..]).mapv_inplace(sigmoid);
        }
        let mut c = Array2::zeros((n, h));
        Zip::from(&mut c)
            .and(&cells[t])
            .and(z.slice(s![.., ..h]))
            .and(z.slice(s![.., h..2 * h]))
            .and(z.slice(s![.., 2 * h..3 * h]))
            .for_each(|c, &cp, &i, &f, &g| *c = f * cp + i * g);
        let tc = c.mapv(f64::tanh);
        let hs = &z.slice(s![.., 3 * h..]) * &tc;
        let y = hs.dot(&weights.w_out) + weights.b_out;
        outputs.slice_mut(s![.., t, 0]).assign(&y);
        gates.push(z);
        cells.push(c);
        hidden.push(hs);
        cell_tanh.push(tc);
    }
    let cache = ForwardCache {
        inputs: batch.to_owned(),
        gates,
        cells,
        hidden,
        cell_tanh,
        outputs: outputs.clone(),
        generation: weights.generation,
    };
    Ok((outputs, cache))
}

/// Predict one sequence `(T, d)`.
pub fn predict_sequence(weights: &LstmWeights, seq: ArrayView2<f64>) -> Result<Vec<f64>, SeqnetError> {
    let batch = seq.insert_axis(Axis(0));
    let (y, _) = forward(weights, batch)?;
    Ok(y.iter().copied().collect())
}

/// Mean over all entries of the squared difference.
pub fn mse_loss(pred: &Array3<f64>, target: &Array3<f64>) -> Result<f64, SeqnetError> {
    if pred.dim() != target.dim() {
        return Err(SeqnetError::ShapeMismatch(format!(
            "prediction {:?} vs target {:?}",
            pred.dim(),
            target.dim()
        )));
    }
    if pred.is_empty() {
        return Ok(0.0);
    }
    let sum: f64 = Zip::from(pred)
        .and(target)
        .fold(0.0, |acc, &p, &t| acc + (p - t) * (p - t));
    Ok(sum / pred.len() as f64)
}

/// Exact gradient of [`mse_loss`] with respect to every weight, by
/// backpropagation through time.
pub fn backward(
    weights: &LstmWeights,
    cache: &ForwardCache,
    target: &Array3<f64>,
) -> Result<LstmWeights, SeqnetError> {
    if cache.generation != weights.generation || cache.gates.first().map(|g| g.ncols()) != Some(4 * weights.hidden_units()) {
        return Err(SeqnetError::StaleCache);
    }
    if target.dim() != cache.outputs.dim() {
        return Err(SeqnetError::ShapeMismatch(format!(
            "target {:?} vs outputs {:?}",
            target.dim(),
            cache.outputs.dim()
        )));
    }
    let (n, steps, _) = cache.inputs.dim();
    let h = weights.hidden_units();
    let scale = 2.0 / (n * steps) as f64;
    let dy = (&cache.outputs - target) * scale;

    let mut grads = LstmWeights::zeros(weights.input_dim(), h);
    let mut dh_next = Array2::<f64>::zeros((n, h));
    let mut dc_next = Array2::<f64>::zeros((n, h));
    let mut dz = Array2::<f64>::zeros((n, 4 * h));

    for t in (0..steps).rev() {
        let dy_t = dy.slice(s![.., t, 0]);
        let h_t = &cache.hidden[t + 1];
        grads.w_out += &h_t.t().dot(&dy_t);
        grads.b_out += dy_t.sum();

        // dh = dy_t w_out^T + dh_next
        let mut dh = dh_next;
        Zip::from(dh.rows_mut()).and(&dy_t).for_each(|mut row, &g| {
            row.scaled_add(g, &weights.w_out);
        });

        let gate = &cache.gates[t];
        let c_prev = &cache.cells[t];
        let tc = &cache.cell_tanh[t];
        let mut dc = Array2::<f64>::zeros((n, h));
        for r in 0..n {
            for k in 0..h {
                let (i, f, g, o) = (gate[[r, k]], gate[[r, h + k]], gate[[r, 2 * h + k]], gate[[r, 3 * h + k]]);
                let dh_rk = dh[[r, k]];
                let tck = tc[[r, k]];
                let dc_rk = dh_rk * o * (1.0 - tck * tck) + dc_next[[r, k]];
                dz[[r, k]] = dc_rk * g * i * (1.0 - i);
                dz[[r, h + k]] = dc_rk * c_prev[[r, k]] * f * (1.0 - f);
                dz[[r, 2 * h + k]] = dc_rk * i * (1.0 - g * g);
                dz[[r, 3 * h + k]] = dh_rk * tck * o * (1.0 - o);
                dc[[r, k]] = dc_rk * f;
            }
        }
        let x_t = cache.inputs.index_axis(Axis(1), t);
        grads.w += &dz.t().dot(&x_t);
        grads.u += &dz.t().dot(&cache.hidden[t]);
        grads.b += &dz.sum_axis(Axis(0));
        dh_next = dz.dot(&weights.u);
        dc_next = dc;
    }
    Ok(grads)
}

impl LstmWeights {
    /// Check that `grads` was produced for a network of this shape.
    pub(crate) fn check_like(&self, grads: &LstmWeights) -> Result<(), SeqnetError> {
        if self.same_shape(grads) {
            Ok(())
        } else {
            Err(SeqnetError::ShapeMismatch("gradient shape differs from weights".into()))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn parameter_counts() {
        assert_eq!(count_params(2, 1000), 4_013_001);
        assert_eq!(count_params(1, 1), 14);
        assert_eq!(count_params(2, 64), 17_217);
    }

    proptest! {
        #[test]
        fn count_matches_per_matrix_tally(d in 1usize..6, h in 1usize..40) {
            let w = LstmWeights::init(d, h, 1);
            // Independent tally: four gates each own an (h x d) input matrix,
            // an (h x h) recurrent matrix and h biases; the head owns h + 1.
            let per_gate = h * d + h * h + h;
            prop_assert_eq!(w.num_scalars(), 4 * per_gate + h + 1);
            prop_assert_eq!(count_params(d, h), w.num_scalars());
        }
    }

    #[test]
    fn init_rules() {
        let w = LstmWeights::init(2, 16, 7);
        assert_eq!(w.num_scalars(), count_params(2, 16));
        assert!(w.b().slice(s![16..32]).iter().all(|&v| v == 1.0));
        assert!(w.b().slice(s![..16]).iter().all(|&v| v == 0.0));
        assert!(w.b().slice(s![32..]).iter().all(|&v| v == 0.0));
        let bound = 0.25;
        assert!(w.w().iter().chain(w.u().iter()).chain(w.w_out().iter()).all(|v| v.abs() <= bound));
        assert_eq!(w, LstmWeights::init(2, 16, 7));
        assert_ne!(w, LstmWeights::init(2, 16, 8));
    }

    #[test]
    fn output_shapes_and_zero_network() {
        let mut w = LstmWeights::zeros(2, 8);
        w.blocks_mut()[4][0] = 0.3;
        let x = Array3::from_elem((4, 30, 2), 0.5);
        let (y, _) = forward(&w, x.view()).unwrap();
        assert_eq!(y.dim(), (4, 30, 1));
        assert!(y.iter().all(|&v| v == 0.3));
        let bad = Array3::<f64>::zeros((1, 5, 3));
        assert!(matches!(forward(&w, bad.view()), Err(SeqnetError::ShapeMismatch(_))));
    }

    #[test]
    fn output_bounded_by_head_norm() {
        let w = LstmWeights::init(2, 8, 3);
        let x = Array3::from_shape_fn((3, 12, 2), |(a, b, c)| ((a * 7 + b * 3 + c) as f64).sin() * 50.0);
        let (y, _) = forward(&w, x.view()).unwrap();
        let bound = w.w_out().iter().map(|v| v.abs()).sum::<f64>() + w.b_out().abs();
        assert!(y.iter().all(|v| v.abs() <= bound));
    }

    #[test]
    fn length_agnostic() {
        let w = LstmWeights::init(2, 8, 3);
        for t in [23, 30] {
            let (y, _) = forward(&w, Array3::from_elem((2, t, 2), 0.1).view()).unwrap();
            assert_eq!(y.dim(), (2, t, 1));
        }
    }

    #[test]
    fn mse_examples() {
        let z = Array3::<f64>::zeros((1, 2, 1));
        let o = Array3::<f64>::ones((1, 2, 1));
        assert_eq!(mse_loss(&z, &z).unwrap(), 0.0);
        assert_eq!(mse_loss(&z, &o).unwrap(), 1.0);
        let p = Array3::from_shape_vec((1, 2, 1), vec![0.0, 2.0]).unwrap();
        assert_eq!(mse_loss(&p, &o).unwrap(), 1.0);
        assert!(mse_loss(&z, &Array3::zeros((2, 2, 1))).is_err());
    }

    #[test]
    fn zero_residual_zero_gradient() {
        let w = LstmWeights::init(2, 8, 11);
        let x = Array3::from_shape_fn((3, 5, 2), |(a, b, c)| (a + 2 * b + c) as f64 * 0.1);
        let (y, cache) = forward(&w, x.view()).unwrap();
        let g = backward(&w, &cache, &y).unwrap();
        for block in g.blocks() {
            assert!(block.iter().all(|v| v.abs() <= 1e-12));
        }
    }

    #[test]
    fn gradient_linear_in_residual() {
        let w = LstmWeights::init(2, 8, 11);
        let x = Array3::from_shape_fn((3, 5, 2), |(a, b, c)| (a + 2 * b + c) as f64 * 0.1);
        let (y, cache) = forward(&w, x.view()).unwrap();
        let target = y.mapv(|v| v - 0.3);
        let target2 = y.mapv(|v| v - 0.6);
        let g1 = backward(&w, &cache, &target).unwrap();
        let g2 = backward(&w, &cache, &target2).unwrap();
        for (a, b) in g1.blocks().iter().zip(g2.blocks()) {
            for (x, y) in a.iter().zip(b) {
                assert!((2.0 * x - y).abs() <= 1e-12 * y.abs().max(1e-12));
            }
        }
    }

    #[test]
    fn stale_cache_rejected() {
        let mut w = LstmWeights::init(2, 4, 1);
        let x = Array3::<f64>::zeros((1, 3, 2));
        let (y, cache) = forward(&w, x.view()).unwrap();
        w.blocks_mut()[0][0] += 1.0;
        assert!(matches!(backward(&w, &cache, &y), Err(SeqnetError::StaleCache)));
    }
}
