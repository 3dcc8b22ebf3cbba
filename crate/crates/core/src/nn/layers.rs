//! Layer kernels with hand-written backward passes.
//!
//! Every forward function returns a tape holding what its backward needs.
//! Backward functions accumulate parameter gradients into caller-provided
//! buffers and return input gradients.

use rand::Rng;

use super::ops::{axpy, gemm, gemm_nt, gemm_tn, matvec_cols, matvec_t_cols, outer_cols, sigmoid};

// ---------------------------------------------------------------------------
// 3×3 convolution, stride 2, zero padding 1, followed by ReLU.

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvShape {
    pub cin: usize,
    pub cout: usize,
    pub h: usize,
    pub w: usize,
}

impl ConvShape {
    pub fn out_h(&self) -> usize {
        self.h.div_ceil(2)
    }

    pub fn out_w(&self) -> usize {
        self.w.div_ceil(2)
    }

    fn patch(&self) -> usize {
        self.cin * 9
    }
}

#[derive(Debug, Clone)]
pub struct ConvTape {
    pub shape: ConvShape,
    col: Vec<f64>,
    /// Post-ReLU activations, `cout × out_h × out_w`.
    pub out: Vec<f64>,
}

fn im2col(input: &[f64], s: &ConvShape) -> Vec<f64> {
    let (oh, ow) = (s.out_h(), s.out_w());
    let p = oh * ow;
    let mut col = vec![0.0; s.patch() * p];
    for ci in 0..s.cin {
        let plane = &input[ci * s.h * s.w..(ci + 1) * s.h * s.w];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &mut col[((ci * 9) + ky * 3 + kx) * p..((ci * 9) + ky * 3 + kx + 1) * p];
                for oy in 0..oh {
                    let iy = (2 * oy + ky) as isize - 1;
                    if iy < 0 || iy >= s.h as isize {
                        continue;
                    }
                    let src = &plane[iy as usize * s.w..(iy as usize + 1) * s.w];
                    for ox in 0..ow {
                        let ix = (2 * ox + kx) as isize - 1;
                        if ix >= 0 && ix < s.w as isize {
                            row[oy * ow + ox] = src[ix as usize];
                        }
                    }
                }
            }
        }
    }
    col
}

fn col2im(col: &[f64], s: &ConvShape) -> Vec<f64> {
    let (oh, ow) = (s.out_h(), s.out_w());
    let p = oh * ow;
    let mut out = vec![0.0; s.cin * s.h * s.w];
    for ci in 0..s.cin {
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &col[((ci * 9) + ky * 3 + kx) * p..((ci * 9) + ky * 3 + kx + 1) * p];
                for oy in 0..oh {
                    let iy = (2 * oy + ky) as isize - 1;
                    if iy < 0 || iy >= s.h as isize {
                        continue;
                    }
                    for ox in 0..ow {
                        let ix = (2 * ox + kx) as isize - 1;
                        if ix >= 0 && ix < s.w as isize {
                            out[ci * s.h * s.w + iy as usize * s.w + ix as usize] += row[oy * ow + ox];
                        }
                    }
                }
            }
        }
    }
    out
}

/// `weight` is `cout × cin × 3 × 3`, `input` is `cin × h × w`.
pub fn conv_forward(weight: &[f64], bias: &[f64], input: &[f64], shape: ConvShape) -> ConvTape {
    let col = im2col(input, &shape);
    let p = shape.out_h() * shape.out_w();
    let mut out = vec![0.0; shape.cout * p];
    for (o, chunk) in out.chunks_mut(p).enumerate() {
        chunk.fill(bias[o]);
    }
    gemm(weight, &col, &mut out, shape.cout, shape.patch(), p);
    for v in &mut out {
        *v = v.max(0.0);
    }
    ConvTape { shape, col, out }
}

/// Returns the input gradient when `need_input` is set.
pub fn conv_backward(
    weight: &[f64],
    tape: &ConvTape,
    d_out: &[f64],
    d_weight: &mut [f64],
    d_bias: &mut [f64],
    need_input: bool,
) -> Option<Vec<f64>> {
    let s = tape.shape;
    let p = s.out_h() * s.out_w();
    let d_pre: Vec<f64> = d_out
        .iter()
        .zip(&tape.out)
        .map(|(g, y)| if *y > 0.0 { *g } else { 0.0 })
        .collect();
    for (o, chunk) in d_pre.chunks(p).enumerate() {
        d_bias[o] += chunk.iter().sum::<f64>();
    }
    gemm_nt(&d_pre, &tape.col, d_weight, s.cout, p, s.patch());
    need_input.then(|| {
        let mut d_col = vec![0.0; s.patch() * p];
        gemm_tn(weight, &d_pre, &mut d_col, s.patch(), s.cout, p);
        col2im(&d_col, &s)
    })
}

// ---------------------------------------------------------------------------
// LSTM over one sequence. The input at every step is `[static ‖ x_t]`, where
// the static part (possibly empty) is shared by all steps.

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LstmDims {
    pub static_dim: usize,
    pub input_dim: usize,
    pub hidden: usize,
}

impl LstmDims {
    pub fn x_cols(&self) -> usize {
        self.static_dim + self.input_dim
    }
}

#[derive(Debug, Clone)]
pub struct LstmTape {
    steps: usize,
    /// Per step `[i, f, g, o]` activations, `4H` each.
    gates: Vec<f64>,
    cells: Vec<f64>,
    tanh_cells: Vec<f64>,
    /// Hidden outputs, `T × H`.
    pub hs: Vec<f64>,
}

pub struct LstmWeights<'a> {
    pub w_x: &'a [f64],
    pub w_h: &'a [f64],
    pub b: &'a [f64],
}

pub struct LstmGradsMut<'a> {
    pub w_x: &'a mut [f64],
    pub w_h: &'a mut [f64],
    pub b: &'a mut [f64],
}

pub fn lstm_forward(w: &LstmWeights, dims: LstmDims, stat: &[f64], xs: &[f64]) -> LstmTape {
    let h = dims.hidden;
    let g4 = 4 * h;
    let stride = dims.x_cols();
    debug_assert_eq!(stat.len(), dims.static_dim);
    let steps = xs.len() / dims.input_dim.max(1);
    let mut base = w.b.to_vec();
    if dims.static_dim > 0 {
        matvec_cols(w.w_x, stride, 0, stat, &mut base);
    }
    let mut gates = vec![0.0; steps * g4];
    let mut cells = vec![0.0; steps * h];
    let mut tanh_cells = vec![0.0; steps * h];
    let mut hs = vec![0.0; steps * h];
    for t in 0..steps {
        let z = &mut gates[t * g4..(t + 1) * g4];
        z.copy_from_slice(&base);
        let x = &xs[t * dims.input_dim..(t + 1) * dims.input_dim];
        matvec_cols(w.w_x, stride, dims.static_dim, x, z);
        if t > 0 {
            let prev = &hs[(t - 1) * h..t * h];
            matvec_cols(w.w_h, h, 0, prev, z);
        }
        for k in 0..h {
            z[k] = sigmoid(z[k]);
            z[h + k] = sigmoid(z[h + k]);
            z[2 * h + k] = z[2 * h + k].tanh();
            z[3 * h + k] = sigmoid(z[3 * h + k]);
        }
        for k in 0..h {
            let c_prev = if t > 0 { cells[(t - 1) * h + k] } else { 0.0 };
            let c = z[h + k] * c_prev + z[k] * z[2 * h + k];
            cells[t * h + k] = c;
            let tc = c.tanh();
            tanh_cells[t * h + k] = tc;
            hs[t * h + k] = z[3 * h + k] * tc;
        }
    }
    LstmTape {
        steps,
        gates,
        cells,
        tanh_cells,
        hs,
    }
}

/// Backpropagation through time. `d_hs` is `T × H`. Returns the gradients of
/// the static input and of the per-step inputs (`T × input_dim`).
pub fn lstm_backward(
    w: &LstmWeights,
    dims: LstmDims,
    stat: &[f64],
    xs: &[f64],
    tape: &LstmTape,
    d_hs: &[f64],
    g: &mut LstmGradsMut,
) -> (Vec<f64>, Vec<f64>) {
    let h = dims.hidden;
    let g4 = 4 * h;
    let stride = dims.x_cols();
    let mut d_xs = vec![0.0; xs.len()];
    let mut dz_sum = vec![0.0; g4];
    let mut dh_next = vec![0.0; h];
    let mut dc_next = vec![0.0; h];
    let mut dz = vec![0.0; g4];
    for t in (0..tape.steps).rev() {
        let gate = &tape.gates[t * g4..(t + 1) * g4];
        for k in 0..h {
            let (i, f, gg, o) = (gate[k], gate[h + k], gate[2 * h + k], gate[3 * h + k]);
            let tc = tape.tanh_cells[t * h + k];
            let dh = d_hs[t * h + k] + dh_next[k];
            let d_o = dh * tc;
            let dc = dh * o * (1.0 - tc * tc) + dc_next[k];
            let c_prev = if t > 0 { tape.cells[(t - 1) * h + k] } else { 0.0 };
            dz[k] = dc * gg * i * (1.0 - i);
            dz[h + k] = dc * c_prev * f * (1.0 - f);
            dz[2 * h + k] = dc * i * (1.0 - gg * gg);
            dz[3 * h + k] = d_o * o * (1.0 - o);
            dc_next[k] = dc * f;
        }
        let x = &xs[t * dims.input_dim..(t + 1) * dims.input_dim];
        outer_cols(g.w_x, stride, dims.static_dim, &dz, x);
        matvec_t_cols(w.w_x, stride, dims.static_dim, &dz, &mut d_xs[t * dims.input_dim..(t + 1) * dims.input_dim]);
        dh_next.fill(0.0);
        if t > 0 {
            outer_cols(g.w_h, h, 0, &dz, &tape.hs[(t - 1) * h..t * h]);
            matvec_t_cols(w.w_h, h, 0, &dz, &mut dh_next);
        }
        axpy(1.0, &dz, &mut dz_sum);
    }
    axpy(1.0, &dz_sum, g.b);
    let mut d_stat = vec![0.0; dims.static_dim];
    if dims.static_dim > 0 {
        outer_cols(g.w_x, stride, 0, &dz_sum, stat);
        matvec_t_cols(w.w_x, stride, 0, &dz_sum, &mut d_stat);
    }
    (d_stat, d_xs)
}

/// Incremental LSTM state for free-running generation.
#[derive(Debug, Clone)]
pub struct LstmState {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
    /// `b + W_x[:, static] · static`, fixed for the whole rollout.
    base: Vec<f64>,
}

impl LstmState {
    pub fn new(w: &LstmWeights, dims: LstmDims, stat: &[f64]) -> Self {
        let mut base = w.b.to_vec();
        if dims.static_dim > 0 {
            matvec_cols(w.w_x, dims.x_cols(), 0, stat, &mut base);
        }
        Self {
            h: vec![0.0; dims.hidden],
            c: vec![0.0; dims.hidden],
            base,
        }
    }

    pub fn step(&mut self, w: &LstmWeights, dims: LstmDims, x: &[f64]) {
        let h = dims.hidden;
        let mut z = self.base.clone();
        matvec_cols(w.w_x, dims.x_cols(), dims.static_dim, x, &mut z);
        matvec_cols(w.w_h, h, 0, &self.h, &mut z);
        for k in 0..h {
            let i = sigmoid(z[k]);
            let f = sigmoid(z[h + k]);
            let gg = z[2 * h + k].tanh();
            let o = sigmoid(z[3 * h + k]);
            self.c[k] = f * self.c[k] + i * gg;
            self.h[k] = o * self.c[k].tanh();
        }
    }
}

// ---------------------------------------------------------------------------
// Inverted dropout.

/// Mask of `n` entries, each `0` with probability `p` and `1 / (1 - p)` otherwise.
pub fn dropout_mask<R: Rng>(n: usize, p: f64, rng: &mut R) -> Vec<f64> {
    if p <= 0.0 {
        return vec![1.0; n];
    }
    let keep = 1.0 / (1.0 - p);
    (0..n)
        .map(|_| if rng.gen::<f64>() < p { 0.0 } else { keep })
        .collect()
}

// ---------------------------------------------------------------------------
// Batch normalization over feature columns of stacked rows.

pub const BN_EPS: f64 = 1e-5;

#[derive(Debug, Clone)]
pub enum BnTape {
    Train {
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
        rows: usize,
    },
    Eval {
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct BnStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

/// Training-mode normalization with batch statistics over all rows.
pub fn bn_forward_train(x: &[f64], dim: usize, gamma: &[f64], beta: &[f64]) -> (Vec<f64>, BnTape, BnStats) {
    let rows = x.len() / dim;
    let mut mean = vec![0.0; dim];
    for r in x.chunks(dim) {
        axpy(1.0, r, &mut mean);
    }
    mean.iter_mut().for_each(|m| *m /= rows as f64);
    let mut var = vec![0.0; dim];
    for r in x.chunks(dim) {
        for k in 0..dim {
            let d = r[k] - mean[k];
            var[k] += d * d;
        }
    }
    var.iter_mut().for_each(|v| *v /= rows as f64);
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
    let mut xhat = vec![0.0; x.len()];
    let mut y = vec![0.0; x.len()];
    for (xr, (hr, yr)) in x.chunks(dim).zip(xhat.chunks_mut(dim).zip(y.chunks_mut(dim))) {
        for k in 0..dim {
            hr[k] = (xr[k] - mean[k]) * inv_std[k];
            yr[k] = gamma[k] * hr[k] + beta[k];
        }
    }
    (y, BnTape::Train { xhat, inv_std, rows }, BnStats { mean, var })
}

pub fn bn_forward_eval(
    x: &[f64],
    dim: usize,
    gamma: &[f64],
    beta: &[f64],
    running_mean: &[f64],
    running_var: &[f64],
) -> (Vec<f64>, BnTape) {
    let inv_std: Vec<f64> = running_var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
    let mut xhat = vec![0.0; x.len()];
    let mut y = vec![0.0; x.len()];
    for ((xr, hr), yr) in x.chunks(dim).zip(xhat.chunks_mut(dim)).zip(y.chunks_mut(dim)) {
        for k in 0..dim {
            hr[k] = (xr[k] - running_mean[k]) * inv_std[k];
            yr[k] = gamma[k] * hr[k] + beta[k];
        }
    }
    (y, BnTape::Eval { xhat, inv_std })
}

pub fn bn_backward(
    tape: &BnTape,
    dim: usize,
    gamma: &[f64],
    dy: &[f64],
    d_gamma: &mut [f64],
    d_beta: &mut [f64],
) -> Vec<f64> {
    let mut dx = vec![0.0; dy.len()];
    match tape {
        BnTape::Train { xhat, inv_std, rows } => {
            let n = *rows as f64;
            let mut sum_dy = vec![0.0; dim];
            let mut sum_dy_xhat = vec![0.0; dim];
            for (dr, hr) in dy.chunks(dim).zip(xhat.chunks(dim)) {
                for k in 0..dim {
                    sum_dy[k] += dr[k];
                    sum_dy_xhat[k] += dr[k] * hr[k];
                }
            }
            for k in 0..dim {
                d_gamma[k] += sum_dy_xhat[k];
                d_beta[k] += sum_dy[k];
            }
            for ((dr, hr), xr) in dy.chunks(dim).zip(xhat.chunks(dim)).zip(dx.chunks_mut(dim)) {
                for k in 0..dim {
                    xr[k] = gamma[k] * inv_std[k] / n * (n * dr[k] - sum_dy[k] - hr[k] * sum_dy_xhat[k]);
                }
            }
        }
        BnTape::Eval { xhat, inv_std } => {
            for ((dr, hr), xr) in dy.chunks(dim).zip(xhat.chunks(dim)).zip(dx.chunks_mut(dim)) {
                for k in 0..dim {
                    d_gamma[k] += dr[k] * hr[k];
                    d_beta[k] += dr[k];
                    xr[k] = gamma[k] * inv_std[k] * dr[k];
                }
            }
        }
    }
    dx
}

// ---------------------------------------------------------------------------
// Affine head.

pub fn dense_forward(w: &[f64], b: &[f64], x: &[f64]) -> Vec<f64> {
    let mut y = b.to_vec();
    matvec_cols(w, x.len(), 0, x, &mut y);
    y
}

pub fn dense_backward(w: &[f64], x: &[f64], dy: &[f64], d_w: &mut [f64], d_b: &mut [f64]) -> Vec<f64> {
    axpy(1.0, dy, d_b);
    outer_cols(d_w, x.len(), 0, dy, x);
    let mut dx = vec![0.0; x.len()];
    matvec_t_cols(w, x.len(), 0, dy, &mut dx);
    dx
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rand_vec(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    #[test]
    fn conv_output_size_and_zero_input() {
        let s = ConvShape { cin: 2, cout: 3, h: 7, w: 4 };
        assert_eq!((s.out_h(), s.out_w()), (4, 2));
        let w = vec![0.3; 3 * 2 * 9];
        let tape = conv_forward(&w, &[0.0; 3], &vec![0.0; 2 * 7 * 4], s);
        assert!(tape.out.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn conv_matches_direct_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = ConvShape { cin: 2, cout: 2, h: 5, w: 6 };
        let w = rand_vec(2 * 2 * 9, &mut rng);
        let b = rand_vec(2, &mut rng);
        let x = rand_vec(2 * 5 * 6, &mut rng);
        let tape = conv_forward(&w, &b, &x, s);
        for o in 0..2 {
            for oy in 0..s.out_h() {
                for ox in 0..s.out_w() {
                    let mut acc = b[o];
                    for ci in 0..2 {
                        for ky in 0..3 {
                            for kx in 0..3 {
                                let iy = (2 * oy + ky) as isize - 1;
                                let ix = (2 * ox + kx) as isize - 1;
                                if iy >= 0 && iy < 5 && ix >= 0 && ix < 6 {
                                    acc += w[((o * 2 + ci) * 3 + ky) * 3 + kx]
                                        * x[ci * 30 + iy as usize * 6 + ix as usize];
                                }
                            }
                        }
                    }
                    let got = tape.out[o * s.out_h() * s.out_w() + oy * s.out_w() + ox];
                    assert!((got - acc.max(0.0)).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn lstm_incremental_matches_sequence() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let dims = LstmDims {
            static_dim: 3,
            input_dim: 2,
            hidden: 4,
        };
        let w_x = rand_vec(16 * 5, &mut rng);
        let w_h = rand_vec(16 * 4, &mut rng);
        let b = rand_vec(16, &mut rng);
        let w = LstmWeights { w_x: &w_x, w_h: &w_h, b: &b };
        let stat = rand_vec(3, &mut rng);
        let xs = rand_vec(3 * 2, &mut rng);
        let tape = lstm_forward(&w, dims, &stat, &xs);
        let mut st = LstmState::new(&w, dims, &stat);
        for t in 0..3 {
            st.step(&w, dims, &xs[2 * t..2 * t + 2]);
            for k in 0..4 {
                assert!((st.h[k] - tape.hs[t * 4 + k]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn dropout_mask_values() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = dropout_mask(10_000, 0.1, &mut rng);
        let zeros = m.iter().filter(|v| **v == 0.0).count();
        assert!((800..1200).contains(&zeros));
        assert!(m.iter().all(|v| *v == 0.0 || (*v - 1.0 / 0.9).abs() < 1e-15));
        assert!(dropout_mask(5, 0.0, &mut rng).iter().all(|v| *v == 1.0));
    }

    #[test]
    fn batchnorm_train_normalizes() {
        let x = vec![1.0, 10.0, 3.0, 20.0, 5.0, 30.0];
        let (y, _, stats) = bn_forward_train(&x, 2, &[1.0, 1.0], &[0.0, 0.0]);
        assert!((stats.mean[0] - 3.0).abs() < 1e-12 && (stats.mean[1] - 20.0).abs() < 1e-12);
        let m0 = (y[0] + y[2] + y[4]) / 3.0;
        assert!(m0.abs() < 1e-12);
    }
}
