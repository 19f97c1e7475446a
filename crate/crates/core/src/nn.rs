//! Recurrent and affine building blocks with explicit backward passes.
//!
//! Input projections `W_x x` are left to the caller so that position-invariant
//! parts of an input can be projected once and shared across time steps; the
//! cell itself only adds the recurrent term and the bias.

use rand::Rng;

use crate::linalg::{axpy, sigmoid, Mat};

/// LSTM cell with gate blocks ordered input, forget, candidate, output.
#[derive(Debug, Clone, PartialEq)]
pub struct Lstm {
    /// `4h x input`
    pub wx: Mat,
    /// `4h x h`
    pub wh: Mat,
    /// `4h`
    pub b: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct CellCache {
    pub h_prev: Vec<f64>,
    pub c_prev: Vec<f64>,
    /// Gate activations `[i; f; g; o]`.
    gates: Vec<f64>,
    tanh_c: Vec<f64>,
}

impl Lstm {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        Lstm {
            wx: Mat::zeros(4 * hidden, input),
            wh: Mat::zeros(4 * hidden, hidden),
            b: vec![0.0; 4 * hidden],
        }
    }

    /// Uniform(-1/sqrt(h), 1/sqrt(h)) weights; forget-gate bias starts at 1.
    pub fn init<R: Rng>(input: usize, hidden: usize, rng: &mut R) -> Self {
        let scale = 1.0 / (hidden as f64).sqrt();
        let mut b = vec![0.0; 4 * hidden];
        b[hidden..2 * hidden].iter_mut().for_each(|v| *v = 1.0);
        Lstm {
            wx: Mat::uniform(4 * hidden, input, scale, rng),
            wh: Mat::uniform(4 * hidden, hidden, scale, rng),
            b,
        }
    }

    pub fn hidden(&self) -> usize {
        self.wh.cols()
    }

    pub fn input(&self) -> usize {
        self.wx.cols()
    }

    /// One step given the precomputed input projection `zx = W_x x`.
    pub fn cell_forward(&self, zx: &[f64], h_prev: &[f64], c_prev: &[f64]) -> (Vec<f64>, Vec<f64>, CellCache) {
        let hd = self.hidden();
        let mut z = self.b.clone();
        for (zi, xi) in z.iter_mut().zip(zx) {
            *zi += xi;
        }
        self.wh.matvec_acc(h_prev, &mut z);
        let mut gates = z;
        for (k, v) in gates.iter_mut().enumerate() {
            *v = if (2 * hd..3 * hd).contains(&k) {
                v.tanh()
            } else {
                sigmoid(*v)
            };
        }
        let (i, rest) = gates.split_at(hd);
        let (f, rest) = rest.split_at(hd);
        let (g, o) = rest.split_at(hd);
        let c: Vec<f64> = (0..hd).map(|k| f[k] * c_prev[k] + i[k] * g[k]).collect();
        let tanh_c: Vec<f64> = c.iter().map(|v| v.tanh()).collect();
        let h: Vec<f64> = (0..hd).map(|k| o[k] * tanh_c[k]).collect();
        let cache = CellCache {
            h_prev: h_prev.to_vec(),
            c_prev: c_prev.to_vec(),
            gates,
            tanh_c,
        };
        (h, c, cache)
    }

    /// Backward through one step. Accumulates `wh` and `b` gradients into
    /// `grads` and returns `(dz, dh_prev, dc_prev)`, where `dz` is the
    /// gradient of the gate pre-activations; the caller owns the `wx` term.
    pub fn cell_backward(
        &self,
        cache: &CellCache,
        dh: &[f64],
        dc: &[f64],
        grads: &mut Lstm,
    ) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let hd = self.hidden();
        let g = &cache.gates;
        let mut dz = vec![0.0; 4 * hd];
        let mut dc_prev = vec![0.0; hd];
        for k in 0..hd {
            let (ig, fg, cg, og) = (g[k], g[hd + k], g[2 * hd + k], g[3 * hd + k]);
            let tc = cache.tanh_c[k];
            let d_o = dh[k] * tc;
            let dct = dc[k] + dh[k] * og * (1.0 - tc * tc);
            dz[k] = dct * cg * ig * (1.0 - ig);
            dz[hd + k] = dct * cache.c_prev[k] * fg * (1.0 - fg);
            dz[2 * hd + k] = dct * ig * (1.0 - cg * cg);
            dz[3 * hd + k] = d_o * og * (1.0 - og);
            dc_prev[k] = dct * fg;
        }
        for (gb, d) in grads.b.iter_mut().zip(&dz) {
            *gb += d;
        }
        grads.wh.add_outer(&dz, &cache.h_prev);
        let mut dh_prev = vec![0.0; hd];
        self.wh.tmatvec_acc(&dz, &mut dh_prev);
        (dz, dh_prev, dc_prev)
    }

    /// Runs the cell over `zx` in order (or reversed) from a zero state.
    /// Returns the hidden state at each position, in position order.
    fn run(&self, zx: &[Vec<f64>], reverse: bool) -> (Vec<Vec<f64>>, Vec<CellCache>) {
        let hd = self.hidden();
        let len = zx.len();
        let mut hs = vec![Vec::new(); len];
        let mut caches = Vec::with_capacity(len);
        let mut h = vec![0.0; hd];
        let mut c = vec![0.0; hd];
        for step in 0..len {
            let pos = if reverse { len - 1 - step } else { step };
            let (h2, c2, cache) = self.cell_forward(&zx[pos], &h, &c);
            hs[pos] = h2.clone();
            caches.push(cache);
            h = h2;
            c = c2;
        }
        (hs, caches)
    }

    /// Backward of [`Lstm::run`]; `dhs` is indexed by position. Returns `dz`
    /// per position.
    fn run_backward(&self, caches: &[CellCache], dhs: &[Vec<f64>], reverse: bool, grads: &mut Lstm) -> Vec<Vec<f64>> {
        let hd = self.hidden();
        let len = dhs.len();
        let mut dzs = vec![Vec::new(); len];
        let mut dh_next = vec![0.0; hd];
        let mut dc_next = vec![0.0; hd];
        for step in (0..len).rev() {
            let pos = if reverse { len - 1 - step } else { step };
            let mut dh = dhs[pos].clone();
            for (a, b) in dh.iter_mut().zip(&dh_next) {
                *a += b;
            }
            let (dz, dh_prev, dc_prev) = self.cell_backward(&caches[step], &dh, &dc_next, grads);
            dzs[pos] = dz;
            dh_next = dh_prev;
            dc_next = dc_prev;
        }
        dzs
    }
}

/// Bidirectional LSTM whose output at each position is `[forward; backward]`.
#[derive(Debug, Clone, PartialEq)]
pub struct BiLstm {
    pub fwd: Lstm,
    pub bwd: Lstm,
}

#[derive(Debug, Clone)]
pub struct BiLstmCache {
    fwd: Vec<CellCache>,
    bwd: Vec<CellCache>,
}

impl BiLstm {
    pub fn zeros(input: usize, hidden_per_dir: usize) -> Self {
        BiLstm {
            fwd: Lstm::zeros(input, hidden_per_dir),
            bwd: Lstm::zeros(input, hidden_per_dir),
        }
    }

    pub fn init<R: Rng>(input: usize, hidden_per_dir: usize, rng: &mut R) -> Self {
        BiLstm {
            fwd: Lstm::init(input, hidden_per_dir, rng),
            bwd: Lstm::init(input, hidden_per_dir, rng),
        }
    }

    pub fn output_width(&self) -> usize {
        self.fwd.hidden() + self.bwd.hidden()
    }

    /// `zx_f` / `zx_b` hold each direction's input projection per position.
    pub fn forward(&self, zx_f: &[Vec<f64>], zx_b: &[Vec<f64>]) -> (Vec<Vec<f64>>, BiLstmCache) {
        let (hf, cf) = self.fwd.run(zx_f, false);
        let (hb, cb) = self.bwd.run(zx_b, true);
        let out = hf
            .into_iter()
            .zip(hb)
            .map(|(mut a, b)| {
                a.extend_from_slice(&b);
                a
            })
            .collect();
        (out, BiLstmCache { fwd: cf, bwd: cb })
    }

    /// Returns per-position pre-activation gradients `(dz_f, dz_b)`.
    pub fn backward(
        &self,
        cache: &BiLstmCache,
        d_out: &[Vec<f64>],
        grads: &mut BiLstm,
    ) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let hf = self.fwd.hidden();
        let (df, db): (Vec<Vec<f64>>, Vec<Vec<f64>>) =
            d_out.iter().map(|d| (d[..hf].to_vec(), d[hf..].to_vec())).unzip();
        let dzf = self.fwd.run_backward(&cache.fwd, &df, false, &mut grads.fwd);
        let dzb = self.bwd.run_backward(&cache.bwd, &db, true, &mut grads.bwd);
        (dzf, dzb)
    }

    /// Full-input convenience projection for both directions.
    pub fn project(&self, xs: &[&[f64]]) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let f = xs.iter().map(|x| self.fwd.wx.matvec(x)).collect();
        let b = xs.iter().map(|x| self.bwd.wx.matvec(x)).collect();
        (f, b)
    }
}

/// `y = tanh(W x + b)`
#[derive(Debug, Clone, PartialEq)]
pub struct TanhLayer {
    pub w: Mat,
    pub b: Vec<f64>,
}

impl TanhLayer {
    pub fn zeros(input: usize, output: usize) -> Self {
        TanhLayer {
            w: Mat::zeros(output, input),
            b: vec![0.0; output],
        }
    }

    pub fn init<R: Rng>(input: usize, output: usize, rng: &mut R) -> Self {
        let scale = (6.0 / (input + output) as f64).sqrt();
        TanhLayer {
            w: Mat::uniform(output, input, scale, rng),
            b: vec![0.0; output],
        }
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut z = self.b.clone();
        self.w.matvec_acc(x, &mut z);
        z.iter_mut().for_each(|v| *v = v.tanh());
        z
    }

    /// Given input `x`, output `y` and `dy`, accumulates parameter gradients
    /// and returns `dx`.
    pub fn backward(&self, x: &[f64], y: &[f64], dy: &[f64], grads: &mut TanhLayer) -> Vec<f64> {
        let dz: Vec<f64> = y.iter().zip(dy).map(|(y, d)| d * (1.0 - y * y)).collect();
        axpy(1.0, &dz, &mut grads.b);
        grads.w.add_outer(&dz, x);
        let mut dx = vec![0.0; x.len()];
        self.w.tmatvec_acc(&dz, &mut dx);
        dx
    }
}
