//! Per-point layers with explicit forward caches and hand-written backward passes.

use crate::error::{Error, Result};
use crate::geometry::knn_graph;
use crate::tensor::{add_matmul_tn, matmul_raw, matmul_raw_t, Mat};

use super::params::{Gradients, ModelParams, ParamId};

/// Affine map applied to every row, optionally followed by ReLU.
/// Used both as the shared point-wise MLP and as a fully connected layer (N = 1).
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub din: usize,
    pub dout: usize,
    pub relu: bool,
    pub w: ParamId,
    pub b: ParamId,
}

impl Dense {
    pub fn forward(&self, params: &ModelParams, x: &Mat) -> Result<Mat> {
        if x.cols() != self.din {
            return Err(Error::invalid(format!(
                "dense layer expects {} input features, got {}",
                self.din,
                x.cols()
            )));
        }
        let mut y = matmul_raw(x, params.get(self.w), self.dout);
        let b = params.get(self.b);
        for i in 0..y.rows() {
            for (v, bias) in y.row_mut(i).iter_mut().zip(b) {
                *v += bias;
                if self.relu && *v < 0.0 {
                    *v = 0.0;
                }
            }
        }
        Ok(y)
    }

    /// Accumulates weight gradients; returns the input gradient when asked.
    pub fn backward(
        &self,
        params: &ModelParams,
        x: &Mat,
        y: &Mat,
        dy: &Mat,
        grads: &mut Gradients,
        need_dx: bool,
    ) -> Option<Mat> {
        let dz = if self.relu {
            relu_mask(dy, y)
        } else {
            dy.clone()
        };
        let (gw, gb) = grads.pair_mut(self.w, self.b);
        add_matmul_tn(x, &dz, gw);
        dz.col_sum_into(gb);
        need_dx.then(|| matmul_raw_t(&dz, params.get(self.w), self.din))
    }
}

/// `dy` where the ReLU output was positive, zero elsewhere.
pub(crate) fn relu_mask(dy: &Mat, y: &Mat) -> Mat {
    let mut dz = dy.clone();
    for (g, &v) in dz.data_mut().iter_mut().zip(y.data()) {
        if v <= 0.0 {
            *g = 0.0;
        }
    }
    dz
}

/// Coordinate-wise maximum over rows, with the winning row of each column
/// (first occurrence on ties).
pub fn max_pool_global(x: &Mat) -> (Mat, Vec<usize>) {
    assert!(x.rows() > 0, "max pool over an empty set");
    let d = x.cols();
    let mut best = x.row(0).to_vec();
    let mut arg = vec![0usize; d];
    for i in 1..x.rows() {
        for (c, &v) in x.row(i).iter().enumerate() {
            if v > best[c] {
                best[c] = v;
                arg[c] = i;
            }
        }
    }
    (Mat::from_vec(1, d, best).expect("1 x d"), arg)
}

pub fn max_pool_backward(dg: &[f64], arg: &[usize], rows: usize) -> Mat {
    let mut dx = Mat::zeros(rows, arg.len());
    for (c, (&i, &g)) in arg.iter().zip(dg).enumerate() {
        dx.set(i, c, dx.get(i, c) + g);
    }
    dx
}

/// Neighbor lists of one EdgeConv application.
pub type KnnLists = Vec<Vec<usize>>;

/// Dynamic-graph edge convolution: for every point `i`,
/// `y_i = max_{j in kNN(i)} ReLU([x_i, x_j - x_i] W + b)`.
///
/// The weight is stored as `[W1; W2]` (2·din x dout). Since the edge map is
/// affine before the ReLU, it is evaluated as `x_i (W1 - W2) + b + x_j W2`,
/// and the max over neighbors commutes with the monotone ReLU.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeConv {
    pub din: usize,
    pub dout: usize,
    pub k: usize,
    pub w: ParamId,
    pub b: ParamId,
}

#[derive(Debug, Clone)]
pub struct EdgeCache {
    pub knn: KnnLists,
    /// Winning neighbor per (point, channel), row-major N x dout.
    arg: Vec<u32>,
}

impl EdgeConv {
    fn split_weights(&self, params: &ModelParams) -> (Vec<f64>, Vec<f64>) {
        let w = params.get(self.w);
        let half = self.din * self.dout;
        let (w1, w2) = w.split_at(half);
        let wd = w1.iter().zip(w2).map(|(a, b)| a - b).collect();
        (wd, w2.to_vec())
    }

    pub fn forward(
        &self,
        params: &ModelParams,
        x: &Mat,
        frozen: Option<&KnnLists>,
    ) -> Result<(Mat, EdgeCache)> {
        if x.cols() != self.din {
            return Err(Error::invalid(format!(
                "edgeconv expects {} input features, got {}",
                self.din,
                x.cols()
            )));
        }
        let n = x.rows();
        if self.k >= n {
            return Err(Error::invalid(format!(
                "k_neighbors = {} must be smaller than N = {n}",
                self.k
            )));
        }
        let knn = match frozen {
            Some(g) => {
                if g.len() != n {
                    return Err(Error::invalid("frozen graph does not match N"));
                }
                g.clone()
            }
            None => knn_graph(x, self.k)?,
        };
        let (wd, w2) = self.split_weights(params);
        let p = matmul_raw(x, &wd, self.dout);
        let q = matmul_raw(x, &w2, self.dout);
        let b = params.get(self.b);
        let d = self.dout;
        let mut y = Mat::zeros(n, d);
        let mut arg = vec![0u32; n * d];
        let mut best = vec![f64::NEG_INFINITY; d];
        for i in 0..n {
            best.fill(f64::NEG_INFINITY);
            let a = &mut arg[i * d..(i + 1) * d];
            for &j in &knn[i] {
                for (c, &v) in q.row(j).iter().enumerate() {
                    if v > best[c] {
                        best[c] = v;
                        a[c] = j as u32;
                    }
                }
            }
            let pi = p.row(i);
            for (c, out) in y.row_mut(i).iter_mut().enumerate() {
                *out = (pi[c] + b[c] + best[c]).max(0.0);
            }
        }
        Ok((y, EdgeCache { knn, arg }))
    }

    pub fn backward(
        &self,
        params: &ModelParams,
        x: &Mat,
        y: &Mat,
        cache: &EdgeCache,
        dy: &Mat,
        grads: &mut Gradients,
        need_dx: bool,
    ) -> Option<Mat> {
        let n = x.rows();
        let d = self.dout;
        let dp = relu_mask(dy, y);
        let mut dq = Mat::zeros(n, d);
        for i in 0..n {
            let a = &cache.arg[i * d..(i + 1) * d];
            for (c, &g) in dp.row(i).iter().enumerate() {
                if g != 0.0 {
                    let j = a[c] as usize;
                    dq.set(j, c, dq.get(j, c) + g);
                }
            }
        }
        {
            let (gw, gb) = grads.pair_mut(self.w, self.b);
            let half = self.din * d;
            let (gw1, gw2) = gw.split_at_mut(half);
            // P = X (W1 - W2), Q = X W2
            let mut dwd = vec![0.0; half];
            add_matmul_tn(x, &dp, &mut dwd);
            let mut dw2 = vec![0.0; half];
            add_matmul_tn(x, &dq, &mut dw2);
            for ((g1, g2), (a, b)) in gw1.iter_mut().zip(gw2.iter_mut()).zip(dwd.iter().zip(&dw2)) {
                *g1 += a;
                *g2 += b - a;
            }
            dp.col_sum_into(gb);
        }
        if !need_dx {
            return None;
        }
        let (wd, w2) = self.split_weights(params);
        let mut dx = matmul_raw_t(&dp, &wd, self.din);
        dx.add_assign(&matmul_raw_t(&dq, &w2, self.din));
        Some(dx)
    }
}
