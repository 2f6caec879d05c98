//! Feature-space T-net: a mini network predicting a d x d matrix `A` that is
//! applied to every embedded point, plus the orthogonality penalty
//! `||I - A A^T||_F^2`.

use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::tensor::{matmul, matmul_nt, matmul_tn, Mat};

use super::layers::{max_pool_backward, max_pool_global, Dense};
use super::params::{Gradients, ModelParams};

pub const TNET_HIDDEN: usize = 32;

#[derive(Debug, Clone, PartialEq)]
pub struct TNet {
    pub dim: usize,
    pub mlp: Dense,
    pub fc: Dense,
    /// Outputs the flattened matrix; zero weights and identity bias at init.
    pub out: Dense,
}

#[derive(Debug, Clone)]
pub struct TnetTrace {
    h: Mat,
    pool_arg: Vec<usize>,
    g: Mat,
    f: Mat,
    a_flat: Mat,
    pub matrix: Mat,
    pub output: Mat,
}

impl TNet {
    pub fn build(prefix: &str, dim: usize, params: &mut ModelParams, rng: &mut RngStream) -> Self {
        let h = TNET_HIDDEN;
        let mlp = Dense {
            din: dim,
            dout: h,
            relu: true,
            w: params.add_he(format!("{prefix}.mlp.w"), &[dim, h], dim, rng),
            b: params.add_zeros(format!("{prefix}.mlp.b"), &[h]),
        };
        let fc = Dense {
            din: h,
            dout: h,
            relu: true,
            w: params.add_he(format!("{prefix}.fc.w"), &[h, h], h, rng),
            b: params.add_zeros(format!("{prefix}.fc.b"), &[h]),
        };
        let out = Dense {
            din: h,
            dout: dim * dim,
            relu: false,
            w: params.add_zeros(format!("{prefix}.out.w"), &[h, dim * dim]),
            b: params.add(
                format!("{prefix}.out.b"),
                &[dim * dim],
                Mat::identity(dim).into_vec(),
            ),
        };
        Self { dim, mlp, fc, out }
    }

    /// Rows of the output are `A x_i`.
    pub fn forward(&self, params: &ModelParams, x: &Mat) -> Result<TnetTrace> {
        if x.cols() != self.dim {
            return Err(Error::invalid(format!(
                "t-net expects {} features, got {}",
                self.dim,
                x.cols()
            )));
        }
        let h = self.mlp.forward(params, x)?;
        let (g, pool_arg) = max_pool_global(&h);
        let f = self.fc.forward(params, &g)?;
        let a_flat = self.out.forward(params, &f)?;
        let matrix = Mat::from_vec(self.dim, self.dim, a_flat.data().to_vec())?;
        let output = matmul_nt(x, &matrix);
        Ok(TnetTrace {
            h,
            pool_arg,
            g,
            f,
            a_flat,
            matrix,
            output,
        })
    }

    /// Backward through `y = x A^T` and the matrix predictor. `reg_scale`
    /// multiplies the gradient of the orthogonality penalty on `A`.
    pub fn backward(
        &self,
        params: &ModelParams,
        x: &Mat,
        trace: &TnetTrace,
        dy: &Mat,
        reg_scale: f64,
        grads: &mut Gradients,
    ) -> Mat {
        let mut da = matmul_tn(dy, x);
        if reg_scale != 0.0 {
            let mut rg = tnet_regularizer_grad(&trace.matrix);
            rg.scale(reg_scale);
            da.add_assign(&rg);
        }
        let da_flat = Mat::from_vec(1, self.dim * self.dim, da.into_vec()).expect("d^2");
        let df = self
            .out
            .backward(params, &trace.f, &trace.a_flat, &da_flat, grads, true)
            .expect("dx requested");
        let dg = self
            .fc
            .backward(params, &trace.g, &trace.f, &df, grads, true)
            .expect("dx requested");
        let dh = max_pool_backward(dg.data(), &trace.pool_arg, x.rows());
        let mut dx = self
            .mlp
            .backward(params, x, &trace.h, &dh, grads, true)
            .expect("dx requested");
        dx.add_assign(&matmul(dy, &trace.matrix));
        dx
    }
}

fn gram_minus_identity(a: &Mat) -> Mat {
    let mut e = matmul_nt(a, a);
    for i in 0..a.rows() {
        e.set(i, i, e.get(i, i) - 1.0);
    }
    e
}

/// `||I - A A^T||_F^2`
pub fn tnet_regularizer(a: &Mat) -> Result<f64> {
    if a.rows() != a.cols() {
        return Err(Error::invalid(format!(
            "regularizer needs a square matrix, got {}x{}",
            a.rows(),
            a.cols()
        )));
    }
    Ok(gram_minus_identity(a).frobenius_sq())
}

/// Gradient of [`tnet_regularizer`]: `4 (A A^T - I) A`.
pub fn tnet_regularizer_grad(a: &Mat) -> Mat {
    let mut g = matmul(&gram_minus_identity(a), a);
    g.scale(4.0);
    g
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rotation(axis: [f64; 3], angle: f64) -> Mat {
        let n = (axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]).sqrt();
        let (x, y, z) = (axis[0] / n, axis[1] / n, axis[2] / n);
        let (s, c) = angle.sin_cos();
        let t = 1.0 - c;
        Mat::from_rows(&[
            vec![t * x * x + c, t * x * y - s * z, t * x * z + s * y],
            vec![t * x * y + s * z, t * y * y + c, t * y * z - s * x],
            vec![t * x * z - s * y, t * y * z + s * x, t * z * z + c],
        ])
        .unwrap()
    }

    #[test]
    fn regularizer_values() {
        assert_eq!(tnet_regularizer(&Mat::identity(3)).unwrap(), 0.0);
        let mut two = Mat::identity(2);
        two.scale(2.0);
        assert_eq!(tnet_regularizer(&two).unwrap(), 18.0);
        let r = rotation([0.3, -1.2, 0.5], 0.83);
        assert!(tnet_regularizer(&r).unwrap().abs() < 1e-12);
        assert!(tnet_regularizer(&Mat::zeros(2, 3)).is_err());
    }

    #[test]
    fn regularizer_gradient_vanishes_at_identity() {
        let a = Mat::identity(3);
        let h = 1e-5;
        for i in 0..9 {
            let mut p = a.clone();
            p.data_mut()[i] += h;
            let mut m = a.clone();
            m.data_mut()[i] -= h;
            let num = (tnet_regularizer(&p).unwrap() - tnet_regularizer(&m).unwrap()) / (2.0 * h);
            assert!(num.abs() < 1e-8);
        }
        assert!(tnet_regularizer_grad(&a).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn regularizer_gradient_matches_finite_differences() {
        let mut rng = RngStream::new(3);
        let a = Mat::from_vec(3, 3, (0..9).map(|_| rng.normal()).collect()).unwrap();
        let g = tnet_regularizer_grad(&a);
        let h = 1e-5;
        for i in 0..9 {
            let mut p = a.clone();
            p.data_mut()[i] += h;
            let mut m = a.clone();
            m.data_mut()[i] -= h;
            let num = (tnet_regularizer(&p).unwrap() - tnet_regularizer(&m).unwrap()) / (2.0 * h);
            assert!((num - g.data()[i]).abs() / num.abs().max(1e-6) < 1e-6);
        }
    }

    #[test]
    fn fresh_tnet_is_identity() {
        let mut rng = RngStream::new(1);
        let mut p = ModelParams::new();
        let t = TNet::build("t", 4, &mut p, &mut rng);
        let x = Mat::from_vec(5, 4, (0..20).map(|_| rng.normal()).collect()).unwrap();
        let tr = t.forward(&p, &x).unwrap();
        assert_eq!(tr.matrix, Mat::identity(4));
        assert_eq!(tr.output, x);
    }

    #[test]
    fn forced_scalar_matrix_scales_input() {
        let mut rng = RngStream::new(2);
        let mut p = ModelParams::new();
        let t = TNet::build("t", 2, &mut p, &mut rng);
        p.get_mut(t.out.b).copy_from_slice(&[2.0, 0.0, 0.0, 2.0]);
        let x = Mat::from_vec(3, 2, vec![1.0, -2.0, 0.5, 4.0, 3.0, 0.0]).unwrap();
        let tr = t.forward(&p, &x).unwrap();
        let mut want = x.clone();
        want.scale(2.0);
        assert_eq!(tr.output, want);
    }

    #[test]
    fn output_matches_row_matvec_oracle() {
        let mut rng = RngStream::new(4);
        let mut p = ModelParams::new();
        let t = TNet::build("t", 3, &mut p, &mut rng);
        p.jitter(0.3, &mut rng);
        let x = Mat::from_vec(6, 3, (0..18).map(|_| rng.normal()).collect()).unwrap();
        let tr = t.forward(&p, &x).unwrap();
        for i in 0..6 {
            for r in 0..3 {
                let want: f64 = (0..3).map(|c| tr.matrix.get(r, c) * x.get(i, c)).sum();
                assert!((tr.output.get(i, r) - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = RngStream::new(5);
        let mut p = ModelParams::new();
        let t = TNet::build("t", 3, &mut p, &mut rng);
        p.jitter(0.2, &mut rng);
        let x = Mat::from_vec(8, 3, (0..24).map(|_| rng.normal()).collect()).unwrap();
        let coef: Vec<f64> = (0..24).map(|i| ((i as f64) * 0.37).cos()).collect();
        let reg = 0.05;
        let loss = |p: &ModelParams, x: &Mat| {
            let tr = t.forward(p, x).unwrap();
            let s: f64 = tr.output.data().iter().zip(&coef).map(|(a, b)| a * b).sum();
            s + reg * tnet_regularizer(&tr.matrix).unwrap()
        };
        let tr = t.forward(&p, &x).unwrap();
        let dy = Mat::from_vec(8, 3, coef.clone()).unwrap();
        let mut g = p.zeros_like();
        let dx = t.backward(&p, &x, &tr, &dy, reg, &mut g);
        let h = 1e-5;
        let rel = |a: f64, n: f64| (a - n).abs() / a.abs().max(n.abs()).max(1e-6);
        for i in 0..p.len() {
            let mut pp = p.clone();
            pp.flat_mut()[i] += h;
            let mut pm = p.clone();
            pm.flat_mut()[i] -= h;
            let num = (loss(&pp, &x) - loss(&pm, &x)) / (2.0 * h);
            assert!(
                rel(g.flat()[i], num) < 1e-4,
                "param {i}: {} vs {num}",
                g.flat()[i]
            );
        }
        for i in 0..24 {
            let mut xp = x.clone();
            xp.data_mut()[i] += h;
            let mut xm = x.clone();
            xm.data_mut()[i] -= h;
            let num = (loss(&p, &xp) - loss(&p, &xm)) / (2.0 * h);
            assert!(rel(dx.data()[i], num) < 1e-4);
        }
    }
}
