//! Dense building blocks with hand-written reverse passes.

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};

use crate::params::{Grads, Group, Init, ParamStore};
use crate::rng::Rng;

const LN_EPS: f64 = 1e-6;

/// `y = x·W + b` with `W` stored as `[in, out]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Linear {
    pub w: usize,
    pub b: usize,
}

impl Linear {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        scale: f64,
        group: Group,
        r: &mut Rng,
    ) -> Self {
        let w = store.add(
            &format!("{name}.weight"),
            &[fan_in, fan_out],
            Init::FanIn { fan_in, scale },
            true,
            group,
            r,
        );
        let b = store.add(&format!("{name}.bias"), &[fan_out], Init::Zeros, false, group, r);
        Linear { w, b }
    }

    pub fn forward(&self, p: &ParamStore, x: ArrayView2<'_, f64>) -> Array2<f64> {
        let mut y = x.dot(&p.mat(self.w));
        y += &p.vec(self.b);
        y
    }

    /// Accumulates parameter gradients and returns `dL/dx`.
    pub fn backward(&self, p: &ParamStore, x: ArrayView2<'_, f64>, dy: ArrayView2<'_, f64>, g: &mut Grads) -> Array2<f64> {
        self.backward_params(x, dy, g);
        dy.dot(&p.mat(self.w).t())
    }

    /// Accumulates parameter gradients only.
    pub fn backward_params(&self, x: ArrayView2<'_, f64>, dy: ArrayView2<'_, f64>, g: &mut Grads) {
        g.acc_mat(self.w, x.t().dot(&dy).view());
        g.acc_vec(self.b, dy.sum_axis(Axis(0)));
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LayerNorm {
    pub gain: usize,
    pub bias: usize,
}

#[derive(Clone, Debug)]
pub struct LayerNormCache {
    xhat: Array2<f64>,
    rstd: Array1<f64>,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, width: usize, group: Group, r: &mut Rng) -> Self {
        let gain = store.add(&format!("{name}.gain"), &[width], Init::Ones, false, group, r);
        let bias = store.add(&format!("{name}.bias"), &[width], Init::Zeros, false, group, r);
        LayerNorm { gain, bias }
    }

    pub fn forward(&self, p: &ParamStore, x: ArrayView2<'_, f64>) -> (Array2<f64>, LayerNormCache) {
        let d = x.ncols() as f64;
        let mut xhat = x.to_owned();
        let mut rstd = Array1::zeros(x.nrows());
        for (mut row, rs) in xhat.rows_mut().into_iter().zip(rstd.iter_mut()) {
            let mean = row.sum() / d;
            row.mapv_inplace(|v| v - mean);
            let var = row.iter().map(|v| v * v).sum::<f64>() / d;
            *rs = 1.0 / (var + LN_EPS).sqrt();
            let s = *rs;
            row.mapv_inplace(|v| v * s);
        }
        let mut y = &xhat * &p.vec(self.gain);
        y += &p.vec(self.bias);
        (y, LayerNormCache { xhat, rstd })
    }

    pub fn backward(&self, p: &ParamStore, c: &LayerNormCache, dy: ArrayView2<'_, f64>, g: &mut Grads) -> Array2<f64> {
        g.acc_vec(self.gain, (&dy * &c.xhat).sum_axis(Axis(0)));
        g.acc_vec(self.bias, dy.sum_axis(Axis(0)));
        let dxhat = &dy * &p.vec(self.gain);
        let d = dy.ncols() as f64;
        let mut dx = Array2::zeros(dy.raw_dim());
        for (((mut out, dh), xh), rs) in dx
            .rows_mut()
            .into_iter()
            .zip(dxhat.rows())
            .zip(c.xhat.rows())
            .zip(c.rstd.iter())
        {
            let m1 = dh.sum() / d;
            let m2 = dh.iter().zip(xh.iter()).map(|(a, b)| a * b).sum::<f64>() / d;
            Zip::from(&mut out)
                .and(&dh)
                .and(&xh)
                .for_each(|o, &a, &b| *o = rs * (a - m1 - b * m2));
        }
        dx
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

/// Tanh approximation of GELU.
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

pub fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + 0.044715 * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}

/// Multilayer perceptron with two hidden GELU layers.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Mlp {
    pub layers: [Linear; 3],
}

#[derive(Clone, Debug)]
pub struct MlpCache {
    x: Array2<f64>,
    a1: Array2<f64>,
    h1: Array2<f64>,
    a2: Array2<f64>,
    h2: Array2<f64>,
}

impl Mlp {
    pub fn new(store: &mut ParamStore, name: &str, dims: [usize; 4], group: Group, r: &mut Rng) -> Self {
        let l = |store: &mut ParamStore, i: usize, r: &mut Rng| {
            Linear::new(store, &format!("{name}.fc{}", i + 1), dims[i], dims[i + 1], 1.0, group, r)
        };
        let a = l(store, 0, r);
        let b = l(store, 1, r);
        let c = l(store, 2, r);
        Mlp { layers: [a, b, c] }
    }

    pub fn forward(&self, p: &ParamStore, x: ArrayView2<'_, f64>) -> (Array2<f64>, MlpCache) {
        let a1 = self.layers[0].forward(p, x);
        let h1 = a1.mapv(gelu);
        let a2 = self.layers[1].forward(p, h1.view());
        let h2 = a2.mapv(gelu);
        let y = self.layers[2].forward(p, h2.view());
        (
            y,
            MlpCache {
                x: x.to_owned(),
                a1,
                h1,
                a2,
                h2,
            },
        )
    }

    /// Accumulates parameter gradients; returns `dL/dx` when `input_grad` is set.
    pub fn backward(
        &self,
        p: &ParamStore,
        c: &MlpCache,
        dy: ArrayView2<'_, f64>,
        g: &mut Grads,
        input_grad: bool,
    ) -> Option<Array2<f64>> {
        let dh2 = self.layers[2].backward(p, c.h2.view(), dy, g);
        let da2 = dh2 * c.a2.mapv(gelu_grad);
        let dh1 = self.layers[1].backward(p, c.h1.view(), da2.view(), g);
        let da1 = dh1 * c.a1.mapv(gelu_grad);
        if input_grad {
            Some(self.layers[0].backward(p, c.x.view(), da1.view(), g))
        } else {
            self.layers[0].backward_params(c.x.view(), da1.view(), g);
            None
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use ndarray::array;

    #[test]
    fn gelu_grad_matches_central_difference() {
        for &x in &[-3.0, -0.7, 0.0, 0.4, 2.5] {
            let h = 1e-6;
            let fd = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!((fd - gelu_grad(x)).abs() < 1e-8);
        }
        assert_eq!(gelu(0.0), 0.0);
    }

    #[test]
    fn layer_norm_normalizes_rows() {
        let mut s = ParamStore::default();
        let mut r = rng::substream(0, "t");
        let ln = LayerNorm::new(&mut s, "ln", 3, Group::Head, &mut r);
        let (y, _) = ln.forward(&s, array![[1.0, 2.0, 3.0], [5.0, 5.0, 8.0]].view());
        for row in y.rows() {
            assert!(row.sum().abs() < 1e-12);
            let var = row.iter().map(|v| v * v).sum::<f64>() / 3.0;
            assert!((var - 1.0).abs() < 1e-5);
        }
    }

    #[test]
    fn mlp_with_zero_parameters_outputs_zero() {
        let mut s = ParamStore::default();
        let mut r = rng::substream(0, "t");
        let m = Mlp::new(&mut s, "m", [5, 4, 4, 3], Group::Embedding, &mut r);
        for t in &mut s.tensors {
            t.data.iter_mut().for_each(|v| *v = 0.0);
        }
        let (y, _) = m.forward(&s, array![[1.0, -2.0, 3.0, 0.5, 9.0]].view());
        assert!(y.iter().all(|&v| v == 0.0));
        assert_eq!(y.ncols(), 3);
    }
}
