//! Batched forward/reverse passes carrying second-order jets.
//!
//! A pass propagates `C = 1 + 2P` components through the network: the value,
//! `P` first partials and `P` pure second partials with respect to the
//! intrinsic torus angles. `P = 0` is an ordinary forward pass. Affine maps
//! act on every component (the bias only on the value); activations apply
//! the second-order chain rule pointwise. The reverse sweep accumulates the
//! parameter gradient of any linear functional of the output components.

use ndarray::{Array1, Array2, Axis, Zip};

use crate::field::{Activation, FieldParams};
use crate::Scalar;

pub struct Tape<T> {
    /// `inputs[l]` are the components fed to layer `l`.
    inputs: Vec<Vec<Array2<T>>>,
    /// Pre-activation components of each hidden layer.
    pre: Vec<Vec<Array2<T>>>,
    /// Output components, one value per point.
    out: Vec<Array1<T>>,
}

impl<T: Scalar> Tape<T> {
    /// Runs the network on encoded components (`N x K` each).
    pub fn forward(params: &FieldParams<T>, x0: Vec<Array2<T>>) -> Self {
        let layers = params.layers();
        let n_hidden = layers.len() - 1;
        let mut inputs = Vec::with_capacity(layers.len());
        let mut pre = Vec::with_capacity(n_hidden);
        let mut x = x0;
        for layer in &layers[..n_hidden] {
            let wt = layer.weight.t();
            let mut u: Vec<Array2<T>> = x.iter().map(|c| c.dot(&wt)).collect();
            if let Some(b) = &layer.bias {
                u[0] += b;
            }
            let h = activate(params.activation(), &u);
            inputs.push(x);
            pre.push(u);
            x = h;
        }
        let w_out = layers[n_hidden].weight.row(0);
        let out = x.iter().map(|c| c.dot(&w_out)).collect();
        inputs.push(x);
        Self { inputs, pre, out }
    }

    pub fn output(&self, component: usize) -> &Array1<T> {
        &self.out[component]
    }

    pub fn components(&self) -> usize {
        self.out.len()
    }

    /// Gradient with respect to the flattened parameters of
    /// `sum_c sum_i adjoint[c][i] * out[c][i]`. Components without an
    /// adjoint (`None`) contribute nothing.
    pub fn backward(&self, params: &FieldParams<T>, adjoint: &[Option<Array1<T>>]) -> Vec<T> {
        let layers = params.layers();
        let n_hidden = layers.len() - 1;
        let c = self.components();
        let n = self.out[0].len();
        let mut grad = vec![T::zero(); params.num_params()];
        let offsets = params.offsets();

        // output layer
        let last = &self.inputs[n_hidden];
        let w_out = layers[n_hidden].weight.row(0);
        let width = w_out.len();
        let mut g_w = Array1::<T>::zeros(width);
        let mut xbar: Vec<Array2<T>> = Vec::with_capacity(c);
        for (k, last_k) in last.iter().enumerate().take(c) {
            match adjoint.get(k).and_then(|a| a.as_ref()) {
                Some(a) => {
                    g_w += &a.dot(last_k);
                    let a2 = a.view().insert_axis(Axis(1));
                    xbar.push(&a2 * &w_out.insert_axis(Axis(0)));
                }
                None => xbar.push(Array2::zeros((n, width))),
            }
        }
        grad[offsets[n_hidden]..offsets[n_hidden] + width].iter_mut().zip(g_w.iter()).for_each(|(g, v)| *g = *v);

        for l in (0..n_hidden).rev() {
            let ubar = activate_backward(params.activation(), &self.pre[l], &xbar);
            let layer = &layers[l];
            let mut g_w = Array2::<T>::zeros(layer.weight.raw_dim());
            for (u, x) in ubar.iter().zip(&self.inputs[l]) {
                g_w += &u.t().dot(x);
            }
            let mut at = offsets[l];
            for v in g_w.iter() {
                grad[at] = *v;
                at += 1;
            }
            if layer.bias.is_some() {
                for v in ubar[0].sum_axis(Axis(0)).iter() {
                    grad[at] = *v;
                    at += 1;
                }
            }
            if l > 0 {
                xbar = ubar.iter().map(|u| u.dot(&layer.weight)).collect();
            }
        }
        grad
    }
}

fn activate<T: Scalar>(act: Activation, u: &[Array2<T>]) -> Vec<Array2<T>> {
    let p = (u.len() - 1) / 2;
    let mut h = Vec::with_capacity(u.len());
    match act {
        Activation::Sine => {
            let s = u[0].mapv(T::sin);
            let co = u[0].mapv(T::cos);
            for k in 0..p {
                h.push(&co * &u[1 + k]);
            }
            for k in 0..p {
                let mut hs = &co * &u[1 + p + k];
                Zip::from(&mut hs).and(&s).and(&u[1 + k]).for_each(|o, &s, &g| *o -= s * g * g);
                h.push(hs);
            }
            h.insert(0, s);
        }
        Activation::Relu => {
            let step = u[0].mapv(|v| if v > T::zero() { T::one() } else { T::zero() });
            h.push(u[0].mapv(|v| v.max(T::zero())));
            for comp in &u[1..] {
                h.push(&step * comp);
            }
        }
    }
    h
}

fn activate_backward<T: Scalar>(act: Activation, u: &[Array2<T>], hbar: &[Array2<T>]) -> Vec<Array2<T>> {
    let p = (u.len() - 1) / 2;
    match act {
        Activation::Sine => {
            let s = u[0].mapv(T::sin);
            let co = u[0].mapv(T::cos);
            let mut u0 = &hbar[0] * &co;
            let mut ug = Vec::with_capacity(p);
            let mut us = Vec::with_capacity(p);
            for k in 0..p {
                let (g, sec) = (&u[1 + k], &u[1 + p + k]);
                let (gbar, sbar) = (&hbar[1 + k], &hbar[1 + p + k]);
                Zip::from(&mut u0).and(&s).and(g).and(gbar).for_each(|o, &s, &g, &gb| *o -= gb * s * g);
                Zip::from(&mut u0)
                    .and(&s)
                    .and(&co)
                    .and(g)
                    .and(sec)
                    .and(sbar)
                    .for_each(|o, &s, &c, &g, &sec, &sb| *o -= sb * (s * sec + c * g * g));
                let mut gk = gbar * &co;
                let two = T::lit(2.0);
                Zip::from(&mut gk).and(&s).and(g).and(sbar).for_each(|o, &s, &g, &sb| *o -= two * s * g * sb);
                ug.push(gk);
                us.push(sbar * &co);
            }
            let mut out = vec![u0];
            out.extend(ug);
            out.extend(us);
            out
        }
        Activation::Relu => {
            let step = u[0].mapv(|v| if v > T::zero() { T::one() } else { T::zero() });
            hbar.iter().map(|h| h * &step).collect()
        }
    }
}
