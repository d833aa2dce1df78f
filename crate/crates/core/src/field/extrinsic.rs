use ndarray::Array1;

use crate::encoding::Encoding;
use crate::error::{config, Result};
use crate::field::{check_dims, FieldParams, Tape};
use crate::manifold::{tangent_projection, Point};
use crate::Scalar;

/// Default centered-difference step.
pub const DEFAULT_STEP: f64 = 1e-3;

/// Ambient evaluation nodes whose weighted sum approximates
/// `sum_i P_i. H P_i.ᵀ = tr(P H)` at each point, with `P` the block-diagonal
/// tangent projector and `H` the ambient Hessian. Only within-block Hessian
/// entries survive the block-diagonal contraction, so cross-marginal
/// entries are never formed.
struct Stencil<T> {
    nodes: Vec<Vec<T>>,
    coef: Vec<T>,
    owner: Vec<usize>,
}

fn stencil<T: Scalar>(enc: &Encoding, points: &[Point<T>], h: f64) -> Stencil<T> {
    let spec = enc.spec();
    let offs = spec.offsets();
    let amb_offs = spec.ambient_offsets();
    let hh = T::lit(h);
    let inv_h2 = T::one() / (hh * hh);
    let half_inv_h2 = inv_h2 / T::lit(2.0);
    let mut st = Stencil { nodes: Vec::new(), coef: Vec::new(), owner: Vec::new() };
    for (i, p) in points.iter().enumerate() {
        let a = spec.to_ambient(p);
        let push = |st: &mut Stencil<T>, shifts: &[(usize, T)], c: T| {
            let mut node = a.clone();
            for &(j, s) in shifts {
                node[j] += s;
            }
            st.nodes.push(node);
            st.coef.push(c);
            st.owner.push(i);
        };
        let mut centre = T::zero();
        for (d, m) in spec.marginals().iter().enumerate() {
            let proj = tangent_projection(*m, &p.coords[offs[d]..offs[d] + m.coord_len()]);
            let o = amb_offs[d];
            let dim = m.ambient_dim();
            for j in 0..dim {
                let pj = proj[[j, j]] * inv_h2;
                push(&mut st, &[(o + j, hh)], pj);
                push(&mut st, &[(o + j, -hh)], pj);
                centre -= pj + pj;
                for k in (j + 1)..dim {
                    // symmetric pair (j,k),(k,j) with the 4-point cross stencil
                    let c = proj[[j, k]] * half_inv_h2;
                    push(&mut st, &[(o + j, hh), (o + k, hh)], c);
                    push(&mut st, &[(o + j, hh), (o + k, -hh)], -c);
                    push(&mut st, &[(o + j, -hh), (o + k, hh)], -c);
                    push(&mut st, &[(o + j, -hh), (o + k, -hh)], c);
                }
            }
        }
        push(&mut st, &[], centre);
    }
    st
}

fn check_step(h: f64) -> Result<()> {
    if !(h > 0.0) || !h.is_finite() {
        return config(format!("finite-difference step must be positive, got {h}"));
    }
    Ok(())
}

fn accumulate<T: Scalar>(st: &Stencil<T>, v: &Array1<T>, n: usize) -> Array1<T> {
    let mut lap = Array1::zeros(n);
    for ((&o, &c), &val) in st.owner.iter().zip(&st.coef).zip(v.iter()) {
        lap[o] += c * val;
    }
    lap
}

/// Projected finite-difference Laplace-Beltrami operator on a batch.
///
/// The field is evaluated off the manifold through the radial projection
/// of [`ProductManifoldSpec::project_ambient`](crate::manifold::ProductManifoldSpec::project_ambient),
/// which is constant along normals, so the projected Hessian trace is the
/// Laplace-Beltrami operator up to `O(h²)` truncation.
pub fn laplacian_extrinsic_batch<T: Scalar>(
    params: &FieldParams<T>,
    enc: &Encoding,
    points: &[Point<T>],
    h: f64,
) -> Result<Array1<T>> {
    check_step(h)?;
    check_dims(params, enc)?;
    let st = stencil(enc, points, h);
    let v = Tape::forward(params, vec![enc.encode_ambient_batch(&st.nodes)]).output(0).clone();
    Ok(accumulate(&st, &v, points.len()))
}

pub fn laplacian_extrinsic<T: Scalar>(params: &FieldParams<T>, enc: &Encoding, x: &Point<T>, h: f64) -> Result<T> {
    Ok(laplacian_extrinsic_batch(params, enc, std::slice::from_ref(x), h)?[0])
}

/// Every stencil node is an ordinary forward pass, so the reverse sweep
/// runs once over all nodes with adjoint `weight_owner * coef`.
pub(crate) fn weighted_gradient<T: Scalar>(
    params: &FieldParams<T>,
    enc: &Encoding,
    points: &[Point<T>],
    h: f64,
    weight: impl Fn(&Array1<T>) -> Array1<T>,
) -> Result<(Array1<T>, Vec<T>)> {
    check_step(h)?;
    let st = stencil(enc, points, h);
    let tape = Tape::forward(params, vec![enc.encode_ambient_batch(&st.nodes)]);
    let lap = accumulate(&st, tape.output(0), points.len());
    let w = weight(&lap);
    let adj: Array1<T> = st.owner.iter().zip(&st.coef).map(|(&o, &c)| w[o] * c).collect();
    Ok((lap, tape.backward(params, &[Some(adj)])))
}
