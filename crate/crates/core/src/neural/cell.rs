//! One step of the gated recurrent identifier and its reverse pass.
//!
//! ```text
//! p      = 1 / (x·x + eps_p)
//! u      = (norm_vec p) ⊙ ∇ISE                 learnable normalization
//! r      = σ(W_r u + U_r c + b_r)              reset gate
//! z      = σ(W_z u + U_z c + b_z)              update gate
//! g      = u + F (r ⊙ c) + b_F
//! c'     = (1 - z) ⊙ c + z ⊙ tanh(g)
//! delta  = H2 tanh(H1 tanh(H0 g + b0) + b1) + b2
//! ```

use crate::error::{Error, Result};

use super::linalg::{gemv, gemv_t, ger_add, sigmoid};
use super::params::{DnnParams, Field};

/// Guard added to the regressor power before taking its reciprocal.
pub const POWER_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy)]
pub struct CellInput<'a> {
    /// `∇ISE(n) = x e`.
    pub grad: &'a [f64],
    /// `x·x`.
    pub power: f64,
    pub c: &'a [f64],
}

/// Intermediates kept for the reverse pass.
#[derive(Debug, Clone, PartialEq)]
pub struct CellCache {
    pub p: f64,
    pub grad: Vec<f64>,
    pub c: Vec<f64>,
    pub u: Vec<f64>,
    pub r: Vec<f64>,
    pub z: Vec<f64>,
    pub g: Vec<f64>,
    pub t: Vec<f64>,
    pub s1: Vec<f64>,
    pub s2: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellOutput {
    pub delta: Vec<f64>,
    pub c_next: Vec<f64>,
    pub cache: CellCache,
}

pub fn cell_forward(params: &DnnParams, input: CellInput<'_>) -> Result<CellOutput> {
    cell_forward_at(params, input, 0)
}

pub(crate) fn cell_forward_at(params: &DnnParams, input: CellInput<'_>, frame: usize) -> Result<CellOutput> {
    let d = params.width();
    if input.grad.len() != d || input.c.len() != d {
        return Err(Error::invalid(format!(
            "cell inputs must have width {d} (grad {}, c {})",
            input.grad.len(),
            input.c.len()
        )));
    }
    if !(input.power >= 0.0) {
        return Err(Error::invalid("regressor power must be >= 0"));
    }

    let p = 1.0 / (input.power + POWER_EPS);
    let norm = params.get(Field::NormVec);
    let u: Vec<f64> = norm.iter().zip(input.grad).map(|(w, gr)| w * p * gr).collect();

    let gate = |w: Field, uw: Field, b: Field| -> Vec<f64> {
        let mut a = gemv(params.get(w), &u);
        let ac = gemv(params.get(uw), input.c);
        a.iter_mut()
            .zip(ac)
            .zip(params.get(b))
            .for_each(|((v, cv), bv)| *v = sigmoid(*v + cv + bv));
        a
    };
    let r = gate(Field::ResetW, Field::ResetU, Field::ResetB);
    let z = gate(Field::UpdateW, Field::UpdateU, Field::UpdateB);

    let q: Vec<f64> = r.iter().zip(input.c).map(|(a, b)| a * b).collect();
    let mut g = gemv(params.get(Field::FcW), &q);
    g.iter_mut()
        .zip(&u)
        .zip(params.get(Field::FcB))
        .for_each(|((v, ui), b)| *v += ui + b);

    let t: Vec<f64> = g.iter().map(|v| v.tanh()).collect();
    let c_next: Vec<f64> = (0..d).map(|i| (1.0 - z[i]) * input.c[i] + z[i] * t[i]).collect();

    let layer = |w: Field, b: Field, v: &[f64], act: bool| -> Vec<f64> {
        let mut a = gemv(params.get(w), v);
        a.iter_mut().zip(params.get(b)).for_each(|(x, bb)| {
            *x += bb;
            if act {
                *x = x.tanh();
            }
        });
        a
    };
    let s1 = layer(Field::Head0W, Field::Head0B, &g, true);
    let s2 = layer(Field::Head1W, Field::Head1B, &s1, true);
    let delta = layer(Field::Head2W, Field::Head2B, &s2, false);

    if !delta.iter().chain(&c_next).all(|v| v.is_finite()) {
        return Err(Error::numerical(
            frame,
            "recurrent cell produced a non-finite value",
        ));
    }

    Ok(CellOutput {
        delta,
        c_next,
        cache: CellCache {
            p,
            grad: input.grad.to_vec(),
            c: input.c.to_vec(),
            u,
            r,
            z,
            g,
            t,
            s1,
            s2,
        },
    })
}

/// Gradients flowing out of one cell step.
pub(crate) struct CellAdjoint {
    /// d loss / d ∇ISE(n).
    pub grad: Vec<f64>,
    /// d loss / d c_n.
    pub c: Vec<f64>,
}

/// Reverse pass of one step. Parameter gradients are accumulated into `grads`.
pub(crate) fn cell_backward(
    params: &DnnParams,
    cache: &CellCache,
    d_delta: &[f64],
    d_c_next: &[f64],
    grads: &mut DnnParams,
) -> CellAdjoint {
    let d = params.width();

    // head
    add_into(grads.get_mut(Field::Head2B), d_delta);
    ger_add(grads.get_mut(Field::Head2W), d_delta, &cache.s2);
    let mut a2 = gemv_t(params.get(Field::Head2W), d_delta);
    a2.iter_mut().zip(&cache.s2).for_each(|(v, s)| *v *= 1.0 - s * s);
    add_into(grads.get_mut(Field::Head1B), &a2);
    ger_add(grads.get_mut(Field::Head1W), &a2, &cache.s1);
    let mut a1 = gemv_t(params.get(Field::Head1W), &a2);
    a1.iter_mut().zip(&cache.s1).for_each(|(v, s)| *v *= 1.0 - s * s);
    add_into(grads.get_mut(Field::Head0B), &a1);
    ger_add(grads.get_mut(Field::Head0W), &a1, &cache.g);
    let mut dg = gemv_t(params.get(Field::Head0W), &a1);

    // hidden-state blend
    let mut dz = vec![0.0; d];
    let mut dc = vec![0.0; d];
    for i in 0..d {
        dz[i] = d_c_next[i] * (cache.t[i] - cache.c[i]);
        dc[i] = d_c_next[i] * (1.0 - cache.z[i]);
        dg[i] += d_c_next[i] * cache.z[i] * (1.0 - cache.t[i] * cache.t[i]);
    }

    // g = u + F (r ⊙ c) + b
    let mut du = dg.clone();
    add_into(grads.get_mut(Field::FcB), &dg);
    let q: Vec<f64> = cache.r.iter().zip(&cache.c).map(|(a, b)| a * b).collect();
    ger_add(grads.get_mut(Field::FcW), &dg, &q);
    let dq = gemv_t(params.get(Field::FcW), &dg);
    let mut dr = vec![0.0; d];
    for i in 0..d {
        dr[i] = dq[i] * cache.c[i];
        dc[i] += dq[i] * cache.r[i];
    }

    // gates
    let mut gate_back = |act: &[f64], d_act: &[f64], w: Field, uw: Field, b: Field| {
        let pre: Vec<f64> = act.iter().zip(d_act).map(|(s, ds)| ds * s * (1.0 - s)).collect();
        add_into(grads.get_mut(b), &pre);
        ger_add(grads.get_mut(w), &pre, &cache.u);
        ger_add(grads.get_mut(uw), &pre, &cache.c);
        add_into(&mut du, &gemv_t(params.get(w), &pre));
        add_into(&mut dc, &gemv_t(params.get(uw), &pre));
    };
    gate_back(&cache.z, &dz, Field::UpdateW, Field::UpdateU, Field::UpdateB);
    gate_back(&cache.r, &dr, Field::ResetW, Field::ResetU, Field::ResetB);

    // u = (norm p) ⊙ grad
    let norm = params.get(Field::NormVec);
    let gnorm = grads.get_mut(Field::NormVec);
    let mut dgrad = vec![0.0; d];
    for i in 0..d {
        gnorm[i] += du[i] * cache.grad[i] * cache.p;
        dgrad[i] = du[i] * norm[i] * cache.p;
    }

    CellAdjoint { grad: dgrad, c: dc }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    dst.iter_mut().zip(src).for_each(|(a, b)| *a += b);
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::params::init_identity;

    fn norm(v: &[f64]) -> f64 {
        v.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    #[test]
    fn zero_input_is_a_fixed_point_at_identity() {
        let p = init_identity(4).unwrap();
        let zero = [0.0; 4];
        let out = cell_forward(
            &p,
            CellInput {
                grad: &zero,
                power: 1.0,
                c: &zero,
            },
        )
        .unwrap();
        assert_eq!(out.delta, vec![0.0; 4]);
        assert_eq!(out.c_next, vec![0.0; 4]);
    }

    #[test]
    fn small_signal_matches_normalized_gradient() {
        let p = init_identity(6).unwrap();
        let x = [0.5, -1.0, 0.25, 2.0, -0.75, 1.5];
        let power: f64 = x.iter().map(|v| v * v).sum();
        let e = 3e-5;
        let grad: Vec<f64> = x.iter().map(|v| v * e).collect();
        let out = cell_forward(
            &p,
            CellInput {
                grad: &grad,
                power,
                c: &[0.0; 6],
            },
        )
        .unwrap();
        let u: Vec<f64> = grad.iter().map(|g| g / (power + POWER_EPS)).collect();
        assert!(norm(&u) <= 1e-4);
        let diff: Vec<f64> = out.delta.iter().zip(&u).map(|(a, b)| a - b).collect();
        assert!(norm(&diff) <= 1e-6 * norm(&u));
    }

    #[test]
    fn zero_power_stays_finite() {
        let p = init_identity(3).unwrap();
        let out = cell_forward(
            &p,
            CellInput {
                grad: &[0.0; 3],
                power: 0.0,
                c: &[0.1, -0.2, 0.3],
            },
        )
        .unwrap();
        assert!(out.delta.iter().chain(&out.c_next).all(|v| v.is_finite()));
    }

    #[test]
    fn hidden_state_stays_inside_unit_box() {
        let p = init_identity(3).unwrap();
        let mut c = vec![0.0; 3];
        for step in 0..50 {
            let grad = [1e3 * (step as f64).sin(), -5e2, 7.0];
            let out = cell_forward(
                &p,
                CellInput {
                    grad: &grad,
                    power: 0.01,
                    c: &c,
                },
            )
            .unwrap();
            assert!(out.c_next.iter().all(|v| v.abs() <= 1.0));
            c = out.c_next;
        }
    }

    #[test]
    fn rejects_bad_widths() {
        let p = init_identity(3).unwrap();
        let r = cell_forward(
            &p,
            CellInput {
                grad: &[0.0; 2],
                power: 1.0,
                c: &[0.0; 3],
            },
        );
        assert!(r.is_err());
    }
}
