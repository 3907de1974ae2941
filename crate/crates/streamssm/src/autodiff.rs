//! Tape-based reverse-mode automatic differentiation over scalars.
//!
//! [`Var`] implements [`Real`], so any model code written against the trait
//! can be replayed onto the tape unchanged. The tape is thread-local; use
//! [`gradients`] to run a closure over tracked inputs and get the exact
//! gradient of its scalar output with respect to every input.

use crate::real::Real;
use std::cell::RefCell;
use std::cmp::Ordering;
use std::ops::{Add, AddAssign, Div, Mul, MulAssign, Neg, Sub, SubAssign};

const NONE: u32 = u32::MAX;

#[derive(Clone, Copy)]
struct Node {
    parents: [u32; 2],
    partials: [f64; 2],
}

thread_local! {
    static TAPE: RefCell<Vec<Node>> = const { RefCell::new(Vec::new()) };
}

/// A scalar tracked on the active tape. Copyable: it is just a value plus a
/// node index.
#[derive(Clone, Copy, Debug)]
pub struct Var {
    value: f64,
    idx: u32,
}

impl Var {
    pub fn value(self) -> f64 {
        self.value
    }

    fn leaf(value: f64) -> Var {
        push(value, [NONE, NONE], [0.0, 0.0])
    }

    fn unary(self, value: f64, partial: f64) -> Var {
        push(value, [self.idx, NONE], [partial, 0.0])
    }

    fn binary(self, other: Var, value: f64, da: f64, db: f64) -> Var {
        push(value, [self.idx, other.idx], [da, db])
    }
}

fn push(value: f64, parents: [u32; 2], partials: [f64; 2]) -> Var {
    TAPE.with(|t| {
        let mut tape = t.borrow_mut();
        let idx = tape.len() as u32;
        tape.push(Node { parents, partials });
        Var { value, idx }
    })
}

/// Runs `f` on a fresh tape with `inputs` as tracked leaves and returns
/// `(output_value, d output / d input_i)`.
pub fn gradients(inputs: &[f64], f: impl FnOnce(&[Var]) -> Var) -> (f64, Vec<f64>) {
    TAPE.with(|t| t.borrow_mut().clear());
    let vars: Vec<Var> = inputs.iter().map(|&v| Var::leaf(v)).collect();
    let out = f(&vars);
    let adjoints = TAPE.with(|t| {
        let tape = t.borrow();
        let mut adj = vec![0.0f64; tape.len()];
        adj[out.idx as usize] = 1.0;
        for i in (0..tape.len()).rev() {
            let a = adj[i];
            if a == 0.0 {
                continue;
            }
            let node = tape[i];
            for k in 0..2 {
                if node.parents[k] != NONE {
                    adj[node.parents[k] as usize] += a * node.partials[k];
                }
            }
        }
        adj
    });
    let grads = vars.iter().map(|v| adjoints[v.idx as usize]).collect();
    TAPE.with(|t| t.borrow_mut().clear());
    (out.value, grads)
}

impl Add for Var {
    type Output = Var;
    fn add(self, rhs: Var) -> Var {
        self.binary(rhs, self.value + rhs.value, 1.0, 1.0)
    }
}

impl Sub for Var {
    type Output = Var;
    fn sub(self, rhs: Var) -> Var {
        self.binary(rhs, self.value - rhs.value, 1.0, -1.0)
    }
}

impl Mul for Var {
    type Output = Var;
    fn mul(self, rhs: Var) -> Var {
        self.binary(rhs, self.value * rhs.value, rhs.value, self.value)
    }
}

impl Div for Var {
    type Output = Var;
    fn div(self, rhs: Var) -> Var {
        self.binary(
            rhs,
            self.value / rhs.value,
            1.0 / rhs.value,
            -self.value / (rhs.value * rhs.value),
        )
    }
}

impl Neg for Var {
    type Output = Var;
    fn neg(self) -> Var {
        self.unary(-self.value, -1.0)
    }
}

impl AddAssign for Var {
    fn add_assign(&mut self, rhs: Var) {
        *self = *self + rhs;
    }
}

impl SubAssign for Var {
    fn sub_assign(&mut self, rhs: Var) {
        *self = *self - rhs;
    }
}

impl MulAssign for Var {
    fn mul_assign(&mut self, rhs: Var) {
        *self = *self * rhs;
    }
}

impl PartialEq for Var {
    fn eq(&self, other: &Var) -> bool {
        self.value == other.value
    }
}

impl PartialOrd for Var {
    fn partial_cmp(&self, other: &Var) -> Option<Ordering> {
        self.value.partial_cmp(&other.value)
    }
}

impl Real for Var {
    fn from_f64(v: f64) -> Self {
        Var::leaf(v)
    }
    fn to_f64(self) -> f64 {
        self.value
    }
    fn exp(self) -> Self {
        let e = self.value.exp();
        self.unary(e, e)
    }
    fn ln(self) -> Self {
        self.unary(self.value.ln(), 1.0 / self.value)
    }
    fn ln_1p(self) -> Self {
        self.unary(self.value.ln_1p(), 1.0 / (1.0 + self.value))
    }
    fn expm1(self) -> Self {
        self.unary(self.value.exp_m1(), self.value.exp())
    }
    fn sqrt(self) -> Self {
        let s = self.value.sqrt();
        self.unary(s, 0.5 / s)
    }
    fn tanh(self) -> Self {
        let t = self.value.tanh();
        self.unary(t, 1.0 - t * t)
    }
    fn abs(self) -> Self {
        let sign = if self.value >= 0.0 { 1.0 } else { -1.0 };
        self.unary(self.value.abs(), sign)
    }
    fn maximum(self, other: Self) -> Self {
        if self.value >= other.value {
            self.binary(other, self.value, 1.0, 0.0)
        } else {
            self.binary(other, other.value, 0.0, 1.0)
        }
    }
    fn minimum(self, other: Self) -> Self {
        if self.value <= other.value {
            self.binary(other, self.value, 1.0, 0.0)
        } else {
            self.binary(other, other.value, 0.0, 1.0)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::real::{sigmoid, silu, softplus};

    fn finite_diff(f: impl Fn(&[f64]) -> f64, x: &[f64], eps: f64) -> Vec<f64> {
        (0..x.len())
            .map(|i| {
                let mut xp = x.to_vec();
                let mut xm = x.to_vec();
                xp[i] += eps;
                xm[i] -= eps;
                (f(&xp) - f(&xm)) / (2.0 * eps)
            })
            .collect()
    }

    #[test]
    fn polynomial_gradient() {
        // f = x^2 y + y^3
        let x = [3.0, 2.0];
        let (val, g) = gradients(&x, |v| v[0] * v[0] * v[1] + v[1] * v[1] * v[1]);
        assert_eq!(val, 3.0 * 3.0 * 2.0 + 8.0);
        assert_eq!(g[0], 2.0 * 3.0 * 2.0);
        assert_eq!(g[1], 9.0 + 3.0 * 4.0);
    }

    #[test]
    fn transcendental_chain_matches_finite_diff() {
        let f = |v: &[Var]| {
            let a = silu(v[0]) + softplus(v[1] * v[2]);
            let b = a.tanh() * v[2].exp().ln_1p();
            b * b + sigmoid(v[0] - v[1]).sqrt()
        };
        let fv = |x: &[f64]| {
            let a = silu(x[0]) + softplus(x[1] * x[2]);
            let b = a.tanh() * x[2].exp().ln_1p();
            b * b + sigmoid(x[0] - x[1]).sqrt()
        };
        let x = [0.7, -0.3, 0.5];
        let (val, g) = gradients(&x, f);
        assert!((val - fv(&x)).abs() < 1e-14);
        let fd = finite_diff(fv, &x, 1e-6);
        for (gi, fi) in g.iter().zip(&fd) {
            assert!((gi - fi).abs() < 1e-8, "grad {gi} vs fd {fi}");
        }
    }

    #[test]
    fn fan_out_accumulates() {
        // f = x * x reused through two paths
        let (_, g) = gradients(&[2.0], |v| {
            let s = v[0] + v[0];
            s * v[0]
        });
        // f = 2x^2, f' = 4x
        assert_eq!(g[0], 8.0);
    }

    #[test]
    fn tape_resets_between_calls() {
        for _ in 0..3 {
            let (val, g) = gradients(&[1.5], |v| v[0] * v[0]);
            assert_eq!(val, 2.25);
            assert_eq!(g[0], 3.0);
        }
    }
}
