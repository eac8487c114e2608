//! Scalar reverse-mode differentiation.
//!
//! Log densities are written once against the [`Real`] trait and evaluated
//! either on plain `f64` (value only) or on [`Var`] (value and gradient).
//! Every `Var` operation appends a node with at most two parents to a
//! thread-local tape; [`value_and_gradient`] resets the tape, runs the
//! closure and sweeps the adjoints backwards.
//!
//! The tape is per thread, so independent threads can differentiate
//! concurrently. Calls to [`value_and_gradient`] must not nest.

use std::cell::RefCell;
use std::fmt::Debug;
use std::ops::{Add, AddAssign, Div, Mul, Neg, Sub};

use statrs::function::gamma::{digamma, ln_gamma};

const NONE: u32 = u32::MAX;

/// Scalar type that log densities are generic over.
pub trait Real:
    Copy
    + Debug
    + Send
    + Sync
    + 'static
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + Add<f64, Output = Self>
    + Sub<f64, Output = Self>
    + Mul<f64, Output = Self>
    + Div<f64, Output = Self>
    + AddAssign
{
    fn from_f64(v: f64) -> Self;
    fn value(self) -> f64;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn sqrt(self) -> Self;
    /// `ln(1 + exp(x))`, stable for large `|x|`.
    fn softplus(self) -> Self;
    fn sigmoid(self) -> Self;
    fn ln_gamma(self) -> Self;

    fn square(self) -> Self {
        self * self
    }

    /// `ln(sigmoid(x))`.
    fn log_sigmoid(self) -> Self {
        -(-self).softplus()
    }

    fn sum<I: IntoIterator<Item = Self>>(iter: I) -> Self {
        iter.into_iter().fold(Self::from_f64(0.0), |acc, x| acc + x)
    }
}

fn softplus_f64(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid_f64(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Real for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn value(self) -> f64 {
        self
    }
    fn exp(self) -> Self {
        f64::exp(self)
    }
    fn ln(self) -> Self {
        f64::ln(self)
    }
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    fn softplus(self) -> Self {
        softplus_f64(self)
    }
    fn sigmoid(self) -> Self {
        sigmoid_f64(self)
    }
    fn ln_gamma(self) -> Self {
        ln_gamma(self)
    }
}

#[derive(Clone, Copy)]
struct Node {
    a: u32,
    da: f64,
    b: u32,
    db: f64,
}

thread_local! {
    static TAPE: RefCell<Vec<Node>> = const { RefCell::new(Vec::new()) };
}

fn push(node: Node) -> u32 {
    TAPE.with(|t| {
        let mut t = t.borrow_mut();
        let i = t.len();
        t.push(node);
        i as u32
    })
}

/// A tape-recorded scalar. Constants carry no tape node.
#[derive(Clone, Copy, Debug)]
pub struct Var {
    val: f64,
    idx: u32,
}

impl Var {
    pub fn constant(val: f64) -> Self {
        Var { val, idx: NONE }
    }

    pub fn is_constant(&self) -> bool {
        self.idx == NONE
    }

    fn unary(val: f64, x: Var, dx: f64) -> Var {
        if x.idx == NONE {
            return Var::constant(val);
        }
        let idx = push(Node {
            a: x.idx,
            da: dx,
            b: NONE,
            db: 0.0,
        });
        Var { val, idx }
    }

    fn binary(val: f64, x: Var, dx: f64, y: Var, dy: f64) -> Var {
        match (x.idx == NONE, y.idx == NONE) {
            (true, true) => Var::constant(val),
            (false, true) => Var::unary(val, x, dx),
            (true, false) => Var::unary(val, y, dy),
            (false, false) => {
                let idx = push(Node {
                    a: x.idx,
                    da: dx,
                    b: y.idx,
                    db: dy,
                });
                Var { val, idx }
            }
        }
    }
}

impl Add for Var {
    type Output = Var;
    fn add(self, rhs: Var) -> Var {
        Var::binary(self.val + rhs.val, self, 1.0, rhs, 1.0)
    }
}

impl Sub for Var {
    type Output = Var;
    fn sub(self, rhs: Var) -> Var {
        Var::binary(self.val - rhs.val, self, 1.0, rhs, -1.0)
    }
}

impl Mul for Var {
    type Output = Var;
    fn mul(self, rhs: Var) -> Var {
        Var::binary(self.val * rhs.val, self, rhs.val, rhs, self.val)
    }
}

impl Div for Var {
    type Output = Var;
    fn div(self, rhs: Var) -> Var {
        let q = self.val / rhs.val;
        Var::binary(q, self, 1.0 / rhs.val, rhs, -q / rhs.val)
    }
}

impl Neg for Var {
    type Output = Var;
    fn neg(self) -> Var {
        Var::unary(-self.val, self, -1.0)
    }
}

impl Add<f64> for Var {
    type Output = Var;
    fn add(self, rhs: f64) -> Var {
        Var::unary(self.val + rhs, self, 1.0)
    }
}

impl Sub<f64> for Var {
    type Output = Var;
    fn sub(self, rhs: f64) -> Var {
        Var::unary(self.val - rhs, self, 1.0)
    }
}

impl Mul<f64> for Var {
    type Output = Var;
    fn mul(self, rhs: f64) -> Var {
        Var::unary(self.val * rhs, self, rhs)
    }
}

impl Div<f64> for Var {
    type Output = Var;
    fn div(self, rhs: f64) -> Var {
        Var::unary(self.val / rhs, self, 1.0 / rhs)
    }
}

impl AddAssign for Var {
    fn add_assign(&mut self, rhs: Var) {
        *self = *self + rhs;
    }
}

impl Real for Var {
    fn from_f64(v: f64) -> Self {
        Var::constant(v)
    }
    fn value(self) -> f64 {
        self.val
    }
    fn exp(self) -> Self {
        let e = self.val.exp();
        Var::unary(e, self, e)
    }
    fn ln(self) -> Self {
        Var::unary(self.val.ln(), self, 1.0 / self.val)
    }
    fn sqrt(self) -> Self {
        let s = self.val.sqrt();
        Var::unary(s, self, 0.5 / s)
    }
    fn softplus(self) -> Self {
        Var::unary(softplus_f64(self.val), self, sigmoid_f64(self.val))
    }
    fn sigmoid(self) -> Self {
        let s = sigmoid_f64(self.val);
        Var::unary(s, self, s * (1.0 - s))
    }
    fn ln_gamma(self) -> Self {
        Var::unary(ln_gamma(self.val), self, digamma(self.val))
    }
    fn square(self) -> Self {
        Var::unary(self.val * self.val, self, 2.0 * self.val)
    }
}

/// Evaluates `f` at `x` and returns its value together with the gradient.
///
/// Panics if called from inside another `value_and_gradient` closure on the
/// same thread.
pub fn value_and_gradient<F>(x: &[f64], f: F) -> (f64, Vec<f64>)
where
    F: FnOnce(&[Var]) -> Var,
{
    let n = x.len();
    TAPE.with(|t| {
        let mut t = t.borrow_mut();
        t.clear();
        t.extend(std::iter::repeat_n(
            Node {
                a: NONE,
                da: 0.0,
                b: NONE,
                db: 0.0,
            },
            n,
        ));
    });
    let inputs: Vec<Var> = x
        .iter()
        .enumerate()
        .map(|(i, &val)| Var { val, idx: i as u32 })
        .collect();
    let out = f(&inputs);
    let grad = TAPE.with(|t| {
        let t = t.borrow();
        let mut adj = vec![0.0; t.len()];
        if out.idx != NONE {
            adj[out.idx as usize] = 1.0;
            for i in (n..t.len()).rev() {
                let a = adj[i];
                if a == 0.0 {
                    continue;
                }
                let node = t[i];
                if node.a != NONE {
                    adj[node.a as usize] += a * node.da;
                }
                if node.b != NONE {
                    adj[node.b as usize] += a * node.db;
                }
            }
        }
        adj.truncate(n);
        adj
    });
    (out.val, grad)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fd<F: Fn(&[f64]) -> f64>(f: F, x: &[f64]) -> Vec<f64> {
        (0..x.len())
            .map(|i| {
                let h = 1e-6 * x[i].abs().max(1.0);
                let mut up = x.to_vec();
                let mut dn = x.to_vec();
                up[i] += h;
                dn[i] -= h;
                (f(&up) - f(&dn)) / (2.0 * h)
            })
            .collect()
    }

    fn expr<R: Real>(x: &[R]) -> R {
        let a = x[0];
        let b = x[1];
        (a * b).exp() / (b.square() + 1.0) + (a - b).softplus() + b.sigmoid().ln()
            - (a.exp() + 2.0).ln_gamma()
            + (a * a + 3.0).sqrt() * 0.5
            + b.log_sigmoid()
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let x = [0.3, -1.2];
        let (v, g) = value_and_gradient(&x, expr);
        assert!((v - expr(&x)).abs() < 1e-14);
        let num = fd(expr, &x);
        for (a, b) in g.iter().zip(&num) {
            assert!((a - b).abs() < 1e-7, "{a} vs {b}");
        }
    }

    #[test]
    fn constant_output_has_zero_gradient() {
        let (v, g) = value_and_gradient(&[1.0, 2.0], |_| Var::constant(4.0));
        assert_eq!(v, 4.0);
        assert_eq!(g, vec![0.0, 0.0]);
    }

    #[test]
    fn repeated_use_of_input_accumulates() {
        let (_, g) = value_and_gradient(&[3.0], |x| x[0] * x[0] + x[0]);
        assert_eq!(g, vec![7.0]);
    }

    #[test]
    fn softplus_is_stable() {
        assert_eq!(Real::softplus(800.0_f64), 800.0);
        assert!(Real::softplus(-800.0_f64) >= 0.0);
        assert!(Real::log_sigmoid(-800.0_f64).is_finite());
    }
}
