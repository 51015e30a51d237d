//! Forward-mode differentiation scalars.
//!
//! Residual kernels are written generically over [`Scalar`] so the same code
//! path produces plain values (`f64`) and first derivatives (`Jet`). A `Jet`
//! carries a value together with its gradient with respect to a set of seed
//! variables. Constants use an empty gradient, which keeps allocation out of
//! expressions that mix constants with variables.

use std::ops::{Add, Div, Mul, Neg, Sub};

/// Arithmetic interface shared by `f64` and [`Jet`].
pub trait Scalar:
    Clone
    + std::fmt::Debug
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + for<'a> Add<&'a Self, Output = Self>
    + for<'a> Sub<&'a Self, Output = Self>
    + for<'a> Mul<&'a Self, Output = Self>
    + for<'a> Div<&'a Self, Output = Self>
    + Add<f64, Output = Self>
    + Sub<f64, Output = Self>
    + Mul<f64, Output = Self>
    + Div<f64, Output = Self>
{
    fn constant(value: f64) -> Self;
    fn value(&self) -> f64;
    fn sqrt(&self) -> Self;
    fn exp(&self) -> Self;
    fn ln(&self) -> Self;
    fn powi(&self, n: i32) -> Self;
    fn sin(&self) -> Self;
    fn cos(&self) -> Self;

    fn zero() -> Self {
        Self::constant(0.0)
    }
    fn one() -> Self {
        Self::constant(1.0)
    }
}

impl Scalar for f64 {
    fn constant(value: f64) -> Self {
        value
    }
    fn value(&self) -> f64 {
        *self
    }
    fn sqrt(&self) -> Self {
        f64::sqrt(*self)
    }
    fn exp(&self) -> Self {
        f64::exp(*self)
    }
    fn ln(&self) -> Self {
        f64::ln(*self)
    }
    fn powi(&self, n: i32) -> Self {
        f64::powi(*self, n)
    }
    fn sin(&self) -> Self {
        f64::sin(*self)
    }
    fn cos(&self) -> Self {
        f64::cos(*self)
    }
}

/// Value plus gradient with respect to the seeded variables.
///
/// An empty gradient means "zero gradient"; binary operations broadcast it
/// against gradients of any length.
#[derive(Clone, Debug, PartialEq)]
pub struct Jet {
    pub v: f64,
    pub d: Vec<f64>,
}

impl Jet {
    /// Seed variable `index` out of `n_vars` with value `v`.
    pub fn variable(v: f64, index: usize, n_vars: usize) -> Self {
        let mut d = vec![0.0; n_vars];
        d[index] = 1.0;
        Jet { v, d }
    }

    /// Partial derivative with respect to seed variable `index`.
    pub fn deriv(&self, index: usize) -> f64 {
        self.d.get(index).copied().unwrap_or(0.0)
    }

    fn chain(&self, v: f64, dv: f64) -> Jet {
        Jet {
            v,
            d: self.d.iter().map(|g| g * dv).collect(),
        }
    }
}

fn zip_grads(a: &[f64], b: &[f64], fa: f64, fb: f64) -> Vec<f64> {
    match (a.is_empty(), b.is_empty()) {
        (true, true) => Vec::new(),
        (false, true) => a.iter().map(|x| x * fa).collect(),
        (true, false) => b.iter().map(|x| x * fb).collect(),
        (false, false) => {
            debug_assert_eq!(a.len(), b.len(), "jet gradient lengths differ");
            a.iter().zip(b).map(|(x, y)| x * fa + y * fb).collect()
        }
    }
}

impl Scalar for Jet {
    fn constant(value: f64) -> Self {
        Jet {
            v: value,
            d: Vec::new(),
        }
    }
    fn value(&self) -> f64 {
        self.v
    }
    fn sqrt(&self) -> Self {
        let s = self.v.sqrt();
        self.chain(s, 0.5 / s)
    }
    fn exp(&self) -> Self {
        let e = self.v.exp();
        self.chain(e, e)
    }
    fn ln(&self) -> Self {
        self.chain(self.v.ln(), 1.0 / self.v)
    }
    fn powi(&self, n: i32) -> Self {
        if n == 0 {
            return Jet::constant(1.0);
        }
        self.chain(self.v.powi(n), f64::from(n) * self.v.powi(n - 1))
    }
    fn sin(&self) -> Self {
        self.chain(self.v.sin(), self.v.cos())
    }
    fn cos(&self) -> Self {
        self.chain(self.v.cos(), -self.v.sin())
    }
}

macro_rules! jet_binop {
    ($trait:ident, $method:ident, |$a:ident, $b:ident| $val:expr, |$av:ident, $bv:ident| ($fa:expr, $fb:expr)) => {
        impl $trait<Jet> for Jet {
            type Output = Jet;
            fn $method(self, rhs: Jet) -> Jet {
                (&self).$method(&rhs)
            }
        }
        impl $trait<&Jet> for Jet {
            type Output = Jet;
            fn $method(self, rhs: &Jet) -> Jet {
                (&self).$method(rhs)
            }
        }
        impl $trait<Jet> for &Jet {
            type Output = Jet;
            fn $method(self, rhs: Jet) -> Jet {
                self.$method(&rhs)
            }
        }
        impl $trait<&Jet> for &Jet {
            type Output = Jet;
            fn $method(self, rhs: &Jet) -> Jet {
                let ($a, $b) = (self, rhs);
                let ($av, $bv) = ($a.v, $b.v);
                let _ = ($av, $bv);
                Jet {
                    v: $val,
                    d: zip_grads(&$a.d, &$b.d, $fa, $fb),
                }
            }
        }
    };
}

jet_binop!(Add, add, |a, b| a.v + b.v, |av, bv| (1.0, 1.0));
jet_binop!(Sub, sub, |a, b| a.v - b.v, |av, bv| (1.0, -1.0));
jet_binop!(Mul, mul, |a, b| a.v * b.v, |av, bv| (bv, av));
jet_binop!(Div, div, |a, b| a.v / b.v, |av, bv| (1.0 / bv, -av / (bv * bv)));

macro_rules! jet_f64_op {
    ($trait:ident, $method:ident, |$a:ident, $r:ident| $val:expr, $dfac:expr) => {
        impl $trait<f64> for Jet {
            type Output = Jet;
            fn $method(self, rhs: f64) -> Jet {
                (&self).$method(rhs)
            }
        }
        impl $trait<f64> for &Jet {
            type Output = Jet;
            fn $method(self, rhs: f64) -> Jet {
                let ($a, $r) = (self, rhs);
                let f: f64 = $dfac;
                Jet {
                    v: $val,
                    d: $a.d.iter().map(|g| g * f).collect(),
                }
            }
        }
    };
}

jet_f64_op!(Add, add, |a, r| a.v + r, 1.0);
jet_f64_op!(Sub, sub, |a, r| a.v - r, 1.0);
jet_f64_op!(Mul, mul, |a, r| a.v * r, r);
jet_f64_op!(Div, div, |a, r| a.v / r, 1.0 / r);

impl Neg for Jet {
    type Output = Jet;
    fn neg(mut self) -> Jet {
        self.v = -self.v;
        for g in &mut self.d {
            *g = -*g;
        }
        self
    }
}

impl Neg for &Jet {
    type Output = Jet;
    fn neg(self) -> Jet {
        -self.clone()
    }
}

/// First-order tangent over any scalar: value plus one directional
/// derivative. Nesting `Tangent<Jet>` yields directional derivatives whose
/// coefficients still carry full gradients, which is how second-order
/// chain-rule terms enter the assembled Jacobian.
#[derive(Clone, Debug)]
pub struct Tangent<S> {
    pub v: S,
    pub t: S,
}

impl<S: Scalar> Tangent<S> {
    pub fn new(v: S, t: S) -> Self {
        Tangent { v, t }
    }

    pub fn lift(v: S) -> Self {
        Tangent { v, t: S::zero() }
    }
}

impl<S: Scalar> Scalar for Tangent<S> {
    fn constant(value: f64) -> Self {
        Tangent {
            v: S::constant(value),
            t: S::zero(),
        }
    }
    fn value(&self) -> f64 {
        self.v.value()
    }
    fn sqrt(&self) -> Self {
        let s = self.v.sqrt();
        let t = self.t.clone() / &s * 0.5;
        Tangent { v: s, t }
    }
    fn exp(&self) -> Self {
        let e = self.v.exp();
        Tangent {
            t: self.t.clone() * &e,
            v: e,
        }
    }
    fn ln(&self) -> Self {
        Tangent {
            v: self.v.ln(),
            t: self.t.clone() / &self.v,
        }
    }
    fn powi(&self, n: i32) -> Self {
        if n == 0 {
            return Self::constant(1.0);
        }
        Tangent {
            v: self.v.powi(n),
            t: self.t.clone() * self.v.powi(n - 1) * f64::from(n),
        }
    }
    fn sin(&self) -> Self {
        Tangent {
            v: self.v.sin(),
            t: self.t.clone() * self.v.cos(),
        }
    }
    fn cos(&self) -> Self {
        Tangent {
            v: self.v.cos(),
            t: -(self.t.clone() * self.v.sin()),
        }
    }
}

macro_rules! tangent_binop {
    ($trait:ident, $method:ident, |$a:ident, $b:ident| $body:expr) => {
        impl<S: Scalar> $trait<Tangent<S>> for Tangent<S> {
            type Output = Tangent<S>;
            fn $method(self, rhs: Tangent<S>) -> Tangent<S> {
                (&self).$method(&rhs)
            }
        }
        impl<S: Scalar> $trait<&Tangent<S>> for Tangent<S> {
            type Output = Tangent<S>;
            fn $method(self, rhs: &Tangent<S>) -> Tangent<S> {
                (&self).$method(rhs)
            }
        }
        impl<S: Scalar> $trait<Tangent<S>> for &Tangent<S> {
            type Output = Tangent<S>;
            fn $method(self, rhs: Tangent<S>) -> Tangent<S> {
                self.$method(&rhs)
            }
        }
        impl<S: Scalar> $trait<&Tangent<S>> for &Tangent<S> {
            type Output = Tangent<S>;
            fn $method(self, rhs: &Tangent<S>) -> Tangent<S> {
                let ($a, $b) = (self, rhs);
                let (v, t) = $body;
                Tangent { v, t }
            }
        }
    };
}

tangent_binop!(Add, add, |a, b| (a.v.clone() + &b.v, a.t.clone() + &b.t));
tangent_binop!(Sub, sub, |a, b| (a.v.clone() - &b.v, a.t.clone() - &b.t));
tangent_binop!(Mul, mul, |a, b| (
    a.v.clone() * &b.v,
    a.v.clone() * &b.t + a.t.clone() * &b.v
));
tangent_binop!(Div, div, |a, b| {
    let q = a.v.clone() / &b.v;
    let t = (a.t.clone() - q.clone() * &b.t) / &b.v;
    (q, t)
});

macro_rules! tangent_f64_op {
    ($trait:ident, $method:ident, |$a:ident, $r:ident| $body:expr) => {
        impl<S: Scalar> $trait<f64> for Tangent<S> {
            type Output = Tangent<S>;
            fn $method(self, rhs: f64) -> Tangent<S> {
                (&self).$method(rhs)
            }
        }
        impl<S: Scalar> $trait<f64> for &Tangent<S> {
            type Output = Tangent<S>;
            fn $method(self, rhs: f64) -> Tangent<S> {
                let ($a, $r) = (self, rhs);
                let (v, t) = $body;
                Tangent { v, t }
            }
        }
    };
}

tangent_f64_op!(Add, add, |a, r| (a.v.clone() + r, a.t.clone()));
tangent_f64_op!(Sub, sub, |a, r| (a.v.clone() - r, a.t.clone()));
tangent_f64_op!(Mul, mul, |a, r| (a.v.clone() * r, a.t.clone() * r));
tangent_f64_op!(Div, div, |a, r| (a.v.clone() / r, a.t.clone() / r));

impl<S: Scalar> Neg for Tangent<S> {
    type Output = Tangent<S>;
    fn neg(self) -> Tangent<S> {
        Tangent {
            v: -self.v,
            t: -self.t,
        }
    }
}

impl<S: Scalar> Neg for &Tangent<S> {
    type Output = Tangent<S>;
    fn neg(self) -> Tangent<S> {
        -self.clone()
    }
}
