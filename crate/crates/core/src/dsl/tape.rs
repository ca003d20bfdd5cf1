//! Postfix evaluation of expression trees over plain reals and dual numbers.

use std::ops::{Add, Div, Mul, Neg, Sub};

use smallvec::SmallVec;

use super::expr::{Expr, Func};
use super::DomainKind;
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq)]
enum Op {
    Const(f64),
    Var(usize),
    Neg,
    Add,
    Sub,
    Mul,
    Div,
    Powi(i32),
    Call(Func),
}

#[derive(Debug, Clone, Default)]
pub struct Tape {
    ops: Vec<Op>,
}

impl Tape {
    pub fn compile(expr: &Expr) -> Self {
        let mut ops = Vec::new();
        emit(expr, &mut ops);
        Self { ops }
    }

    pub fn eval<T: Real, S: EvalScalar<T>>(&self, x: &[S]) -> Result<S, DomainKind> {
        let mut stack: SmallVec<[S; 16]> = SmallVec::new();
        for op in &self.ops {
            match *op {
                Op::Const(c) => stack.push(S::constant(T::lit(c))),
                Op::Var(j) => stack.push(x[j]),
                Op::Neg => {
                    let a = stack.pop().expect("tape underflow");
                    stack.push(-a);
                }
                Op::Call(f) => {
                    let a = stack.pop().expect("tape underflow");
                    let p = a.primal();
                    let r = match f {
                        Func::Sin => a.sin(),
                        Func::Cos => a.cos(),
                        Func::Exp => a.exp(),
                        Func::Tanh => a.tanh(),
                        Func::Log => {
                            if !(p > T::zero()) {
                                return Err(DomainKind::LogNonPositive);
                            }
                            a.ln()
                        }
                        Func::Sqrt => {
                            if p < T::zero() || p.is_nan() {
                                return Err(DomainKind::SqrtNegative);
                            }
                            a.sqrt()
                        }
                    };
                    stack.push(r);
                }
                Op::Powi(n) => {
                    let a = stack.pop().expect("tape underflow");
                    if n < 0 && a.primal() == T::zero() {
                        return Err(DomainKind::DivisionByZero);
                    }
                    stack.push(a.powi(n));
                }
                Op::Add | Op::Sub | Op::Mul | Op::Div => {
                    let b = stack.pop().expect("tape underflow");
                    let a = stack.pop().expect("tape underflow");
                    let r = match op {
                        Op::Add => a + b,
                        Op::Sub => a - b,
                        Op::Mul => a * b,
                        _ => {
                            if b.primal() == T::zero() {
                                return Err(DomainKind::DivisionByZero);
                            }
                            a / b
                        }
                    };
                    stack.push(r);
                }
            }
        }
        Ok(stack.pop().expect("empty tape"))
    }
}

fn emit(expr: &Expr, ops: &mut Vec<Op>) {
    match expr {
        Expr::Const(c) => ops.push(Op::Const(*c)),
        Expr::Var(j) => ops.push(Op::Var(*j)),
        Expr::Neg(a) => {
            emit(a, ops);
            ops.push(Op::Neg);
        }
        Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Div(a, b) => {
            emit(a, ops);
            emit(b, ops);
            ops.push(match expr {
                Expr::Add(..) => Op::Add,
                Expr::Sub(..) => Op::Sub,
                Expr::Mul(..) => Op::Mul,
                _ => Op::Div,
            });
        }
        Expr::Pow(a, n) => {
            emit(a, ops);
            ops.push(Op::Powi(*n));
        }
        Expr::Call(f, a) => {
            emit(a, ops);
            ops.push(Op::Call(*f));
        }
    }
}

/// Number system an expression can be evaluated in.
pub trait EvalScalar<T: Real>:
    Copy + Add<Output = Self> + Sub<Output = Self> + Mul<Output = Self> + Div<Output = Self> + Neg<Output = Self>
{
    fn constant(c: T) -> Self;
    fn primal(self) -> T;
    fn sin(self) -> Self;
    fn cos(self) -> Self;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn sqrt(self) -> Self;
    fn tanh(self) -> Self;
    fn powi(self, n: i32) -> Self;
}

impl<T: Real> EvalScalar<T> for T {
    #[inline]
    fn constant(c: T) -> Self {
        c
    }
    #[inline]
    fn primal(self) -> T {
        self
    }
    #[inline]
    fn sin(self) -> Self {
        num_traits::Float::sin(self)
    }
    #[inline]
    fn cos(self) -> Self {
        num_traits::Float::cos(self)
    }
    #[inline]
    fn exp(self) -> Self {
        num_traits::Float::exp(self)
    }
    #[inline]
    fn ln(self) -> Self {
        num_traits::Float::ln(self)
    }
    #[inline]
    fn sqrt(self) -> Self {
        num_traits::Float::sqrt(self)
    }
    #[inline]
    fn tanh(self) -> Self {
        num_traits::Float::tanh(self)
    }
    #[inline]
    fn powi(self, n: i32) -> Self {
        num_traits::Float::powi(self, n)
    }
}

/// First-order dual number `value + tangent·ε`, `ε² = 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dual<T> {
    pub value: T,
    pub tangent: T,
}

impl<T: Real> Dual<T> {
    pub fn new(value: T, tangent: T) -> Self {
        Self { value, tangent }
    }

    pub fn variable(value: T) -> Self {
        Self::new(value, T::one())
    }

    fn chain(self, value: T, slope: T) -> Self {
        Self::new(value, slope * self.tangent)
    }
}

impl<T: Real> Add for Dual<T> {
    type Output = Self;
    fn add(self, r: Self) -> Self {
        Self::new(self.value + r.value, self.tangent + r.tangent)
    }
}

impl<T: Real> Sub for Dual<T> {
    type Output = Self;
    fn sub(self, r: Self) -> Self {
        Self::new(self.value - r.value, self.tangent - r.tangent)
    }
}

impl<T: Real> Mul for Dual<T> {
    type Output = Self;
    fn mul(self, r: Self) -> Self {
        Self::new(self.value * r.value, self.tangent * r.value + self.value * r.tangent)
    }
}

impl<T: Real> Div for Dual<T> {
    type Output = Self;
    fn div(self, r: Self) -> Self {
        let q = self.value / r.value;
        Self::new(q, (self.tangent - q * r.tangent) / r.value)
    }
}

impl<T: Real> Neg for Dual<T> {
    type Output = Self;
    fn neg(self) -> Self {
        Self::new(-self.value, -self.tangent)
    }
}

impl<T: Real> EvalScalar<T> for Dual<T> {
    fn constant(c: T) -> Self {
        Self::new(c, T::zero())
    }
    fn primal(self) -> T {
        self.value
    }
    fn sin(self) -> Self {
        self.chain(self.value.sin(), self.value.cos())
    }
    fn cos(self) -> Self {
        self.chain(self.value.cos(), -self.value.sin())
    }
    fn exp(self) -> Self {
        let e = self.value.exp();
        self.chain(e, e)
    }
    fn ln(self) -> Self {
        self.chain(self.value.ln(), self.value.recip())
    }
    fn sqrt(self) -> Self {
        let s = self.value.sqrt();
        self.chain(s, (T::lit(2.0) * s).recip())
    }
    fn tanh(self) -> Self {
        let t = self.value.tanh();
        self.chain(t, T::one() - t * t)
    }
    fn powi(self, n: i32) -> Self {
        if n == 0 {
            return Self::constant(T::one());
        }
        let slope = T::lit(n as f64) * self.value.powi(n - 1);
        self.chain(self.value.powi(n), slope)
    }
}
