//! Vector fields given as closed-form expressions over `x1..xn`.
//!
//! Expressions are parsed once, compiled to a postfix tape, and evaluated
//! either over plain reals or over dual numbers (forward-mode AD) to get
//! exact Jacobians. Lie brackets of whole fields are built symbolically so
//! that iterated brackets can be probed for the Hörmander rank.

mod expr;
mod parse;
mod tape;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use expr::{Expr, FieldExpr, Func};
pub use parse::parse_field_expr;
pub use tape::{Dual, EvalScalar};

use crate::linalg::Matrix;
use crate::scalar::Real;

/// Relative singular-value threshold used by [`SdeModel::hormander_probe`].
pub const RANK_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParseError {
    #[error("empty expression")]
    Empty,
    #[error("syntax error at offset {pos}: {message}")]
    Syntax { pos: usize, message: String },
    #[error("unknown function `{name}` at offset {pos}")]
    UnknownFunction { name: String, pos: usize },
    #[error("unknown identifier `{name}` at offset {pos}")]
    UnknownIdentifier { name: String, pos: usize },
    #[error("variable x{index} out of range for dimension {dim} at offset {pos}")]
    VariableOutOfRange { index: usize, dim: usize, pos: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum DomainKind {
    DivisionByZero,
    LogNonPositive,
    SqrtNegative,
}

impl std::fmt::Display for DomainKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            DomainKind::DivisionByZero => "division by zero",
            DomainKind::LogNonPositive => "log of non-positive value",
            DomainKind::SqrtNegative => "sqrt of negative value",
        })
    }
}

/// Evaluation outside an expression's domain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("{kind} in field {field:?}, component {component}")]
pub struct EvalError {
    /// Field index (0 = drift) when the expression belongs to a model.
    pub field: Option<usize>,
    pub component: usize,
    pub kind: DomainKind,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("invalid expression for {location}: {source}")]
    Parse { location: String, source: ParseError },
    #[error("model dimension mismatch: {0}")]
    Dimension(String),
}

impl FieldExpr {
    /// Evaluate over reals or duals.
    pub fn eval<T: Real, S: EvalScalar<T>>(&self, x: &[S]) -> Result<S, EvalError> {
        self.tape().eval(x).map_err(|kind| EvalError { field: None, component: 0, kind })
    }

    /// Gradient by forward-mode AD (one dual pass per coordinate).
    pub fn gradient<T: Real>(&self, x: &[T]) -> Result<Vec<T>, EvalError> {
        let mut duals: Vec<Dual<T>> = x.iter().map(|&v| Dual::new(v, T::zero())).collect();
        let mut g = Vec::with_capacity(x.len());
        for k in 0..x.len() {
            duals[k].tangent = T::one();
            g.push(self.eval(&duals)?.tangent);
            duals[k].tangent = T::zero();
        }
        Ok(g)
    }
}

/// A vector field on R^n: one expression per component.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorField {
    components: Vec<FieldExpr>,
}

impl VectorField {
    pub fn new(components: Vec<FieldExpr>) -> Result<Self, ModelError> {
        let n = components.len();
        if n == 0 {
            return Err(ModelError::Dimension("vector field with no components".into()));
        }
        if let Some(c) = components.iter().find(|c| c.dim() != n) {
            return Err(ModelError::Dimension(format!(
                "component over {} variables in a field of dimension {n}",
                c.dim()
            )));
        }
        Ok(Self { components })
    }

    pub fn parse<S: AsRef<str>>(sources: &[S], location: &str) -> Result<Self, ModelError> {
        let n = sources.len();
        let comps = sources
            .iter()
            .enumerate()
            .map(|(j, s)| {
                parse_field_expr(s.as_ref(), n).map_err(|source| ModelError::Parse {
                    location: format!("{location}[{j}]"),
                    source,
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(comps)
    }

    pub fn zero(n: usize) -> Self {
        Self { components: (0..n).map(|_| FieldExpr::constant(0.0, n)).collect() }
    }

    pub fn dim(&self) -> usize {
        self.components.len()
    }

    pub fn components(&self) -> &[FieldExpr] {
        &self.components
    }

    pub fn sources(&self) -> Vec<String> {
        self.components.iter().map(ToString::to_string).collect()
    }

    pub fn is_constant(&self) -> bool {
        self.components.iter().all(FieldExpr::is_constant)
    }

    /// True when every partial derivative is constant.
    pub fn is_affine(&self) -> bool {
        let n = self.dim();
        self.components.iter().all(|c| (0..n).all(|k| c.derivative(k).is_constant()))
    }

    pub fn is_identically_zero(&self) -> bool {
        self.components.iter().all(|c| c.expr().is_zero())
    }

    pub fn eval<T: Real>(&self, x: &[T]) -> Result<Vec<T>, EvalError> {
        let mut out = vec![T::zero(); self.dim()];
        self.eval_into(x, &mut out)?;
        Ok(out)
    }

    pub fn eval_into<T: Real>(&self, x: &[T], out: &mut [T]) -> Result<(), EvalError> {
        for (j, c) in self.components.iter().enumerate() {
            out[j] = c.tape().eval(x).map_err(|kind| EvalError { field: None, component: j, kind })?;
        }
        Ok(())
    }

    /// Jacobian `(j,k) = ∂F_j/∂x_k` by forward-mode AD.
    pub fn jacobian<T: Real>(&self, x: &[T]) -> Result<Matrix<T>, EvalError> {
        let n = self.dim();
        let mut jac = Matrix::zeros(n, n);
        self.jacobian_into(x, &mut jac)?;
        Ok(jac)
    }

    pub fn jacobian_into<T: Real>(&self, x: &[T], jac: &mut Matrix<T>) -> Result<(), EvalError> {
        let n = self.dim();
        let mut duals: Vec<Dual<T>> = x.iter().map(|&v| Dual::new(v, T::zero())).collect();
        for k in 0..n {
            duals[k].tangent = T::one();
            for (j, c) in self.components.iter().enumerate() {
                if c.is_constant() {
                    jac[(j, k)] = T::zero();
                    continue;
                }
                let d = c.tape().eval(&duals).map_err(|kind| EvalError { field: None, component: j, kind })?;
                jac[(j, k)] = d.tangent;
            }
            duals[k].tangent = T::zero();
        }
        Ok(())
    }

    /// Symbolic Lie bracket `[self, other] = D(other)·self − D(self)·other`.
    pub fn bracket(&self, other: &VectorField) -> VectorField {
        let n = self.dim();
        assert_eq!(n, other.dim(), "bracket of fields with different dimensions");
        let components = (0..n)
            .map(|m| {
                let mut acc = Expr::zero();
                for k in 0..n {
                    let t1 = Expr::mul(other.components[m].expr().derivative(k), self.components[k].expr().clone());
                    let t2 = Expr::mul(self.components[m].expr().derivative(k), other.components[k].expr().clone());
                    acc = Expr::add(acc, Expr::sub(t1, t2));
                }
                FieldExpr::new(acc, n)
            })
            .collect();
        VectorField { components }
    }
}

/// Serializable description of a model: expression sources only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub name: String,
    pub dim: usize,
    pub drift: Vec<String>,
    pub diffusion: Vec<Vec<String>>,
}

/// Stratonovich SDE `dX = Σ A_i(X) ∘ dZ^i + A_0(X) dt` on R^n.
#[derive(Debug, Clone, PartialEq)]
pub struct SdeModel {
    name: String,
    dim: usize,
    fields: Vec<VectorField>,
    pullbacks_deterministic: bool,
}

impl SdeModel {
    pub fn new(name: impl Into<String>, drift: VectorField, diffusion: Vec<VectorField>) -> Result<Self, ModelError> {
        let dim = drift.dim();
        if diffusion.is_empty() {
            return Err(ModelError::Dimension("at least one diffusion field is required".into()));
        }
        if let Some((i, f)) = diffusion.iter().enumerate().find(|(_, f)| f.dim() != dim) {
            return Err(ModelError::Dimension(format!(
                "diffusion field {} has dimension {}, drift has {dim}",
                i + 1,
                f.dim()
            )));
        }
        // constant noise fields and an affine drift give a deterministic
        // derivative flow, hence deterministic pulled-back fields
        let pullbacks_deterministic = drift.is_affine() && diffusion.iter().all(VectorField::is_constant);
        let mut fields = Vec::with_capacity(diffusion.len() + 1);
        fields.push(drift);
        fields.extend(diffusion);
        Ok(Self { name: name.into(), dim, fields, pullbacks_deterministic })
    }

    pub fn from_spec(spec: &ModelSpec) -> Result<Self, ModelError> {
        if spec.drift.len() != spec.dim {
            return Err(ModelError::Dimension(format!(
                "drift has {} components, dim is {}",
                spec.drift.len(),
                spec.dim
            )));
        }
        let drift = VectorField::parse(&spec.drift, "drift")?;
        let diffusion = spec
            .diffusion
            .iter()
            .enumerate()
            .map(|(i, d)| {
                if d.len() != spec.dim {
                    return Err(ModelError::Dimension(format!(
                        "diffusion[{i}] has {} components, dim is {}",
                        d.len(),
                        spec.dim
                    )));
                }
                VectorField::parse(d, &format!("diffusion[{i}]"))
            })
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(spec.name.clone(), drift, diffusion)
    }

    pub fn to_spec(&self) -> ModelSpec {
        ModelSpec {
            name: self.name.clone(),
            dim: self.dim,
            drift: self.fields[0].sources(),
            diffusion: self.fields[1..].iter().map(VectorField::sources).collect(),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// State dimension n.
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Noise dimension r.
    pub fn noise_dim(&self) -> usize {
        self.fields.len() - 1
    }

    /// Field `i`: 0 is the drift `A_0`, `1..=r` the diffusion fields.
    pub fn field(&self, i: usize) -> &VectorField {
        &self.fields[i]
    }

    pub fn drift(&self) -> &VectorField {
        &self.fields[0]
    }

    pub fn diffusion(&self) -> &[VectorField] {
        &self.fields[1..]
    }

    /// Whether `K_s A_i(X_s)` is a deterministic function of time.
    pub fn pullbacks_deterministic(&self) -> bool {
        self.pullbacks_deterministic
    }

    pub fn eval_field<T: Real>(&self, i: usize, x: &[T]) -> Result<Vec<T>, EvalError> {
        self.fields[i].eval(x).map_err(|e| EvalError { field: Some(i), ..e })
    }

    pub fn eval_field_into<T: Real>(&self, i: usize, x: &[T], out: &mut [T]) -> Result<(), EvalError> {
        self.fields[i].eval_into(x, out).map_err(|e| EvalError { field: Some(i), ..e })
    }

    pub fn jacobian_field<T: Real>(&self, i: usize, x: &[T]) -> Result<Matrix<T>, EvalError> {
        self.fields[i].jacobian(x).map_err(|e| EvalError { field: Some(i), ..e })
    }

    pub fn jacobian_field_into<T: Real>(&self, i: usize, x: &[T], out: &mut Matrix<T>) -> Result<(), EvalError> {
        self.fields[i].jacobian_into(x, out).map_err(|e| EvalError { field: Some(i), ..e })
    }

    /// `[A_i, A_j](x) = DA_j(x) A_i(x) − DA_i(x) A_j(x)`.
    pub fn lie_bracket<T: Real>(&self, i: usize, j: usize, x: &[T]) -> Result<Vec<T>, EvalError> {
        let ai = self.eval_field(i, x)?;
        let aj = self.eval_field(j, x)?;
        let dai = self.jacobian_field(i, x)?;
        let daj = self.jacobian_field(j, x)?;
        let a = daj.mul_vec(&ai);
        let b = dai.mul_vec(&aj);
        Ok(a.iter().zip(&b).map(|(&p, &q)| p - q).collect())
    }

    /// Rank of the span of `A_1..A_r` and iterated brackets with
    /// `A_0..A_r` up to `max_depth`, at `x`.
    pub fn hormander_probe<T: Real>(&self, x: &[T], max_depth: usize) -> Result<HormanderReport, EvalError> {
        let n = self.dim;
        let mut layer: Vec<VectorField> =
            self.diffusion().iter().filter(|f| !f.is_identically_zero()).cloned().collect();
        let mut columns: Vec<Vec<T>> = Vec::new();
        let mut ranks_by_depth = Vec::with_capacity(max_depth + 1);
        for depth in 0..=max_depth {
            if depth > 0 {
                let mut next = Vec::new();
                for v in &layer {
                    for a in &self.fields {
                        let b = a.bracket(v);
                        if !b.is_identically_zero() {
                            next.push(b);
                        }
                    }
                }
                layer = next;
            }
            for v in &layer {
                columns.push(v.eval(x)?);
            }
            let rank = if columns.is_empty() {
                0
            } else {
                Matrix::from_columns(&columns, n).rank(T::lit(RANK_TOLERANCE))
            };
            ranks_by_depth.push(rank);
            if rank == n || layer.is_empty() {
                break;
            }
        }
        let rank = *ranks_by_depth.last().unwrap_or(&0);
        let depth_achieved = ranks_by_depth.iter().position(|&r| r == rank).unwrap_or(0);
        Ok(HormanderReport { rank, depth_achieved, ranks_by_depth })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct HormanderReport {
    pub rank: usize,
    /// Smallest bracket depth at which `rank` was reached.
    pub depth_achieved: usize,
    /// Cumulative rank after each depth.
    pub ranks_by_depth: Vec<usize>,
}

#[cfg(test)]
mod tests;
