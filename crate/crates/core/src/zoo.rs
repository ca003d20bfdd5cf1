//! Named model families with closed-form reference data.

use serde_json::{Map, Value};
use thiserror::Error;

use crate::dsl::{parse_field_expr, Expr, FieldExpr, ModelError, SdeModel, VectorField};
use crate::linalg::Matrix;
use crate::sde::Domain;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ZooError {
    #[error("unknown model `{0}`; see `zoo-list`")]
    Unknown(String),
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParam { name: String, reason: String },
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// One parameter of a family: name, default, meaning.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct ParamDoc {
    pub name: &'static str,
    pub default: &'static str,
    pub help: &'static str,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct FamilyDoc {
    pub name: &'static str,
    pub summary: &'static str,
    pub params: Vec<ParamDoc>,
}

fn p(name: &'static str, default: &'static str, help: &'static str) -> ParamDoc {
    ParamDoc { name, default, help }
}

/// Every family with its parameter schema.
pub fn catalog() -> Vec<FamilyDoc> {
    vec![
        FamilyDoc {
            name: "elliptic1d",
            summary: "dX = mu dt + sigma dW on R",
            params: vec![p("sigma", "1", "noise level, nonzero"), p("mu", "0", "constant drift")],
        },
        FamilyDoc {
            name: "elliptic2d",
            summary: "dX = sigma dW on R^2",
            params: vec![p("sigma", "1", "noise level, nonzero")],
        },
        FamilyDoc {
            name: "gbm",
            summary: "dS = mu S dt + sigma S dW (Ito), S0 > 0",
            params: vec![p("sigma", "0.2", "volatility, nonzero"), p("mu", "0", "Ito drift rate")],
        },
        FamilyDoc {
            name: "grushin",
            summary: "A1 = (1,0), A2 = (0,x1), no drift; hypoelliptic, degenerate on x1 = 0",
            params: vec![],
        },
        FamilyDoc {
            name: "picard",
            summary: "A1 = (1,0,0), A2 = (0,1,x1), no drift; Brownian motion with its Levy area",
            params: vec![],
        },
        FamilyDoc {
            name: "asian",
            summary: "dS = sigma(S) dW + mu(S) dt (Ito), dA = S dt",
            params: vec![
                p("sigma", "0.2 + 0.1*tanh(x1)", "volatility expression in x1 = S"),
                p("mu", "0", "Ito drift expression in x1 = S"),
                p("s0", "1", "initial price"),
            ],
        },
        FamilyDoc {
            name: "asian_trivial",
            summary: "dS = sigma dW, dA = S dt",
            params: vec![p("sigma", "1", "volatility, nonzero"), p("s0", "1", "initial price")],
        },
    ]
}

pub fn names() -> Vec<&'static str> {
    catalog().into_iter().map(|f| f.name).collect()
}

/// Closed-form objects known for a family. `z` is the driving Brownian
/// motion at time `t`, `x0` the starting point.
#[derive(Debug, Clone, PartialEq)]
pub enum Reference {
    Elliptic { sigma: f64, dim: usize },
    Gbm { sigma: f64 },
    Grushin,
    Picard,
    AsianTrivial { sigma: f64 },
    None,
}

impl Reference {
    /// Derivative flow `J_t`.
    pub fn jacobian(&self, t: f64, z: &[f64]) -> Option<Matrix<f64>> {
        match *self {
            Reference::Elliptic { dim, .. } => Some(Matrix::identity(dim)),
            // J_t = S_t/S_0 depends on the drift as well
            Reference::Gbm { .. } => None,
            Reference::Grushin => Some(Matrix::from_rows(&[vec![1.0, 0.0], vec![z[1], 1.0]])),
            Reference::Picard => Some(Matrix::from_rows(&[
                vec![1.0, 0.0, 0.0],
                vec![0.0, 1.0, 0.0],
                vec![z[1], 0.0, 1.0],
            ])),
            Reference::AsianTrivial { .. } => Some(Matrix::from_rows(&[vec![1.0, 0.0], vec![t, 1.0]])),
            Reference::None => None,
        }
    }

    /// Pulled-back field `Y_i(t)`, `i` zero-based over the noise fields.
    pub fn pullback(&self, i: usize, t: f64, x0: &[f64], z: &[f64]) -> Option<Vec<f64>> {
        match *self {
            Reference::Elliptic { sigma, dim } => {
                let mut y = vec![0.0; dim];
                y[i] = sigma;
                Some(y)
            }
            Reference::Gbm { sigma } => Some(vec![sigma * x0[0]]),
            Reference::Grushin => Some(match i {
                0 => vec![1.0, -z[1]],
                _ => vec![0.0, x0[0] + z[0]],
            }),
            Reference::Picard => Some(match i {
                0 => vec![1.0, 0.0, -z[1]],
                _ => vec![0.0, 1.0, x0[0] + z[0]],
            }),
            Reference::AsianTrivial { sigma } => Some(vec![sigma, -sigma * t]),
            Reference::None => None,
        }
    }

    /// Malliavin covariance `C_t` when it is deterministic.
    pub fn covariance(&self, t: f64) -> Option<Matrix<f64>> {
        match *self {
            Reference::Elliptic { sigma, dim } => Some(Matrix::identity(dim).scale(sigma * sigma * t)),
            Reference::AsianTrivial { sigma } => {
                let s2 = sigma * sigma;
                Some(Matrix::from_rows(&[
                    vec![s2 * t, -s2 * t * t / 2.0],
                    vec![-s2 * t * t / 2.0, s2 * t * t * t / 3.0],
                ]))
            }
            _ => None,
        }
    }
}

/// A constructed family member with recommended settings.
#[derive(Debug, Clone)]
pub struct ZooEntry {
    pub name: String,
    pub model: SdeModel,
    pub x0: Vec<f64>,
    pub horizon: f64,
    pub domain: Option<Domain<f64>>,
    pub reference: Reference,
    pub summary: &'static str,
}

struct Params<'a> {
    map: Option<&'a Map<String, Value>>,
}

impl<'a> Params<'a> {
    fn new(params: &'a Value, allowed: &[&str]) -> Result<Self, ZooError> {
        let map = match params {
            Value::Null => None,
            Value::Object(m) => Some(m),
            _ => {
                return Err(ZooError::InvalidParam { name: "params".into(), reason: "expected an object".into() })
            }
        };
        if let Some(m) = map {
            if let Some(k) = m.keys().find(|k| !allowed.contains(&k.as_str())) {
                return Err(ZooError::InvalidParam { name: k.clone(), reason: "not a parameter of this model".into() });
            }
        }
        Ok(Self { map })
    }

    fn num(&self, name: &str, default: f64) -> Result<f64, ZooError> {
        match self.map.and_then(|m| m.get(name)) {
            None => Ok(default),
            Some(v) => v
                .as_f64()
                .filter(|x| x.is_finite())
                .ok_or_else(|| ZooError::InvalidParam { name: name.into(), reason: "expected a finite number".into() }),
        }
    }

    fn text(&self, name: &str, default: &str) -> Result<String, ZooError> {
        match self.map.and_then(|m| m.get(name)) {
            None => Ok(default.to_string()),
            Some(Value::String(s)) => Ok(s.clone()),
            Some(Value::Number(n)) => Ok(n.to_string()),
            Some(_) => Err(ZooError::InvalidParam { name: name.into(), reason: "expected an expression string".into() }),
        }
    }
}

fn nonzero(name: &str, x: f64) -> Result<f64, ZooError> {
    if x == 0.0 {
        Err(ZooError::InvalidParam { name: name.into(), reason: "must be nonzero".into() })
    } else {
        Ok(x)
    }
}

fn field(src: &[&str], location: &str) -> Result<VectorField, ZooError> {
    Ok(VectorField::parse(src, location)?)
}

/// Build the model `name` from a JSON object of parameters (`null` for defaults).
pub fn get_model(name: &str, params: &Value) -> Result<ZooEntry, ZooError> {
    let summary = catalog().into_iter().find(|f| f.name == name).map(|f| f.summary);
    let Some(summary) = summary else {
        return Err(ZooError::Unknown(name.to_string()));
    };
    let entry = |model, x0, horizon, domain, reference| ZooEntry {
        name: name.to_string(),
        model,
        x0,
        horizon,
        domain,
        reference,
        summary,
    };
    match name {
        "elliptic1d" => {
            let ps = Params::new(params, &["sigma", "mu"])?;
            let sigma = nonzero("sigma", ps.num("sigma", 1.0)?)?;
            let mu = ps.num("mu", 0.0)?;
            let model = SdeModel::new(
                name,
                field(&[&fmt_num(mu)], "drift")?,
                vec![field(&[&fmt_num(sigma)], "diffusion[0]")?],
            )?;
            let domain = Domain::new_box(vec![0.5], vec![0.5]).ok();
            Ok(entry(model, vec![0.5], 1.0, domain, Reference::Elliptic { sigma, dim: 1 }))
        }
        "elliptic2d" => {
            let ps = Params::new(params, &["sigma"])?;
            let sigma = nonzero("sigma", ps.num("sigma", 1.0)?)?;
            let s = fmt_num(sigma);
            let model = SdeModel::new(
                name,
                field(&["0", "0"], "drift")?,
                vec![field(&[&s, "0"], "diffusion[0]")?, field(&["0", &s], "diffusion[1]")?],
            )?;
            let domain = Domain::new_ball(vec![0.0, 0.0], 1.0).ok();
            Ok(entry(model, vec![0.25, 0.0], 1.0, domain, Reference::Elliptic { sigma, dim: 2 }))
        }
        "gbm" => {
            let ps = Params::new(params, &["sigma", "mu"])?;
            let sigma = nonzero("sigma", ps.num("sigma", 0.2)?)?;
            let mu = ps.num("mu", 0.0)?;
            let drift = format!("{}*x1", fmt_num(mu - 0.5 * sigma * sigma));
            let diff = format!("{}*x1", fmt_num(sigma));
            let model = SdeModel::new(name, field(&[&drift], "drift")?, vec![field(&[&diff], "diffusion[0]")?])?;
            Ok(entry(model, vec![1.0], 1.0, None, Reference::Gbm { sigma }))
        }
        "grushin" => {
            Params::new(params, &[])?;
            let model = SdeModel::new(
                name,
                field(&["0", "0"], "drift")?,
                vec![field(&["1", "0"], "diffusion[0]")?, field(&["0", "x1"], "diffusion[1]")?],
            )?;
            let domain = Domain::new_box(vec![0.0, 0.0], vec![1.0, 1.0]).ok();
            Ok(entry(model, vec![0.3, 0.0], 1.0, domain, Reference::Grushin))
        }
        "picard" => {
            Params::new(params, &[])?;
            let model = SdeModel::new(
                name,
                field(&["0", "0", "0"], "drift")?,
                vec![field(&["1", "0", "0"], "diffusion[0]")?, field(&["0", "1", "x1"], "diffusion[1]")?],
            )?;
            Ok(entry(model, vec![0.0, 0.0, 0.0], 1.0, None, Reference::Picard))
        }
        "asian" => {
            let ps = Params::new(params, &["sigma", "mu", "s0"])?;
            let sigma = ps.text("sigma", "0.2 + 0.1*tanh(x1)")?;
            let mu = ps.text("mu", "0")?;
            let s0 = ps.num("s0", 1.0)?;
            let model = asian_model(&sigma, &mu)?;
            let reference = match constant_of(&sigma, "sigma")? {
                Some(s) if constant_of(&mu, "mu")? == Some(0.0) => Reference::AsianTrivial { sigma: s },
                _ => Reference::None,
            };
            Ok(entry(model, vec![s0, 0.0], 1.0, None, reference))
        }
        "asian_trivial" => {
            let ps = Params::new(params, &["sigma", "s0"])?;
            let sigma = nonzero("sigma", ps.num("sigma", 1.0)?)?;
            let s0 = ps.num("s0", 1.0)?;
            let model = SdeModel::new(
                name,
                field(&["0", "x1"], "drift")?,
                vec![field(&[&fmt_num(sigma), "0"], "diffusion[0]")?],
            )?;
            Ok(entry(model, vec![s0, 0.0], 1.0, None, Reference::AsianTrivial { sigma }))
        }
        _ => Err(ZooError::Unknown(name.to_string())),
    }
}

fn fmt_num(x: f64) -> String {
    // `{:?}` keeps a decimal point and round-trips exactly
    let s = format!("{x:?}");
    if x < 0.0 {
        format!("({s})")
    } else {
        s
    }
}

fn parse_1d(src: &str, name: &str) -> Result<FieldExpr, ZooError> {
    parse_field_expr(src, 1).map_err(|e| ZooError::InvalidParam { name: name.into(), reason: e.to_string() })
}

fn constant_of(src: &str, name: &str) -> Result<Option<f64>, ZooError> {
    let e = parse_1d(src, name)?;
    Ok(if e.is_constant() { e.eval::<f64, f64>(&[0.0]).ok() } else { None })
}

/// Asian system from Itô coefficients `σ(x1)`, `μ(x1)`: Stratonovich
/// drift `(μ − ½σσ′, x1)`, noise field `(σ, 0)`.
pub fn asian_model(sigma: &str, mu: &str) -> Result<SdeModel, ZooError> {
    let s = parse_1d(sigma, "sigma")?;
    let m = parse_1d(mu, "mu")?;
    if s.is_constant() && s.eval::<f64, f64>(&[0.0]).ok() == Some(0.0) {
        return Err(ZooError::InvalidParam { name: "sigma".into(), reason: "must not vanish identically".into() });
    }
    let correction = Expr::mul(Expr::Const(0.5), Expr::mul(s.expr().clone(), s.expr().derivative(0)));
    let strat = Expr::sub(m.expr().clone(), correction);
    let drift = VectorField::new(vec![FieldExpr::new(strat, 2), FieldExpr::new(Expr::Var(0), 2)])?;
    let noise = VectorField::new(vec![FieldExpr::new(s.expr().clone(), 2), FieldExpr::constant(0.0, 2)])?;
    Ok(SdeModel::new("asian", drift, vec![noise])?)
}
