//! Running costs `π(x)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expr::Expr;

/// Serializable description of a running cost.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum CostSpec {
    /// `scale·|x|^exponent`
    Power {
        exponent: f64,
        #[serde(default = "one")]
        scale: f64,
    },
    /// `scale·x²`
    Quadratic {
        #[serde(default = "one")]
        scale: f64,
    },
    /// `intercept + slope·max(x, 0)`
    LinearPlus {
        slope: f64,
        #[serde(default)]
        intercept: f64,
    },
    /// Arbitrary expression in `x`. `kinks` lists points where the
    /// expression is not differentiable, so quadrature can split there.
    Expression {
        expr: String,
        #[serde(default)]
        kinks: Vec<f64>,
    },
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq)]
enum Eval {
    Power { p: f64, c: f64 },
    Quadratic { c: f64 },
    LinearPlus { slope: f64, intercept: f64 },
    Expr(Expr),
}

/// A validated, evaluable running cost.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningCost {
    spec: CostSpec,
    eval: Eval,
    kinks: Vec<f64>,
}

impl RunningCost {
    pub fn new(spec: CostSpec) -> Result<Self> {
        let (eval, kinks) = match &spec {
            CostSpec::Power { exponent, scale } => {
                if !(*exponent > 0.0 && exponent.is_finite()) || !(*scale > 0.0) {
                    return Err(Error::invalid(format!(
                        "power cost needs exponent > 0 and scale > 0, got {exponent}, {scale}"
                    )));
                }
                let smooth = exponent.fract() == 0.0 && *exponent >= 2.0 && (*exponent as i64) % 2 == 0;
                (
                    Eval::Power {
                        p: *exponent,
                        c: *scale,
                    },
                    if smooth { vec![] } else { vec![0.0] },
                )
            }
            CostSpec::Quadratic { scale } => {
                if !(*scale > 0.0) {
                    return Err(Error::invalid("quadratic cost needs scale > 0"));
                }
                (Eval::Quadratic { c: *scale }, vec![])
            }
            CostSpec::LinearPlus { slope, intercept } => {
                if !(slope.is_finite() && intercept.is_finite()) {
                    return Err(Error::invalid("linear-plus cost needs finite coefficients"));
                }
                (
                    Eval::LinearPlus {
                        slope: *slope,
                        intercept: *intercept,
                    },
                    vec![0.0],
                )
            }
            CostSpec::Expression { expr, kinks } => {
                let mut k = kinks.clone();
                k.sort_by(f64::total_cmp);
                (Eval::Expr(Expr::parse(expr)?), k)
            }
        };
        Ok(Self { spec, eval, kinks })
    }

    pub fn power(exponent: f64) -> Result<Self> {
        Self::new(CostSpec::Power {
            exponent,
            scale: 1.0,
        })
    }

    /// `π(x) = |x|`
    pub fn abs() -> Self {
        Self::power(1.0).expect("valid")
    }

    /// `π(x) = x²`
    pub fn quadratic() -> Self {
        Self::new(CostSpec::Quadratic { scale: 1.0 }).expect("valid")
    }

    pub fn expression(src: &str) -> Result<Self> {
        Self::new(CostSpec::Expression {
            expr: src.to_string(),
            kinks: vec![],
        })
    }

    pub fn spec(&self) -> &CostSpec {
        &self.spec
    }

    /// Points where `π` is not smooth.
    pub fn kinks(&self) -> &[f64] {
        &self.kinks
    }

    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        match &self.eval {
            Eval::Power { p, c } => {
                if *p == 1.0 {
                    c * x.abs()
                } else {
                    c * x.abs().powf(*p)
                }
            }
            Eval::Quadratic { c } => c * x * x,
            Eval::LinearPlus { slope, intercept } => intercept + slope * x.max(0.0),
            Eval::Expr(e) => e.eval(x),
        }
    }

    /// Short human-readable form.
    pub fn describe(&self) -> String {
        match &self.spec {
            CostSpec::Power { exponent, scale } if *scale == 1.0 => format!("|x|^{exponent}"),
            CostSpec::Power { exponent, scale } => format!("{scale}*|x|^{exponent}"),
            CostSpec::Quadratic { scale } if *scale == 1.0 => "x^2".into(),
            CostSpec::Quadratic { scale } => format!("{scale}*x^2"),
            CostSpec::LinearPlus { slope, intercept } => format!("{intercept} + {slope}*max(x,0)"),
            CostSpec::Expression { expr, .. } => expr.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_costs() {
        let a = RunningCost::abs();
        assert_eq!(a.eval(-2.5), 2.5);
        assert_eq!(a.kinks(), &[0.0]);
        let q = RunningCost::quadratic();
        assert_eq!(q.eval(-3.0), 9.0);
        assert!(q.kinks().is_empty());
        let p = RunningCost::power(4.0).unwrap();
        assert!(p.kinks().is_empty());
        assert_eq!(p.eval(-2.0), 16.0);
        let lp = RunningCost::new(CostSpec::LinearPlus {
            slope: 2.0,
            intercept: 0.5,
        })
        .unwrap();
        assert_eq!(lp.eval(-1.0), 0.5);
        assert_eq!(lp.eval(1.0), 2.5);
    }

    #[test]
    fn expression_cost_and_serde() {
        let c: CostSpec = serde_json::from_str(r#"{"kind":"expression","expr":"abs(x-1)","kinks":[1.0]}"#).unwrap();
        let c = RunningCost::new(c).unwrap();
        assert_eq!(c.eval(3.0), 2.0);
        assert_eq!(c.kinks(), &[1.0]);
        let bad: std::result::Result<CostSpec, _> = serde_json::from_str(r#"{"kind":"quadratic","scael":1}"#);
        assert!(bad.is_err());
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(RunningCost::power(0.0).is_err());
        assert!(RunningCost::expression("x +").is_err());
    }
}
