//! Context predicates: each one maps the raw value of exactly one observer to
//! a boolean validity.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::auth::ObserverInfo;
use super::value::Value;
use crate::ids::{ObserverId, PhiId, SimTime};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PhiError {
    #[error("operator `{operator}` expects {expected} but observer reported `{found}`")]
    TypeMismatch {
        operator: &'static str,
        expected: &'static str,
        found: Value,
    },
    #[error("predicate `{phi}` is bound to observer `{expected}`, got information from `{found}`")]
    WrongObserver {
        phi: PhiId,
        expected: ObserverId,
        found: ObserverId,
    },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PhiDefinitionError {
    #[error("`{0}` needs at least one operand")]
    EmptyOperands(&'static str),
    #[error("range lower bound {lo} exceeds upper bound {hi}")]
    InvertedRange { lo: f64, hi: f64 },
    #[error("zone radius must be positive, got {0}")]
    NonPositiveRadius(f64),
    #[error("literal is not a finite number")]
    NonFinite,
}

/// The predicate language: comparisons, ranges, zone membership and boolean
/// combinators over a single observer's value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum PhiExpr {
    Eq {
        value: Value,
    },
    Neq {
        value: Value,
    },
    Lt {
        value: f64,
    },
    Le {
        value: f64,
    },
    Gt {
        value: f64,
    },
    Ge {
        value: f64,
    },
    /// Closed interval `[lo, hi]`.
    InRange {
        lo: f64,
        hi: f64,
    },
    /// Closed disc: Euclidean distance to `center` at most `radius`.
    InZone {
        center: [f64; 2],
        radius: f64,
    },
    InSet {
        values: Vec<Value>,
    },
    And {
        args: Vec<PhiExpr>,
    },
    Or {
        args: Vec<PhiExpr>,
    },
    Not {
        arg: Box<PhiExpr>,
    },
}

impl PhiExpr {
    fn name(&self) -> &'static str {
        match self {
            PhiExpr::Eq { .. } => "eq",
            PhiExpr::Neq { .. } => "neq",
            PhiExpr::Lt { .. } => "lt",
            PhiExpr::Le { .. } => "le",
            PhiExpr::Gt { .. } => "gt",
            PhiExpr::Ge { .. } => "ge",
            PhiExpr::InRange { .. } => "in_range",
            PhiExpr::InZone { .. } => "in_zone",
            PhiExpr::InSet { .. } => "in_set",
            PhiExpr::And { .. } => "and",
            PhiExpr::Or { .. } => "or",
            PhiExpr::Not { .. } => "not",
        }
    }

    pub fn validate(&self) -> Result<(), PhiDefinitionError> {
        let finite = |x: f64| {
            if x.is_finite() {
                Ok(())
            } else {
                Err(PhiDefinitionError::NonFinite)
            }
        };
        match self {
            PhiExpr::Eq { value } | PhiExpr::Neq { value } => {
                if value.is_finite() {
                    Ok(())
                } else {
                    Err(PhiDefinitionError::NonFinite)
                }
            }
            PhiExpr::Lt { value }
            | PhiExpr::Le { value }
            | PhiExpr::Gt { value }
            | PhiExpr::Ge { value } => finite(*value),
            PhiExpr::InRange { lo, hi } => {
                finite(*lo)?;
                finite(*hi)?;
                if lo > hi {
                    return Err(PhiDefinitionError::InvertedRange { lo: *lo, hi: *hi });
                }
                Ok(())
            }
            PhiExpr::InZone { center, radius } => {
                finite(center[0])?;
                finite(center[1])?;
                finite(*radius)?;
                if *radius <= 0.0 {
                    return Err(PhiDefinitionError::NonPositiveRadius(*radius));
                }
                Ok(())
            }
            PhiExpr::InSet { values } => {
                if values.is_empty() {
                    return Err(PhiDefinitionError::EmptyOperands("in_set"));
                }
                if values.iter().all(Value::is_finite) {
                    Ok(())
                } else {
                    Err(PhiDefinitionError::NonFinite)
                }
            }
            PhiExpr::And { args } | PhiExpr::Or { args } => {
                if args.is_empty() {
                    return Err(PhiDefinitionError::EmptyOperands(self.name()));
                }
                args.iter().try_for_each(PhiExpr::validate)
            }
            PhiExpr::Not { arg } => arg.validate(),
        }
    }

    /// Applies the operator to a raw value.
    pub fn eval(&self, value: &Value) -> Result<bool, PhiError> {
        let mismatch = |expected: &'static str| PhiError::TypeMismatch {
            operator: self.name(),
            expected,
            found: value.clone(),
        };
        let number = || match value {
            Value::Num(n) => Ok(*n),
            _ => Err(mismatch("a number")),
        };
        match self {
            PhiExpr::Eq { value: lit } => same_type(lit, value)
                .then(|| lit == value)
                .ok_or_else(|| mismatch(lit.type_tag())),
            PhiExpr::Neq { value: lit } => same_type(lit, value)
                .then(|| lit != value)
                .ok_or_else(|| mismatch(lit.type_tag())),
            PhiExpr::Lt { value: lit } => Ok(number()? < *lit),
            PhiExpr::Le { value: lit } => Ok(number()? <= *lit),
            PhiExpr::Gt { value: lit } => Ok(number()? > *lit),
            PhiExpr::Ge { value: lit } => Ok(number()? >= *lit),
            PhiExpr::InRange { lo, hi } => {
                let n = number()?;
                Ok(*lo <= n && n <= *hi)
            }
            PhiExpr::InZone { center, radius } => match value {
                Value::Coord(p) => Ok(distance(*center, *p) <= *radius),
                _ => Err(mismatch("a coordinate pair")),
            },
            PhiExpr::InSet { values } => {
                if !values.iter().any(|lit| same_type(lit, value)) {
                    return Err(mismatch(values[0].type_tag()));
                }
                Ok(values.iter().any(|lit| lit == value))
            }
            PhiExpr::And { args } => {
                for arg in args {
                    if !arg.eval(value)? {
                        return Ok(false);
                    }
                }
                Ok(true)
            }
            PhiExpr::Or { args } => {
                for arg in args {
                    if arg.eval(value)? {
                        return Ok(true);
                    }
                }
                Ok(false)
            }
            PhiExpr::Not { arg } => Ok(!arg.eval(value)?),
        }
    }
}

fn same_type(a: &Value, b: &Value) -> bool {
    std::mem::discriminant(a) == std::mem::discriminant(b)
}

pub(crate) fn distance(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

/// A named predicate bound to one observer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhiPredicate {
    pub id: PhiId,
    pub observer: ObserverId,
    pub expr: PhiExpr,
    /// Time the predicate needs before its verdict on a new value is known,
    /// e.g. when it filters on a history of values.
    #[serde(default, skip_serializing_if = "is_zero")]
    pub eval_delay_ms: SimTime,
}

fn is_zero(v: &SimTime) -> bool {
    *v == 0
}

impl PhiPredicate {
    pub fn new(id: PhiId, observer: ObserverId, expr: PhiExpr) -> Result<Self, PhiDefinitionError> {
        expr.validate()?;
        Ok(Self {
            id,
            observer,
            expr,
            eval_delay_ms: 0,
        })
    }
}

/// Evaluates `phi` on an information item of its observer. Freshness and
/// authenticity are the caller's concern.
pub fn evaluate_phi(phi: &PhiPredicate, info: &ObserverInfo) -> Result<bool, PhiError> {
    if info.observer != phi.observer {
        return Err(PhiError::WrongObserver {
            phi: phi.id.clone(),
            expected: phi.observer.clone(),
            found: info.observer.clone(),
        });
    }
    phi.expr.eval(&info.value)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn info(value: Value) -> ObserverInfo {
        ObserverInfo {
            observer: ObserverId::new("o").unwrap(),
            value,
            timestamp: 0,
            auth_tag: String::new(),
        }
    }

    fn phi(expr: PhiExpr) -> PhiPredicate {
        PhiPredicate::new(
            PhiId::new("p").unwrap(),
            ObserverId::new("o").unwrap(),
            expr,
        )
        .unwrap()
    }

    #[test]
    fn in_range_interior_point() {
        let p = phi(PhiExpr::InRange { lo: 18.0, hi: 24.0 });
        assert!(evaluate_phi(&p, &info(Value::Num(21.5))).unwrap());
        assert!(evaluate_phi(&p, &info(Value::Num(24.0))).unwrap());
        assert!(!evaluate_phi(&p, &info(Value::Num(24.01))).unwrap());
    }

    #[test]
    fn in_zone_boundary_is_inclusive() {
        // |(6,8) - (0,0)| = 10
        let p = phi(PhiExpr::InZone {
            center: [0.0, 0.0],
            radius: 10.0,
        });
        assert!(evaluate_phi(&p, &info(Value::Coord([6.0, 8.0]))).unwrap());
        assert!(!evaluate_phi(&p, &info(Value::Coord([6.0, 8.001]))).unwrap());
    }

    #[test]
    fn text_equality() {
        let p = phi(PhiExpr::Eq {
            value: Value::Text("home".into()),
        });
        assert!(!evaluate_phi(&p, &info(Value::Text("office".into()))).unwrap());
        assert!(evaluate_phi(&p, &info(Value::Text("home".into()))).unwrap());
    }

    #[test]
    fn type_mismatch_is_an_error() {
        let p = phi(PhiExpr::Gt { value: 3.0 });
        assert!(matches!(
            evaluate_phi(&p, &info(Value::Text("3".into()))),
            Err(PhiError::TypeMismatch { .. })
        ));
        let zone = phi(PhiExpr::InZone {
            center: [0.0, 0.0],
            radius: 1.0,
        });
        assert!(evaluate_phi(&zone, &info(Value::Num(0.0))).is_err());
    }

    #[test]
    fn wrong_observer_is_rejected() {
        let p = phi(PhiExpr::Eq {
            value: Value::Bool(true),
        });
        let mut i = info(Value::Bool(true));
        i.observer = ObserverId::new("other").unwrap();
        assert!(matches!(
            evaluate_phi(&p, &i),
            Err(PhiError::WrongObserver { .. })
        ));
    }

    #[test]
    fn combinators() {
        let p = phi(PhiExpr::And {
            args: vec![
                PhiExpr::Ge { value: 8.0 },
                PhiExpr::Not {
                    arg: Box::new(PhiExpr::InSet {
                        values: vec![Value::Num(12.0), Value::Num(13.0)],
                    }),
                },
                PhiExpr::Or {
                    args: vec![
                        PhiExpr::Lt { value: 20.0 },
                        PhiExpr::Eq {
                            value: Value::Num(22.0),
                        },
                    ],
                },
            ],
        });
        assert!(evaluate_phi(&p, &info(Value::Num(9.0))).unwrap());
        assert!(!evaluate_phi(&p, &info(Value::Num(12.0))).unwrap());
        assert!(evaluate_phi(&p, &info(Value::Num(22.0))).unwrap());
        assert!(!evaluate_phi(&p, &info(Value::Num(21.0))).unwrap());
        assert!(!evaluate_phi(&p, &info(Value::Num(7.0))).unwrap());
    }

    #[test]
    fn definitions_are_validated() {
        assert_eq!(
            PhiExpr::InRange { lo: 2.0, hi: 1.0 }.validate(),
            Err(PhiDefinitionError::InvertedRange { lo: 2.0, hi: 1.0 })
        );
        assert!(PhiExpr::InZone {
            center: [0.0, 0.0],
            radius: 0.0
        }
        .validate()
        .is_err());
        assert!(PhiExpr::And { args: vec![] }.validate().is_err());
        assert!(PhiExpr::Lt { value: f64::NAN }.validate().is_err());
    }

    #[test]
    fn expressions_parse_from_toml() {
        #[derive(Deserialize)]
        struct W {
            expr: PhiExpr,
        }
        let w: W = toml::from_str(
            r#"expr = { op = "or", args = [ { op = "eq", value = { text = "home" } }, { op = "in_zone", center = [0.0, 1.0], radius = 2.5 } ] }"#,
        )
        .unwrap();
        assert_eq!(
            w.expr,
            PhiExpr::Or {
                args: vec![
                    PhiExpr::Eq {
                        value: Value::Text("home".into())
                    },
                    PhiExpr::InZone {
                        center: [0.0, 1.0],
                        radius: 2.5
                    }
                ]
            }
        );
    }

    proptest! {
        #[test]
        fn in_zone_is_symmetric(
            cx in -1e3f64..1e3, cy in -1e3f64..1e3,
            px in -1e3f64..1e3, py in -1e3f64..1e3,
            r in 1e-3f64..2e3,
        ) {
            let a = PhiExpr::InZone { center: [cx, cy], radius: r }.eval(&Value::Coord([px, py])).unwrap();
            let b = PhiExpr::InZone { center: [px, py], radius: r }.eval(&Value::Coord([cx, cy])).unwrap();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn evaluation_is_deterministic(v in -100f64..100.0, lo in -50f64..0.0, hi in 0f64..50.0) {
            let p = phi(PhiExpr::InRange { lo, hi });
            let i = info(Value::Num(v));
            prop_assert_eq!(evaluate_phi(&p, &i).unwrap(), evaluate_phi(&p, &i.clone()).unwrap());
        }
    }
}
