//! Scalar coefficient functions of the parameter vector.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

/// Opaque user callback, not serializable.
#[derive(Clone)]
pub struct CustomTheta {
    pub name: String,
    pub f: Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>,
}

impl fmt::Debug for CustomTheta {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Custom({})", self.name)
    }
}

impl PartialEq for CustomTheta {
    fn eq(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.f, &other.f)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "op")]
pub enum ThetaExpr {
    One,
    Coordinate { index: usize },
    Scale { factor: f64, expr: Box<ThetaExpr> },
    Power { expr: Box<ThetaExpr>, exponent: i32 },
    Product { factors: Vec<ThetaExpr> },
    Sum { terms: Vec<ThetaExpr> },
    AffineShift { offset: f64, expr: Box<ThetaExpr> },
    #[serde(skip)]
    Custom(CustomTheta),
}

impl ThetaExpr {
    pub fn coord(index: usize) -> Self {
        ThetaExpr::Coordinate { index }
    }

    pub fn scaled(factor: f64, expr: ThetaExpr) -> Self {
        ThetaExpr::Scale { factor, expr: Box::new(expr) }
    }

    pub fn shifted(offset: f64, expr: ThetaExpr) -> Self {
        ThetaExpr::AffineShift { offset, expr: Box::new(expr) }
    }

    pub fn custom(name: &str, f: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> Self {
        ThetaExpr::Custom(CustomTheta { name: name.to_string(), f: Arc::new(f) })
    }

    pub fn eval(&self, mu: &[f64]) -> f64 {
        match self {
            ThetaExpr::One => 1.0,
            ThetaExpr::Coordinate { index } => mu[*index],
            ThetaExpr::Scale { factor, expr } => factor * expr.eval(mu),
            ThetaExpr::Power { expr, exponent } => expr.eval(mu).powi(*exponent),
            ThetaExpr::Product { factors } => factors.iter().map(|t| t.eval(mu)).product(),
            ThetaExpr::Sum { terms } => terms.iter().map(|t| t.eval(mu)).sum(),
            ThetaExpr::AffineShift { offset, expr } => offset + expr.eval(mu),
            ThetaExpr::Custom(c) => (c.f)(mu),
        }
    }

    /// Largest coordinate index referenced, if any.
    pub fn max_coordinate(&self) -> Option<usize> {
        match self {
            ThetaExpr::One | ThetaExpr::Custom(_) => None,
            ThetaExpr::Coordinate { index } => Some(*index),
            ThetaExpr::Scale { expr, .. } | ThetaExpr::Power { expr, .. } | ThetaExpr::AffineShift { expr, .. } => {
                expr.max_coordinate()
            }
            ThetaExpr::Product { factors: v } | ThetaExpr::Sum { terms: v } => {
                v.iter().filter_map(|t| t.max_coordinate()).max()
            }
        }
    }

    pub fn is_one(&self) -> bool {
        matches!(self, ThetaExpr::One)
    }

    pub fn is_serializable(&self) -> bool {
        match self {
            ThetaExpr::Custom(_) => false,
            ThetaExpr::One | ThetaExpr::Coordinate { .. } => true,
            ThetaExpr::Scale { expr, .. } | ThetaExpr::Power { expr, .. } | ThetaExpr::AffineShift { expr, .. } => {
                expr.is_serializable()
            }
            ThetaExpr::Product { factors: v } | ThetaExpr::Sum { terms: v } => v.iter().all(|t| t.is_serializable()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn evaluates_grammar() {
        let t = ThetaExpr::Sum {
            terms: vec![
                ThetaExpr::shifted(1.0, ThetaExpr::coord(0)),
                ThetaExpr::Power { expr: Box::new(ThetaExpr::coord(1)), exponent: 2 },
                ThetaExpr::Product { factors: vec![ThetaExpr::scaled(2.0, ThetaExpr::coord(0)), ThetaExpr::One] },
            ],
        };
        assert_eq!(t.eval(&[0.5, 3.0]), 1.5 + 9.0 + 1.0);
        assert_eq!(t.max_coordinate(), Some(1));
    }

    #[test]
    fn json_round_trip() {
        let t = ThetaExpr::scaled(-0.5, ThetaExpr::coord(2));
        let s = serde_json::to_string(&t).unwrap();
        assert_eq!(serde_json::from_str::<ThetaExpr>(&s).unwrap(), t);
        assert!(serde_json::to_string(&ThetaExpr::custom("f", |m| m[0])).is_err());
    }
}
