//! Closed-form test objectives over the non-categorical coordinates.
//!
//! Coordinates are normalized by their bounds, so the same function works
//! for any block structure.

use crate::hpspace::{Keyword, Point, SpaceSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AnalyticFunction {
    /// Squared normalized distance to the center of the box.
    Sphere,
    /// Ill-conditioned quadratic with minimizer at 30% of every range, plus
    /// a small penalty per optimizer choice above the lowest.
    Quadratic,
}

impl AnalyticFunction {
    pub fn token(self) -> &'static str {
        match self {
            AnalyticFunction::Sphere => "SPHERE",
            AnalyticFunction::Quadratic => "QUADRATIC",
        }
    }

    pub fn from_token(token: &str) -> Option<Self> {
        match token {
            "SPHERE" => Some(AnalyticFunction::Sphere),
            "QUADRATIC" => Some(AnalyticFunction::Quadratic),
            _ => None,
        }
    }

    pub fn value(self, p: &Point, spec: &SpaceSpec) -> f64 {
        let coords = p.layout().into_iter().filter(|s| !s.is_categorical()).map(|slot| {
            let def = spec.def_for(slot);
            let width = (def.upper - def.lower).max(f64::MIN_POSITIVE);
            (def, p.get(slot), width)
        });
        match self {
            AnalyticFunction::Sphere => coords
                .map(|(def, x, width)| {
                    let center = if def.kind.is_integral() {
                        def.lower + ((def.upper - def.lower) / 2.0).floor()
                    } else {
                        0.5 * (def.lower + def.upper)
                    };
                    ((x - center) / width).powi(2)
                })
                .sum(),
            AnalyticFunction::Quadratic => {
                let body: f64 = coords
                    .enumerate()
                    .map(|(i, (def, x, width))| (i + 1) as f64 * ((x - def.lower) / width - 0.3).powi(2))
                    .sum();
                let lowest = spec.def(Keyword::OptimizerChoice).lower;
                body + 0.01 * (p.optimizer.kind.code() as f64 - lowest).max(0.0)
            }
        }
    }
}
