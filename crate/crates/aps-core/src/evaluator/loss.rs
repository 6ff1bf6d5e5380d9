//! Pairwise preference loss with margin, in two forms.
//!
//! `Literal` is the raw negative log of the score gap plus margin,
//! floored so it stays defined when the gap is at or below the negative
//! margin. `Logistic` is the Bradley-Terry form, the negative log
//! sigmoid of the gap minus margin; it is total, convex in the gap, and
//! translation-invariant in the scores, so it is the default.

use serde::{Deserialize, Serialize};

/// Floor inside the literal log; below the floor the loss is constant
/// and its gradient is zero.
pub const LITERAL_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossMode {
    Literal,
    Logistic,
}

impl std::fmt::Display for LossMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            LossMode::Literal => write!(f, "literal"),
            LossMode::Logistic => write!(f, "logistic"),
        }
    }
}

impl LossMode {
    pub fn parse(tag: &str) -> Option<Self> {
        match tag.to_ascii_lowercase().as_str() {
            "literal" => Some(LossMode::Literal),
            "logistic" => Some(LossMode::Logistic),
            _ => None,
        }
    }
}

/// Loss value with exact partial derivatives w.r.t. both scores.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossGrad {
    pub loss: f64,
    pub d_good: f64,
    pub d_bad: f64,
}

/// Numerically stable ln(1 + e^(-z)).
fn softplus_neg(z: f64) -> f64 {
    if z > 0.0 {
        (-z).exp().ln_1p()
    } else {
        -z + z.exp().ln_1p()
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

pub fn preference_loss(s_good: f64, s_bad: f64, epsilon: f64, mode: LossMode) -> LossGrad {
    match mode {
        LossMode::Literal => {
            let gap = s_good - s_bad + epsilon;
            if gap > LITERAL_FLOOR {
                LossGrad {
                    loss: -gap.ln(),
                    d_good: -1.0 / gap,
                    d_bad: 1.0 / gap,
                }
            } else {
                LossGrad {
                    loss: -LITERAL_FLOOR.ln(),
                    d_good: 0.0,
                    d_bad: 0.0,
                }
            }
        }
        LossMode::Logistic => {
            let z = s_good - s_bad - epsilon;
            // loss = -ln sigmoid(z); d loss / dz = sigmoid(z) - 1
            let g = sigmoid(z) - 1.0;
            LossGrad {
                loss: softplus_neg(z),
                d_good: g,
                d_bad: -g,
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    #[allow(clippy::approx_constant)]
    fn logistic_equal_scores_give_ln_two() {
        let lg = preference_loss(1.3, 1.3, 0.0, LossMode::Logistic);
        assert!((lg.loss - std::f64::consts::LN_2).abs() < 1e-12);
        assert!((lg.loss - 0.693147).abs() < 1e-6);
    }

    #[test]
    fn literal_unit_gap_value() {
        let lg = preference_loss(1.0, 0.0, 0.1, LossMode::Literal);
        assert!((lg.loss - (-(1.1f64).ln())).abs() < 1e-12);
        assert!((lg.loss + 0.095310).abs() < 1e-6);
    }

    #[test]
    fn literal_is_total_below_the_margin() {
        let lg = preference_loss(0.0, 5.0, 0.1, LossMode::Literal);
        assert!(lg.loss.is_finite());
        assert_eq!(lg.d_good, 0.0);
        assert_eq!(lg.d_bad, 0.0);
    }

    #[test]
    fn partials_match_central_differences() {
        let h = 1e-5;
        let points = [
            (0.3, -0.2, 0.1),
            (1.5, 0.9, 0.0),
            (-0.7, 0.4, 0.25),
            (2.0, 1.999, 0.1),
        ];
        for mode in [LossMode::Literal, LossMode::Logistic] {
            for &(sg, sb, eps) in &points {
                if mode == LossMode::Literal && sg - sb + eps <= 2.0 * h {
                    continue; // keep clear of the floor kink
                }
                let lg = preference_loss(sg, sb, eps, mode);
                let fd_good = (preference_loss(sg + h, sb, eps, mode).loss
                    - preference_loss(sg - h, sb, eps, mode).loss)
                    / (2.0 * h);
                let fd_bad = (preference_loss(sg, sb + h, eps, mode).loss
                    - preference_loss(sg, sb - h, eps, mode).loss)
                    / (2.0 * h);
                let rel = |a: f64, b: f64| (a - b).abs() / a.abs().max(b.abs()).max(1e-9);
                assert!(
                    rel(lg.d_good, fd_good) < 1e-6,
                    "{mode:?} d_good {} vs fd {}",
                    lg.d_good,
                    fd_good
                );
                assert!(
                    rel(lg.d_bad, fd_bad) < 1e-6,
                    "{mode:?} d_bad {} vs fd {}",
                    lg.d_bad,
                    fd_bad
                );
            }
        }
    }

    #[test]
    fn logistic_is_translation_invariant() {
        for t in [-10.0, -0.5, 0.0, 3.25, 100.0] {
            let base = preference_loss(0.8, 0.1, 0.2, LossMode::Logistic);
            let shifted = preference_loss(0.8 + t, 0.1 + t, 0.2, LossMode::Logistic);
            assert!((base.loss - shifted.loss).abs() < 1e-9, "shift {t}");
        }
    }
}
