//! Scalar amenable regularizers and their proximal operators.
//!
//! Every penalty is stored in unit-normalized form (slope 1 at the origin)
//! and scaled by a positive `weight`. The proximal operator solves
//!
//! ```text
//! prox(y; step) = argmin_x  weight * phi(|x|) + (x - y)^2 / (2 * step)
//! ```
//!
//! so for the solver `step` is the combined product `tau * lambda`. All
//! families zero out inputs with `|y| <= weight * step`.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{config_err, Error, Result};

/// Penalty family.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Family {
    #[serde(rename = "l1")]
    L1,
    #[serde(rename = "capped", alias = "capped_l1")]
    CappedL1,
    #[serde(rename = "scad")]
    Scad,
    #[serde(rename = "mcp")]
    Mcp,
}

impl Family {
    pub const ALL: [Family; 4] = [Family::L1, Family::CappedL1, Family::Scad, Family::Mcp];

    pub fn name(self) -> &'static str {
        match self {
            Family::L1 => "l1",
            Family::CappedL1 => "capped",
            Family::Scad => "scad",
            Family::Mcp => "mcp",
        }
    }
}

impl std::str::FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "l1" => Ok(Family::L1),
            "capped" | "capped_l1" | "cappedl1" => Ok(Family::CappedL1),
            "scad" => Ok(Family::Scad),
            "mcp" => Ok(Family::Mcp),
            other => config_err(format!("unknown regularizer family `{other}`")),
        }
    }
}

impl std::fmt::Display for Family {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// A validated penalty: family, shape parameter and outer weight.
///
/// `gamma` is the knee of MCP, the cap `c` of capped-l1 (the penalty
/// saturates at `c / 2`) and the second knot `alpha > 2` of SCAD. It is
/// ignored by l1.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSpec", into = "RawSpec")]
pub struct RegularizerSpec {
    family: Family,
    gamma: f64,
    weight: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSpec {
    family: Family,
    gamma: f64,
    #[serde(default = "one")]
    weight: f64,
}

fn one() -> f64 {
    1.0
}

impl TryFrom<RawSpec> for RegularizerSpec {
    type Error = Error;

    fn try_from(raw: RawSpec) -> Result<Self> {
        RegularizerSpec::new(raw.family, raw.gamma, raw.weight)
    }
}

impl From<RegularizerSpec> for RawSpec {
    fn from(spec: RegularizerSpec) -> Self {
        RawSpec { family: spec.family, gamma: spec.gamma, weight: spec.weight }
    }
}

/// Output of the scalar proximal operator.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProxResult {
    pub value: f64,
    /// Set exactly when `value == 0.0`.
    pub is_zero: bool,
}

impl ProxResult {
    fn new(value: f64) -> Self {
        // normalize -0.0 so callers can compare bit patterns
        let value = if value == 0.0 { 0.0 } else { value };
        ProxResult { value, is_zero: value == 0.0 }
    }
}

/// Result of applying the proximal operator entrywise.
#[derive(Clone, Debug, PartialEq)]
pub struct ProxVector {
    pub values: DVector<f64>,
    /// Indices of the nonzero entries, ascending.
    pub support: Vec<usize>,
}

impl RegularizerSpec {
    pub fn new(family: Family, gamma: f64, weight: f64) -> Result<Self> {
        if !(weight.is_finite() && weight > 0.0) {
            return config_err(format!("regularizer weight must be positive and finite, got {weight}"));
        }
        if !gamma.is_finite() {
            return config_err(format!("regularizer gamma must be finite, got {gamma}"));
        }
        match family {
            Family::Scad if gamma <= 2.0 => {
                return config_err(format!("SCAD requires alpha > 2, got {gamma}"));
            }
            Family::L1 if gamma < 0.0 => {
                return config_err(format!("gamma must be nonnegative, got {gamma}"));
            }
            Family::Mcp | Family::CappedL1 if gamma <= 0.0 => {
                return config_err(format!("{family} requires gamma > 0, got {gamma}"));
            }
            _ => {}
        }
        Ok(RegularizerSpec { family, gamma, weight })
    }

    pub fn l1(weight: f64) -> Result<Self> {
        Self::new(Family::L1, 1.0, weight)
    }

    pub fn mcp(knee: f64, weight: f64) -> Result<Self> {
        Self::new(Family::Mcp, knee, weight)
    }

    pub fn scad(alpha: f64, weight: f64) -> Result<Self> {
        Self::new(Family::Scad, alpha, weight)
    }

    pub fn capped_l1(cap: f64, weight: f64) -> Result<Self> {
        Self::new(Family::CappedL1, cap, weight)
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn weight(&self) -> f64 {
        self.weight
    }

    /// Same family and shape with a different outer weight.
    pub fn with_weight(&self, weight: f64) -> Result<Self> {
        Self::new(self.family, self.gamma, weight)
    }

    /// Penalty value `weight * phi(|t|)`.
    pub fn phi(&self, t: f64) -> f64 {
        let t = t.abs();
        let unit = match self.family {
            Family::L1 => t,
            Family::CappedL1 => t.min(0.5 * self.gamma),
            Family::Scad => {
                let a = self.gamma;
                if t <= 1.0 {
                    t
                } else if t <= a {
                    (2.0 * a * t - t * t - 1.0) / (2.0 * (a - 1.0))
                } else {
                    0.5 * (a + 1.0)
                }
            }
            Family::Mcp => {
                let g = self.gamma;
                if t <= g {
                    t - t * t / (2.0 * g)
                } else {
                    0.5 * g
                }
            }
        };
        self.weight * unit
    }

    /// Derivative of the penalty for `t > 0`. At the capped-l1 kink the
    /// right derivative (zero) is returned.
    pub fn phi_derivative(&self, t: f64) -> Result<f64> {
        if !(t > 0.0) {
            return Err(Error::Domain(format!("phi_derivative requires t > 0, got {t}")));
        }
        let unit = match self.family {
            Family::L1 => 1.0,
            Family::CappedL1 => {
                if t < 0.5 * self.gamma {
                    1.0
                } else {
                    0.0
                }
            }
            Family::Scad => {
                let a = self.gamma;
                if t <= 1.0 {
                    1.0
                } else if t <= a {
                    (a - t) / (a - 1.0)
                } else {
                    0.0
                }
            }
            Family::Mcp => {
                if t < self.gamma {
                    1.0 - t / self.gamma
                } else {
                    0.0
                }
            }
        };
        Ok(self.weight * unit)
    }

    /// Weak-convexity constant of the weighted penalty.
    ///
    /// Capped-l1 has a concave kink and is not weakly convex; `weight / c`
    /// stands in for the precondition check.
    pub fn weak_convexity(&self) -> f64 {
        let unit = match self.family {
            Family::L1 => 0.0,
            Family::CappedL1 => 1.0 / self.gamma,
            Family::Scad => 1.0 / (self.gamma - 1.0),
            Family::Mcp => 1.0 / self.gamma,
        };
        self.weight * unit
    }

    /// Inputs with `|y|` at or below this value are mapped to zero.
    pub fn threshold(&self, step: f64) -> f64 {
        self.weight * step
    }

    /// Checks that the prox subproblem with this step is strongly convex.
    pub fn check_step(&self, step: f64) -> Result<()> {
        if !(step.is_finite() && step > 0.0) {
            return config_err(format!("prox step must be positive and finite, got {step}"));
        }
        let nu = self.weak_convexity();
        if nu * step >= 1.0 {
            return config_err(format!(
                "{} prox with step {step} is not strongly convex (weak convexity {nu}, need nu * step < 1)",
                self.family
            ));
        }
        Ok(())
    }

    /// Scalar proximal operator.
    pub fn prox(&self, y: f64, step: f64) -> Result<ProxResult> {
        self.check_step(step)?;
        Ok(ProxResult::new(self.prox_unchecked(y, step)))
    }

    /// Scalar prox without the precondition check; callers must have run
    /// [`check_step`](Self::check_step) for this `step`.
    pub(crate) fn prox_unchecked(&self, y: f64, step: f64) -> f64 {
        let a = y.abs();
        let th = self.weight * step;
        if a <= th {
            return 0.0;
        }
        let mag = match self.family {
            Family::L1 => a - th,
            Family::Mcp => {
                let g = self.gamma;
                if a >= g {
                    a
                } else {
                    (a - th) / (1.0 - th / g)
                }
            }
            Family::Scad => {
                let al = self.gamma;
                if a <= 1.0 + th {
                    a - th
                } else if a <= al {
                    ((al - 1.0) * a - al * th) / (al - 1.0 - th)
                } else {
                    a
                }
            }
            Family::CappedL1 => {
                let h = 0.5 * self.gamma;
                if a < h {
                    a - th
                } else if a <= h + 0.5 * th {
                    // both branches are global minimizers at equality; keep the smaller one
                    a - th
                } else {
                    a
                }
            }
        };
        y.signum() * mag
    }

    /// Entrywise proximal operator with the support of the result.
    pub fn prox_vector(&self, y: &DVector<f64>, step: f64) -> Result<ProxVector> {
        self.check_step(step)?;
        let mut support = Vec::new();
        let values = DVector::from_iterator(
            y.len(),
            y.iter().enumerate().map(|(i, &yi)| {
                let v = ProxResult::new(self.prox_unchecked(yi, step)).value;
                if v != 0.0 {
                    support.push(i);
                }
                v
            }),
        );
        Ok(ProxVector { values, support })
    }

    /// Sum of the penalty over the entries of `x`.
    pub fn phi_sum<'a>(&self, x: impl IntoIterator<Item = &'a f64>) -> f64 {
        x.into_iter().map(|&v| self.phi(v)).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit(family: Family, gamma: f64) -> RegularizerSpec {
        RegularizerSpec::new(family, gamma, 1.0).unwrap()
    }

    #[test]
    fn phi_table_values() {
        assert_eq!(unit(Family::L1, 1.0).phi(0.7), 0.7);
        assert_eq!(unit(Family::Mcp, 1.0).phi(2.0), 0.5);
        let capped = unit(Family::CappedL1, 1.0);
        assert_eq!(capped.phi(0.3), 0.3);
        assert_eq!(capped.phi(5.0), 0.5);
    }

    #[test]
    fn derivative_values() {
        assert_eq!(unit(Family::L1, 1.0).phi_derivative(3.2).unwrap(), 1.0);
        assert_eq!(unit(Family::Mcp, 1.0).phi_derivative(2.0).unwrap(), 0.0);
        let scad = unit(Family::Scad, 3.7);
        let t = 2.1;
        assert!((scad.phi_derivative(t).unwrap() - (3.7 - t) / 2.7).abs() < 1e-15);
        assert!(matches!(scad.phi_derivative(0.0), Err(Error::Domain(_))));
        assert!(matches!(scad.phi_derivative(-1.0), Err(Error::Domain(_))));
    }

    #[test]
    fn invalid_specs_rejected() {
        assert!(RegularizerSpec::scad(2.0, 1.0).is_err());
        assert!(RegularizerSpec::mcp(0.0, 1.0).is_err());
        assert!(RegularizerSpec::capped_l1(-1.0, 1.0).is_err());
        assert!(RegularizerSpec::l1(0.0).is_err());
        assert!(RegularizerSpec::l1(f64::NAN).is_err());
    }

    #[test]
    fn prox_closed_form_examples() {
        let l1 = unit(Family::L1, 1.0);
        assert_eq!(l1.prox(1.5, 0.5).unwrap().value, 1.0);
        let mcp = unit(Family::Mcp, 1.0);
        let zero = mcp.prox(0.0, 0.5).unwrap();
        assert!(zero.is_zero && zero.value.to_bits() == 0);
        assert!((mcp.prox(0.75, 0.5).unwrap().value - 0.5).abs() < 1e-15);
        assert!(mcp.prox(0.4, 0.5).unwrap().is_zero);
        assert_eq!(mcp.prox(2.0, 0.5).unwrap().value, 2.0);
    }

    #[test]
    fn prox_rejects_nonconvex_subproblem() {
        let mcp = unit(Family::Mcp, 1.0);
        assert!(matches!(mcp.prox(0.75, 1.0), Err(Error::Config(_))));
        assert!(matches!(mcp.prox(0.75, 2.0), Err(Error::Config(_))));
        let scad = unit(Family::Scad, 3.7);
        assert!(scad.prox(1.0, 2.7).is_err());
        assert!(scad.prox(1.0, 2.6).is_ok());
        assert!(unit(Family::L1, 1.0).prox(1.0, 1e6).is_ok());
        assert!(unit(Family::L1, 1.0).prox(1.0, 0.0).is_err());
    }

    #[test]
    fn capped_tie_prefers_smaller_magnitude() {
        let capped = unit(Family::CappedL1, 2.0);
        let step = 0.5;
        let y = 1.0 + 0.5 * step;
        let out = capped.prox(y, step).unwrap();
        assert_eq!(out.value, y - step);
        assert!(!out.is_zero);
        let above = capped.prox(y + 1e-9, step).unwrap();
        assert_eq!(above.value, y + 1e-9);
        // cap smaller than the threshold: the zero branch wins
        let capped = unit(Family::CappedL1, 1.0);
        let out = capped.prox(0.55, 0.6).unwrap();
        assert!(out.is_zero);
    }

    #[test]
    fn unbiased_region_is_identity() {
        let step = 0.3;
        assert_eq!(unit(Family::Mcp, 1.5).prox(-1.6, step).unwrap().value, -1.6);
        assert_eq!(unit(Family::Scad, 3.7).prox(3.71, step).unwrap().value, 3.71);
        assert_eq!(unit(Family::CappedL1, 2.0).prox(1.2, step).unwrap().value, 1.2);
    }

    #[test]
    fn scad_prox_is_continuous_at_knots() {
        let scad = unit(Family::Scad, 3.7);
        let step = 0.8;
        for knot in [1.0 + step, 3.7] {
            let lo = scad.prox(knot - 1e-9, step).unwrap().value;
            let hi = scad.prox(knot + 1e-9, step).unwrap().value;
            assert!((lo - hi).abs() < 1e-8, "jump at {knot}: {lo} vs {hi}");
        }
    }

    #[test]
    fn prox_vector_examples() {
        let l1 = unit(Family::L1, 1.0);
        let out = l1.prox_vector(&DVector::zeros(4), 0.5).unwrap();
        assert_eq!(out.values, DVector::zeros(4));
        assert!(out.support.is_empty());
        let out = l1.prox_vector(&DVector::from_vec(vec![1.5, -1.5, 0.2]), 0.5).unwrap();
        assert_eq!(out.values.as_slice(), &[1.0, -1.0, 0.0]);
        assert_eq!(out.support, vec![0, 1]);
    }

    #[test]
    fn json_shape() {
        let spec = RegularizerSpec::mcp(3.0, 1.0).unwrap();
        let text = serde_json::to_string(&spec).unwrap();
        assert_eq!(text, r#"{"family":"mcp","gamma":3.0,"weight":1.0}"#);
        let back: RegularizerSpec = serde_json::from_str(&text).unwrap();
        assert_eq!(back, spec);
        assert!(serde_json::from_str::<RegularizerSpec>(r#"{"family":"scad","gamma":1.5,"weight":1}"#).is_err());
        assert!(serde_json::from_str::<RegularizerSpec>(r#"{"family":"l1","gamma":1,"weight":1,"x":2}"#).is_err());
    }
}
