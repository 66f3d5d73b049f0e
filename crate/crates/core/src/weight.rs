//! Radial weight `f` of the flow speed `1/(f(|X|) H)`.
//!
//! Built-in weights are evaluated analytically. Tabulated weights use a
//! monotone cubic (Fritsch–Carlson) interpolant and differentiate the
//! interpolant itself, so `f'` stays continuous across knots.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WeightError {
    #[error("weight evaluated at negative radius y = {0}")]
    NegativeArgument(f64),
    #[error("y = {y} outside tabulated range [{lo}, {hi}]")]
    Extrapolation { y: f64, lo: f64, hi: f64 },
    #[error("invalid weight: {0}")]
    Invalid(String),
}

/// Sampled weight with a shape-preserving cubic interpolant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonotoneCubic {
    xs: Vec<f64>,
    ys: Vec<f64>,
    slopes: Vec<f64>,
}

impl MonotoneCubic {
    pub fn new(xs: Vec<f64>, ys: Vec<f64>) -> Result<Self, WeightError> {
        if xs.len() != ys.len() || xs.len() < 2 {
            return Err(WeightError::Invalid(
                "table needs at least two (y, f) pairs of equal length".into(),
            ));
        }
        if xs.iter().chain(ys.iter()).any(|v| !v.is_finite()) {
            return Err(WeightError::Invalid("table contains non-finite values".into()));
        }
        if xs.windows(2).any(|w| w[1] <= w[0]) {
            return Err(WeightError::Invalid("table abscissae must be strictly increasing".into()));
        }
        let m = xs.len();
        let secants: Vec<f64> = (0..m - 1)
            .map(|i| (ys[i + 1] - ys[i]) / (xs[i + 1] - xs[i]))
            .collect();
        let mut slopes = vec![0.0; m];
        slopes[0] = secants[0];
        slopes[m - 1] = secants[m - 2];
        for i in 1..m - 1 {
            slopes[i] = if secants[i - 1] * secants[i] <= 0.0 {
                0.0
            } else {
                0.5 * (secants[i - 1] + secants[i])
            };
        }
        // Fritsch–Carlson limiter
        for i in 0..m - 1 {
            if secants[i] == 0.0 {
                slopes[i] = 0.0;
                slopes[i + 1] = 0.0;
                continue;
            }
            let a = slopes[i] / secants[i];
            let b = slopes[i + 1] / secants[i];
            let r = a * a + b * b;
            if r > 9.0 {
                let tau = 3.0 / r.sqrt();
                slopes[i] = tau * a * secants[i];
                slopes[i + 1] = tau * b * secants[i];
            }
        }
        Ok(Self { xs, ys, slopes })
    }

    pub fn range(&self) -> (f64, f64) {
        (self.xs[0], self.xs[self.xs.len() - 1])
    }

    pub fn knots(&self) -> (&[f64], &[f64]) {
        (&self.xs, &self.ys)
    }

    pub fn is_monotone_increasing(&self) -> bool {
        self.ys.windows(2).all(|w| w[1] >= w[0])
    }

    fn locate(&self, x: f64) -> Result<usize, WeightError> {
        let (lo, hi) = self.range();
        if !(lo..=hi).contains(&x) {
            return Err(WeightError::Extrapolation { y: x, lo, hi });
        }
        let i = self.xs.partition_point(|&k| k <= x);
        Ok(i.saturating_sub(1).min(self.xs.len() - 2))
    }

    pub fn value(&self, x: f64) -> Result<f64, WeightError> {
        let i = self.locate(x)?;
        let h = self.xs[i + 1] - self.xs[i];
        let t = (x - self.xs[i]) / h;
        let (t2, t3) = (t * t, t * t * t);
        Ok((2.0 * t3 - 3.0 * t2 + 1.0) * self.ys[i]
            + (t3 - 2.0 * t2 + t) * h * self.slopes[i]
            + (-2.0 * t3 + 3.0 * t2) * self.ys[i + 1]
            + (t3 - t2) * h * self.slopes[i + 1])
    }

    pub fn derivative(&self, x: f64) -> Result<f64, WeightError> {
        let i = self.locate(x)?;
        let h = self.xs[i + 1] - self.xs[i];
        let t = (x - self.xs[i]) / h;
        let t2 = t * t;
        Ok((6.0 * t2 - 6.0 * t) / h * self.ys[i]
            + (3.0 * t2 - 4.0 * t + 1.0) * self.slopes[i]
            + (-6.0 * t2 + 6.0 * t) / h * self.ys[i + 1]
            + (3.0 * t2 - 2.0 * t) * self.slopes[i + 1])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum WeightKind {
    /// `f(y) = y^alpha`; `alpha = 0` is the constant weight.
    Power { alpha: f64 },
    /// `f(y) = y + ln(1 + y)`
    Log1p,
    /// `f(y) = e^y y / (1 + e^y)`
    SigmoidExp,
    Tabulated(MonotoneCubic),
}

/// Declared structural constants of the weight.
///
/// `c1 <= y f'/f <= c2`, and `c5 f(g) <= f(y g) <= c6 f(g)` for `y` in `[c3, c4]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AssumptionConstants {
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub c4: f64,
    pub c5: f64,
    pub c6: f64,
}

impl AssumptionConstants {
    /// Exact constants of `y^alpha` on the window `[c3, c4]`.
    pub fn for_power(alpha: f64, c3: f64, c4: f64) -> Self {
        Self {
            c1: alpha,
            c2: alpha,
            c3,
            c4,
            c5: c3.powf(alpha),
            c6: c4.powf(alpha),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightSpec {
    kind: WeightKind,
    constants: AssumptionConstants,
}

/// `y f'(y) / f(y)`, with a flag when the constant-function clause applies.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogRatio {
    pub value: f64,
    pub constant_clause: bool,
}

impl WeightSpec {
    pub fn new(kind: WeightKind, constants: AssumptionConstants) -> Result<Self, WeightError> {
        let c = constants;
        let all = [c.c1, c.c2, c.c3, c.c4, c.c5, c.c6];
        if all.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(WeightError::Invalid("assumption constants must be finite and non-negative".into()));
        }
        if c.c1 > c.c2 || c.c3 > c.c4 || c.c5 > c.c6 {
            return Err(WeightError::Invalid("need c1 <= c2, c3 <= c4, c5 <= c6".into()));
        }
        if c.c3 <= 0.0 || c.c5 <= 0.0 {
            return Err(WeightError::Invalid("c3..c6 must be positive".into()));
        }
        match &kind {
            WeightKind::Power { alpha } => {
                if !alpha.is_finite() || *alpha < 0.0 {
                    return Err(WeightError::Invalid(format!("power exponent must be >= 0, got {alpha}")));
                }
                if *alpha == 0.0 && (c.c1 != 0.0 || c.c2 != 0.0) {
                    log::warn!("constant weight: declared c1/c2 are ignored (constant-function clause)");
                }
            }
            WeightKind::Tabulated(table) => {
                let (xs, ys) = table.knots();
                if xs[0] < 0.0 {
                    return Err(WeightError::Invalid("tabulated weight must start at y >= 0".into()));
                }
                for (&x, &y) in xs.iter().zip(ys) {
                    if x > 0.0 && y <= 0.0 {
                        return Err(WeightError::Invalid(format!("tabulated f({x}) = {y} is not positive")));
                    }
                    if x == 0.0 && y != 0.0 {
                        return Err(WeightError::Invalid("tabulated weight needs f(0) = 0".into()));
                    }
                }
                if !table.is_monotone_increasing() {
                    log::warn!("tabulated weight is not monotone increasing");
                }
            }
            _ => {}
        }
        if !matches!(kind, WeightKind::Power { alpha } if alpha == 0.0) && c.c1 <= 0.0 {
            return Err(WeightError::Invalid("non-constant weight needs c1 > 0".into()));
        }
        Ok(Self { kind, constants })
    }

    pub fn power(alpha: f64, constants: AssumptionConstants) -> Result<Self, WeightError> {
        Self::new(WeightKind::Power { alpha }, constants)
    }

    /// `y^alpha` with its exact constants on `[1/2, 2]`.
    pub fn power_exact(alpha: f64) -> Self {
        Self::new(
            WeightKind::Power { alpha },
            AssumptionConstants::for_power(alpha, 0.5, 2.0),
        )
        .expect("power weight with exact constants")
    }

    pub fn kind(&self) -> &WeightKind {
        &self.kind
    }

    pub fn constants(&self) -> &AssumptionConstants {
        &self.constants
    }

    pub fn is_constant(&self) -> bool {
        matches!(self.kind, WeightKind::Power { alpha } if alpha == 0.0)
    }

    pub fn eval(&self, y: f64) -> Result<f64, WeightError> {
        if y < 0.0 || y.is_nan() {
            return Err(WeightError::NegativeArgument(y));
        }
        Ok(match &self.kind {
            WeightKind::Power { alpha } if *alpha == 0.0 => 1.0,
            WeightKind::Power { alpha } => y.powf(*alpha),
            WeightKind::Log1p => y + y.ln_1p(),
            WeightKind::SigmoidExp => y / (1.0 + (-y).exp()),
            WeightKind::Tabulated(t) => t.value(y)?,
        })
    }

    pub fn derivative(&self, y: f64) -> Result<f64, WeightError> {
        if y < 0.0 || y.is_nan() {
            return Err(WeightError::NegativeArgument(y));
        }
        Ok(match &self.kind {
            WeightKind::Power { alpha } if *alpha == 0.0 => 0.0,
            WeightKind::Power { alpha } if *alpha == 1.0 => 1.0,
            WeightKind::Power { alpha } => alpha * y.powf(alpha - 1.0),
            WeightKind::Log1p => 1.0 + 1.0 / (1.0 + y),
            WeightKind::SigmoidExp => {
                let s = 1.0 / (1.0 + (-y).exp());
                s + y * s * (1.0 - s)
            }
            WeightKind::Tabulated(t) => t.derivative(y)?,
        })
    }

    pub fn dlog_ratio(&self, y: f64) -> Result<LogRatio, WeightError> {
        if self.is_constant() {
            return Ok(LogRatio { value: 0.0, constant_clause: true });
        }
        if y <= 0.0 {
            return Err(WeightError::NegativeArgument(y));
        }
        let value = match &self.kind {
            WeightKind::Power { alpha } => *alpha,
            WeightKind::SigmoidExp => 1.0 + y / (1.0 + y.exp()),
            _ => y * self.derivative(y)? / self.eval(y)?,
        };
        Ok(LogRatio { value, constant_clause: false })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum AssumptionStatus {
    Pass,
    Fail,
    ConstantClause,
}

#[derive(Debug, Clone, Serialize)]
pub struct AssumptionCheck {
    pub status: AssumptionStatus,
    /// Sample with the largest violation (or the tightest point when passing).
    pub worst_point: Vec<f64>,
    pub worst_violation: f64,
    /// Empirically tightest constants `(lo, hi)` seen over the samples.
    pub tightest: (f64, f64),
}

#[derive(Debug, Clone, Serialize)]
pub struct AssumptionReport {
    pub positivity: AssumptionCheck,
    pub log_ratio: AssumptionCheck,
    pub homogeneity: AssumptionCheck,
}

impl AssumptionReport {
    pub fn all_pass(&self) -> bool {
        [&self.positivity, &self.log_ratio, &self.homogeneity]
            .iter()
            .all(|c| c.status != AssumptionStatus::Fail)
    }
}

const REL_SLACK: f64 = 1e-12;

fn linspace(lo: f64, hi: f64, count: usize) -> impl Iterator<Item = f64> {
    let step = (hi - lo) / (count - 1) as f64;
    (0..count).map(move |i| if i + 1 == count { hi } else { lo + step * i as f64 })
}

/// Spot-checks the declared constants of `w` on sampled windows.
///
/// Positivity and the log-derivative ratio are sampled on `[y_lo, y_hi]`;
/// the two-sided homogeneity bound on `[c3, c4] x [g_lo, g_hi]`.
/// Evaluation failures are reported as violations.
pub fn verify_assumptions(
    w: &WeightSpec,
    y_lo: f64,
    y_hi: f64,
    g_lo: f64,
    g_hi: f64,
    samples: usize,
) -> AssumptionReport {
    assert!(0.0 < y_lo && y_lo < y_hi, "need 0 < y_lo < y_hi");
    assert!(0.0 < g_lo && g_lo < g_hi, "need 0 < g_lo < g_hi");
    assert!(samples >= 16, "need at least 16 samples");
    let c = w.constants;

    let mut pos = AssumptionCheck {
        status: AssumptionStatus::Pass,
        worst_point: vec![y_lo],
        worst_violation: 0.0,
        tightest: (f64::INFINITY, f64::NEG_INFINITY),
    };
    let mut ratio = pos.clone();
    for y in linspace(y_lo, y_hi, samples) {
        let fy = w.eval(y).unwrap_or(f64::NAN);
        pos.tightest = (pos.tightest.0.min(fy), pos.tightest.1.max(fy));
        let violation = if fy.is_nan() { f64::INFINITY } else { (-fy).max(0.0) };
        if fy.is_nan() || fy <= 0.0 {
            pos.status = AssumptionStatus::Fail;
            if violation >= pos.worst_violation {
                pos.worst_violation = violation;
                pos.worst_point = vec![y];
            }
        }
        match w.dlog_ratio(y) {
            Ok(r) if r.constant_clause => {}
            Ok(r) => {
                ratio.tightest = (ratio.tightest.0.min(r.value), ratio.tightest.1.max(r.value));
                let slack = REL_SLACK * c.c2.max(1.0);
                let v = (c.c1 - r.value).max(r.value - c.c2).max(0.0);
                if v > slack && v >= ratio.worst_violation {
                    ratio.status = AssumptionStatus::Fail;
                    ratio.worst_violation = v;
                    ratio.worst_point = vec![y];
                }
            }
            Err(_) => {
                ratio.status = AssumptionStatus::Fail;
                ratio.worst_violation = f64::INFINITY;
                ratio.worst_point = vec![y];
            }
        }
    }
    if w.is_constant() {
        ratio.status = AssumptionStatus::ConstantClause;
        ratio.tightest = (0.0, 0.0);
    }

    let mut hom = AssumptionCheck {
        status: AssumptionStatus::Pass,
        worst_point: vec![c.c3, g_lo],
        worst_violation: 0.0,
        tightest: (f64::INFINITY, f64::NEG_INFINITY),
    };
    for g in linspace(g_lo, g_hi, samples) {
        let fg = w.eval(g).unwrap_or(f64::NAN);
        for y in linspace(c.c3, c.c4, samples) {
            let fyg = w.eval(y * g).unwrap_or(f64::NAN);
            let q = fyg / fg;
            if !q.is_finite() {
                hom.status = AssumptionStatus::Fail;
                hom.worst_violation = f64::INFINITY;
                hom.worst_point = vec![y, g];
                continue;
            }
            hom.tightest = (hom.tightest.0.min(q), hom.tightest.1.max(q));
            let v = (c.c5 - q).max(q - c.c6).max(0.0);
            if v > REL_SLACK * c.c6.max(1.0) && v >= hom.worst_violation {
                hom.status = AssumptionStatus::Fail;
                hom.worst_violation = v;
                hom.worst_point = vec![y, g];
            }
        }
    }

    AssumptionReport { positivity: pos, log_ratio: ratio, homogeneity: hom }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn consts(c1: f64, c2: f64) -> AssumptionConstants {
        AssumptionConstants { c1, c2, c3: 0.5, c4: 2.0, c5: 0.25, c6: 4.0 }
    }

    #[test]
    fn eval_examples() {
        assert_eq!(WeightSpec::power_exact(2.0).eval(3.0).unwrap(), 9.0);
        let log1p = WeightSpec::new(WeightKind::Log1p, consts(0.5, 1.0)).unwrap();
        assert!((log1p.eval(1.0).unwrap() - (1.0 + 2f64.ln())).abs() < 1e-15);
        let sig = WeightSpec::new(WeightKind::SigmoidExp, consts(1.0, 1.3)).unwrap();
        assert_eq!(sig.eval(0.0).unwrap(), 0.0);
        assert_eq!(WeightSpec::power_exact(0.0).eval(0.0).unwrap(), 1.0);
        assert!(matches!(sig.eval(-1.0), Err(WeightError::NegativeArgument(_))));
    }

    #[test]
    fn dlog_ratio_matches_numeric_differentiation() {
        // frozen from a 30-digit numeric differentiation of y f'/f at y = 1
        let log1p = WeightSpec::new(WeightKind::Log1p, consts(0.5, 1.0)).unwrap();
        let sig = WeightSpec::new(WeightKind::SigmoidExp, consts(1.0, 1.3)).unwrap();
        assert!((log1p.dlog_ratio(1.0).unwrap().value - 0.885_924_163_724_461_9).abs() < 1e-13);
        assert!((sig.dlog_ratio(1.0).unwrap().value - 1.268_941_421_369_995_1).abs() < 1e-13);
    }

    #[test]
    fn constant_weight_uses_clause() {
        let w = WeightSpec::power_exact(0.0);
        let r = w.dlog_ratio(2.0).unwrap();
        assert!(r.constant_clause);
        assert_eq!(r.value, 0.0);
        let rep = verify_assumptions(&w, 0.5, 4.0, 0.5, 4.0, 32);
        assert_eq!(rep.log_ratio.status, AssumptionStatus::ConstantClause);
        assert!(rep.all_pass());
    }

    #[test]
    fn power_one_is_homogeneous() {
        let w = WeightSpec::power(
            1.0,
            AssumptionConstants { c1: 1.0, c2: 1.0, c3: 0.5, c4: 2.0, c5: 0.5, c6: 2.0 },
        )
        .unwrap();
        let rep = verify_assumptions(&w, 0.1, 10.0, 0.1, 10.0, 33);
        assert!(rep.all_pass(), "{rep:?}");
        let (lo, hi) = rep.homogeneity.tightest;
        assert!((lo - 0.5).abs() < 1e-14 && (hi - 2.0).abs() < 1e-14);
    }

    #[test]
    fn log1p_constants_on_window() {
        let w = WeightSpec::new(
            WeightKind::Log1p,
            AssumptionConstants { c1: 0.5, c2: 1.0, c3: 0.5, c4: 2.0, c5: 0.4, c6: 2.5 },
        )
        .unwrap();
        let rep = verify_assumptions(&w, 0.5, 4.0, 0.5, 4.0, 64);
        assert_eq!(rep.log_ratio.status, AssumptionStatus::Pass);
        // brute-force minimum over [0.5, 4] is 0.854751...
        assert!((rep.log_ratio.tightest.0 - 0.854_751_775_9).abs() < 1e-4);
        assert!(rep.all_pass(), "{rep:?}");
    }

    #[test]
    fn dishonest_constants_fail() {
        let w = WeightSpec::new(
            WeightKind::Log1p,
            AssumptionConstants { c1: 0.95, c2: 1.0, c3: 0.5, c4: 2.0, c5: 0.4, c6: 2.5 },
        )
        .unwrap();
        let rep = verify_assumptions(&w, 0.5, 4.0, 0.5, 4.0, 64);
        assert_eq!(rep.log_ratio.status, AssumptionStatus::Fail);
        assert!(rep.log_ratio.worst_violation > 0.05);
    }

    #[test]
    fn rejects_inconsistent_constants() {
        let bad = AssumptionConstants { c1: 2.0, c2: 1.0, c3: 0.5, c4: 2.0, c5: 0.5, c6: 2.0 };
        assert!(WeightSpec::power(1.0, bad).is_err());
        assert!(WeightSpec::power(-1.0, AssumptionConstants::for_power(1.0, 0.5, 2.0)).is_err());
    }

    #[test]
    fn tabulated_reproduces_linear_and_errors_outside() {
        let xs: Vec<f64> = (0..=20).map(|i| i as f64 * 0.5).collect();
        let ys = xs.clone();
        let w = WeightSpec::new(
            WeightKind::Tabulated(MonotoneCubic::new(xs, ys).unwrap()),
            AssumptionConstants::for_power(1.0, 0.5, 2.0),
        )
        .unwrap();
        assert!((w.eval(3.3).unwrap() - 3.3).abs() < 1e-14);
        assert!((w.dlog_ratio(3.3).unwrap().value - 1.0).abs() < 1e-13);
        assert!(matches!(w.eval(11.0), Err(WeightError::Extrapolation { .. })));
    }

    #[test]
    fn tabulated_requires_zero_anchor() {
        let t = MonotoneCubic::new(vec![0.0, 1.0], vec![0.5, 1.0]).unwrap();
        assert!(WeightSpec::new(WeightKind::Tabulated(t), consts(0.5, 1.0)).is_err());
    }

    proptest! {
        #[test]
        fn power_ratio_is_alpha(alpha in 0.01f64..5.0, y in 1e-3f64..1e3) {
            let w = WeightSpec::power_exact(alpha);
            prop_assert_eq!(w.dlog_ratio(y).unwrap().value, alpha);
        }

        #[test]
        fn builtins_strictly_increasing(y in 1e-3f64..50.0, dy in 1e-3f64..1.0) {
            let kinds = [WeightKind::Power { alpha: 1.5 }, WeightKind::Log1p, WeightKind::SigmoidExp];
            for kind in kinds {
                let w = WeightSpec::new(kind, consts(0.5, 1.5)).unwrap();
                prop_assert!(w.eval(y + dy).unwrap() > w.eval(y).unwrap());
            }
        }

        #[test]
        fn monotone_table_interpolant_is_monotone(a in 0.0f64..10.0, b in 0.0f64..10.0) {
            let xs: Vec<f64> = (0..12).map(|i| i as f64).collect();
            let ys: Vec<f64> = xs.iter().map(|x| x * x * x + x).collect();
            let t = MonotoneCubic::new(xs, ys).unwrap();
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            prop_assert!(t.value(hi).unwrap() >= t.value(lo).unwrap());
        }
    }
}
