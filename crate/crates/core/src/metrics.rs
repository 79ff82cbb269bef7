//! Dataset metrics: sample sizes for the verification study, success rate,
//! the record- and commit-level precisions, and coverage.
//!
//! Ratios are carried as exact `numerator / denominator` pairs and rounded
//! to one decimal with integer arithmetic (half up), so reported figures
//! never drift from the rational value.

use core::fmt;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MetricsError {
    /// A denominator was zero.
    ZeroSample,
    /// A numerator exceeded its denominator.
    NumeratorExceedsDenominator { numerator: u64, denominator: u64 },
    UnsupportedConfidence,
    InvalidMargin,
}

impl fmt::Display for MetricsError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MetricsError::ZeroSample => f.write_str("denominator is zero"),
            MetricsError::NumeratorExceedsDenominator { numerator, denominator } => {
                write!(f, "{numerator} exceeds {denominator}")
            }
            MetricsError::UnsupportedConfidence => {
                f.write_str("confidence must be one of 0.90, 0.95, 0.99")
            }
            MetricsError::InvalidMargin => f.write_str("margin must be in (0, 1)"),
        }
    }
}

/// An exact percentage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(into = "PercentRepr", try_from = "PercentRepr")]
pub struct Percent {
    pub numerator: u64,
    pub denominator: u64,
}

impl Percent {
    pub fn new(numerator: u64, denominator: u64) -> Result<Self, MetricsError> {
        if denominator == 0 {
            return Err(MetricsError::ZeroSample);
        }
        if numerator > denominator {
            return Err(MetricsError::NumeratorExceedsDenominator { numerator, denominator });
        }
        Ok(Percent { numerator, denominator })
    }

    /// Percentage in tenths of a percent, rounded half up.
    pub fn tenths(&self) -> u64 {
        let n = self.numerator as u128 * 2000 + self.denominator as u128;
        (n / (2 * self.denominator as u128)) as u64
    }

    /// Percentage rounded to one decimal.
    pub fn value(&self) -> f64 {
        self.tenths() as f64 / 10.0
    }

    pub fn raw(&self) -> f64 {
        100.0 * self.numerator as f64 / self.denominator as f64
    }
}

impl fmt::Display for Percent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let t = self.tenths();
        write!(f, "{}.{}%", t / 10, t % 10)
    }
}

#[derive(Serialize, Deserialize)]
struct PercentRepr {
    percent: f64,
    numerator: u64,
    denominator: u64,
}

impl From<Percent> for PercentRepr {
    fn from(p: Percent) -> Self {
        PercentRepr { percent: p.value(), numerator: p.numerator, denominator: p.denominator }
    }
}

impl TryFrom<PercentRepr> for Percent {
    type Error = MetricsError;
    fn try_from(r: PercentRepr) -> Result<Self, Self::Error> {
        Percent::new(r.numerator, r.denominator)
    }
}

/// Two-sided z for the supported confidence levels.
pub fn z_score(confidence: f64) -> Option<f64> {
    const LEVELS: [(f64, f64); 3] = [(0.90, 1.644854), (0.95, 1.959964), (0.99, 2.575829)];
    LEVELS
        .iter()
        .find(|(c, _)| libm::fabs(c - confidence) < 1e-9)
        .map(|(_, z)| *z)
}

/// Cochran sample size with finite-population correction, rounded up and
/// capped at the population: `n0 = z^2 p (1 - p) / e^2`,
/// `n = n0 N / (n0 + N - 1)`.
pub fn sample_size(population: u64, confidence: f64, margin: f64, p: f64) -> Result<u64, MetricsError> {
    if population == 0 {
        return Err(MetricsError::ZeroSample);
    }
    let z = z_score(confidence).ok_or(MetricsError::UnsupportedConfidence)?;
    if !(margin > 0.0 && margin < 1.0) || !(0.0..=1.0).contains(&p) {
        return Err(MetricsError::InvalidMargin);
    }
    let n0 = z * z * p * (1.0 - p) / (margin * margin);
    let big_n = population as f64;
    let n = n0 * big_n / (n0 + big_n - 1.0);
    Ok((libm::ceil(n) as u64).clamp(1, population))
}

/// Sample size at 95% confidence, 5% margin, p = 0.5.
pub fn default_sample_size(population: u64) -> Result<u64, MetricsError> {
    sample_size(population, 0.95, 0.05, 0.5)
}

/// Share of sampled records with at least one identified fix.
pub fn success_rate(identified: u64, sampled: u64) -> Result<Percent, MetricsError> {
    Percent::new(identified, sampled)
}

/// Counts behind the two precision figures.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tally {
    pub sampled_records: u64,
    pub true_records: u64,
    pub candidate_vfcs: u64,
    pub true_vfcs: u64,
}

impl Tally {
    pub fn new(sampled_records: u64, true_records: u64, candidate_vfcs: u64, true_vfcs: u64) -> Self {
        Tally { sampled_records, true_records, candidate_vfcs, true_vfcs }
    }

    pub fn is_consistent(&self) -> bool {
        self.true_records <= self.sampled_records && self.true_vfcs <= self.candidate_vfcs
    }
}

/// `(precision_records, precision_vfcs)`.
pub fn precision(t: &Tally) -> Result<(Percent, Percent), MetricsError> {
    Ok((
        Percent::new(t.true_records, t.sampled_records)?,
        Percent::new(t.true_vfcs, t.candidate_vfcs)?,
    ))
}

/// Share of all records mapped to at least one candidate.
pub fn coverage(identified_records: u64, all_records: u64) -> Result<Percent, MetricsError> {
    Percent::new(identified_records, all_records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;

    #[test]
    fn rounding_half_up() {
        assert_eq!(Percent::new(1, 8).unwrap().tenths(), 125);
        assert_eq!(Percent::new(1, 16).unwrap().tenths(), 63); // 6.25 -> 6.3
        assert_eq!(Percent::new(2, 3).unwrap().to_string(), "66.7%");
        assert_eq!(Percent::new(0, 3).unwrap().value(), 0.0);
    }

    #[test]
    fn rejects_bad_ratios() {
        assert_eq!(success_rate(1, 0), Err(MetricsError::ZeroSample));
        assert!(matches!(
            coverage(5, 4),
            Err(MetricsError::NumeratorExceedsDenominator { .. })
        ));
    }

    #[test]
    fn table_values() {
        assert_eq!(success_rate(369, 375).unwrap().value(), 98.4);
        assert_eq!(success_rate(33, 384).unwrap().value(), 8.6);
        assert_eq!(success_rate(0, 10).unwrap().value(), 0.0);
        let (r, v) = precision(&Tally::new(857, 766, 965, 840)).unwrap();
        assert_eq!((r.value(), v.value()), (89.4, 87.0));
        assert_eq!(coverage(0, 100).unwrap().value(), 0.0);
    }

    #[test]
    fn sample_size_limits() {
        assert_eq!(default_sample_size(3).unwrap(), 3);
        assert_eq!(default_sample_size(1).unwrap(), 1);
        assert_eq!(default_sample_size(400).unwrap(), 197);
        assert_eq!(default_sample_size(u32::MAX as u64 * 1000).unwrap(), 385);
        assert_eq!(sample_size(100, 0.5, 0.05, 0.5), Err(MetricsError::UnsupportedConfidence));
        assert_eq!(sample_size(0, 0.95, 0.05, 0.5), Err(MetricsError::ZeroSample));
    }

    #[test]
    fn percent_serde() {
        let p = Percent::new(766, 857).unwrap();
        let j = serde_json::to_string(&p).unwrap();
        assert_eq!(j, r#"{"percent":89.4,"numerator":766,"denominator":857}"#);
        assert_eq!(serde_json::from_str::<Percent>(&j).unwrap(), p);
    }
}
