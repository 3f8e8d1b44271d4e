//! Data-level fit statistics computable directly from a pattern table.
//!
//! All five statistic kinds need nothing but the table itself: the
//! chi-squared variants use expected frequencies under independence computed
//! from the table's own margins, and the count statistics are plain tallies.

use std::fmt;
use std::str::FromStr;

use crate::contingency::{PatternTable, ResponsePattern};
use crate::error::{Error, Result};

/// Selector for one data-level statistic.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum StatisticSpec {
    /// Pearson chi-square over the full `2^J` table vs. independence.
    PearsonOverall,
    /// Likelihood-ratio chi-square over the full table vs. independence.
    LikelihoodRatioOverall,
    /// Pearson chi-square of the collapsed 2x2 table for variables `(j, k)`.
    PearsonPair(usize, usize),
    /// Total frequency of patterns with at least `Q` ones.
    RiskAtLeast(usize),
    /// Observed frequency of one specific pattern.
    PatternFrequency(ResponsePattern),
}

impl StatisticSpec {
    /// Compact token form: `x2`, `g2`, `x2:1,2`, `risk:3`, `freq:1011`.
    pub fn name(&self) -> String {
        match self {
            StatisticSpec::PearsonOverall => "x2".into(),
            StatisticSpec::LikelihoodRatioOverall => "g2".into(),
            StatisticSpec::PearsonPair(j, k) => format!("x2:{j},{k}"),
            StatisticSpec::RiskAtLeast(q) => format!("risk:{q}"),
            StatisticSpec::PatternFrequency(p) => format!("freq:{p}"),
        }
    }

    /// Validates the spec against a table's variable count.
    pub fn validate(&self, j: usize) -> Result<()> {
        match self {
            StatisticSpec::PearsonOverall | StatisticSpec::LikelihoodRatioOverall => Ok(()),
            StatisticSpec::PearsonPair(a, b) => {
                if *a == 0 || *a > j {
                    Err(Error::VariableOutOfRange { index: *a, max: j })
                } else if *b == 0 || *b > j {
                    Err(Error::VariableOutOfRange { index: *b, max: j })
                } else if a == b {
                    Err(Error::BadVariableSubset)
                } else {
                    Ok(())
                }
            }
            StatisticSpec::RiskAtLeast(q) => {
                if *q > j {
                    Err(Error::RiskThresholdOutOfRange { q: *q, j })
                } else {
                    Ok(())
                }
            }
            StatisticSpec::PatternFrequency(p) => {
                if p.len() != j {
                    Err(Error::DimensionMismatch {
                        context: format!("pattern length {} vs table J={}", p.len(), j),
                    })
                } else {
                    Ok(())
                }
            }
        }
    }

    /// Parses a comma-separated spec list such as `x2,g2,x2:1,2,risk:3`.
    ///
    /// The pair form `x2:j,k` contains a comma of its own, so a piece that
    /// starts with `x2:` consumes the following piece as its second index.
    pub fn parse_list(input: &str) -> Result<Vec<StatisticSpec>> {
        let mut specs = Vec::new();
        let mut pieces = input.split(',').map(str::trim).peekable();
        while let Some(piece) = pieces.next() {
            if piece.is_empty() {
                continue;
            }
            let token = if piece.starts_with("x2:") && !piece.contains(',') {
                match pieces.next() {
                    Some(second) => format!("{piece},{second}"),
                    None => piece.to_string(),
                }
            } else {
                piece.to_string()
            };
            specs.push(token.parse::<StatisticSpec>()?);
        }
        if specs.is_empty() {
            return Err(Error::BadStatisticSpec {
                token: input.into(),
                reason: "no statistic specs given".into(),
            });
        }
        Ok(specs)
    }
}

impl FromStr for StatisticSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = |reason: &str| Error::BadStatisticSpec {
            token: s.to_string(),
            reason: reason.to_string(),
        };
        let s = s.trim();
        match s {
            "x2" => return Ok(StatisticSpec::PearsonOverall),
            "g2" => return Ok(StatisticSpec::LikelihoodRatioOverall),
            _ => {}
        }
        if let Some(rest) = s.strip_prefix("x2:") {
            let (a, b) = rest
                .split_once(',')
                .ok_or_else(|| bad("expected x2:<j>,<k>"))?;
            let j: usize = a.trim().parse().map_err(|_| bad("bad variable index"))?;
            let k: usize = b.trim().parse().map_err(|_| bad("bad variable index"))?;
            if j == k {
                return Err(bad("pair indices must differ"));
            }
            return Ok(StatisticSpec::PearsonPair(j, k));
        }
        if let Some(rest) = s.strip_prefix("risk:") {
            let q: usize = rest.trim().parse().map_err(|_| bad("bad risk threshold"))?;
            return Ok(StatisticSpec::RiskAtLeast(q));
        }
        if let Some(rest) = s.strip_prefix("freq:") {
            let p = ResponsePattern::parse_bits(rest.trim()).map_err(|_| bad("bad pattern bits"))?;
            return Ok(StatisticSpec::PatternFrequency(p));
        }
        Err(bad("unknown statistic"))
    }
}

impl fmt::Display for StatisticSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

/// Pearson chi-square `sum (n - e)^2 / e`. Cells with expected frequency 0
/// are skipped; a positive observation in such a cell is an error.
pub fn pearson_x2(observed: &[u64], expected: &[f64]) -> Result<f64> {
    if observed.len() != expected.len() {
        return Err(Error::LengthMismatch {
            observed: observed.len(),
            expected: expected.len(),
        });
    }
    let mut total = 0.0;
    for (cell, (&n, &e)) in observed.iter().zip(expected.iter()).enumerate() {
        if e <= 0.0 {
            if n > 0 {
                return Err(Error::ImpossibleExpectedZero { cell, observed: n });
            }
            continue;
        }
        let d = n as f64 - e;
        total += d * d / e;
    }
    Ok(total)
}

/// Likelihood-ratio chi-square `2 sum n ln(n/e)` with the 0 ln 0 = 0
/// convention. Same expected-zero handling as [`pearson_x2`].
pub fn lr_g2(observed: &[u64], expected: &[f64]) -> Result<f64> {
    if observed.len() != expected.len() {
        return Err(Error::LengthMismatch {
            observed: observed.len(),
            expected: expected.len(),
        });
    }
    let mut total = 0.0;
    for (cell, (&n, &e)) in observed.iter().zip(expected.iter()).enumerate() {
        if n == 0 {
            continue;
        }
        if e <= 0.0 {
            return Err(Error::ImpossibleExpectedZero { cell, observed: n });
        }
        total += 2.0 * n as f64 * (n as f64 / e).ln();
    }
    Ok(total)
}

/// Total frequency of patterns with at least `q` ones.
pub fn risk_stat(table: &PatternTable, q: usize) -> Result<u64> {
    if q > table.j() {
        return Err(Error::RiskThresholdOutOfRange { q, j: table.j() });
    }
    Ok(table
        .counts()
        .iter()
        .enumerate()
        .filter(|(s, _)| s.count_ones() as usize >= q)
        .map(|(_, &c)| c)
        .sum())
}

/// Observed frequency of one pattern.
pub fn pattern_freq(table: &PatternTable, pattern: &ResponsePattern) -> Result<u64> {
    table.count(pattern)
}

/// Evaluates a statistic on a table. Expected frequencies for the
/// chi-squared kinds always come from the margins of the table being
/// evaluated, never from a model or from another table.
pub fn evaluate(spec: &StatisticSpec, table: &PatternTable) -> Result<f64> {
    spec.validate(table.j())?;
    match spec {
        StatisticSpec::PearsonOverall => {
            let vars: Vec<usize> = (1..=table.j()).collect();
            let expected = table.independence_expected(&vars)?;
            pearson_x2(table.counts(), &expected)
        }
        StatisticSpec::LikelihoodRatioOverall => {
            let vars: Vec<usize> = (1..=table.j()).collect();
            let expected = table.independence_expected(&vars)?;
            lr_g2(table.counts(), &expected)
        }
        StatisticSpec::PearsonPair(j, k) => {
            let pair = table.collapse(&[*j, *k])?;
            let expected = pair.independence_expected(&[1, 2])?;
            pearson_x2(pair.counts(), &expected)
        }
        StatisticSpec::RiskAtLeast(q) => Ok(risk_stat(table, *q)? as f64),
        StatisticSpec::PatternFrequency(p) => Ok(pattern_freq(table, p)? as f64),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn table(j: usize, entries: &[(&str, u64)]) -> PatternTable {
        let mut counts = vec![0u64; 1 << j];
        for (bits, c) in entries {
            counts[ResponsePattern::parse_bits(bits).unwrap().encode()] = *c;
        }
        PatternTable::from_counts(j, counts).unwrap()
    }

    #[test]
    fn pearson_hand_case() {
        let x2 = pearson_x2(&[30, 20, 20, 30], &[25.0, 25.0, 25.0, 25.0]).unwrap();
        assert_abs_diff_eq!(x2, 4.0, epsilon = 1e-12);
    }

    #[test]
    fn pearson_zero_on_perfect_fit() {
        let x2 = pearson_x2(&[10, 20], &[10.0, 20.0]).unwrap();
        assert_eq!(x2, 0.0);
    }

    #[test]
    fn pearson_error_paths() {
        assert!(matches!(
            pearson_x2(&[1, 2], &[1.0]),
            Err(Error::LengthMismatch { .. })
        ));
        assert!(matches!(
            pearson_x2(&[1], &[0.0]),
            Err(Error::ImpossibleExpectedZero { cell: 0, observed: 1 })
        ));
        // expected 0 with observed 0 is skipped
        assert_eq!(pearson_x2(&[0, 4], &[0.0, 4.0]).unwrap(), 0.0);
    }

    #[test]
    fn g2_hand_case() {
        let g2 = lr_g2(&[30, 20, 20, 30], &[25.0, 25.0, 25.0, 25.0]).unwrap();
        assert_abs_diff_eq!(g2, 4.0272, epsilon = 1e-3);
        let exact = 2.0 * (60.0 * (1.2f64).ln() + 40.0 * (0.8f64).ln());
        assert_abs_diff_eq!(g2, exact, epsilon = 1e-12);
    }

    #[test]
    fn g2_zero_on_perfect_fit_and_zero_counts() {
        assert_eq!(lr_g2(&[10, 0], &[10.0, 3.0]).unwrap(), 0.0);
        assert!(matches!(
            lr_g2(&[1], &[0.0]),
            Err(Error::ImpossibleExpectedZero { .. })
        ));
    }

    #[test]
    fn risk_q_zero_is_n() {
        let t = table(3, &[("000", 4), ("101", 6)]);
        assert_eq!(risk_stat(&t, 0).unwrap(), t.n());
        assert!(risk_stat(&t, 4).is_err());
    }

    #[test]
    fn risk_matches_exhaustive_scan() {
        let mut counts = vec![0u64; 64];
        let mut x = 42u64;
        for c in counts.iter_mut() {
            x = x.wrapping_mul(2862933555777941757).wrapping_add(3037000493);
            *c = x >> 59;
        }
        let t = PatternTable::from_counts(6, counts.clone()).unwrap();
        for q in 0..=6usize {
            let oracle: u64 = (0..64usize)
                .filter(|s| {
                    (0..6).map(|b| (s >> b) & 1).sum::<usize>() >= q
                })
                .map(|s| counts[s])
                .sum();
            assert_eq!(risk_stat(&t, q).unwrap(), oracle);
        }
    }

    #[test]
    fn risk_is_monotone_in_q() {
        let t = table(4, &[("1111", 5), ("0110", 3), ("0001", 2), ("0000", 1)]);
        let mut prev = t.n();
        for q in 0..=4usize {
            let r = risk_stat(&t, q).unwrap();
            assert!(r <= prev);
            prev = r;
        }
    }

    #[test]
    fn pattern_freq_lookup_and_default() {
        let t = table(2, &[("11", 2), ("01", 1)]);
        let p = ResponsePattern::parse_bits("11").unwrap();
        assert_eq!(pattern_freq(&t, &p).unwrap(), 2);
        let absent = ResponsePattern::parse_bits("10").unwrap();
        assert_eq!(pattern_freq(&t, &absent).unwrap(), 0);
        let wrong = ResponsePattern::parse_bits("101").unwrap();
        assert!(pattern_freq(&t, &wrong).is_err());
    }

    #[test]
    fn spec_parsing() {
        assert_eq!("x2".parse::<StatisticSpec>().unwrap(), StatisticSpec::PearsonOverall);
        assert_eq!("g2".parse::<StatisticSpec>().unwrap(), StatisticSpec::LikelihoodRatioOverall);
        assert_eq!(
            "x2:1,2".parse::<StatisticSpec>().unwrap(),
            StatisticSpec::PearsonPair(1, 2)
        );
        assert_eq!("risk:3".parse::<StatisticSpec>().unwrap(), StatisticSpec::RiskAtLeast(3));
        assert_eq!(
            "freq:1011".parse::<StatisticSpec>().unwrap(),
            StatisticSpec::PatternFrequency(ResponsePattern::parse_bits("1011").unwrap())
        );
        assert!("x2:1,1".parse::<StatisticSpec>().is_err());
        assert!("nope".parse::<StatisticSpec>().is_err());
        // round-trip through name()
        for s in ["x2", "g2", "x2:3,4", "risk:2", "freq:01"] {
            let spec = s.parse::<StatisticSpec>().unwrap();
            assert_eq!(spec.name(), s);
        }
    }

    #[test]
    fn spec_list_parsing_handles_pair_commas() {
        let specs = StatisticSpec::parse_list("x2,g2,x2:1,2,risk:3,freq:11,x2:3,4").unwrap();
        assert_eq!(
            specs,
            vec![
                StatisticSpec::PearsonOverall,
                StatisticSpec::LikelihoodRatioOverall,
                StatisticSpec::PearsonPair(1, 2),
                StatisticSpec::RiskAtLeast(3),
                StatisticSpec::PatternFrequency(ResponsePattern::parse_bits("11").unwrap()),
                StatisticSpec::PearsonPair(3, 4),
            ]
        );
        assert!(StatisticSpec::parse_list("").is_err());
        assert!(StatisticSpec::parse_list("x2,zzz").is_err());
    }

    #[test]
    fn evaluate_zero_at_exact_independence() {
        // 2x2 table sitting exactly on its independence expectations
        let t = table(2, &[("11", 25), ("10", 25), ("01", 25), ("00", 25)]);
        assert_eq!(evaluate(&StatisticSpec::PearsonOverall, &t).unwrap(), 0.0);
        assert_eq!(evaluate(&StatisticSpec::LikelihoodRatioOverall, &t).unwrap(), 0.0);
        assert_eq!(evaluate(&StatisticSpec::PearsonPair(1, 2), &t).unwrap(), 0.0);
    }

    /// Naive reimplementation used as the second-route oracle for `evaluate`.
    fn naive_evaluate(spec: &StatisticSpec, t: &PatternTable) -> f64 {
        let j = t.j();
        let n = t.n() as f64;
        let probs: Vec<f64> = (1..=j).map(|v| t.marginal_prob(v).unwrap()).collect();
        let cell_expected = |s: usize, vars: &[usize]| -> f64 {
            let mut e = n;
            for (i, &v) in vars.iter().enumerate() {
                let bit = (s >> (vars.len() - 1 - i)) & 1;
                e *= if bit == 1 { probs[v - 1] } else { 1.0 - probs[v - 1] };
            }
            e
        };
        match spec {
            StatisticSpec::PearsonOverall => {
                let vars: Vec<usize> = (1..=j).collect();
                (0..t.s())
                    .map(|s| {
                        let e = cell_expected(s, &vars);
                        if e > 0.0 {
                            let d = t.counts()[s] as f64 - e;
                            d * d / e
                        } else {
                            0.0
                        }
                    })
                    .sum()
            }
            StatisticSpec::LikelihoodRatioOverall => {
                let vars: Vec<usize> = (1..=j).collect();
                (0..t.s())
                    .map(|s| {
                        let o = t.counts()[s] as f64;
                        if o > 0.0 {
                            2.0 * o * (o / cell_expected(s, &vars)).ln()
                        } else {
                            0.0
                        }
                    })
                    .sum()
            }
            StatisticSpec::PearsonPair(a, b) => {
                let mut obs = [0.0f64; 4];
                for (s, &c) in t.counts().iter().enumerate() {
                    let ba = (s >> (j - a)) & 1;
                    let bb = (s >> (j - b)) & 1;
                    obs[(ba << 1) | bb] += c as f64;
                }
                let pa = probs[a - 1];
                let pb = probs[b - 1];
                let exp = [
                    n * (1.0 - pa) * (1.0 - pb),
                    n * (1.0 - pa) * pb,
                    n * pa * (1.0 - pb),
                    n * pa * pb,
                ];
                obs.iter()
                    .zip(exp.iter())
                    .filter(|(_, &e)| e > 0.0)
                    .map(|(&o, &e)| (o - e) * (o - e) / e)
                    .sum()
            }
            StatisticSpec::RiskAtLeast(q) => (0..t.s())
                .filter(|s| s.count_ones() as usize >= *q)
                .map(|s| t.counts()[s] as f64)
                .sum(),
            StatisticSpec::PatternFrequency(p) => t.counts()[p.encode()] as f64,
        }
    }

    #[test]
    fn evaluate_matches_naive_oracle() {
        let mut x = 7u64;
        for case in 0..30 {
            let j = 2 + (case % 3);
            let mut counts = vec![0u64; 1 << j];
            for c in counts.iter_mut() {
                x = x.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                *c = x >> 58;
            }
            if counts.iter().sum::<u64>() == 0 {
                continue;
            }
            let t = PatternTable::from_counts(j, counts).unwrap();
            let mut specs = vec![
                StatisticSpec::PearsonOverall,
                StatisticSpec::LikelihoodRatioOverall,
                StatisticSpec::PearsonPair(1, 2),
                StatisticSpec::RiskAtLeast(1),
                StatisticSpec::RiskAtLeast(j),
                StatisticSpec::PatternFrequency(ResponsePattern::decode(0, j)),
                StatisticSpec::PatternFrequency(ResponsePattern::decode((1 << j) - 1, j)),
            ];
            if j >= 3 {
                specs.push(StatisticSpec::PearsonPair(2, 3));
            }
            for spec in &specs {
                match evaluate(spec, &t) {
                    Ok(v) => assert_abs_diff_eq!(v, naive_evaluate(spec, &t), epsilon = 1e-9),
                    Err(Error::ImpossibleExpectedZero { .. }) => {}
                    Err(e) => panic!("unexpected error: {e}"),
                }
            }
        }
    }

    #[test]
    fn x2_g2_agree_near_perfect_fit() {
        // independence-shaped table with a tiny perturbation
        let t = table(
            2,
            &[("11", 2501), ("10", 2499), ("01", 2500), ("00", 2500)],
        );
        let x2 = evaluate(&StatisticSpec::PearsonOverall, &t).unwrap();
        let g2 = evaluate(&StatisticSpec::LikelihoodRatioOverall, &t).unwrap();
        assert!((x2 - g2).abs() < 0.05 * x2.max(1e-12) + 1e-9);
    }

    proptest! {
        #[test]
        fn relabeling_invariance(counts in prop::collection::vec(1u64..30, 8)) {
            let t = PatternTable::from_counts(3, counts.clone()).unwrap();
            // swap variables 1 and 3 in the data
            let mut swapped = vec![0u64; 8];
            for (s, &c) in counts.iter().enumerate() {
                let b1 = (s >> 2) & 1;
                let b2 = (s >> 1) & 1;
                let b3 = s & 1;
                swapped[(b3 << 2) | (b2 << 1) | b1] = c;
            }
            let u = PatternTable::from_counts(3, swapped).unwrap();
            let x2_t = evaluate(&StatisticSpec::PearsonOverall, &t).unwrap();
            let x2_u = evaluate(&StatisticSpec::PearsonOverall, &u).unwrap();
            prop_assert!((x2_t - x2_u).abs() < 1e-9);
            let p_t = evaluate(&StatisticSpec::PearsonPair(1, 2), &t).unwrap();
            let p_u = evaluate(&StatisticSpec::PearsonPair(3, 2), &u).unwrap();
            prop_assert!((p_t - p_u).abs() < 1e-9);
        }

        #[test]
        fn total_frequency_is_n(counts in prop::collection::vec(0u64..20, 16)) {
            prop_assume!(counts.iter().sum::<u64>() > 0);
            let t = PatternTable::from_counts(4, counts).unwrap();
            let total: f64 = (0..16)
                .map(|s| {
                    let p = ResponsePattern::decode(s, 4);
                    evaluate(&StatisticSpec::PatternFrequency(p), &t).unwrap()
                })
                .sum();
            prop_assert_eq!(total as u64, t.n());
        }
    }
}
