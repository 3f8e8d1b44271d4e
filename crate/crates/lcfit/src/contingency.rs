//! Pattern-frequency tables for binary categorical data.
//!
//! A dataset of `N` observations on `J` binary variables is stored as a dense
//! vector of frequencies over all `S = 2^J` response patterns. Patterns are
//! indexed by their binary encoding with variable 1 as the most significant
//! bit, so pattern `1011` on four variables has index `0b1011 = 11`.

use std::fmt;
use std::io::BufRead;
use std::path::Path;

use crate::error::{Error, Result};

/// Largest supported variable count; keeps `2^J` indexable.
pub const MAX_VARIABLES: usize = 24;

/// One binary response pattern `(y_1, ..., y_J)`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ResponsePattern {
    bits: Vec<u8>,
}

impl ResponsePattern {
    pub fn new(bits: Vec<u8>) -> Result<Self> {
        if bits.is_empty() || bits.len() > MAX_VARIABLES {
            return Err(Error::UnsupportedVariableCount { j: bits.len() });
        }
        for (col, &b) in bits.iter().enumerate() {
            if b > 1 {
                return Err(Error::NonBinaryValue {
                    row: 0,
                    col: col + 1,
                    value: b.to_string(),
                });
            }
        }
        Ok(Self { bits })
    }

    /// Decodes the pattern with index `index` for `j` variables.
    pub fn decode(index: usize, j: usize) -> Self {
        debug_assert!(j >= 1 && j <= MAX_VARIABLES && index < (1usize << j));
        let bits = (0..j).map(|v| ((index >> (j - 1 - v)) & 1) as u8).collect();
        Self { bits }
    }

    /// Binary encoding of the pattern, variable 1 = most significant bit.
    pub fn encode(&self) -> usize {
        self.bits
            .iter()
            .fold(0usize, |acc, &b| (acc << 1) | b as usize)
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    /// Value of variable `j` (1-based).
    pub fn get(&self, j: usize) -> u8 {
        self.bits[j - 1]
    }

    /// Number of 1-responses in the pattern.
    pub fn ones(&self) -> usize {
        self.bits.iter().filter(|&&b| b == 1).count()
    }

    /// Parses a bitstring such as `1011`.
    pub fn parse_bits(s: &str) -> Result<Self> {
        let mut bits = Vec::with_capacity(s.len());
        for (col, ch) in s.chars().enumerate() {
            match ch {
                '0' => bits.push(0),
                '1' => bits.push(1),
                other => {
                    return Err(Error::NonBinaryValue {
                        row: 0,
                        col: col + 1,
                        value: other.to_string(),
                    })
                }
            }
        }
        Self::new(bits)
    }
}

impl fmt::Display for ResponsePattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for &b in &self.bits {
            write!(f, "{b}")?;
        }
        Ok(())
    }
}

/// Observed frequencies `n_s` over all `2^J` binary response patterns.
///
/// Immutable after construction; shared freely across worker threads.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PatternTable {
    j: usize,
    counts: Vec<u64>,
    n: u64,
}

impl PatternTable {
    /// Builds a table directly from per-pattern counts (length must be `2^j`).
    pub fn from_counts(j: usize, counts: Vec<u64>) -> Result<Self> {
        if j == 0 || j > MAX_VARIABLES {
            return Err(Error::UnsupportedVariableCount { j });
        }
        if counts.len() != 1usize << j {
            return Err(Error::DimensionMismatch {
                context: format!("expected {} counts for J={}, got {}", 1usize << j, j, counts.len()),
            });
        }
        let n: u64 = counts.iter().sum();
        if n == 0 {
            return Err(Error::EmptyInput);
        }
        Ok(Self { j, counts, n })
    }

    /// Tallies raw observation rows into a pattern table.
    pub fn ingest_rows<R: AsRef<[u8]>>(rows: &[R]) -> Result<Self> {
        let first = rows.first().ok_or(Error::EmptyInput)?;
        let j = first.as_ref().len();
        if j == 0 || j > MAX_VARIABLES {
            return Err(Error::UnsupportedVariableCount { j });
        }
        let mut counts = vec![0u64; 1 << j];
        for (r, row) in rows.iter().enumerate() {
            let row = row.as_ref();
            if row.len() != j {
                return Err(Error::RaggedRows {
                    row: r + 1,
                    found: row.len(),
                    expected: j,
                });
            }
            let mut idx = 0usize;
            for (c, &v) in row.iter().enumerate() {
                if v > 1 {
                    return Err(Error::NonBinaryValue {
                        row: r + 1,
                        col: c + 1,
                        value: v.to_string(),
                    });
                }
                idx = (idx << 1) | v as usize;
            }
            counts[idx] += 1;
        }
        Self::from_counts(j, counts)
    }

    pub fn j(&self) -> usize {
        self.j
    }

    pub fn n(&self) -> u64 {
        self.n
    }

    pub fn s(&self) -> usize {
        self.counts.len()
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    /// Frequency of one pattern.
    pub fn count(&self, pattern: &ResponsePattern) -> Result<u64> {
        if pattern.len() != self.j {
            return Err(Error::DimensionMismatch {
                context: format!("pattern length {} vs table J={}", pattern.len(), self.j),
            });
        }
        Ok(self.counts[pattern.encode()])
    }

    /// Sample proportion of 1-responses on variable `j` (1-based).
    pub fn marginal_prob(&self, j: usize) -> Result<f64> {
        if j == 0 || j > self.j {
            return Err(Error::VariableOutOfRange { index: j, max: self.j });
        }
        let bit = self.j - j;
        let ones: u64 = self
            .counts
            .iter()
            .enumerate()
            .filter(|(s, _)| (s >> bit) & 1 == 1)
            .map(|(_, &c)| c)
            .sum();
        Ok(ones as f64 / self.n as f64)
    }

    fn check_subset(&self, vars: &[usize]) -> Result<()> {
        if vars.is_empty() {
            return Err(Error::BadVariableSubset);
        }
        let mut seen = vec![false; self.j + 1];
        for &v in vars {
            if v == 0 || v > self.j {
                return Err(Error::VariableOutOfRange { index: v, max: self.j });
            }
            if seen[v] {
                return Err(Error::BadVariableSubset);
            }
            seen[v] = true;
        }
        Ok(())
    }

    /// Expected frequencies under mutual independence of `vars`, computed
    /// from the table's own univariate margins. Indexed over the subset's
    /// patterns with `vars[0]` as most significant bit.
    pub fn independence_expected(&self, vars: &[usize]) -> Result<Vec<f64>> {
        self.check_subset(vars)?;
        let probs: Vec<f64> = vars
            .iter()
            .map(|&v| self.marginal_prob(v))
            .collect::<Result<_>>()?;
        let m = vars.len();
        let mut expected = Vec::with_capacity(1 << m);
        for t in 0..(1usize << m) {
            let mut e = self.n as f64;
            for (i, &p) in probs.iter().enumerate() {
                let bit = (t >> (m - 1 - i)) & 1;
                e *= if bit == 1 { p } else { 1.0 - p };
            }
            expected.push(e);
        }
        Ok(expected)
    }

    /// Marginal table over a variable subset; total count is preserved.
    pub fn collapse(&self, vars: &[usize]) -> Result<PatternTable> {
        self.check_subset(vars)?;
        let m = vars.len();
        let mut counts = vec![0u64; 1 << m];
        for (s, &c) in self.counts.iter().enumerate() {
            if c == 0 {
                continue;
            }
            let mut t = 0usize;
            for &v in vars {
                t = (t << 1) | ((s >> (self.j - v)) & 1);
            }
            counts[t] += c;
        }
        PatternTable::from_counts(m, counts)
    }

    /// Reads a row CSV: one observation per line, `J` comma-separated 0/1
    /// cells, optional header.
    pub fn read_row_csv(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        let reader = std::io::BufReader::new(file);
        let mut rows: Vec<Vec<u8>> = Vec::new();
        let mut header_skipped = false;
        for (lineno, line) in reader.lines().enumerate() {
            let line = line?;
            let trimmed = line.trim();
            if trimmed.is_empty() {
                continue;
            }
            let cells: Vec<&str> = trimmed.split(',').map(str::trim).collect();
            let parsed: std::result::Result<Vec<u8>, ()> = cells
                .iter()
                .map(|c| match *c {
                    "0" => Ok(0),
                    "1" => Ok(1),
                    _ => Err(()),
                })
                .collect();
            match parsed {
                Ok(row) => rows.push(row),
                Err(()) => {
                    // First non-numeric line is tolerated as a header.
                    if rows.is_empty() && !header_skipped {
                        header_skipped = true;
                    } else {
                        return Err(Error::Parse {
                            path: path.display().to_string(),
                            reason: format!("line {}: cells must be 0 or 1", lineno + 1),
                        });
                    }
                }
            }
        }
        if rows.is_empty() {
            return Err(Error::EmptyInput);
        }
        Self::ingest_rows(&rows).map_err(|e| match e {
            Error::RaggedRows { row, found, expected } => Error::Parse {
                path: path.display().to_string(),
                reason: format!("row {row} has {found} columns, expected {expected}"),
            },
            other => other,
        })
    }

    /// Reads a pattern-count file: lines of `<bitstring>,<count>`;
    /// unlisted patterns default to 0.
    pub fn read_pattern_counts(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        let reader = std::io::BufReader::new(file);
        let mut entries: Vec<(ResponsePattern, u64)> = Vec::new();
        let mut j: Option<usize> = None;
        for (lineno, line) in reader.lines().enumerate() {
            let line = line?;
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let parse_err = |reason: String| Error::Parse {
                path: path.display().to_string(),
                reason: format!("line {}: {}", lineno + 1, reason),
            };
            let (bits, count) = trimmed
                .split_once(',')
                .ok_or_else(|| parse_err("expected <bitstring>,<count>".into()))?;
            let pattern = ResponsePattern::parse_bits(bits.trim())
                .map_err(|e| parse_err(e.to_string()))?;
            let count: u64 = count
                .trim()
                .parse()
                .map_err(|e| parse_err(format!("bad count: {e}")))?;
            match j {
                None => j = Some(pattern.len()),
                Some(j) if j != pattern.len() => {
                    return Err(parse_err(format!(
                        "pattern length {} differs from earlier length {}",
                        pattern.len(),
                        j
                    )))
                }
                _ => {}
            }
            entries.push((pattern, count));
        }
        let j = j.ok_or(Error::EmptyInput)?;
        let mut counts = vec![0u64; 1 << j];
        for (pattern, count) in entries {
            counts[pattern.encode()] += count;
        }
        Self::from_counts(j, counts)
    }

    /// Writes the nonzero cells in pattern-count format.
    pub fn write_pattern_counts(&self, w: &mut impl std::io::Write) -> Result<()> {
        for (s, &c) in self.counts.iter().enumerate() {
            if c > 0 {
                writeln!(w, "{},{}", ResponsePattern::decode(s, self.j), c)?;
            }
        }
        Ok(())
    }
}
