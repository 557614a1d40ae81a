//! Measurement scenarios, Bell expressions and behaviors.
//!
//! Setting indices are 0-based in the API. Text formats (coefficient
//! matrices aside, which carry no indices) use 1-based settings; see
//! [`Spot`] for the conversion.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Two parties with binary outcomes and `n_alice` x `n_bob` settings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Scenario {
    n_alice: usize,
    n_bob: usize,
}

impl Scenario {
    pub fn new(n_alice: usize, n_bob: usize) -> Result<Self> {
        if n_alice == 0 || n_bob == 0 {
            return Err(Error::InvalidScenario(format!(
                "both parties need at least one setting, got ({n_alice}, {n_bob})"
            )));
        }
        Ok(Self { n_alice, n_bob })
    }

    #[inline]
    pub fn n_alice(&self) -> usize {
        self.n_alice
    }

    #[inline]
    pub fn n_bob(&self) -> usize {
        self.n_bob
    }

    /// Number of setting pairs `N * M`.
    #[inline]
    pub fn n_pairs(&self) -> usize {
        self.n_alice * self.n_bob
    }

    pub(crate) fn check_setting(&self, x: usize, y: usize) -> Result<()> {
        if x >= self.n_alice || y >= self.n_bob {
            return Err(Error::SettingOutOfRange(format!(
                "({}, {}) not in 1..={} x 1..={}",
                x + 1,
                y + 1,
                self.n_alice,
                self.n_bob
            )));
        }
        Ok(())
    }

    pub(crate) fn ensure_same(&self, other: &Scenario) -> Result<()> {
        if self != other {
            return Err(Error::ScenarioMismatch { expected: self.to_string(), got: other.to_string() });
        }
        Ok(())
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.n_alice, self.n_bob)
    }
}

/// Binary measurement outcome.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Outcome {
    Minus,
    Plus,
}

impl Outcome {
    pub const ALL: [Outcome; 2] = [Outcome::Minus, Outcome::Plus];

    pub fn sign(self) -> i32 {
        match self {
            Outcome::Minus => -1,
            Outcome::Plus => 1,
        }
    }
}

/// The four joint outcomes in storage order `(--, -+, +-, ++)`.
pub const OUTCOME_PAIRS: [(Outcome, Outcome); 4] = [
    (Outcome::Minus, Outcome::Minus),
    (Outcome::Minus, Outcome::Plus),
    (Outcome::Plus, Outcome::Minus),
    (Outcome::Plus, Outcome::Plus),
];

/// Position of `(a, b)` in [`OUTCOME_PAIRS`].
#[inline]
pub fn pair_index(a: Outcome, b: Outcome) -> usize {
    2 * (a == Outcome::Plus) as usize + (b == Outcome::Plus) as usize
}

/// A spot setting `(x0, y0)`, stored 0-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Spot {
    pub x: usize,
    pub y: usize,
}

impl Spot {
    pub fn new(x: usize, y: usize) -> Self {
        Self { x, y }
    }

    /// Builds a spot from 1-based indices as they appear in text formats.
    pub fn one_based(x: usize, y: usize) -> Result<Self> {
        if x == 0 || y == 0 {
            return Err(Error::SettingOutOfRange(format!("spot ({x}, {y}) is not 1-based")));
        }
        Ok(Self { x: x - 1, y: y - 1 })
    }

    pub fn as_one_based(&self) -> [usize; 2] {
        [self.x + 1, self.y + 1]
    }

    /// Every spot of a scenario, `x` major.
    pub fn all(scenario: Scenario) -> Vec<Spot> {
        (0..scenario.n_alice()).flat_map(|x| (0..scenario.n_bob()).map(move |y| Spot { x, y })).collect()
    }
}

impl fmt::Display for Spot {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{}", self.x + 1, self.y + 1)
    }
}

impl FromStr for Spot {
    type Err = Error;

    /// Parses `"x,y"` with 1-based indices.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(',').map(str::trim).collect();
        if parts.len() != 2 {
            return Err(Error::Parse(format!("spot '{s}' must look like 'x,y'")));
        }
        let parse = |p: &str| p.parse::<usize>().map_err(|e| Error::Parse(format!("spot '{s}': {e}")));
        Spot::one_based(parse(parts[0])?, parse(parts[1])?)
    }
}

impl Serialize for Spot {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.as_one_based().serialize(s)
    }
}

impl<'de> Deserialize<'de> for Spot {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let [x, y] = <[usize; 2]>::deserialize(d)?;
        Spot::one_based(x, y).map_err(serde::de::Error::custom)
    }
}

/// Coefficients `alpha_{ij}` in {-1, 0, 1} of a correlator Bell expression.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CoefficientMatrix {
    scenario: Scenario,
    entries: Vec<i8>,
}

impl CoefficientMatrix {
    /// `entries` is row-major (Alice's setting selects the row).
    pub fn new(scenario: Scenario, entries: Vec<i8>) -> Result<Self> {
        if entries.len() != scenario.n_pairs() {
            return Err(Error::InvalidCoefficients(format!("{} entries for scenario {scenario}", entries.len())));
        }
        if let Some(bad) = entries.iter().find(|v| !(-1..=1).contains(*v)) {
            return Err(Error::InvalidCoefficients(format!("entry {bad} not in {{-1, 0, 1}}")));
        }
        if entries.iter().all(|&v| v == 0) {
            return Err(Error::InvalidCoefficients("the zero matrix is not a Bell expression".into()));
        }
        Ok(Self { scenario, entries })
    }

    pub fn from_rows(rows: &[&[i8]]) -> Result<Self> {
        let n = rows.len();
        let m = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != m) {
            return Err(Error::InvalidCoefficients("ragged rows".into()));
        }
        let scenario = Scenario::new(n, m)?;
        Self::new(scenario, rows.iter().flat_map(|r| r.iter().copied()).collect())
    }

    /// Matrix with one nonzero entry.
    pub fn unit(scenario: Scenario, x: usize, y: usize, value: i8) -> Result<Self> {
        scenario.check_setting(x, y)?;
        let mut entries = vec![0; scenario.n_pairs()];
        entries[x * scenario.n_bob() + y] = value;
        Self::new(scenario, entries)
    }

    #[inline]
    pub fn scenario(&self) -> Scenario {
        self.scenario
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> i8 {
        self.entries[x * self.scenario.n_bob() + y]
    }

    /// Row-major entries.
    pub fn entries(&self) -> &[i8] {
        &self.entries
    }

    /// Nonzero entries as `(x, y, coefficient)`.
    pub fn nonzero(&self) -> impl Iterator<Item = (usize, usize, i8)> + '_ {
        let m = self.scenario.n_bob();
        self.entries.iter().enumerate().filter(|(_, v)| **v != 0).map(move |(k, &v)| (k / m, k % m, v))
    }

    /// `sum |alpha_ij|`, the algebraic maximum of the expression.
    pub fn l1_norm(&self) -> u32 {
        self.entries.iter().map(|v| v.unsigned_abs() as u32).sum()
    }

    pub fn negated(&self) -> Self {
        Self { scenario: self.scenario, entries: self.entries.iter().map(|v| -v).collect() }
    }

    /// Applies row/column permutations and sign flips:
    /// `out[i][j] = rs[i] * cs[j] * alpha[rp[i]][cp[j]]`.
    pub fn relabeled(&self, row_perm: &[usize], col_perm: &[usize], row_sign: &[i8], col_sign: &[i8]) -> Self {
        let (n, m) = (self.scenario.n_alice(), self.scenario.n_bob());
        let mut entries = vec![0; n * m];
        for i in 0..n {
            for j in 0..m {
                entries[i * m + j] = row_sign[i] * col_sign[j] * self.get(row_perm[i], col_perm[j]);
            }
        }
        Self { scenario: self.scenario, entries }
    }
}

impl fmt::Display for CoefficientMatrix {
    /// Row-major, rows separated by `;`, entries by `,`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let m = self.scenario.n_bob();
        for (k, v) in self.entries.iter().enumerate() {
            if k > 0 {
                f.write_str(if k % m == 0 { ";" } else { "," })?;
            }
            write!(f, "{v}")?;
        }
        Ok(())
    }
}

impl FromStr for CoefficientMatrix {
    type Err = Error;

    /// Accepts `"0,1,0;-1,-1,0"`, optionally wrapped in parentheses or
    /// brackets and with spaces.
    fn from_str(s: &str) -> Result<Self> {
        let trimmed = s.trim().trim_start_matches(['(', '[']).trim_end_matches([')', ']']);
        let mut rows = Vec::new();
        for row in trimmed.split(';') {
            let parsed: std::result::Result<Vec<i8>, _> =
                row.split(',').map(|t| t.trim().replace('\u{2212}', "-").parse::<i8>()).collect();
            rows.push(parsed.map_err(|e| Error::Parse(format!("coefficient matrix '{s}': {e}")))?);
        }
        let refs: Vec<&[i8]> = rows.iter().map(|r| r.as_slice()).collect();
        Self::from_rows(&refs)
    }
}

impl Serialize for CoefficientMatrix {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for CoefficientMatrix {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Conditional outcome table `P(a, b | x, y)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Behavior<T> {
    scenario: Scenario,
    /// Indexed by `x * M + y`; inner order follows [`OUTCOME_PAIRS`].
    probs: Vec<[T; 4]>,
}

impl<T: Real> Behavior<T> {
    fn tolerance() -> T {
        T::lit(1e-12).max(T::epsilon() * T::lit(16.0))
    }

    /// Validates nonnegativity and per-setting normalization.
    pub fn new(scenario: Scenario, probs: Vec<[T; 4]>) -> Result<Self> {
        if probs.len() != scenario.n_pairs() {
            return Err(Error::InvalidBehavior(format!("{} setting pairs for {scenario}", probs.len())));
        }
        let tol = Self::tolerance();
        for (k, cell) in probs.iter().enumerate() {
            if cell.iter().any(|p| !(*p >= T::zero())) {
                return Err(Error::InvalidBehavior(format!("negative or NaN entry at pair {k}")));
            }
            let sum: T = cell.iter().copied().sum();
            if (sum - T::one()).abs() > tol {
                return Err(Error::InvalidBehavior(format!("pair {k} sums to {sum}")));
            }
        }
        Ok(Self { scenario, probs })
    }

    pub fn from_fn(scenario: Scenario, mut f: impl FnMut(usize, usize) -> [T; 4]) -> Result<Self> {
        let probs = Spot::all(scenario).into_iter().map(|s| f(s.x, s.y)).collect();
        Self::new(scenario, probs)
    }

    pub fn uniform(scenario: Scenario) -> Self {
        let q = T::lit(0.25);
        Self { scenario, probs: vec![[q; 4]; scenario.n_pairs()] }
    }

    #[inline]
    pub fn scenario(&self) -> Scenario {
        self.scenario
    }

    pub fn cell(&self, x: usize, y: usize) -> Result<[T; 4]> {
        self.scenario.check_setting(x, y)?;
        Ok(self.probs[x * self.scenario.n_bob() + y])
    }

    pub fn prob(&self, a: Outcome, b: Outcome, x: usize, y: usize) -> Result<T> {
        Ok(self.cell(x, y)?[pair_index(a, b)])
    }

    /// Convex combination `lambda * self + (1 - lambda) * other`.
    pub fn mix(&self, lambda: T, other: &Behavior<T>) -> Result<Self> {
        self.scenario.ensure_same(&other.scenario)?;
        if !(lambda >= T::zero() && lambda <= T::one()) {
            return Err(Error::Domain(format!("mixing weight {lambda} outside [0, 1]")));
        }
        let mu = T::one() - lambda;
        let probs = self
            .probs
            .iter()
            .zip(&other.probs)
            .map(|(p, q)| std::array::from_fn(|k| lambda * p[k] + mu * q[k]))
            .collect();
        Ok(Self { scenario: self.scenario, probs })
    }

    /// Checks that Alice's marginals do not depend on `y` and Bob's do not
    /// depend on `x`.
    pub fn check_no_signaling(&self, tol: T) -> Result<()> {
        let (n, m) = (self.scenario.n_alice(), self.scenario.n_bob());
        let alice_plus = |c: &[T; 4]| c[2] + c[3];
        let bob_plus = |c: &[T; 4]| c[1] + c[3];
        for x in 0..n {
            let first = alice_plus(&self.probs[x * m]);
            for y in 1..m {
                if (alice_plus(&self.probs[x * m + y]) - first).abs() > tol {
                    return Err(Error::InvalidBehavior(format!("Alice's marginal at x={} depends on y", x + 1)));
                }
            }
        }
        for y in 0..m {
            let first = bob_plus(&self.probs[y]);
            for x in 1..n {
                if (bob_plus(&self.probs[x * m + y]) - first).abs() > tol {
                    return Err(Error::InvalidBehavior(format!("Bob's marginal at y={} depends on x", y + 1)));
                }
            }
        }
        Ok(())
    }
}

/// `C(x, y) = P(--) - P(-+) - P(+-) + P(++)`.
pub fn correlator_value<T: Real>(behavior: &Behavior<T>, x: usize, y: usize) -> Result<T> {
    let c = behavior.cell(x, y)?;
    Ok(c[0] - c[1] - c[2] + c[3])
}

/// `sum_ij alpha_ij C(i, j)`.
pub fn bell_value<T: Real>(alpha: &CoefficientMatrix, behavior: &Behavior<T>) -> Result<T> {
    alpha.scenario().ensure_same(&behavior.scenario())?;
    alpha.nonzero().try_fold(T::zero(), |acc, (x, y, v)| Ok(acc + T::lit(v as f64) * correlator_value(behavior, x, y)?))
}

/// Local bound: maximum of `sum alpha_ij a_i b_j` over deterministic
/// assignments `a, b` in {-1, +1}.
///
/// Alice's 2^N assignments are enumerated and Bob answers each with his best
/// response `b_j = sign(sum_i alpha_ij a_i)`, which attains the maximum over
/// all 2^(N+M) strategies.
pub fn classical_bound(alpha: &CoefficientMatrix) -> i64 {
    let (n, m) = (alpha.scenario().n_alice(), alpha.scenario().n_bob());
    let mut best = i64::MIN;
    for mask in 0u64..(1u64 << n) {
        let value: i64 = (0..m)
            .map(|j| {
                let col: i64 = (0..n)
                    .map(|i| {
                        let a = if mask >> i & 1 == 1 { -1 } else { 1 };
                        a * alpha.get(i, j) as i64
                    })
                    .sum();
                col.abs()
            })
            .sum();
        best = best.max(value);
    }
    best
}

/// A randomness certificate `R = {alpha, B, x0, y0}`.
#[derive(Debug, Clone, PartialEq)]
pub struct Protocol<T> {
    pub alpha: CoefficientMatrix,
    pub tsirelson: T,
    pub spot: Spot,
}

impl<T: Real> Protocol<T> {
    pub fn new(alpha: CoefficientMatrix, tsirelson: T, spot: Spot) -> Result<Self> {
        alpha.scenario().check_setting(spot.x, spot.y)?;
        if !tsirelson.is_finite() {
            return Err(Error::Domain(format!("Tsirelson bound {tsirelson} is not finite")));
        }
        Ok(Self { alpha, tsirelson, spot })
    }

    /// Whether the expression itself weights the spot-setting correlator.
    /// Deployed certificates are expected to drop that term; the flag is
    /// reported but `alpha` is left untouched.
    pub fn spot_correlator_in_expression(&self) -> bool {
        self.alpha.get(self.spot.x, self.spot.y) != 0
    }
}

/// `3^(N M) - 1`, the number of nonzero coefficient matrices.
pub fn expression_count(scenario: Scenario) -> u64 {
    3u64.checked_pow(scenario.n_pairs() as u32).map_or(u64::MAX, |v| v - 1)
}

/// The expression with enumeration ordinal `ordinal` (0-based).
///
/// Ordinal `k` encodes the counter value `k + 1` in base 3, least
/// significant digit first over the row-major entries, with digit map
/// `0 -> 0`, `1 -> +1`, `2 -> -1`.
pub fn expression_at(scenario: Scenario, ordinal: u64) -> Option<CoefficientMatrix> {
    if ordinal >= expression_count(scenario) {
        return None;
    }
    let mut k = ordinal + 1;
    let entries = (0..scenario.n_pairs())
        .map(|_| {
            let d = (k % 3) as i8;
            k /= 3;
            match d {
                0 => 0,
                1 => 1,
                _ => -1,
            }
        })
        .collect();
    Some(CoefficientMatrix { scenario, entries })
}

/// Inverse of [`expression_at`].
pub fn expression_ordinal(alpha: &CoefficientMatrix) -> u64 {
    alpha.entries.iter().rev().fold(0u64, |acc, &v| {
        let d = match v {
            0 => 0,
            1 => 1,
            _ => 2,
        };
        acc * 3 + d
    }) - 1
}

/// Streams every nonzero coefficient matrix once, in ordinal order.
#[derive(Debug, Clone)]
pub struct Expressions {
    scenario: Scenario,
    next: u64,
    end: u64,
}

impl Iterator for Expressions {
    type Item = CoefficientMatrix;

    fn next(&mut self) -> Option<Self::Item> {
        if self.next >= self.end {
            return None;
        }
        let out = expression_at(self.scenario, self.next);
        self.next += 1;
        out
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let rem = (self.end - self.next) as usize;
        (rem, Some(rem))
    }
}

impl ExactSizeIterator for Expressions {}

pub fn enumerate_expressions(scenario: Scenario) -> Expressions {
    Expressions { scenario, next: 0, end: expression_count(scenario) }
}

/// Which relabelings [`canonical_key`] quotients out.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Symmetry {
    /// Only `alpha -> -alpha`.
    #[default]
    GlobalSign,
    /// Setting permutations of either party combined with per-setting
    /// outcome relabelings (sign flips of rows and columns).
    Full,
}

/// Canonical representative of a symmetry class, stored column-major.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CanonicalKey {
    scenario: Scenario,
    column_major: Vec<i8>,
}

impl CanonicalKey {
    /// The representative as a coefficient matrix.
    pub fn representative(&self) -> CoefficientMatrix {
        let (n, m) = (self.scenario.n_alice(), self.scenario.n_bob());
        let mut entries = vec![0; n * m];
        for j in 0..m {
            for i in 0..n {
                entries[i * m + j] = self.column_major[j * n + i];
            }
        }
        CoefficientMatrix { scenario: self.scenario, entries }
    }
}

fn column_major(alpha: &CoefficientMatrix) -> Vec<i8> {
    let (n, m) = (alpha.scenario().n_alice(), alpha.scenario().n_bob());
    (0..m).flat_map(|j| (0..n).map(move |i| (i, j))).map(|(i, j)| alpha.get(i, j)).collect()
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for rest in permutations(n - 1) {
        for pos in 0..=rest.len() {
            let mut p = rest.clone();
            p.insert(pos, n - 1);
            out.push(p);
        }
    }
    out
}

/// Canonical key: the lexicographically largest column-major flattening in
/// the symmetry class of `alpha`.
///
/// For [`Symmetry::Full`] rows are permuted and sign-flipped exhaustively;
/// for each such choice the column freedom is resolved greedily (flip each
/// column to its larger sign, then sort columns in decreasing order), which
/// yields the maximum over column permutations and flips.
pub fn canonical_key(alpha: &CoefficientMatrix, symmetry: Symmetry) -> CanonicalKey {
    let scenario = alpha.scenario();
    let best = match symmetry {
        Symmetry::GlobalSign => column_major(alpha).max(column_major(&alpha.negated())),
        Symmetry::Full => {
            let (n, m) = (scenario.n_alice(), scenario.n_bob());
            let identity_cols: Vec<usize> = (0..m).collect();
            let plus_cols = vec![1i8; m];
            let mut best: Option<Vec<i8>> = None;
            for perm in permutations(n) {
                for mask in 0u32..(1 << n) {
                    let signs: Vec<i8> = (0..n).map(|i| if mask >> i & 1 == 1 { -1 } else { 1 }).collect();
                    let rows = alpha.relabeled(&perm, &identity_cols, &signs, &plus_cols);
                    let mut cols: Vec<Vec<i8>> = (0..m)
                        .map(|j| {
                            let c: Vec<i8> = (0..n).map(|i| rows.get(i, j)).collect();
                            let neg: Vec<i8> = c.iter().map(|v| -v).collect();
                            c.max(neg)
                        })
                        .collect();
                    cols.sort_unstable_by(|a, b| b.cmp(a));
                    let flat: Vec<i8> = cols.concat();
                    if best.as_ref().is_none_or(|b| flat > *b) {
                        best = Some(flat);
                    }
                }
            }
            best.expect("at least one permutation")
        }
    };
    CanonicalKey { scenario, column_major: best }
}

/// Whether `alpha` is the representative of its class.
pub fn is_canonical(alpha: &CoefficientMatrix, symmetry: Symmetry) -> bool {
    canonical_key(alpha, symmetry).column_major == column_major(alpha)
}
