//! NPA moment-matrix relaxations for two parties with binary outcomes.
//!
//! Operators are the `+1` projectors `A_x` and `B_y`. Words are reduced by
//! idempotence (`A_x A_x = A_x`) and by moving Bob's letters after Alice's;
//! the order of letters within one party is kept because projectors of
//! different settings need not commute. All moments are real, so a word and
//! its adjoint (reversal) share one variable.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::scenario::{CoefficientMatrix, Outcome, Scenario};
use crate::sdp::{Cell, MomentLayout};

/// Hierarchy level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[derive(Default)]
pub enum Level {
    /// `{1} ∪ {A_x} ∪ {B_y}`
    One,
    /// Level 1 plus every product `A_x B_y` ("almost quantum").
    #[default]
    OnePlusAB,
    /// Every reduced word of length at most two.
    Two,
}

impl Level {
    pub const ALL: [Level; 3] = [Level::One, Level::OnePlusAB, Level::Two];
}


impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Level::One => "1",
            Level::OnePlusAB => "1+AB",
            Level::Two => "2",
        })
    }
}

impl FromStr for Level {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().replace(' ', "").as_str() {
            "1" => Ok(Level::One),
            "1+AB" => Ok(Level::OnePlusAB),
            "2" => Ok(Level::Two),
            _ => Err(Error::UnsupportedLevel(s.to_string())),
        }
    }
}

impl Serialize for Level {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Level {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

/// A reduced operator word: Alice's letters followed by Bob's (0-based settings).
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct Word {
    alice: Vec<u8>,
    bob: Vec<u8>,
}

impl Word {
    pub fn identity() -> Self {
        Self::default()
    }

    pub fn a(x: usize) -> Self {
        Self { alice: vec![x as u8], bob: vec![] }
    }

    pub fn b(y: usize) -> Self {
        Self { alice: vec![], bob: vec![y as u8] }
    }

    pub fn new(alice: Vec<u8>, bob: Vec<u8>) -> Self {
        Self { alice, bob }.reduced()
    }

    pub fn alice(&self) -> &[u8] {
        &self.alice
    }

    pub fn bob(&self) -> &[u8] {
        &self.bob
    }

    pub fn is_identity(&self) -> bool {
        self.alice.is_empty() && self.bob.is_empty()
    }

    pub fn len(&self) -> usize {
        self.alice.len() + self.bob.len()
    }

    fn reduced(mut self) -> Self {
        self.alice.dedup();
        self.bob.dedup();
        self
    }

    /// `self * rhs`, reduced.
    pub fn times(&self, rhs: &Word) -> Word {
        let alice = self.alice.iter().chain(&rhs.alice).copied().collect();
        let bob = self.bob.iter().chain(&rhs.bob).copied().collect();
        Word { alice, bob }.reduced()
    }

    pub fn adjoint(&self) -> Word {
        Word { alice: self.alice.iter().rev().copied().collect(), bob: self.bob.iter().rev().copied().collect() }
    }

    /// Representative shared by a word and its adjoint.
    pub fn canonical(&self) -> Word {
        let adj = self.adjoint();
        if adj < *self {
            adj
        } else {
            self.clone()
        }
    }
}

impl fmt::Display for Word {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_identity() {
            return f.write_str("1");
        }
        for x in &self.alice {
            write!(f, "A{}", x + 1)?;
        }
        for y in &self.bob {
            write!(f, "B{}", y + 1)?;
        }
        Ok(())
    }
}

/// Ordered generating set of the moment matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct MonomialBasis {
    scenario: Scenario,
    level: Level,
    words: Vec<Word>,
}

impl MonomialBasis {
    pub fn scenario(&self) -> Scenario {
        self.scenario
    }

    pub fn level(&self) -> Level {
        self.level
    }

    pub fn words(&self) -> &[Word] {
        &self.words
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }
}

/// Basis order: identity, Alice's words (lexicographic), Bob's words, then
/// mixed words `A_x B_y`.
pub fn build_basis(scenario: Scenario, level: Level) -> MonomialBasis {
    let (n, m) = (scenario.n_alice(), scenario.n_bob());
    let mut words = vec![Word::identity()];
    let pairs = |k: usize| (0..k).flat_map(move |i| (0..k).filter(move |&j| j != i).map(move |j| (i, j)));
    let mut alice: Vec<Word> = (0..n).map(Word::a).collect();
    let mut bob: Vec<Word> = (0..m).map(Word::b).collect();
    if level == Level::Two {
        alice.extend(pairs(n).map(|(i, j)| Word::new(vec![i as u8, j as u8], vec![])));
        bob.extend(pairs(m).map(|(i, j)| Word::new(vec![], vec![i as u8, j as u8])));
    }
    alice.sort();
    bob.sort();
    words.extend(alice);
    words.extend(bob);
    if level != Level::One {
        for x in 0..n {
            for y in 0..m {
                words.push(Word::new(vec![x as u8], vec![y as u8]));
            }
        }
    }
    MonomialBasis { scenario, level, words }
}

/// Entry of the symbolic moment matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Entry {
    /// The normalization entry `<1> = 1`.
    One,
    Var(usize),
}

/// Identification of moment-matrix entries with free moment variables.
#[derive(Debug, Clone)]
pub struct MomentStructure {
    scenario: Scenario,
    level: Level,
    basis: Vec<Word>,
    variables: Vec<Word>,
    index: HashMap<Word, usize>,
    entries: Vec<Entry>,
}

impl MomentStructure {
    pub fn scenario(&self) -> Scenario {
        self.scenario
    }

    pub fn level(&self) -> Level {
        self.level
    }

    pub fn dimension(&self) -> usize {
        self.basis.len()
    }

    pub fn basis(&self) -> &[Word] {
        &self.basis
    }

    pub fn n_variables(&self) -> usize {
        self.variables.len()
    }

    /// Canonical word of variable `id`.
    pub fn variable_word(&self, id: usize) -> &Word {
        &self.variables[id]
    }

    pub fn entry(&self, i: usize, j: usize) -> Entry {
        self.entries[i * self.dimension() + j]
    }

    /// Variable id of a word, after reduction and adjoint canonicalization.
    pub fn variable_of(&self, word: &Word) -> Option<usize> {
        self.index.get(&word.canonical()).copied()
    }

    fn require(&self, word: &Word) -> Result<usize> {
        self.variable_of(word)
            .ok_or_else(|| Error::UnsupportedLevel(format!("moment <{word}> is not available at level {}", self.level)))
    }

    /// Numeric layout consumed by the SDP engine.
    pub fn layout<T: Real>(&self) -> MomentLayout<T> {
        let cells = self
            .entries
            .iter()
            .map(|e| match e {
                Entry::One => Cell::Fixed(T::one()),
                Entry::Var(v) => Cell::Var(*v),
            })
            .collect();
        MomentLayout::new(self.dimension(), self.n_variables(), cells).expect("structure is consistent")
    }

    /// Moment assignment `id -> f(word)`, e.g. from an explicit quantum model.
    pub fn assignment<T>(&self, mut f: impl FnMut(&Word) -> T) -> Vec<T> {
        self.variables.iter().map(f).collect()
    }
}

/// Builds the entry identification `Gamma_ij = <s_i^† s_j>`.
pub fn build_moment_structure(basis: &MonomialBasis) -> MomentStructure {
    let d = basis.len();
    let mut variables = Vec::new();
    let mut index = HashMap::new();
    let mut entries = vec![Entry::One; d * d];
    for i in 0..d {
        for j in i..d {
            let word = basis.words[i].adjoint().times(&basis.words[j]).canonical();
            let entry = if word.is_identity() {
                Entry::One
            } else {
                let next = variables.len();
                let id = *index.entry(word.clone()).or_insert_with(|| {
                    variables.push(word.clone());
                    next
                });
                Entry::Var(id)
            };
            entries[i * d + j] = entry;
            entries[j * d + i] = entry;
        }
    }
    MomentStructure {
        scenario: basis.scenario,
        level: basis.level,
        basis: basis.words.clone(),
        variables,
        index,
        entries,
    }
}

/// Basis, structure and layout for one scenario and level, shared read-only.
#[derive(Debug, Clone)]
pub struct Relaxation<T> {
    structure: Arc<MomentStructure>,
    layout: Arc<MomentLayout<T>>,
}

impl<T: Real> Relaxation<T> {
    pub fn new(scenario: Scenario, level: Level) -> Self {
        let structure = build_moment_structure(&build_basis(scenario, level));
        let layout = Arc::new(structure.layout());
        Self { structure: Arc::new(structure), layout }
    }

    pub fn structure(&self) -> &MomentStructure {
        &self.structure
    }

    pub fn layout(&self) -> &Arc<MomentLayout<T>> {
        &self.layout
    }

    pub fn level(&self) -> Level {
        self.structure.level
    }

    pub fn scenario(&self) -> Scenario {
        self.structure.scenario
    }
}

/// `constant + sum_k terms[k] * m_k` over moment variables.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LinearFunctional<T> {
    pub terms: BTreeMap<usize, T>,
    pub constant: T,
}

impl<T: Real> LinearFunctional<T> {
    pub fn constant(c: T) -> Self {
        Self { terms: BTreeMap::new(), constant: c }
    }

    pub fn variable(id: usize, coef: T) -> Self {
        let mut f = Self::constant(T::zero());
        f.add_term(id, coef);
        f
    }

    pub fn add_term(&mut self, id: usize, coef: T) {
        let slot = self.terms.entry(id).or_insert(T::zero());
        *slot = *slot + coef;
        if *slot == T::zero() {
            self.terms.remove(&id);
        }
    }

    pub fn plus(mut self, other: &LinearFunctional<T>) -> Self {
        for (&k, &v) in &other.terms {
            self.add_term(k, v);
        }
        self.constant = self.constant + other.constant;
        self
    }

    pub fn scaled(&self, c: T) -> Self {
        let mut out = Self::constant(self.constant * c);
        for (&k, &v) in &self.terms {
            out.add_term(k, v * c);
        }
        out
    }

    pub fn evaluate(&self, moments: &[T]) -> T {
        self.terms.iter().fold(self.constant, |acc, (&k, &v)| acc + v * moments[k])
    }

    pub fn max_variable(&self) -> Option<usize> {
        self.terms.keys().next_back().copied()
    }
}

/// `sum_ij alpha_ij (4 <A_i B_j> - 2 <A_i> - 2 <B_j> + 1)`.
pub fn bell_functional<T: Real>(alpha: &CoefficientMatrix, structure: &MomentStructure) -> Result<LinearFunctional<T>> {
    alpha.scenario().ensure_same(&structure.scenario)?;
    let mut f = LinearFunctional::constant(T::zero());
    for (x, y, c) in alpha.nonzero() {
        let c = T::lit(c as f64);
        let ab = structure.require(&Word::new(vec![x as u8], vec![y as u8]))?;
        f.add_term(ab, T::lit(4.0) * c);
        f.add_term(structure.require(&Word::a(x))?, T::lit(-2.0) * c);
        f.add_term(structure.require(&Word::b(y))?, T::lit(-2.0) * c);
        f.constant = f.constant + c;
    }
    Ok(f)
}

/// Joint probability `P(a, b | x, y)` as an affine function of moments.
pub fn probability_functional<T: Real>(
    a: Outcome,
    b: Outcome,
    x: usize,
    y: usize,
    structure: &MomentStructure,
) -> Result<LinearFunctional<T>> {
    structure.scenario.check_setting(x, y)?;
    let ma = structure.require(&Word::a(x))?;
    let mb = structure.require(&Word::b(y))?;
    let mab = structure.require(&Word::new(vec![x as u8], vec![y as u8]))?;
    let one = T::one();
    let mut f = LinearFunctional::constant(T::zero());
    match (a, b) {
        (Outcome::Plus, Outcome::Plus) => f.add_term(mab, one),
        (Outcome::Plus, Outcome::Minus) => {
            f.add_term(ma, one);
            f.add_term(mab, -one);
        }
        (Outcome::Minus, Outcome::Plus) => {
            f.add_term(mb, one);
            f.add_term(mab, -one);
        }
        (Outcome::Minus, Outcome::Minus) => {
            f.constant = one;
            f.add_term(ma, -one);
            f.add_term(mb, -one);
            f.add_term(mab, one);
        }
    }
    Ok(f)
}
