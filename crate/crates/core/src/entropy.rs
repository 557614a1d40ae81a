//! Entropies of the four spot-setting outcomes and their certification
//! over a box of outcome bounds.
//!
//! The feasible set is the polytope `{P : l <= P <= u, sum P = 1}`. Shannon
//! entropy is concave, so its minimum sits on a vertex; vertices have at
//! least three coordinates on a bound, which gives at most `4 * 2^3`
//! candidates. Entropies are in bits.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{xlog2x, Real};

/// Feasibility slack for numerically computed bounds.
fn slack<T: Real>() -> T {
    T::lit(1e-9).max(T::epsilon() * T::lit(64.0))
}

/// Distribution of the joint outcome, ordered `(--, -+, +-, ++)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Distribution4<T> {
    probs: [T; 4],
}

impl<T: Real> Distribution4<T> {
    pub fn new(probs: [T; 4]) -> Result<Self> {
        let tol = T::lit(1e-12).max(T::epsilon() * T::lit(16.0));
        if probs.iter().any(|p| !(*p >= T::zero())) {
            return Err(Error::InvalidDistribution(format!("negative entry in {probs:?}")));
        }
        let sum: T = probs.iter().copied().sum();
        if (sum - T::one()).abs() > tol {
            return Err(Error::InvalidDistribution(format!("entries sum to {sum}")));
        }
        Ok(Self { probs })
    }

    /// Clamps rounding-level negatives and renormalizes.
    fn from_vertex(mut probs: [T; 4]) -> Self {
        for p in probs.iter_mut() {
            *p = p.max(T::zero());
        }
        let sum: T = probs.iter().copied().sum();
        Self { probs: probs.map(|p| p / sum) }
    }

    pub fn uniform() -> Self {
        Self { probs: [T::lit(0.25); 4] }
    }

    pub fn probs(&self) -> [T; 4] {
        self.probs
    }
}

/// Shannon entropy `-sum p log2 p`.
pub fn shannon<T: Real>(p: &Distribution4<T>) -> T {
    let h = -p.probs.iter().map(|&x| xlog2x(x)).sum::<T>();
    h.max(T::zero())
}

/// Min-entropy `-log2 max p`.
pub fn min_entropy<T: Real>(p: &Distribution4<T>) -> T {
    let max = p.probs.iter().fold(T::zero(), |m, &x| m.max(x));
    (-max.log2()).max(T::zero())
}

/// Binary entropy `h(u)`, a lower bound on `H(P)` for every distribution
/// whose entries are all at most `u`. Defined for `1/4 <= u <= 1`.
pub fn analytic_lower_bound<T: Real>(u: T) -> Result<T> {
    if !(u >= T::lit(0.25) - slack::<T>() && u <= T::one() + slack::<T>()) {
        return Err(Error::Domain(format!("u = {u} outside [1/4, 1]")));
    }
    let u = u.min(T::one());
    Ok((-xlog2x(u) - xlog2x(T::one() - u)).max(T::zero()))
}

/// Lower and upper bounds on the four outcome probabilities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OutcomeBounds<T> {
    pub lower: [T; 4],
    pub upper: [T; 4],
}

impl<T: Real> OutcomeBounds<T> {
    pub fn new(lower: [T; 4], upper: [T; 4]) -> Result<Self> {
        let tol = slack::<T>();
        for k in 0..4 {
            let (l, u) = (lower[k], upper[k]);
            if !(l >= -tol && u <= T::one() + tol && l <= u + tol) {
                return Err(Error::EmptyPolytope(format!("bounds [{l}, {u}] for outcome {k}")));
            }
        }
        let b = Self { lower, upper };
        b.check_nonempty()?;
        Ok(b)
    }

    /// The whole probability simplex.
    pub fn unconstrained() -> Self {
        Self { lower: [T::zero(); 4], upper: [T::one(); 4] }
    }

    pub fn point(p: &Distribution4<T>) -> Self {
        Self { lower: p.probs, upper: p.probs }
    }

    pub fn max_upper(&self) -> T {
        self.upper.iter().fold(T::zero(), |m, &u| m.max(u))
    }

    pub fn contains(&self, p: &Distribution4<T>, tol: T) -> bool {
        (0..4).all(|k| p.probs[k] >= self.lower[k] - tol && p.probs[k] <= self.upper[k] + tol)
    }

    fn check_nonempty(&self) -> Result<()> {
        let tol = slack::<T>();
        let sl: T = self.lower.iter().copied().sum();
        let su: T = self.upper.iter().copied().sum();
        if sl > T::one() + tol || su < T::one() - tol {
            return Err(Error::EmptyPolytope(format!("sum of lower bounds {sl}, sum of upper bounds {su}")));
        }
        Ok(())
    }
}

/// Vertices of the bounded simplex: one free coordinate, the others pinned.
fn vertices<T: Real>(b: &OutcomeBounds<T>) -> Vec<[T; 4]> {
    let tol = slack::<T>();
    let mut out = Vec::with_capacity(32);
    for free in 0..4 {
        for mask in 0u8..8 {
            let mut p = [T::zero(); 4];
            let mut bit = 0;
            for k in (0..4).filter(|&k| k != free) {
                p[k] = if mask >> bit & 1 == 1 { b.upper[k] } else { b.lower[k] };
                bit += 1;
            }
            let rest: T = p.iter().copied().sum();
            p[free] = T::one() - rest;
            if p[free] >= b.lower[free] - tol && p[free] <= b.upper[free] + tol && p[free] >= -tol {
                out.push(p);
            }
        }
    }
    out
}

/// Exact minimum of the Shannon entropy over the box, with a minimizing vertex.
pub fn certified_shannon_min<T: Real>(b: &OutcomeBounds<T>) -> Result<(T, Distribution4<T>)> {
    b.check_nonempty()?;
    vertices(b)
        .into_iter()
        .map(|v| {
            let d = Distribution4::from_vertex(v);
            (shannon(&d), d)
        })
        .min_by(|x, y| x.0.partial_cmp(&y.0).unwrap_or(std::cmp::Ordering::Equal))
        .ok_or_else(|| Error::EmptyPolytope("no feasible vertex".into()))
}

/// `-log2 g` with `g` the largest single-outcome probability in the box.
pub fn certified_min_entropy<T: Real>(b: &OutcomeBounds<T>) -> Result<T> {
    b.check_nonempty()?;
    let sl: T = b.lower.iter().copied().sum();
    let g = (0..4).map(|k| b.upper[k].min(T::one() - (sl - b.lower[k]))).fold(T::zero(), |m, v| m.max(v)).min(T::one());
    Ok((-g.log2()).max(T::zero()))
}

/// The ansatz `[l, l, u, 1 - l - l - u]` and where its roles landed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ansatz<T> {
    pub distribution: Distribution4<T>,
    /// Outcome receiving each role, in role order (lower, lower, upper,
    /// residual). `[0, 1, 2, 3]` is the unpermuted form.
    pub permutation: [usize; 4],
    pub entropy: T,
}

fn role_orders() -> Vec<[usize; 4]> {
    let mut out = Vec::new();
    for a in 0..4 {
        for b in 0..4 {
            for c in 0..4 {
                for d in 0..4 {
                    let p = [a, b, c, d];
                    let distinct = (0..4).all(|i| (0..i).all(|j| p[i] != p[j]));
                    // the two lower-bound roles are interchangeable
                    if distinct && a < b {
                        out.push(p);
                    }
                }
            }
        }
    }
    out
}

/// Ansatz distribution: two outcomes at their lower bound, one at its upper
/// bound, the last taking the remaining mass. All role assignments are
/// tried; among those inside the box the most entropic one wins, ties going
/// to the unpermuted form.
pub fn ansatz_distribution<T: Real>(b: &OutcomeBounds<T>) -> Result<Ansatz<T>> {
    let tol = slack::<T>();
    let mut best: Option<Ansatz<T>> = None;
    for perm in role_orders() {
        let mut p = [T::zero(); 4];
        p[perm[0]] = b.lower[perm[0]];
        p[perm[1]] = b.lower[perm[1]];
        p[perm[2]] = b.upper[perm[2]];
        let r = perm[3];
        p[r] = T::one() - p[perm[0]] - p[perm[1]] - p[perm[2]];
        if !(p[r] >= b.lower[r] - tol && p[r] <= b.upper[r] + tol && p[r] >= -tol) {
            continue;
        }
        let distribution = Distribution4::from_vertex(p);
        let entropy = shannon(&distribution);
        if best.as_ref().is_none_or(|a| entropy > a.entropy + T::lit(1e-12)) {
            best = Some(Ansatz { distribution, permutation: perm, entropy });
        }
    }
    best.ok_or_else(|| Error::AnsatzInapplicable(format!("no role assignment fits bounds {b:?}")))
}

/// Everything the entropy stage reports for one box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EntropyReport<T> {
    /// Minimum Shannon entropy over the box.
    pub shannon_certified: T,
    /// Minimum min-entropy over the box.
    pub min_entropy_certified: T,
    /// Entropy of the ansatz distribution, when it fits the box.
    pub shannon_ansatz: Option<T>,
    pub ansatz_permutation: Option<[usize; 4]>,
    /// Binary-entropy bound evaluated at `u_max`.
    pub analytic_bound: T,
    pub u_max: T,
    pub witness: Distribution4<T>,
}

impl<T: Real> EntropyReport<T> {
    /// `H(P_H) - H_certified`, the ansatz overestimate.
    pub fn ansatz_gap(&self) -> Option<T> {
        self.shannon_ansatz.map(|h| h - self.shannon_certified)
    }
}

pub fn entropy_report<T: Real>(b: &OutcomeBounds<T>) -> Result<EntropyReport<T>> {
    let (shannon_certified, witness) = certified_shannon_min(b)?;
    let min_entropy_certified = certified_min_entropy(b)?;
    let ansatz = ansatz_distribution(b).ok();
    let u_max = b.max_upper();
    Ok(EntropyReport {
        shannon_certified,
        min_entropy_certified,
        shannon_ansatz: ansatz.map(|a| a.entropy),
        ansatz_permutation: ansatz.map(|a| a.permutation),
        analytic_bound: analytic_lower_bound(u_max)?,
        u_max,
        witness,
    })
}
