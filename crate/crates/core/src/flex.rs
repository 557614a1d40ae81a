//! Flex: how far each setting's joint distribution can stretch while the
//! Bell value stays above the noisy target.
//!
//! For every setting pair the four largest attainable probabilities are
//! summed; a rigid (self-testing) point gives sums of 1, so the average
//! over all settings is 1 exactly when the behaviour is pinned down.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::certification::{pair_label, Certifier};
use crate::error::{Error, Result};
use crate::npa::{probability_functional, Level};
use crate::scalar::Real;
use crate::scenario::{CoefficientMatrix, Spot, OUTCOME_PAIRS};
use crate::sdp::{Direction, Relation, SdpProblem};

/// Flex values within this distance of 1 count as box-certifiable.
pub const FLEX_RIGIDITY_TOL: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlexReport<T> {
    pub flex: T,
    /// Largest attainable `P(a, b | x, y)`, indexed `x * M + y`, inner order
    /// `(--, -+, +-, ++)`.
    pub maxima: Vec<[T; 4]>,
    pub n_bob: usize,
    pub noise: T,
    pub level: Level,
    pub bound: T,
    /// `(1 - p) B`.
    pub target: T,
    pub box_certifiable: bool,
}

impl<T: Real> FlexReport<T> {
    pub fn maxima_at(&self, spot: Spot) -> [T; 4] {
        self.maxima[spot.x * self.n_bob + spot.y]
    }

    /// Sum of the four maxima for one setting pair.
    pub fn setting_sum(&self, spot: Spot) -> T {
        self.maxima_at(spot).iter().copied().sum()
    }
}

impl<T: Real> Certifier<T> {
    /// Flex of `alpha` with quantum value `bound` at noise `p`.
    pub fn flex(&self, alpha: &CoefficientMatrix, bound: T, p: T) -> Result<FlexReport<T>> {
        if !(p >= T::zero() && p <= T::one()) {
            return Err(Error::Domain(format!("noise p = {p} outside [0, 1]")));
        }
        let scenario = self.scenario();
        alpha.scenario().ensure_same(&scenario)?;
        let structure = self.relaxation().structure();
        let g = crate::npa::bell_functional(alpha, structure)?;
        let target = (T::one() - p) * bound;
        let jobs: Vec<(Spot, usize)> =
            Spot::all(scenario).into_iter().flat_map(|s| (0..4).map(move |k| (s, k))).collect();
        let values = jobs
            .par_iter()
            .map(|&(spot, k)| {
                let (a, b) = OUTCOME_PAIRS[k];
                let objective = probability_functional(a, b, spot.x, spot.y, structure)?;
                let problem = SdpProblem::new(self.relaxation().layout().clone(), objective).with_constraint(
                    g.clone(),
                    Relation::Ge,
                    target,
                );
                let value = self.solve(&problem, Direction::Maximize)?.optimal_value().map_err(|e| match e {
                    Error::Solver { status, detail } => {
                        Error::Solver { status, detail: format!("max P{} at setting {spot}: {detail}", pair_label(k)) }
                    }
                    other => other,
                })?;
                Ok(value.max(T::zero()).min(T::one()))
            })
            .collect::<Result<Vec<T>>>()?;
        let maxima: Vec<[T; 4]> = values.chunks(4).map(|c| [c[0], c[1], c[2], c[3]]).collect();
        let total: T = values.iter().copied().sum();
        let flex = total / T::lit(scenario.n_pairs() as f64);
        Ok(FlexReport {
            flex,
            maxima,
            n_bob: scenario.n_bob(),
            noise: p,
            level: self.level(),
            bound,
            target,
            box_certifiable: flex <= T::one() + T::lit(FLEX_RIGIDITY_TOL),
        })
    }
}

/// Flex at `level` with default solver settings.
pub fn flex<T: Real>(alpha: &CoefficientMatrix, bound: T, p: T, level: Level) -> Result<FlexReport<T>> {
    Certifier::new(alpha.scenario(), level).flex(alpha, bound, p)
}
