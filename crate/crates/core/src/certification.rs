//! Tsirelson bounds and spot-setting probability boxes.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::entropy::{entropy_report, EntropyReport, OutcomeBounds};
use crate::error::{Error, Result};
use crate::npa::{bell_functional, probability_functional, Level, LinearFunctional, Relaxation};
use crate::scalar::Real;
use crate::scenario::{classical_bound, CoefficientMatrix, Protocol, Scenario, Spot, OUTCOME_PAIRS};
use crate::sdp::{solve, Direction, Relation, SdpProblem, SdpSolution, SdpStatus, SolverOptions};

/// Multiples of the configured tolerance accepted on numerical failure.
pub const FALLBACK_FACTORS: [f64; 2] = [1e2, 1e4];

/// How the observed Bell value enters the box SDPs.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstraintMode {
    /// `G = (1 - p) B`.
    #[default]
    Equality,
    /// `G >= (1 - p) B`. Gives a box at least as wide; not used by the
    /// standard pipeline.
    AtLeast,
}

impl ConstraintMode {
    fn relation(self) -> Relation {
        match self {
            ConstraintMode::Equality => Relation::Eq,
            ConstraintMode::AtLeast => Relation::Ge,
        }
    }
}

/// Bounds on `P(a, b | x*, y*)` over all relaxation-feasible behaviours
/// matching the noisy Bell value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbabilityBox<T> {
    pub spot: Spot,
    pub noise: T,
    pub level: Level,
    pub mode: ConstraintMode,
    /// `(1 - p) B`.
    pub target: T,
    /// Ordered `(--, -+, +-, ++)`.
    pub lower: [T; 4],
    pub upper: [T; 4],
}

impl<T: Real> ProbabilityBox<T> {
    pub fn bounds(&self) -> OutcomeBounds<T> {
        OutcomeBounds { lower: self.lower, upper: self.upper }
    }

    pub fn max_width(&self) -> T {
        (0..4).map(|k| self.upper[k] - self.lower[k]).fold(T::zero(), |m, w| m.max(w))
    }
}

/// Result of the full box-plus-entropy pipeline for one protocol and noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Certificate<T> {
    pub probability_box: ProbabilityBox<T>,
    /// Entropies of the box as computed, before the sub-classical rule.
    pub entropy: EntropyReport<T>,
    pub classical_bound: i64,
    /// `(1 - p) B` does not exceed the classical bound, so a local
    /// deterministic strategy reproduces the statistics.
    pub sub_classical: bool,
    /// Certified Shannon entropy after the sub-classical rule.
    pub shannon: T,
    /// Certified min-entropy after the sub-classical rule.
    pub min_entropy: T,
    /// Entropy of the ansatz distribution after the sub-classical rule.
    pub shannon_ansatz: Option<T>,
    pub spot_correlator_in_expression: bool,
}

/// Solver front end for one scenario and relaxation level.
#[derive(Debug, Clone)]
pub struct Certifier<T> {
    relaxation: Relaxation<T>,
    options: SolverOptions,
}

impl<T: Real> Certifier<T> {
    pub fn new(scenario: Scenario, level: Level) -> Self {
        Self::with_options(scenario, level, SolverOptions::for_scalar::<T>())
    }

    pub fn with_options(scenario: Scenario, level: Level, options: SolverOptions) -> Self {
        Self { relaxation: Relaxation::new(scenario, level), options }
    }

    pub fn relaxation(&self) -> &Relaxation<T> {
        &self.relaxation
    }

    pub fn level(&self) -> Level {
        self.relaxation.level()
    }

    pub fn scenario(&self) -> Scenario {
        self.relaxation.scenario()
    }

    pub fn options(&self) -> &SolverOptions {
        &self.options
    }

    /// Solves, falling back to looser tolerances when the solver stalls
    /// short of the configured one. Degenerate instances (targets at the
    /// edge of the quantum set) converge in value long before the
    /// certificate residual reaches the default tolerance.
    pub(crate) fn solve(&self, problem: &SdpProblem<T>, direction: Direction) -> Result<SdpSolution<T>> {
        let mut solution = solve(problem, direction, &self.options)?;
        if solution.status == SdpStatus::NumericalFailure {
            for factor in FALLBACK_FACTORS {
                if solution.meets(self.options.tolerance * factor, self.options.psd_tolerance) {
                    solution.status = SdpStatus::Optimal;
                    break;
                }
            }
        }
        Ok(solution)
    }

    fn bell(&self, alpha: &CoefficientMatrix) -> Result<LinearFunctional<T>> {
        alpha.scenario().ensure_same(&self.scenario())?;
        bell_functional(alpha, self.relaxation.structure())
    }

    /// Maximum of the Bell expression over the relaxation.
    pub fn tsirelson_solution(&self, alpha: &CoefficientMatrix) -> Result<SdpSolution<T>> {
        let problem = SdpProblem::new(self.relaxation.layout().clone(), self.bell(alpha)?);
        self.solve(&problem, Direction::Maximize)
    }

    /// The quantum bound of `alpha` at this level.
    pub fn tsirelson_bound(&self, alpha: &CoefficientMatrix) -> Result<T> {
        self.tsirelson_solution(alpha)?.optimal_value()
    }

    fn check_noise(p: T) -> Result<()> {
        if !(p >= T::zero() && p <= T::one()) {
            return Err(Error::Domain(format!("noise p = {p} outside [0, 1]")));
        }
        Ok(())
    }

    pub fn probability_box(&self, protocol: &Protocol<T>, p: T) -> Result<ProbabilityBox<T>> {
        self.probability_box_with(protocol, p, ConstraintMode::Equality)
    }

    /// Minimizes and maximizes each of the four spot probabilities subject
    /// to the noisy Bell value.
    pub fn probability_box_with(
        &self,
        protocol: &Protocol<T>,
        p: T,
        mode: ConstraintMode,
    ) -> Result<ProbabilityBox<T>> {
        Self::check_noise(p)?;
        let structure = self.relaxation.structure();
        let g = self.bell(&protocol.alpha)?;
        structure.scenario().check_setting(protocol.spot.x, protocol.spot.y)?;
        let target = (T::one() - p) * protocol.tsirelson;
        let jobs: Vec<(usize, Direction)> =
            (0..4).flat_map(|k| [(k, Direction::Minimize), (k, Direction::Maximize)]).collect();
        let values = jobs
            .par_iter()
            .map(|&(k, direction)| {
                let (a, b) = OUTCOME_PAIRS[k];
                let objective = probability_functional(a, b, protocol.spot.x, protocol.spot.y, structure)?;
                let problem = SdpProblem::new(self.relaxation.layout().clone(), objective).with_constraint(
                    g.clone(),
                    mode.relation(),
                    target,
                );
                let solution = self.solve(&problem, direction)?;
                solution.optimal_value().map_err(|e| match e {
                    Error::Solver { status, detail } => Error::Solver {
                        status,
                        detail: format!("{direction:?} P{} at spot {}: {detail}", pair_label(k), protocol.spot),
                    },
                    other => other,
                })
            })
            .collect::<Result<Vec<T>>>()?;
        let mut lower = [T::zero(); 4];
        let mut upper = [T::zero(); 4];
        for k in 0..4 {
            lower[k] = values[2 * k];
            upper[k] = values[2 * k + 1];
        }
        repair(&mut lower, &mut upper, T::lit((self.options.tolerance * 100.0).max(1e-6)))?;
        Ok(ProbabilityBox { spot: protocol.spot, noise: p, level: self.level(), mode, target, lower, upper })
    }

    /// Box, entropies and the sub-classical rule in one call.
    pub fn certify(&self, protocol: &Protocol<T>, p: T) -> Result<Certificate<T>> {
        let probability_box = self.probability_box(protocol, p)?;
        let entropy = entropy_report(&probability_box.bounds())?;
        let classical = classical_bound(&protocol.alpha);
        let slack = T::lit(1e-7f64.max(T::SOLVER_TOL));
        let sub_classical = probability_box.target <= T::lit(classical as f64) + slack;
        let (shannon, min_entropy, shannon_ansatz) = if sub_classical {
            (T::zero(), T::zero(), entropy.shannon_ansatz.map(|_| T::zero()))
        } else {
            (entropy.shannon_certified, entropy.min_entropy_certified, entropy.shannon_ansatz)
        };
        Ok(Certificate {
            probability_box,
            entropy,
            classical_bound: classical,
            sub_classical,
            shannon,
            min_entropy,
            shannon_ansatz,
            spot_correlator_in_expression: protocol.spot_correlator_in_expression(),
        })
    }
}

pub(crate) fn pair_label(k: usize) -> &'static str {
    ["--", "-+", "+-", "++"][k]
}

/// Clamps solver output into a consistent box: `0 <= l <= u <= 1`,
/// `sum l <= 1 <= sum u`. Larger violations than `tol` mean the solves
/// disagree with each other.
fn repair<T: Real>(lower: &mut [T; 4], upper: &mut [T; 4], tol: T) -> Result<()> {
    let inconsistent = |what: String| Error::solver(SdpStatus::NumericalFailure, what);
    for k in 0..4 {
        if lower[k] > upper[k] + tol {
            return Err(inconsistent(format!("lower {} above upper {} for P{}", lower[k], upper[k], pair_label(k))));
        }
        lower[k] = lower[k].max(T::zero()).min(T::one());
        upper[k] = upper[k].max(T::zero()).min(T::one());
        if lower[k] > upper[k] {
            let mid = (lower[k] + upper[k]) / T::lit(2.0);
            lower[k] = mid;
            upper[k] = mid;
        }
    }
    let sl: T = lower.iter().copied().sum();
    if sl > T::one() {
        if sl > T::one() + tol {
            return Err(inconsistent(format!("lower bounds sum to {sl}")));
        }
        let excess = sl - T::one();
        for l in lower.iter_mut() {
            *l = *l - excess * *l / sl;
        }
    }
    let su: T = upper.iter().copied().sum();
    if su < T::one() {
        if su < T::one() - tol {
            return Err(inconsistent(format!("upper bounds sum to {su}")));
        }
        let deficit = T::one() - su;
        let room: T = upper.iter().map(|&u| T::one() - u).sum();
        for u in upper.iter_mut() {
            *u = *u + deficit * (T::one() - *u) / room;
        }
    }
    Ok(())
}

/// Quantum bound of `alpha` at `level` with default solver settings.
pub fn tsirelson_bound<T: Real>(alpha: &CoefficientMatrix, level: Level) -> Result<T> {
    Certifier::new(alpha.scenario(), level).tsirelson_bound(alpha)
}

/// Probability box at `level` with default solver settings.
pub fn probability_box<T: Real>(protocol: &Protocol<T>, p: T, level: Level) -> Result<ProbabilityBox<T>> {
    Certifier::new(protocol.alpha.scenario(), level).probability_box(protocol, p)
}
