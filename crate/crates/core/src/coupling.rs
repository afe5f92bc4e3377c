//! Wireless control plants, the profile-dependent channel, and the success
//! thresholds that turn the Lyapunov decay requirement into a target set.

use std::collections::BTreeSet;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const SYMMETRY_TOL: f64 = 1e-9;
const DISTRIBUTION_TOL: f64 = 1e-9;
const RESIDUAL_TOL: f64 = 1e-10;
const ROUNDING_TOL: f64 = 1e-12;

fn is_symmetric(m: &DMatrix<f64>) -> bool {
    let scale = m.amax().max(1.0);
    m.is_square() && (m - m.transpose()).amax() <= SYMMETRY_TOL * scale
}

fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

fn extreme_eigenvalues(m: &DMatrix<f64>) -> (f64, f64) {
    let eig = SymmetricEigen::new(symmetrize(m));
    (eig.eigenvalues.min(), eig.eigenvalues.max())
}

/// One plant of the wireless control system.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantModel {
    pub a_closed: DMatrix<f64>,
    pub a_open: DMatrix<f64>,
    /// Lyapunov weight, symmetric positive definite.
    pub q: DMatrix<f64>,
    pub rho: f64,
    pub xi_cov: DMatrix<f64>,
}

impl PlantModel {
    pub fn new(
        a_closed: DMatrix<f64>,
        a_open: DMatrix<f64>,
        q: DMatrix<f64>,
        rho: f64,
        xi_cov: DMatrix<f64>,
    ) -> Result<Self> {
        let plant = PlantModel {
            a_closed,
            a_open,
            q,
            rho,
            xi_cov,
        };
        plant.validate("plant")?;
        Ok(plant)
    }

    pub fn dim(&self) -> usize {
        self.a_closed.nrows()
    }

    pub fn validate(&self, path: &str) -> Result<()> {
        let n = self.a_closed.nrows();
        for (name, m) in [
            ("a_closed", &self.a_closed),
            ("a_open", &self.a_open),
            ("q", &self.q),
            ("xi_cov", &self.xi_cov),
        ] {
            if m.nrows() != n || m.ncols() != n || n == 0 {
                return Err(Error::validation(
                    format!("{path}.{name}"),
                    format!("expected a {n}×{n} matrix, got {}×{}", m.nrows(), m.ncols()),
                ));
            }
            if m.iter().any(|v| !v.is_finite()) {
                return Err(Error::validation(format!("{path}.{name}"), "non-finite entry"));
            }
        }
        if !(self.rho > 0.0 && self.rho < 1.0) {
            return Err(Error::validation(format!("{path}.rho"), "rho must lie in (0,1)"));
        }
        if !is_symmetric(&self.q) || extreme_eigenvalues(&self.q).0 <= 0.0 {
            return Err(Error::validation(
                format!("{path}.q"),
                "q must be symmetric positive definite",
            ));
        }
        if !is_symmetric(&self.xi_cov)
            || extreme_eigenvalues(&self.xi_cov).0 < -SYMMETRY_TOL * self.xi_cov.amax().max(1.0)
        {
            return Err(Error::validation(
                format!("{path}.xi_cov"),
                "xi_cov must be symmetric positive semidefinite",
            ));
        }
        Ok(())
    }

    pub fn lyapunov(&self, x: &DVector<f64>) -> f64 {
        (x.transpose() * &self.q * x)[(0, 0)]
    }

    /// `Tr(Q Ξ)`.
    pub fn noise_floor(&self) -> f64 {
        (&self.q * &self.xi_cov).trace()
    }

    /// `A_o^T Q A_o - ρ Q`.
    pub fn excess_matrix(&self) -> DMatrix<f64> {
        let open = self.a_open.transpose() * &self.q * &self.a_open;
        symmetrize(&(open - &self.q * self.rho))
    }

    /// `A_o^T Q A_o - A_c^T Q A_c`.
    pub fn gain_matrix(&self) -> DMatrix<f64> {
        let open = self.a_open.transpose() * &self.q * &self.a_open;
        let closed = self.a_closed.transpose() * &self.q * &self.a_closed;
        symmetrize(&(open - closed))
    }
}

/// Normalizes a definite Lyapunov weight to positive definite.
///
/// The threshold quotient is unchanged by `Q ↦ -Q`, so a negative definite
/// solution of a Stein recipe is usable after negation. Returns the weight and
/// whether it was negated.
pub fn canonical_weight(q: &DMatrix<f64>) -> Result<(DMatrix<f64>, bool)> {
    if !is_symmetric(q) {
        return Err(Error::validation("q", "weight is not symmetric"));
    }
    let q = symmetrize(q);
    let (lo, hi) = extreme_eigenvalues(&q);
    if lo > 0.0 {
        Ok((q, false))
    } else if hi < 0.0 {
        Ok((-q, true))
    } else {
        Err(Error::validation("q", "weight is indefinite"))
    }
}

/// Solves `A^T Q A - c Q = R` through `(A^T ⊗ A^T - c I) vec(Q) = vec(R)`.
pub fn solve_stein(a: &DMatrix<f64>, c: f64, r: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    if !a.is_square() || r.nrows() != n || r.ncols() != n {
        return Err(Error::Dimension(format!(
            "Stein equation with A {}×{} and R {}×{}",
            a.nrows(),
            a.ncols(),
            r.nrows(),
            r.ncols()
        )));
    }
    let at = a.transpose();
    let op = at.kronecker(&at) - DMatrix::identity(n * n, n * n) * c;
    let scale = op.amax().max(f64::MIN_POSITIVE);
    let lu = op.full_piv_lu();
    let min_pivot = lu.u().diagonal().iter().map(|v| v.abs()).fold(f64::INFINITY, f64::min);
    if min_pivot <= 1e-12 * scale {
        return Err(Error::Numeric("Stein equation has no unique solution".into()));
    }
    let rhs = DVector::from_column_slice(r.as_slice());
    let vec_q = lu
        .solve(&rhs)
        .ok_or_else(|| Error::Numeric("Stein equation has no unique solution".into()))?;
    let q = DMatrix::from_column_slice(n, n, vec_q.as_slice());
    Ok(if is_symmetric(r) { symmetrize(&q) } else { q })
}

/// Which factorization produced a threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ThresholdRoute {
    /// Denominator `A_o^T Q A_o - A_c^T Q A_c` is positive definite: the
    /// threshold is the largest generalized eigenvalue, i.e. the supremum of
    /// the Rayleigh quotient.
    RayleighSupremum,
    /// Closed-loop margin `ρQ - A_c^T Q A_c` is positive definite: the
    /// threshold is the smallest success probability `λ` with
    /// `λ A_c^T Q A_c + (1-λ) A_o^T Q A_o ⪯ ρQ`.
    DecayMargin,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Threshold {
    /// Unclamped value; `-inf` when every success probability suffices.
    pub raw: f64,
    /// Direction attaining the threshold, when one exists.
    pub witness: Option<Vec<f64>>,
    pub route: ThresholdRoute,
}

impl Threshold {
    /// Value used to build the target set: negative thresholds are floored
    /// at 0, values above 1 are kept so that they stay unattainable.
    pub fn effective(&self) -> f64 {
        self.raw.max(0.0)
    }
}

/// Largest eigenpair of `L⁻¹ M L⁻ᵀ` with `L` the Cholesky factor of `pd`,
/// mapped back to a generalized eigenvector of `(M, pd)`.
fn reduced_top_eigenpair(m: &DMatrix<f64>, pd: &DMatrix<f64>) -> Option<(f64, DVector<f64>)> {
    let chol = pd.clone().cholesky()?;
    let l = chol.l();
    let l_inv = l.clone().try_inverse()?;
    let reduced = symmetrize(&(&l_inv * m * l_inv.transpose()));
    let eig = SymmetricEigen::new(reduced);
    let (k, &theta) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))?;
    let v = eig.eigenvectors.column(k).into_owned();
    let y = l_inv.transpose() * v;
    Some((theta, y))
}

/// Minimum per-slot success probability that guarantees the plant's decay
/// rate, i.e. the supremum of
/// `yᵀ(A_oᵀQA_o - ρQ)y / yᵀ(A_oᵀQA_o - A_cᵀQA_c)y`.
///
/// Uses the Cholesky-reduced symmetric eigenproblem on the denominator when
/// it is positive definite. Otherwise, when the closed loop alone meets the
/// decay rate (`ρQ - A_cᵀQA_c ≻ 0`), the same threshold is the lower end of
/// the interval of `λ` for which the expected decay inequality holds for all
/// states, obtained from the reduced problem on that margin.
pub fn success_threshold(plant: &PlantModel) -> Result<Threshold> {
    let excess = plant.excess_matrix();
    let gain = plant.gain_matrix();

    let (threshold, witness) = if let Some((theta, y)) = reduced_top_eigenpair(&excess, &gain) {
        let t = Threshold {
            raw: theta,
            witness: Some(y.iter().copied().collect()),
            route: ThresholdRoute::RayleighSupremum,
        };
        (t, Some(y))
    } else {
        let margin = symmetrize(&(&gain - &excess));
        let (theta, y) = reduced_top_eigenpair(&gain, &margin).ok_or_else(|| {
            Error::Numeric("threshold undefined: closed loop does not dominate open loop".into())
        })?;
        if theta <= 0.0 {
            let t = Threshold {
                raw: f64::NEG_INFINITY,
                witness: None,
                route: ThresholdRoute::DecayMargin,
            };
            (t, None)
        } else {
            let t = Threshold {
                raw: 1.0 - 1.0 / theta,
                witness: Some(y.iter().copied().collect()),
                route: ThresholdRoute::DecayMargin,
            };
            (t, Some(y))
        }
    };

    if let Some(y) = witness {
        let pencil = &excess - &gain * threshold.raw;
        let residual = (&pencil * &y).norm();
        let scale = (excess.norm() + threshold.raw.abs() * gain.norm()) * y.norm();
        if residual > RESIDUAL_TOL * scale.max(1.0) {
            return Err(Error::Numeric(format!(
                "threshold eigenpair residual {residual:e} exceeds tolerance"
            )));
        }
    }
    Ok(threshold)
}

/// Per-plant thresholds used to build `Ω(s)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdVector {
    pub raw: Vec<f64>,
    pub effective: Vec<f64>,
}

impl ThresholdVector {
    pub fn from_thresholds(ts: &[Threshold]) -> Self {
        ThresholdVector {
            raw: ts.iter().map(|t| t.raw).collect(),
            effective: ts.iter().map(Threshold::effective).collect(),
        }
    }

    /// Thresholds given directly, used as-is.
    pub fn fixed(values: Vec<f64>) -> Self {
        ThresholdVector {
            raw: values.clone(),
            effective: values,
        }
    }

    pub fn len(&self) -> usize {
        self.effective.len()
    }

    pub fn is_empty(&self) -> bool {
        self.effective.is_empty()
    }
}

/// Success probabilities `Λ_i` per plant and profile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CouplingTable {
    rows: Vec<Vec<f64>>,
}

impl CouplingTable {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        let Some(first) = rows.first() else {
            return Err(Error::validation("channel.lambda", "at least one plant row is required"));
        };
        let len = first.len();
        for (i, row) in rows.iter().enumerate() {
            if row.len() != len {
                return Err(Error::validation(
                    format!("channel.lambda[{i}]"),
                    format!("row has {} entries, expected {len}", row.len()),
                ));
            }
            if let Some((z, v)) = row.iter().enumerate().find(|(_, v)| !(0.0..=1.0).contains(*v)) {
                return Err(Error::validation(
                    format!("channel.lambda[{i}][z={}]", z + 1),
                    format!("probability {v} outside [0,1]"),
                ));
            }
        }
        Ok(CouplingTable { rows })
    }

    pub fn plants(&self) -> usize {
        self.rows.len()
    }

    pub fn profiles(&self) -> usize {
        self.rows[0].len()
    }

    /// `λ_z^i`, plant 0-based, `z` 1-based.
    pub fn lambda(&self, plant: usize, z: usize) -> f64 {
        self.rows[plant][z - 1]
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }
}

/// Channel tables of one plant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantChannel {
    /// `γ[z-1][a]`: distribution of the local channel state given the profile.
    pub gamma: Vec<Vec<f64>>,
    /// `h(a)`: whether the sensor transmits in channel state `a`.
    pub transmit: Vec<bool>,
    /// `μ[level][b]`: power-level selection given channel state `b`.
    pub power: Vec<Vec<f64>>,
    /// `η[a][level]`: decoding success in state `a` at a power level.
    pub decoding: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelPrimitives {
    pub levels: usize,
    pub plants: Vec<PlantChannel>,
}

fn check_unit(path: &str, v: f64) -> Result<()> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(Error::validation(path, format!("probability {v} outside [0,1]")))
    }
}

impl ChannelPrimitives {
    pub fn validate(&self, profiles: usize) -> Result<()> {
        let s = self.levels;
        if s == 0 {
            return Err(Error::validation("channel.levels", "need at least one channel state"));
        }
        if self.plants.is_empty() {
            return Err(Error::validation("channel.plant", "need at least one plant"));
        }
        for (i, p) in self.plants.iter().enumerate() {
            let at = |f: &str| format!("channel.plant[{i}].{f}");
            if p.gamma.len() != profiles {
                return Err(Error::validation(
                    at("gamma"),
                    format!("{} rows, expected one per profile ({profiles})", p.gamma.len()),
                ));
            }
            for (z, row) in p.gamma.iter().enumerate() {
                let path = format!("{}[z={}]", at("gamma"), z + 1);
                if row.len() != s {
                    return Err(Error::validation(path, format!("expected {s} entries")));
                }
                for &v in row {
                    check_unit(&path, v)?;
                }
                let total: f64 = row.iter().sum();
                if (total - 1.0).abs() > DISTRIBUTION_TOL {
                    return Err(Error::validation(path, format!("distribution sums to {total}")));
                }
            }
            if p.transmit.len() != s {
                return Err(Error::validation(at("transmit"), format!("expected {s} entries")));
            }
            let levels = p.power.len();
            if levels == 0 {
                return Err(Error::validation(at("power"), "need at least one power level"));
            }
            for (a, row) in p.power.iter().enumerate() {
                if row.len() != s {
                    return Err(Error::validation(format!("{}[{a}]", at("power")), format!("expected {s} entries")));
                }
                for &v in row {
                    check_unit(&format!("{}[{a}]", at("power")), v)?;
                }
            }
            for b in 0..s {
                let total: f64 = p.power.iter().map(|row| row[b]).sum();
                if (total - 1.0).abs() > DISTRIBUTION_TOL {
                    return Err(Error::validation(
                        format!("{}[state={b}]", at("power")),
                        format!("distribution sums to {total}"),
                    ));
                }
            }
            if p.decoding.len() != s || p.decoding.iter().any(|r| r.len() != levels) {
                return Err(Error::validation(at("decoding"), format!("expected a {s}×{levels} table")));
            }
            for (a, row) in p.decoding.iter().enumerate() {
                for &v in row {
                    check_unit(&format!("{}[{a}]", at("decoding")), v)?;
                }
            }
        }
        Ok(())
    }
}

/// Result of evaluating the coupling formula.
#[derive(Debug, Clone, PartialEq)]
pub struct CouplingOutcome {
    pub table: CouplingTable,
    /// One message per value that had to be clamped into `[0,1]`.
    pub warnings: Vec<String>,
}

/// Evaluates, for every plant `i` and profile `z`,
/// `λ_z^i = α_z^i η_z^i ∏_{j≠i}(1 - α_z^j)` with
/// `α_z^i = Σ_a γ^i_{a,z} h_i(a)`,
/// `μ̄^i_{b,z} = Σ_c γ^i_{c,z} μ^i_{b,c}` and
/// `η_z^i = Σ_{a,b} γ^i_{a,z} μ̄^i_{b,z} η^i_{a,b}`.
pub fn coupling_rows(primitives: &ChannelPrimitives) -> Result<CouplingOutcome> {
    let profiles = primitives
        .plants
        .first()
        .map(|p| p.gamma.len())
        .ok_or_else(|| Error::validation("channel.plant", "need at least one plant"))?;
    primitives.validate(profiles)?;
    let s = primitives.levels;

    let alpha: Vec<Vec<f64>> = primitives
        .plants
        .iter()
        .map(|p| {
            p.gamma
                .iter()
                .map(|g| (0..s).filter(|&a| p.transmit[a]).map(|a| g[a]).sum())
                .collect()
        })
        .collect();

    let mut warnings = Vec::new();
    let mut rows = Vec::with_capacity(primitives.plants.len());
    for (i, p) in primitives.plants.iter().enumerate() {
        let mut row = Vec::with_capacity(profiles);
        for z in 0..profiles {
            let g = &p.gamma[z];
            let mean_power: Vec<f64> = p
                .power
                .iter()
                .map(|mu_b| (0..s).map(|c| g[c] * mu_b[c]).sum())
                .collect();
            let eta: f64 = (0..s)
                .flat_map(|a| mean_power.iter().enumerate().map(move |(b, mb)| (a, b, mb)))
                .map(|(a, b, mb)| g[a] * mb * p.decoding[a][b])
                .sum();
            let silence: f64 = alpha
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(_, aj)| 1.0 - aj[z])
                .product();
            let lambda = alpha[i][z] * eta * silence;
            let clamped = lambda.clamp(0.0, 1.0);
            if (clamped - lambda).abs() > ROUNDING_TOL {
                warnings.push(format!(
                    "plant {} profile {}: λ = {lambda} clamped to {clamped}",
                    i + 1,
                    z + 1
                ));
            }
            row.push(clamped);
        }
        rows.push(row);
    }
    Ok(CouplingOutcome {
        table: CouplingTable::new(rows)?,
        warnings,
    })
}

/// `Ω(s) = ∩_i {z : λ_z^i ≥ s_i} ∩ C_z`.
pub fn omega_set(
    coupling: &CouplingTable,
    thresholds: &ThresholdVector,
    c_z: &BTreeSet<usize>,
) -> Result<BTreeSet<usize>> {
    if thresholds.len() != coupling.plants() {
        return Err(Error::Dimension(format!(
            "{} thresholds for {} plants",
            thresholds.len(),
            coupling.plants()
        )));
    }
    if let Some(&z) = c_z.iter().find(|&&z| z == 0 || z > coupling.profiles()) {
        return Err(Error::Index(format!("profile {z} outside 1..={}", coupling.profiles())));
    }
    Ok(c_z
        .iter()
        .copied()
        .filter(|&z| {
            thresholds
                .effective
                .iter()
                .enumerate()
                .all(|(i, &s)| coupling.lambda(i, z) >= s)
        })
        .collect())
}
