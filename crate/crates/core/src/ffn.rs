//! Switched finite-field networks and their algebraic state-space form.
//!
//! A network has `n` state agents and `m` control agents taking values in
//! `D_κ`. Profiles are ordered control-first: `z = u ⋉ β`, so
//! `z = (u - 1)·N + β` with `N = κ^n`. [`Profile`] owns that convention.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stp::{
    decode_index, encode_values, index_to_value, is_prime, mod_add_matrix, mod_mul_matrix,
    power_reducing_matrix, stp_logical, swap_matrix, value_to_index, DeltaIndex, LogicalMatrix,
};

/// Field size and agent counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub kappa: usize,
    pub n: usize,
    pub m: usize,
}

impl Dims {
    pub fn new(kappa: usize, n: usize, m: usize) -> Result<Self> {
        if !is_prime(kappa) {
            return Err(Error::validation("ffn.kappa", format!("{kappa} is not prime")));
        }
        if n == 0 {
            return Err(Error::validation("ffn.n", "at least one state agent is required"));
        }
        Ok(Dims { kappa, n, m })
    }

    /// `N = κ^n`.
    pub fn states(&self) -> usize {
        self.kappa.pow(self.n as u32)
    }

    /// `M = κ^m`; 1 when there are no control agents.
    pub fn controls(&self) -> usize {
        self.kappa.pow(self.m as u32)
    }

    pub fn profiles(&self) -> usize {
        self.states() * self.controls()
    }

    pub fn encode_state(&self, values: &[usize]) -> usize {
        encode_values(values, self.kappa)
    }

    pub fn decode_state(&self, index: usize) -> Vec<usize> {
        decode_index(index, self.kappa, self.n)
    }

    pub fn encode_control(&self, values: &[usize]) -> usize {
        encode_values(values, self.kappa)
    }

    pub fn decode_control(&self, index: usize) -> Vec<usize> {
        decode_index(index, self.kappa, self.m)
    }
}

/// A joint profile `z = u ⋉ β`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Profile {
    pub u_index: usize,
    pub beta_index: usize,
    pub z_index: usize,
}

impl Profile {
    pub fn from_parts(u_index: usize, beta_index: usize, n_states: usize) -> Self {
        Profile {
            u_index,
            beta_index,
            z_index: (u_index - 1) * n_states + beta_index,
        }
    }

    pub fn from_z(z_index: usize, n_states: usize) -> Self {
        Profile {
            u_index: (z_index - 1) / n_states + 1,
            beta_index: (z_index - 1) % n_states + 1,
            z_index,
        }
    }
}

/// `σ = Θ z`: the mode selected at each profile.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SwitchingMap {
    theta: LogicalMatrix,
}

impl SwitchingMap {
    pub fn from_theta(theta: LogicalMatrix) -> Self {
        SwitchingMap { theta }
    }

    /// One mode (1-based) per profile.
    pub fn from_modes(modes: usize, per_profile: Vec<usize>) -> Result<Self> {
        let theta = LogicalMatrix::new(modes, per_profile)
            .map_err(|e| Error::validation("ffn.switching", e.to_string()))?;
        Ok(SwitchingMap { theta })
    }

    pub fn constant(modes: usize, mode: usize, profiles: usize) -> Result<Self> {
        Self::from_modes(modes, vec![mode; profiles])
    }

    pub fn modes(&self) -> usize {
        self.theta.rows()
    }

    pub fn theta(&self) -> &LogicalMatrix {
        &self.theta
    }

    pub fn mode_at(&self, z_index: usize) -> Result<usize> {
        self.theta.col(z_index)
    }
}

/// State constraint `C_β` and state-dependent control constraint `C_u(β)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Constraints {
    n_states: usize,
    n_controls: usize,
    states: BTreeSet<usize>,
    /// Indexed by `β - 1`; empty for `β ∉ C_β`.
    controls: Vec<BTreeSet<usize>>,
}

impl Constraints {
    pub fn unconstrained(n_states: usize, n_controls: usize) -> Self {
        let all: BTreeSet<usize> = (1..=n_controls).collect();
        Constraints {
            n_states,
            n_controls,
            states: (1..=n_states).collect(),
            controls: vec![all; n_states],
        }
    }

    /// `controls_for(β)` is consulted for every `β ∈ states`.
    pub fn new(
        n_states: usize,
        n_controls: usize,
        states: impl IntoIterator<Item = usize>,
        mut controls_for: impl FnMut(usize) -> BTreeSet<usize>,
    ) -> Result<Self> {
        let states: BTreeSet<usize> = states.into_iter().collect();
        if states.is_empty() {
            return Err(Error::validation("ffn.constraints.states", "state constraint is empty"));
        }
        if let Some(&b) = states.iter().find(|&&b| b == 0 || b > n_states) {
            return Err(Error::validation(
                "ffn.constraints.states",
                format!("state index {b} outside 1..={n_states}"),
            ));
        }
        let mut controls = vec![BTreeSet::new(); n_states];
        for &b in &states {
            let set = controls_for(b);
            if set.is_empty() {
                return Err(Error::validation(
                    "ffn.constraints.controls",
                    format!("no admissible control for state {b}"),
                ));
            }
            if let Some(&u) = set.iter().find(|&&u| u == 0 || u > n_controls) {
                return Err(Error::validation(
                    "ffn.constraints.controls",
                    format!("control index {u} outside 1..={n_controls} (state {b})"),
                ));
            }
            controls[b - 1] = set;
        }
        Ok(Constraints {
            n_states,
            n_controls,
            states,
            controls,
        })
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_controls(&self) -> usize {
        self.n_controls
    }

    pub fn states(&self) -> &BTreeSet<usize> {
        &self.states
    }

    pub fn contains_state(&self, beta: usize) -> bool {
        self.states.contains(&beta)
    }

    /// `C_u(β)`; empty when `β ∉ C_β`.
    pub fn controls(&self, beta: usize) -> &BTreeSet<usize> {
        &self.controls[beta - 1]
    }

    pub fn allows(&self, u: usize, beta: usize) -> bool {
        self.contains_state(beta) && self.controls(beta).contains(&u)
    }

    pub fn is_admissible(&self, z_index: usize) -> bool {
        let p = Profile::from_z(z_index, self.n_states);
        self.allows(p.u_index, p.beta_index)
    }

    /// `C_z = {uβ : β ∈ C_β, u ∈ C_u(β)}`.
    pub fn admissible_z_set(&self) -> Result<BTreeSet<usize>> {
        let set: BTreeSet<usize> = self
            .states
            .iter()
            .flat_map(|&b| {
                self.controls(b)
                    .iter()
                    .map(move |&u| Profile::from_parts(u, b, self.n_states).z_index)
            })
            .collect();
        if set.is_empty() {
            return Err(Error::validation("ffn.constraints", "infeasible model: C_z is empty"));
        }
        Ok(set)
    }
}

/// Per-mode coefficient tables of the network dynamics.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModeCoefficients {
    /// `a[i][j]`, `n × n`.
    pub a: Vec<Vec<usize>>,
    /// `b[i][l]`, `n × m`.
    pub b: Vec<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FfnSpec {
    pub dims: Dims,
    pub modes: Vec<ModeCoefficients>,
    pub switching: SwitchingMap,
    pub constraints: Constraints,
}

impl FfnSpec {
    pub fn new(
        dims: Dims,
        modes: Vec<ModeCoefficients>,
        switching: SwitchingMap,
        constraints: Constraints,
    ) -> Result<Self> {
        let spec = FfnSpec {
            dims,
            modes,
            switching,
            constraints,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let Dims { kappa, n, m } = self.dims;
        if self.modes.is_empty() {
            return Err(Error::validation("ffn.modes", "at least one mode is required"));
        }
        for (s, mode) in self.modes.iter().enumerate() {
            let at = |t: &str| format!("ffn.modes[{s}].{t}");
            if mode.a.len() != n || mode.a.iter().any(|r| r.len() != n) {
                return Err(Error::validation(at("a"), format!("expected a {n}×{n} table")));
            }
            if mode.b.len() != n || mode.b.iter().any(|r| r.len() != m) {
                return Err(Error::validation(at("b"), format!("expected a {n}×{m} table")));
            }
            let out_of_field = |t: &Vec<Vec<usize>>| t.iter().flatten().any(|&c| c >= kappa);
            if out_of_field(&mode.a) || out_of_field(&mode.b) {
                return Err(Error::validation(at("a|b"), format!("coefficient outside 0..{kappa}")));
            }
        }
        if self.switching.modes() != self.modes.len() {
            return Err(Error::validation(
                "ffn.switching",
                format!(
                    "switching map has {} modes, network has {}",
                    self.switching.modes(),
                    self.modes.len()
                ),
            ));
        }
        if self.switching.theta().ncols() != self.dims.profiles() {
            return Err(Error::validation(
                "ffn.switching",
                format!(
                    "switching map covers {} profiles, expected {}",
                    self.switching.theta().ncols(),
                    self.dims.profiles()
                ),
            ));
        }
        if self.constraints.n_states() != self.dims.states()
            || self.constraints.n_controls() != self.dims.controls()
        {
            return Err(Error::validation("ffn.constraints", "constraint sizes do not match network"));
        }
        Ok(())
    }
}

/// `F ∈ L_{N×MN}` with `β(k+1) = F z(k)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransitionMatrix {
    f: LogicalMatrix,
    n_controls: usize,
}

impl TransitionMatrix {
    pub fn new(f: LogicalMatrix, n_controls: usize) -> Result<Self> {
        if n_controls == 0 || f.ncols() != f.rows() * n_controls {
            return Err(Error::Dimension(format!(
                "transition matrix is {}×{}, expected {}×{}",
                f.rows(),
                f.ncols(),
                f.rows(),
                f.rows() * n_controls
            )));
        }
        Ok(TransitionMatrix { f, n_controls })
    }

    pub fn matrix(&self) -> &LogicalMatrix {
        &self.f
    }

    pub fn n_states(&self) -> usize {
        self.f.rows()
    }

    pub fn n_controls(&self) -> usize {
        self.n_controls
    }

    /// `Col_β(Blk_u(F))`.
    pub fn successor(&self, u: usize, beta: usize) -> usize {
        self.f.columns()[Profile::from_parts(u, beta, self.n_states()).z_index - 1]
    }

    /// `Blk_l(F)` as an `N × N` logical matrix.
    pub fn block(&self, l: usize) -> Result<LogicalMatrix> {
        if l == 0 || l > self.n_controls {
            return Err(Error::Index(format!("block {l} outside 1..={}", self.n_controls)));
        }
        let n = self.n_states();
        LogicalMatrix::new(n, self.f.columns()[(l - 1) * n..l * n].to_vec())
    }
}

/// `β' = F z`: constant-time column lookup.
pub fn step_algebraic(f: &TransitionMatrix, z: &Profile) -> Result<DeltaIndex> {
    if z.z_index == 0 || z.z_index > f.matrix().ncols() {
        return Err(Error::Index(format!(
            "profile z={} outside 1..={}",
            z.z_index,
            f.matrix().ncols()
        )));
    }
    f.matrix().col_delta(z.z_index)
}

/// Evaluates the modular recursion directly, with the mode read off the
/// switching map at the current profile.
pub fn step_direct(spec: &FfnSpec, beta: &[usize], u: &[usize]) -> Result<Vec<usize>> {
    let dims = spec.dims;
    let kappa = dims.kappa;
    let z = Profile::from_parts(
        dims.encode_control(u),
        dims.encode_state(beta),
        dims.states(),
    );
    let mode = &spec.modes[spec.switching.mode_at(z.z_index)? - 1];
    Ok((0..dims.n)
        .map(|i| {
            let from_states: usize = (0..dims.n).map(|j| mode.a[i][j] * beta[j]).sum();
            let from_controls: usize = (0..dims.m).map(|l| mode.b[i][l] * u[l]).sum();
            (from_states + from_controls) % kappa
        })
        .collect())
}

/// A logical-valued expression `G ⋉ x_{v_1} ⋉ ⋯ ⋉ x_{v_r}` over the
/// network variables `σ, u_1…u_m, β_1…β_n` (ids `0, 1…m, m+1…m+n`).
#[derive(Debug, Clone)]
struct Expr {
    mat: LogicalMatrix,
    vars: Vec<usize>,
}

struct VarSizes {
    modes: usize,
    kappa: usize,
    count: usize,
}

impl VarSizes {
    fn size(&self, var: usize) -> usize {
        if var == 0 {
            self.modes
        } else {
            self.kappa
        }
    }

    fn prefix(&self, vars: &[usize]) -> usize {
        vars.iter().map(|&v| self.size(v)).product()
    }
}

impl Expr {
    fn var(var: usize, sizes: &VarSizes) -> Expr {
        Expr {
            mat: LogicalMatrix::identity(sizes.size(var)),
            vars: vec![var],
        }
    }

    /// `H ⋉ e1 ⋉ e2`, using `x ⋉ G = (I_k ⊗ G) ⋉ x` to move `G2` left.
    fn apply(op: &LogicalMatrix, e1: Expr, e2: Expr, sizes: &VarSizes) -> Expr {
        let moved = e2.mat.identity_kron(sizes.prefix(&e1.vars));
        let mat = stp_logical(&stp_logical(op, &e1.mat), &moved);
        let mut vars = e1.vars;
        vars.extend(e2.vars);
        Expr { mat, vars }.normalized(sizes)
    }

    /// Rewrites to the canonical variable order `σ, u_1…u_m, β_1…β_n`, each
    /// variable exactly once, by inserting dummies (`1^T ⊗ I`), swapping
    /// neighbours (`W`) and merging repeats (`P_r`).
    fn normalized(mut self, sizes: &VarSizes) -> Expr {
        for var in (0..sizes.count).rev() {
            if !self.vars.contains(&var) {
                let rest = sizes.prefix(&self.vars);
                let dummy = LogicalMatrix::ones_row(sizes.size(var)).kron(&LogicalMatrix::identity(rest));
                self.mat = stp_logical(&self.mat, &dummy);
                self.vars.insert(0, var);
            }
        }
        while let Some(j) = self.vars.windows(2).position(|w| w[0] >= w[1]) {
            let prefix = sizes.prefix(&self.vars[..j]);
            let (a, b) = (self.vars[j], self.vars[j + 1]);
            if a == b {
                let pr = power_reducing_matrix(sizes.size(a)).identity_kron(prefix);
                self.mat = stp_logical(&self.mat, &pr);
                self.vars.remove(j + 1);
            } else {
                let w = swap_matrix(sizes.size(b), sizes.size(a)).identity_kron(prefix);
                self.mat = stp_logical(&self.mat, &w);
                self.vars.swap(j, j + 1);
            }
        }
        self
    }
}

/// Compiles the network into `F` with `β(k+1) = F z(k)`.
///
/// Each agent's update is assembled as an STP expression over
/// `(σ, u, β)` from the structural matrices of `+_κ` and `×_κ`, giving
/// `F_{i,3}` with `β_i(k+1) = F_{i,3} σ z`. Substituting `σ = Θ z` yields
/// `F_i = F_{i,3} Θ P_{r,MN}`, and `Col_l(F) = ⋉_i Col_l(F_i)`. Everything
/// stays in the delta-index domain.
pub fn compile_assr(spec: &FfnSpec) -> Result<TransitionMatrix> {
    spec.validate()?;
    let Dims { kappa, n, m } = spec.dims;
    let w = spec.modes.len();
    let profiles = spec.dims.profiles();
    let sizes = VarSizes {
        modes: w,
        kappa,
        count: 1 + m + n,
    };
    let add = mod_add_matrix(kappa)?;
    let mul = mod_mul_matrix(kappa)?;
    let theta_pr = stp_logical(spec.switching.theta(), &power_reducing_matrix(profiles));

    let coefficient = |pick: &dyn Fn(&ModeCoefficients) -> usize| -> Result<Expr> {
        let cols = spec.modes.iter().map(|md| value_to_index(pick(md))).collect();
        Ok(Expr {
            mat: LogicalMatrix::new(kappa, cols)?,
            vars: vec![0],
        })
    };

    let mut agent_maps = Vec::with_capacity(n);
    for i in 0..n {
        let mut terms = Vec::with_capacity(n + m);
        for j in 0..n {
            let coef = coefficient(&|md| md.a[i][j])?;
            terms.push(Expr::apply(&mul, coef, Expr::var(1 + m + j, &sizes), &sizes));
        }
        for l in 0..m {
            let coef = coefficient(&|md| md.b[i][l])?;
            terms.push(Expr::apply(&mul, coef, Expr::var(1 + l, &sizes), &sizes));
        }
        let mut terms = terms.into_iter();
        let first = terms.next().expect("n ≥ 1");
        let sum = terms
            .fold(first, |acc, t| Expr::apply(&add, acc, t, &sizes))
            .normalized(&sizes);
        debug_assert_eq!(sum.mat.ncols(), w * profiles);
        let f_i = stp_logical(&sum.mat, &theta_pr);
        if f_i.rows() != kappa || f_i.ncols() != profiles {
            return Err(Error::Internal(format!(
                "agent {} map is {}×{}, expected {kappa}×{profiles}",
                i + 1,
                f_i.rows(),
                f_i.ncols()
            )));
        }
        agent_maps.push(f_i);
    }

    let cols = (1..=profiles)
        .map(|l| {
            let mut acc = agent_maps[0].col_delta(l)?;
            for f_i in &agent_maps[1..] {
                acc = acc.stp(&f_i.col_delta(l)?);
            }
            Ok(acc.index())
        })
        .collect::<Result<Vec<_>>>()?;
    TransitionMatrix::new(LogicalMatrix::new(spec.dims.states(), cols)?, spec.dims.controls())
}

/// Decodes a state index to field values (for reports and oracles).
pub fn state_values(dims: &Dims, beta: usize) -> Vec<usize> {
    dims.decode_state(beta)
}

/// Field value of a single-agent delta index.
pub fn agent_value(index: usize) -> usize {
    index_to_value(index)
}
