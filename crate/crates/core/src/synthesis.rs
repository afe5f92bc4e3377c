//! Constrained set stabilization: target projection, largest constrained
//! control invariant set, the contracted reverse transition graph, its
//! breadth-first certificate, and the family of feasible feedback gains.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ffn::{Constraints, Profile, TransitionMatrix};
use crate::stp::LogicalMatrix;

/// Root vertex of the contracted graph; state vertices use their 1-based index.
pub const ROOT: usize = 0;

/// A set `𝓜` of admissible profiles (z indices).
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TargetSet(pub BTreeSet<usize>);

impl TargetSet {
    pub fn contains(&self, z: usize) -> bool {
        self.0.contains(&z)
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl FromIterator<usize> for TargetSet {
    fn from_iter<T: IntoIterator<Item = usize>>(iter: T) -> Self {
        TargetSet(iter.into_iter().collect())
    }
}

/// `Φ(𝓜) = {β ∈ C_β : ∃u ∈ C_u(β), uβ ∈ 𝓜}`.
pub fn phi_set(target: &TargetSet, constraints: &Constraints) -> BTreeSet<usize> {
    target
        .0
        .iter()
        .map(|&z| Profile::from_z(z, constraints.n_states()))
        .filter(|p| constraints.allows(p.u_index, p.beta_index))
        .map(|p| p.beta_index)
        .collect()
}

/// `C_u^𝓜(β) = {u ∈ C_u(β) : uβ ∈ 𝓜}`; empty when `β ∉ Φ(𝓜)`.
pub fn admissible_controls_for_target(
    beta: usize,
    target: &TargetSet,
    constraints: &Constraints,
) -> BTreeSet<usize> {
    if !constraints.contains_state(beta) {
        return BTreeSet::new();
    }
    constraints
        .controls(beta)
        .iter()
        .copied()
        .filter(|&u| target.contains(Profile::from_parts(u, beta, constraints.n_states()).z_index))
        .collect()
}

/// A constrained control invariant set together with the controls that keep
/// each of its states inside it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InvariantSet {
    pub states: BTreeSet<usize>,
    pub controls: BTreeMap<usize, BTreeSet<usize>>,
}

impl InvariantSet {
    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }
}

fn staying_controls(
    f: &TransitionMatrix,
    beta: usize,
    set: &BTreeSet<usize>,
    target: &TargetSet,
    constraints: &Constraints,
) -> BTreeSet<usize> {
    admissible_controls_for_target(beta, target, constraints)
        .into_iter()
        .filter(|&u| set.contains(&f.successor(u, beta)))
        .collect()
}

/// Largest constrained control invariant set `I(𝓜)`.
///
/// Starts from `Φ(𝓜)` and repeatedly drops states with no control in
/// `C_u^𝓜(β)` whose successor stays in the current set. Each round removes at
/// least one state, so this terminates within `|Φ(𝓜)|` rounds.
pub fn lccis(f: &TransitionMatrix, target: &TargetSet, constraints: &Constraints) -> InvariantSet {
    let mut current = phi_set(target, constraints);
    loop {
        let next: BTreeSet<usize> = current
            .iter()
            .copied()
            .filter(|&b| !staying_controls(f, b, &current, target, constraints).is_empty())
            .collect();
        if next.len() == current.len() {
            break;
        }
        current = next;
    }
    let controls = current
        .iter()
        .map(|&b| (b, staying_controls(f, b, &current, target, constraints)))
        .collect();
    InvariantSet {
        states: current,
        controls,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CcisCheck {
    pub holds: bool,
    /// Smallest control keeping each state inside the set.
    pub witnesses: BTreeMap<usize, usize>,
    /// States with no such control.
    pub violators: Vec<usize>,
}

/// Checks the invariance predicate on a candidate set.
pub fn verify_ccis(
    f: &TransitionMatrix,
    states: &BTreeSet<usize>,
    target: &TargetSet,
    constraints: &Constraints,
) -> CcisCheck {
    let mut witnesses = BTreeMap::new();
    let mut violators = Vec::new();
    for &b in states {
        match staying_controls(f, b, states, target, constraints).first() {
            Some(&u) => {
                witnesses.insert(b, u);
            }
            None => violators.push(b),
        }
    }
    CcisCheck {
        holds: violators.is_empty(),
        witnesses,
        violators,
    }
}

/// Reverse one-step transition graph on `C_β \ I` with `I` contracted to
/// [`ROOT`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContractedGraph {
    pub vertices: BTreeSet<usize>,
    pub edges: BTreeMap<usize, BTreeSet<usize>>,
}

impl ContractedGraph {
    pub fn out_neighbours(&self, v: usize) -> impl Iterator<Item = usize> + '_ {
        self.edges.get(&v).into_iter().flatten().copied()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.values().map(BTreeSet::len).sum()
    }
}

/// `R_1(β; C_u)`: one-step successors under admissible controls.
pub fn one_step_reachable(f: &TransitionMatrix, beta: usize, constraints: &Constraints) -> BTreeSet<usize> {
    constraints
        .controls(beta)
        .iter()
        .map(|&u| f.successor(u, beta))
        .collect()
}

pub fn build_contracted_graph(
    f: &TransitionMatrix,
    invariant: &BTreeSet<usize>,
    constraints: &Constraints,
) -> Result<ContractedGraph> {
    if invariant.is_empty() {
        return Err(Error::NotStabilizable {
            stage: "contracted_graph".into(),
            reason: "no invariant core: not stabilizable".into(),
        });
    }
    let outside: BTreeSet<usize> = constraints
        .states()
        .iter()
        .copied()
        .filter(|b| !invariant.contains(b))
        .collect();
    let mut vertices = outside.clone();
    vertices.insert(ROOT);
    let mut edges: BTreeMap<usize, BTreeSet<usize>> = BTreeMap::new();
    for &a in &outside {
        for b in one_step_reachable(f, a, constraints) {
            if invariant.contains(&b) {
                edges.entry(ROOT).or_default().insert(a);
            } else if outside.contains(&b) {
                edges.entry(b).or_default().insert(a);
            }
        }
    }
    Ok(ContractedGraph { vertices, edges })
}

/// Breadth-first spanning tree of the contracted graph rooted at [`ROOT`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BfsCertificate {
    pub stabilizable: bool,
    /// Edge distance from the root for every reached vertex.
    pub depth: BTreeMap<usize, usize>,
    /// Tree edges as child → parent.
    pub parent: BTreeMap<usize, usize>,
    pub unreached: Vec<usize>,
}

impl BfsCertificate {
    /// Largest depth, i.e. the transient bound certified by the tree.
    pub fn max_depth(&self) -> usize {
        self.depth.values().copied().max().unwrap_or(0)
    }
}

/// Standard BFS from the root; neighbours are visited in ascending order.
pub fn bfs_certificate(graph: &ContractedGraph) -> BfsCertificate {
    let mut depth = BTreeMap::from([(ROOT, 0)]);
    let mut parent = BTreeMap::new();
    let mut queue = VecDeque::from([ROOT]);
    while let Some(v) = queue.pop_front() {
        let d = depth[&v];
        for w in graph.out_neighbours(v) {
            if let std::collections::btree_map::Entry::Vacant(e) = depth.entry(w) {
                e.insert(d + 1);
                parent.insert(w, v);
                queue.push_back(w);
            }
        }
    }
    let unreached: Vec<usize> = graph
        .vertices
        .iter()
        .copied()
        .filter(|v| !depth.contains_key(v))
        .collect();
    depth.remove(&ROOT);
    BfsCertificate {
        stabilizable: unreached.is_empty(),
        depth,
        parent,
        unreached,
    }
}

/// Per-state option sets for the feedback gain `L = [l_1 … l_N]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GainFamily {
    n_controls: usize,
    /// Indexed by `a - 1`.
    options: Vec<BTreeSet<usize>>,
    /// BFS depth of every state outside the invariant core.
    pub depth: BTreeMap<usize, usize>,
}

impl GainFamily {
    pub fn options(&self, beta: usize) -> &BTreeSet<usize> {
        &self.options[beta - 1]
    }

    pub fn n_states(&self) -> usize {
        self.options.len()
    }

    /// `∏ |l_a|` over the constrained states; off-constraint states are
    /// excluded since they never occur in closed loop.
    pub fn size(&self, constraints: &Constraints) -> u128 {
        constraints
            .states()
            .iter()
            .map(|&b| self.options(b).len() as u128)
            .fold(1u128, |acc, k| acc.saturating_mul(k))
    }

    /// Smallest admissible control per state.
    pub fn canonical(&self) -> LogicalMatrix {
        let cols = self
            .options
            .iter()
            .map(|o| *o.first().expect("option sets are nonempty"))
            .collect();
        LogicalMatrix::new(self.n_controls, cols).expect("options lie in 1..=M")
    }

    /// Lazily enumerates every gain matrix in the family over the constrained
    /// states; off-constraint columns take their smallest option.
    pub fn laws<'a>(&'a self, constraints: &'a Constraints) -> impl Iterator<Item = LogicalMatrix> + 'a {
        let free: Vec<(usize, Vec<usize>)> = constraints
            .states()
            .iter()
            .map(|&b| (b, self.options(b).iter().copied().collect()))
            .collect();
        let mut cursor: Option<Vec<usize>> = Some(vec![0; free.len()]);
        let base = self.canonical();
        std::iter::from_fn(move || {
            let pos = cursor.clone()?;
            let mut cols = base.columns().to_vec();
            for ((b, opts), &k) in free.iter().zip(&pos) {
                cols[b - 1] = opts[k];
            }
            // odometer, last state fastest
            let mut next = pos;
            let mut carried = true;
            for (slot, (_, opts)) in next.iter_mut().zip(&free).rev() {
                *slot += 1;
                if *slot < opts.len() {
                    carried = false;
                    break;
                }
                *slot = 0;
            }
            cursor = if carried { None } else { Some(next) };
            Some(LogicalMatrix::new(self.n_controls, cols).expect("options lie in 1..=M"))
        })
    }
}

impl fmt::Display for GainFamily {
    /// `δ_M[2 {1,2} 1 …]`: singletons print bare, choices as sets.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "δ_{}[", self.n_controls)?;
        for (k, o) in self.options.iter().enumerate() {
            if k > 0 {
                f.write_str(" ")?;
            }
            if o.len() == 1 {
                write!(f, "{}", o.first().unwrap())?;
            } else {
                let items: Vec<String> = o.iter().map(usize::to_string).collect();
                write!(f, "{{{}}}", items.join(","))?;
            }
        }
        f.write_str("]")
    }
}

/// Builds the option sets: `U_a` on the invariant core, `Ū_a` (controls
/// whose successor is the predecessor of `a` on some shortest path to the
/// root) on the rest of `C_β`, and every control off `C_β`.
pub fn synthesize_gains(
    f: &TransitionMatrix,
    target: &TargetSet,
    invariant: &BTreeSet<usize>,
    certificate: &BfsCertificate,
    constraints: &Constraints,
) -> Result<GainFamily> {
    if !certificate.stabilizable {
        return Err(Error::NotStabilizable {
            stage: "bfs".into(),
            reason: format!("states {:?} cannot reach the invariant core", certificate.unreached),
        });
    }
    let n = f.n_states();
    let mut options = Vec::with_capacity(n);
    for a in 1..=n {
        let set: BTreeSet<usize> = if invariant.contains(&a) {
            admissible_controls_for_target(a, target, constraints)
                .into_iter()
                .filter(|&u| invariant.contains(&f.successor(u, a)))
                .collect()
        } else if constraints.contains_state(a) {
            let d = *certificate.depth.get(&a).ok_or_else(|| {
                Error::Internal(format!("state {a} has no depth under a true verdict"))
            })?;
            constraints
                .controls(a)
                .iter()
                .copied()
                .filter(|&u| {
                    let b = f.successor(u, a);
                    if d == 1 {
                        invariant.contains(&b)
                    } else {
                        !invariant.contains(&b) && certificate.depth.get(&b) == Some(&(d - 1))
                    }
                })
                .collect()
        } else {
            (1..=f.n_controls()).collect()
        };
        if set.is_empty() {
            return Err(Error::Internal(format!("empty gain option set at state {a}")));
        }
        options.push(set);
    }
    Ok(GainFamily {
        n_controls: f.n_controls(),
        options,
        depth: certificate.depth.clone(),
    })
}

/// Outcome of simulating a law from every admissible initial state.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClosedLoopCheck {
    pub admissible: bool,
    /// First step at which each initial state lies in the goal set.
    pub entry_step: BTreeMap<usize, usize>,
    pub stays: bool,
}

impl ClosedLoopCheck {
    pub fn max_entry(&self) -> Option<usize> {
        self.entry_step.values().copied().max()
    }

    pub fn all_entered(&self, constraints: &Constraints) -> bool {
        self.entry_step.len() == constraints.states().len()
    }
}

/// Runs `u = Lβ` from every `β_0 ∈ C_β` for `2|C_β|` steps, recording
/// admissibility, when the trajectory first enters `goal`, and whether it
/// ever leaves afterwards.
pub fn check_closed_loop(
    f: &TransitionMatrix,
    law: &LogicalMatrix,
    goal: &BTreeSet<usize>,
    constraints: &Constraints,
) -> Result<ClosedLoopCheck> {
    if law.rows() != f.n_controls() || law.ncols() != f.n_states() {
        return Err(Error::Dimension(format!(
            "gain is {}×{}, expected {}×{}",
            law.rows(),
            law.ncols(),
            f.n_controls(),
            f.n_states()
        )));
    }
    let horizon = 2 * constraints.states().len();
    let mut admissible = true;
    let mut stays = true;
    let mut entry_step = BTreeMap::new();
    for &b0 in constraints.states() {
        let mut beta = b0;
        let mut entered: Option<usize> = None;
        for k in 0..=horizon {
            let u = law.col(beta)?;
            if !constraints.allows(u, beta) {
                admissible = false;
                break;
            }
            match (entered, goal.contains(&beta)) {
                (None, true) => entered = Some(k),
                (Some(_), false) => stays = false,
                _ => {}
            }
            beta = f.successor(u, beta);
        }
        if let Some(k) = entered {
            entry_step.insert(b0, k);
        }
    }
    Ok(ClosedLoopCheck {
        admissible,
        entry_step,
        stays,
    })
}

/// Where the synthesis chain stopped.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "verdict", rename_all = "snake_case")]
pub enum Verdict {
    Stabilizable,
    NotStabilizable { stage: String, reason: String },
}

/// Every intermediate of the synthesis chain.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynthesisOutcome {
    pub phi: BTreeSet<usize>,
    pub invariant: InvariantSet,
    /// Core actually steered to: `I(𝓜)` or a verified restriction of it.
    pub core: BTreeSet<usize>,
    pub graph: Option<ContractedGraph>,
    pub certificate: Option<BfsCertificate>,
    pub gains: Option<GainFamily>,
    pub verdict: Verdict,
}

/// Runs Φ → LCCIS → (restriction check) → contracted graph → BFS → gains.
///
/// A `restricted` core must be a nonempty subset of `I(𝓜)` that passes
/// [`verify_ccis`]; otherwise the verdict stops at stage `restricted`.
pub fn synthesize(
    f: &TransitionMatrix,
    target: &TargetSet,
    constraints: &Constraints,
    restricted: Option<&BTreeSet<usize>>,
) -> Result<SynthesisOutcome> {
    let phi = phi_set(target, constraints);
    let invariant = lccis(f, target, constraints);
    let mut outcome = SynthesisOutcome {
        phi,
        core: invariant.states.clone(),
        invariant,
        graph: None,
        certificate: None,
        gains: None,
        verdict: Verdict::Stabilizable,
    };
    let stop = |stage: &str, reason: &str| Verdict::NotStabilizable {
        stage: stage.into(),
        reason: reason.into(),
    };
    if target.is_empty() {
        outcome.verdict = stop("omega", "target profile set is empty");
        return Ok(outcome);
    }
    if outcome.invariant.is_empty() {
        outcome.verdict = stop("lccis", "no invariant core: not stabilizable");
        return Ok(outcome);
    }
    if let Some(core) = restricted {
        // Every invariant set lies inside the largest one, so a core outside
        // I(𝓜) can never be held.
        if core.is_empty() {
            outcome.verdict = stop("restricted", "restricted core is empty");
            return Ok(outcome);
        }
        if !core.is_subset(&outcome.invariant.states) {
            outcome.verdict = stop(
                "restricted",
                &format!("{core:?} is not contained in I = {:?}", outcome.invariant.states),
            );
            return Ok(outcome);
        }
        let check = verify_ccis(f, core, target, constraints);
        if !check.holds {
            outcome.verdict = stop(
                "restricted",
                &format!("states {:?} cannot be kept inside the restricted core", check.violators),
            );
            return Ok(outcome);
        }
        outcome.core = core.clone();
    }
    let graph = build_contracted_graph(f, &outcome.core, constraints)?;
    let certificate = bfs_certificate(&graph);
    outcome.graph = Some(graph);
    if !certificate.stabilizable {
        outcome.verdict = stop(
            "bfs",
            &format!("states {:?} cannot reach the invariant core", certificate.unreached),
        );
        outcome.certificate = Some(certificate);
        return Ok(outcome);
    }
    outcome.gains = Some(synthesize_gains(f, target, &outcome.core, &certificate, constraints)?);
    outcome.certificate = Some(certificate);
    Ok(outcome)
}
