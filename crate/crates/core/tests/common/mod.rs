//! Golden data and brute-force oracles shared by the integration tests. The
//! oracles only use the library for data types, never for the algorithms
//! they check.
#![allow(dead_code)]

use std::collections::BTreeSet;
use std::path::PathBuf;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use opctl::ffn::{Constraints, TransitionMatrix};
use opctl::stp::LogicalMatrix;

pub const F_TEXT: &str = "δ_9[1 7 3 5 2 8 2 6 1 3 9 8 4 1 7 1 5 2 6 6 5 1 3 9 4 4 1]";
pub const SIGMA_TEXT: &str = "δ_3[1 1 3 1 1 2 3 2 3 1 1 2 1 1 1 2 1 1 3 2 3 2 1 1 3 1 1]";

pub const LAMBDA_1: [f64; 27] = [
    0.53, 0.21, 0.53, 0.49, 0.21, 0.53, 0.16, 0.00, 0.20, //
    0.49, 0.53, 0.21, 0.00, 0.21, 0.53, 0.00, 0.21, 0.53, //
    0.00, 0.64, 0.64, 0.00, 0.21, 0.00, 0.00, 0.21, 0.53,
];
pub const LAMBDA_2: [f64; 27] = [
    0.67, 0.21, 0.67, 0.00, 0.00, 0.53, 0.00, 0.21, 0.53, //
    0.32, 0.67, 0.53, 0.16, 0.00, 0.32, 0.00, 0.32, 0.00, //
    0.00, 0.53, 0.16, 0.00, 0.67, 0.53, 0.00, 0.16, 0.00,
];

pub fn model_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../models").join(name)
}

pub fn golden_transition() -> TransitionMatrix {
    TransitionMatrix::new(F_TEXT.parse().unwrap(), 3).unwrap()
}

/// `C_β = Δ_9`; `{u1,u2}` on β1..β4, `{u2,u3}` on β5..β9.
pub fn golden_constraints() -> Constraints {
    Constraints::new(9, 3, 1..=9, |b| if b <= 4 { [1, 2].into() } else { [2, 3].into() }).unwrap()
}

/// The four printed laws as `(agent 1 position, agent 2 position) -> control
/// value` tables, turned into gain matrices by hand-encoding
/// `β = 3 a + b + 1` and `u = value + 1`.
pub fn printed_laws() -> Vec<LogicalMatrix> {
    let common = |a: usize, b: usize| -> Option<usize> {
        match (a, b) {
            (0, 2) | (1, 0) => Some(0),
            (0, 0) | (2, 0) | (2, 1) => Some(1),
            (1, 1) | (2, 2) => Some(2),
            _ => None,
        }
    };
    // (π((0,1)), π((1,2))) for π_1*..π_4*
    let varying = [(0, 1), (0, 2), (1, 1), (1, 2)];
    varying
        .iter()
        .map(|&(at01, at12)| {
            let mut cols = vec![0; 9];
            for a in 0..3 {
                for b in 0..3 {
                    let value = match (a, b) {
                        (0, 1) => at01,
                        (1, 2) => at12,
                        _ => common(a, b).unwrap(),
                    };
                    cols[3 * a + b] = value + 1;
                }
            }
            LogicalMatrix::new(3, cols).unwrap()
        })
        .collect()
}

/// Digits of a 1-based index, most significant first.
pub fn decode(index: usize, kappa: usize, len: usize) -> Vec<usize> {
    let mut rest = index - 1;
    let mut out = vec![0; len];
    for slot in out.iter_mut().rev() {
        *slot = rest % kappa;
        rest /= kappa;
    }
    out
}

pub fn encode(values: &[usize], kappa: usize) -> usize {
    values.iter().fold(0, |acc, v| acc * kappa + v) + 1
}

/// A random finite transition system with constraints and a target set.
#[derive(Debug, Clone)]
pub struct Instance {
    pub n: usize,
    pub m: usize,
    /// `succ[u-1][β-1]`.
    pub succ: Vec<Vec<usize>>,
    pub states: BTreeSet<usize>,
    /// `controls[β-1]`, empty off `C_β`.
    pub controls: Vec<BTreeSet<usize>>,
    pub target: BTreeSet<usize>,
}

impl Instance {
    pub fn random(rng: &mut ChaCha8Rng, n: usize, m: usize, target_density: f64) -> Instance {
        let succ: Vec<Vec<usize>> = (0..m)
            .map(|_| (0..n).map(|_| rng.random_range(1..=n)).collect())
            .collect();
        let mut states: BTreeSet<usize> = (1..=n).filter(|_| rng.random_bool(0.85)).collect();
        if states.is_empty() {
            states.insert(rng.random_range(1..=n));
        }
        let mut controls = vec![BTreeSet::new(); n];
        for &b in &states {
            let mut set: BTreeSet<usize> = (1..=m).filter(|_| rng.random_bool(0.7)).collect();
            if set.is_empty() {
                set.insert(rng.random_range(1..=m));
            }
            controls[b - 1] = set;
        }
        let mut target = BTreeSet::new();
        for &b in &states {
            for &u in &controls[b - 1] {
                if rng.random_bool(target_density) {
                    target.insert((u - 1) * n + b);
                }
            }
        }
        Instance {
            n,
            m,
            succ,
            states,
            controls,
            target,
        }
    }

    pub fn transition(&self) -> TransitionMatrix {
        let cols = self.succ.iter().flatten().copied().collect();
        TransitionMatrix::new(LogicalMatrix::new(self.n, cols).unwrap(), self.m).unwrap()
    }

    pub fn constraints(&self) -> Constraints {
        Constraints::new(self.n, self.m, self.states.iter().copied(), |b| self.controls[b - 1].clone())
            .unwrap()
    }

    pub fn z(&self, u: usize, b: usize) -> usize {
        (u - 1) * self.n + b
    }

    /// Controls at `b` whose profile lies in the target.
    fn target_controls(&self, b: usize) -> Vec<usize> {
        self.controls[b - 1]
            .iter()
            .copied()
            .filter(|&u| self.target.contains(&self.z(u, b)))
            .collect()
    }

    /// Largest subset `S` of the target's state projection such that every
    /// state in `S` has a target control keeping it in `S`, by enumerating
    /// all subsets.
    pub fn brute_force_lccis(&self) -> BTreeSet<usize> {
        let phi: Vec<usize> = (1..=self.n).filter(|&b| !self.target_controls(b).is_empty()).collect();
        let mut best = BTreeSet::new();
        for mask in 0u32..(1 << phi.len()) {
            let set: BTreeSet<usize> = phi
                .iter()
                .enumerate()
                .filter(|(i, _)| mask & (1 << i) != 0)
                .map(|(_, &b)| b)
                .collect();
            let invariant = set.iter().all(|&b| {
                self.target_controls(b)
                    .iter()
                    .any(|&u| set.contains(&self.succ[u - 1][b - 1]))
            });
            if invariant && set.len() > best.len() {
                best = set;
            }
        }
        best
    }

    pub fn law_count(&self) -> usize {
        self.states.iter().map(|&b| self.controls[b - 1].len()).product()
    }

    /// Whether some constrained law makes every trajectory from `C_β` stay
    /// admissible and end up cycling through target profiles only.
    pub fn brute_force_stabilizable(&self) -> bool {
        let states: Vec<usize> = self.states.iter().copied().collect();
        let options: Vec<Vec<usize>> = states
            .iter()
            .map(|&b| self.controls[b - 1].iter().copied().collect())
            .collect();
        let mut pick = vec![0usize; states.len()];
        loop {
            let mut law = vec![0usize; self.n + 1];
            for (k, &b) in states.iter().enumerate() {
                law[b] = options[k][pick[k]];
            }
            if self.law_stabilizes(&law) {
                return true;
            }
            let mut k = 0;
            loop {
                if k == pick.len() {
                    return false;
                }
                pick[k] += 1;
                if pick[k] < options[k].len() {
                    break;
                }
                pick[k] = 0;
                k += 1;
            }
        }
    }

    fn law_stabilizes(&self, law: &[usize]) -> bool {
        for &b0 in &self.states {
            let mut seen = vec![usize::MAX; self.n + 1];
            let mut path = Vec::new();
            let mut b = b0;
            loop {
                if !self.states.contains(&b) {
                    return false;
                }
                if seen[b] != usize::MAX {
                    // cycle is path[seen[b]..]
                    if path[seen[b]..]
                        .iter()
                        .any(|&c: &usize| !self.target.contains(&self.z(law[c], c)))
                    {
                        return false;
                    }
                    break;
                }
                seen[b] = path.len();
                path.push(b);
                b = self.succ[law[b] - 1][b - 1];
            }
        }
        true
    }
}
