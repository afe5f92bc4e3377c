//! TOML model files: schema, validation and materialization.
//!
//! ```toml
//! [ffn]
//! kappa = 3
//! n = 2
//! m = 1
//! transition = "δ_9[1 7 3 5 2 8 2 6 1 3 9 8 4 1 7 1 5 2 6 6 5 1 3 9 4 4 1]"
//! switching = "δ_3[...]"        # optional alongside `transition`
//! # or: switching + [[ffn.mode]] tables with `a` (n×n) and `b` (n×m)
//!
//! [ffn.constraints]
//! states = [1, 2, 3]            # default: every state
//! controls = [[1, 2], ...]      # one list per state 1..=N; default: all
//!
//! [[plant]]
//! a_closed = 0.4                # scalar or row-major nested arrays
//! a_open = 1.1
//! q = 1.0                       # or q_stein = { rate = 0.7, rhs = [[1, 0], [0, 1]] }
//! rho = 0.75
//! noise_cov = 1.0
//! initial = [1.0]               # or initial_cov = [[...]]
//!
//! [channel]
//! lambda = [[...], [...]]       # one row per plant, or [channel.primitives]
//!
//! [targets]
//! restricted = [3]
//! thresholds = [0.44, 0.42]     # overrides the computed thresholds
//!
//! [sim]
//! horizon = 50
//! replications = 100
//! seed = 1
//! law = "δ_3[...]"              # default: canonical synthesized law
//! compare_law = "δ_3[...]"
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::Deserialize;
use sha2::{Digest, Sha256};

use crate::cosim::PlantInit;
use crate::coupling::{
    canonical_weight, solve_stein, ChannelPrimitives, CouplingTable, PlantChannel, PlantModel,
};
use crate::error::{Error, Result};
use crate::ffn::{Constraints, Dims, FfnSpec, ModeCoefficients, SwitchingMap, TransitionMatrix};
use crate::stp::LogicalMatrix;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawModel {
    ffn: RawFfn,
    #[serde(default)]
    plant: Vec<RawPlant>,
    channel: Option<RawChannel>,
    targets: Option<RawTargets>,
    sim: Option<RawSim>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawFfn {
    kappa: usize,
    n: usize,
    m: usize,
    transition: Option<String>,
    switching: Option<String>,
    #[serde(default)]
    mode: Vec<RawMode>,
    constraints: Option<RawConstraints>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMode {
    a: Vec<Vec<usize>>,
    b: Vec<Vec<usize>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConstraints {
    states: Option<Vec<usize>>,
    controls: Option<Vec<Vec<usize>>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
enum RawMatrix {
    Scalar(f64),
    Rows(Vec<Vec<f64>>),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawStein {
    rate: f64,
    rhs: RawMatrix,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPlant {
    a_closed: RawMatrix,
    a_open: RawMatrix,
    q: Option<RawMatrix>,
    q_stein: Option<RawStein>,
    rho: f64,
    noise_cov: RawMatrix,
    initial: Option<Vec<f64>>,
    initial_cov: Option<RawMatrix>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawChannel {
    lambda: Option<Vec<Vec<f64>>>,
    primitives: Option<RawPrimitives>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPrimitives {
    levels: usize,
    plant: Vec<RawPlantChannel>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPlantChannel {
    gamma: Vec<Vec<f64>>,
    transmit: Vec<bool>,
    power: Vec<Vec<f64>>,
    decoding: Vec<Vec<f64>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTargets {
    restricted: Option<Vec<usize>>,
    thresholds: Option<Vec<f64>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSim {
    horizon: Option<usize>,
    replications: Option<usize>,
    seed: Option<u64>,
    initial_states: Option<Vec<usize>>,
    transient: Option<usize>,
    burn_in: Option<usize>,
    law: Option<String>,
    compare_law: Option<String>,
}

/// How the network dynamics are given.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Network {
    /// `F` entered as data, with the switching map `Σ` when known.
    Transition {
        f: TransitionMatrix,
        switching: Option<LogicalMatrix>,
    },
    /// Coefficient tables compiled on demand.
    Modes(FfnSpec),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Channel {
    Table(CouplingTable),
    Primitives(ChannelPrimitives),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlantEntry {
    pub model: PlantModel,
    pub initial: PlantInit,
    /// Stein recipe `(rate, rhs)` the weight was solved from, if any.
    pub stein: Option<(f64, DMatrix<f64>)>,
    /// Weight as solved, before sign normalization.
    pub q_solved: Option<DMatrix<f64>>,
    pub q_negated: bool,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Targets {
    pub restricted: Option<BTreeSet<usize>>,
    pub thresholds: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimSpec {
    pub horizon: usize,
    pub replications: usize,
    pub seed: u64,
    pub initial_states: Option<Vec<usize>>,
    pub transient: Option<usize>,
    pub burn_in: Option<usize>,
    pub law: Option<LogicalMatrix>,
    pub compare_law: Option<LogicalMatrix>,
}

impl Default for SimSpec {
    fn default() -> Self {
        SimSpec {
            horizon: 50,
            replications: 100,
            seed: 0,
            initial_states: None,
            transient: None,
            burn_in: None,
            law: None,
            compare_law: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub path: PathBuf,
    /// SHA-256 of the file contents.
    pub sha256: String,
    /// SHA-256 of each top-level section, canonicalized as JSON.
    pub section_sha256: BTreeMap<String, String>,
    pub dims: Dims,
    /// Number of switching modes `w`, when known.
    pub modes: Option<usize>,
    pub network: Network,
    pub constraints: Constraints,
    pub plants: Vec<PlantEntry>,
    pub channel: Option<Channel>,
    pub targets: Targets,
    pub sim: SimSpec,
    pub notes: Vec<String>,
}

impl Model {
    pub fn plant_models(&self) -> Vec<PlantModel> {
        self.plants.iter().map(|p| p.model.clone()).collect()
    }

    pub fn section_hash(&self, name: &str) -> &str {
        self.section_sha256.get(name).map_or("", String::as_str)
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn matrix(raw: &RawMatrix, path: &str) -> Result<DMatrix<f64>> {
    match raw {
        RawMatrix::Scalar(v) => Ok(DMatrix::from_element(1, 1, *v)),
        RawMatrix::Rows(rows) => {
            let r = rows.len();
            let c = rows.first().map_or(0, Vec::len);
            if r == 0 || c == 0 || rows.iter().any(|row| row.len() != c) {
                return Err(Error::validation(path, "matrix rows must be nonempty and of equal length"));
            }
            Ok(DMatrix::from_row_iterator(r, c, rows.iter().flatten().copied()))
        }
    }
}

fn logical(text: &str, path: &str) -> Result<LogicalMatrix> {
    text.parse::<LogicalMatrix>()
        .map_err(|e| Error::validation(path, e.to_string()))
}

/// Checks `law(β) ∈ C_u(β)` on every constrained state.
pub fn check_law(law: &LogicalMatrix, constraints: &Constraints, path: &str) -> Result<()> {
    if law.rows() != constraints.n_controls() || law.ncols() != constraints.n_states() {
        return Err(Error::validation(
            path,
            format!(
                "gain must be δ_{}[…] with {} columns",
                constraints.n_controls(),
                constraints.n_states()
            ),
        ));
    }
    for &b in constraints.states() {
        let u = law.col(b)?;
        if !constraints.allows(u, b) {
            return Err(Error::validation(
                path,
                format!("control {u} is not admissible at state {b}"),
            ));
        }
    }
    Ok(())
}

fn toml_error(origin: &Path, e: toml::de::Error) -> Error {
    Error::validation(
        format!("{}", origin.display()),
        e.to_string().trim_end().replace('\n', " | "),
    )
}

/// Reads and validates a model file.
pub fn load_model(path: &Path) -> Result<Model> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_model(&text, path)
}

/// Parses and validates model text; `origin` only labels errors and the report.
pub fn parse_model(text: &str, origin: &Path) -> Result<Model> {
    let raw: RawModel = toml::from_str(text).map_err(|e| toml_error(origin, e))?;
    let table: toml::Table = toml::from_str(text).map_err(|e| toml_error(origin, e))?;
    let section_sha256 = table
        .iter()
        .map(|(k, v)| {
            let json = serde_json::to_string(v).expect("toml values serialize");
            (k.clone(), sha256_hex(json.as_bytes()))
        })
        .collect();

    let mut notes = Vec::new();
    let f = &raw.ffn;
    let dims = Dims::new(f.kappa, f.n, f.m).map_err(|e| match e {
        Error::Validation { message, .. } => Error::validation("ffn.kappa", message),
        other => other,
    })?;
    let (n_states, n_controls) = (dims.states(), dims.controls());

    let constraints = match &f.constraints {
        None => Constraints::unconstrained(n_states, n_controls),
        Some(c) => {
            let states: Vec<usize> = c.states.clone().unwrap_or_else(|| (1..=n_states).collect());
            if let Some(lists) = &c.controls {
                if lists.len() != n_states {
                    return Err(Error::validation(
                        "ffn.constraints.controls",
                        format!("{} lists given, expected one per state ({n_states})", lists.len()),
                    ));
                }
            }
            Constraints::new(n_states, n_controls, states, |b| match &c.controls {
                Some(lists) => lists[b - 1].iter().copied().collect(),
                None => (1..=n_controls).collect(),
            })?
        }
    };

    let switching = f
        .switching
        .as_deref()
        .map(|s| logical(s, "ffn.switching"))
        .transpose()?;
    if let Some(sw) = &switching {
        if sw.ncols() != dims.profiles() {
            return Err(Error::validation(
                "ffn.switching",
                format!("{} columns, expected {}", sw.ncols(), dims.profiles()),
            ));
        }
    }
    let modes = switching.as_ref().map(LogicalMatrix::rows);
    let network = match (&f.transition, f.mode.is_empty()) {
        (Some(t), true) => {
            let fm = logical(t, "ffn.transition")?;
            if fm.rows() != n_states {
                return Err(Error::validation(
                    "ffn.transition",
                    format!("base {} does not match N = {n_states}", fm.rows()),
                ));
            }
            let f = TransitionMatrix::new(fm, n_controls)
                .map_err(|e| Error::validation("ffn.transition", e.to_string()))?;
            Network::Transition { f, switching }
        }
        (None, false) => {
            let theta = switching.ok_or_else(|| {
                Error::validation("ffn.switching", "mode tables require a switching map")
            })?;
            let coefficients = f
                .mode
                .iter()
                .map(|m| ModeCoefficients {
                    a: m.a.clone(),
                    b: m.b.clone(),
                })
                .collect();
            let spec = FfnSpec::new(dims, coefficients, SwitchingMap::from_theta(theta), constraints.clone())?;
            Network::Modes(spec)
        }
        (Some(_), false) => {
            return Err(Error::validation("ffn", "give either `transition` or `mode` tables, not both"))
        }
        (None, true) => return Err(Error::validation("ffn", "missing `transition` or `mode` tables")),
    };

    let mut plants = Vec::with_capacity(raw.plant.len());
    for (i, p) in raw.plant.iter().enumerate() {
        let at = |s: &str| format!("plant[{i}].{s}");
        let a_closed = matrix(&p.a_closed, &at("a_closed"))?;
        let a_open = matrix(&p.a_open, &at("a_open"))?;
        let xi = matrix(&p.noise_cov, &at("noise_cov"))?;
        let (q, stein, q_solved, q_negated) = match (&p.q, &p.q_stein) {
            (Some(q), None) => (matrix(q, &at("q"))?, None, None, false),
            (None, Some(s)) => {
                let rhs = matrix(&s.rhs, &at("q_stein.rhs"))?;
                let solved = solve_stein(&a_closed, s.rate, &rhs).map_err(|e| match e {
                    Error::Dimension(m) => Error::validation(at("q_stein"), m),
                    other => other,
                })?;
                let (q, negated) = canonical_weight(&solved)
                    .map_err(|e| Error::validation(at("q_stein"), e.to_string()))?;
                if negated {
                    notes.push(format!(
                        "plant {}: Stein solution is negative definite; using -Q as the Lyapunov weight",
                        i + 1
                    ));
                }
                (q, Some((s.rate, rhs)), Some(solved), negated)
            }
            _ => return Err(Error::validation(at("q"), "give exactly one of `q` and `q_stein`")),
        };
        let model = PlantModel {
            a_closed,
            a_open,
            q,
            rho: p.rho,
            xi_cov: xi,
        };
        model.validate(&format!("plant[{i}]"))?;
        let initial = match (&p.initial, &p.initial_cov) {
            (Some(x), None) => PlantInit::Fixed(DVector::from_column_slice(x)),
            (None, Some(c)) => PlantInit::Gaussian(matrix(c, &at("initial_cov"))?),
            (None, None) => PlantInit::Fixed(DVector::zeros(model.dim())),
            _ => return Err(Error::validation(at("initial"), "give at most one of `initial` and `initial_cov`")),
        };
        let d = match &initial {
            PlantInit::Fixed(x) => x.len(),
            PlantInit::Gaussian(c) => c.nrows(),
        };
        if d != model.dim() {
            return Err(Error::validation(at("initial"), format!("expected dimension {}", model.dim())));
        }
        plants.push(PlantEntry {
            model,
            initial,
            stein,
            q_solved,
            q_negated,
        });
    }

    let channel = match &raw.channel {
        None => None,
        Some(RawChannel {
            lambda: Some(rows),
            primitives: None,
        }) => {
            let table = CouplingTable::new(rows.clone())?;
            if table.profiles() != dims.profiles() {
                return Err(Error::validation(
                    "channel.lambda",
                    format!("rows have {} entries, expected {}", table.profiles(), dims.profiles()),
                ));
            }
            Some(Channel::Table(table))
        }
        Some(RawChannel {
            lambda: None,
            primitives: Some(p),
        }) => {
            let prim = ChannelPrimitives {
                levels: p.levels,
                plants: p
                    .plant
                    .iter()
                    .map(|c| PlantChannel {
                        gamma: c.gamma.clone(),
                        transmit: c.transmit.clone(),
                        power: c.power.clone(),
                        decoding: c.decoding.clone(),
                    })
                    .collect(),
            };
            prim.validate(dims.profiles())?;
            Some(Channel::Primitives(prim))
        }
        Some(_) => return Err(Error::validation("channel", "give exactly one of `lambda` and `primitives`")),
    };
    if let Some(ch) = &channel {
        let q = match ch {
            Channel::Table(t) => t.plants(),
            Channel::Primitives(p) => p.plants.len(),
        };
        if q != plants.len() {
            return Err(Error::validation(
                "channel",
                format!("{q} channel rows for {} plants", plants.len()),
            ));
        }
    }

    let mut targets = Targets::default();
    if let Some(t) = &raw.targets {
        if let Some(r) = &t.restricted {
            if let Some(b) = r.iter().find(|&&b| b == 0 || b > n_states) {
                return Err(Error::validation(
                    "targets.restricted",
                    format!("state {b} outside 1..={n_states}"),
                ));
            }
            targets.restricted = Some(r.iter().copied().collect());
        }
        if let Some(s) = &t.thresholds {
            if s.len() != plants.len() {
                return Err(Error::validation(
                    "targets.thresholds",
                    format!("{} thresholds for {} plants", s.len(), plants.len()),
                ));
            }
            if s.iter().any(|v| !v.is_finite()) {
                return Err(Error::validation("targets.thresholds", "thresholds must be finite"));
            }
            targets.thresholds = Some(s.clone());
        }
    }

    let mut sim = SimSpec::default();
    if let Some(s) = &raw.sim {
        sim.horizon = s.horizon.unwrap_or(sim.horizon);
        sim.replications = s.replications.unwrap_or(sim.replications);
        sim.seed = s.seed.unwrap_or(sim.seed);
        sim.initial_states = s.initial_states.clone();
        sim.transient = s.transient;
        sim.burn_in = s.burn_in;
        if sim.horizon == 0 {
            return Err(Error::validation("sim.horizon", "horizon must be at least 1"));
        }
        if sim.replications == 0 {
            return Err(Error::validation("sim.replications", "at least one replication is required"));
        }
        if let Some(states) = &sim.initial_states {
            if states.is_empty() {
                return Err(Error::validation("sim.initial_states", "no initial states given"));
            }
            if let Some(b) = states.iter().find(|b| !constraints.contains_state(**b)) {
                return Err(Error::validation(
                    "sim.initial_states",
                    format!("state {b} lies outside the state constraint set"),
                ));
            }
        }
        for (name, text, slot) in [
            ("sim.law", &s.law, &mut sim.law),
            ("sim.compare_law", &s.compare_law, &mut sim.compare_law),
        ] {
            if let Some(t) = text {
                let law = logical(t, name)?;
                check_law(&law, &constraints, name)?;
                *slot = Some(law);
            }
        }
    }

    Ok(Model {
        path: origin.to_path_buf(),
        sha256: sha256_hex(text.as_bytes()),
        section_sha256,
        dims,
        modes,
        network,
        constraints,
        plants,
        channel,
        targets,
        sim,
        notes,
    })
}
