//! Stage orchestration, run reports and artifact files.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::cosim::{
    lyapunov_report, mean_curves, simulate_closed_loop, write_mean_plot, ClosedLoop, LyapunovReport,
    SimConfig,
};
use crate::coupling::{
    coupling_rows, omega_set, success_threshold, CouplingTable, ThresholdRoute, ThresholdVector,
};
use crate::error::{Error, Result};
use crate::ffn::{compile_assr, TransitionMatrix};
use crate::model::{check_law, sha256_hex, Channel, Model, Network};
use crate::stp::LogicalMatrix;
use crate::synthesis::{check_closed_loop, synthesize, ClosedLoopCheck, TargetSet, Verdict};

/// Family sizes up to this are listed and checked law by law.
pub const LAW_LISTING_LIMIT: u128 = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    Compile,
    Thresholds,
    Synthesize,
    Simulate,
    Verify,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Compile => "compile",
            Command::Thresholds => "thresholds",
            Command::Synthesize => "synthesize",
            Command::Simulate => "simulate",
            Command::Verify => "verify",
        }
    }

    fn rank(self) -> u8 {
        match self {
            Command::Compile => 0,
            Command::Thresholds => 1,
            Command::Synthesize => 2,
            Command::Simulate | Command::Verify => 3,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RunOptions {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    /// Overrides `targets.restricted`.
    pub target: Option<BTreeSet<usize>>,
}

/// Content hashes of a stage's inputs and outputs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub input_sha256: String,
    pub output_sha256: String,
}

fn digest(parts: &[&str]) -> String {
    sha256_hex(parts.join("\n").as_bytes())
}

fn json_digest<T: Serialize>(value: &T) -> String {
    sha256_hex(serde_json::to_string(value).expect("report values serialize").as_bytes())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DimsSummary {
    pub kappa: usize,
    pub n: usize,
    pub m: usize,
    pub w: Option<usize>,
    pub states: usize,
    pub controls: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompileStage {
    pub transition: String,
    pub switching: Option<String>,
    pub c_z: Vec<usize>,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdStage {
    /// Raw thresholds; `None` stands for `-∞` (every probability suffices).
    pub raw: Vec<Option<f64>>,
    pub effective: Vec<f64>,
    /// Route per plant; `None` when the thresholds were given in the model.
    pub routes: Vec<Option<ThresholdRoute>>,
    pub lambda: Vec<Vec<f64>>,
    pub warnings: Vec<String>,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynthesisStage {
    pub omega: Vec<usize>,
    pub phi: Vec<usize>,
    pub invariant: Vec<usize>,
    pub core: Vec<usize>,
    pub verdict: Verdict,
    pub depths: BTreeMap<usize, usize>,
    /// Transient bound `T`, the largest BFS depth.
    pub transient: Option<usize>,
    pub family: Option<String>,
    pub family_size: Option<u64>,
    /// Every law in the family when it has at most [`LAW_LISTING_LIMIT`] members.
    pub laws: Vec<String>,
    /// Canonical law: smallest admissible control per state.
    pub selected_law: Option<String>,
    /// Exhaustive closed-loop check of every listed law.
    pub closed_loop: Option<ClosedLoopCheck>,
    pub closed_loop_all_laws: Option<bool>,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationStage {
    pub law: String,
    pub horizon: usize,
    pub replications: usize,
    pub seed: u64,
    pub transient: usize,
    pub burn_in: usize,
    pub initial_states: Vec<usize>,
    pub lyapunov: LyapunovReport,
    pub compare_law: Option<String>,
    pub compare_lyapunov: Option<LyapunovReport>,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub command: Command,
    pub model: String,
    pub model_sha256: String,
    pub dims: DimsSummary,
    pub compile: Option<CompileStage>,
    pub thresholds: Option<ThresholdStage>,
    pub synthesis: Option<SynthesisStage>,
    pub simulation: Option<SimulationStage>,
    pub notes: Vec<String>,
    pub files: Vec<String>,
    pub exit_code: i32,
}

fn set_text(s: &[usize]) -> String {
    let items: Vec<String> = s.iter().map(usize::to_string).collect();
    format!("{{{}}}", items.join(", "))
}

impl RunReport {
    /// Human-readable summary.
    pub fn render_text(&self) -> String {
        let mut t = String::new();
        let d = &self.dims;
        let _ = writeln!(t, "command     {}", self.command.name());
        let _ = writeln!(t, "model       {} (sha256 {})", self.model, &self.model_sha256[..12]);
        let w = d.w.map_or("?".into(), |w| w.to_string());
        let _ = writeln!(
            t,
            "network     kappa={} n={} m={} w={w} N={} M={}",
            d.kappa, d.n, d.m, d.states, d.controls
        );
        for note in &self.notes {
            let _ = writeln!(t, "note        {note}");
        }
        if let Some(c) = &self.compile {
            let _ = writeln!(t, "F           {}", c.transition);
            if let Some(s) = &c.switching {
                let _ = writeln!(t, "Sigma       {s}");
            }
            let _ = writeln!(t, "C_z         {}", set_text(&c.c_z));
        }
        if let Some(th) = &self.thresholds {
            for (i, (raw, eff)) in th.raw.iter().zip(&th.effective).enumerate() {
                let raw = raw.map_or("-inf".into(), |v| format!("{v:.6}"));
                let route = match th.routes[i] {
                    Some(ThresholdRoute::RayleighSupremum) => "Rayleigh supremum",
                    Some(ThresholdRoute::DecayMargin) => "decay margin",
                    None => "given",
                };
                let _ = writeln!(t, "s_{}         {raw} (effective {eff:.6}, {route})", i + 1);
            }
            for w in &th.warnings {
                let _ = writeln!(t, "warning     {w}");
            }
        }
        if let Some(s) = &self.synthesis {
            let _ = writeln!(t, "Omega(s)    {}", set_text(&s.omega));
            let _ = writeln!(t, "Phi         {}", set_text(&s.phi));
            let _ = writeln!(t, "I(Omega)    {}", set_text(&s.invariant));
            let _ = writeln!(t, "core        {}", set_text(&s.core));
            match &s.verdict {
                Verdict::Stabilizable => {
                    let _ = writeln!(t, "verdict     stabilizable");
                }
                Verdict::NotStabilizable { stage, reason } => {
                    let _ = writeln!(t, "verdict     not stabilizable at {stage}: {reason}");
                }
            }
            if !s.depths.is_empty() {
                let depths: Vec<String> = s.depths.iter().map(|(b, d)| format!("{b}:{d}")).collect();
                let _ = writeln!(t, "depths      {}", depths.join(" "));
            }
            if let Some(tr) = s.transient {
                let _ = writeln!(t, "transient   T = {tr}");
            }
            if let (Some(f), Some(n)) = (&s.family, s.family_size) {
                let _ = writeln!(t, "gains       {f} ({n} laws)");
            }
            for law in &s.laws {
                let _ = writeln!(t, "            {law}");
            }
            if let Some(l) = &s.selected_law {
                let _ = writeln!(t, "selected    {l}");
            }
            if let Some(ok) = s.closed_loop_all_laws {
                let _ = writeln!(t, "closed loop {}", if ok { "all listed laws absorb and stay" } else { "FAILED" });
            }
        }
        if let Some(sim) = &self.simulation {
            let _ = writeln!(
                t,
                "simulation  law {} | K={} R={} seed={} T={} burn-in={} initial states {}",
                sim.law,
                sim.horizon,
                sim.replications,
                sim.seed,
                sim.transient,
                sim.burn_in,
                set_text(&sim.initial_states)
            );
            render_lyapunov(&mut t, "", &sim.lyapunov);
            if let (Some(l), Some(r)) = (&sim.compare_law, &sim.compare_lyapunov) {
                let _ = writeln!(t, "compare     law {l}");
                render_lyapunov(&mut t, "(compare) ", r);
            }
        }
        for f in &self.files {
            let _ = writeln!(t, "wrote       {f}");
        }
        let _ = writeln!(t, "exit        {}", self.exit_code);
        t
    }
}

fn render_lyapunov(t: &mut String, tag: &str, r: &LyapunovReport) {
    for p in &r.plants {
        let long = p
            .long_run
            .map_or("n/a".into(), |(m, se)| format!("{m:.4} ± {se:.4}"));
        let _ = writeln!(
            t,
            "lyapunov    {tag}plant {}: {} violations in {} checks (k ≥ {}), worst margin {}, long-run V {long} vs bound {:.4} [{}]",
            p.plant + 1,
            p.violations,
            p.checked,
            r.transient,
            p.worst_margin.map_or("n/a".into(), |m| format!("{m:.4}")),
            p.steady_bound,
            if p.long_run_ok { "ok" } else { "exceeded" }
        );
    }
}

/// Writes `F` in δ notation on a single line.
pub fn write_transition(path: &Path, f: &LogicalMatrix) -> Result<()> {
    fs::write(path, format!("{f}\n")).map_err(|e| Error::io(path, e))
}

pub fn read_transition(path: &Path, n_controls: usize) -> Result<TransitionMatrix> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let f: LogicalMatrix = text.trim().parse()?;
    TransitionMatrix::new(f, n_controls)
}

/// `lambda.csv`: columns `z, lambda_1, …, lambda_q`.
pub fn write_lambda_csv(path: &Path, table: &CouplingTable) -> Result<()> {
    let mut out = String::from("z");
    for i in 1..=table.plants() {
        let _ = write!(out, ",lambda_{i}");
    }
    out.push('\n');
    for z in 1..=table.profiles() {
        let _ = write!(out, "{z}");
        for i in 0..table.plants() {
            let _ = write!(out, ",{}", table.lambda(i, z));
        }
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_lambda_csv(path: &Path) -> Result<CouplingTable> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
    let plants = reader
        .headers()
        .map_err(|e| Error::Parse(e.to_string()))?
        .len()
        .saturating_sub(1);
    let mut rows = vec![Vec::new(); plants];
    for rec in reader.records() {
        let rec = rec.map_err(|e| Error::Parse(e.to_string()))?;
        for (i, row) in rows.iter_mut().enumerate() {
            let v: f64 = rec[i + 1]
                .parse()
                .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
            row.push(v);
        }
    }
    CouplingTable::new(rows)
}

pub fn read_report(path: &Path) -> Result<RunReport> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
}

struct Context<'a> {
    model: &'a Model,
    opts: &'a RunOptions,
    files: Vec<String>,
}

impl Context<'_> {
    fn out(&self) -> Option<&Path> {
        self.opts.out.as_deref()
    }

    fn emit(&mut self, name: &str, write: impl FnOnce(&Path) -> Result<()>) -> Result<()> {
        if let Some(dir) = self.out() {
            let path = dir.join(name);
            write(&path)?;
            self.files.push(path.display().to_string());
        }
        Ok(())
    }
}

/// Runs the stages needed for `command`, writing artifacts under
/// `opts.out` when given. A "not stabilizable" outcome is reported through
/// the report's exit code rather than as an error.
pub fn run_pipeline(model: &Model, command: Command, opts: &RunOptions) -> Result<RunReport> {
    if let Some(dir) = &opts.out {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut ctx = Context {
        model,
        opts,
        files: Vec::new(),
    };
    let d = model.dims;
    let mut report = RunReport {
        command,
        model: model.path.display().to_string(),
        model_sha256: model.sha256.clone(),
        dims: DimsSummary {
            kappa: d.kappa,
            n: d.n,
            m: d.m,
            w: model.modes.or(match &model.network {
                Network::Modes(spec) => Some(spec.modes.len()),
                Network::Transition { .. } => None,
            }),
            states: d.states(),
            controls: d.controls(),
        },
        compile: None,
        thresholds: None,
        synthesis: None,
        simulation: None,
        notes: model.notes.clone(),
        files: Vec::new(),
        exit_code: 0,
    };

    let (f, compile) = compile_stage(&mut ctx)?;
    report.compile = Some(compile);
    if command.rank() >= 1 {
        let (table, thresholds, stage) = threshold_stage(&mut ctx)?;
        report.thresholds = Some(stage);
        if command.rank() >= 2 {
            let compile_out = &report.compile.as_ref().unwrap().provenance.output_sha256;
            let thresholds_out = &report.thresholds.as_ref().unwrap().provenance.output_sha256;
            let (stage, law) = synthesis_stage(&mut ctx, &f, &table, &thresholds, compile_out, thresholds_out)?;
            let stabilizable = stage.verdict == Verdict::Stabilizable;
            let listed_ok = stage.closed_loop_all_laws.unwrap_or(true);
            let transient = stage.transient;
            let synth_out = stage.provenance.output_sha256.clone();
            report.synthesis = Some(stage);
            if !stabilizable {
                report.exit_code = 2;
            }
            if command.rank() >= 3 {
                let chosen = model.sim.law.clone().or(law);
                match chosen {
                    Some(law) => {
                        let sim = simulation_stage(&mut ctx, &f, &table, &law, transient, &synth_out)?;
                        if command == Command::Verify
                            && stabilizable
                            && (!sim.lyapunov.passed() || !listed_ok)
                        {
                            report.exit_code = 1;
                        }
                        report.simulation = Some(sim);
                    }
                    None => report.exit_code = 2,
                }
            }
        }
    }

    report.files = ctx.files;
    if let Some(dir) = &opts.out {
        let json = dir.join("report.json");
        let text = dir.join("report.txt");
        report.files.push(json.display().to_string());
        report.files.push(text.display().to_string());
        let body = serde_json::to_string_pretty(&report).expect("report serializes");
        fs::write(&json, body).map_err(|e| Error::io(&json, e))?;
        fs::write(&text, report.render_text()).map_err(|e| Error::io(&text, e))?;
    }
    Ok(report)
}

fn compile_stage(ctx: &mut Context<'_>) -> Result<(TransitionMatrix, CompileStage)> {
    let model = ctx.model;
    let (f, switching) = match &model.network {
        Network::Transition { f, switching } => (f.clone(), switching.clone()),
        Network::Modes(spec) => (compile_assr(spec)?, Some(spec.switching.theta().clone())),
    };
    let c_z: Vec<usize> = model.constraints.admissible_z_set()?.into_iter().collect();
    let transition = f.matrix().to_string();
    ctx.emit("transition.txt", |p| write_transition(p, f.matrix()))?;
    if let Some(sw) = &switching {
        ctx.emit("switching.txt", |p| write_transition(p, sw))?;
    }
    let output = digest(&[&transition, &set_text(&c_z)]);
    let stage = CompileStage {
        transition,
        switching: switching.map(|s| s.to_string()),
        c_z,
        provenance: Provenance {
            input_sha256: digest(&[model.section_hash("ffn")]),
            output_sha256: output,
        },
    };
    Ok((f, stage))
}

fn threshold_stage(ctx: &mut Context<'_>) -> Result<(CouplingTable, ThresholdVector, ThresholdStage)> {
    let model = ctx.model;
    if model.plants.is_empty() {
        return Err(Error::validation("plant", "at least one plant is required"));
    }
    let (table, warnings) = match &model.channel {
        None => return Err(Error::validation("channel", "a channel section is required")),
        Some(Channel::Table(t)) => (t.clone(), Vec::new()),
        Some(Channel::Primitives(p)) => {
            let out = coupling_rows(p)?;
            (out.table, out.warnings)
        }
    };
    let (vector, routes) = match &model.targets.thresholds {
        Some(s) => (ThresholdVector::fixed(s.clone()), vec![None; s.len()]),
        None => {
            let mut ts = Vec::new();
            for (i, p) in model.plants.iter().enumerate() {
                let t = success_threshold(&p.model).map_err(|e| match e {
                    Error::Numeric(m) => Error::Numeric(format!("plant {}: {m}", i + 1)),
                    other => other,
                })?;
                ts.push(t);
            }
            let routes = ts.iter().map(|t| Some(t.route)).collect();
            (ThresholdVector::from_thresholds(&ts), routes)
        }
    };
    ctx.emit("lambda.csv", |p| write_lambda_csv(p, &table))?;
    let raw: Vec<Option<f64>> = vector.raw.iter().map(|v| v.is_finite().then_some(*v)).collect();
    let output = json_digest(&(&raw, &vector.effective, table.rows()));
    let stage = ThresholdStage {
        raw,
        effective: vector.effective.clone(),
        routes,
        lambda: table.rows().to_vec(),
        warnings,
        provenance: Provenance {
            input_sha256: digest(&[
                model.section_hash("plant"),
                model.section_hash("channel"),
                model.section_hash("targets"),
            ]),
            output_sha256: output,
        },
    };
    Ok((table, vector, stage))
}

fn synthesis_stage(
    ctx: &mut Context<'_>,
    f: &TransitionMatrix,
    table: &CouplingTable,
    thresholds: &ThresholdVector,
    compile_out: &str,
    thresholds_out: &str,
) -> Result<(SynthesisStage, Option<LogicalMatrix>)> {
    let model = ctx.model;
    let constraints = &model.constraints;
    let c_z = constraints.admissible_z_set()?;
    let omega = omega_set(table, thresholds, &c_z)?;
    let restricted = ctx.opts.target.as_ref().or(model.targets.restricted.as_ref());
    if let Some(core) = restricted {
        if let Some(b) = core.iter().find(|&&b| b == 0 || b > constraints.n_states()) {
            return Err(Error::validation("target", format!("state {b} outside 1..={}", constraints.n_states())));
        }
    }
    let target = TargetSet(omega.clone());
    let out = synthesize(f, &target, constraints, restricted)?;

    let mut laws = Vec::new();
    let mut closed_loop = None;
    let mut closed_loop_all = None;
    let mut selected = None;
    let mut family_size = None;
    if let Some(g) = &out.gains {
        let canonical = g.canonical();
        check_law(&canonical, constraints, "synthesis")
            .map_err(|e| Error::Internal(format!("canonical law is inadmissible: {e}")))?;
        let check = check_closed_loop(f, &canonical, &out.core, constraints)?;
        let size = g.size(constraints);
        family_size = Some(u64::try_from(size).unwrap_or(u64::MAX));
        if size <= LAW_LISTING_LIMIT {
            let mut all_ok = true;
            for law in g.laws(constraints) {
                let c = check_closed_loop(f, &law, &out.core, constraints)?;
                all_ok &= c.admissible && c.stays && c.all_entered(constraints);
                laws.push(law.to_string());
            }
            closed_loop_all = Some(all_ok);
        }
        closed_loop = Some(check);
        selected = Some(canonical);
        let rows: Vec<(usize, String, usize)> = (1..=g.n_states())
            .map(|b| {
                let opts: Vec<String> = g.options(b).iter().map(usize::to_string).collect();
                (b, opts.join(";"), *g.options(b).first().unwrap())
            })
            .collect();
        ctx.emit("gains.csv", |p| {
            let mut s = String::from("state,options,canonical\n");
            for (b, o, c) in &rows {
                let _ = writeln!(s, "{b},{o},{c}");
            }
            fs::write(p, s).map_err(|e| Error::io(p, e))
        })?;
        if !laws.is_empty() {
            let body = laws.join("\n") + "\n";
            ctx.emit("laws.txt", |p| fs::write(p, body).map_err(|e| Error::io(p, e)))?;
        }
    }

    let cli_target = ctx
        .opts
        .target
        .as_ref()
        .map_or(String::new(), |t| set_text(&t.iter().copied().collect::<Vec<_>>()));
    let mut stage = SynthesisStage {
        omega: omega.into_iter().collect(),
        phi: out.phi.iter().copied().collect(),
        invariant: out.invariant.states.iter().copied().collect(),
        core: out.core.iter().copied().collect(),
        verdict: out.verdict.clone(),
        depths: out.certificate.as_ref().map(|c| c.depth.clone()).unwrap_or_default(),
        transient: out
            .certificate
            .as_ref()
            .filter(|c| c.stabilizable)
            .map(|c| c.max_depth()),
        family: out.gains.as_ref().map(|g| g.to_string()),
        family_size,
        laws,
        selected_law: selected.as_ref().map(|l| l.to_string()),
        closed_loop,
        closed_loop_all_laws: closed_loop_all,
        provenance: Provenance {
            input_sha256: digest(&[compile_out, thresholds_out, model.section_hash("targets"), &cli_target]),
            output_sha256: String::new(),
        },
    };
    stage.provenance.output_sha256 = json_digest(&(
        &stage.omega,
        &stage.invariant,
        &stage.core,
        &stage.verdict,
        &stage.depths,
        &stage.family,
    ));
    Ok((stage, selected))
}

fn simulation_stage(
    ctx: &mut Context<'_>,
    f: &TransitionMatrix,
    table: &CouplingTable,
    law: &LogicalMatrix,
    transient: Option<usize>,
    synth_out: &str,
) -> Result<SimulationStage> {
    let model = ctx.model;
    let spec = &model.sim;
    let plants = model.plant_models();
    let transient = spec.transient.or(transient).unwrap_or(0);
    let burn_in = spec.burn_in.unwrap_or(transient);
    let config = SimConfig {
        horizon: spec.horizon,
        replications: spec.replications,
        seed: ctx.opts.seed.unwrap_or(spec.seed),
        initial_states: spec
            .initial_states
            .clone()
            .unwrap_or_else(|| model.constraints.states().iter().copied().collect()),
        plant_initial: model.plants.iter().map(|p| p.initial.clone()).collect(),
        transient,
        burn_in,
    };
    let run = |law: &LogicalMatrix| -> Result<(Vec<_>, LyapunovReport)> {
        let sys = ClosedLoop {
            transition: f,
            law,
            constraints: &model.constraints,
            plants: &plants,
            coupling: table,
        };
        let traj = simulate_closed_loop(&sys, &config)?;
        let report = lyapunov_report(&traj, &plants, table, transient, burn_in);
        Ok((traj, report))
    };
    let (traj, lyapunov) = run(law)?;
    let mut series = vec![("synthesized", mean_curves(&traj, plants.len()))];
    if let Some(dir) = ctx.out().map(Path::to_path_buf) {
        for p in crate::cosim::export_traces(&traj, plants.len(), &dir)? {
            ctx.files.push(p.display().to_string());
        }
    }
    let compare = match &spec.compare_law {
        Some(c) => {
            let (t, r) = run(c)?;
            series.push(("comparison", mean_curves(&t, plants.len())));
            Some(r)
        }
        None => None,
    };
    ctx.emit("mean_lyapunov.csv", |p| {
        let mut s = String::from("law,plant,k,mean_lyapunov\n");
        for (label, curves) in &series {
            for (i, curve) in curves.iter().enumerate() {
                for (k, v) in curve.iter().enumerate() {
                    let _ = writeln!(s, "{label},{},{k},{v}", i + 1);
                }
            }
        }
        fs::write(p, s).map_err(|e| Error::io(p, e))
    })?;
    ctx.emit("mean_lyapunov.svg", |p| write_mean_plot(p, &series))?;

    let output = json_digest(&(&lyapunov, &compare));
    Ok(SimulationStage {
        law: law.to_string(),
        horizon: config.horizon,
        replications: config.replications,
        seed: config.seed,
        transient,
        burn_in,
        initial_states: config.initial_states.clone(),
        lyapunov,
        compare_law: spec.compare_law.as_ref().map(|l| l.to_string()),
        compare_lyapunov: compare,
        provenance: Provenance {
            input_sha256: digest(&[
                synth_out,
                model.section_hash("sim"),
                model.section_hash("plant"),
                &config.seed.to_string(),
                &law.to_string(),
            ]),
            output_sha256: output,
        },
    })
}

/// Parses a target set written as `3`, `1,3` or `{1, 3}`.
pub fn parse_target(text: &str) -> Result<BTreeSet<usize>> {
    let inner = text.trim().trim_start_matches('{').trim_end_matches('}');
    inner
        .split(|c: char| c == ',' || c.is_whitespace())
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<usize>()
                .map_err(|_| Error::validation("--target", format!("`{s}` is not a state index")))
        })
        .collect()
}
