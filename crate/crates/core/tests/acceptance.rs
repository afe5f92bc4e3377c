//! Acceptance suite: one PASS/FAIL line per criterion, each with its time
//! budget. Runs without the libtest harness so the lines always print.

mod common;

use std::collections::BTreeSet;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use opctl::coupling::{
    canonical_weight, omega_set, solve_stein, success_threshold, CouplingTable, PlantModel,
    ThresholdVector,
};
use opctl::ffn::{compile_assr, Constraints, Dims, FfnSpec, ModeCoefficients, SwitchingMap};
use opctl::model::load_model;
use opctl::pipeline::{run_pipeline, Command, RunOptions};
use opctl::stp::{mod_add_matrix, mod_mul_matrix, stp_logical, LogicalMatrix};
use opctl::synthesis::{
    bfs_certificate, build_contracted_graph, lccis, synthesize, synthesize_gains, verify_ccis,
    TargetSet, Verdict,
};

use common::*;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn delta(base: usize, index: usize) -> LogicalMatrix {
    LogicalMatrix::delta(base, index).unwrap()
}

fn ac1() -> Outcome {
    let add = mod_add_matrix(3).map_err(|e| e.to_string())?;
    let mul = mod_mul_matrix(3).map_err(|e| e.to_string())?;
    ensure(add.to_string() == "δ_3[1 2 3 2 3 1 3 1 2]", || format!("F_+ = {add}"))?;
    ensure(mul.to_string() == "δ_3[1 1 1 1 2 3 1 3 2]", || format!("F_× = {mul}"))?;
    let mut checked = 0;
    for kappa in [2usize, 3, 5, 7] {
        let add = mod_add_matrix(kappa).map_err(|e| e.to_string())?;
        let mul = mod_mul_matrix(kappa).map_err(|e| e.to_string())?;
        for a in 0..kappa {
            for b in 0..kappa {
                let x = stp_logical(&stp_logical(&add, &delta(kappa, a + 1)), &delta(kappa, b + 1));
                let y = stp_logical(&stp_logical(&mul, &delta(kappa, a + 1)), &delta(kappa, b + 1));
                ensure(x == delta(kappa, (a + b) % kappa + 1), || format!("{a}+{b} mod {kappa}"))?;
                ensure(y == delta(kappa, (a * b) % kappa + 1), || format!("{a}*{b} mod {kappa}"))?;
                checked += 2;
            }
        }
    }
    Ok(format!("{checked} field operations"))
}

fn random_spec(rng: &mut ChaCha8Rng) -> FfnSpec {
    let kappa = [2, 3][rng.random_range(0..2)];
    let n = rng.random_range(1..=2);
    let m = rng.random_range(0..=2);
    let w = rng.random_range(1..=3);
    let dims = Dims::new(kappa, n, m).unwrap();
    let table = |rng: &mut ChaCha8Rng, r: usize, c: usize| -> Vec<Vec<usize>> {
        (0..r).map(|_| (0..c).map(|_| rng.random_range(0..kappa)).collect()).collect()
    };
    let modes = (0..w)
        .map(|_| ModeCoefficients {
            a: table(rng, n, n),
            b: table(rng, n, m),
        })
        .collect();
    let per_profile = (0..dims.profiles()).map(|_| rng.random_range(1..=w)).collect();
    let switching = SwitchingMap::from_modes(w, per_profile).unwrap();
    let constraints = Constraints::unconstrained(dims.states(), dims.controls());
    FfnSpec::new(dims, modes, switching, constraints).unwrap()
}

fn ac2() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0xA5_5A);
    let mut profiles = 0;
    let specs = 250;
    for s in 0..specs {
        let spec = random_spec(&mut rng);
        let f = compile_assr(&spec).map_err(|e| e.to_string())?;
        let Dims { kappa, n, m } = spec.dims;
        let (nn, mm) = (spec.dims.states(), spec.dims.controls());
        for u in 1..=mm {
            for b in 1..=nn {
                let bv = decode(b, kappa, n);
                let uv = decode(u, kappa, m);
                let mode = spec.switching.theta().columns()[(u - 1) * nn + b - 1];
                let coeffs = &spec.modes[mode - 1];
                let next: Vec<usize> = (0..n)
                    .map(|i| {
                        let s: usize = (0..n).map(|j| coeffs.a[i][j] * bv[j]).sum::<usize>()
                            + (0..m).map(|l| coeffs.b[i][l] * uv[l]).sum::<usize>();
                        s % kappa
                    })
                    .collect();
                ensure(f.successor(u, b) == encode(&next, kappa), || {
                    format!("spec {s} (κ={kappa} n={n} m={m}): profile u={u} β={b}")
                })?;
                profiles += 1;
            }
        }
    }
    Ok(format!("{specs} specs, {profiles} profiles"))
}

fn ac3() -> Outcome {
    let s = |v: f64| DMatrix::from_element(1, 1, v);
    let p1 = PlantModel::new(s(0.4), s(1.1), s(1.0), 0.75, s(1.0)).map_err(|e| e.to_string())?;
    let s1 = success_threshold(&p1).map_err(|e| e.to_string())?.raw;
    let oracle = (1.21 - 0.75) / (1.21 - 0.16);
    ensure((s1 - 0.4381).abs() <= 0.005 && (s1 - oracle).abs() < 1e-12, || format!("s_1 = {s1}"))?;

    let ac = DMatrix::from_row_slice(2, 2, &[-0.4, -0.1, 0.1, 0.6]);
    let ao = DMatrix::from_row_slice(2, 2, &[-1.0, -0.4, -0.5, 0.3]);
    let id = DMatrix::<f64>::identity(2, 2);
    let q2 = solve_stein(&ac, 0.7, &id).map_err(|e| e.to_string())?;
    let residual = ac.transpose() * &q2 * &ac - &q2 * 0.7 - &id;
    let inf_norm = residual
        .row_iter()
        .map(|r| r.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max);
    ensure(inf_norm <= 1e-9, || format!("Stein residual {inf_norm:e}"))?;
    let (weight, _) = canonical_weight(&q2).map_err(|e| e.to_string())?;
    let p2 = PlantModel::new(ac, ao, weight, 0.95, id).map_err(|e| e.to_string())?;
    let s2 = success_threshold(&p2).map_err(|e| e.to_string())?.raw;
    ensure((s2 - 0.42).abs() <= 0.01, || format!("s_2 = {s2}"))?;
    Ok(format!("s_1 = {s1:.4}, s_2 = {s2:.4}, residual {inf_norm:.1e}"))
}

fn golden_omega() -> Result<BTreeSet<usize>, String> {
    let table = CouplingTable::new(vec![LAMBDA_1.to_vec(), LAMBDA_2.to_vec()]).map_err(|e| e.to_string())?;
    let c_z = golden_constraints().admissible_z_set().map_err(|e| e.to_string())?;
    let expected_cz: BTreeSet<usize> = (1..=4).chain(10..=18).chain(23..=27).collect();
    ensure(c_z == expected_cz, || format!("C_z = {c_z:?}"))?;
    omega_set(&table, &ThresholdVector::fixed(vec![0.44, 0.42]), &c_z).map_err(|e| e.to_string())
}

fn ac4() -> Outcome {
    let omega = golden_omega()?;
    ensure(omega == [1, 3, 11].into(), || format!("Ω = {omega:?}"))?;
    Ok("Ω(s) = {1, 3, 11}".into())
}

fn ac5() -> Outcome {
    let f = golden_transition();
    let c = golden_constraints();
    let target = TargetSet(golden_omega()?);
    let inv = lccis(&f, &target, &c);
    ensure(inv.states == [1, 3].into(), || format!("I = {:?}", inv.states))?;
    let check = verify_ccis(&f, &[3].into(), &target, &c);
    ensure(check.holds && check.witnesses.get(&3) == Some(&1), || format!("{check:?}"))?;

    let mut rng = ChaCha8Rng::seed_from_u64(0x1CC15);
    let mut instances = 0;
    let mut nonempty = 0;
    while instances < 150 {
        let n = rng.random_range(2..=14);
        let m = rng.random_range(1..=3);
        let density = rng.random_range(0.3..0.9);
        let inst = Instance::random(&mut rng, n, m, density);
        let phi: BTreeSet<usize> = inst.target.iter().map(|z| (z - 1) % n + 1).collect();
        if phi.len() > 12 {
            continue;
        }
        let got = lccis(&inst.transition(), &TargetSet(inst.target.clone()), &inst.constraints()).states;
        let want = inst.brute_force_lccis();
        ensure(got == want, || format!("instance {instances}: lccis {got:?} vs oracle {want:?}"))?;
        nonempty += usize::from(!want.is_empty());
        instances += 1;
    }
    Ok(format!("I = {{1, 3}}, witness u1; oracle agrees on {instances} instances ({nonempty} nonempty)"))
}

fn ac6() -> Outcome {
    let f = golden_transition();
    let c = golden_constraints();
    let target = TargetSet(golden_omega()?);
    let core: BTreeSet<usize> = [3].into();
    let graph = build_contracted_graph(&f, &core, &c).map_err(|e| e.to_string())?;
    let cert = bfs_certificate(&graph);
    ensure(cert.stabilizable, || format!("unreached {:?}", cert.unreached))?;
    let expected = [(1, 1), (5, 1), (4, 2), (7, 2), (8, 2), (9, 2), (2, 3), (6, 3)].into();
    ensure(cert.depth == expected, || format!("depths {:?}", cert.depth))?;
    let gains = synthesize_gains(&f, &target, &core, &cert, &c).map_err(|e| e.to_string())?;
    let got: BTreeSet<String> = gains.laws(&c).map(|l| l.to_string()).collect();
    let want: BTreeSet<String> = printed_laws().iter().map(|l| l.to_string()).collect();
    ensure(got == want && got.len() == 4, || format!("laws {got:?}"))?;
    Ok(format!("depths match, family {gains}"))
}

fn ac7() -> Outcome {
    let f = golden_transition();
    let c = golden_constraints();
    let mut worst = 0;
    for (l, law) in printed_laws().iter().enumerate() {
        for b0 in 1..=9 {
            let mut beta = b0;
            let mut entered = None;
            for k in 0..=20 {
                let u = law.columns()[beta - 1];
                ensure(c.allows(u, beta), || format!("law {l}: u{u} at β{beta}"))?;
                if beta == 3 {
                    entered.get_or_insert(k);
                } else if entered.is_some() {
                    return Err(format!("law {l} leaves β3 from β0 = {b0} at k = {k}"));
                }
                beta = f.successor(u, beta);
            }
            let k = entered.ok_or_else(|| format!("law {l} never reaches β3 from {b0}"))?;
            ensure(k <= 3, || format!("law {l}: β0 = {b0} absorbed at k = {k}"))?;
            worst = worst.max(k);
        }
    }
    Ok(format!("4 laws × 9 initial states, latest absorption at k = {worst}"))
}

fn ac8() -> Outcome {
    let model = load_model(&model_path("agv.toml")).map_err(|e| e.to_string())?;
    let report = run_pipeline(&model, Command::Simulate, &RunOptions::default()).map_err(|e| e.to_string())?;
    let sim = report.simulation.ok_or("no simulation stage")?;
    ensure(sim.law == printed_laws()[0].to_string(), || format!("law {}", sim.law))?;
    ensure(sim.replications == 100 && sim.horizon == 50 && sim.transient == 3, || {
        format!("R={} K={} T={}", sim.replications, sim.horizon, sim.transient)
    })?;
    let mut detail = Vec::new();
    for p in &sim.lyapunov.plants {
        let i = p.plant + 1;
        ensure(p.violations == 0 && p.checked > 0, || {
            format!("plant {i}: {} violations, first {:?}", p.violations, p.first_violation)
        })?;
        let (mean, se) = p.long_run.ok_or("no long-run samples")?;
        ensure(mean <= p.steady_bound + 3.0 * se, || {
            format!("plant {i}: long-run V {mean} > {} + 3·{se}", p.steady_bound)
        })?;
        let at = p.success.get(&3).ok_or("absorbed profile z = 3 never visited")?;
        ensure(at.within_three_sigma(), || {
            format!("plant {i}: success {}/{} vs λ = {}", at.successes, at.trials, at.expected)
        })?;
        detail.push(format!(
            "plant {i}: 0/{} violations, V̄ {mean:.3} ≤ {:.3}, success {:.4} vs {:.2}",
            p.checked,
            p.steady_bound,
            at.rate(),
            at.expected
        ));
    }
    Ok(detail.join("; "))
}

fn ac9() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0xE9);
    let (mut total, mut positive) = (0, 0);
    while total < 80 {
        let n = rng.random_range(2..=9);
        let m = rng.random_range(1..=3);
        if (m as f64).powi(n as i32) > 2e4 {
            continue;
        }
        let density = rng.random_range(0.3..0.95);
        let inst = Instance::random(&mut rng, n, m, density);
        if inst.target.is_empty() {
            continue;
        }
        let out = synthesize(&inst.transition(), &TargetSet(inst.target.clone()), &inst.constraints(), None)
            .map_err(|e| e.to_string())?;
        let verdict = out.verdict == Verdict::Stabilizable;
        let oracle = inst.brute_force_stabilizable();
        ensure(verdict == oracle, || {
            format!("instance {total} (n={n} m={m}): verdict {verdict}, oracle {oracle}: {inst:?}")
        })?;
        positive += usize::from(oracle);
        total += 1;
    }
    Ok(format!("{total} instances agree ({positive} stabilizable, {} not)", total - positive))
}

type Criterion = (&'static str, &'static str, u64, fn() -> Outcome);

fn main() -> ExitCode {
    let criteria: [Criterion; 9] = [
        ("AC1", "structural matrices", 1, ac1),
        ("AC2", "ASSR soundness", 10, ac2),
        ("AC3", "success thresholds", 1, ac3),
        ("AC4", "target profile set", 1, ac4),
        ("AC5", "largest invariant set", 30, ac5),
        ("AC6", "synthesis golden family", 1, ac6),
        ("AC7", "closed-loop absorption", 1, ac7),
        ("AC8", "Lyapunov verification", 30, ac8),
        ("AC9", "equivalence-chain oracle", 60, ac9),
    ];
    let mut failed = 0;
    for (id, name, budget, run) in criteria {
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|_| Err("panicked".into()));
        let elapsed = start.elapsed();
        let within = elapsed <= Duration::from_secs(budget);
        let secs = elapsed.as_secs_f64();
        match (&result, within) {
            (Ok(detail), true) => println!("PASS {id} {name} ({secs:.3} s < {budget} s): {detail}"),
            (Ok(detail), false) => {
                failed += 1;
                println!("FAIL {id} {name} ({secs:.3} s exceeds {budget} s): {detail}");
            }
            (Err(why), _) => {
                failed += 1;
                println!("FAIL {id} {name} ({secs:.3} s): {why}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", 9 - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
