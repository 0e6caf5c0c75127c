//! End-to-end acceptance run at desk scale. Prints one PASS/FAIL line per
//! criterion and exits nonzero if any fails.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::DMatrix;
use ngrc::dynamics::{integrate, local_maxima, Integration, SystemSpec};
use ngrc::harness::{
    cmd_bifurcate, cmd_error_curve, cmd_feature_hist, cmd_generate, cmd_phase, cmd_rollout, cmd_train, load_data,
    load_model, save_model, ExperimentConfig, Summary, Table,
};
use ngrc::readout::{fit, Dataset};
use ngrc::rollout::{bifurcation_sweep, free_run, hausdorff, Exogenous};
use ngrc::{Model, Trajectory};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

type Run = Result<Outcome, String>;

fn desk(preset: &str) -> ExperimentConfig {
    ExperimentConfig::preset(preset).unwrap().desk_scale()
}

fn checks_pass(s: &Summary) -> bool {
    s.checks.iter().all(|c| c.pass)
}

fn describe(s: &Summary) -> String {
    s.checks.iter().map(|c| format!("{}={:.4} (bound {})", c.name, c.value, c.bound)).collect::<Vec<_>>().join("; ")
}

fn prepare(cfg: &ExperimentConfig, out: &Path) -> Result<(), String> {
    cmd_generate(cfg, out).map_err(|e| e.to_string())?;
    cmd_train(cfg, out).map_err(|e| e.to_string())?;
    Ok(())
}

fn feature_closure(work: &Path) -> Run {
    let cfg = desk("lorenz");
    let out = work.join("lorenz");
    prepare(&cfg, &out)?;
    let s = cmd_feature_hist(&cfg, &out).map_err(|e| e.to_string())?;
    let samples = s.metrics["samples"].as_u64().unwrap_or(0);
    Ok(Outcome { pass: checks_pass(&s) && samples >= 10_000, detail: format!("{samples} samples; {}", describe(&s)) })
}

fn ratios(out: &Path) -> Result<Vec<(f64, f64)>, String> {
    let t = Table::read(out.join("error_curve.csv")).map_err(|e| e.to_string())?;
    let m = t.column("M").map_err(|e| e.to_string())?;
    let tr = t.column("E_train").map_err(|e| e.to_string())?;
    let va = t.column("E_val").map_err(|e| e.to_string())?;
    Ok(m.iter().zip(tr.iter().zip(&va)).map(|(&m, (&a, &b))| (m, b / a)).collect())
}

fn noise_regularization(work: &Path) -> Run {
    let noisy = desk("lorenz");
    let out = work.join("lorenz");
    cmd_error_curve(&noisy, &out).map_err(|e| e.to_string())?;
    let with_noise = ratios(&out)?;

    let mut clean = desk("lorenz");
    clean.training.noise_level = 0.0;
    let out0 = work.join("lorenz-clean");
    cmd_generate(&clean, &out0).map_err(|e| e.to_string())?;
    cmd_error_curve(&clean, &out0).map_err(|e| e.to_string())?;
    let without = ratios(&out0)?;

    let at = |r: &[(f64, f64)], m: f64| r.iter().find(|p| p.0 == m).map(|p| p.1).unwrap_or(f64::NAN);
    let growth = at(&without, 1000.0) / at(&without, 100.0);
    let worst = with_noise.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
    let grid_ok = with_noise.iter().map(|p| p.0).collect::<Vec<_>>() == [100.0, 200.0, 500.0, 1000.0];
    Ok(Outcome {
        pass: growth >= 10.0 && worst <= 10.0 && grid_ok,
        detail: format!("0% noise ratio growth M=100->1000: {growth:.1} (>= 10); 1% noise max ratio {worst:.3} (<= 10)"),
    })
}

fn least_squares_oracle(_: &Path) -> Run {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let n_out = rng.random_range(1..=5);
        let m = rng.random_range(1..=50);
        let t = rng.random_range(m + 1..=500);
        let f: Vec<f64> = (0..m * t).map(|_| rng.random()).collect();
        let u: Vec<f64> = (0..n_out * t).map(|_| rng.random_range(-1.0..1.0)).collect();
        let ds = Dataset::from_parts(f.clone(), u.clone(), m, n_out).map_err(|e| e.to_string())?;
        let w = fit(&ds, 0.0).map_err(|e| e.to_string())?;
        let p = DMatrix::from_fn(m, t, |i, j| f[j * m + i]);
        let um = DMatrix::from_fn(n_out, t, |i, j| u[j * n_out + i]);
        let oracle = um * p.pseudo_inverse(1e-14)?;
        let got = DMatrix::from_fn(n_out, m, |i, j| w.row(i)[j]);
        worst = worst.max((&got - &oracle).norm() / oracle.norm());
    }
    Ok(Outcome { pass: worst <= 1e-8, detail: format!("max relative Frobenius error {worst:.2e} (<= 1e-8)") })
}

fn integrator_order(_: &Path) -> Run {
    let err = |h: f64| -> Result<f64, String> {
        let mut s = Integration::new(1.0, 1);
        s.internal_step = h;
        let t = integrate(&SystemSpec::Decay { rate: 1.0 }, &[1.0], &s).map_err(|e| e.to_string())?;
        Ok((t.row(0)[0] - (-1.0f64).exp()).abs())
    };
    let ratio = err(0.1)? / err(0.05)?;
    Ok(Outcome { pass: (12.0..=20.0).contains(&ratio), detail: format!("error ratio {ratio:.3} (in [12, 20])") })
}

fn surrogate(work: &Path, preset: &str, prepared: bool) -> Run {
    let cfg = desk(preset);
    let out = work.join(preset);
    if !prepared {
        prepare(&cfg, &out)?;
    }
    let s = cmd_rollout(&cfg, &out).map_err(|e| e.to_string())?;
    let needs_maxima = cfg.rollout.maxima_margin.is_some();
    let has_maxima = s.checks.iter().any(|c| c.name.starts_with("maxima"));
    Ok(Outcome { pass: checks_pass(&s) && (has_maxima || !needs_maxima), detail: describe(&s) })
}

fn bifurcation(work: &Path, preset: &str) -> Run {
    let cfg = desk(preset);
    let out = work.join(preset);
    prepare(&cfg, &out)?;
    let s = cmd_bifurcate(&cfg, &out).map_err(|e| e.to_string())?;
    let failed = s.metrics["failed_etas"].as_array().map_or(usize::MAX, Vec::len);
    let n_hausdorff = s.checks.iter().filter(|c| c.name.starts_with("hausdorff")).count();
    let expected = if preset == "bifurcation" { 4 } else { 5 };
    let mut pass = checks_pass(&s) && n_hausdorff == expected;
    if preset == "bifurcation" {
        pass &= failed == 0;
    }
    Ok(Outcome { pass, detail: format!("{failed} failed sweep values; {}", describe(&s)) })
}

fn clusters(maxima: &[f64]) -> usize {
    let mut v = maxima.to_vec();
    v.sort_by(f64::total_cmp);
    1 + v.windows(2).filter(|w| w[1] - w[0] > 0.05).count()
}

/// Sweeping up and down agrees wherever the true system has a single
/// periodic attractor under the same continuation.
fn sweep_hysteresis(work: &Path) -> Run {
    let cfg = desk("bifurcation");
    let out = work.join("bifurcation");
    let (model, _): (Model, _) = load_model(out.join("model.json")).map_err(|e| e.to_string())?;
    let data = load_data(&out).map_err(|e| e.to_string())?;
    let grid: Vec<f64> = (0..=60).map(|i| -0.75 + 0.025 * i as f64).collect();
    let rev: Vec<f64> = grid.iter().rev().copied().collect();
    let (steps, transient) = (2000, 3000);
    let first = &data.train[0];
    let last = &data.train[data.train.len() - 1];
    let seed_up = model.history_from(first, first.len() - 1).map_err(|e| e.to_string())?;
    let seed_down = model.history_from(last, last.len() - 1).map_err(|e| e.to_string())?;
    let up = bifurcation_sweep(&model, &grid, steps, transient, &seed_up).map_err(|e| e.to_string())?;
    let mut down = bifurcation_sweep(&model, &rev, steps, transient, &seed_down).map_err(|e| e.to_string())?;
    down.reverse();

    let ode = |g: &[f64]| -> Result<Vec<Vec<f64>>, String> {
        let mut state = cfg.integration.initial.clone();
        g.iter()
            .map(|&eta| {
                let mut s = Integration::new(cfg.integration.sample_step, 20_000);
                s.transient_samples = 2000;
                s.constant_eta = Some(eta);
                let t = integrate(&cfg.system, &state, &s).map_err(|e| e.to_string())?;
                state = t.row(t.len() - 1)[..3].to_vec();
                Ok(local_maxima(&t.column(0)))
            })
            .collect()
    };
    let ref_up = ode(&grid)?;
    let mut ref_down = ode(&rev)?;
    ref_down.reverse();

    let mut checked = Vec::new();
    let mut worst = 0.0f64;
    for i in 0..grid.len() {
        let periodic = clusters(&ref_up[i]) <= 8 && clusters(&ref_down[i]) <= 8;
        if periodic && hausdorff(&ref_up[i], &ref_down[i]) <= 0.05 {
            let d = if up[i].failed || down[i].failed { f64::INFINITY } else { hausdorff(&up[i].maxima, &down[i].maxima) };
            worst = worst.max(d);
            checked.push(grid[i]);
        }
    }
    Ok(Outcome {
        pass: !checked.is_empty() && worst <= 0.2,
        detail: format!(
            "{} periodic eta in [{:.3}, {:.3}]; max up/down Hausdorff {worst:.3} (<= 0.2)",
            checked.len(),
            checked.first().copied().unwrap_or(f64::NAN),
            checked.last().copied().unwrap_or(f64::NAN)
        ),
    })
}

fn phase_recovery(work: &Path) -> Run {
    let cfg = desk("phase");
    let out = work.join("phase");
    prepare(&cfg, &out)?;
    let s = cmd_phase(&cfg, &out).map_err(|e| e.to_string())?;
    let states = s.metrics["states"].as_u64().unwrap_or(0);
    Ok(Outcome { pass: checks_pass(&s) && states >= 200, detail: format!("{states} states; {}", describe(&s)) })
}

fn tree_files(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    for e in fs::read_dir(dir).into_iter().flatten().flatten() {
        let p = e.path();
        if p.is_dir() {
            out.extend(tree_files(&p));
        } else if !p.to_string_lossy().ends_with("_summary.json") {
            out.push(p);
        }
    }
    out.sort();
    out
}

fn reproducibility(work: &Path) -> Run {
    let mut cfg = desk("lorenz");
    cfg.rollout.n_steps = 5000;
    let dirs = [work.join("repro-a"), work.join("repro-b")];
    for d in &dirs {
        prepare(&cfg, d)?;
        cmd_feature_hist(&cfg, d).map_err(|e| e.to_string())?;
        cmd_error_curve(&cfg, d).map_err(|e| e.to_string())?;
        cmd_rollout(&cfg, d).map_err(|e| e.to_string())?;
    }
    let files = tree_files(&dirs[0]);
    let mut differing = 0;
    for f in &files {
        let rel = f.strip_prefix(&dirs[0]).unwrap();
        if fs::read(f).ok() != fs::read(dirs[1].join(rel)).ok() {
            differing += 1;
        }
    }

    let (model, prov): (Model, _) = load_model(dirs[0].join("model.json")).map_err(|e| e.to_string())?;
    let copy = work.join("repro-copy.json");
    save_model(&model, &prov, &copy).map_err(|e| e.to_string())?;
    let (loaded, _): (Model, _) = load_model(&copy).map_err(|e| e.to_string())?;
    let test: Trajectory =
        Trajectory::load_csv(dirs[0].join("data/validation_clean_0.csv"), None).map_err(|e| e.to_string())?;
    let test = test.select(&["x".into()]).map_err(|e| e.to_string())?;
    let run = |m: &Model| -> Result<Vec<u64>, String> {
        let mut h = m.history_from(&test, 200).map_err(|e| e.to_string())?;
        let t = free_run(m, &mut h, 1000, Exogenous::None).map_err(|e| e.to_string())?.trajectory;
        Ok(t.values().iter().map(|v| v.to_bits()).collect())
    };
    let (a, b) = (run(&model)?, run(&loaded)?);
    let same_run = a.len() == 1000 && a == b;
    let expected = ["model.json", "feature_hist.csv", "error_curve.csv", "rollout.csv", "data/manifest.json"];
    let complete = expected.iter().all(|name| files.contains(&dirs[0].join(name)));
    Ok(Outcome {
        pass: differing == 0 && complete && same_run,
        detail: format!("{} artifacts, {differing} differ; 1000-step free run after reload identical: {same_run}", files.len()),
    })
}

fn main() {
    let work = tempfile::tempdir().expect("temp dir");
    let w = work.path();
    let criteria: Vec<(&str, &str, f64, Box<dyn Fn(&Path) -> Run>)> = vec![
        ("1", "feature closure and spread", 30.0, Box::new(feature_closure)),
        ("2", "noise regularization", 300.0, Box::new(noise_regularization)),
        ("3", "least-squares oracle", 10.0, Box::new(least_squares_oracle)),
        ("4", "integrator order", 1.0, Box::new(integrator_order)),
        ("5", "Lorenz x-only surrogate", 300.0, Box::new(|w: &Path| surrogate(w, "lorenz", false))),
        ("6", "Rossler x-only surrogate", 300.0, Box::new(|w: &Path| surrogate(w, "rossler", false))),
        ("7", "bifurcation reconstruction", 900.0, Box::new(|w: &Path| bifurcation(w, "bifurcation"))),
        ("7+", "sweep direction invariance", 900.0, Box::new(sweep_hysteresis)),
        ("8", "OU-driven bifurcation", 900.0, Box::new(|w: &Path| bifurcation(w, "ou-bifurcation"))),
        ("9", "phase recovery", 600.0, Box::new(phase_recovery)),
        ("10", "reproducibility", 60.0, Box::new(reproducibility)),
    ];
    let mut failures = 0;
    for (id, name, limit, run) in criteria {
        let started = Instant::now();
        let result = run(w);
        let secs = started.elapsed().as_secs_f64();
        let (pass, detail) = match result {
            Ok(o) => (o.pass && secs < limit, o.detail),
            Err(e) => (false, format!("error: {e}")),
        };
        if !pass {
            failures += 1;
        }
        let tag = if pass { "PASS" } else { "FAIL" };
        println!("criterion {id:>2} {tag} {name} [{secs:.1}s, limit {limit}s]: {detail}");
    }
    if failures > 0 {
        println!("{failures} acceptance criteria failed");
        std::process::exit(1);
    }
}
