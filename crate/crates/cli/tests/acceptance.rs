//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any
//! criterion fails.

use std::fs;
use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use locdistill::distill::enumerate_ta_paths;
use locdistill::distributions::{
    argmax, expect, kl_divergence_slice, make_support, softmax_slice, EdgeDistribution,
};
use locdistill::geometry::nms;
use locdistill::losses::{giou_loss_value, tbr_loss};
use locdistill::seed::rng_for;
use locdistill::toydet::ModelConfig;
use locdistill::verify::{certify, nms_oracle, random_nms_case, LossKind};
use locdistill::{BBox, Tape, TbrGate};
use locdistill_cli::experiment::{ld_comparison, self_ld, ta_sweep};
use locdistill_cli::{dispatch, ExperimentConfig};
use rand::seq::SliceRandom;
use rand::Rng;

const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn within(limit: Duration, started: Instant, outcome: Outcome) -> Outcome {
    let took = started.elapsed();
    let detail = |d: String| {
        format!(
            "{d}; {:.1}s of {}s budget",
            took.as_secs_f64(),
            limit.as_secs()
        )
    };
    match outcome {
        Ok(d) if took <= limit => Ok(detail(d)),
        Ok(d) | Err(d) => Err(detail(d)),
    }
}

fn gradient_certification() -> Outcome {
    let started = Instant::now();
    let mut parts = Vec::new();
    let mut ok = true;
    for kind in LossKind::ALL {
        let c = certify(kind, 100, 1, 1e-5).map_err(|e| e.to_string())?;
        ok &= c.worst.max_rel_error < 1e-4;
        parts.push(format!("{} {:.1e}", kind.name(), c.worst.max_rel_error));
    }
    within(
        Duration::from_secs(60),
        started,
        check(
            ok,
            format!("max rel error over 100 instances: {}", parts.join(", ")),
        ),
    )
}

fn distribution_invariants() -> Outcome {
    let mut rng = rng_for(2, "acceptance/distributions", 0);
    let support = make_support(0.0, 16.0, 17).map_err(|e| e.to_string())?;
    let n = support.len();
    let mut failures = Vec::new();
    let (mut worst_norm, mut worst_uniform, mut min_dirac, mut min_kl, mut max_self_kl) =
        (0.0f64, 0.0f64, 1.0f64, f64::INFINITY, 0.0f64);
    let levels: Vec<f64> = (0..n).map(|k| 0.5 * k as f64).collect();
    for _ in 0..1000 {
        // Distinct levels keep the top two logits at least 0.4 apart.
        let mut z = levels.clone();
        z.shuffle(&mut rng);
        for v in z.iter_mut() {
            *v += rng.random_range(0.0..0.1) - 4.0;
        }
        let top = argmax(&z);
        for tau in [1e-3, 0.1, 1.0, 10.0, 1e3, 1e6] {
            let p = softmax_slice(&z, tau).map_err(|e| e.to_string())?;
            worst_norm = worst_norm.max((p.iter().sum::<f64>() - 1.0).abs());
            if tau < 1e6 && argmax(&p) != top {
                failures.push(format!("argmax moved at tau {tau}"));
            }
        }
        let flat = softmax_slice(&z, 1e6).map_err(|e| e.to_string())?;
        worst_uniform = flat
            .iter()
            .fold(worst_uniform, |m, p| m.max((p - 1.0 / n as f64).abs()));
        min_dirac = min_dirac.min(softmax_slice(&z, 1e-3).map_err(|e| e.to_string())?[top]);

        let w: Vec<f64> = (0..n).map(|_| rng.random_range(-8.0..8.0)).collect();
        let tau = rng.random_range(0.5..20.0);
        let p = softmax_slice(&z, tau).map_err(|e| e.to_string())?;
        let q = softmax_slice(&w, tau).map_err(|e| e.to_string())?;
        min_kl = min_kl.min(kl_divergence_slice(&p, &q).map_err(|e| e.to_string())?);
        max_self_kl = max_self_kl.max(
            kl_divergence_slice(&p, &p)
                .map_err(|e| e.to_string())?
                .abs(),
        );
    }
    let mut decode_ok = true;
    for (k, pos) in support.positions().iter().enumerate() {
        let mut d = vec![0.0; n];
        d[k] = 1.0;
        let e = expect(
            &support,
            &EdgeDistribution::new(d).map_err(|e| e.to_string())?,
        )
        .map_err(|e| e.to_string())?;
        decode_ok &= e == *pos;
    }
    let u = EdgeDistribution::uniform(n).map_err(|e| e.to_string())?;
    let mid = expect(&support, &u).map_err(|e| e.to_string())?;
    decode_ok &= (mid - 8.0).abs() < 1e-12;

    let ok = failures.is_empty()
        && worst_norm < 1e-9
        && worst_uniform < 1e-3
        && min_dirac > 0.999
        && min_kl >= 0.0
        && max_self_kl < 1e-12
        && decode_ok;
    let mut detail = format!(
        "norm err {worst_norm:.1e}, uniform err {worst_uniform:.1e}, dirac mass {min_dirac:.6}, min KL {min_kl:.2e}, KL(p,p) {max_self_kl:.1e}, decode exact {decode_ok}"
    );
    if let Some(f) = failures.first() {
        detail.push_str(&format!(", {f}"));
    }
    check(ok, detail)
}

fn nms_equivalence() -> Outcome {
    let mut mismatches = 0;
    let mut total_kept = 0;
    for i in 0..200 {
        let (boxes, thr) = random_nms_case(3, i, 10).map_err(|e| e.to_string())?;
        let mut kept = nms(&boxes, thr).map_err(|e| e.to_string())?;
        kept.sort_unstable();
        total_kept += kept.len();
        if kept != nms_oracle(&boxes, thr) {
            mismatches += 1;
        }
    }
    check(
        mismatches == 0,
        format!("200 sets, {mismatches} mismatches, {total_kept} boxes kept"),
    )
}

fn ta_combinatorics() -> Outcome {
    let base = ModelConfig::default();
    let teacher = base.with_hidden(vec![64]);
    let student = base.with_hidden(vec![4]);
    let mut counts = Vec::new();
    let mut ok = true;
    for m in 0..=3usize {
        let assistants: Vec<ModelConfig> =
            (0..m).map(|i| base.with_hidden(vec![32 >> i])).collect();
        let paths =
            enumerate_ta_paths(&teacher, &assistants, &student).map_err(|e| e.to_string())?;
        let mut labels: Vec<String> = paths.iter().map(|p| p.label()).collect();
        labels.sort();
        labels.dedup();
        ok &= paths.len() == 1 << m && labels.len() == paths.len();
        ok &= paths
            .iter()
            .all(|p| p.validate().is_ok() && p.teacher() == &teacher && p.student() == &student);
        counts.push(format!("m={m}: {}", paths.len()));
    }
    check(ok, counts.join(", "))
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn ld_effect() -> Outcome {
    let started = Instant::now();
    let cfg = ExperimentConfig::default();
    let (mut base_iou, mut ld_iou, mut strict_wins) = (Vec::new(), Vec::new(), 0);
    for s in SEEDS {
        let c = ld_comparison(&cfg.with_seed(s)).map_err(|e| e.to_string())?;
        let (b, d) = (&c.baseline.1.metrics, &c.distilled.1.metrics);
        base_iou.push(b.mean_iou);
        ld_iou.push(d.mean_iou);
        strict_wins += usize::from(d.strict_ap() > b.strict_ap());
    }
    let in_band = base_iou.iter().all(|v| (0.6..=0.85).contains(v));
    let ok = in_band && mean(&ld_iou) > mean(&base_iou) && strict_wins >= 4;
    within(
        Duration::from_secs(180),
        started,
        check(
            ok,
            format!(
                "baseline mean_iou {:.4} (range {:.3}..{:.3}), LD {:.4}, strict AP better on {strict_wins}/5",
                mean(&base_iou),
                base_iou.iter().cloned().fold(f64::INFINITY, f64::min),
                base_iou.iter().cloned().fold(0.0, f64::max),
                mean(&ld_iou)
            ),
        ),
    )
}

/// Mean final-stage mean_iou of the direct and the full path.
fn ta_gap(cfg: &ExperimentConfig) -> Result<(f64, f64, f64, f64), String> {
    let (mut direct, mut full, mut direct_ap, mut full_ap) =
        (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for s in SEEDS {
        let records = ta_sweep(&cfg.with_seed(s)).map_err(|e| e.to_string())?;
        for r in &records {
            let m = &r.final_stage().metrics;
            match r.path.as_str() {
                "T>S" => {
                    direct.push(m.mean_iou);
                    direct_ap.push(m.mean_ap);
                }
                "T>A1>S" => {
                    full.push(m.mean_iou);
                    full_ap.push(m.mean_ap);
                }
                other => return Err(format!("unexpected path {other}")),
            }
        }
    }
    Ok((mean(&direct), mean(&full), mean(&direct_ap), mean(&full_ap)))
}

fn ta_effect() -> Outcome {
    let started = Instant::now();
    let mut cfg = ExperimentConfig::default();
    cfg.distill.tau_squared = true;
    let (d, f, d_ap, f_ap) = ta_gap(&cfg)?;
    let gated = within(
        Duration::from_secs(240),
        started,
        check(
            f >= d,
            format!(
                "tau^2-scaled KL, teacher {:?} assistant {:?} student {:?}: full {f:.4} vs direct {d:.4} mean_iou, {f_ap:.4} vs {d_ap:.4} mean_ap",
                cfg.models.teacher, cfg.models.assistants[0], cfg.models.student
            ),
        ),
    );
    let (d, f, ..) = ta_gap(&ExperimentConfig::default())?;
    let note = format!("; unscaled KL for reference: full {f:.4} vs direct {d:.4}");
    gated.map(|s| s + &note).map_err(|s| s + &note)
}

fn self_ld_effect() -> Outcome {
    let cfg = ExperimentConfig::default();
    let mut changes = Vec::new();
    for s in SEEDS {
        let r = self_ld(&cfg.with_seed(s)).map_err(|e| e.to_string())?;
        changes.push(r.self_ld.1.metrics.mean_iou - r.plain.1.metrics.mean_iou);
    }
    let change = mean(&changes);
    check(
        change >= -0.002,
        format!(
            "mean mean_iou change {change:+.4} (per seed {})",
            changes
                .iter()
                .map(|c| format!("{c:+.4}"))
                .collect::<Vec<_>>()
                .join(" ")
        ),
    )
}

fn run_cli(out: &Path, args: &[&str]) -> Result<(), String> {
    let mut argv = vec![
        "locdistill".to_string(),
        "--out".into(),
        out.display().to_string(),
    ];
    argv.extend(args.iter().map(|s| s.to_string()));
    match dispatch(argv) {
        0 => Ok(()),
        code => Err(format!("{args:?} exited with {code}")),
    }
}

fn temperature_sweep(dir: &Path) -> Outcome {
    run_cli(dir, &["temp-sweep"])?;
    let csv = fs::read_to_string(dir.join("temp_sweep.csv")).map_err(|e| e.to_string())?;
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().unwrap_or_default().split(',').collect();
    let col = |name: &str| {
        header
            .iter()
            .position(|h| *h == name)
            .ok_or(format!("no column {name}"))
    };
    let (ld, base) = (col("ld_mean_iou")?, col("baseline_mean_iou")?);
    let mut taus = Vec::new();
    let mut ok = true;
    let mut cells = Vec::new();
    for line in lines {
        let f: Vec<&str> = line.split(',').collect();
        let parse = |i: usize| f[i].parse::<f64>().map_err(|e| e.to_string());
        let (a, b) = (parse(ld)?, parse(base)?);
        taus.push(parse(0)?);
        ok &= a >= b;
        cells.push(format!("tau {} {a:.4}/{b:.4}", f[0]));
    }
    ok &= taus == [1.0, 5.0, 10.0, 15.0, 20.0];
    check(
        ok,
        format!("LD/baseline mean_iou over 3 seeds: {}", cells.join(", ")),
    )
}

fn tbr_gate() -> Outcome {
    let gt = BBox::new(10.0, 10.0, 30.0, 30.0).map_err(|e| e.to_string())?;
    let widened = |d: f64| BBox::new(gt.x1, gt.y1, gt.x2 + d, gt.y2);
    let grid = [0.0, 0.25, 0.5, 0.75, 1.0, 1.5, 2.0];
    let mut cases = 0;
    let mut failures = Vec::new();
    for gate in [TbrGate::StudentInferior, TbrGate::StudentSuperior] {
        for &s in &grid {
            for &t in &grid {
                for &eps in &[0.0, 0.25, 0.5, 1.0] {
                    cases += 1;
                    let expected = match gate {
                        TbrGate::StudentInferior => s - t > eps,
                        TbrGate::StudentSuperior => t - s >= eps,
                    };
                    if gate.is_active(s, t, eps) != expected {
                        failures.push(format!("{gate:?} s={s} t={t} eps={eps}"));
                        continue;
                    }
                    // Widening only the right edge puts the corner distance
                    // at exactly the widening.
                    let student = widened(s).map_err(|e| e.to_string())?;
                    let teacher = widened(t).map_err(|e| e.to_string())?;
                    let mut tape = Tape::new();
                    let c = tape.param(student.corners().to_vec());
                    let corners = [
                        tape.index(c, 0),
                        tape.index(c, 1),
                        tape.index(c, 2),
                        tape.index(c, 3),
                    ];
                    let loss = tbr_loss(&mut tape, corners, &teacher, &gt, eps, 0.5, gate)
                        .map_err(|e| e.to_string())?;
                    let value = tape.scalar(loss);
                    let want = if expected {
                        0.5 * giou_loss_value(&student, &gt).map_err(|e| e.to_string())?
                    } else {
                        0.0
                    };
                    let exact_zero = expected || value.to_bits() == 0.0f64.to_bits();
                    if !exact_zero || (value - want).abs() > 1e-12 {
                        failures.push(format!(
                            "{gate:?} s={s} t={t} eps={eps}: loss {value}, expected {want}"
                        ));
                    }
                }
            }
        }
    }
    let mut detail = format!(
        "{cases} (gate, student err, teacher err, eps) cases, {} failures",
        failures.len()
    );
    if let Some(f) = failures.first() {
        detail.push_str(&format!("; first: {f}"));
    }
    check(failures.is_empty(), detail)
}

const SMALL: &str = r#"
[data]
train_count = 120
eval_count = 80

[models]
teacher = [16]
assistants = [[12], [10]]
student = [8]

[train]
epochs = 4
decay_epochs = [3]

[sweep]
seeds = 2
demo_objects = 20
demo_views = 3
"#;

fn csv_files(dir: &Path, found: &mut Vec<std::path::PathBuf>) -> std::io::Result<()> {
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        if path.is_dir() {
            csv_files(&path, found)?;
        } else if path.extension().is_some_and(|e| e == "csv" || e == "tsv") {
            found.push(path);
        }
    }
    Ok(())
}

fn determinism(root: &Path) -> Outcome {
    fs::create_dir_all(root).map_err(|e| e.to_string())?;
    let config = root.join("small.toml");
    fs::write(&config, SMALL).map_err(|e| e.to_string())?;
    let config = config.display().to_string();
    let commands: [&[&str]; 7] = [
        &["gen-data"],
        &["train", "--model", "teacher"],
        &["distill"],
        &["self-ld"],
        &["ta-sweep"],
        &["temp-sweep"],
        &["nms-demo"],
    ];
    let mut compared = 0;
    let mut differing = Vec::new();
    for cmd in commands {
        let mut outs = Vec::new();
        for run in 0..2 {
            let out = root.join(format!("{}-{run}", cmd[0]));
            let mut args = vec!["--config", config.as_str(), "--seed", "11"];
            args.extend_from_slice(cmd);
            run_cli(&out, &args)?;
            outs.push(out);
        }
        let mut files = Vec::new();
        csv_files(&outs[0], &mut files).map_err(|e| e.to_string())?;
        if files.is_empty() {
            return Err(format!("{} wrote no CSV files", cmd[0]));
        }
        for a in files {
            let b = outs[1].join(a.strip_prefix(&outs[0]).map_err(|e| e.to_string())?);
            let (x, y) = (fs::read(&a), fs::read(&b));
            compared += 1;
            if x.is_err() || x.ok() != y.ok() {
                differing.push(a.display().to_string());
            }
        }
    }
    let params = root.join("train-0/params.txt").display().to_string();
    let evals = [root.join("eval-0"), root.join("eval-1")];
    for out in &evals {
        run_cli(
            out,
            &[
                "--config",
                config.as_str(),
                "--seed",
                "11",
                "eval",
                "--params",
                params.as_str(),
            ],
        )?;
    }
    compared += 1;
    if fs::read(evals[0].join("eval.csv")).ok() != fs::read(evals[1].join("eval.csv")).ok() {
        differing.push("eval.csv".into());
    }
    check(
        differing.is_empty(),
        format!(
            "{compared} CSV files from 8 subcommands, {} differ {differing:?}",
            differing.len()
        ),
    )
}

type Criterion<'a> = (&'static str, Box<dyn Fn() -> Outcome + 'a>);

fn main() -> ExitCode {
    let scratch = match tempfile::tempdir() {
        Ok(d) => d,
        Err(e) => {
            eprintln!("cannot create a scratch directory: {e}");
            return ExitCode::FAILURE;
        }
    };
    let criteria: Vec<Criterion<'_>> = vec![
        ("gradient certification", Box::new(gradient_certification)),
        ("distribution invariants", Box::new(distribution_invariants)),
        ("NMS oracle equivalence", Box::new(nms_equivalence)),
        ("TA path combinatorics", Box::new(ta_combinatorics)),
        ("LD effect", Box::new(ld_effect)),
        ("TA effect", Box::new(ta_effect)),
        ("self-LD", Box::new(self_ld_effect)),
        (
            "temperature sweep",
            Box::new(|| temperature_sweep(&scratch.path().join("temp-sweep"))),
        ),
        ("TBR gate", Box::new(tbr_gate)),
        (
            "determinism",
            Box::new(|| determinism(&scratch.path().join("determinism"))),
        ),
    ];
    let suite = Instant::now();
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let started = Instant::now();
        let outcome = run();
        let secs = started.elapsed().as_secs_f64();
        let (status, detail) = match outcome {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!(
            "criterion {:>2} {status}  {name} ({secs:.1}s): {detail}",
            i + 1
        );
    }
    println!(
        "acceptance: {} passed, {failed} failed in {:.1}s",
        criteria.len() - failed,
        suite.elapsed().as_secs_f64()
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
