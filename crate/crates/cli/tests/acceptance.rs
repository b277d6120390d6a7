//! Acceptance suite: one PASS/FAIL line per criterion. Runs without the
//! libtest harness so the lines always reach the output.

use std::path::Path;
use std::process::Command;
use std::time::Instant;

use deluge::analysis::{cldc_overhead, count_flops, count_params};
use deluge::cldc::{sum_sources, Cldc};
use deluge::data::{compute_stats, synthetic};
use deluge::gradcheck::{check_model, check_ops};
use deluge::model::{Connectivity, ModelSpec, TransitionKind};
use deluge::train::{lr_at, train_epoch, OptimizerState, Schedule, TrainConfig};
use deluge::{Model, Rng, Shape4, Tensor4};

type Outcome = Result<String, String>;
type Artifacts = (Vec<u8>, Vec<u8>, Vec<u8>);
type Criterion<'a> = (&'static str, Box<dyn Fn() -> Outcome + 'a>);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn rel(actual: f64, target: f64) -> f64 {
    (actual - target).abs() / target.abs()
}

/// 1. Analytic parameter counts within ±2% of the published figures.
fn param_counts() -> Outcome {
    let start = Instant::now();
    let cases = [
        ("delugenet-146", 100, 6.69),
        ("delugenet-218", 100, 10.00),
        ("wide-delugenet-146", 100, 20.19),
        ("resnetbase-146-1x1", 100, 6.15),
        ("resnetbase-146-3x3", 100, 6.50),
        ("resnetbase-218-1x1", 100, 9.26),
        ("resnetbase-218-3x3", 100, 9.55),
        ("resnetbase-wide146-1x1", 100, 18.76),
        ("resnetbase-wide146-3x3", 100, 19.82),
        ("delugenet-92", 1000, 43.4),
        ("delugenet-104", 1000, 51.4),
        ("delugenet-122", 1000, 63.6),
    ];
    let mut worst: (f64, &str) = (0.0, "");
    for (name, classes, target) in cases {
        let spec = ModelSpec::zoo(name, classes).map_err(|e| e.to_string())?;
        let got = count_params(&spec).map_err(|e| e.to_string())?.mparams();
        let e = rel(got, target);
        ensure(e <= 0.02, || {
            format!("{name}: {got:.3}M vs {target}M ({:.2}%)", 100.0 * e)
        })?;
        if e > worst.0 {
            worst = (e, name);
        }
    }
    let elapsed = start.elapsed().as_secs_f64();
    ensure(elapsed < 1.0, || format!("took {elapsed:.2}s"))?;
    Ok(format!(
        "12 models, worst {} at {:.2}%, {elapsed:.3}s",
        worst.1,
        100.0 * worst.0
    ))
}

/// 2. FLOP counts within ±5%.
fn flop_counts() -> Outcome {
    let start = Instant::now();
    let cases = [
        ("delugenet-146", 100, 1.43),
        ("delugenet-218", 100, 2.13),
        ("wide-delugenet-146", 100, 4.31),
        ("resnetbase-146-1x1", 100, 1.33),
        ("resnetbase-146-3x3", 100, 1.39),
        ("resnetbase-218-1x1", 100, 1.98),
        ("resnetbase-218-3x3", 100, 2.05),
        ("resnetbase-wide146-1x1", 100, 4.05),
        ("resnetbase-wide146-3x3", 100, 4.25),
        ("delugenet-92", 1000, 11.8),
        ("delugenet-104", 1000, 13.2),
        ("delugenet-122", 1000, 15.2),
    ];
    let mut worst: (f64, &str) = (0.0, "");
    for (name, classes, target) in cases {
        let spec = ModelSpec::zoo(name, classes).map_err(|e| e.to_string())?;
        let got = count_flops(&spec, spec.default_input())
            .map_err(|e| e.to_string())?
            .gflops();
        let e = rel(got, target);
        ensure(e <= 0.05, || {
            format!("{name}: {got:.3} vs {target} GFLOPs ({:.2}%)", 100.0 * e)
        })?;
        if e > worst.0 {
            worst = (e, name);
        }
    }
    let elapsed = start.elapsed().as_secs_f64();
    ensure(elapsed < 1.0, || format!("took {elapsed:.2}s"))?;
    Ok(format!(
        "12 models, worst {} at {:.2}%, {elapsed:.3}s",
        worst.1,
        100.0 * worst.0
    ))
}

/// 3. Randomized cross-layer convolutions against a nested-loop evaluation
///    and bitwise residual-sum equivalence at unit weights.
fn cldc_oracle() -> Outcome {
    let mut rng = Rng::new(2024);
    let mut worst = 0.0f64;
    for case in 0..100 {
        let s = 1 + rng.below(6);
        let m = 1 + rng.below(8);
        let shape = Shape4::new(1 + rng.below(3), m, 1 + rng.below(5), 1 + rng.below(5));
        let sources: Vec<Tensor4> = (0..s)
            .map(|_| Tensor4::randn(shape, 0.0, 1.0, &mut rng))
            .collect::<Result<_, _>>()
            .map_err(|e| e.to_string())?;
        let w = Tensor4::randn((s, m, 1, 1), 0.0, 1.0, &mut rng).map_err(|e| e.to_string())?;
        let b = Tensor4::randn((1, m, 1, 1), 0.0, 1.0, &mut rng).map_err(|e| e.to_string())?;
        let cldc = Cldc::from_parts(w.clone(), b.clone()).map_err(|e| e.to_string())?;
        let refs: Vec<&Tensor4> = sources.iter().collect();
        let out = cldc.forward(&refs).map_err(|e| e.to_string())?;
        for n in 0..shape.n {
            for c in 0..m {
                for y in 0..shape.h {
                    for x in 0..shape.w {
                        let mut acc = 0.0;
                        for (i, src) in sources.iter().enumerate() {
                            acc += w.at(i, c, 0, 0) * src.at(n, c, y, x);
                        }
                        acc += b.at(0, c, 0, 0);
                        let got = out.at(n, c, y, x);
                        let e = (got - acc).abs() / acc.abs().max(1e-300);
                        let e = if got == acc { 0.0 } else { e };
                        worst = worst.max(e);
                        ensure(e <= 1e-10, || format!("case {case}: {got} vs {acc}"))?;
                    }
                }
            }
        }
        let unit = Cldc::new(s, m).map_err(|e| e.to_string())?;
        let summed = sum_sources(&refs).map_err(|e| e.to_string())?;
        let mixed = unit.forward(&refs).map_err(|e| e.to_string())?;
        let bitwise = mixed
            .data()
            .iter()
            .zip(summed.data())
            .all(|(a, b)| a.to_bits() == b.to_bits());
        ensure(bitwise, || {
            format!("case {case}: unit weights differ from the plain sum")
        })?;
    }
    Ok(format!(
        "100 cases, worst relative error {worst:.2e}, residual sum bitwise"
    ))
}

/// 4. Finite-difference gradient checks for every op and the tiny model.
fn gradients() -> Outcome {
    let mut worst_ops = 0.0f64;
    let mut worst_model = 0.0f64;
    for seed in [1, 2, 3] {
        for r in check_ops(seed).map_err(|e| e.to_string())? {
            ensure(r.passed(), || {
                format!("seed {seed} {}: {:.2e}", r.target, r.worst)
            })?;
            worst_ops = worst_ops.max(r.worst);
        }
        for r in check_model(seed).map_err(|e| e.to_string())? {
            ensure(r.passed(), || {
                format!("seed {seed} {}: {:.2e}", r.target, r.worst)
            })?;
            worst_model = worst_model.max(r.worst);
        }
    }
    Ok(format!(
        "3 seeds, worst op {worst_ops:.2e} (< 1e-6), worst model {worst_model:.2e} (< 1e-5)"
    ))
}

/// 5. A fresh network feeds every composite layer the plain sum of its sources
///    and matches its parameter-shared residual twin.
fn init_equivalence() -> Outcome {
    let mut checked = 0;
    for (name, input) in [("tiny", (4, 3, 32, 32)), ("delugenet-146", (1, 3, 16, 16))] {
        let spec = ModelSpec::zoo(name, 10).map_err(|e| e.to_string())?;
        let mut rng = Rng::new(7);
        let model = Model::build(&spec, &mut rng).map_err(|e| e.to_string())?;
        let x = Tensor4::randn(input, 0.0, 1.0, &mut rng).map_err(|e| e.to_string())?;
        let mut worst = 0.0f64;
        let logits = model
            .forward_probe(&x, &mut |_, live, mixed| {
                let sum = sum_sources(live).expect("sources share a shape");
                for (a, b) in mixed.data().iter().zip(sum.data()) {
                    worst = worst.max((a - b).abs() / b.abs().max(1.0));
                }
                checked += 1;
            })
            .map_err(|e| e.to_string())?;
        ensure(worst <= 1e-12, || {
            format!("{name}: mix differs from sum by {worst:.2e}")
        })?;

        let mut twin_spec = spec.clone();
        twin_spec.connectivity = Connectivity::Residual;
        twin_spec.transition = TransitionKind::Shortcut3x3;
        let mut twin = Model::build(&twin_spec, &mut Rng::new(99)).map_err(|e| e.to_string())?;
        let copied = twin.copy_shared_from(&model);
        ensure(copied == twin.named_tensors().len(), || {
            format!("{name}: twin shares only {copied} tensors")
        })?;
        let twin_logits = twin.forward_eval(&x).map_err(|e| e.to_string())?;
        ensure(twin_logits == logits, || {
            format!("{name}: twin logits differ")
        })?;
    }
    Ok(format!(
        "{checked} mixing sites equal the plain sum; twin logits identical"
    ))
}

/// 6. Cross-layer convolution overhead of the CIFAR networks.
fn overhead() -> Outcome {
    let mut parts = Vec::new();
    for name in ["delugenet-146", "delugenet-218", "wide-delugenet-146"] {
        let spec = ModelSpec::zoo(name, 100).map_err(|e| e.to_string())?;
        let (p, f) = cldc_overhead(&spec).map_err(|e| e.to_string())?;
        let ok = |v: f64| (0.005..=0.05).contains(&v);
        ensure(ok(p) && ok(f), || {
            format!("{name}: params {:.2}%, flops {:.2}%", 100.0 * p, 100.0 * f)
        })?;
        parts.push(format!("{name} {:.2}%/{:.2}%", 100.0 * p, 100.0 * f));
    }
    Ok(format!("params/flops: {}", parts.join(", ")))
}

/// 7. The tiny model fits the 64-item synthetic fixture.
fn learning() -> Outcome {
    let mut fitted = 0;
    let mut report = Vec::new();
    for seed in 0..5u64 {
        let ds = synthetic(64, 4, 8, 0.1, &mut Rng::new(100 + seed)).map_err(|e| e.to_string())?;
        let stats = compute_stats(&ds).map_err(|e| e.to_string())?;
        let spec = ModelSpec::zoo("tiny", 4).map_err(|e| e.to_string())?;
        let mut model = Model::build(&spec, &mut Rng::new(seed)).map_err(|e| e.to_string())?;
        let cfg = TrainConfig {
            batch_size: 16,
            seed,
            augment: None,
            normalize: Some(stats),
            schedule: Schedule::Custom {
                drops: vec![],
                total: 200,
            },
            ..TrainConfig::default()
        };
        let mut state = OptimizerState::new(&model).map_err(|e| e.to_string())?;
        let mut outcome = None;
        for epoch in 0..200 {
            let s =
                train_epoch(&mut model, &ds, &cfg, &mut state, epoch).map_err(|e| e.to_string())?;
            if s.accuracy >= 0.99 && s.loss < 0.05 {
                outcome = Some((epoch + 1, s.loss));
                break;
            }
        }
        match outcome {
            Some((epochs, loss)) => {
                fitted += 1;
                report.push(format!("seed {seed}: {epochs} epochs, loss {loss:.4}"));
            }
            None => report.push(format!("seed {seed}: not fitted")),
        }
    }
    ensure(fitted >= 4, || {
        format!("{fitted}/5 seeds fitted: {}", report.join("; "))
    })?;
    Ok(format!("{fitted}/5 seeds fitted ({})", report.join("; ")))
}

/// 8. Learning-rate schedules hit the decimal values exactly.
fn schedules() -> Outcome {
    let cifar = TrainConfig::default();
    for (epoch, lr) in [
        (0, 0.1),
        (149, 0.1),
        (150, 0.01),
        (224, 0.01),
        (225, 0.001),
        (299, 0.001),
    ] {
        let got = lr_at(&cifar, epoch).map_err(|e| e.to_string())?;
        ensure(got == lr, || format!("cifar epoch {epoch}: {got:e}"))?;
    }
    let imagenet = TrainConfig::imagenet();
    for epoch in 0..100 {
        let lr = [0.1, 0.01, 0.001, 0.0001][epoch / 30];
        let got = lr_at(&imagenet, epoch).map_err(|e| e.to_string())?;
        ensure(got == lr, || format!("imagenet epoch {epoch}: {got:e}"))?;
    }
    ensure(lr_at(&cifar, 300).is_err(), || "epoch 300 accepted".into())?;
    Ok("cifar {0,150,225} -> 0.1/0.01/0.001, imagenet x0.1 every 30 epochs, exact".into())
}

fn deluge(args: &[&str]) -> Result<std::process::Output, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_deluge"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!(
            "deluge {} failed: {}",
            args.join(" "),
            String::from_utf8_lossy(&out.stderr)
        ));
    }
    Ok(out)
}

fn train_fixture(dir: &Path, tag: &str, epochs: &str) -> Result<Artifacts, String> {
    let ckpt = dir.join(format!("{tag}.ckpt"));
    let log = dir.join(format!("{tag}.log"));
    let out = deluge(&[
        "train",
        "--model",
        "tiny",
        "--dataset",
        "synthetic",
        "--epochs",
        epochs,
        "--batch-size",
        "16",
        "--seed",
        "1",
        "--out",
        ckpt.to_str().unwrap(),
        "--log",
        log.to_str().unwrap(),
    ])?;
    let read = |p: &Path| std::fs::read(p).map_err(|e| e.to_string());
    Ok((read(&ckpt)?, read(&log)?, out.stdout))
}

/// 9. Two identical training runs produce identical bytes.
fn determinism(dir: &Path) -> Outcome {
    let a = train_fixture(dir, "a", "20")?;
    let b = train_fixture(dir, "b", "20")?;
    ensure(a.0 == b.0, || "checkpoints differ".into())?;
    ensure(a.1 == b.1, || "log files differ".into())?;
    ensure(a.2 == b.2, || "stdout differs".into())?;
    ensure(!a.1.is_empty(), || "empty log".into())?;
    Ok(format!(
        "checkpoints ({} bytes), logs and stdout byte-identical",
        a.0.len()
    ))
}

fn parse_norms(text: &str) -> Result<Vec<(String, f64)>, String> {
    let mut lines = text.lines();
    ensure(
        lines.next() == Some("site,source_index,l2_norm,normalized_norm"),
        || "bad header".into(),
    )?;
    lines
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            ensure(f.len() == 4, || format!("bad row `{l}`"))?;
            Ok((
                f[0].to_string(),
                f[3].parse::<f64>().map_err(|e| e.to_string())?,
            ))
        })
        .collect()
}

/// 10. Norm profiles of fresh and trained checkpoints.
fn norm_tooling(dir: &Path) -> Outcome {
    train_fixture(dir, "fresh", "0")?;
    let ckpt = dir.join("a.ckpt");
    let fresh = dir.join("fresh.ckpt");
    let mut summaries = Vec::new();
    for (tag, path) in [("fresh", &fresh), ("trained", &ckpt)] {
        let out = dir.join(format!("{tag}.csv"));
        deluge(&[
            "norms",
            "--checkpoint",
            path.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ])?;
        let rows = parse_norms(&std::fs::read_to_string(&out).map_err(|e| e.to_string())?)?;
        // tiny: three sites with 2 layers + h0 each
        ensure(rows.len() == 9, || {
            format!("{tag}: {} rows, expected 9", rows.len())
        })?;
        let mut sites: Vec<&str> = rows.iter().map(|(s, _)| s.as_str()).collect();
        sites.dedup();
        ensure(
            sites == ["transition_1", "transition_2", "pre_classifier"],
            || format!("{tag}: sites {sites:?}"),
        )?;
        for site in &sites {
            let max = rows
                .iter()
                .filter(|(s, _)| s == site)
                .map(|r| r.1)
                .fold(0.0, f64::max);
            ensure(max == 1.0, || format!("{tag} {site}: max normalized {max}"))?;
        }
        let uniform = rows.iter().all(|r| r.1 == 1.0);
        if tag == "fresh" {
            ensure(uniform, || "fresh profile not uniform".into())?;
        } else {
            ensure(!uniform, || "trained profile still uniform".into())?;
            let min = rows.iter().map(|r| r.1).fold(1.0, f64::min);
            summaries.push(format!("trained min normalized {min:.4}"));
        }
    }
    Ok(format!(
        "9 rows per profile, per-site max 1.0, fresh uniform, {}",
        summaries.join("")
    ))
}

fn main() {
    let dir = tempfile::tempdir().expect("temporary directory");
    let criteria: Vec<Criterion> = vec![
        ("parameter counts", Box::new(param_counts)),
        ("flop counts", Box::new(flop_counts)),
        ("cldc oracle equivalence", Box::new(cldc_oracle)),
        ("gradient checks", Box::new(gradients)),
        ("init equivalence", Box::new(init_equivalence)),
        ("cldc overhead", Box::new(overhead)),
        ("learning smoke test", Box::new(learning)),
        ("schedule exactness", Box::new(schedules)),
        ("determinism", Box::new(|| determinism(dir.path()))),
        ("norm tooling", Box::new(|| norm_tooling(dir.path()))),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(std::panic::AssertUnwindSafe(check))
            .unwrap_or_else(|_| Err("panicked".into()));
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!(
                "criterion {:>2} {name}: PASS ({detail}) [{secs:.1}s]",
                i + 1
            ),
            Err(detail) => {
                failed += 1;
                println!(
                    "criterion {:>2} {name}: FAIL ({detail}) [{secs:.1}s]",
                    i + 1
                );
            }
        }
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        criteria.len() - failed
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
