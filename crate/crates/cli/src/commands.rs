use std::fmt::Write as _;
use std::path::Path;

use anyhow::{anyhow, Context};
use deluge::analysis::{count_flops, extract_norms, write_norms};
use deluge::data::{compute_stats, load_cifar, synthetic, ChannelStats, Dataset, Split, Variant};
use deluge::gradcheck::{check_model, check_ops, CheckResult};
use deluge::model::{checkpoint, ModelSpec, Stem};
use deluge::train::{evaluate, train as run_training, Schedule, TrainConfig};
use deluge::{Error, Model, Rng, Shape4};

use crate::{
    DataArgs, DatasetKind, DescribeArgs, EvalArgs, Format, GradcheckArgs, ModelChoice, NormsArgs,
    ScheduleArg, Scope, SplitArg, TrainArgs,
};

pub const EXIT_OTHER: u8 = 1;
pub const EXIT_USAGE: u8 = 2;
pub const EXIT_DATA: u8 = 3;
pub const EXIT_CHECK: u8 = 4;

pub struct Failure {
    pub code: u8,
    pub error: anyhow::Error,
}

type CmdResult = Result<(), Failure>;

fn fail(code: u8, error: impl Into<anyhow::Error>) -> Failure {
    Failure {
        code,
        error: error.into(),
    }
}

fn usage(msg: String) -> Failure {
    fail(EXIT_USAGE, anyhow!(msg))
}

/// Exit class of a library error.
fn classify(e: Error) -> Failure {
    let code = match &e {
        Error::UnknownModel { .. } | Error::InvalidSpec(_) => EXIT_USAGE,
        Error::MissingFile(_)
        | Error::RecordLength { .. }
        | Error::LabelOutOfRange { .. }
        | Error::ZeroStd { .. } => EXIT_DATA,
        _ => EXIT_OTHER,
    };
    fail(code, e)
}

fn resolve_spec(choice: &ModelChoice, classes: Option<usize>) -> Result<ModelSpec, Failure> {
    let spec = match (&choice.model, &choice.spec) {
        (Some(name), _) => {
            let spec = ModelSpec::zoo(name, classes.unwrap_or(100)).map_err(classify)?;
            match (classes, spec.stem) {
                (None, Stem::Imagenet) => ModelSpec::zoo(name, 1000).map_err(classify)?,
                _ => spec,
            }
        }
        (None, Some(path)) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading spec file {}", path.display()))
                .map_err(|e| fail(EXIT_USAGE, e))?;
            let mut spec = ModelSpec::from_toml(&text).map_err(classify)?;
            if let Some(c) = classes {
                spec.num_classes = c;
                spec.validate().map_err(classify)?;
            }
            spec
        }
        (None, None) => return Err(usage("one of --model or --spec is required".into())),
    };
    Ok(spec)
}

fn parse_input(text: &str) -> Result<Shape4, Failure> {
    let dims: Vec<usize> = text
        .split('x')
        .map(|p| p.trim().parse::<usize>())
        .collect::<Result<_, _>>()
        .map_err(|_| usage(format!("--input must look like 3x32x32, got `{text}`")))?;
    match dims[..] {
        [c, h, w] if c > 0 && h > 0 && w > 0 => Ok(Shape4::new(1, c, h, w)),
        _ => Err(usage(format!(
            "--input must look like 3x32x32, got `{text}`"
        ))),
    }
}

pub fn describe(args: DescribeArgs) -> CmdResult {
    let spec = resolve_spec(&args.choice, args.classes)?;
    let input = match &args.input {
        Some(t) => parse_input(t)?,
        None => spec.default_input(),
    };
    let report = count_flops(&spec, input).map_err(|e| match e {
        Error::InvalidArgument(_) => fail(EXIT_USAGE, e),
        other => classify(other),
    })?;
    match args.format {
        Format::Table => println!("{report}"),
        Format::Records => report
            .write_records(std::io::stdout().lock())
            .map_err(|e| fail(EXIT_OTHER, e))?,
    }
    Ok(())
}

/// Train and test splits plus the train-split channel statistics.
struct Splits {
    train: Dataset,
    test: Dataset,
    stats: ChannelStats,
}

fn load_data(args: &DataArgs, need: SplitArg) -> Result<Splits, Failure> {
    match args.dataset {
        DatasetKind::Synthetic => {
            // both splits come from one draw so they share class patterns
            let n = args.samples;
            let all = synthetic(
                2 * n,
                args.synthetic_classes,
                args.size,
                args.noise,
                &mut Rng::new(args.data_seed),
            )
            .map_err(|e| fail(EXIT_DATA, e))?;
            let train_idx: Vec<usize> = (0..n).collect();
            let test_idx: Vec<usize> = (n..2 * n).collect();
            let part = |idx: &[usize]| -> Result<Dataset, Failure> {
                let (x, y) = all.batch(idx).map_err(|e| fail(EXIT_DATA, e))?;
                Dataset::new(x, y, all.classes).map_err(|e| fail(EXIT_DATA, e))
            };
            let train = part(&train_idx)?;
            let test = part(&test_idx)?;
            let stats = compute_stats(&train).map_err(classify)?;
            Ok(Splits { train, test, stats })
        }
        kind => {
            let variant = if kind == DatasetKind::Cifar10 {
                Variant::Cifar10
            } else {
                Variant::Cifar100
            };
            let dir = args
                .data_dir
                .as_deref()
                .ok_or_else(|| usage("--data-dir is required for CIFAR datasets".into()))?;
            let train = load_cifar(dir, variant, Split::Train).map_err(classify)?;
            let stats = compute_stats(&train).map_err(classify)?;
            let test = match need {
                SplitArg::Test => load_cifar(dir, variant, Split::Test).map_err(classify)?,
                SplitArg::Train => train.clone(),
            };
            Ok(Splits { train, test, stats })
        }
    }
}

fn check_classes(model: &Model, ds: &Dataset) -> CmdResult {
    if model.spec().num_classes != ds.classes {
        return Err(fail(
            EXIT_DATA,
            anyhow!(
                "model `{}` has {} classes but the dataset has {}",
                model.spec().name,
                model.spec().num_classes,
                ds.classes
            ),
        ));
    }
    Ok(())
}

fn check_parent(path: &Path) -> CmdResult {
    let parent = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    if !parent.is_dir() {
        return Err(fail(
            EXIT_OTHER,
            anyhow!("output directory {} does not exist", parent.display()),
        ));
    }
    Ok(())
}

pub fn train(args: TrainArgs) -> CmdResult {
    let need_test = if args.eval_each_epoch {
        SplitArg::Test
    } else {
        SplitArg::Train
    };
    let classes = match args.data.dataset {
        DatasetKind::Cifar10 => 10,
        DatasetKind::Cifar100 => 100,
        DatasetKind::Synthetic => args.data.synthetic_classes,
    };
    let spec = resolve_spec(&args.choice, Some(classes))?;
    check_parent(&args.out)?;
    if let Some(log) = &args.log {
        check_parent(log)?;
    }
    let synthetic = args.data.dataset == DatasetKind::Synthetic;
    let schedule = match args.schedule.unwrap_or(if synthetic {
        ScheduleArg::None
    } else {
        ScheduleArg::Cifar
    }) {
        ScheduleArg::Cifar => Schedule::Cifar,
        ScheduleArg::Imagenet => Schedule::Imagenet,
        ScheduleArg::None => Schedule::Custom {
            drops: vec![],
            total: args.epochs,
        },
    };
    let data = load_data(&args.data, need_test)?;
    let cfg = TrainConfig {
        lr0: args.lr,
        momentum: args.momentum,
        weight_decay: args.weight_decay,
        schedule,
        batch_size: args.batch_size,
        seed: args.seed,
        decay_norm_and_bias: !args.no_decay_norm_bias,
        augment: if args.no_augment || synthetic {
            None
        } else {
            Some(Default::default())
        },
        normalize: Some(data.stats),
    };
    cfg.validate().map_err(|e| fail(EXIT_USAGE, e))?;
    if cfg.batch_size > data.train.len() {
        return Err(usage(format!(
            "--batch-size {} exceeds the {} training items",
            cfg.batch_size,
            data.train.len()
        )));
    }
    if args.epochs > cfg.schedule.total_epochs() {
        return Err(usage(format!(
            "--epochs {} exceeds the schedule's {} epochs",
            args.epochs,
            cfg.schedule.total_epochs()
        )));
    }

    let mut model = Model::build(&spec, &mut Rng::new(args.seed)).map_err(classify)?;
    check_classes(&model, &data.train)?;
    let eval = args.eval_each_epoch.then_some(&data.test);
    let mut log_text = String::new();
    run_training(&mut model, &data.train, eval, &cfg, args.epochs, |log| {
        println!("{log}");
        let _ = writeln!(log_text, "{log}");
    })
    .map_err(classify)?;
    checkpoint::save(&model, &args.out)
        .with_context(|| format!("writing checkpoint {}", args.out.display()))
        .map_err(|e| fail(EXIT_OTHER, e))?;
    if let Some(path) = &args.log {
        checkpoint::write_atomic(path, log_text.as_bytes())
            .with_context(|| format!("writing log {}", path.display()))
            .map_err(|e| fail(EXIT_OTHER, e))?;
    }
    Ok(())
}

fn load_checkpoint(path: &Path) -> Result<Model, Failure> {
    checkpoint::load(path, None)
        .with_context(|| format!("loading checkpoint {}", path.display()))
        .map_err(|e| fail(EXIT_OTHER, e))
}

pub fn eval(args: EvalArgs) -> CmdResult {
    let model = load_checkpoint(&args.checkpoint)?;
    let data = load_data(&args.data, args.split)?;
    let ds = match args.split {
        SplitArg::Train => &data.train,
        SplitArg::Test => &data.test,
    };
    check_classes(&model, ds)?;
    let r = evaluate(&model, ds, args.batch_size, Some(&data.stats)).map_err(classify)?;
    println!("top1_err={:.2}", r.top1_error);
    if args.top5 {
        println!("top5_err={:.2}", r.top5_error);
    }
    println!("loss={:.6}", r.loss);
    Ok(())
}

pub fn gradcheck(args: GradcheckArgs) -> CmdResult {
    let mut results: Vec<CheckResult> = Vec::new();
    if matches!(args.scope, Scope::Ops | Scope::All) {
        results.extend(check_ops(args.seed).map_err(classify)?);
    }
    if matches!(args.scope, Scope::Model | Scope::All) {
        results.extend(check_model(args.seed).map_err(classify)?);
    }
    let mut failed = 0;
    for r in &results {
        let verdict = if r.passed() { "PASS" } else { "FAIL" };
        failed += usize::from(!r.passed());
        println!(
            "{} worst={:.3e} tol={:.0e} {verdict}",
            r.target, r.worst, r.tolerance
        );
    }
    if failed > 0 {
        return Err(fail(
            EXIT_CHECK,
            anyhow!("{failed} of {} gradient checks failed", results.len()),
        ));
    }
    Ok(())
}

pub fn norms(args: NormsArgs) -> CmdResult {
    let model = load_checkpoint(&args.checkpoint)?;
    let profiles = extract_norms(&model, args.all_layers).map_err(|e| fail(EXIT_OTHER, e))?;
    let mut buf = Vec::new();
    write_norms(&profiles, &mut buf).map_err(|e| fail(EXIT_OTHER, e))?;
    checkpoint::write_atomic(&args.out, &buf)
        .with_context(|| format!("writing {}", args.out.display()))
        .map_err(|e| fail(EXIT_OTHER, e))?;
    Ok(())
}
