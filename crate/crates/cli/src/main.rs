use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use prco_core::metrics::{
    eval_set, evaluate, pass_at_k, render_svg, write_csv, ErrorCategory, EvalMode, Pipeline,
};
use prco_core::policy::{describe, generate, Decoding, PolicyConfig, PolicyModel, PolicyParams, Role};
use prco_core::rng::rng_for;
use prco_core::synthenv::QuestionKind;
use prco_core::trainer::{Checkpoint, RunConfig, StepRollouts, Trainer};

#[derive(Parser)]
#[command(name = "prco", version, about = "Dual-role policy-gradient training on a synthetic counting task")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a policy and write logs, curves, and final params.
    Train(TrainArgs),
    /// Accuracy of saved params on a held-out set.
    Eval(EvalArgs),
    /// Unbiased pass@k from sampled answers.
    Passk(PasskArgs),
    /// Error-category table on a held-out set (greedy decoding).
    Diagnose(DiagnoseArgs),
    /// Train once per (g_o, g_s) pair of a grid and tabulate results.
    Sweep(SweepArgs),
}

#[derive(Args)]
struct OutArgs {
    /// Output directory.
    #[arg(long, env = "PRCO_OUT_DIR", default_value = "runs")]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long, required_unless_present = "resume", conflicts_with = "resume")]
    config: Option<PathBuf>,
    /// `section.key=value` override, repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
    #[command(flatten)]
    out: OutArgs,
    /// Write every rollout tree to trees.jsonl (dual-role runs only).
    #[arg(long)]
    dump_trees: bool,
    /// Save a resumable checkpoint every N steps.
    #[arg(long, value_name = "N")]
    checkpoint_every: Option<u64>,
    /// Continue from a checkpoint directory instead of `--config`.
    #[arg(long, value_name = "DIR")]
    resume: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum PipelineArg {
    /// Observer caption, then Solver answer.
    Dual,
    /// Solver answers from the image with an empty caption.
    Direct,
}

#[derive(Args)]
struct ModelArgs {
    #[arg(long)]
    params: PathBuf,
    /// Run config the params were trained with (for policy settings).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "dual")]
    pipeline: PipelineArg,
    /// Hide the image from the Solver in the dual pipeline.
    #[arg(long)]
    solver_blind: bool,
    #[arg(long, default_value_t = 500)]
    eval_size: usize,
    #[arg(long, default_value_t = 1_000_003)]
    eval_seed: u64,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Samples per instance; 0 evaluates greedily.
    #[arg(long, default_value_t = 0)]
    n: usize,
    #[arg(long, default_value_t = 1.0)]
    temperature: f64,
    #[arg(long, default_value_t = 1.0)]
    top_p: f64,
}

#[derive(Args)]
struct PasskArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, value_delimiter = ',', default_value = "1,2,4,8,16,32")]
    k: Vec<usize>,
    /// Samples per instance; defaults to the largest k.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long, default_value_t = 0.6)]
    temperature: f64,
    #[arg(long, default_value_t = 0.95)]
    top_p: f64,
}

#[derive(Args)]
struct DiagnoseArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Also print the first N greedy transcripts.
    #[arg(long, default_value_t = 0)]
    show: usize,
}

#[derive(Args)]
struct SweepArgs {
    /// TOML file: a run config plus a `[grid]` table with `g_o` and `g_s` lists.
    #[arg(long)]
    grid: PathBuf,
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
    #[command(flatten)]
    out: OutArgs,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Passk(a) => passk(a),
        Command::Diagnose(a) => diagnose(a),
        Command::Sweep(a) => sweep(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", json!({ "error": format!("{e:#}") }));
            ExitCode::FAILURE
        }
    }
}

fn write_outputs(dir: &Path, trainer: &Trainer) -> Result<()> {
    let log = &trainer.log;
    log.write_jsonl(&dir.join("metrics.jsonl"))?;
    write_csv(&dir.join("metrics.csv"), &log.records)?;
    fs::write(dir.join("curves.svg"), render_svg(&log.records))?;
    let mut evals = String::new();
    for e in &trainer.evals {
        evals.push_str(&serde_json::to_string(e)?);
        evals.push('\n');
    }
    fs::write(dir.join("evals.jsonl"), evals)?;
    fs::write(dir.join("config.toml"), trainer.cfg.to_text())?;
    trainer.state.params.save(&dir.join("params.txt"), &trainer.cfg.env)?;
    Ok(())
}

fn train(args: TrainArgs) -> Result<()> {
    let mut trainer = match &args.resume {
        Some(dir) => Trainer::from_checkpoint(Checkpoint::load(dir).context("loading checkpoint")?)?,
        None => {
            let path = args.config.as_deref().context("--config is required")?;
            Trainer::new(RunConfig::load(path, &args.sets).context("loading config")?)?
        }
    };
    let dir = args.out.out;
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut trees = if args.dump_trees {
        Some(BufWriter::new(File::create(dir.join("trees.jsonl"))?))
    } else {
        None
    };
    let start = Instant::now();
    while !trainer.done() {
        let out = trainer.step()?;
        if let (Some(w), StepRollouts::Trees(ts)) = (trees.as_mut(), &out.rollouts) {
            for t in ts {
                writeln!(w, "{}", t.result.to_json_line(&trainer.model))?;
            }
        }
        let m = &out.metrics;
        if let Some(acc) = m.eval_accuracy {
            eprintln!("step {:>4}  reward {:.3}  eval {:.3}", m.step, m.mean_solver_reward, acc);
        }
        if let Some(n) = args.checkpoint_every {
            if n > 0 && trainer.state.step % n == 0 {
                trainer.checkpoint().save(&dir.join("checkpoint"))?;
            }
        }
    }
    if trainer.cfg.train.eval_interval > 0 && trainer.evals.last().is_none_or(|e| e.step != trainer.state.step) {
        let p = trainer.evaluate_now()?;
        trainer.evals.push(p);
    }
    write_outputs(&dir, &trainer)?;
    let last = trainer.evals.last();
    println!(
        "{}",
        json!({
            "out": dir,
            "steps": trainer.state.step,
            "final_accuracy": last.map(|e| e.accuracy),
            "seconds": start.elapsed().as_secs_f64(),
        })
    );
    Ok(())
}

fn load_model(args: &ModelArgs) -> Result<(PolicyModel, PolicyParams, Pipeline)> {
    let (params, env) =
        PolicyParams::load(&args.params).with_context(|| format!("loading {}", args.params.display()))?;
    let policy = match &args.config {
        Some(path) => RunConfig::load(path, &[])?.policy,
        None => PolicyConfig::default(),
    };
    let model = PolicyModel::new(&env, &policy)?;
    model.check_params(&params)?;
    let pipeline = match args.pipeline {
        PipelineArg::Dual => Pipeline::DualRole { solver_image: !args.solver_blind },
        PipelineArg::Direct => Pipeline::Direct,
    };
    Ok((model, params, pipeline))
}

fn eval(args: EvalArgs) -> Result<()> {
    let (model, params, pipeline) = load_model(&args.model)?;
    let set = eval_set(&model.env, args.model.eval_seed, args.model.eval_size)?;
    let mode = if args.n == 0 {
        EvalMode::Greedy
    } else {
        EvalMode::Sampled { n: args.n, temperature: args.temperature, top_p: args.top_p }
    };
    let report = evaluate(&model, &params, &set, mode, pipeline, args.model.eval_seed)?;
    println!(
        "{}",
        json!({ "accuracy": report.accuracy, "instances": set.len(), "samples": args.n.max(1) })
    );
    Ok(())
}

fn passk(args: PasskArgs) -> Result<()> {
    let max_k = args.k.iter().copied().max().unwrap_or(1);
    let n = args.n.unwrap_or(max_k);
    if n < max_k {
        bail!("n ({n}) must be at least the largest k ({max_k})");
    }
    let (model, params, pipeline) = load_model(&args.model)?;
    let set = eval_set(&model.env, args.model.eval_seed, args.model.eval_size)?;
    let mode = EvalMode::Sampled { n, temperature: args.temperature, top_p: args.top_p };
    let report = evaluate(&model, &params, &set, mode, pipeline, args.model.eval_seed)?;
    let counts = report.per_question.unwrap_or_default();
    for k in args.k {
        println!("{}", json!({ "k": k, "pass_at_k": pass_at_k(&counts, k)?, "n": n }));
    }
    Ok(())
}

fn diagnose(args: DiagnoseArgs) -> Result<()> {
    let (model, params, pipeline) = load_model(&args.model)?;
    let set = eval_set(&model.env, args.model.eval_seed, args.model.eval_size)?;
    let report = evaluate(&model, &params, &set, EvalMode::Greedy, pipeline, args.model.eval_seed)?;
    let cats = [ErrorCategory::Correct, ErrorCategory::Perception, ErrorCategory::Reasoning, ErrorCategory::Other];
    println!("{:<18}{:>12}{:>12}{:>12}{:>12}", "question", "correct", "perception", "reasoning", "other");
    for kind in QuestionKind::ALL.iter().map(Some).chain([None]) {
        let rows: Vec<ErrorCategory> = set
            .iter()
            .zip(&report.categories)
            .filter(|(inst, _)| kind.is_none_or(|k| inst.question.kind == *k))
            .map(|(_, c)| *c)
            .collect();
        let label = kind.map_or("all".to_string(), |k| format!("{k:?}"));
        let mut line = format!("{label:<18}");
        for c in cats {
            let frac = rows.iter().filter(|x| **x == c).count() as f64 / rows.len().max(1) as f64;
            line.push_str(&format!("{frac:>12.3}"));
        }
        println!("{line}");
    }
    for (inst, cat) in set.iter().zip(&report.categories).take(args.show) {
        let mut rng = rng_for(0, &[]);
        let (caption, answer) = match pipeline {
            Pipeline::DualRole { solver_image } => {
                let c = generate(&model, &params, Role::Observer, inst, true, None, Decoding::Greedy, &mut rng)?;
                let a = generate(&model, &params, Role::Solver, inst, solver_image, Some(&c.tokens), Decoding::Greedy, &mut rng)?;
                (c.tokens, a.tokens)
            }
            Pipeline::Direct => {
                let a = generate(&model, &params, Role::Solver, inst, true, Some(&[]), Decoding::Greedy, &mut rng)?;
                (Vec::new(), a.tokens)
            }
        };
        println!(
            "{:?} gold={} caption=[{}] answer=[{}] -> {cat:?}",
            inst.question,
            inst.gold,
            describe(&model, &caption),
            describe(&model, &answer)
        );
    }
    Ok(())
}

fn sweep(args: SweepArgs) -> Result<()> {
    let text = fs::read_to_string(&args.grid).with_context(|| format!("reading {}", args.grid.display()))?;
    let mut table: toml::Table = text.parse().context("parsing grid file")?;
    let grid = table.remove("grid").context("grid file needs a [grid] table")?;
    let list = |key: &str| -> Result<Vec<usize>> {
        let values = grid.get(key).and_then(|v| v.as_array()).with_context(|| format!("grid.{key} must be a list"))?;
        values
            .iter()
            .map(|v| v.as_integer().filter(|i| *i > 0).map(|i| i as usize).context("grid sizes must be positive integers"))
            .collect()
    };
    let (g_os, g_ss) = (list("g_o")?, list("g_s")?);
    let base = toml::to_string(&table)?;
    let dir = args.out.out;
    fs::create_dir_all(&dir)?;
    let mut csv = String::from("g_o,g_s,final_accuracy,mean_solver_reward_last\n");
    for &g_o in &g_os {
        for &g_s in &g_ss {
            let mut sets = args.sets.clone();
            sets.push(format!("train.g_o={g_o}"));
            sets.push(format!("train.g_s={g_s}"));
            let run = Trainer::new(RunConfig::from_text(&base, &sets)?)?.run(|_, _| Ok(()))?;
            let acc = run.evals.last().map(|e| e.accuracy);
            let reward = run.metrics.records.last().map(|m| m.mean_solver_reward);
            let fmt = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
            csv.push_str(&format!("{g_o},{g_s},{},{}\n", fmt(acc), fmt(reward)));
            println!("{}", json!({ "g_o": g_o, "g_s": g_s, "final_accuracy": acc }));
        }
    }
    fs::write(dir.join("sweep.csv"), csv)?;
    Ok(())
}
