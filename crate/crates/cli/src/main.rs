//! `longreach`: dataset generation, training, evaluation, attention
//! inspection and gradient checking.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use longreach_core::attention::{AttentionKind, AttentionWeights};
use longreach_core::metrics::EvalReport;
use longreach_core::seq2seq::{Model, ModelConfig};
use longreach_core::tasks::{
    fixture_tables, generate_splits, generate_splits_with_tables, read_splits, write_splits, Variant, SPLIT_NAMES,
};
use longreach_core::training::checks::gradient_suite;
use longreach_core::training::{evaluate_model, train_model, TrainConfig, LOG_FILE, TRAIN_CONFIG_FILE};

const TRACE_FILE: &str = "trace.json";
const SUMMARY_FILE: &str = "summary.csv";

#[derive(Parser)]
#[command(name = "longreach", version, about = "Location attention on the long lookup-table tasks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the seven splits of one task variant as TSV plus meta.json.
    Gen {
        #[arg(long)]
        variant: Variant,
        #[arg(long, env = "LONGREACH_SEED", default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Use tables with t1(000)=110 and t2(110)=100 forced.
        #[arg(long)]
        fixture_tables: bool,
    },
    /// Train a model on `<data>/train.tsv`.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        attention: AttentionKind,
        #[arg(long, env = "LONGREACH_SEED", default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 50)]
        epochs: usize,
        #[arg(long, default_value_t = 64)]
        batch_size: usize,
        #[arg(long, default_value_t = 1e-3)]
        lr: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a trained model; writes `eval_<split>.json` per split.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Comma-separated split names.
        #[arg(long, value_delimiter = ',', default_value = "interpolation,long1,long2,long3,long4,long5")]
        splits: Vec<String>,
        /// Output directory (defaults to the model directory).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Skip the encoder-state hull diagnostic.
        #[arg(long)]
        no_hull: bool,
        /// Also write a per-split CSV summary for plotting.
        #[arg(long)]
        reproduce: bool,
    },
    /// Decode one input and show the attention trace step by step.
    Inspect {
        #[arg(long)]
        model: PathBuf,
        /// Space-separated input tokens, e.g. "000 t1 t2 .".
        #[arg(long)]
        input: String,
        #[arg(long)]
        max_len: Option<usize>,
        /// Output directory for the JSON trace (defaults to the model directory).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Finite-difference checks of every primitive, the location attender
    /// and the end-to-end loss of every attention kind.
    Gradcheck {
        #[arg(long, env = "LONGREACH_SEED", default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 5)]
        trials: usize,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn run(command: Command) -> Result<ExitCode> {
    match command {
        Command::Gen {
            variant,
            seed,
            out,
            fixture_tables: fixed,
        } => {
            let splits = if fixed {
                generate_splits_with_tables(variant, seed, fixture_tables(seed))?
            } else {
                generate_splits(variant, seed)?
            };
            write_splits(&splits, &out).with_context(|| format!("writing {}", out.display()))?;
            for (name, s) in splits.iter() {
                println!("{name:<14}{:>6}", s.len());
            }
        }
        Command::Train {
            data,
            attention,
            seed,
            epochs,
            batch_size,
            lr,
            out,
        } => {
            let splits = read_splits(&data).with_context(|| format!("reading {}", data.display()))?;
            let mut cfg = TrainConfig::new(seed);
            cfg.epochs = epochs;
            cfg.batch_size = batch_size;
            cfg.adam.lr = lr;
            let (model, log) = train_model(ModelConfig::new(attention, seed), &splits.train, &cfg, |r| {
                let val = r.validation_seq_acc.map(|v| format!("{v:.4}")).unwrap_or_else(|| "-".into());
                eprintln!("epoch {:>3}  loss {:.5}  val {val}  {:.1}s", r.epoch, r.train_loss, r.seconds);
            })?;
            model.save(&out)?;
            fs::write(out.join(TRAIN_CONFIG_FILE), serde_json::to_string_pretty(&cfg)? + "\n")?;
            log.write_jsonl(&out.join(LOG_FILE))?;
        }
        Command::Eval {
            model,
            data,
            splits,
            out,
            no_hull,
            reproduce,
        } => {
            let m = Model::load(&model).with_context(|| format!("loading {}", model.display()))?;
            let d = read_splits(&data).with_context(|| format!("reading {}", data.display()))?;
            for s in &splits {
                if !SPLIT_NAMES.contains(&s.as_str()) {
                    bail!("unknown split `{s}` (expected one of {})", SPLIT_NAMES.join(", "));
                }
            }
            let names: Vec<&str> = splits.iter().map(String::as_str).collect();
            let reports = evaluate_model(&m, &d, &names, !no_hull)?;
            let out = out.unwrap_or(model);
            fs::create_dir_all(&out)?;
            for r in &reports {
                fs::write(out.join(format!("eval_{}.json", r.split)), serde_json::to_string_pretty(r)? + "\n")?;
            }
            print_reports(&reports);
            if reproduce {
                write_summary(&out.join(SUMMARY_FILE), m.config.attention.kind, &reports)?;
            }
        }
        Command::Inspect {
            model,
            input,
            max_len,
            out,
        } => {
            let m = Model::load(&model).with_context(|| format!("loading {}", model.display()))?;
            let tokens: Vec<&str> = input.split_whitespace().collect();
            if tokens.is_empty() {
                bail!("empty input");
            }
            let max_len = max_len.unwrap_or(2 * tokens.len() + 5);
            let decoded = m.greedy_decode(&tokens, max_len, true)?;
            print_trace(&tokens, &decoded.trace)?;
            println!("output: {}", decoded.tokens.join(" "));
            if decoded.hit_max_len {
                println!("(stopped at max_len {max_len} without <eos>)");
            }
            let out = out.unwrap_or(model);
            fs::create_dir_all(&out)?;
            let path = out.join(TRACE_FILE);
            fs::write(&path, serde_json::to_string_pretty(&decoded)? + "\n")?;
            println!("trace written to {}", path.display());
        }
        Command::Gradcheck { seed, trials } => {
            let results = gradient_suite(seed, trials)?;
            let mut failed = 0;
            for r in &results {
                let status = if r.passed() { "ok" } else { "FAIL" };
                println!("{:<28} {:>10.3e}  < {:.0e}  {status}", r.name, r.max_rel_error, r.tolerance);
                failed += !r.passed() as usize;
            }
            println!("{} checks, {failed} failed", results.len());
            if failed > 0 {
                return Ok(ExitCode::from(1));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn print_reports(reports: &[EvalReport]) {
    println!(
        "{:<14}{:>9}{:>12}{:>11}{:>7}{:>13}",
        "split", "seq_acc", "seq_acc_be", "attn_loss", "n", "out_of_hull"
    );
    for r in reports {
        let hull = r
            .hull
            .map(|h| format!("{:.4}", h.state_fraction_outside))
            .unwrap_or_else(|| "-".into());
        println!(
            "{:<14}{:>9.4}{:>12.4}{:>11.4}{:>7}{:>13}",
            r.split, r.seq_acc, r.seq_acc_be, r.attn_loss, r.n_examples, hull
        );
    }
}

fn write_summary(path: &Path, kind: AttentionKind, reports: &[EvalReport]) -> Result<()> {
    let mut body = String::from("attention,split,seq_acc,seq_acc_be,attn_loss,n_examples\n");
    for r in reports {
        body += &format!(
            "{kind},{},{},{},{},{}\n",
            r.split, r.seq_acc, r.seq_acc_be, r.attn_loss, r.n_examples
        );
    }
    fs::write(path, body)?;
    Ok(())
}

fn argmax(w: &[f64]) -> Result<usize> {
    Ok(AttentionWeights::new(w.to_vec())?.argmax())
}

fn print_trace(input: &[&str], trace: &[longreach_core::seq2seq::StepRecord]) -> Result<()> {
    let opt = |v: Option<f64>| v.map(|v| format!("{v:.3}")).unwrap_or_else(|| "-".into());
    let at = |w: &Option<Vec<f64>>| -> Result<String> {
        Ok(match w {
            Some(w) => {
                let s = argmax(w)?;
                format!("{s}:{}", input.get(s).copied().unwrap_or("?"))
            }
            None => "-".into(),
        })
    };
    println!(
        "{:>4} {:>6} {:>9} {:>9} {:>9} {:>7} {:>7} {:>23} {:>7}",
        "step", "token", "alpha", "gamma", "lambda", "mu", "sigma", "rho", "%lambda"
    );
    for r in trace {
        let a = &r.attention;
        let rho = a
            .rho
            .map(|p| format!("{:.2} {:.2} {:.2}", p[0], p[1], p[2]))
            .unwrap_or_else(|| "-".into());
        println!(
            "{:>4} {:>6} {:>9} {:>9} {:>9} {:>7} {:>7} {:>23} {:>7}",
            r.step,
            r.token,
            at(&Some(a.alpha.clone()))?,
            at(&a.gamma)?,
            at(&a.lambda)?,
            opt(a.mu),
            opt(a.sigma),
            rho,
            opt(a.lambda_percent)
        );
    }
    Ok(())
}
