//! Acceptance harness: one PASS/FAIL line per criterion.
//!
//! Trained checkpoints and their evaluation reports are cached under
//! `$CARGO_TARGET_TMPDIR/acceptance`, keyed by attention kind and seed and
//! validated against the stored configs. `LONGREACH_FRESH=1` ignores the
//! cache. The process exits 0 once every criterion has been reported;
//! `LONGREACH_STRICT=1` makes any FAIL exit 1.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rand::Rng;

use longreach_core::attention::{
    attention_from_scores, gaussian_attention, mix_with_percent, soft_staircase, AttentionKind, AttentionWeights,
    LocationAttender, LocationConfig, LocationState, PositionalScorer, PositionalScorerKind,
};
use longreach_core::metrics::{seq_acc, seq_acc_be, EvalReport, Hull};
use longreach_core::numcore::rng::substream;
use longreach_core::numcore::ParamStore;
use longreach_core::seq2seq::{Model, ModelConfig};
use longreach_core::tasks::{
    generate_splits, read_splits, verify_splits, write_splits, DatasetSplits, Variant, LONG_SPLITS,
};
use longreach_core::training::checks::gradient_suite;
use longreach_core::training::{evaluate_model, split_states, train_model, TrainConfig, TRAIN_CONFIG_FILE};

const SEEDS: [u64; 3] = [0, 1, 2];
const EVAL_SPLITS: [&str; 6] = ["interpolation", "long1", "long2", "long3", "long4", "long5"];
const REPORTS_FILE: &str = "reports.json";

type Reports = BTreeMap<String, EvalReport>;

struct Outcome {
    id: usize,
    title: &'static str,
    passed: bool,
    detail: String,
}

fn cache_root() -> PathBuf {
    let base = option_env!("CARGO_TARGET_TMPDIR").map(PathBuf::from).unwrap_or_else(std::env::temp_dir);
    base.join("acceptance")
}

fn fresh() -> bool {
    std::env::var("LONGREACH_FRESH").is_ok_and(|v| v == "1")
}

fn same_json<T: serde::Serialize>(path: &Path, value: &T) -> bool {
    let Ok(text) = fs::read_to_string(path) else { return false };
    let Ok(stored) = serde_json::from_str::<serde_json::Value>(&text) else { return false };
    serde_json::to_value(value).is_ok_and(|v| v == stored)
}

/// Trains (or loads) `kind` with `seed` on the Standard task and returns its
/// reports on the interpolation and long splits.
fn trained_reports(splits: &DatasetSplits, kind: AttentionKind, seed: u64) -> (Model<f32>, Reports) {
    let dir = cache_root().join(format!("{kind}_seed{seed}"));
    let model_config = ModelConfig::new(kind, seed);
    let train_config = TrainConfig::new(seed);
    let cached = !fresh()
        && same_json(&dir.join("config.json"), &model_config)
        && same_json(&dir.join(TRAIN_CONFIG_FILE), &train_config);
    let model = match cached.then(|| Model::load(&dir)).and_then(Result::ok) {
        Some(m) => m,
        None => {
            let start = Instant::now();
            eprintln!("  training {kind} seed {seed} ...");
            let (m, _) = train_model(model_config, &splits.train, &train_config, |_| {}).expect("training");
            eprintln!("  trained {kind} seed {seed} in {:.0?}", start.elapsed());
            m.save(&dir).expect("save checkpoint");
            fs::write(dir.join(TRAIN_CONFIG_FILE), serde_json::to_string_pretty(&train_config).unwrap()).unwrap();
            let _ = fs::remove_file(dir.join(REPORTS_FILE));
            m
        }
    };
    let path = dir.join(REPORTS_FILE);
    if let Some(r) = fs::read_to_string(&path).ok().and_then(|t| serde_json::from_str(&t).ok()) {
        return (model, r);
    }
    let reports: Reports = evaluate_model(&model, splits, &EVAL_SPLITS, true)
        .expect("evaluation")
        .into_iter()
        .map(|r| (r.split.clone(), r))
        .collect();
    fs::write(&path, serde_json::to_string_pretty(&reports).unwrap()).unwrap();
    (model, reports)
}

fn acc(r: &Reports, split: &str) -> f64 {
    r[split].seq_acc
}

fn fmt_row(r: &Reports, field: fn(&EvalReport) -> f64) -> String {
    EVAL_SPLITS
        .iter()
        .map(|s| format!("{:.3}", field(&r[*s])))
        .collect::<Vec<_>>()
        .join(" ")
}

fn criterion_dataset() -> Outcome {
    let start = Instant::now();
    let splits = generate_splits(Variant::Standard, 0).expect("generate");
    let report = verify_splits(&splits).expect("verify");
    let elapsed = start.elapsed();
    let sizes_ok = splits.train.len() == 9_432
        && splits.interpolation.len() == 3_000
        && splits.long.len() == LONG_SPLITS
        && splits.long.iter().all(|l| l.len() == 5_000);
    let tables_ok = splits.long.iter().enumerate().all(|(k, l)| {
        l.iter().all(|e| e.input.iter().filter(|t| t.starts_with('t')).count() == 5 + k)
    });
    let base = splits.train.len() + splits.interpolation.len();
    Outcome {
        id: 1,
        title: "dataset exactness",
        passed: sizes_ok && tables_ok && base == 12_432 && report.is_clean() && elapsed < Duration::from_secs(60),
        detail: format!(
            "base {base}, train {}, interpolation {}, long {:?}, oracle mismatches {}, gold mismatches {}, {:.1?}",
            splits.train.len(),
            splits.interpolation.len(),
            splits.long.iter().map(Vec::len).collect::<Vec<_>>(),
            report.oracle_mismatches,
            report.gold_mismatches,
            elapsed
        ),
    }
}

fn criterion_gradients() -> Outcome {
    let start = Instant::now();
    let results = gradient_suite(0, 100).expect("gradient suite");
    let elapsed = start.elapsed();
    let worst = results.iter().fold(0.0f64, |w, r| w.max(r.max_rel_error));
    let failed: Vec<&str> = results.iter().filter(|r| !r.passed()).map(|r| r.name.as_str()).collect();
    Outcome {
        id: 6,
        title: "gradient correctness",
        passed: failed.is_empty() && worst < 1e-3 && elapsed < Duration::from_secs(120),
        detail: format!("{} checks, worst rel. error {worst:.2e}, failed {failed:?}, {elapsed:.1?}", results.len()),
    }
}

fn criterion_properties() -> Outcome {
    let start = Instant::now();
    let mut rng = substream(7, "acceptance.properties");
    let mut problems = Vec::new();
    let simplex = |w: &AttentionWeights| {
        let s: f64 = w.as_slice().iter().sum();
        w.as_slice().iter().all(|&v| v >= 0.0) && (s - 1.0).abs() <= 1e-6
    };

    let mut store = ParamStore::<f64>::new();
    let config = LocationConfig {
        weighter_dim: 8,
        ..LocationConfig::default()
    };
    let loc = LocationAttender::new(&mut store, "loc", 6, config, &mut substream(7, "init")).unwrap();
    let mut off_simplex = 0;
    for _ in 0..10_000 {
        let n = rng.gen_range(1..24);
        let scale: f64 = rng.gen_range(0.0..50.0);
        let scores: Vec<f64> = (0..n).map(|_| scale * (rng.gen::<f64>() - 0.5)).collect();
        let gamma = attention_from_scores(&scores).unwrap();
        let query: Vec<f64> = (0..6).map(|_| scale * (rng.gen::<f64>() - 0.5)).collect();
        let mut state = LocationState::reset(8);
        state.prev_mean_pos = rng.gen();
        let (lambda, _, _) = loc.attend(&store, &query, n, &state).unwrap();
        let g = gaussian_attention(rng.gen_range(-1.0..2.0), rng.gen_range(1e-3..2.0), n).unwrap();
        let alpha = mix_with_percent(&gamma, &lambda, rng.gen()).unwrap();
        off_simplex += [&gamma, &lambda, &g, &alpha].iter().filter(|w| !simplex(w)).count();
    }
    if off_simplex > 0 {
        problems.push(format!("{off_simplex} weights off the simplex"));
    }

    let mut not_unimodal = 0;
    for _ in 0..2_000 {
        let n = rng.gen_range(2..40);
        let mu: f64 = rng.gen();
        let w = gaussian_attention(mu, rng.gen_range(0.27..3.0) / n as f64, n).unwrap();
        let w = w.as_slice();
        let peak = (mu * (n - 1) as f64).round() as usize;
        let ok = (1..=peak).all(|s| w[s] >= w[s - 1] - 1e-15) && (peak + 1..n).all(|s| w[s] <= w[s - 1] + 1e-15);
        not_unimodal += !ok as usize;
    }
    if not_unimodal > 0 {
        problems.push(format!("{not_unimodal} non-unimodal lambdas"));
    }

    let fixed = (-5..=5).all(|k| (soft_staircase(k as f64) - k as f64).abs() <= 5e-5);
    let grid: Vec<f64> = (0..10_000).map(|i| -5.0 + 10.0 * i as f64 / 9_999.0).collect();
    let monotone = grid.windows(2).all(|w| soft_staircase(w[1]) >= soft_staircase(w[0]));
    if !fixed || !monotone {
        problems.push(format!("staircase fixed points {fixed}, monotone {monotone}"));
    }

    let mut xl_store = ParamStore::<f64>::new();
    let xl = PositionalScorer::new(&mut xl_store, "xl", PositionalScorerKind::TransformerXl, 8, &mut substream(7, "xl"))
        .unwrap();
    let mut shift_errors = 0;
    for _ in 0..500 {
        let k: Vec<f64> = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let q: Vec<f64> = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let (s, t, d) = (rng.gen_range(0..12), rng.gen_range(0..12), rng.gen_range(1..20));
        let a = xl.score(&xl_store, &k, s, &q, t).unwrap();
        let b = xl.score(&xl_store, &k, s + d, &q, t + d).unwrap();
        shift_errors += ((a - b).abs() > 1e-9 * (1.0 + a.abs())) as usize;
    }
    if shift_errors > 0 {
        problems.push(format!("{shift_errors} TransformerXL shift violations"));
    }

    let mut not_between = 0;
    for _ in 0..2_000 {
        let n = rng.gen_range(2..16);
        let gamma = attention_from_scores(&(0..n).map(|_| rng.gen_range(-5.0..5.0)).collect::<Vec<_>>()).unwrap();
        let lambda = attention_from_scores(&(0..n).map(|_| rng.gen_range(-5.0..5.0)).collect::<Vec<_>>()).unwrap();
        let alpha = mix_with_percent(&gamma, &lambda, rng.gen()).unwrap();
        let ok = (0..n).all(|s| {
            let (g, l, a) = (gamma.as_slice()[s], lambda.as_slice()[s], alpha.as_slice()[s]);
            a >= g.min(l) - 1e-12 && a <= g.max(l) + 1e-12
        });
        not_between += !ok as usize;
    }
    if not_between > 0 {
        problems.push(format!("{not_between} mixes outside their parts"));
    }

    let tokens = ["000", "110", "<eos>"];
    let mut order_violations = 0;
    for _ in 0..1_000 {
        let pred: Vec<&str> = (0..rng.gen_range(0..8)).map(|_| tokens[rng.gen_range(0..3)]).collect();
        let mut target: Vec<&str> = (0..rng.gen_range(0..7)).map(|_| tokens[rng.gen_range(0..2)]).collect();
        target.push("<eos>");
        order_violations += (seq_acc(&pred, &target) > seq_acc_be(&pred, &target)) as usize;
    }
    if order_violations > 0 {
        problems.push(format!("{order_violations} pairs with seq_acc > seq_acc_be"));
    }

    let t = |s: &'static str| s.split(' ').collect::<Vec<_>>();
    let target = t("000 110 100 <eos>");
    let units = seq_acc(&target, &target) == 1.0
        && seq_acc(&t("000 110 <eos>"), &target) == 0.0
        && seq_acc_be(&t("000 110 <eos>"), &target) == 1.0
        && seq_acc_be(&t("000 111 <eos>"), &target) == 0.0;
    if !units {
        problems.push("metric unit examples".into());
    }

    let elapsed = start.elapsed();
    Outcome {
        id: 7,
        title: "property suites",
        passed: problems.is_empty() && elapsed < Duration::from_secs(60),
        detail: if problems.is_empty() {
            format!("10^4 simplex configs, unimodality, staircase, XL shift, mix betweenness, 10^3 metric pairs ok, {elapsed:.1?}")
        } else {
            format!("{problems:?}, {elapsed:.1?}")
        },
    }
}

fn criterion_determinism() -> Outcome {
    // Two independent gen -> train -> eval pipelines with the same seed;
    // three epochs keep the check short.
    let root = cache_root().join("determinism");
    let _ = fs::remove_dir_all(&root);
    let run = |name: &str| -> (BTreeMap<String, Vec<u8>>, String) {
        let dir = root.join(name);
        let data = dir.join("data");
        write_splits(&generate_splits(Variant::Standard, 11).unwrap(), &data).unwrap();
        let splits = read_splits(&data).unwrap();
        let mut cfg = TrainConfig::new(11);
        cfg.epochs = 3;
        let (model, _) = train_model(ModelConfig::new(AttentionKind::Mix, 11), &splits.train, &cfg, |_| {}).unwrap();
        let model_dir = dir.join("model");
        model.save(&model_dir).unwrap();
        let reloaded = Model::load(&model_dir).unwrap();
        let reports = evaluate_model(&reloaded, &splits, &["interpolation", "long1"], true).unwrap();
        let files = fs::read_dir(&model_dir)
            .unwrap()
            .map(|e| {
                let p = e.unwrap().path();
                (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap())
            })
            .collect();
        (files, serde_json::to_string(&reports).unwrap())
    };
    let (files_a, reports_a) = run("a");
    let (files_b, reports_b) = run("b");
    let identical = files_a == files_b && reports_a == reports_b;
    Outcome {
        id: 9,
        title: "determinism",
        passed: identical && !files_a.is_empty(),
        detail: format!(
            "{} checkpoint files {}, reports {}",
            files_a.len(),
            if files_a == files_b { "byte-identical" } else { "DIFFER" },
            if reports_a == reports_b { "byte-identical" } else { "DIFFER" }
        ),
    }
}

fn main() {
    let strict = std::env::var("LONGREACH_STRICT").is_ok_and(|v| v == "1");
    let mut outcomes = vec![criterion_dataset()];

    let splits = generate_splits(Variant::Standard, 0).expect("generate");
    let mut runs: BTreeMap<(AttentionKind, u64), Reports> = BTreeMap::new();
    let mut transformer_model = None;
    for kind in [AttentionKind::Location, AttentionKind::Mix, AttentionKind::Transformer] {
        for seed in SEEDS {
            let (m, r) = trained_reports(&splits, kind, seed);
            if kind == AttentionKind::Transformer && seed == 0 {
                transformer_model = Some(m);
            }
            eprintln!("  {kind} seed {seed}: seq_acc {}", fmt_row(&r, |e| e.seq_acc));
            runs.insert((kind, seed), r);
        }
    }
    for kind in [AttentionKind::Additive, AttentionKind::Multiplicative, AttentionKind::ScaledDot] {
        let (_, r) = trained_reports(&splits, kind, 0);
        eprintln!("  {kind} seed 0: attn_loss {}", fmt_row(&r, |e| e.attn_loss));
        runs.insert((kind, 0), r);
    }
    let of = |kind: AttentionKind| -> Vec<&Reports> { SEEDS.iter().filter_map(|s| runs.get(&(kind, *s))).collect() };
    let best = |kind: AttentionKind, split: &str| of(kind).iter().map(|r| acc(r, split)).fold(0.0f64, f64::max);

    let (loc_i, mix_i) = (best(AttentionKind::Location, "interpolation"), best(AttentionKind::Mix, "interpolation"));
    outcomes.push(Outcome {
        id: 2,
        title: "interpolation accuracy",
        passed: loc_i >= 0.99 && mix_i >= 0.99,
        detail: format!("best-of-3 interpolation seq_acc: location {loc_i:.4}, mix {mix_i:.4} (need >= 0.99)"),
    });

    let loc_best: Vec<f64> = (1..=5).map(|k| best(AttentionKind::Location, &format!("long{k}"))).collect();
    let tr_best: Vec<f64> = (1..=5).map(|k| best(AttentionKind::Transformer, &format!("long{k}"))).collect();
    let exceeds = loc_best.iter().zip(&tr_best).all(|(l, t)| l > t);
    outcomes.push(Outcome {
        id: 3,
        title: "extrapolation gap",
        passed: loc_best[0] >= 0.60 && tr_best[2] <= 0.10 && exceeds,
        detail: format!(
            "best-of-3 seq_acc long1..5: location {loc_best:.3?}, transformer {tr_best:.3?} \
             (need location long1 >= 0.60, transformer long3 <= 0.10, location > transformer on every split)"
        ),
    });

    let eos = of(AttentionKind::Location).into_iter().enumerate().find_map(|(i, r)| {
        let ok = (1..=3).all(|k| {
            let e = &r[&format!("long{k}")];
            e.seq_acc_be >= 0.90 && e.seq_acc < e.seq_acc_be
        });
        ok.then_some(SEEDS[i])
    });
    let be_rows: Vec<String> = of(AttentionKind::Location)
        .iter()
        .map(|r| {
            (1..=3)
                .map(|k| {
                    let e = &r[&format!("long{k}")];
                    format!("{:.3}/{:.3}", e.seq_acc, e.seq_acc_be)
                })
                .collect::<Vec<_>>()
                .join(" ")
        })
        .collect();
    outcomes.push(Outcome {
        id: 4,
        title: "the <eos> problem",
        passed: eos.is_some(),
        detail: format!(
            "location seq_acc/seq_acc_be on long1..3 per seed: [{}]; qualifying seed {eos:?} \
             (need seq_acc_be >= 0.90 and seq_acc < seq_acc_be on each)",
            be_rows.join("; ")
        ),
    });

    let ratio = |r: &Reports| r["long1"].attn_loss / r["interpolation"].attn_loss;
    let mix_ratios: Vec<f64> = of(AttentionKind::Mix).iter().map(|r| ratio(r)).collect();
    let mix_best = mix_ratios.iter().copied().fold(f64::INFINITY, f64::min);
    let content: Vec<(AttentionKind, f64)> = [AttentionKind::Additive, AttentionKind::Multiplicative, AttentionKind::ScaledDot]
        .into_iter()
        .map(|k| (k, ratio(&runs[&(k, 0)])))
        .collect();
    outcomes.push(Outcome {
        id: 5,
        title: "attention-loss trend",
        passed: mix_best <= 1.5 && content.iter().all(|(_, r)| *r >= 1.3),
        detail: format!(
            "attn_loss long1/interpolation: mix per seed {mix_ratios:.2?} (need best <= 1.5); {} (need each >= 1.3)",
            content.iter().map(|(k, r)| format!("{k} {r:.2}")).collect::<Vec<_>>().join(", ")
        ),
    });

    outcomes.push(criterion_gradients());
    outcomes.push(criterion_properties());

    let transformer = transformer_model.expect("transformer seed 0");
    let train_states = split_states(&transformer, &splits.train).unwrap();
    let hull = Hull::fit(train_states.iter().map(Vec::as_slice)).unwrap();
    let on_train = hull.fractions(train_states.iter().map(Vec::as_slice)).unwrap();
    let long5 = runs[&(AttentionKind::Transformer, 0)]["long5"].hull.expect("hull on long5");
    outcomes.push(Outcome {
        id: 8,
        title: "hull diagnostic",
        passed: long5.state_fraction_outside > 0.0 && on_train.state_fraction_outside == 0.0,
        detail: format!(
            "transformer seed 0 out-of-hull state fraction: long5 {:.4}, train {:.4}",
            long5.state_fraction_outside, on_train.state_fraction_outside
        ),
    });

    outcomes.push(criterion_determinism());

    outcomes.sort_by_key(|o| o.id);
    println!();
    for o in &outcomes {
        println!(
            "criterion {} [{}]: {} - {}",
            o.id,
            o.title,
            if o.passed { "PASS" } else { "FAIL" },
            o.detail
        );
    }
    let failed = outcomes.iter().filter(|o| !o.passed).count();
    println!("{} of {} criteria passed", outcomes.len() - failed, outcomes.len());
    if strict && failed > 0 {
        std::process::exit(1);
    }
}
