use std::path::{Path, PathBuf};

use serde::Serialize;

use dualcse::corpus::{load_inli, to_eis_pairs_from_inli, to_rte_instances, HypothesisKind, SplitName};
use dualcse::encoder::View;
use dualcse::evaluation::{
    eis_evaluate, length_evaluate, report_from_scores, rte_evaluate, rte_scores, tune_threshold, EisReport,
    RteOutput, RteReport,
};
use dualcse::objective::LossVariant;
use dualcse::retrieval::{build_index, hypothesis_pool, query, write_results_jsonl};
use dualcse::trainer::{
    grid_search, load_checkpoint, save_checkpoint, train, write_metrics_jsonl, GridResult, TrainConfig, TrainRun,
};

use crate::args::{
    Baseline, Cli, Command, DataArgs, EvalCommand, EvalEisArgs, EvalRteArgs, GridArgs, RerunArgs, RetrieveArgs,
    SyntheticArgs, TrainArgs,
};
use crate::data::{load_pairs, load_queries, load_splits, synthetic, write_synthetic, Splits};
use crate::failure::{CliResult, Failure};
use crate::manifest::RunManifest;
use crate::{config, write_json};

fn out_dir(home: &Path, explicit: Option<&PathBuf>, name: &str) -> CliResult<PathBuf> {
    let dir = explicit.cloned().unwrap_or_else(|| home.join("runs").join(name));
    std::fs::create_dir_all(&dir).map_err(|e| Failure::data(format!("cannot create {}: {e}", dir.display())))?;
    Ok(dir)
}

fn pct(x: f64) -> String {
    format!("{:6.2}", 100.0 * x)
}

fn pct_opt(x: Option<f64>) -> String {
    x.map_or_else(|| format!("{:>6}", "-"), pct)
}

fn print_rte(label: &str, r: &RteReport) {
    println!("{label:<18} {} {} {} {} | {}", pct_opt(r.exp), pct_opt(r.imp), pct_opt(r.neu), pct_opt(r.con), pct(r.avg));
}

fn print_rte_header() {
    println!("{:<18} {:>6} {:>6} {:>6} {:>6} | {:>6}", "", "Exp.", "Imp.", "Neu.", "Con.", "Avg.");
}

pub fn run(cli: &Cli, argv: &[String]) -> CliResult {
    match &cli.command {
        Command::Train(a) => cmd_train(&cli.home, a, argv),
        Command::Eval(EvalCommand::Rte(a)) => cmd_eval_rte(&cli.home, a, argv),
        Command::Eval(EvalCommand::Eis(a)) => cmd_eval_eis(&cli.home, a, argv),
        Command::Ablate(a) => cmd_ablate(&cli.home, a, argv),
        Command::Retrieve(a) => cmd_retrieve(&cli.home, a, argv),
        Command::Grid(a) => cmd_grid(&cli.home, a, argv),
        Command::MakeSynthetic(a) => cmd_make_synthetic(&cli.home, a, argv),
        Command::Rerun(a) => cmd_rerun(a),
    }
}

fn record_data(manifest: &mut RunManifest, data: &DataArgs, seed: u64) {
    manifest.seeds.insert("seed".into(), seed);
    if data.data == "synthetic" {
        manifest.seeds.insert("synthetic".into(), seed);
    }
}

fn data_config(data: &DataArgs) -> serde_json::Value {
    serde_json::json!({
        "data": data.data,
        "n_train": data.n_train,
        "n_eval": data.n_eval,
        "vocab_size": data.vocab_size,
    })
}

/// Trains under `config` and writes checkpoint and metrics into `dir`.
fn train_into(config: &TrainConfig, splits: &Splits, dir: &Path, manifest: &mut RunManifest) -> CliResult<TrainRun> {
    let run = train(config, &splits.train, &splits.dev)?;
    let ckpt = dir.join("checkpoint");
    save_checkpoint(&run.best, &ckpt)?;
    manifest.output(&ckpt);
    let metrics = dir.join("metrics.jsonl");
    write_metrics_jsonl(&metrics, &run.history)?;
    manifest.output(&metrics);
    Ok(run)
}

#[derive(Serialize)]
struct TrainSummary {
    variant: LossVariant,
    steps: usize,
    initial_loss: f64,
    final_loss: f64,
    best_step: usize,
    dev_rte_avg: f64,
    gamma: f64,
}

fn summarize(config: &TrainConfig, run: &TrainRun) -> TrainSummary {
    TrainSummary {
        variant: config.variant,
        steps: run.step_losses.len(),
        initial_loss: run.step_losses[0],
        final_loss: *run.step_losses.last().expect("at least one step"),
        best_step: run.best.step,
        dev_rte_avg: run.best.dev_metric.dev_rte_avg,
        gamma: run.best.gamma.gamma(),
    }
}

fn cmd_train(home: &Path, args: &TrainArgs, argv: &[String]) -> CliResult {
    let config = config::resolve(args)?;
    let mut manifest = RunManifest::new("train", argv);
    if let Some(p) = &args.config {
        manifest.input(p)?;
    }
    manifest.config = serde_json::json!({"train": config, "data": data_config(&args.data)});
    record_data(&mut manifest, &args.data, config.seed);
    let splits = load_splits(&args.data, config.seed, &mut manifest)?;
    let dir = out_dir(home, args.out.as_ref(), "train")?;
    if let Some(s) = &splits.synthetic {
        write_synthetic(s, &dir.join("data"), &mut manifest)?;
    }

    let run = train_into(&config, &splits, &dir, &mut manifest)?;
    let summary = summarize(&config, &run);
    let summary_path = dir.join("train.json");
    write_json(&summary_path, &summary)?;
    manifest.output(&summary_path);
    manifest.write(&dir)?;

    println!(
        "trained {} steps: loss {:.4} -> {:.4}; best dev RTE avg {} at step {} (gamma {:.4})",
        summary.steps,
        summary.initial_loss,
        summary.final_loss,
        pct(summary.dev_rte_avg).trim(),
        summary.best_step,
        summary.gamma
    );
    println!("checkpoint: {}", dir.join("checkpoint").display());
    Ok(())
}

fn cmd_eval_rte(home: &Path, args: &EvalRteArgs, argv: &[String]) -> CliResult {
    let mut manifest = RunManifest::new("eval rte", argv);
    let ckpt = load_checkpoint(&args.ckpt)?;
    manifest.input_dir(&args.ckpt.join("encoder"))?;
    manifest.input(&args.dev)?;
    manifest.input(&args.test)?;
    let dev = to_rte_instances(&load_inli(&args.dev, SplitName::Development)?);
    let test = to_rte_instances(&load_inli(&args.test, SplitName::Test)?);

    let dev_scores = rte_scores(&ckpt.encoder, &dev)?;
    let gamma = tune_threshold(&dev_scores)?;
    let dev_report = report_from_scores(&dev, &dev_scores, gamma);
    let report = rte_evaluate(&ckpt.encoder, &test, gamma)?;

    let dir = out_dir(home, args.out.as_ref(), "eval-rte")?;
    let path = dir.join("rte.json");
    write_json(&path, &RteOutput { rte: report.clone(), gamma: gamma.gamma() })?;
    manifest.output(&path);
    manifest.config = serde_json::json!({"gamma_tuned_on": args.dev});
    manifest.write(&dir)?;

    print_rte_header();
    print_rte("dev (tuning)", &dev_report);
    print_rte("test", &report);
    println!("gamma = {:.6}", gamma.gamma());
    Ok(())
}

#[derive(Serialize)]
struct EisOutputFile {
    eis: EisReport,
    method: &'static str,
    pairs: usize,
}

fn cmd_eval_eis(home: &Path, args: &EvalEisArgs, argv: &[String]) -> CliResult {
    let mut manifest = RunManifest::new("eval eis", argv);
    manifest.seeds.insert("pair_order".into(), args.seed);
    manifest.input(&args.pairs)?;
    let pairs = load_pairs(&args.pairs, args.format, args.seed)?;
    let (report, method) = match (args.baseline, &args.ckpt) {
        (Some(Baseline::Length), _) => (length_evaluate(&pairs)?, "length"),
        (None, Some(ckpt_path)) => {
            let ckpt = load_checkpoint(ckpt_path)?;
            manifest.input_dir(&ckpt_path.join("encoder"))?;
            (eis_evaluate(&ckpt.encoder, &pairs)?, "dual")
        }
        (None, None) => return Err(Failure::config("eval eis needs --ckpt or --baseline")),
    };
    let dir = out_dir(home, args.out.as_ref(), "eval-eis")?;
    let path = dir.join("eis.json");
    write_json(
        &path,
        &EisOutputFile {
            eis: report,
            method,
            pairs: pairs.len(),
        },
    )?;
    manifest.output(&path);
    manifest.config = serde_json::json!({"method": method, "format": format!("{:?}", args.format).to_lowercase()});
    manifest.write(&dir)?;
    println!("EIS accuracy ({method}, {} pairs): {}", pairs.len(), pct(report.accuracy).trim());
    Ok(())
}

#[derive(Serialize)]
struct AblationRow {
    variant: LossVariant,
    rte_avg: Option<f64>,
    eis_accuracy: Option<f64>,
    error: Option<String>,
}

fn cmd_ablate(home: &Path, args: &TrainArgs, argv: &[String]) -> CliResult {
    let base = config::resolve(args)?;
    let mut manifest = RunManifest::new("ablate", argv);
    if let Some(p) = &args.config {
        manifest.input(p)?;
    }
    manifest.config = serde_json::json!({"train": base, "data": data_config(&args.data)});
    record_data(&mut manifest, &args.data, base.seed);
    let splits = load_splits(&args.data, base.seed, &mut manifest)?;
    let dir = out_dir(home, args.out.as_ref(), "ablate")?;
    let test_rte = to_rte_instances(&splits.test);
    let test_eis = to_eis_pairs_from_inli(&splits.test, base.seed);

    let mut rows = Vec::new();
    for variant in LossVariant::ALL {
        let config = TrainConfig { variant, ..base.clone() };
        let sub = dir.join(variant.as_str());
        std::fs::create_dir_all(&sub).map_err(|e| Failure::data(format!("{}: {e}", sub.display())))?;
        let result = train_into(&config, &splits, &sub, &mut manifest).and_then(|run| {
            let rte = rte_evaluate(&run.best.encoder, &test_rte, run.best.gamma)?;
            let eis = eis_evaluate(&run.best.encoder, &test_eis)?;
            Ok((rte.avg, eis.accuracy))
        });
        rows.push(match result {
            Ok((rte, eis)) => AblationRow {
                variant,
                rte_avg: Some(rte),
                eis_accuracy: Some(eis),
                error: None,
            },
            Err(e) => {
                log::warn!("variant {variant} failed: {e}");
                AblationRow {
                    variant,
                    rte_avg: None,
                    eis_accuracy: None,
                    error: Some(e.message),
                }
            }
        });
    }
    let path = dir.join("ablation.json");
    write_json(&path, &rows)?;
    manifest.output(&path);
    manifest.write(&dir)?;

    println!("{:<18} {:>8} {:>8}", "variant", "RTE", "EIS");
    for r in &rows {
        match &r.error {
            None => println!("{:<18} {:>8} {:>8}", r.variant.as_str(), pct_opt(r.rte_avg), pct_opt(r.eis_accuracy)),
            Some(e) => println!("{:<18} failed: {e}", r.variant.as_str()),
        }
    }
    if rows.iter().all(|r| r.error.is_some()) {
        return Err(Failure {
            code: crate::failure::EXIT_RUN,
            message: "every variant failed".into(),
        });
    }
    Ok(())
}

fn cmd_retrieve(home: &Path, args: &RetrieveArgs, argv: &[String]) -> CliResult {
    let mut manifest = RunManifest::new("retrieve", argv);
    if args.k == 0 {
        return Err(Failure::config("--k must be at least 1"));
    }
    let queries = load_queries(&args.query_file)?;
    manifest.input(&args.query_file)?;
    manifest.input(&args.pool)?;
    let ckpt = load_checkpoint(&args.ckpt)?;
    manifest.input_dir(&args.ckpt.join("encoder"))?;
    let pool = load_inli(&args.pool, SplitName::Train)?;
    let candidates = hypothesis_pool(&pool, &HypothesisKind::ALL);
    let index = build_index(&ckpt.encoder, &candidates, false)?;

    let mut results = Vec::new();
    for q in &queries {
        println!("query: {q}");
        for view in View::BOTH {
            let r = query(&ckpt.encoder, &index, q, view, args.k)?;
            println!("  {view} view:");
            for (rank, hit) in r.hits.iter().enumerate() {
                println!("    {}. [{:.4}] {} ({})", rank + 1, hit.score, hit.text, hit.id);
            }
            results.push(r);
        }
    }
    let dir = out_dir(home, args.out.as_ref(), "retrieve")?;
    let path = dir.join("retrieval.jsonl");
    write_results_jsonl(&path, &results)?;
    manifest.output(&path);
    manifest.config = serde_json::json!({"k": args.k, "index_fingerprint": index.fingerprint(), "candidates": index.len()});
    manifest.write(&dir)?;
    Ok(())
}

fn cmd_grid(home: &Path, args: &GridArgs, argv: &[String]) -> CliResult {
    let base = config::resolve(&args.train)?;
    let mut manifest = RunManifest::new("grid", argv);
    if let Some(p) = &args.train.config {
        manifest.input(p)?;
    }
    manifest.config = serde_json::json!({
        "train": base,
        "data": data_config(&args.train.data),
        "batch_sizes": args.batch_sizes,
        "learning_rates": args.lrs,
        "strict": args.strict,
    });
    record_data(&mut manifest, &args.train.data, base.seed);
    let splits = load_splits(&args.train.data, base.seed, &mut manifest)?;
    let result: GridResult = grid_search(&args.batch_sizes, &args.lrs, args.strict, &base, &splits.train, &splits.dev)?;
    let dir = out_dir(home, args.train.out.as_ref(), "grid")?;
    let path = dir.join("grid.json");
    write_json(&path, &result)?;
    manifest.output(&path);
    manifest.write(&dir)?;

    print!("{:>6}", "bs\\lr");
    for lr in &args.lrs {
        print!(" {lr:>9.0e}");
    }
    println!();
    for (bi, bs) in args.batch_sizes.iter().enumerate() {
        print!("{bs:>6}");
        for li in 0..args.lrs.len() {
            let idx = bi * args.lrs.len() + li;
            let cell = &result.cells[idx];
            let mark = if result.best == Some(idx) { "*" } else { " " };
            match cell.dev_rte_avg {
                Some(v) => print!(" {:>8}{mark}", pct(v).trim()),
                None => print!(" {:>8}{mark}", "failed"),
            }
        }
        println!();
    }
    if result.best.is_none() {
        return Err(Failure {
            code: crate::failure::EXIT_RUN,
            message: "every grid cell failed".into(),
        });
    }
    Ok(())
}

fn cmd_make_synthetic(home: &Path, args: &SyntheticArgs, argv: &[String]) -> CliResult {
    let mut manifest = RunManifest::new("make-synthetic", argv);
    manifest.seeds.insert("seed".into(), args.seed);
    manifest.config = data_config(&args.data);
    let splits = synthetic(&args.data, args.seed)?;
    let dir = out_dir(home, args.out.as_ref(), "synthetic")?;
    let files = write_synthetic(&splits, &dir, &mut manifest)?;
    manifest.write(&dir)?;
    for f in files {
        println!("wrote {}", f.display());
    }
    Ok(())
}

fn strip_out(argv: &[String]) -> Vec<String> {
    let mut out = Vec::with_capacity(argv.len());
    let mut skip = false;
    for a in argv {
        if skip {
            skip = false;
        } else if a == "--out" {
            skip = true;
        } else if !a.starts_with("--out=") {
            out.push(a.clone());
        }
    }
    out
}

fn cmd_rerun(args: &RerunArgs) -> CliResult {
    let manifest = RunManifest::load(&args.manifest)?;
    if manifest.command == "rerun" {
        return Err(Failure::config("cannot rerun a rerun manifest"));
    }
    manifest.verify_inputs()?;
    let out = match &args.out {
        Some(p) => std::path::absolute(p).map_err(|e| Failure::data(format!("{}: {e}", p.display())))?,
        None => {
            let parent = args.manifest.parent().unwrap_or(Path::new("."));
            std::path::absolute(parent.join("rerun")).map_err(|e| Failure::data(e.to_string()))?
        }
    };
    std::env::set_current_dir(&manifest.cwd)
        .map_err(|e| Failure::data(format!("cannot enter {}: {e}", manifest.cwd.display())))?;
    let mut argv = strip_out(&manifest.argv);
    argv.push("--out".into());
    argv.push(out.display().to_string());
    log::info!("rerunning `{}` into {}", manifest.command, out.display());
    let cli = crate::parse(&argv).map_err(|e| Failure::config(format!("manifest arguments no longer parse: {e}")))?;
    run(&cli, &argv)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn strips_output_flags() {
        let argv: Vec<String> = ["train", "--out", "x", "--seed", "1", "--out=y"].map(String::from).to_vec();
        assert_eq!(strip_out(&argv), ["train", "--seed", "1"]);
    }
}
