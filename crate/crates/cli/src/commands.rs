use std::fs;
use std::path::Path;

use calli_core::callialign::{
    evaluate_align, load_align_model, nn_decode, save_align_model, train_align as fit_align, AlignSetup,
    AlignTrainConfig, EmbedTable, FeatureBank, PAD, QUERIES,
};
use calli_core::ingest::{
    dataset_stats, load_dataset, load_labelme_dir, parse_labelme, parse_page, read_predictions, Split,
};
use calli_core::metrics::{aggregate, SampleScore, Tier};
use calli_core::nn::{read_manifest, Matrix};
use calli_core::orderformer::{
    evaluate_order, load_order_model, order_sample, predict_reading_order, rule_baseline, save_order_model, train,
    OrderEvalReport,
};
use calli_core::pilots::{noise_grid, slicing_pilot};
use calli_core::synthgen::gen_dataset;
use calli_core::types::PageSample;
use log::{info, warn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{write_run_record, RunConfig};
use crate::{
    CliError, DecodeAlignArgs, EvalArgs, EvalOrderArgs, GenArgs, OrderArgs, PilotOutArgs, SlicingArgs, StatsArgs,
    TrainAlignArgs, TrainOrderArgs,
};

/// Writes to stdout; a closed pipe (`calli ... | head`) ends the process quietly.
fn emit(args: std::fmt::Arguments) {
    use std::io::Write;
    if let Err(e) = std::io::stdout().lock().write_fmt(args) {
        if e.kind() == std::io::ErrorKind::BrokenPipe {
            std::process::exit(0);
        }
    }
}

macro_rules! out {
    ($($t:tt)*) => { emit(format_args!($($t)*)) };
}

macro_rules! outln {
    ($($t:tt)*) => { emit(format_args!("{}\n", format_args!($($t)*))) };
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| CliError::input(format!("{}: {e}", parent.display())))?;
    }
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::internal(e.to_string()))?;
    fs::write(path, text + "\n").map_err(|e| CliError::input(format!("{}: {e}", path.display())))
}

fn parse_split(raw: &str) -> Result<Split, CliError> {
    serde_json::from_value(Value::String(raw.to_string()))
        .map_err(|_| CliError::usage(format!("unknown split {raw:?} (train, val, test)")))
}

/// Pages of a dataset directory (optionally one split) or of a directory
/// of LabelMe files.
fn load_pages(dir: &Path, split: Option<&str>) -> Result<Vec<PageSample>, CliError> {
    if !dir.is_dir() {
        return Err(CliError::input(format!("{} is not a directory", dir.display())));
    }
    if dir.join("manifest.json").exists() {
        let (manifest, pages) = load_dataset(dir)?;
        let Some(raw) = split else { return Ok(pages) };
        let want = parse_split(raw)?;
        Ok(pages
            .into_iter()
            .zip(&manifest.files)
            .filter(|(_, e)| e.split == want)
            .map(|(p, _)| p)
            .collect())
    } else {
        if split.is_some() {
            return Err(CliError::usage("--split needs a dataset directory with manifest.json"));
        }
        Ok(load_labelme_dir(dir)?)
    }
}

fn read_page_file(path: &Path) -> Result<PageSample, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
    let value: Value = serde_json::from_str(&text).map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
    if value.get("shapes").is_some() {
        Ok(parse_labelme(&text)?)
    } else {
        Ok(parse_page(&text)?)
    }
}

pub fn gen(cfg: &RunConfig, args: GenArgs) -> Result<(), CliError> {
    let mut cfg = cfg.clone();
    if let Some(n) = args.count {
        cfg.gen.count = n;
    }
    let manifest = gen_dataset(&cfg.gen, &args.out)?;
    write_run_record(&args.out, "gen", json!({ "out": args.out }), &cfg, &[])?;
    outln!("wrote {} pages to {}", manifest.files.len(), args.out.display());
    Ok(())
}

pub fn train_order(mut cfg: RunConfig, args: TrainOrderArgs) -> Result<(), CliError> {
    if let Some(e) = args.epochs {
        cfg.order.epochs = e;
    }
    let mut pages = load_pages(&args.data, Some("train"))?;
    if let Some(n) = args.max_pages {
        pages.truncate(n);
    }
    let mut samples = Vec::with_capacity(pages.len());
    let mut skipped = 0;
    for page in &pages {
        match order_sample(page, &cfg.cluster) {
            Ok(s) => samples.push(s),
            Err(e) => {
                skipped += 1;
                warn!("skipping page {}: {e}", page.id);
            }
        }
    }
    info!("training on {} pages ({skipped} skipped)", samples.len());
    let outcome = train(&samples, &cfg.order, |e| {
        info!("epoch {:>4} loss {:.6} lr {:.3e}", e.epoch, e.loss, e.lr);
    })?;
    save_order_model(&args.out, &outcome.model, Some(&cfg.order), &outcome.curve)?;
    write_run_record(
        &args.out,
        "train-order",
        json!({ "data": args.data, "out": args.out, "max_pages": args.max_pages }),
        &cfg,
        &[&args.data],
    )?;
    outln!(
        "final loss {:.6}; checkpoint in {}",
        outcome.final_loss(),
        args.out.display()
    );
    Ok(())
}

pub fn train_align(mut cfg: RunConfig, args: TrainAlignArgs) -> Result<(), CliError> {
    if let Some(s) = args.steps {
        cfg.align.steps = s;
    }
    let setup = AlignSetup::new(&cfg.align)?;
    let outcome = fit_align(&setup, &cfg.align, |p, loss| {
        info!(
            "step {:>6} loss {:.5} held-out accuracy {:.4}",
            p.step, loss, p.accuracy
        );
    })?;
    save_align_model(
        &args.out.join("model"),
        &outcome.model,
        Some(&cfg.align),
        Some(&outcome),
    )?;
    setup.table.save(&args.out.join("table"))?;
    let ids: Vec<usize> = (0..cfg.align.table.chars).collect();
    let eval = evaluate_align(&outcome.model, &setup.table, &setup.held_out(&ids, cfg.align.seed)?)?;
    write_json(
        &args.out.join("report.json"),
        &json!({ "held_out": eval, "accuracy_curve": outcome.evals, "loss_curve": outcome.windowed_losses(100) }),
    )?;
    write_run_record(&args.out, "train-align", json!({ "out": args.out }), &cfg, &[])?;
    outln!(
        "held-out accuracy {:.4} ({}/{}), token accuracy {:.4}",
        eval.accuracy,
        eval.correct,
        eval.chars,
        eval.token_accuracy
    );
    Ok(())
}

pub fn order(cfg: &RunConfig, args: OrderArgs) -> Result<(), CliError> {
    let page = read_page_file(&args.page)?;
    let pred = match &args.model {
        Some(dir) => predict_reading_order(&page, &load_order_model(dir)?, &cfg.cluster)?,
        None => rule_baseline(&page, &cfg.cluster)?,
    };
    if args.json {
        let boxes: Vec<Value> = pred
            .box_order
            .iter()
            .map(|&i| json!({ "index": i, "label": page.boxes[i].label, "box": page.boxes[i].bbox }))
            .collect();
        outln!(
            "{}",
            json!({ "columns": pred.columns, "order": pred.box_order, "boxes": boxes })
        );
    } else {
        outln!(
            "{:>4} {:>5} {:<6} {:>8} {:>8} {:>8} {:>8}",
            "rank",
            "box",
            "label",
            "x1",
            "y1",
            "x2",
            "y2"
        );
        for (rank, &i) in pred.box_order.iter().enumerate() {
            let b = &page.boxes[i];
            outln!(
                "{:>4} {:>5} {:<6} {:>8.1} {:>8.1} {:>8.1} {:>8.1}",
                rank,
                i,
                b.label.as_deref().unwrap_or("-"),
                b.bbox.x1,
                b.bbox.y1,
                b.bbox.x2,
                b.bbox.y2
            );
        }
    }
    Ok(())
}

pub fn eval(cfg: &RunConfig, args: EvalArgs) -> Result<(), CliError> {
    let tier: Option<Tier> = args
        .tier
        .as_deref()
        .map(|t| {
            serde_json::from_value(Value::String(t.to_string()))
                .map_err(|_| CliError::usage(format!("unknown tier {t:?} (easy, medium, hard)")))
        })
        .transpose()?;
    let preds = read_predictions(&args.predictions)?;
    let pages = load_pages(&args.data, args.split.as_deref())?;
    let mut missing = 0;
    let scores: Vec<SampleScore> = pages
        .iter()
        .map(|p| {
            let pred = preds.by_id.get(&p.id).map(String::as_str).unwrap_or_else(|| {
                missing += 1;
                ""
            });
            SampleScore::score(p.id.clone(), pred, &p.text())
        })
        .collect();
    if missing > 0 {
        warn!("{missing} pages have no prediction and score as empty");
    }
    let report = aggregate(scores, tier)?;
    out!("{}", report.to_table());
    if let Some(out) = &args.out {
        write_json(&out.join("report.json"), &report)?;
        write_run_record(
            out,
            "eval",
            json!({ "predictions": args.predictions, "data": args.data, "split": args.split, "tier": args.tier }),
            cfg,
            &[&args.predictions, &args.data],
        )?;
    }
    Ok(())
}

fn order_row(name: &str, r: &OrderEvalReport) -> String {
    format!(
        "{:<10} {:>6} {:>7} {:>9.4} {:>9.4}\n",
        name, r.pages, r.exact, r.exact_accuracy, r.position_accuracy
    )
}

pub fn eval_order(cfg: &RunConfig, args: EvalOrderArgs) -> Result<(), CliError> {
    let pages = load_pages(&args.data, args.split.as_deref())?;
    let baseline = evaluate_order(&pages, |p| rule_baseline(p, &cfg.cluster))?;
    let model = match &args.model {
        Some(dir) => {
            let m = load_order_model(dir)?;
            Some(evaluate_order(&pages, |p| predict_reading_order(p, &m, &cfg.cluster))?)
        }
        None => None,
    };
    let mut table = format!(
        "{:<10} {:>6} {:>7} {:>9} {:>9}\n",
        "method", "pages", "exact", "exact_acc", "pos_acc"
    );
    table.push_str(&order_row("baseline", &baseline));
    if let Some(m) = &model {
        table.push_str(&order_row("model", m));
    }
    out!("{table}");
    if let Some(out) = &args.out {
        write_json(
            &out.join("report.json"),
            &json!({ "baseline": baseline, "model": model }),
        )?;
        let mut inputs: Vec<&Path> = vec![&args.data];
        if let Some(m) = &args.model {
            inputs.push(m);
        }
        write_run_record(
            out,
            "eval-order",
            json!({ "data": args.data, "model": args.model, "split": args.split }),
            cfg,
            &inputs,
        )?;
    }
    Ok(())
}

#[derive(Serialize)]
struct Decoded {
    id: Option<usize>,
    tokens: Vec<usize>,
    cosine: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    target: Option<[usize; QUERIES]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    correct: Option<bool>,
}

pub fn decode_align(cfg: &RunConfig, args: DecodeAlignArgs) -> Result<(), CliError> {
    let model = load_align_model(&args.model.join("model"))?;
    let table = EmbedTable::load(&args.model.join("table"))?;
    let manifest = read_manifest(&args.model.join("model"))?;
    let train_cfg: AlignTrainConfig = serde_json::from_value(manifest.extra["train"].clone())
        .map_err(|e| CliError::input(format!("checkpoint has no usable training config: {e}")))?;
    let samples: Vec<(Option<usize>, Matrix<f64>)> = match &args.features {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
            #[derive(serde::Deserialize)]
            struct File {
                features: Vec<Vec<Vec<f64>>>,
            }
            let file: File =
                serde_json::from_str(&text).map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
            file.features
                .iter()
                .map(|rows| Ok((None, Matrix::from_rows(rows)?)))
                .collect::<Result<_, calli_core::Error>>()?
        }
        None => {
            let bank = FeatureBank::new(table.config.chars, train_cfg.features.clone())?;
            let ids: Vec<usize> = if args.chars.is_empty() {
                (0..table.config.chars).collect()
            } else {
                args.chars.clone()
            };
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(0xdec0de);
            ids.iter()
                .map(|&id| Ok((Some(id), bank.sample(id, &mut rng, bank.config.noise)?)))
                .collect::<Result<_, calli_core::Error>>()?
        }
    };
    let feats: Vec<Matrix<f32>> = samples.iter().map(|(_, f)| f.cast()).collect();
    let out = model.forward(&feats)?;
    let rows = Matrix::from_vec(
        out.dims[0] * QUERIES,
        out.dims[2],
        out.data.iter().map(|&v| v as f64).collect(),
    )?;
    let decoded = nn_decode(&rows, &table);
    let mut results = Vec::with_capacity(samples.len());
    for (i, (id, _)) in samples.iter().enumerate() {
        let d = &decoded[i * QUERIES..(i + 1) * QUERIES];
        let target = id.map(|id| table.char_tokens(id)).transpose()?;
        let correct = target.map(|t| t.iter().zip(d).all(|(&want, got)| want == PAD || want == got.0));
        results.push(Decoded {
            id: *id,
            tokens: d.iter().map(|x| x.0).collect(),
            cosine: d.iter().map(|x| x.1).collect(),
            target,
            correct,
        });
    }
    let judged: Vec<bool> = results.iter().filter_map(|r| r.correct).collect();
    let accuracy = (!judged.is_empty()).then(|| judged.iter().filter(|&&c| c).count() as f64 / judged.len() as f64);
    outln!("{:>6} {:<20} {:<20} {:>7}", "char", "decoded", "target", "ok");
    for r in results.iter().take(50) {
        outln!(
            "{:>6} {:<20} {:<20} {:>7}",
            r.id.map_or("-".into(), |i| i.to_string()),
            format!("{:?}", r.tokens),
            r.target.map_or("-".into(), |t| format!("{t:?}")),
            r.correct.map_or("-", |c| if c { "yes" } else { "no" })
        );
    }
    if results.len() > 50 {
        outln!("... {} more", results.len() - 50);
    }
    if let Some(a) = accuracy {
        outln!("accuracy {a:.4} over {} characters", judged.len());
    }
    if let Some(out) = &args.out {
        write_json(
            &out.join("report.json"),
            &json!({ "accuracy": accuracy, "characters": results }),
        )?;
        let mut inputs: Vec<&Path> = vec![&args.model];
        if let Some(f) = &args.features {
            inputs.push(f);
        }
        write_run_record(
            out,
            "decode-align",
            json!({ "model": args.model, "chars": args.chars, "features": args.features }),
            cfg,
            &inputs,
        )?;
    }
    Ok(())
}

pub fn pilot_noise(cfg: &RunConfig, args: PilotOutArgs) -> Result<(), CliError> {
    let table = EmbedTable::random(cfg.noise_table.clone())?;
    let grid = noise_grid(&table, &cfg.noise)?;
    let csv = grid.to_csv();
    fs::create_dir_all(&args.out).map_err(|e| CliError::input(format!("{}: {e}", args.out.display())))?;
    let path = args.out.join("noise.csv");
    fs::write(&path, &csv).map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
    write_run_record(&args.out, "pilot noise", json!({ "out": args.out }), cfg, &[])?;
    out!("{csv}");
    Ok(())
}

pub fn pilot_slicing(mut cfg: RunConfig, args: SlicingArgs) -> Result<(), CliError> {
    if let Some(n) = args.chars {
        cfg.slicing.chars = n;
    }
    let report = slicing_pilot(cfg.slicing.chars, cfg.seed)?;
    write_json(&args.out.join("slicing.json"), &report)?;
    write_run_record(&args.out, "pilot slicing", json!({ "out": args.out }), &cfg, &[])?;
    outln!("{:<10} {:>6} {:>8} {:>10}", "policy", "chars", "uncut", "fragments");
    for p in &report.policies {
        outln!(
            "{:<10} {:>6} {:>8.4} {:>10.4}",
            p.policy.as_str(),
            p.chars,
            p.uncut_fraction,
            p.mean_fragments
        );
    }
    Ok(())
}

pub fn stats(cfg: &RunConfig, args: StatsArgs) -> Result<(), CliError> {
    let pages = load_pages(&args.data, None)?;
    let stats = dataset_stats(&pages)?;
    out!("{}", stats.to_table());
    if let Some(out) = &args.out {
        write_json(&out.join("stats.json"), &stats)?;
        write_run_record(out, "stats", json!({ "data": args.data }), cfg, &[&args.data])?;
    }
    Ok(())
}
