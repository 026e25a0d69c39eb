use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use fusionnet::config::KvDoc;
use fusionnet::embed::{
    embedding_csv, evaluate, extract_features, nearest_neighbor_agreement, render_scatter_svg, tsne, TsneConfig,
    MAX_POINTS,
};
use fusionnet::gradcheck::{op_suite, SUITE_OPS};
use fusionnet::model::{count_params, estimate_flops, shape_report, Checkpoint, FusionNetConfig, Preset};
use fusionnet::optim::TrainConfig;
use fusionnet::train::{init_params, run_distillation, train as fit, EpochRecord, Objective, TrainOutcome};
use fusionnet::{data::split_manifest, Error, Result};

use crate::settings::{preprocess, write, Settings};
use crate::{DistillArgs, EmbedArgs, EvalArgs, GradcheckArgs, ParamsArgs, TrainArgs, TrainFlags};

fn opt<T: ToString>(v: &Option<T>) -> Option<String> {
    v.as_ref().map(ToString::to_string)
}

fn train_flags(f: &TrainFlags) -> Vec<(&'static str, Option<String>)> {
    vec![
        ("lr", opt(&f.lr)),
        ("epochs", opt(&f.epochs)),
        ("eta_min", opt(&f.eta_min)),
        ("accum_steps", opt(&f.accum_steps)),
        ("batch_size", opt(&f.batch_size)),
        ("seed", opt(&f.seed)),
    ]
}

fn log_epoch(tag: &str, r: &EpochRecord, start: Instant) {
    let acc = r.test_accuracy.map(|a| format!(" test_acc {a:.4}")).unwrap_or_default();
    eprintln!(
        "[{tag}] epoch {:>3} lr {:.3e} loss {:.5}{acc} ({:.1}s)",
        r.epoch,
        r.lr,
        r.loss,
        start.elapsed().as_secs_f64()
    );
}

fn seed_line(seed: u64) -> String {
    format!("seed={seed}")
}

fn save_ckpt(
    path: &Path,
    cfg: &FusionNetConfig,
    params: fusionnet::model::ModelParams<f32>,
    s: &Settings,
) -> Result<()> {
    let mut ck = Checkpoint::new(cfg.clone(), params)?;
    let mut meta = KvDoc::new();
    for key in ["seed", "command", "data", "preset"] {
        if let Some(v) = s.get(key) {
            meta.set(key, v);
        }
    }
    ck.meta = meta;
    ck.save(path)
}

pub fn train(a: TrainArgs) -> Result<ExitCode> {
    let f = &a.common;
    let mut s = Settings::new("train", f.config.as_deref())?;
    let preset = s.preset(f.preset, Preset::Desk)?;
    let mut cfg = s.model(preset, &[("arch", opt(&f.arch))])?;
    let spec = s.data(f.data.clone())?;
    let tc = s.train(TrainConfig::default(), &train_flags(f))?;
    let out = s.out_dir(f.out.clone(), "train")?;

    let data = spec.prepare_training(tc.seed, &preprocess(&cfg))?;
    s.set_classes(&mut cfg, data.train.num_classes())?;
    s.write_run_cfg(&out)?;
    eprintln!(
        "train: {} training / {} held-out samples, {} classes",
        data.train.len(),
        data.test.len(),
        cfg.num_classes
    );

    let start = Instant::now();
    let params = init_params(&cfg, tc.seed)?;
    let outcome = fit(&cfg, params, &data.train, Some(&data.test), &tc, &Objective::CrossEntropy, |r| {
        log_epoch("train", r, start)
    })?;
    let report = evaluate(&cfg, &outcome.params, &data.test)?;
    let header = seed_line(tc.seed);
    write(&out.join("epochs.csv"), &outcome.epochs_csv(&header))?;
    write(&out.join("metrics.csv"), &report.metrics_csv(&header))?;
    write(&out.join("confusion.csv"), &report.confusion_csv(&header))?;
    write(&out.join("split.tsv"), &split_manifest(&data.split))?;
    save_ckpt(&out.join("model.ckpt"), &cfg, outcome.params, &s)?;
    println!("held-out accuracy {:.4} on {} samples", report.accuracy, report.samples);
    println!("artifacts in {}", out.display());
    Ok(ExitCode::SUCCESS)
}

fn load_teacher(path: Option<&Path>) -> Result<Option<(FusionNetConfig, fusionnet::model::ModelParams<f32>)>> {
    path.map(|p| Checkpoint::load(p).map(|c| (c.config, c.params))).transpose()
}

fn write_outcome(out: &Path, name: &str, o: &TrainOutcome, header: &str) -> Result<()> {
    write(&out.join(format!("{name}_epochs.csv")), &o.epochs_csv(header))
}

pub fn distill(a: DistillArgs) -> Result<ExitCode> {
    let f = &a.common;
    let mut s = Settings::new("distill", f.config.as_deref())?;
    let preset = s.preset(f.preset, Preset::Desk)?;
    let mut cfg = s.model(preset, &[("arch", opt(&f.arch))])?;
    if cfg.arch != fusionnet::model::Architecture::Fusion {
        return Err(Error::config("arch", "the distilled student must use the fusion architecture"));
    }
    let spec = s.data(f.data.clone())?;
    let tc = s.train(TrainConfig::default(), &train_flags(f))?;
    let dc = s.distill(&[
        ("alpha", opt(&a.alpha)),
        ("temperature", opt(&a.temperature)),
        ("literal_t2", opt(&a.literal_t2)),
    ])?;
    let ta = s.existing_path("teacher_a", a.teacher_a.clone())?;
    let tb = s.existing_path("teacher_b", a.teacher_b.clone())?;
    s.layer("train_teachers", a.train_teachers, Some("true"));
    let train_teachers: bool = s.doc.parse_req("train_teachers")?;
    if !train_teachers {
        for (key, p) in [("teacher_a", &ta), ("teacher_b", &tb)] {
            if p.is_none() {
                return Err(Error::config(key, "no checkpoint given and train_teachers = false"));
            }
        }
    }
    let out = s.out_dir(f.out.clone(), "distill")?;

    let data = spec.prepare_training(tc.seed, &preprocess(&cfg))?;
    s.set_classes(&mut cfg, data.train.num_classes())?;
    let teachers = (load_teacher(ta.as_deref())?, load_teacher(tb.as_deref())?);
    for (key, t) in [("teacher_a", &teachers.0), ("teacher_b", &teachers.1)] {
        if let Some((tcfg, _)) = t {
            if tcfg.num_classes != cfg.num_classes {
                return Err(Error::config(
                    key,
                    format!("teacher has {} classes, student data has {}", tcfg.num_classes, cfg.num_classes),
                ));
            }
        }
    }
    s.write_run_cfg(&out)?;
    eprintln!(
        "distill: {} training / {} held-out samples, {} classes",
        data.train.len(),
        data.test.len(),
        cfg.num_classes
    );

    let start = Instant::now();
    let outcome = run_distillation(&cfg, teachers, &data.train, &data.test, &tc, &dc)?;
    eprintln!("distill: finished in {:.1}s", start.elapsed().as_secs_f64());
    let header = seed_line(tc.seed);
    write_outcome(&out, "distilled", &outcome.distilled, &header)?;
    write_outcome(&out, "plain", &outcome.plain, &header)?;
    write(&out.join("report.csv"), &outcome.report_csv(&header))?;
    write(&out.join("split.tsv"), &split_manifest(&data.split))?;
    if outcome.trained_teachers.0 {
        save_ckpt(&out.join("teacher_a.ckpt"), &outcome.teacher_a.0, outcome.teacher_a.1.clone(), &s)?;
    }
    if outcome.trained_teachers.1 {
        save_ckpt(&out.join("teacher_b.ckpt"), &outcome.teacher_b.0, outcome.teacher_b.1.clone(), &s)?;
    }
    println!(
        "distilled {:.4}  plain {:.4}  difference {:+.4}",
        outcome.distilled_report.accuracy,
        outcome.plain_report.accuracy,
        outcome.accuracy_gain()
    );
    save_ckpt(&out.join("student.ckpt"), &cfg, outcome.distilled.params, &s)?;
    save_ckpt(&out.join("plain.ckpt"), &cfg, outcome.plain.params, &s)?;
    println!("artifacts in {}", out.display());
    Ok(ExitCode::SUCCESS)
}

/// Checkpoint, seed (flag, file, checkpoint meta, then 42) and data.
fn checkpoint_inputs(
    s: &mut Settings,
    ckpt: Option<std::path::PathBuf>,
    seed: Option<u64>,
    data: Option<String>,
) -> Result<(Checkpoint, u64, fusionnet::data::DataSpec)> {
    let path = s.existing_path("ckpt", ckpt)?.ok_or_else(|| Error::config("ckpt", "missing"))?;
    let spec = s.data(data)?;
    let ck = Checkpoint::load(&path)?;
    let meta_seed = ck.meta.get("seed").map(str::to_string);
    s.layer("seed", seed, Some(meta_seed.as_deref().unwrap_or("42")));
    let seed = s.doc.parse_req("seed")?;
    Ok((ck, seed, spec))
}

pub fn eval(a: EvalArgs) -> Result<ExitCode> {
    let mut s = Settings::new("eval", a.config.as_deref())?;
    let (ck, seed, spec) = checkpoint_inputs(&mut s, a.ckpt, a.seed, a.data)?;
    let out = s.out_dir(a.out, "eval")?;
    s.write_run_cfg(&out)?;
    let ds = spec.prepare_eval(seed, &preprocess(&ck.config))?;
    let report = evaluate(&ck.config, &ck.params, &ds)?;
    let header = seed_line(seed);
    write(&out.join("metrics.csv"), &report.metrics_csv(&header))?;
    write(&out.join("confusion.csv"), &report.confusion_csv(&header))?;
    println!("accuracy {:.4} on {} samples", report.accuracy, report.samples);
    Ok(ExitCode::SUCCESS)
}

pub fn embed(a: EmbedArgs) -> Result<ExitCode> {
    let mut s = Settings::new("embed", a.config.as_deref())?;
    let (ck, seed, spec) = checkpoint_inputs(&mut s, a.ckpt, a.seed, a.data)?;
    let d = TsneConfig::default();
    s.layer("perplexity", a.perplexity, Some(&d.perplexity.to_string()));
    s.layer("iters", a.iters, Some(&d.iterations.to_string()));
    let tc =
        TsneConfig { perplexity: s.doc.parse_req("perplexity")?, iterations: s.doc.parse_req("iters")?, seed, ..d };
    if !(tc.perplexity >= 2.0) {
        return Err(Error::config("perplexity", "must be at least 2"));
    }
    let out = s.out_dir(a.out, "embed")?;
    s.write_run_cfg(&out)?;

    let ds = spec.prepare_eval(seed, &preprocess(&ck.config))?;
    if ds.len() > MAX_POINTS {
        return Err(Error::config(
            "data",
            format!("{} samples exceed the exact t-SNE cap of {MAX_POINTS}; subsample with @frac=", ds.len()),
        ));
    }
    if ds.len() < 10 {
        return Err(Error::config("data", format!("t-SNE needs at least 10 samples, got {}", ds.len())));
    }
    let feats = extract_features(&ck.config, &ck.params, &ds)?;
    let x: Vec<f64> = feats.data().iter().map(|&v| v as f64).collect();
    let start = Instant::now();
    let r = tsne(&x, ds.len(), ck.config.flatten_dim(), &tc)?;
    eprintln!("embed: t-SNE of {} points in {:.1}s", ds.len(), start.elapsed().as_secs_f64());

    let header = seed_line(seed);
    write(&out.join("embedding.csv"), &embedding_csv(&r.y, &ds.labels, &header)?)?;
    let svg = render_scatter_svg(&r.y, &ds.labels)?;
    let svg = match svg.split_once('\n') {
        Some((first, rest)) => format!("{first}\n<!-- {header} -->\n{rest}"),
        None => svg,
    };
    write(&out.join("embedding.svg"), &svg)?;
    let mut trace = format!("# {header}\niteration,kl\n");
    for (it, kl) in &r.trace {
        trace.push_str(&format!("{it},{kl}\n"));
    }
    write(&out.join("tsne_trace.csv"), &trace)?;
    if r.unconverged_rows > 0 {
        eprintln!("embed: warning: {} rows missed the perplexity target", r.unconverged_rows);
    }
    println!(
        "KL {:.4} -> {:.4}; 1-NN label agreement {:.4}",
        r.initial_kl(),
        r.final_kl(),
        nearest_neighbor_agreement(&r.y, 2, &ds.labels)
    );
    Ok(ExitCode::SUCCESS)
}

pub fn gradcheck(a: GradcheckArgs) -> Result<ExitCode> {
    let preset = a.preset.unwrap_or(Preset::Micro);
    if preset == Preset::Paper {
        return Err(Error::config(
            "preset",
            "the paper preset is too large to perturb entry by entry; use micro or desk",
        ));
    }
    let tol = a.tol.unwrap_or(1e-4);
    if !(tol > 0.0) {
        return Err(Error::config("tol", "must be positive"));
    }
    let seed = a.seed.unwrap_or(42);
    let cfg = FusionNetConfig::preset(preset);
    let start = Instant::now();
    let checks = op_suite(&cfg, seed, tol)?;
    println!("# {} preset={preset} tol={tol:e}", seed_line(seed));
    println!("{:<20}{:>10}{:>16}  status", "op", "instances", "max_rel_error");
    let mut all_ok = true;
    for op in SUITE_OPS {
        let mine: Vec<_> = checks.iter().filter(|c| c.op == op).collect();
        let worst = mine.iter().map(|c| c.report.max_rel_error()).fold(0.0, f64::max);
        let ok = mine.iter().all(|c| c.report.passed());
        all_ok &= ok;
        println!("{op:<20}{:>10}{worst:>16.3e}  {}", mine.len(), if ok { "ok" } else { "FAIL" });
        for c in mine.iter().filter(|c| !c.report.passed()) {
            for e in c.report.failures() {
                println!(
                    "    instance {} input {} index {}: analytic {:e} numeric {:e}",
                    c.instance, e.name, e.worst_index, e.analytic, e.numeric
                );
            }
        }
    }
    eprintln!("gradcheck: {:.1}s", start.elapsed().as_secs_f64());
    Ok(if all_ok { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

pub fn params(a: ParamsArgs) -> Result<ExitCode> {
    let preset = a.preset.unwrap_or(Preset::Paper);
    let mut cfg = FusionNetConfig::preset(preset);
    if let Some(arch) = a.arch {
        cfg = cfg.with_arch(arch);
    }
    if let Some(c) = a.classes {
        cfg = cfg.with_classes(c);
    }
    cfg.validate()?;
    println!("# preset={preset} arch={} classes={}", cfg.arch, cfg.num_classes);
    println!("\nparameters");
    print!("{}", count_params(&cfg));
    println!("\nshapes (per sample)");
    print!("{}", shape_report(&cfg)?);
    println!("\nmultiply-accumulates at {0}×{0}", cfg.input_hw);
    print!("{}", estimate_flops(&cfg, cfg.input_hw)?);
    Ok(ExitCode::SUCCESS)
}
