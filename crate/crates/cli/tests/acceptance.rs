//! End-to-end acceptance run: one PASS/FAIL line per criterion, nonzero
//! exit status if any fails. Run with
//! `cargo test -p fusionnet-cli --test acceptance -- --nocapture`.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::path::Path;
use std::process::{Command, ExitCode, Output};
use std::time::{Duration, Instant};

use fusionnet::autograd::kl_div;
use fusionnet::data::{load_cifar10_binary, stratified_split, LabeledDataset, CIFAR_RECORD_BYTES};
use fusionnet::distill::{ce_loss, total_loss, DistillConfig, TeacherOutputs};
use fusionnet::embed::{nearest_neighbor_agreement, tsne, TsneConfig};
use fusionnet::model::{count_params, shape_report, FusionNetConfig, Preset};
use fusionnet::optim::{cosine_lr, TrainConfig};
use fusionnet::{Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn fusionnet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fusionnet")).args(args).output().expect("binary runs")
}

fn csv_value(path: &Path, key: &str) -> Option<f64> {
    let text = std::fs::read_to_string(path).ok()?;
    text.lines().find_map(|l| l.strip_prefix(key)?.strip_prefix(',')?.parse().ok())
}

fn gradient_checks() -> Outcome {
    let start = Instant::now();
    let mut worst = (0.0f64, "");
    for op in common::suite::OPS {
        for i in 0..3 {
            let e = common::suite::check(op, i, 2024);
            if e > worst.0 {
                worst = (e, op);
            }
        }
    }
    let elapsed = start.elapsed();
    let cli = fusionnet(&["gradcheck"]);
    let pass = worst.0 <= 1e-4 && elapsed < Duration::from_secs(120) && cli.status.success();
    outcome(
        pass,
        format!(
            "{} ops x 3 instances, worst {:.2e} ({}), {:.1}s; CLI gradcheck exit {:?}",
            common::suite::OPS.len(),
            worst.0,
            worst.1,
            elapsed.as_secs_f64(),
            cli.status.code()
        ),
    )
}

fn deformable_reduction() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f32;
    for _ in 0..20 {
        let (n, c, o) = (rng.random_range(1..3), rng.random_range(1..5), rng.random_range(1..5));
        let (h, w) = (rng.random_range(3..9), rng.random_range(3..9));
        let stride = rng.random_range(1..3);
        let pad = rng.random_range(0..2);
        let oh = (h + 2 * pad - 3) / stride + 1;
        let ow = (w + 2 * pad - 3) / stride + 1;
        let t = |rng: &mut ChaCha8Rng, shape: &[usize]| {
            let v: Vec<f32> =
                common::uniform(rng, shape.iter().product(), -1.0, 1.0).iter().map(|&x| x as f32).collect();
            Tensor::new(shape, v).unwrap()
        };
        let (x, wt, b) = (t(&mut rng, &[n, c, h, w]), t(&mut rng, &[o, c, 3, 3]), t(&mut rng, &[o]));
        let mut tape = Tape::<f32>::new();
        let (xv, wv, bv) = (tape.constant(&x), tape.constant(&wt), tape.constant(&b));
        let off = tape.constant(&Tensor::zeros(&[n, 18, oh, ow]));
        let m = tape.constant(&Tensor::ones(&[n, 9, oh, ow]));
        let d = tape.deform_conv2d(xv, wv, Some(bv), off, m, stride, pad).unwrap();
        let p = tape.conv2d(xv, wv, Some(bv), stride, pad).unwrap();
        for (a, b) in tape.value(d).iter().zip(tape.value(p)) {
            worst = worst.max((a - b).abs());
        }
    }
    outcome(worst <= 1e-5, format!("20 random f32 instances, max |diff| {worst:.2e}"))
}

fn losses(
    student: &[f64],
    teachers: &TeacherOutputs<f64>,
    labels: &[usize],
    cfg: &DistillConfig,
    l2: f64,
) -> (f64, f64, f64, f64, f64) {
    let c = student.len() / labels.len();
    let mut tape = Tape::new();
    let s = tape.param(&Tensor::new(&[labels.len(), c], student.to_vec()).unwrap());
    let l2v = tape.constant(&Tensor::new(&[], vec![l2]).unwrap());
    let out = total_loss(&mut tape, s, teachers, labels, cfg, Some(l2v)).unwrap();
    let b = out.breakdown;
    (tape.scalar(out.loss), b.kl, b.ce, b.l2, b.kl + b.ce + b.l2)
}

fn loss_algebra() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (n, c) = (4, 5);
    let mut fails = Vec::new();
    for trial in 0..10 {
        let student = common::uniform(&mut rng, n * c, -3.0, 3.0);
        let teachers = TeacherOutputs {
            logits_a: Tensor::new(&[n, c], common::uniform(&mut rng, n * c, -3.0, 3.0)).unwrap(),
            logits_b: Tensor::new(&[n, c], common::uniform(&mut rng, n * c, -3.0, 3.0)).unwrap(),
        };
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..c)).collect();
        let temperature = rng.random_range(0.5..5.0);
        let alpha = rng.random_range(0.0..1.0);
        let cfg = DistillConfig { temperature, alpha, literal_t2: trial % 2 == 0 };
        let (total, _, _, _, sum) = losses(&student, &teachers, &labels, &cfg, 0.37);
        if total.to_bits() != sum.to_bits() {
            fails.push(format!("total {total} != parts {sum}"));
        }
        let (_, kl0, _, _, _) = losses(&student, &teachers, &labels, &DistillConfig { alpha: 0.0, ..cfg }, 0.0);
        if kl0 != 0.0 {
            fails.push(format!("alpha=0 KL {kl0}"));
        }
        let (_, _, ce1, _, _) = losses(&student, &teachers, &labels, &DistillConfig { alpha: 1.0, ..cfg }, 0.0);
        if ce1 != 0.0 {
            fails.push(format!("alpha=1 CE {ce1}"));
        }
        let same = TeacherOutputs {
            logits_a: Tensor::new(&[n, c], student.clone()).unwrap(),
            logits_b: Tensor::new(&[n, c], student.clone()).unwrap(),
        };
        let (_, kl_same, _, _, _) = losses(&student, &same, &labels, &cfg, 0.0);
        if kl_same != 0.0 {
            fails.push(format!("identical logits KL {kl_same}"));
        }
        let one = |literal_t2| {
            let cfg = DistillConfig { temperature: 1.0, alpha, literal_t2 };
            losses(&student, &teachers, &labels, &cfg, 0.0).1
        };
        if (one(true) - one(false)).abs() > 1e-12 * one(true).abs().max(1.0) {
            fails.push(format!("T=1 modes differ {} vs {}", one(true), one(false)));
        }
    }
    let detail = if fails.is_empty() {
        "10 random instances: bitwise sum, alpha limits, identity, T=1 modes".into()
    } else {
        fails.join("; ")
    };
    outcome(fails.is_empty(), detail)
}

fn closed_forms() -> Outcome {
    let mut tape = Tape::<f64>::new();
    let s = tape.param(&Tensor::zeros(&[3, 10]));
    let ce = ce_loss(&mut tape, s, &[0, 4, 9], 0.0).unwrap();
    let ce = tape.scalar(ce);
    let kl: f64 = kl_div(&[0.5, 0.5], &[0.9, 0.1]).unwrap();
    let pass = (ce - 10f64.ln()).abs() <= 1e-6 && (kl - 0.510826).abs() <= 1e-5;
    outcome(pass, format!("uniform CE {ce:.9} (ln 10 = {:.9}), KL {kl:.7}", 10f64.ln()))
}

fn accumulation() -> Outcome {
    let err = common::accum::desk_split_error(4, 8, true);
    outcome(err <= 1e-6, format!("desk, f64, dropout on: max relative difference {err:.2e}"))
}

fn cosine() -> Outcome {
    let tc = TrainConfig { initial_lr: 1e-4, total_epochs: 50, eta_min: 0.0, ..TrainConfig::default() };
    let got: Vec<f64> = [0.0, 25.0, 50.0].iter().map(|&e| cosine_lr(e, &tc).unwrap()).collect();
    let want = [1e-4, 5e-5, 0.0];
    let pass = got.iter().zip(&want).all(|(g, w)| (g - w).abs() <= 1e-12);
    outcome(pass, format!("{got:?}"))
}

fn paper_shapes() -> Outcome {
    let cfg = FusionNetConfig::preset(Preset::Paper);
    let s = shape_report(&cfg).unwrap();
    let head = count_params(&cfg).get("head");
    let pass = s.stream_a == Some([1792, 7, 7])
        && s.stream_b == Some([768, 7, 7])
        && s.fused_channels == Some(2560)
        && s.pooled == [64, 7, 7]
        && s.flatten == 3136
        && s.logits == 89
        && head == Some(279_193);
    outcome(
        pass,
        format!(
            "streams {:?} {:?}, fused {:?}, pooled {:?}, flatten {}, logits {}, head params {:?}",
            s.stream_a, s.stream_b, s.fused_channels, s.pooled, s.flatten, s.logits, head
        ),
    )
}

/// Two identical `train` runs; returns (accuracy, seconds for the first run,
/// epochs.csv identical, metrics.csv identical).
fn smoke_runs(dir: &Path) -> Result<(f64, f64, bool, bool), String> {
    let mut secs = 0.0;
    for (k, name) in ["a", "b"].iter().enumerate() {
        let out = dir.join(name);
        let start = Instant::now();
        let o = fusionnet(&[
            "train",
            "--data",
            "synth:3x100x32",
            "--preset",
            "desk",
            "--epochs",
            "15",
            "--seed",
            "42",
            "--out",
            out.to_str().unwrap(),
        ]);
        if k == 0 {
            secs = start.elapsed().as_secs_f64();
        }
        if !o.status.success() {
            return Err(String::from_utf8_lossy(&o.stderr).into_owned());
        }
    }
    let (a, b) = (dir.join("a"), dir.join("b"));
    let same = |f: &str| std::fs::read(a.join(f)).ok() == std::fs::read(b.join(f)).ok() && a.join(f).is_file();
    let acc = csv_value(&a.join("metrics.csv"), "accuracy").ok_or("metrics.csv has no accuracy")?;
    Ok((acc, secs, same("epochs.csv"), same("metrics.csv")))
}

fn distillation(dir: &Path) -> Outcome {
    let mut rows = Vec::new();
    let (mut d_sum, mut p_sum) = (0.0, 0.0);
    for seed in ["1", "2", "3"] {
        let out = dir.join(format!("distill-{seed}"));
        let o = fusionnet(&[
            "distill",
            "--data",
            "synth:2x500x32@frac=0.1",
            "--preset",
            "desk",
            "--epochs",
            "15",
            "--seed",
            seed,
            "--out",
            out.to_str().unwrap(),
        ]);
        if !o.status.success() {
            return outcome(false, format!("seed {seed}: {}", String::from_utf8_lossy(&o.stderr)));
        }
        let report = out.join("report.csv");
        let (d, p) = (csv_value(&report, "distilled_accuracy").unwrap(), csv_value(&report, "plain_accuracy").unwrap());
        d_sum += d;
        p_sum += p;
        rows.push(format!("seed {seed}: {d:.3} vs {p:.3}"));
    }
    let (d, p) = (d_sum / 3.0, p_sum / 3.0);
    outcome(d >= p - 0.02, format!("mean distilled {d:.3}, plain {p:.3} ({})", rows.join(", ")))
}

fn embedding() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let (k, per, dim) = (3, 50, 5);
    let mut x = Vec::with_capacity(k * per * dim);
    for c in 0..k {
        for _ in 0..per {
            for j in 0..dim {
                let centre = if j == c { 8.0 } else { 0.0 };
                let z: f64 = StandardNormal.sample(&mut rng);
                x.push(centre + z);
            }
        }
    }
    let labels: Vec<usize> = (0..k * per).map(|i| i / per).collect();
    let r = tsne(&x, k * per, dim, &TsneConfig { perplexity: 30.0, seed: 10, ..TsneConfig::default() }).unwrap();
    let n = k * per;
    let sum: f64 = r.joint.iter().sum();
    let asym = (0..n)
        .flat_map(|i| (0..n).map(move |j| (i, j)))
        .map(|(i, j)| (r.joint[i * n + j] - r.joint[j * n + i]).abs())
        .fold(0.0, f64::max);
    let agree = nearest_neighbor_agreement(&r.y, 2, &labels);
    let (kl0, kl1) = (r.initial_kl(), r.final_kl());
    let pass = kl1 <= kl0 && agree >= 0.9 && (sum - 1.0).abs() <= 1e-6 && asym <= 1e-6;
    outcome(pass, format!("KL {kl0:.4} -> {kl1:.4}, 1-NN {agree:.3}, sum P {sum:.9}, max asymmetry {asym:.1e}"))
}

fn data_checks() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let mut bytes = Vec::new();
    for (label, salt) in [(1u8, 3usize), (8u8, 29usize)] {
        bytes.push(label);
        bytes.extend((0..CIFAR_RECORD_BYTES - 1).map(|i| ((i * salt + 11) % 256) as u8));
    }
    let path = dir.path().join("data_batch_1.bin");
    std::fs::write(&path, &bytes).unwrap();
    let ds = load_cifar10_binary(&[path]).unwrap();
    let mut back = Vec::new();
    for r in 0..2 {
        back.push(ds.labels[r] as u8);
        back.extend(ds.images.data()[r * 3072..(r + 1) * 3072].iter().map(|v| (v * 255.0).round() as u8));
    }
    let roundtrip = back == bytes;

    let classes = 5;
    let labels: Vec<usize> = (0..classes * 100).map(|i| i % classes).collect();
    let names = (0..classes).map(|c| c.to_string()).collect();
    let ds = LabeledDataset::new(Tensor::zeros(&[labels.len(), 3, 1, 1]), labels.clone(), names, "acceptance").unwrap();
    let split = stratified_split(&ds, 0.8, 9).unwrap();
    let exact = (0..classes).all(|c| {
        split.train.iter().filter(|&&i| labels[i] == c).count() == 80
            && split.test.iter().filter(|&&i| labels[i] == c).count() == 20
    });
    let repeat = split == stratified_split(&ds, 0.8, 9).unwrap();
    outcome(
        roundtrip && exact && repeat,
        format!("round trip {roundtrip}, 80/20 per class {exact}, same seed same split {repeat}"),
    )
}

fn main() -> ExitCode {
    let work = tempfile::tempdir().expect("temp dir");
    let mut results: Vec<(u32, &str, Outcome)> = vec![
        (1, "gradient checks", gradient_checks()),
        (2, "deformable reduces to plain conv", deformable_reduction()),
        (3, "loss algebra", loss_algebra()),
        (4, "closed forms", closed_forms()),
        (5, "gradient accumulation", accumulation()),
        (6, "cosine schedule", cosine()),
        (7, "paper preset shapes", paper_shapes()),
    ];
    match smoke_runs(work.path()) {
        Ok((acc, secs, epochs_same, metrics_same)) => {
            results.push((
                8,
                "training smoke",
                outcome(
                    acc >= 0.95 && secs < 600.0 && epochs_same,
                    format!("held-out accuracy {acc:.3} after 15 epochs in {secs:.1}s, rerun identical {epochs_same}"),
                ),
            ));
            results.push((9, "distillation", distillation(work.path())));
            results.push((
                12,
                "reproducibility",
                outcome(metrics_same, format!("metrics.csv byte-identical {metrics_same}")),
            ));
        }
        Err(e) => {
            results.push((8, "training smoke", outcome(false, e.clone())));
            results.push((9, "distillation", distillation(work.path())));
            results.push((12, "reproducibility", outcome(false, e)));
        }
    }
    results.push((10, "t-SNE", embedding()));
    results.push((11, "data", data_checks()));
    results.sort_by_key(|r| r.0);

    let mut failed = 0;
    for (id, name, o) in &results {
        println!("{} criterion {id:>2} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        failed += usize::from(!o.pass);
    }
    println!("{} of {} criteria pass", results.len() - failed, results.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
