mod common;

use fusionnet::autograd::{kl_div, softmax_rows};
use fusionnet::config::KvDoc;
use fusionnet::data::{stratified_split, subsample_indices, LabeledDataset};
use fusionnet::distill::{teacher_mixture, total_loss, DistillConfig, TeacherOutputs};
use fusionnet::model::{Checkpoint, FusionNetConfig, Preset};
use fusionnet::optim::{cosine_lr, TrainConfig};
use fusionnet::train::init_params;
use fusionnet::{Tape, Tensor};
use proptest::prelude::*;

fn dataset(labels: Vec<usize>, classes: usize) -> LabeledDataset {
    let n = labels.len();
    let names = (0..classes).map(|c| format!("c{c}")).collect();
    LabeledDataset::new(Tensor::zeros(&[n, 3, 1, 1]), labels, names, "prop").unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn softmax_rows_match_reference_and_sum_to_one(
        row in prop::collection::vec(-30.0f64..30.0, 2..12),
        t in 0.25f64..8.0,
    ) {
        let p = softmax_rows(&row, row.len(), t);
        let want = common::softmax_naive(&row, t);
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for (a, b) in p.iter().zip(&want) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn kl_is_nonnegative_and_zero_on_the_diagonal(
        a in prop::collection::vec(0.01f64..1.0, 5),
        b in prop::collection::vec(0.01f64..1.0, 5),
    ) {
        let norm = |v: &[f64]| { let s: f64 = v.iter().sum(); v.iter().map(|x| x / s).collect::<Vec<_>>() };
        let (p, q) = (norm(&a), norm(&b));
        prop_assert!(kl_div(&p, &q).unwrap() >= -1e-15);
        prop_assert_eq!(kl_div(&p, &p).unwrap(), 0.0);
    }

    #[test]
    fn total_is_the_exact_sum_of_its_parts(
        logits in prop::collection::vec(-4.0f64..4.0, 12),
        ta in prop::collection::vec(-4.0f64..4.0, 12),
        tb in prop::collection::vec(-4.0f64..4.0, 12),
        alpha in 0.0f64..=1.0,
        temperature in 0.5f64..6.0,
        literal_t2 in any::<bool>(),
    ) {
        let cfg = DistillConfig { temperature, alpha, literal_t2 };
        let teachers = TeacherOutputs {
            logits_a: Tensor::new(&[3, 4], ta).unwrap(),
            logits_b: Tensor::new(&[3, 4], tb).unwrap(),
        };
        let mut tape = Tape::new();
        let s = tape.param(&Tensor::new(&[3, 4], logits).unwrap());
        let l2 = tape.constant(&Tensor::new(&[], vec![0.125]).unwrap());
        let out = total_loss(&mut tape, s, &teachers, &[0, 3, 1], &cfg, Some(l2)).unwrap();
        let b = out.breakdown;
        prop_assert_eq!(tape.scalar(out.loss), b.kl + b.ce + b.l2);
        prop_assert!(b.kl >= -1e-15 && b.ce >= 0.0);
    }

    #[test]
    fn mixture_is_the_alpha_blend_of_raw_logits(
        ta in prop::collection::vec(-4.0f64..4.0, 6),
        tb in prop::collection::vec(-4.0f64..4.0, 6),
        alpha in 0.0f64..=1.0,
    ) {
        let t = TeacherOutputs {
            logits_a: Tensor::new(&[2, 3], ta.clone()).unwrap(),
            logits_b: Tensor::new(&[2, 3], tb.clone()).unwrap(),
        };
        let m = teacher_mixture(&t, alpha).unwrap();
        for i in 0..6 {
            prop_assert!((m.data()[i] - (alpha * ta[i] + (1.0 - alpha) * tb[i])).abs() < 1e-12);
        }
    }

    #[test]
    fn splits_are_disjoint_stratified_and_cover_everything(
        counts in prop::collection::vec(2usize..40, 2..5),
        f in 0.05f64..0.95,
        seed in any::<u64>(),
    ) {
        let labels: Vec<usize> = counts.iter().enumerate().flat_map(|(c, &n)| std::iter::repeat_n(c, n)).collect();
        let ds = dataset(labels.clone(), counts.len());
        let s = stratified_split(&ds, f, seed).unwrap();
        let mut all: Vec<usize> = s.train.iter().chain(&s.test).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..labels.len()).collect::<Vec<_>>());
        for (c, &n) in counts.iter().enumerate() {
            let k = s.train.iter().filter(|&&i| labels[i] == c).count();
            prop_assert_eq!(k, ((f * n as f64).round() as usize).clamp(1, n - 1));
        }
        prop_assert_eq!(&s, &stratified_split(&ds, f, seed).unwrap());
    }

    #[test]
    fn subsample_takes_the_rounded_share_of_each_class(
        counts in prop::collection::vec(1usize..50, 2..5),
        f in 0.01f64..=1.0,
        seed in any::<u64>(),
    ) {
        let labels: Vec<usize> = counts.iter().enumerate().flat_map(|(c, &n)| std::iter::repeat_n(c, n)).collect();
        let ds = dataset(labels.clone(), counts.len());
        let idx = subsample_indices(&ds, f, seed).unwrap();
        prop_assert!(idx.windows(2).all(|w| w[0] < w[1]));
        for (c, &n) in counts.iter().enumerate() {
            let k = idx.iter().filter(|&&i| labels[i] == c).count();
            prop_assert_eq!(k, ((f * n as f64).round() as usize).clamp(1, n));
        }
    }

    #[test]
    fn cosine_schedule_stays_between_its_endpoints(
        epochs in 1usize..200,
        lr in 1e-6f64..1.0,
        frac in 0.0f64..=1.0,
    ) {
        let tc = TrainConfig { initial_lr: lr, total_epochs: epochs, eta_min: lr / 10.0, ..TrainConfig::default() };
        let e = frac * epochs as f64;
        let v = cosine_lr(e, &tc).unwrap();
        prop_assert!(v <= lr * (1.0 + 1e-12) && v >= lr / 10.0 * (1.0 - 1e-12));
        if e + 0.5 <= epochs as f64 {
            prop_assert!(cosine_lr(e + 0.5, &tc).unwrap() <= v);
        }
    }

    #[test]
    fn kv_documents_round_trip(entries in prop::collection::btree_map("[a-z_]{1,8}", "[A-Za-z0-9_.:/-]{0,12}", 0..8)) {
        let mut doc = KvDoc::new();
        for (k, v) in &entries {
            doc.set(k, v);
        }
        let back = KvDoc::parse(&doc.render()).unwrap();
        prop_assert_eq!(back.entries(), doc.entries());
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 8, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn checkpoints_round_trip_bit_exactly(seed in any::<u64>(), classes in 2usize..6) {
        let mut cfg = FusionNetConfig::preset(Preset::Micro);
        cfg.num_classes = classes;
        let mut ck = Checkpoint::new(cfg.clone(), init_params(&cfg, seed).unwrap()).unwrap();
        ck.meta.set("seed", seed);
        let bytes = ck.to_bytes();
        let back = Checkpoint::from_bytes(&bytes, std::path::Path::new("mem")).unwrap();
        prop_assert_eq!(&back, &ck);
        prop_assert_eq!(back.to_bytes(), bytes);
    }
}

#[test]
fn corrupted_checkpoints_are_rejected() {
    let cfg = FusionNetConfig::preset(Preset::Micro);
    let bytes = Checkpoint::new(cfg.clone(), init_params(&cfg, 1).unwrap()).unwrap().to_bytes();
    let p = std::path::Path::new("mem");
    assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3], p).is_err());
    let mut bad = bytes.clone();
    bad[0] ^= 0xff;
    assert!(Checkpoint::from_bytes(&bad, p).is_err());
}
