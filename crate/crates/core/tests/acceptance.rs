//! End-to-end checks with fixed tolerances and time budgets. Prints one
//! PASS/FAIL line per check and exits non-zero if any fails.

mod common;

use std::time::Instant;

use chada_core::autodiff::{ParamStore, Session, Tape};
use chada_core::eval::{
    compute_metrics, encode_dataset, evaluate_decoder, joint_space_analysis, low_data_split, reconstruction_pairs,
    single_channel_baseline, train_channel_decoder, train_linear_probe, DecoderConfig, DecoderTrainConfig, EvalReport,
    JointInput, MetricKind, ProbeConfig,
};
use chada_core::io::checkpoint::{load_checkpoint, save_checkpoint};
use chada_core::io::mcif::{decode, encode, read_mcif, write_mcif};
use chada_core::io::synth::{generate_synthetic, SyntheticKind};
use chada_core::io::{Dataset, Split};
use chada_core::model::{
    Arch, Backbone, ChadaEncoder, EncoderConfig, InterchannelEncoder, OneChannelEncoder, Pooling,
};
use chada_core::rng::stream;
use chada_core::ssl::{training_units, DinoConfig, DinoTrainer, StepStats};
use chada_core::tokenizer::build_sequence;
use chada_core::{Error, MultiChannelImage, Result, Tensor};
use rand::Rng;

use common::image;

type Outcome = Result<(bool, String)>;

struct Runner {
    failed: usize,
}

impl Runner {
    fn check(&mut self, name: &str, budget_s: f64, f: impl FnOnce() -> Outcome) {
        let t = Instant::now();
        let result = f();
        let secs = t.elapsed().as_secs_f64();
        let (ok, detail) = match result {
            Ok((ok, detail)) => (ok && secs < budget_s, detail),
            Err(e) => (false, format!("error: {e}")),
        };
        if !ok {
            self.failed += 1;
        }
        println!(
            "[{}] {name}: {detail} ({secs:.1}s of {budget_s:.0}s)",
            if ok { "PASS" } else { "FAIL" }
        );
    }
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn fixed_width() -> Outcome {
    let cfg = EncoderConfig {
        depth: 1,
        image_size: 64,
        ..Default::default()
    };
    let (enc, store) = ChadaEncoder::with_seed::<f32>(&cfg, 0)?;
    let mut widths = Vec::new();
    for n in 1..=10 {
        widths.push(enc.encode(&store, &image(n, 64, n as u64))?.width());
    }
    let (one, ostore) = OneChannelEncoder::with_seed::<f32>(&cfg, 0)?;
    let w3 = one.encode(&ostore, &image(3, 64, 1))?.width();
    let w2 = one.encode(&ostore, &image(2, 64, 2))?.width();
    let ok = widths.iter().all(|&w| w == 192) && w3 == 576 && w2 == 384;
    Ok((ok, format!("chada widths {widths:?}, one-channel 3->{w3}, 2->{w2}")))
}

fn token_budget() -> Outcome {
    let cfg = EncoderConfig::default();
    let (ic, _) = InterchannelEncoder::with_seed::<f32>(&EncoderConfig { depth: 0, ..cfg.clone() }, 0)?;
    let (a, b) = (cfg.sequence_len(), ic.sequence_len());
    Ok((a == 1961 && b == 11, format!("sequence length {a}, channel-token length {b}")))
}

fn dense_attention(q: &[f64], k: &[f64], v: &[f64], t: usize, d: usize, heads: usize) -> Vec<f64> {
    let dh = d / heads;
    let mut out = vec![0.0; t * d];
    for h in 0..heads {
        for i in 0..t {
            let logits: Vec<f64> = (0..t)
                .map(|j| (0..dh).map(|c| q[i * d + h * dh + c] * k[j * d + h * dh + c]).sum::<f64>() / (dh as f64).sqrt())
                .collect();
            let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
            let z: f64 = e.iter().sum();
            for c in 0..dh {
                out[i * d + h * dh + c] = (0..t).map(|j| e[j] / z * v[j * d + h * dh + c]).sum();
            }
        }
    }
    out
}

fn masking_oracle() -> Outcome {
    let mut rng = stream(1, &[]);
    let mut worst_attn = 0.0f64;
    for _ in 0..200 {
        let t = rng.gen_range(2..=12);
        let heads = rng.gen_range(1..=4);
        let d = heads * rng.gen_range(1..=16 / heads);
        let mut mask: Vec<bool> = (0..t).map(|_| rng.gen_bool(0.6)).collect();
        mask[rng.gen_range(0..t)] = true;
        let mut fill = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect() };
        let (q, k, v) = (fill(t * d), fill(t * d), fill(t * d));
        let mut tape = Tape::<f64>::new();
        let qv = tape.constant(Tensor::new(vec![t, d], q.clone())?);
        let kv = tape.constant(Tensor::new(vec![t, d], k.clone())?);
        let vv = tape.constant(Tensor::new(vec![t, d], v.clone())?);
        let out = tape.masked_attention(qv, kv, vv, &mask, heads)?;
        let out = tape.value(out).data();
        let real: Vec<usize> = (0..t).filter(|&i| mask[i]).collect();
        let take = |x: &[f64]| -> Vec<f64> { real.iter().flat_map(|&i| x[i * d..(i + 1) * d].to_vec()).collect() };
        let want = dense_attention(&take(&q), &take(&k), &take(&v), real.len(), d, heads);
        worst_attn = worst_attn.max(max_diff(&take(out), &want));
    }

    let mut worst_enc = 0.0f64;
    for case in 0..20 {
        let cfg = EncoderConfig {
            dim: 8 * rng.gen_range(1..=2),
            depth: 2,
            heads: 2,
            mlp_ratio: 2,
            patch_size: 8,
            max_channels: 4,
            image_size: 16,
            ..Default::default()
        };
        let n = rng.gen_range(1..=4);
        let (enc, store) = ChadaEncoder::with_seed::<f64>(&cfg, case)?;
        let img = image(n, 16, 100 + case);
        let padded = enc.encode(&store, &img)?.0;
        let seq = build_sequence(&img, &store, &enc.tables, &cfg)?;
        let keep = 1 + n * cfg.patches_per_channel();
        let short = Tensor::new(vec![keep, cfg.dim], seq.tokens.data()[..keep * cfg.dim].to_vec())?;
        let mut sess = Session::inference(&store);
        let x = sess.tape.constant(short);
        let (y, _) = enc.stack.forward(&mut sess, x, &vec![true; keep], None)?;
        worst_enc = worst_enc.max(max_diff(&padded, &sess.tape.value(y).data()[..cfg.dim]));
    }
    Ok((
        worst_attn < 1e-10 && worst_enc < 1e-10,
        format!("attention max diff {worst_attn:.2e} over 200 cases, encoder {worst_enc:.2e} over 20"),
    ))
}

fn padding_invariance() -> Outcome {
    let mut rng = stream(3, &[]);
    let mut worst = 0.0f64;
    for case in 0..50 {
        let cfg = EncoderConfig {
            dim: 16,
            depth: 2,
            heads: 4,
            mlp_ratio: 2,
            patch_size: 8,
            max_channels: 5,
            image_size: 16,
            pooling: if case % 2 == 0 { Pooling::Cls } else { Pooling::Mean },
            ..Default::default()
        };
        let n = rng.gen_range(1..5);
        let (enc, store) = ChadaEncoder::with_seed::<f32>(&cfg, case)?;
        let img = image(n, 16, 200 + case);
        let clean = enc.encode(&store, &img)?.0;
        let seq = build_sequence(&img, &store, &enc.tables, &cfg)?;
        let mut tokens = seq.tokens.clone();
        for (i, row) in tokens.data_mut().chunks_mut(cfg.dim).enumerate() {
            if !seq.mask[i] {
                row.iter_mut().for_each(|v| *v = rng.gen_range(-50.0..50.0));
            }
        }
        let mut sess = Session::inference(&store);
        let x = sess.tape.constant(tokens);
        let (y, _) = enc.stack.forward(&mut sess, x, &seq.mask, None)?;
        let pooled = enc.pool(&mut sess, y, &seq.mask)?;
        for (a, b) in clean.iter().zip(sess.tape.value(pooled).data()) {
            worst = worst.max((a - b).abs() as f64);
        }
    }
    Ok((worst < 1e-6, format!("max embedding change {worst:.2e} over 50 images")))
}

fn gradients() -> Outcome {
    let (report, tensors) = common::dino_gradient_check(6)?;
    Ok((
        report.max_rel_error < 1e-4 && report.coords_checked >= 200,
        format!(
            "max relative error {:.2e} over {} coordinates in {tensors} tensors",
            report.max_rel_error, report.coords_checked
        ),
    ))
}

fn embedding_sharing() -> Outcome {
    let cfg = EncoderConfig {
        dim: 16,
        depth: 2,
        heads: 4,
        mlp_ratio: 2,
        patch_size: 8,
        max_channels: 4,
        image_size: 16,
        ..Default::default()
    };
    let (enc, store) = ChadaEncoder::with_seed::<f32>(&cfg, 4)?;
    let (d, m) = (cfg.dim, cfg.patches_per_channel());
    let chan_id = enc.tables.chan.expect("channel table");
    let black = MultiChannelImage::from_channels(16, 16, &vec![vec![0.0; 256]; 4])?;

    let mut no_chan = store.clone();
    no_chan.set(chan_id, Tensor::zeros(store.get(chan_id).shape()))?;
    let seq = build_sequence(&black, &no_chan, &enc.tables, &cfg)?;
    let pos = store.get(enc.tables.pos);
    let mut pos_shared = true;
    let mut no_pos = store.clone();
    no_pos.set(enc.tables.pos, Tensor::zeros(pos.shape()))?;
    let seq2 = build_sequence(&black, &no_pos, &enc.tables, &cfg)?;
    let mut chan_shared = true;
    for c in 0..4 {
        for j in 0..m {
            let row = 1 + c * m + j;
            pos_shared &= seq.tokens.data()[row * d..(row + 1) * d] == *pos.row(j);
            chan_shared &= seq2.tokens.data()[row * d..(row + 1) * d] == *store.get(chan_id).row(c);
        }
    }

    let img = image(4, 16, 6);
    let base = enc.encode(&store, &img)?.0;
    let perm = [2, 0, 3, 1];
    let table = store.get(chan_id).clone();
    let mut permuted = store.clone();
    permuted.set(
        chan_id,
        Tensor::new(table.shape().to_vec(), perm.iter().flat_map(|&p| table.row(p).to_vec()).collect())?,
    )?;
    let moved = enc.encode(&permuted, &img.select_channels(&perm)?)?.0;
    let diff = base.iter().zip(&moved).map(|(a, b)| (a - b).abs()).fold(0.0f32, f32::max);
    Ok((
        pos_shared && chan_shared && diff < 1e-5,
        format!("positional rows shared: {pos_shared}, channel rows shared: {chan_shared}, permutation diff {diff:.2e}"),
    ))
}

struct Pretrained {
    trainer: DinoTrainer,
    stats: Vec<StepStats>,
}

fn pretrain(arch: Arch, images: &[MultiChannelImage], steps: u64) -> Result<Pretrained> {
    let units = training_units(arch, images)?;
    let mut trainer = DinoTrainer::new(arch, common::toy_encoder(), common::toy_dino(steps), units.len())?;
    let stats = trainer.fit(&units, steps, |_, _| Ok(()))?;
    Ok(Pretrained { trainer, stats })
}

fn moving_average(stats: &[StepStats], start: usize) -> f64 {
    stats[start..start + 20].iter().map(|s| s.log.loss).sum::<f64>() / 20.0
}

fn toy_run(images: &[MultiChannelImage], out: &mut Option<Pretrained>) -> Outcome {
    let a = pretrain(Arch::Chada, images, 300)?;
    let n = a.stats.len();
    let finite = a.stats.iter().all(|s| s.log.loss.is_finite() && s.log.grad_norm.is_finite());
    let (start, end) = (moving_average(&a.stats, 0), moving_average(&a.stats, n - 20));
    let teacher_zero = a.stats.iter().all(|s| s.teacher_grad_max_abs == 0.0);
    let b = pretrain(Arch::Chada, images, 300)?;
    let same = a.stats.iter().zip(&b.stats).all(|(x, y)| x.log.loss.to_bits() == y.log.loss.to_bits())
        && a.trainer.teacher.checksum() == b.trainer.teacher.checksum()
        && a.trainer.student.checksum() == b.trainer.student.checksum();
    let ok = n == 300 && finite && end < start && teacher_zero && same;
    *out = Some(a);
    Ok((
        ok,
        format!(
            "{n} steps, finite {finite}, loss average {start:.4} -> {end:.4}, teacher grads zero {teacher_zero}, rerun identical {same}"
        ),
    ))
}

struct EvalSplit {
    train: Vec<MultiChannelImage>,
    test: Vec<MultiChannelImage>,
    train_labels: Vec<usize>,
    test_labels: Vec<usize>,
}

impl EvalSplit {
    fn new(ds: &Dataset) -> Result<Self> {
        Ok(Self {
            train: ds.images_of(Split::Train),
            test: ds.images_of(Split::Test),
            train_labels: ds.class_labels(Some(Split::Train))?,
            test_labels: ds.class_labels(Some(Split::Test))?,
        })
    }

    fn probe(&self, backbone: &Backbone, store: &ParamStore<f32>, fraction: f64) -> Result<EvalReport> {
        let tr = encode_dataset(backbone, store, &self.train)?;
        let te = encode_dataset(backbone, store, &self.test)?;
        let mut accs = Vec::new();
        for seed in 0..5 {
            let cfg = ProbeConfig {
                fraction,
                seed,
                ..Default::default()
            };
            accs.push(train_linear_probe(&tr, &self.train_labels, &cfg)?.accuracy(&te, &self.test_labels)?);
        }
        EvalReport::from_seeds(format!("{fraction}"), MetricKind::Top1, accs)
    }
}

fn interchannel_advantage(chada: &DinoTrainer, images: &[MultiChannelImage], eval: &EvalSplit) -> Outcome {
    let one = pretrain(Arch::OneChannel, images, 300)?;
    let a = eval.probe(chada.backbone(), &chada.encoder_store(), 1.0)?;
    let b = eval.probe(one.trainer.backbone(), &one.trainer.encoder_store(), 1.0)?;
    let mut single = Vec::new();
    for seed in 0..5 {
        let cfg = ProbeConfig { seed, ..Default::default() };
        single.push(single_channel_baseline(
            &eval.train,
            &eval.train_labels,
            &eval.test,
            &eval.test_labels,
            0,
            &cfg,
        )?);
    }
    let s = EvalReport::from_seeds("single", MetricKind::Top1, single)?;
    let gap = (a.mean - b.mean) * 100.0;
    Ok((
        gap >= 5.0 && s.mean <= 0.55,
        format!(
            "chada {} vs one-channel {} (gap {gap:.1} points), single-channel pixels {}",
            a.display(),
            b.display(),
            s.display()
        ),
    ))
}

fn low_data(chada: &DinoTrainer, eval: &EvalSplit) -> Outcome {
    let labels = &eval.train_labels;
    let count = |idx: &[usize], c: usize| idx.iter().filter(|&&i| labels[i] == c).count();
    let mut stratified = true;
    let mut nested = true;
    let mut deterministic = true;
    for seed in 0..5 {
        let splits: Vec<Vec<usize>> = [1.0, 0.1, 0.01]
            .iter()
            .map(|&f| low_data_split(labels, f, seed))
            .collect::<Result<_>>()?;
        for (s, f) in splits.iter().zip([1.0, 0.1, 0.01]) {
            for c in 0..2 {
                let total = count(&(0..labels.len()).collect::<Vec<_>>(), c);
                stratified &= count(s, c) == ((f * total as f64).round() as usize).max(1);
            }
        }
        nested &= splits[2].iter().all(|i| splits[1].contains(i)) && splits[1].iter().all(|i| splits[0].contains(i));
        deterministic &= low_data_split(labels, 0.1, seed)? == splits[1];
    }
    let mut rows = Vec::new();
    for f in [1.0, 0.1, 0.01] {
        let r = eval.probe(chada.backbone(), &chada.encoder_store(), f)?;
        rows.push(format!("{}%: {}", f * 100.0, r.display()));
    }
    Ok((
        stratified && nested && deterministic,
        format!(
            "stratified {stratified}, nested {nested}, deterministic {deterministic}; {}",
            rows.join(", ")
        ),
    ))
}

fn reconstruction() -> Outcome {
    let a = DecoderConfig::reference(192).num_params();
    let b = DecoderConfig::reference(384).num_params();
    let census_ok = [a, b].iter().all(|n| (5_000_000..=5_400_000).contains(n))
        && (a as f64 - b as f64).abs() / (a as f64) < 0.01;

    let ds = generate_synthetic(SyntheticKind::Reconstruction, 4, 3, 64, 0)?;
    let enc_cfg = EncoderConfig {
        dim: 32,
        depth: 2,
        heads: 4,
        mlp_ratio: 2,
        patch_size: 16,
        max_channels: 3,
        image_size: 64,
        ..Default::default()
    };
    let (enc, store) = ChadaEncoder::with_seed::<f32>(&enc_cfg, 0)?;
    let backbone = Backbone::Chada(enc);
    let before = store.checksum();
    let (inputs, targets) = reconstruction_pairs(&backbone, &store, &ds.images, 2)?;
    let cfg = DecoderConfig::with_budget(32, 64, 200_000)?;
    let trained = train_channel_decoder(
        &inputs,
        &targets,
        &cfg,
        &DecoderTrainConfig {
            steps: 800,
            lr: 2e-3,
            batch_size: 4,
            seed: 0,
        },
    )?;
    let frozen = store.checksum() == before;
    let m = evaluate_decoder(&trained, &inputs, &targets)?;

    let truth: Vec<f64> = targets.iter().flatten().map(|&v| v as f64).collect();
    let mean = truth.iter().sum::<f64>() / truth.len() as f64;
    let r2_mean = compute_metrics(&vec![mean; truth.len()], &truth, MetricKind::R2)?;
    Ok((
        census_ok && frozen && m.mse < 1e-3 && r2_mean == 0.0,
        format!(
            "decoder census {a} / {b}, encoder untouched {frozen}, overfit mse {:.2e} (r2 {:.4}, mae {:.4}), r2 of mean predictor {r2_mean}",
            m.mse, m.r2, m.mae
        ),
    ))
}

fn joint_embedding() -> Outcome {
    let cfg = EncoderConfig {
        depth: 2,
        patch_size: 8,
        max_channels: 5,
        image_size: 32,
        ..Default::default()
    };
    let a = generate_synthetic(SyntheticKind::IntrachannelShape, 48, 3, 32, 0)?;
    let b = generate_synthetic(SyntheticKind::InterchannelXor, 48, 5, 32, 1)?;
    let (enc, store) = ChadaEncoder::with_seed::<f32>(&cfg, 0)?;
    let backbone = Backbone::Chada(enc);
    let ea = encode_dataset(&backbone, &store, &a.images)?;
    let eb = encode_dataset(&backbone, &store, &b.images)?;
    let la: Vec<f64> = a.labels.iter().map(|l| l.value()).collect();
    let lb: Vec<f64> = b.labels.iter().map(|l| l.value()).collect();
    let joint = joint_space_analysis(
        JointInput { name: "three", embeddings: &ea, labels: &la },
        JointInput { name: "five", embeddings: &eb, labels: &lb },
        5,
    )?;
    let ortho = joint.pca.orthonormality_error();

    let (one, ostore) = OneChannelEncoder::with_seed::<f32>(&EncoderConfig { depth: 1, ..cfg }, 0)?;
    let one = Backbone::OneChannel(one);
    let oa = encode_dataset(&one, &ostore, &a.images[..4])?;
    let ob = encode_dataset(&one, &ostore, &b.images[..4])?;
    let err = joint_space_analysis(
        JointInput { name: "three", embeddings: &oa, labels: &la[..4] },
        JointInput { name: "five", embeddings: &ob, labels: &lb[..4] },
        2,
    );
    let width_error = matches!(err, Err(Error::WidthMismatch { left: 576, right: 960 }));
    Ok((
        ea[0].len() == 192 && ortho < 1e-8 && joint.pc1_accuracy > 0.9 && width_error,
        format!(
            "width {}, orthonormality error {ortho:.2e}, PC1 dataset accuracy {:.3}, one-channel width mismatch reported {width_error}",
            ea[0].len(),
            joint.pc1_accuracy
        ),
    ))
}

fn format_and_resume() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let img = MultiChannelImage::new_unchecked_range(
        13,
        9,
        (0..3 * 13 * 9).map(|i| (i as f32 * 0.37).sin() * 3.0).collect(),
        vec!["dna".into(), "actin".into(), "".into()],
    )?;
    let path = dir.path().join("a.mcif");
    write_mcif(&path, &img)?;
    let back = read_mcif(&path)?;
    let mcif_ok = back.pixels().iter().zip(img.pixels()).all(|(a, b)| a.to_bits() == b.to_bits())
        && back.channel_names() == img.channel_names()
        && encode(&decode(&encode(&img)?)?)? == encode(&img)?;

    let enc = EncoderConfig {
        dim: 16,
        depth: 2,
        heads: 2,
        mlp_ratio: 2,
        patch_size: 8,
        max_channels: 3,
        image_size: 16,
        ..Default::default()
    };
    let dino = DinoConfig {
        out_dim: 32,
        hidden_dim: 32,
        bottleneck_dim: 16,
        batch_size: 8,
        max_steps: Some(50),
        seed: 9,
        ..Default::default()
    };
    let imgs = generate_synthetic(SyntheticKind::InterchannelXor, 32, 2, 16, 3)?.images;
    let bits = |s: Vec<StepStats>| -> Vec<u64> { s.iter().map(|x| x.log.loss.to_bits()).collect() };
    let mut whole = DinoTrainer::new(Arch::Chada, enc.clone(), dino.clone(), imgs.len())?;
    let full = bits(whole.fit(&imgs, 50, |_, _| Ok(()))?);

    let ckpt = dir.path().join("ckpt.json");
    let mut first = DinoTrainer::new(Arch::Chada, enc, dino, imgs.len())?;
    let mut split = bits(first.fit(&imgs, 25, |_, _| Ok(()))?);
    save_checkpoint(&ckpt, &first.to_checkpoint()?)?;
    // Same file name in another directory, since the manifest names its blob.
    let again = dir.path().join("copy");
    std::fs::create_dir(&again).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let again = again.join("ckpt.json");
    save_checkpoint(&again, &load_checkpoint(&ckpt)?)?;
    let read = |p: &std::path::Path| std::fs::read(p).map_err(|e| Error::InvalidArgument(e.to_string()));
    let ckpt_ok = read(&ckpt)? == read(&again)?
        && read(&ckpt.with_extension("bin"))? == read(&again.with_extension("bin"))?;
    let mut second = DinoTrainer::from_checkpoint(&load_checkpoint(&ckpt)?)?;
    split.extend(bits(second.fit(&imgs, 50, |_, _| Ok(()))?));
    let resume_ok = full == split && whole.teacher.checksum() == second.teacher.checksum();
    Ok((
        mcif_ok && ckpt_ok && resume_ok,
        format!("image file round trip {mcif_ok}, checkpoint round trip {ckpt_ok}, 25+25 resume matches 50 steps {resume_ok}"),
    ))
}

fn main() {
    let mut r = Runner { failed: 0 };
    r.check("fixed embedding width", 1.0, fixed_width);
    r.check("token budget", 1.0, token_budget);
    r.check("masked attention equals truncation", 30.0, masking_oracle);
    r.check("padding values are ignored", 30.0, padding_invariance);
    r.check("gradient check", 120.0, gradients);
    r.check("embedding sharing and channel permutation", 10.0, embedding_sharing);

    let pretrain_set = generate_synthetic(SyntheticKind::InterchannelXor, 256, 2, 32, 0).expect("pretraining data");
    let mut chada = None;
    r.check("toy self-distillation run", 600.0, || toy_run(&pretrain_set.images, &mut chada));
    let eval_set = generate_synthetic(SyntheticKind::InterchannelXor, 512, 2, 32, 1).expect("evaluation data");
    let eval = EvalSplit::new(&eval_set).expect("evaluation split");
    match &chada {
        Some(p) => {
            r.check("cross-channel probe advantage", 1800.0, || {
                interchannel_advantage(&p.trainer, &pretrain_set.images, &eval)
            });
            r.check("low-data probes", 900.0, || low_data(&p.trainer, &eval));
        }
        None => {
            r.check("cross-channel probe advantage", 1800.0, || Ok((false, "no pretrained encoder".into())));
            r.check("low-data probes", 900.0, || Ok((false, "no pretrained encoder".into())));
        }
    }
    r.check("reconstruction harness", 600.0, reconstruction);
    r.check("joint embedding space", 300.0, joint_embedding);
    r.check("file formats and resume", 120.0, format_and_resume);

    if r.failed > 0 {
        println!("{} check(s) failed", r.failed);
        std::process::exit(1);
    }
    println!("all checks passed");
}
