mod common;

use chada_core::io::{load_checkpoint, save_checkpoint};
use chada_core::io::synth::{generate_synthetic, SyntheticKind};
use chada_core::model::{Arch, EncoderConfig};
use chada_core::ssl::{training_units, DinoConfig, DinoTrainer};

fn tiny() -> (EncoderConfig, DinoConfig) {
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
        batch_size: 4,
        max_steps: Some(10),
        base_lr: Some(1e-3),
        seed: 5,
        ..Default::default()
    };
    (enc, dino)
}

#[test]
fn distillation_gradients_match_central_differences() {
    let (report, tensors) = common::dino_gradient_check(6).unwrap();
    assert!(tensors > 30);
    assert!(report.coords_checked >= 200, "{report:?}");
    assert!(report.max_rel_error < 1e-4, "{report:?}");
}

#[test]
fn same_seed_runs_are_bitwise_identical() {
    let (enc, dino) = tiny();
    let imgs = generate_synthetic(SyntheticKind::InterchannelXor, 12, 2, 16, 0).unwrap().images;
    let run = || {
        let mut tr = DinoTrainer::new(Arch::Chada, enc.clone(), dino.clone(), imgs.len()).unwrap();
        let losses: Vec<u64> = tr.fit(&imgs, 5, |_, _| Ok(())).unwrap().iter().map(|s| s.log.loss.to_bits()).collect();
        (losses, tr.student.checksum(), tr.teacher.checksum())
    };
    assert_eq!(run(), run());
}

#[test]
fn resumed_run_matches_unbroken_run() {
    let (enc, dino) = tiny();
    for arch in [Arch::Chada, Arch::OneChannel, Arch::Interchannel] {
        let imgs = generate_synthetic(SyntheticKind::InterchannelXor, 12, 2, 16, 1).unwrap().images;
        let units = training_units(arch, &imgs).unwrap();
        let mut whole = DinoTrainer::new(arch, enc.clone(), dino.clone(), units.len()).unwrap();
        let full: Vec<u64> = whole.fit(&units, 10, |_, _| Ok(())).unwrap().iter().map(|s| s.log.loss.to_bits()).collect();

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.json");
        let mut first = DinoTrainer::new(arch, enc.clone(), dino.clone(), units.len()).unwrap();
        let mut split: Vec<u64> = first.fit(&units, 4, |_, _| Ok(())).unwrap().iter().map(|s| s.log.loss.to_bits()).collect();
        save_checkpoint(&path, &first.to_checkpoint().unwrap()).unwrap();
        drop(first);
        let mut second = DinoTrainer::from_checkpoint(&load_checkpoint(&path).unwrap()).unwrap();
        split.extend(second.fit(&units, 10, |_, _| Ok(())).unwrap().iter().map(|s| s.log.loss.to_bits()));
        assert_eq!(full, split, "{arch}");
        assert_eq!(whole.teacher.checksum(), second.teacher.checksum());
        assert_eq!(whole.center, second.center);
    }
}

#[test]
fn teacher_never_receives_gradient_and_schedules_hold() {
    let (enc, dino) = tiny();
    let imgs = generate_synthetic(SyntheticKind::InterchannelXor, 8, 2, 16, 2).unwrap().images;
    let mut tr = DinoTrainer::new(Arch::Chada, enc, dino, imgs.len()).unwrap();
    let stats = tr.fit(&imgs, 10, |_, _| Ok(())).unwrap();
    assert_eq!(stats.len(), 10);
    assert!(stats.iter().all(|s| s.teacher_grad_max_abs == 0.0 && s.log.loss.is_finite()));
    assert!(stats.windows(2).all(|w| w[1].log.lr <= w[0].log.lr + 1e-15));
    assert!(stats.windows(2).all(|w| w[1].teacher_momentum >= w[0].teacher_momentum));
    assert!((stats[0].teacher_momentum - 0.996).abs() < 1e-12);
}
