use chada_core::autodiff::{ParamStore, Session, Tape};
use chada_core::model::{
    parameter_census, Arch, Backbone, ChadaEncoder, EncoderConfig, InterchannelEncoder, OneChannelEncoder, Pooling,
};
use chada_core::rng::stream;
use chada_core::tokenizer::{build_sequence, patch_matrix};
use chada_core::{MultiChannelImage, Tensor};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

fn image(n: usize, side: usize, seed: u64) -> MultiChannelImage {
    let mut rng = stream(seed, &[]);
    let chans: Vec<Vec<f32>> = (0..n).map(|_| (0..side * side).map(|_| rng.gen()).collect()).collect();
    MultiChannelImage::from_channels(side, side, &chans).unwrap()
}

fn small(dim: usize, depth: usize, heads: usize, max_channels: usize) -> EncoderConfig {
    EncoderConfig {
        dim,
        depth,
        heads,
        mlp_ratio: 2,
        patch_size: 8,
        max_channels,
        image_size: 16,
        ..Default::default()
    }
}

/// Plain softmax attention over every row, written out with loops.
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

#[test]
fn width_does_not_depend_on_channel_count() {
    let cfg = EncoderConfig {
        depth: 1,
        image_size: 32,
        ..Default::default()
    };
    let (enc, store) = ChadaEncoder::with_seed::<f32>(&cfg, 0).unwrap();
    for n in 1..=10 {
        assert_eq!(enc.encode(&store, &image(n, 32, n as u64)).unwrap().width(), 192);
    }
    let (one, ostore) = OneChannelEncoder::with_seed::<f32>(&cfg, 0).unwrap();
    assert_eq!(one.encode(&ostore, &image(3, 32, 1)).unwrap().width(), 576);
    assert_eq!(one.encode(&ostore, &image(2, 32, 1)).unwrap().width(), 384);
    let (ic, istore) = InterchannelEncoder::with_seed::<f32>(&cfg, 0).unwrap();
    assert_eq!(ic.encode(&istore, &image(7, 32, 1)).unwrap().width(), 192);
    assert!(enc.encode(&store, &image(11, 32, 1)).is_err());
}

#[test]
fn sequence_lengths() {
    let cfg = EncoderConfig::default();
    assert_eq!(cfg.sequence_len(), 1 + 10 * 196);
    let (ic, _) = InterchannelEncoder::with_seed::<f32>(&EncoderConfig { depth: 0, ..cfg }, 0).unwrap();
    assert_eq!(ic.sequence_len(), 11);
}

#[test]
fn census_matches_hand_count() {
    let cfg = EncoderConfig::default();
    // 16*16*192+192 projection, 196 + 10 + 1 table rows, 12 blocks of 444_864, final norm.
    let hand = 16 * 16 * 192 + 192 + (196 + 10 + 1) * 192 + 12 * 444_864 + 2 * 192;
    assert_eq!(parameter_census(&cfg), hand);
    let small_cfg = small(16, 2, 4, 3);
    let (_, store) = ChadaEncoder::with_seed::<f32>(&small_cfg, 0).unwrap();
    assert_eq!(store.num_scalars(), parameter_census(&small_cfg));
}

#[test]
fn masked_attention_matches_truncated_dense() {
    let mut rng = stream(1, &[]);
    for case in 0..200 {
        let t = rng.gen_range(2..=12);
        let heads = rng.gen_range(1..=4);
        let d = heads * rng.gen_range(1..=16 / heads);
        let mut mask: Vec<bool> = (0..t).map(|_| rng.gen_bool(0.6)).collect();
        mask[0] = true;
        let mut fill = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect() };
        let (q, k, v) = (fill(t * d), fill(t * d), fill(t * d));
        let mut tape = Tape::<f64>::new();
        let qv = tape.constant(Tensor::new(vec![t, d], q.clone()).unwrap());
        let kv = tape.constant(Tensor::new(vec![t, d], k.clone()).unwrap());
        let vv = tape.constant(Tensor::new(vec![t, d], v.clone()).unwrap());
        let out = tape.masked_attention(qv, kv, vv, &mask, heads).unwrap();
        let out = tape.value(out).data().to_vec();

        let real: Vec<usize> = (0..t).filter(|&i| mask[i]).collect();
        let take = |x: &[f64]| -> Vec<f64> { real.iter().flat_map(|&i| x[i * d..(i + 1) * d].to_vec()).collect() };
        let want = dense_attention(&take(&q), &take(&k), &take(&v), real.len(), d, heads);
        for (ri, &i) in real.iter().enumerate() {
            for c in 0..d {
                let diff = (out[i * d + c] - want[ri * d + c]).abs();
                assert!(diff < 1e-10, "case {case}: {diff}");
            }
        }
        for i in (0..t).filter(|&i| !mask[i]) {
            assert!(out[i * d..(i + 1) * d].iter().all(|&x| x == 0.0));
        }
    }
}

#[test]
fn single_token_attends_to_itself() {
    let mut tape = Tape::<f64>::new();
    let x = Tensor::new(vec![3, 4], (0..12).map(|i| i as f64 * 0.3 - 1.0).collect()).unwrap();
    let q = tape.constant(x.clone());
    let out = tape.masked_attention(q, q, q, &[false, true, false], 2).unwrap();
    assert_eq!(&tape.value(out).data()[4..8], &x.data()[4..8]);
}

#[test]
fn encoder_ignores_padding_slots_exactly_like_truncation() {
    let mut rng = stream(2, &[]);
    for case in 0..20 {
        let cfg = small(8 * rng.gen_range(1..=2), 2, 2, 4);
        let n = rng.gen_range(1..=4);
        let (enc, store) = ChadaEncoder::with_seed::<f64>(&cfg, case).unwrap();
        let img = image(n, 16, 100 + case);
        let padded = enc.encode(&store, &img).unwrap().0;

        let seq = build_sequence(&img, &store, &enc.tables, &cfg).unwrap();
        let keep = 1 + n * cfg.patches_per_channel();
        let d = cfg.dim;
        let short = Tensor::new(vec![keep, d], seq.tokens.data()[..keep * d].to_vec()).unwrap();
        let mut sess = Session::inference(&store);
        let x = sess.tape.constant(short);
        let (y, _) = enc.stack.forward(&mut sess, x, &vec![true; keep], None).unwrap();
        let cls = &sess.tape.value(y).data()[..d];
        for (a, b) in padded.iter().zip(cls) {
            assert!((a - b).abs() < 1e-10, "case {case}");
        }
    }
}

#[test]
fn random_padding_values_do_not_leak() {
    let mut rng = stream(3, &[]);
    for case in 0..50 {
        let cfg = EncoderConfig {
            pooling: if case % 2 == 0 { Pooling::Cls } else { Pooling::Mean },
            ..small(16, 2, 4, 5)
        };
        let n = rng.gen_range(1..5);
        let (enc, store) = ChadaEncoder::with_seed::<f32>(&cfg, case).unwrap();
        let img = image(n, 16, 200 + case);
        let clean = enc.encode(&store, &img).unwrap().0;

        let seq = build_sequence(&img, &store, &enc.tables, &cfg).unwrap();
        let mut tokens = seq.tokens.clone();
        let d = cfg.dim;
        for (i, row) in tokens.data_mut().chunks_mut(d).enumerate() {
            if !seq.mask[i] {
                row.iter_mut().for_each(|v| *v = rng.gen_range(-50.0..50.0));
            }
        }
        let mut sess = Session::inference(&store);
        let x = sess.tape.constant(tokens);
        let (y, _) = enc.stack.forward(&mut sess, x, &seq.mask, None).unwrap();
        let pooled = enc.pool(&mut sess, y, &seq.mask).unwrap();
        for (a, b) in clean.iter().zip(sess.tape.value(pooled).data()) {
            assert!((a - b).abs() < 1e-6, "case {case}");
        }
    }
}

#[test]
fn embedding_tables_are_shared_bitwise() {
    let cfg = small(8, 0, 2, 3);
    let (enc, mut store) = ChadaEncoder::with_seed::<f32>(&cfg, 4).unwrap();
    let d = cfg.dim;
    let m = cfg.patches_per_channel();
    // A black image with zero projection bias leaves pos + chan in every token.
    let black = MultiChannelImage::from_channels(16, 16, &vec![vec![0.0; 256]; 3]).unwrap();
    let chan_id = enc.tables.chan.unwrap();
    let saved_chan = store.get(chan_id).clone();
    store.set(chan_id, Tensor::zeros(saved_chan.shape())).unwrap();
    let seq = build_sequence(&black, &store, &enc.tables, &cfg).unwrap();
    let pos = store.get(enc.tables.pos).clone();
    for c in 0..3 {
        for j in 0..m {
            let row = 1 + c * m + j;
            assert_eq!(&seq.tokens.data()[row * d..(row + 1) * d], pos.row(j));
        }
    }
    store.set(chan_id, saved_chan.clone()).unwrap();
    store.set(enc.tables.pos, Tensor::zeros(pos.shape())).unwrap();
    let seq = build_sequence(&black, &store, &enc.tables, &cfg).unwrap();
    for c in 0..3 {
        for j in 0..m {
            let row = 1 + c * m + j;
            assert_eq!(&seq.tokens.data()[row * d..(row + 1) * d], saved_chan.row(c));
        }
    }
}

#[test]
fn channel_permutation_with_table_rows_is_invisible() {
    let cfg = small(16, 2, 4, 4);
    let (enc, store) = ChadaEncoder::with_seed::<f32>(&cfg, 5).unwrap();
    let img = image(4, 16, 6);
    let base = enc.encode(&store, &img).unwrap().0;
    let perm = [2, 0, 3, 1];
    let moved = img.select_channels(&perm).unwrap();
    let chan_id = enc.tables.chan.unwrap();
    let table = store.get(chan_id).clone();
    let rows: Vec<f32> = perm.iter().flat_map(|&p| table.row(p).to_vec()).collect();
    let mut permuted = store.clone();
    permuted.set(chan_id, Tensor::new(table.shape().to_vec(), rows).unwrap()).unwrap();
    let out = enc.encode(&permuted, &moved).unwrap().0;
    for (a, b) in base.iter().zip(&out) {
        assert!((a - b).abs() < 1e-5);
    }
    // Without the table permutation the channels are told apart.
    let differs = enc.encode(&store, &moved).unwrap().0;
    assert!(base.iter().zip(&differs).any(|(a, b)| (a - b).abs() > 1e-5));
}

#[test]
fn attention_rows_are_distributions_over_real_keys() {
    let cfg = small(16, 2, 4, 4);
    let (enc, store) = ChadaEncoder::with_seed::<f32>(&cfg, 7).unwrap();
    let maps = enc.attention_maps(&store, &image(2, 16, 8), 1).unwrap();
    assert_eq!(maps.real.len(), 1 + 2 * cfg.patches_per_channel());
    for h in 0..maps.heads {
        let dense = maps.dense(h);
        let t = maps.seq_len;
        for q in 0..t {
            let row = &dense.data()[q * t..(q + 1) * t];
            let s: f32 = row.iter().sum();
            if maps.real.contains(&q) {
                assert!((s - 1.0).abs() < 1e-5);
            } else {
                assert_eq!(s, 0.0);
            }
            for k in (0..t).filter(|k| !maps.real.contains(k)) {
                assert_eq!(row[k], 0.0);
            }
        }
        let heat = maps.cls_heatmaps(h);
        assert_eq!(heat.len(), 2);
        assert_eq!(heat[0].len(), 4);
    }
    assert!(enc.attention_maps(&store, &image(2, 16, 8), 2).is_err());
}

#[test]
fn patch_matrix_rows_follow_channel_then_raster_order() {
    let img = image(2, 16, 9);
    let pm = patch_matrix::<f32>(&img, 8).unwrap();
    assert_eq!(pm.shape(), &[8, 64]);
    // Channel 1, patch (row 1, col 0): pixel (8, 0).
    assert_eq!(pm.row(6)[0], img.channel(1)[8 * 16]);
    assert_eq!(pm.row(1)[9], img.channel(0)[16 + 8 + 1]);
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

fn naive_conv(x: &[f64], c: usize, side: usize, w: &[f64], b: &[f64], o: usize) -> (Vec<f64>, usize) {
    let out_side = (side + 2 - 3) / 2 + 1;
    let mut out = vec![0.0; o * out_side * out_side];
    for oc in 0..o {
        for oy in 0..out_side {
            for ox in 0..out_side {
                let mut acc = b[oc];
                for ic in 0..c {
                    for ky in 0..3 {
                        for kx in 0..3 {
                            let (y, xx) = ((oy * 2 + ky) as isize - 1, (ox * 2 + kx) as isize - 1);
                            if y >= 0 && xx >= 0 && (y as usize) < side && (xx as usize) < side {
                                acc += w[((oc * c + ic) * 3 + ky) * 3 + kx] * x[(ic * side + y as usize) * side + xx as usize];
                            }
                        }
                    }
                }
                out[(oc * out_side + oy) * out_side + ox] = acc;
            }
        }
    }
    (out, out_side)
}

#[test]
fn token_learner_matches_loop_convolutions() {
    let cfg = EncoderConfig {
        dim: 12,
        depth: 1,
        heads: 2,
        image_size: 32,
        patch_size: 16,
        max_channels: 3,
        ..Default::default()
    };
    let (ic, mut store) = InterchannelEncoder::with_seed::<f64>(&cfg, 8).unwrap();
    let mut rng = stream(9, &[]);
    for conv in &ic.token_learner.convs {
        let shape = store.get(conv.bias).shape().to_vec();
        let vals = (0..shape[0]).map(|_| rng.gen_range(-0.1..0.1)).collect();
        store.set(conv.bias, Tensor::new(shape, vals).unwrap()).unwrap();
    }
    let img = image(1, 32, 10);
    let got = ic.token_learner.token_learn(&store, img.channel(0), 32).unwrap();

    let mut x: Vec<f64> = img.channel(0).iter().map(|&v| v as f64).collect();
    let (mut c, mut side) = (1, 32);
    for (i, conv) in ic.token_learner.convs.iter().enumerate() {
        let w = store.get(conv.weight);
        let o = w.shape()[0];
        let (y, s) = naive_conv(&x, c, side, w.data(), store.get(conv.bias).data(), o);
        x = if i + 1 < ic.token_learner.convs.len() { y.iter().map(|&v| gelu(v)).collect() } else { y };
        c = o;
        side = s;
    }
    assert_eq!(side, 1);
    assert_eq!(got.len(), 12);
    for (a, b) in got.iter().zip(&x) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn backbone_dispatch_and_layout_binding() {
    let cfg = small(8, 1, 2, 3);
    for arch in [Arch::Chada, Arch::OneChannel, Arch::Interchannel] {
        let mut store = ParamStore::<f32>::new();
        let mut rng: ChaCha8Rng = stream(0, &[]);
        let bb = Backbone::init(arch, &cfg, &mut chada_core::autodiff::ParamInit::new(&mut store, &mut rng)).unwrap();
        let e = bb.encode(&store, &image(3, 16, 11)).unwrap();
        assert_eq!(e.width(), bb.output_width(3));
    }
    let (_, store) = ChadaEncoder::with_seed::<f32>(&cfg, 1).unwrap();
    assert!(ChadaEncoder::bind(&cfg, &store).is_ok());
    assert!(ChadaEncoder::bind(&small(16, 1, 2, 3), &store).is_err());
}
