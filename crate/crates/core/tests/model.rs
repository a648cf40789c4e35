use proptest::prelude::*;
use wbanet::gradcheck::max_relative_error;
use wbanet::model::*;
use wbanet::preclass::{Label, LabelMap, PatchBatch};
use wbanet::selftest::{miniature_config, model_gradient_error};
use wbanet::tensor::{Graph, Tensor};
use wbanet::Error;

fn rand(shape: &[usize], seed: u64) -> Tensor<f64> {
    Tensor::uniform(shape, -1.0, 1.0, seed).unwrap()
}

#[test]
fn embed_shapes_and_linearity() {
    let mut g = Graph::new();
    let w = g.input(&rand(&[2, 32], 1));
    let zero = g.input(&Tensor::zeros(&[8, 8, 2]).unwrap());
    let e = embed(&mut g, zero, w).unwrap();
    assert_eq!(g.shape(e), &[8, 8, 32]);
    assert!(g.value(e).data().iter().all(|&v| v == 0.0));
    let err = max_relative_error(&[rand(&[4, 4, 2], 2), rand(&[2, 8], 3)], |g, v| {
        let e = embed(g, v[0], v[1])?;
        let sq = g.mul(e, e)?;
        Ok(g.sum(sq))
    })
    .unwrap();
    assert!(err < 1e-4, "{err}");
}

#[test]
fn block_stacks_keep_shape() {
    for n in 1..=8 {
        let cfg = ModelConfig { patch_size: 4, embed_dim: 8, n_heads: 2, n_blocks: n, ..ModelConfig::default() };
        let p = WbaNetParams::<Tensor<f64>>::init(&cfg).unwrap();
        let mut g = Graph::new();
        let mut x = g.constant(rand(&[3, 4, 4, 8], n as u64));
        let bound = p.bind(&mut g);
        for b in &bound.blocks {
            x = block_forward(&mut g, x, b).unwrap();
            assert_eq!(g.shape(x), &[3, 4, 4, 8]);
        }
        assert!(g.value(x).is_finite());
    }
}

#[test]
fn zero_parameters_are_finite() {
    let cfg = miniature_config(0);
    let mut p = WbaNetParams::<Tensor<f64>>::init(&cfg).unwrap();
    for t in p.tensors_mut() {
        t.data_mut().iter_mut().for_each(|v| *v = 0.0);
    }
    let out = logits(&rand(&[2, 4, 4, 2], 1), &p).unwrap();
    assert_eq!(out.shape(), &[2, 2]);
    assert!(out.data().iter().all(|&v| v == 0.0));
}

#[test]
fn forward_shape_and_determinism() {
    let cfg = ModelConfig { seed: 4, ..ModelConfig::default() };
    let p = WbaNetParams::<Tensor<f64>>::init(&cfg).unwrap();
    let q = WbaNetParams::<Tensor<f64>>::init(&cfg).unwrap();
    assert_eq!(p, q);
    let x = rand(&[5, 8, 8, 2], 9);
    let a = logits(&x, &p).unwrap();
    assert_eq!(a.shape(), &[5, 2]);
    assert_eq!(a, logits(&x, &q).unwrap());
}

#[test]
fn end_to_end_gradient_matches_finite_differences() {
    for seed in 0..3 {
        let err = model_gradient_error(seed).unwrap();
        assert!(err < 1e-3, "seed {seed}: {err}");
    }
}

#[test]
fn argmax_ignores_common_offsets() {
    let l = rand(&[20, 2], 1);
    let shifted = l.map(|v| v + 3.5);
    assert_eq!(argmax_rows(&l), argmax_rows(&shifted));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn random_configs_stay_finite(
        half_patch in 1usize..4,
        quarter_dim in 1usize..4,
        heads_pow in 0u32..3,
        blocks in 1usize..4,
        seed in any::<u64>(),
    ) {
        let dim = 4 * quarter_dim;
        let heads = 2usize.pow(heads_pow);
        prop_assume!(dim % heads == 0);
        let cfg = ModelConfig { patch_size: 2 * half_patch, embed_dim: dim, n_heads: heads, n_blocks: blocks, seed, ..ModelConfig::default() };
        let p = WbaNetParams::<Tensor<f64>>::init(&cfg).unwrap();
        let x = Tensor::uniform(&[2, cfg.patch_size, cfg.patch_size, 2], -3.0, 3.0, seed).unwrap();
        let out = logits(&x, &p).unwrap();
        prop_assert_eq!(out.shape(), &[2, 2]);
        prop_assert!(out.is_finite());
    }
}

#[test]
fn config_validation() {
    let ok = ModelConfig::default();
    ok.validate().unwrap();
    for bad in [
        ModelConfig { patch_size: 7, ..ok.clone() },
        ModelConfig { embed_dim: 30, ..ok.clone() },
        ModelConfig { n_heads: 3, ..ok.clone() },
        ModelConfig { n_blocks: 0, ..ok.clone() },
        ModelConfig { n_blocks: 9, ..ok.clone() },
        ModelConfig { lr: -1.0, ..ok.clone() },
    ] {
        assert!(matches!(bad.validate(), Err(Error::Config(_))), "{bad:?}");
    }
    assert_eq!(ModelConfig::chao_lake().n_blocks, 5);
    assert_eq!(ModelConfig::sulzberger().n_blocks, 2);
    assert_eq!(ModelConfig::yellow_river().n_blocks, 4);
}

/// Patches of level +1 (changed) or −1 (unchanged) plus small noise.
fn toy_batch(n: usize, patch: usize) -> PatchBatch<f64> {
    let noise = Tensor::<f64>::uniform(&[n, patch, patch, 2], -0.2, 0.2, 77).unwrap();
    let per = patch * patch * 2;
    let labels: Vec<usize> = (0..n).map(|i| i % 2).collect();
    let data = noise
        .data()
        .iter()
        .enumerate()
        .map(|(k, v)| v + if labels[k / per] == 1 { 1.0 } else { -1.0 })
        .collect();
    PatchBatch {
        patches: Tensor::from_values(&[n, patch, patch, 2], data).unwrap(),
        labels,
        coords: (0..n).map(|i| (i, 0)).collect(),
        short: false,
    }
}

#[test]
fn separable_toy_set_is_learned_deterministically() {
    let cfg = ModelConfig { epochs: 50, batch_size: 8, seed: 5, ..miniature_config(5) };
    let batch = toy_batch(32, 4);
    let mut a = WbaNetParams::<Tensor<f64>>::init(&cfg).unwrap();
    let hist = fit(&batch, &mut a, &cfg).unwrap();
    assert_eq!(hist.loss.len(), 50);
    assert!(hist.accuracy.contains(&1.0));
    assert_eq!(*hist.accuracy.last().unwrap(), 1.0);
    let tail = hist.loss[45..].iter().sum::<f64>() / 5.0;
    assert!(tail <= hist.loss[0], "{tail} vs {}", hist.loss[0]);

    let mut b = WbaNetParams::<Tensor<f64>>::init(&cfg).unwrap();
    let again = fit(&batch, &mut b, &cfg).unwrap();
    assert_eq!(hist, again);
    for ((_, x), (_, y)) in a.named().into_iter().zip(b.named()) {
        assert!(x.data().iter().zip(y.data()).all(|(p, q)| p.to_bits() == q.to_bits()));
    }
}

fn small_pair() -> (Tensor<f64>, Tensor<f64>, LabelMap) {
    let (h, w) = (16, 16);
    let i1 = Tensor::uniform(&[h, w, 1], 5.0, 15.0, 1).unwrap();
    let mut i2 = Tensor::uniform(&[h, w, 1], 5.0, 15.0, 2).unwrap();
    let mut labels = vec![Label::Unchanged; h * w];
    for r in 4..10 {
        for c in 4..10 {
            i2.data_mut()[r * w + c] += 80.0;
            labels[r * w + c] = if (5..9).contains(&r) && (5..9).contains(&c) { Label::Changed } else { Label::Intermediate };
        }
    }
    (i1, i2, LabelMap::new(h, w, labels).unwrap())
}

#[test]
fn train_and_predict_cover_every_pixel() {
    let (i1, i2, labels) = small_pair();
    let cfg = ModelConfig { epochs: 3, n_per_class: 16, batch_size: 8, seed: 2, ..miniature_config(2) };
    let (params, hist) = train(&i1, &i2, &labels, &cfg).unwrap();
    assert_eq!(hist.loss.len(), 3);
    let map = predict_map(&i1, &i2, &labels, &params, &cfg).unwrap();
    assert_eq!(map.map.cells.len(), 256);
    for (i, &l) in labels.labels.iter().enumerate() {
        match l {
            Label::Changed => assert!(map.map.cells[i] && map.provenance[i] == Provenance::PseudoConfident),
            Label::Unchanged => assert!(!map.map.cells[i] && map.provenance[i] == Provenance::PseudoConfident),
            Label::Intermediate => assert_eq!(map.provenance[i], Provenance::Network),
        }
    }
    let again = predict_map(&i1, &i2, &labels, &params, &cfg).unwrap();
    assert_eq!(map, again);
    let (params2, hist2) = train(&i1, &i2, &labels, &cfg).unwrap();
    assert_eq!((params, hist), (params2, hist2));
}

#[test]
fn no_intermediate_pixels_keeps_pseudo_labels() {
    let (i1, i2, mut labels) = small_pair();
    for l in &mut labels.labels {
        if *l == Label::Intermediate {
            *l = Label::Unchanged;
        }
    }
    let cfg = miniature_config(1);
    let params = WbaNetParams::<Tensor<f64>>::init(&cfg).unwrap();
    let map = predict_map(&i1, &i2, &labels, &params, &cfg).unwrap();
    let expect: Vec<bool> = labels.labels.iter().map(|&l| l == Label::Changed).collect();
    assert_eq!(map.map.cells, expect);
    assert!(map.provenance.iter().all(|&p| p == Provenance::PseudoConfident));
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let cfg = ModelConfig { n_blocks: 5, seed: 8, ..ModelConfig::default() };
    let params = WbaNetParams::<Tensor<f64>>::init(&cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.wban");
    save_checkpoint(&path, &cfg, &params).unwrap();
    let (cfg2, loaded) = load_checkpoint::<f64>(&path).unwrap();
    assert_eq!(cfg2, cfg);
    let x = rand(&[4, 8, 8, 2], 3);
    let (a, b) = (logits(&x, &params).unwrap(), logits(&x, &loaded).unwrap());
    assert!(a.data().iter().zip(b.data()).all(|(p, q)| p.to_bits() == q.to_bits()));
    let bytes = std::fs::read(&path).unwrap();
    assert_eq!(&bytes[..4], MAGIC);
    assert_eq!(encode_checkpoint(&cfg2, &loaded).unwrap(), bytes);
}

#[test]
fn corrupt_checkpoints_are_format_errors() {
    let cfg = miniature_config(0);
    let params = WbaNetParams::<Tensor<f64>>::init(&cfg).unwrap();
    let bytes = encode_checkpoint(&cfg, &params).unwrap();
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(matches!(decode_checkpoint::<f64>(&bad), Err(Error::Format { offset: 0, .. })));
    assert!(matches!(decode_checkpoint::<f64>(&bytes[..bytes.len() - 3]), Err(Error::Format { .. })));
    let mut long = bytes.clone();
    long.push(0);
    assert!(matches!(decode_checkpoint::<f64>(&long), Err(Error::Format { .. })));
}

#[test]
fn threshold_fallback_resolves_intermediates() {
    use wbanet::preclass::DifferenceImage;
    let di = DifferenceImage { values: Tensor::from_values(&[1, 4, 1], vec![0.1, 0.4, 0.7, 0.9]).unwrap() };
    let labels = LabelMap::new(1, 4, vec![Label::Unchanged, Label::Intermediate, Label::Intermediate, Label::Changed]).unwrap();
    let map = threshold_map(&di, &labels).unwrap();
    // Threshold is (0.1 + 0.9) / 2.
    assert_eq!(map.map.cells, vec![false, false, true, true]);
    assert_eq!(map.provenance[1], Provenance::Threshold);
}

#[test]
fn single_precision_instantiation_runs() {
    let cfg = miniature_config(3);
    let p = WbaNetParams::<Tensor<f32>>::init(&cfg).unwrap();
    let x = Tensor::<f32>::uniform(&[2, 4, 4, 2], -1.0, 1.0, 1).unwrap();
    let out = logits(&x, &p).unwrap();
    assert!(out.is_finite());
    let p64 = WbaNetParams::<Tensor<f64>>::init(&cfg).unwrap();
    let out64 = logits(&x.cast::<f64>(), &p64).unwrap();
    for (a, b) in out.data().iter().zip(out64.data()) {
        assert!((*a as f64 - b).abs() < 1e-4);
    }
}
