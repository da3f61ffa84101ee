mod common;

use common::naive::{naive_forward, random_features, tiny, zero_final_projections};
use gridsep::model::{
    attention_module_with_maps, count_params, embed_inputs, estimate_macs, forward_features, intra_frame_module,
    intra_frame_module_traced, output_head, subband_module, subband_module_traced, weight_shapes, AttentionWeights,
    ModelConfig, SequenceWeights, UnfoldOrder, WeightStore,
};

#[test]
fn forward_matches_naive_reimplementation() {
    for seed in 0..20u64 {
        let cfg = tiny(seed);
        let store = WeightStore::synthetic(&cfg, 1000 + seed);
        let features = random_features(&cfg, 6, seed);
        let fast = forward_features(&features, &cfg, &store).unwrap();
        let slow = naive_forward(&features, &cfg, &store);
        let mut err = 0.0f64;
        for ((c, a, b), v) in fast.indexed_iter() {
            err = err.max((v - slow[c][a][b]).abs());
        }
        assert!(err <= 1e-6, "seed {seed}: max abs difference {err:e}");
    }
}

#[test]
fn zeroed_projections_give_exact_identity() {
    for seed in 0..10u64 {
        let cfg = tiny(seed);
        let mut store = WeightStore::synthetic(&cfg, 77 + seed);
        zero_final_projections(&mut store, &cfg);
        let features = random_features(&cfg, 5 + seed as usize % 3, 500 + seed);
        let x = embed_inputs(&features, &cfg, &store).unwrap();
        for b in 0..cfg.blocks {
            let intra = SequenceWeights::load(&store, &cfg, &format!("block{b}.intra")).unwrap();
            let sub = SequenceWeights::load(&store, &cfg, &format!("block{b}.subband")).unwrap();
            let att = AttentionWeights::load(&store, &cfg, b).unwrap();
            assert_eq!(intra_frame_module(&x, &cfg, &intra).unwrap(), x);
            assert_eq!(subband_module(&x, &cfg, &sub).unwrap(), x);
            assert_eq!(attention_module_with_maps(&x, &cfg, &att).unwrap().0, x);
        }
        let full = forward_features(&features, &cfg, &store).unwrap();
        assert_eq!(full, output_head(&x, &cfg, &store).unwrap());
    }
}

#[test]
fn count_equals_enumerated_tensors() {
    for seed in 0..20u64 {
        let cfg = tiny(seed);
        let listed: usize = weight_shapes(&cfg)
            .iter()
            .map(|(_, s)| s.iter().product::<usize>())
            .sum();
        assert_eq!(count_params(&cfg), listed);
        assert_eq!(WeightStore::synthetic(&cfg, seed).scalar_count(), listed);
    }
}

#[test]
fn ln_before_unfold_never_costs_more() {
    for (d, i) in [(8, 1), (16, 4), (48, 4), (64, 8)] {
        let mut cfg = tiny(0);
        cfg.emb_dim = d;
        cfg.kernel = i;
        cfg.stride = 1;
        cfg.unfold_order = UnfoldOrder::LnUnfold;
        let a = count_params(&cfg);
        cfg.unfold_order = UnfoldOrder::UnfoldLn;
        assert!(a <= count_params(&cfg));
    }
}

#[test]
fn attention_maps_are_stochastic() {
    let cfg = tiny(2);
    let store = WeightStore::synthetic(&cfg, 3);
    let x = embed_inputs(&random_features(&cfg, 7, 4), &cfg, &store).unwrap();
    let att = AttentionWeights::load(&store, &cfg, 0).unwrap();
    let (_, maps) = attention_module_with_maps(&x, &cfg, &att).unwrap();
    assert_eq!(maps.len(), cfg.heads);
    for m in &maps {
        assert_eq!(m.dim(), (7, 7));
        for row in m.rows() {
            assert!(row.iter().all(|&p| p > 0.0));
            assert!((row.sum() - 1.0).abs() < 1e-12);
        }
    }
    let one = embed_inputs(&random_features(&cfg, 1, 5), &cfg, &store).unwrap();
    let (_, maps) = attention_module_with_maps(&one, &cfg, &att).unwrap();
    for m in maps {
        assert_eq!(m.dim(), (1, 1));
        assert_eq!(m[(0, 0)], 1.0);
    }
}

#[test]
fn forward_is_deterministic() {
    let cfg = tiny(5);
    let store = WeightStore::synthetic(&cfg, 9);
    let features = random_features(&cfg, 6, 10);
    let a = forward_features(&features, &cfg, &store).unwrap();
    let b = forward_features(&features, &cfg, &store).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.dim(), (2 * cfg.sources, 6, cfg.freqs));
}

fn table_config(d: usize, i: usize, j: usize, h: usize) -> ModelConfig {
    ModelConfig {
        emb_dim: d,
        blocks: 6,
        kernel: i,
        stride: j,
        hidden: h,
        heads: 4,
        qk_channels: 4,
        sources: 2,
        mics: 1,
        freqs: 129,
        unfold_order: UnfoldOrder::LnUnfold,
        inputs: Default::default(),
    }
}

#[test]
fn mac_estimate_scales_with_frames() {
    let cfg = table_config(48, 4, 1, 192);
    let a = estimate_macs(&cfg, 500);
    let b = estimate_macs(&cfg, 1000);
    assert_eq!(b.attention_scores, 4 * a.attention_scores);
    assert_eq!(b.attention_values, 4 * a.attention_values);
    assert_eq!(b.intra, 2 * a.intra);
    assert_eq!(b.embed, 2 * a.embed);
    let ratio = b.subband as f64 / a.subband as f64;
    assert!((ratio - 2.0).abs() < 0.01);
    // a 4 s segment at 8 kHz with 8 ms hop, in GMAC per second of audio
    let per_second = estimate_macs(&cfg, 500).total() as f64 / 4.0 / 1e9;
    assert!((per_second - 131.1).abs() < 0.3 * 131.1, "{per_second}");
}

#[test]
fn sequence_intermediates_have_documented_shapes() {
    for (kernel, stride) in [(4, 1), (3, 2), (4, 4)] {
        let mut cfg = tiny(0);
        cfg.kernel = kernel;
        cfg.stride = stride;
        let store = WeightStore::synthetic(&cfg, 1);
        let frames = 7;
        let x = embed_inputs(&random_features(&cfg, frames, 2), &cfg, &store).unwrap();
        let w = SequenceWeights::load(&store, &cfg, "block0.intra").unwrap();
        let (_, s) = intra_frame_module_traced(&x, &cfg, &w).unwrap();
        let padded = |n: usize| {
            if n <= kernel {
                kernel
            } else {
                (n - kernel).div_ceil(stride) * stride + kernel
            }
        };
        let positions = (padded(cfg.freqs) - kernel) / stride + 1;
        assert_eq!(s.unfolded, (kernel * cfg.emb_dim, frames, positions));
        assert_eq!(s.hidden, (2 * cfg.hidden, frames, positions));
        assert_eq!(s.deconv, (cfg.emb_dim, frames, padded(cfg.freqs)));
        let w = SequenceWeights::load(&store, &cfg, "block0.subband").unwrap();
        let (_, s) = subband_module_traced(&x, &cfg, &w).unwrap();
        assert_eq!(
            s.unfolded,
            (kernel * cfg.emb_dim, cfg.freqs, (padded(frames) - kernel) / stride + 1)
        );
        assert_eq!(s.deconv, (cfg.emb_dim, cfg.freqs, padded(frames)));
    }
}

#[test]
fn microphone_count_only_changes_embedding_input() {
    let mut one = tiny(0);
    one.mics = 1;
    let mut four = one;
    four.mics = 4;
    let diff: Vec<_> = weight_shapes(&one)
        .into_iter()
        .zip(weight_shapes(&four))
        .filter(|(a, b)| a != b)
        .collect();
    assert_eq!(diff.len(), 1);
    assert_eq!(diff[0].0 .0, "embed.mixture.conv.weight");
    assert_eq!(diff[0].1 .1, vec![8, 8, 3, 3]);
}
