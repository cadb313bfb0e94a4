//! Model contracts: fusion arithmetic, convolution stack oracles, score
//! head behaviour, mask preservation, and the max-of-max matching score.

use std::sync::Arc;

use approx::assert_relative_eq;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use wstan_core::autodiff::{grad_check_params, Activation, Mask};
use wstan_core::model::{matching_score, MapBackend, ModelConfig, WstanModel};
use wstan_core::moment::{upper_triangle_mask, ClipFeatures};
use wstan_core::{ParamSet, Real, Tape};

fn tiny_config(n: usize) -> ModelConfig {
    ModelConfig {
        n,
        d_s: 8,
        d_v: 4,
        d_f: 6,
        tan_layers: 2,
        tan_kernel: 3,
        encoder_layers: 1,
        map_backend: MapBackend::Stackconv,
        map_activation: Activation::Tanh,
        tan_activation: Activation::Tanh,
        cb_enabled: true,
    }
}

fn build_model(cfg: ModelConfig, seed: u64) -> (WstanModel<Real>, ParamSet) {
    let mut params = ParamSet::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let model = WstanModel::init(cfg, 10, &mut params, &mut rng).unwrap();
    (model, params)
}

fn rand_clips(n: usize, dim: usize, seed: u64) -> ClipFeatures<Real> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values = (0..n * dim).map(|_| rng.random_range(-1.0..1.0)).collect();
    ClipFeatures::from_values(n, dim, values).unwrap()
}

// ── fusion ──

#[test]
fn fuse_matches_scalar_hand_arithmetic() {
    // One-cell grid with all widths 1: (2 * 5) ⊙ (3 * 7) = 210.
    let cfg = ModelConfig {
        n: 1,
        d_s: 2,
        d_v: 1,
        d_f: 1,
        tan_layers: 1,
        tan_kernel: 1,
        encoder_layers: 1,
        map_backend: MapBackend::Pool,
        map_activation: Activation::Identity,
        tan_activation: Activation::Identity,
        cb_enabled: false,
    };
    let (model, mut params) = build_model(cfg, 1);
    let ws = params.id("fuse.w_s").unwrap();
    params.get_mut(ws).values_mut().copy_from_slice(&[2.0, 0.0]);
    let wv = params.id("fuse.w_v").unwrap();
    params.get_mut(wv).values_mut().copy_from_slice(&[3.0]);

    let mut tape = Tape::new();
    let h = tape.input(&[5.0, 0.0], &[2]).unwrap();
    let map = tape.input(&[7.0], &[1, 1]).unwrap();
    let fused = model.fuse(&mut tape, &params, h, map).unwrap();
    assert_eq!(tape.values(fused), &[210.0]);
}

#[test]
fn fuse_with_zero_sentence_vector_is_all_zero() {
    let cfg = tiny_config(4);
    let (model, params) = build_model(cfg, 2);
    let clips = rand_clips(4, 4, 3);
    let mut tape = Tape::new();
    let map = model.moment_map(&mut tape, &params, &clips).unwrap();
    let h = tape.zeros_input(8).unwrap();
    let fused = model.fuse(&mut tape, &params, h, map).unwrap();
    assert!(tape.values(fused).iter().all(|v| *v == 0.0));
    assert_eq!(tape.numel(fused), 4 * 4 * 6);
}

#[test]
fn fuse_rejects_mismatched_sentence_width() {
    let cfg = tiny_config(4);
    let (model, params) = build_model(cfg, 4);
    let mut tape = Tape::new();
    let h = tape.zeros_input(5).unwrap();
    let map = tape.zeros_input(4 * 4 * 4).unwrap();
    let err = model.fuse(&mut tape, &params, h, map).unwrap_err().to_string();
    assert!(err.contains("configuration"), "{err}");
}

// ── convolution stack ──

#[test]
fn tan_identity_kernel_preserves_valid_cells() {
    let n = 4;
    let d_f = 3;
    let cfg = ModelConfig {
        n,
        d_s: 4,
        d_v: 2,
        d_f,
        tan_layers: 1,
        tan_kernel: 1,
        encoder_layers: 1,
        map_backend: MapBackend::Pool,
        map_activation: Activation::Identity,
        tan_activation: Activation::Identity,
        cb_enabled: false,
    };
    let (model, mut params) = build_model(cfg, 5);
    // 1x1 identity kernel: out channel o copies in channel o.
    let kid = params.id("tan.l0.kernel").unwrap();
    let mut ident = vec![0.0; d_f * d_f];
    for o in 0..d_f {
        ident[o * d_f + o] = 1.0;
    }
    params.get_mut(kid).values_mut().copy_from_slice(&ident);

    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mask = upper_triangle_mask(n);
    let mut cells = vec![0.0; n * n * d_f];
    for c in 0..n * n {
        if mask[c] {
            for ch in 0..d_f {
                cells[c * d_f + ch] = rng.random_range(-1.0..1.0);
            }
        }
    }
    let mut tape = Tape::new();
    let fused = tape.input(&cells, &[n * n, d_f]).unwrap();
    let out = model.tan_forward(&mut tape, &params, fused).unwrap();
    assert_eq!(tape.values(out), cells.as_slice());
}

#[test]
fn tan_zero_input_stays_zero() {
    let cfg = tiny_config(5);
    let (model, params) = build_model(cfg, 7);
    let mut tape = Tape::new();
    let fused = tape.zeros_input(5 * 5 * 6).unwrap();
    let out = model.tan_forward(&mut tape, &params, fused).unwrap();
    assert!(tape.values(out).iter().all(|v| *v == 0.0));
}

#[test]
fn tan_two_layers_match_brute_force_two_pass() {
    // Independent two-pass oracle with masking and the activation between
    // layers, using the same kernels the model holds.
    let n = 3;
    let d_f = 2;
    let cfg = ModelConfig {
        n,
        d_s: 4,
        d_v: 2,
        d_f,
        tan_layers: 2,
        tan_kernel: 3,
        encoder_layers: 1,
        map_backend: MapBackend::Pool,
        map_activation: Activation::Identity,
        tan_activation: Activation::Tanh,
        cb_enabled: false,
    };
    let (model, params) = build_model(cfg, 8);
    let k1 = params.get(params.id("tan.l0.kernel").unwrap()).values().to_vec();
    let k2 = params.get(params.id("tan.l1.kernel").unwrap()).values().to_vec();
    let mask = upper_triangle_mask(n);

    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut input = vec![0.0; n * n * d_f];
    for c in 0..n * n {
        if mask[c] {
            for ch in 0..d_f {
                input[c * d_f + ch] = rng.random_range(-1.0..1.0);
            }
        }
    }

    let conv = |x: &[f64], ker: &[f64]| -> Vec<f64> {
        let k = 3;
        let pad = 1;
        let mut out = vec![0.0; n * n * d_f];
        for i in 0..n {
            for j in 0..n {
                if !mask[i * n + j] {
                    continue;
                }
                for o in 0..d_f {
                    let mut acc = 0.0;
                    for di in 0..k {
                        for dj in 0..k {
                            let ii = i as isize + di as isize - pad;
                            let jj = j as isize + dj as isize - pad;
                            if ii < 0 || jj < 0 || ii >= n as isize || jj >= n as isize {
                                continue;
                            }
                            let cell = ii as usize * n + jj as usize;
                            if !mask[cell] {
                                continue;
                            }
                            for c in 0..d_f {
                                acc += x[cell * d_f + c] * ker[((di * k + dj) * d_f + c) * d_f + o];
                            }
                        }
                    }
                    out[(i * n + j) * d_f + o] = acc;
                }
            }
        }
        out
    };
    let mid: Vec<f64> = conv(&input, &k1)
        .iter()
        .enumerate()
        .map(|(idx, v)| if mask[idx / d_f] { v.tanh() } else { 0.0 })
        .collect();
    let want = conv(&mid, &k2);

    let mut tape = Tape::new();
    let fused = tape.input(&input, &[n * n, d_f]).unwrap();
    let out = model.tan_forward(&mut tape, &params, fused).unwrap();
    for (got, want) in tape.values(out).iter().zip(&want) {
        assert_relative_eq!(got, want, max_relative = 1e-12, epsilon = 1e-12);
    }
}

// ── score heads ──

#[test]
fn score_head_of_zero_context_is_half_on_valid_cells() {
    let cfg = tiny_config(4);
    let (model, params) = build_model(cfg, 10);
    let mask = upper_triangle_mask(4);
    let mut tape = Tape::new();
    let ctx = tape.zeros_input(4 * 4 * 6).unwrap();
    let map = model.score_head(&mut tape, &params, ctx).unwrap();
    for (cell, valid) in mask.iter().enumerate() {
        let v = tape.values(map)[cell];
        if *valid {
            assert_eq!(v, 0.5, "cell {cell}"); // zero weights never occur, but b=0 and ctx=0 give sigmoid(0)
        } else {
            assert_eq!(v, 0.0, "cell {cell}");
        }
    }
}

#[test]
fn score_head_known_preactivation() {
    // A single-cell grid with d_f = 1, w = 1, b = 0: sigmoid(1.0986) ≈ 0.75.
    let cfg = ModelConfig {
        n: 1,
        d_s: 2,
        d_v: 1,
        d_f: 1,
        tan_layers: 1,
        tan_kernel: 1,
        encoder_layers: 1,
        map_backend: MapBackend::Pool,
        map_activation: Activation::Identity,
        tan_activation: Activation::Identity,
        cb_enabled: false,
    };
    let (model, mut params) = build_model(cfg, 11);
    let wid = params.id("head.w").unwrap();
    params.get_mut(wid).values_mut()[0] = 1.0;
    let mut tape = Tape::new();
    let ctx = tape.input(&[1.0986], &[1, 1]).unwrap();
    let map = model.score_head(&mut tape, &params, ctx).unwrap();
    assert_relative_eq!(tape.values(map)[0], 0.75, epsilon = 1e-4);
}

#[test]
fn cb_head_same_params_same_map_different_params_differ() {
    let cfg = tiny_config(4);
    let (model, mut params) = build_model(cfg, 12);
    let clips = rand_clips(4, 4, 13);
    let mut tape = Tape::new();
    let map = model.moment_map(&mut tape, &params, &clips).unwrap();
    let h = tape.input(&vec![0.3; 8], &[8]).unwrap();
    let fused = model.fuse(&mut tape, &params, h, map).unwrap();
    let ctx = model.tan_forward(&mut tape, &params, fused).unwrap();
    let main = model.score_head(&mut tape, &params, ctx).unwrap();
    let cb = model.cb_score_head(&mut tape, &params, ctx).unwrap();
    assert_ne!(tape.values(main), tape.values(cb));

    // Copy the main head into the CB head: identical maps.
    let (hw, hb) = (params.id("head.w").unwrap(), params.id("head.b").unwrap());
    let (cw, cb_b) = (params.id("cb_head.w").unwrap(), params.id("cb_head.b").unwrap());
    let w = params.get(hw).values().to_vec();
    let b = params.get(hb).values().to_vec();
    params.get_mut(cw).values_mut().copy_from_slice(&w);
    params.get_mut(cb_b).values_mut().copy_from_slice(&b);
    let mut tape2 = Tape::new();
    let map2 = model.moment_map(&mut tape2, &params, &clips).unwrap();
    let h2 = tape2.input(&vec![0.3; 8], &[8]).unwrap();
    let fused2 = model.fuse(&mut tape2, &params, h2, map2).unwrap();
    let ctx2 = model.tan_forward(&mut tape2, &params, fused2).unwrap();
    let main2 = model.score_head(&mut tape2, &params, ctx2).unwrap();
    let cb2 = model.cb_score_head(&mut tape2, &params, ctx2).unwrap();
    assert_eq!(tape2.values(main2), tape2.values(cb2));
}

// ── mask preservation across random models ──

#[test]
fn score_maps_zero_the_lower_triangle_for_random_models() {
    for trial in 0..50 {
        let n = if trial % 2 == 0 { 4 } else { 16 };
        let mut cfg = tiny_config(n);
        cfg.map_backend = if trial % 3 == 0 { MapBackend::Pool } else { MapBackend::Stackconv };
        cfg.tan_activation = match trial % 4 {
            0 => Activation::Relu,
            1 => Activation::Tanh,
            2 => Activation::Sigmoid,
            _ => Activation::Identity,
        };
        let (model, params) = build_model(cfg, 100 + trial as u64);
        let clips = rand_clips(n, 4, 200 + trial as u64);
        let mut tape = Tape::new();
        let out = model
            .forward(&mut tape, &params, &clips, &[vec![2, 3], vec![4]])
            .unwrap();
        let mask = upper_triangle_mask(n);
        let mut all_maps = out.match_maps.clone();
        all_maps.extend(out.cb_maps.clone().unwrap());
        for m in all_maps {
            let vals = tape.values(m);
            for (cell, valid) in mask.iter().enumerate() {
                if !valid {
                    assert_eq!(vals[cell], 0.0, "trial {trial} cell {cell}");
                } else {
                    assert!(vals[cell] > 0.0 && vals[cell] < 1.0, "trial {trial} cell {cell}");
                }
            }
        }
    }
}

// ── matching score ──

fn map_input(tape: &mut Tape, n: usize, values: &[Real]) -> wstan_core::autodiff::Var {
    tape.input(values, &[n * n]).unwrap()
}

#[test]
fn matching_score_single_sentence() {
    let n = 2;
    let mask = upper_triangle_mask(n);
    let mut tape = Tape::new();
    let m = map_input(&mut tape, n, &[0.7, 0.2, 0.9, 0.1]); // (1,0) invalid
    let score = matching_score(&mut tape, &[m], &mask).unwrap();
    assert_eq!(tape.values(score.p), &[0.7]);
    assert_eq!((score.arg_k, score.arg_i, score.arg_j), (0, 0, 0));
}

#[test]
fn matching_score_takes_max_over_sentences() {
    let n = 2;
    let mask = upper_triangle_mask(n);
    let mut tape = Tape::new();
    let a = map_input(&mut tape, n, &[0.3, 0.1, 0.0, 0.2]);
    let b = map_input(&mut tape, n, &[0.1, 0.9, 0.0, 0.4]);
    let score = matching_score(&mut tape, &[a, b], &mask).unwrap();
    assert_eq!(tape.values(score.p), &[0.9]);
    assert_eq!((score.arg_k, score.arg_i, score.arg_j), (1, 0, 1));
}

#[test]
fn matching_score_equals_flat_scan_for_random_maps() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for trial in 0..100 {
        let n = rng.random_range(2..=8);
        let n_p = rng.random_range(1..=4);
        let mask = upper_triangle_mask(n);
        let mut tape = Tape::new();
        let mut maps = Vec::new();
        let mut raw = Vec::new();
        for _ in 0..n_p {
            let mut v = vec![0.0; n * n];
            for (cell, valid) in mask.iter().enumerate() {
                if *valid {
                    v[cell] = rng.random_range(0.0..1.0);
                }
            }
            maps.push(map_input(&mut tape, n, &v));
            raw.push(v);
        }
        // Flat oracle: scan all (k, i, j) in order, strict improvement.
        let mut best = f64::NEG_INFINITY;
        let mut best_at = (0usize, 0usize, 0usize);
        for (k, v) in raw.iter().enumerate() {
            for i in 0..n {
                for j in i..n {
                    if v[i * n + j] > best {
                        best = v[i * n + j];
                        best_at = (k, i, j);
                    }
                }
            }
        }
        let score = matching_score(&mut tape, &maps, &mask).unwrap();
        assert_eq!(tape.values(score.p)[0], best, "trial {trial}");
        assert_eq!((score.arg_k, score.arg_i, score.arg_j), best_at, "trial {trial}");
    }
}

#[test]
fn matching_score_rejects_empty_list() {
    let mask = upper_triangle_mask(2);
    let mut tape = Tape::new();
    assert!(matching_score(&mut tape, &[], &mask).is_err());
}

#[test]
fn permuting_sentences_permutes_only_the_arg_index() {
    let cfg = tiny_config(4);
    let (model, params) = build_model(cfg, 14);
    let clips = rand_clips(4, 4, 15);
    let sentences = [vec![2, 3], vec![4, 5], vec![6]];
    let run = |order: &[usize]| {
        let mut tape = Tape::new();
        let sents: Vec<Vec<usize>> = order.iter().map(|&i| sentences[i].clone()).collect();
        let out = model.forward(&mut tape, &params, &clips, &sents).unwrap();
        let score = matching_score(&mut tape, &out.match_maps, model.mask()).unwrap();
        (tape.values(score.p)[0], score.arg_k)
    };
    let (p0, k0) = run(&[0, 1, 2]);
    let (p1, k1) = run(&[2, 1, 0]);
    assert_eq!(p0, p1);
    assert_eq!(k0, 2 - k1);
}

// ── gradients through the whole score path ──

#[test]
fn matching_score_gradient_passes_central_differences() {
    // Tanh activations avoid kinks; the argmax cell is strict at init.
    let mut cfg = tiny_config(4);
    cfg.d_s = 4;
    cfg.d_v = 2;
    cfg.d_f = 3;
    cfg.cb_enabled = false;
    let (model, params) = build_model(cfg, 16);
    let clips = rand_clips(4, 2, 17);
    let report = grad_check_params("matching_score", &params, 1e-5, |tape, ps| {
        let out = model.forward(tape, ps, &clips, &[vec![2, 3], vec![4]])?;
        let score = matching_score(tape, &out.match_maps, model.mask())?;
        Ok(score.p)
    })
    .unwrap();
    assert!(report.max_rel_err <= 1e-4, "max rel err {}", report.max_rel_err);
}

// ── monotone aggregation property ──

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn prop_raising_one_valid_entry_never_lowers_p(
        seed in 0u64..1000,
        bump in 0.0f64..0.5,
    ) {
        let n = 4;
        let mask: Mask = upper_triangle_mask(n);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n_p = rng.random_range(1..=3);
        let mut raw: Vec<Vec<f64>> = Vec::new();
        for _ in 0..n_p {
            let mut v = vec![0.0; n * n];
            for (cell, valid) in mask.iter().enumerate() {
                if *valid {
                    v[cell] = rng.random_range(0.0..0.5);
                }
            }
            raw.push(v);
        }
        let k = rng.random_range(0..n_p);
        let valid_cells: Vec<usize> = (0..n * n).filter(|c| mask[*c]).collect();
        let cell = valid_cells[rng.random_range(0..valid_cells.len())];

        let p_of = |raw: &[Vec<f64>]| {
            let mut tape = Tape::new();
            let maps: Vec<_> = raw.iter().map(|v| tape.input(v, &[n * n]).unwrap()).collect();
            let score = matching_score(&mut tape, &maps, &mask).unwrap();
            tape.values(score.p)[0]
        };
        let before = p_of(&raw);
        raw[k][cell] += bump;
        let after = p_of(&raw);
        prop_assert!(after >= before);
    }
}

// ── configuration validation ──

#[test]
fn config_rejects_even_kernel_and_zero_layers() {
    let mut cfg = tiny_config(4);
    cfg.tan_kernel = 2;
    assert!(cfg.validate().is_err());
    let mut cfg = tiny_config(4);
    cfg.tan_layers = 0;
    assert!(cfg.validate().is_err());
    assert!(ModelConfig::default().validate().is_ok());
}

#[test]
fn backend_names_round_trip() {
    for b in [MapBackend::Pool, MapBackend::Stackconv] {
        assert_eq!(MapBackend::parse(b.name()).unwrap(), b);
    }
    assert!(MapBackend::parse("dense").is_err());
}

#[test]
fn disabled_cb_branch_is_absent_and_errors_when_asked() {
    let mut cfg = tiny_config(4);
    cfg.cb_enabled = false;
    let (model, params) = build_model(cfg, 18);
    let clips = rand_clips(4, 4, 19);
    let mut tape = Tape::new();
    let out = model.forward(&mut tape, &params, &clips, &[vec![2]]).unwrap();
    assert!(out.cb_maps.is_none());
    let ctx = tape.zeros_input(4 * 4 * 6).unwrap();
    assert!(model.cb_score_head(&mut tape, &params, ctx).is_err());
}

#[test]
fn arc_mask_is_shared_not_copied() {
    let cfg = tiny_config(4);
    let (model, _) = build_model(cfg, 20);
    let m1 = Arc::clone(model.mask());
    assert_eq!(m1.len(), 16);
}
