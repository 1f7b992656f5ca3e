use super::testutil::*;
use super::*;
use crate::graph::Graph;
use crate::params::{Group, ParamStore, Session};
use crate::tensor::Tensor;

fn tensor_of(s: &Session, v: crate::graph::Var) -> Tensor {
    s.g.value(v).clone()
}

// ---- windows -----------------------------------------------------------------

#[test]
fn window_round_trip_and_counts() {
    let mut g = Graph::new();
    let x = g.constant(rand_tensor(&[1, 3, 64, 64], 1));
    for shift in [0, 4] {
        let ws = window_partition(&mut g, x, 8, shift).unwrap();
        assert_eq!(g.shape(ws.tokens), &[64, 64, 3]);
        let back = window_reverse(&mut g, &ws);
        assert_eq!(g.value(back), g.value(x));
    }

    let x8 = g.constant(rand_tensor(&[1, 2, 8, 8], 2));
    let ws = window_partition(&mut g, x8, 8, 0).unwrap();
    assert_eq!(g.shape(ws.tokens), &[1, 64, 2]);

    let x10 = g.constant(rand_tensor(&[2, 2, 10, 10], 3));
    let ws = window_partition(&mut g, x10, 8, 0).unwrap();
    assert_eq!(ws.layout.padded(), (16, 16));
    assert_eq!(g.shape(ws.tokens), &[8, 64, 2]);
    let back = window_reverse(&mut g, &ws);
    assert_eq!(g.value(back), g.value(x10));

    assert!(window_partition(&mut g, x10, 0, 0).is_err());
}

#[test]
fn window_tokens_are_channel_vectors() {
    let mut g = Graph::new();
    let t = rand_tensor(&[1, 2, 8, 8], 4);
    let x = g.constant(t.clone());
    let ws = window_partition(&mut g, x, 4, 0).unwrap();
    let tok = g.value(ws.tokens);
    // window 1 is the top-right 4x4 block; token 5 is its (1, 1) pixel
    for c in 0..2 {
        assert_eq!(tok.at(&[1, 5, c]), t.at(&[0, c, 1, 5]));
    }
}

// ---- attention ---------------------------------------------------------------

#[test]
fn msa_rows_sum_to_one_and_constant_values() {
    let mut store = ParamStore::new();
    let mut r = rng(5);
    let msa = Msa::new(
        &mut Scope::new(&mut store, &mut r, Group::Ddon),
        "msa",
        4,
        2,
        false,
    );
    let mut s = Session::frozen(&store);
    let x = s.g.constant(rand_tensor(&[3, 5, 4], 6).map(|v| 5.0 * v));
    let (_, attn) = msa.forward_with_attn(&mut s, x).unwrap();
    for row in s.g.value(attn).data().chunks(5) {
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
    }

    // identical tokens give identical keys and values, so every output row matches
    let row = rand_tensor(&[1, 1, 4], 7);
    let same = Tensor::from_vec(vec![1, 6, 4], row.data().repeat(6));
    let xs = s.g.constant(same);
    let out = msa.forward(&mut s, xs).unwrap();
    let o = s.g.value(out);
    for t in 1..6 {
        for c in 0..4 {
            assert!((o.at(&[0, t, c]) - o.at(&[0, 0, c])).abs() < 1e-12);
        }
    }
}

#[test]
fn msa_single_token_passes_value_through() {
    let mut store = ParamStore::new();
    let mut r = rng(8);
    let msa = Msa::new(
        &mut Scope::new(&mut store, &mut r, Group::Ddon),
        "msa",
        3,
        1,
        false,
    );
    let mut s = Session::frozen(&store);
    let x = s.g.constant(rand_tensor(&[1, 1, 3], 9));
    let out = msa.forward(&mut s, x).unwrap();
    let v = msa.stream.v.forward(&mut s, x);
    let want = msa.stream.proj.forward(&mut s, v);
    assert!(s.g.value(out).max_abs_diff(s.g.value(want)) < 1e-15);
}

#[test]
fn isa_degenerates_to_msa_with_silent_second_stream() {
    let mut store = ParamStore::new();
    let mut r = rng(10);
    let isa = Isa::new(
        &mut Scope::new(&mut store, &mut r, Group::Ddon),
        "isa",
        4,
        2,
        false,
    );
    let msa = Msa {
        stream: isa.s1.clone(),
        heads: 2,
    };
    let mut s = Session::frozen(&store);
    let x1 = s.g.constant(rand_tensor(&[2, 6, 4], 11));
    let x2 = s.g.constant(Tensor::zeros(vec![2, 6, 4]));
    let (o1, _) = isa.forward(&mut s, x1, x2).unwrap();
    let m = msa.forward(&mut s, x1).unwrap();
    assert!(s.g.value(o1).max_abs_diff(s.g.value(m)) < 1e-6);
}

#[test]
fn isa_swap_symmetry() {
    let mut store = ParamStore::new();
    let mut r = rng(12);
    let isa = Isa::new(
        &mut Scope::new(&mut store, &mut r, Group::Ddon),
        "isa",
        4,
        2,
        false,
    );
    let swapped = Isa {
        s1: isa.s2.clone(),
        s2: isa.s1.clone(),
        heads: 2,
    };
    let mut s = Session::frozen(&store);
    let x1 = s.g.constant(rand_tensor(&[1, 5, 4], 13));
    let x2 = s.g.constant(rand_tensor(&[1, 5, 4], 14));
    let (a1, a2) = isa.forward(&mut s, x1, x2).unwrap();
    let (b2, b1) = swapped.forward(&mut s, x2, x1).unwrap();
    assert!(s.g.value(a1).max_abs_diff(s.g.value(b1)) < 1e-12);
    assert!(s.g.value(a2).max_abs_diff(s.g.value(b2)) < 1e-12);
    let bad = s.g.constant(rand_tensor(&[1, 4, 4], 15));
    assert!(matches!(
        isa.forward(&mut s, x1, bad),
        Err(crate::Error::InvalidInput(_))
    ));
}

/// Dense oracle: 2 tokens, 2 channels, 1 head, hand-set weights.
#[test]
fn isa_matches_dense_oracle() {
    let mut store = ParamStore::new();
    let mut r = rng(16);
    let isa = Isa::new(
        &mut Scope::new(&mut store, &mut r, Group::Ddon),
        "isa",
        2,
        1,
        false,
    );
    let mats = [
        [0.5, -0.25, 0.75, 1.0],
        [1.0, 0.5, -0.5, 0.25],
        [0.25, 0.75, 1.0, -1.0],
        [-0.5, 0.5, 0.25, 0.125],
        [0.75, -1.0, 0.5, 0.5],
        [1.0, 0.0, 0.5, -0.75],
        [0.5, 0.5, -0.25, 1.0],
        [-0.125, 1.0, 0.75, 0.25],
    ];
    let linears = [
        &isa.s1.q,
        &isa.s1.k,
        &isa.s1.v,
        &isa.s1.proj,
        &isa.s2.q,
        &isa.s2.k,
        &isa.s2.v,
        &isa.s2.proj,
    ];
    for (lin, m) in linears.iter().zip(mats.iter()) {
        store.set(lin.w, Tensor::from_vec(vec![2, 2], m.to_vec()));
        store.set(lin.b, Tensor::from_vec(vec![2], vec![0.125, -0.25]));
    }
    let x1 = [[0.3, -0.7], [1.1, 0.4]];
    let x2 = [[-0.2, 0.9], [0.6, -0.5]];

    let lin = |x: &[[f64; 2]; 2], m: &[f64; 4]| -> [[f64; 2]; 2] {
        let mut o = [[0.0; 2]; 2];
        for t in 0..2 {
            for j in 0..2 {
                o[t][j] = x[t][0] * m[j] + x[t][1] * m[2 + j] + [0.125, -0.25][j];
            }
        }
        o
    };
    let q1 = lin(&x1, &mats[0]);
    let q2 = lin(&x2, &mats[4]);
    let mut q = [[0.0; 2]; 2];
    for t in 0..2 {
        for j in 0..2 {
            q[t][j] = q1[t][j] + q2[t][j];
        }
    }
    let dense = |k: [[f64; 2]; 2], v: [[f64; 2]; 2], proj: &[f64; 4]| {
        let mut out = [[0.0; 2]; 2];
        for t in 0..2 {
            let logits: Vec<f64> = (0..2)
                .map(|u| (q[t][0] * k[u][0] + q[t][1] * k[u][1]) / 2f64.sqrt())
                .collect();
            let z: f64 = logits.iter().map(|l| l.exp()).sum();
            let p: Vec<f64> = logits.iter().map(|l| l.exp() / z).collect();
            for j in 0..2 {
                out[t][j] = p[0] * v[0][j] + p[1] * v[1][j];
            }
        }
        lin(&out, proj)
    };
    let want1 = dense(lin(&x1, &mats[1]), lin(&x1, &mats[2]), &mats[3]);
    let want2 = dense(lin(&x2, &mats[5]), lin(&x2, &mats[6]), &mats[7]);

    let mut s = Session::frozen(&store);
    let flat = |x: [[f64; 2]; 2]| {
        Tensor::from_vec(vec![1, 2, 2], vec![x[0][0], x[0][1], x[1][0], x[1][1]])
    };
    let v1 = s.g.constant(flat(x1));
    let v2 = s.g.constant(flat(x2));
    let (o1, o2) = isa.forward(&mut s, v1, v2).unwrap();
    assert!(s.g.value(o1).max_abs_diff(&flat(want1)) < 1e-8);
    assert!(s.g.value(o2).max_abs_diff(&flat(want2)) < 1e-8);
}

// ---- transformer blocks --------------------------------------------------------

#[test]
fn itb_shapes_and_identity_at_zero_init() {
    let cfg = BlockConfig {
        residual_zero_init: true,
        ..small_cfg()
    };
    let mut store = ParamStore::new();
    let mut r = rng(17);
    let itb = Itb::new(
        &mut Scope::new(&mut store, &mut r, Group::Ddon),
        "itb",
        &cfg,
    );
    let mut s = Session::frozen(&store);
    let f1 = s.g.constant(rand_tensor(&[1, 4, 10, 9], 18));
    let f2 = s.g.constant(rand_tensor(&[1, 4, 10, 9], 19));
    let (o1, o2) = itb.forward(&mut s, f1, f2).unwrap();
    assert_eq!(tensor_of(&s, o1), tensor_of(&s, f1));
    assert_eq!(tensor_of(&s, o2), tensor_of(&s, f2));
}

#[test]
fn itb_gradcheck() {
    let cfg = small_cfg();
    let mut store = ParamStore::new();
    let mut r = rng(20);
    let itb = Itb::new(
        &mut Scope::new(&mut store, &mut r, Group::Ddon),
        "itb",
        &cfg,
    );
    let inputs = [
        rand_tensor(&[1, 4, 8, 8], 21),
        rand_tensor(&[1, 4, 8, 8], 22),
    ];
    let rep = gradcheck_block("itb", &store, &inputs, |s, v| {
        let (a, b) = itb.forward(s, v[0], v[1]).unwrap();
        s.g.concat(&[a, b], 1)
    });
    assert_gradcheck(&rep);
}

#[test]
fn swin_shape_identity_and_gradcheck() {
    let zero = BlockConfig {
        residual_zero_init: true,
        ..small_cfg()
    };
    let mut store = ParamStore::new();
    let mut r = rng(23);
    let blk = SwinBlock::new(
        &mut Scope::new(&mut store, &mut r, Group::Ddon),
        "swin",
        &zero,
    );
    let mut s = Session::frozen(&store);
    let x = s.g.constant(rand_tensor(&[2, 4, 9, 12], 24));
    let y = blk.forward(&mut s, x).unwrap();
    assert_eq!(tensor_of(&s, y), tensor_of(&s, x));

    let mut store = ParamStore::new();
    let blk = SwinBlock::new(
        &mut Scope::new(&mut store, &mut r, Group::Ddon),
        "swin",
        &small_cfg(),
    );
    let rep = gradcheck_block("swin", &store, &[rand_tensor(&[1, 4, 8, 8], 25)], |s, v| {
        blk.forward(s, v[0]).unwrap()
    });
    assert_gradcheck(&rep);
}

#[test]
fn shifted_layer_crosses_window_borders() {
    let cfg = BlockConfig {
        window_size: 8,
        ..small_cfg()
    };
    let mut store = ParamStore::new();
    let mut r = rng(26);
    let mut sc = Scope::new(&mut store, &mut r, Group::Ddon);
    let plain = SwinLayer::new(&mut sc, "plain", &cfg, 0);
    let shifted = SwinLayer::new(&mut sc, "shifted", &cfg, 4);
    let base = rand_tensor(&[1, 4, 16, 16], 27);
    let mut bumped = base.clone();
    // one channel only: a uniform shift across channels is erased by LayerNorm
    bumped.data_mut()[5 * 16 + 5] += 1.0;
    let change_at = |layer: &SwinLayer, y: usize, x: usize| {
        let mut s = Session::frozen(&store);
        let a = s.g.constant(base.clone());
        let b = s.g.constant(bumped.clone());
        let oa = layer.forward(&mut s, a).unwrap();
        let ob = layer.forward(&mut s, b).unwrap();
        (0..4)
            .map(|c| (s.g.value(oa).at(&[0, c, y, x]) - s.g.value(ob).at(&[0, c, y, x])).abs())
            .fold(0.0, f64::max)
    };
    // (5,5) and (9,9) share a window only after the half-window shift
    assert_eq!(change_at(&plain, 9, 9), 0.0);
    assert!(change_at(&shifted, 9, 9) > 1e-9);
    assert!(change_at(&plain, 6, 6) > 1e-9);
}

// ---- convolutional blocks ------------------------------------------------------

#[test]
fn msconv_shape_zero_and_equivariance() {
    let cfg = BlockConfig {
        channels: 8,
        gn_groups: 4,
        ..small_cfg()
    };
    let mut store = ParamStore::new();
    let mut r = rng(28);
    let ms = MsConv::new(&mut Scope::new(&mut store, &mut r, Group::Ddon), "ms", &cfg);
    let x = rand_tensor(&[1, 8, 32, 32], 29);
    {
        let mut s = Session::frozen(&store);
        let xv = s.g.constant(x.clone());
        let y = ms.forward(&mut s, xv);
        assert_eq!(s.g.shape(y), &[1, 8, 32, 32]);

        // shift right/down by 4: interior outputs shift too
        let mut shifted = Tensor::zeros(vec![1, 8, 32, 32]);
        for c in 0..8 {
            for yy in 0..32 {
                for xx in 0..32 {
                    let v = x.at(&[0, c, (yy + 28) % 32, (xx + 28) % 32]);
                    shifted.data_mut()[(c * 32 + yy) * 32 + xx] = v;
                }
            }
        }
        let sv = s.g.constant(shifted);
        let ys = ms.forward(&mut s, sv);
        for c in 0..8 {
            for yy in 8..24 {
                for xx in 8..24 {
                    let a = s.g.value(y).at(&[0, c, yy - 4, xx - 4]);
                    let b = s.g.value(ys).at(&[0, c, yy, xx]);
                    assert!((a - b).abs() < 1e-6);
                }
            }
        }
    }
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        fill(&mut store, id, 0.0);
    }
    let mut s = Session::frozen(&store);
    let xv = s.g.constant(x);
    let y = ms.forward(&mut s, xv);
    assert!(s.g.value(y).data().iter().all(|&v| v == 0.0));
}

#[test]
fn cbam_gates_and_bounds() {
    let cfg = small_cfg();
    let mut store = ParamStore::new();
    let mut r = rng(30);
    let cbam = Cbam::new(
        &mut Scope::new(&mut store, &mut r, Group::Ddon),
        "cbam",
        &cfg,
    );
    let mut s = Session::frozen(&store);
    let x =
        s.g.constant(rand_tensor(&[2, 4, 9, 9], 31).map(|v| 3.0 * v));
    let o = cbam.forward_full(&mut s, x);
    for gate in [o.channel_gate, o.spatial_gate] {
        assert!(s.g.value(gate).data().iter().all(|&v| v > 0.0 && v < 1.0));
    }
    for (a, b) in s.g.value(o.out).data().iter().zip(s.g.value(x).data()) {
        assert!(a.abs() <= b.abs());
    }

    let mut cst = Tensor::zeros(vec![1, 4, 8, 8]);
    for c in 0..4 {
        for i in 0..64 {
            cst.data_mut()[c * 64 + i] = 0.1 * c as f64 - 0.15;
        }
    }
    let xc = s.g.constant(cst);
    let o = cbam.forward_full(&mut s, xc);
    let sg = s.g.value(o.spatial_gate).data();
    assert!(sg.iter().all(|v| (v - sg[0]).abs() < 1e-12));
}

#[test]
fn cbam_gradcheck() {
    let mut store = ParamStore::new();
    let mut r = rng(32);
    let cbam = Cbam::new(
        &mut Scope::new(&mut store, &mut r, Group::Ddon),
        "cbam",
        &small_cfg(),
    );
    let rep = gradcheck_block("cbam", &store, &[rand_tensor(&[1, 4, 8, 8], 33)], |s, v| {
        cbam.forward(s, v[0])
    });
    assert_gradcheck(&rep);
}

#[test]
fn msconv_gradcheck() {
    let mut store = ParamStore::new();
    let mut r = rng(34);
    let ms = MsConv::new(
        &mut Scope::new(&mut store, &mut r, Group::Ddon),
        "ms",
        &small_cfg(),
    );
    let rep = gradcheck_block(
        "msconv",
        &store,
        &[rand_tensor(&[1, 4, 8, 8], 35)],
        |s, v| ms.forward(s, v[0]),
    );
    assert_gradcheck(&rep);
}

#[test]
fn rdscb_structure() {
    let cfg = small_cfg();
    let mut store = ParamStore::new();
    let mut r = rng(36);
    let blocks: Vec<Rdscb> = [3, 5, 7]
        .iter()
        .map(|&n| {
            Rdscb::new(
                &mut Scope::new(&mut store, &mut r, Group::Ilgfn),
                &format!("r{n}"),
                &cfg,
                n,
            )
            .unwrap()
        })
        .collect();
    assert!(Rdscb::new(
        &mut Scope::new(&mut store, &mut r, Group::Ilgfn),
        "bad",
        &cfg,
        4
    )
    .is_err());
    let x = rand_tensor(&[1, 4, 8, 8], 37);
    {
        let mut s = Session::frozen(&store);
        let xv = s.g.constant(x.clone());
        for b in &blocks {
            let y = b.forward(&mut s, xv);
            assert_eq!(s.g.shape(y), &[1, 4, 8, 8]);
        }
        // depthwise stage: channel 0 perturbation stays in channel 0
        let mut x2 = x.clone();
        x2.data_mut()[10] += 0.5;
        let x2v = s.g.constant(x2);
        let a = blocks[0].depthwise_stage(&mut s, xv, 0);
        let b = blocks[0].depthwise_stage(&mut s, x2v, 0);
        let (a, b) = (s.g.value(a), s.g.value(b));
        for c in 0..4 {
            let diff: f64 = (0..64)
                .map(|i| (a.data()[c * 64 + i] - b.data()[c * 64 + i]).abs())
                .sum();
            assert_eq!(diff > 0.0, c == 0, "channel {c}");
        }
    }
    // zero inner weights: output is GN&LR of the input
    let b = &blocks[1];
    for conv in b.depthwise.iter().chain(&b.pointwise) {
        fill(&mut store, conv.w, 0.0);
        fill(&mut store, conv.b, 0.0);
    }
    let mut s = Session::frozen(&store);
    let xv = s.g.constant(x);
    let y = b.forward(&mut s, xv);
    let want = b.norm.forward(&mut s, xv);
    assert_eq!(s.g.value(y), s.g.value(want));
}

#[test]
fn rdscb_identity_like_at_zero_init() {
    let cfg = BlockConfig {
        residual_zero_init: true,
        ..small_cfg()
    };
    let mut store = ParamStore::new();
    let mut r = rng(38);
    let b = Rdscb::new(
        &mut Scope::new(&mut store, &mut r, Group::Ilgfn),
        "r",
        &cfg,
        3,
    )
    .unwrap();
    let mut s = Session::frozen(&store);
    let xv = s.g.constant(rand_tensor(&[1, 4, 8, 8], 39));
    let y = b.forward(&mut s, xv);
    let want = b.norm.forward(&mut s, xv);
    assert_eq!(s.g.value(y), s.g.value(want));
}

#[test]
fn rdscb_gradcheck() {
    let mut store = ParamStore::new();
    let mut r = rng(40);
    let b = Rdscb::new(
        &mut Scope::new(&mut store, &mut r, Group::Ilgfn),
        "r",
        &small_cfg(),
        3,
    )
    .unwrap();
    let rep = gradcheck_block(
        "rdscb",
        &store,
        &[rand_tensor(&[1, 4, 8, 8], 41)],
        |s, v| b.forward(s, v[0]),
    );
    assert_gradcheck(&rep);
}

#[test]
fn lia_contracts() {
    let cfg = small_cfg();
    let mut store = ParamStore::new();
    let mut r = rng(42);
    let lia = Lia::new(
        &mut Scope::new(&mut store, &mut r, Group::Ilgfn),
        "lia",
        &cfg,
        3,
    );
    let f1 = rand_tensor(&[1, 4, 8, 8], 43);
    let f2 = rand_tensor(&[1, 4, 8, 8], 44);
    {
        let mut s = Session::frozen(&store);
        let (a, b) = (s.g.constant(f1.clone()), s.g.constant(f2.clone()));
        let o = lia.forward_full(&mut s, a, b).unwrap();
        assert_eq!(s.g.shape(o.out), &[1, 4, 8, 8]);
        let gate = s.g.sigmoid(o.att);
        assert!(s.g.value(gate).data().iter().all(|&v| v > 0.0 && v < 1.0));

        // spatially constant input: the std branch sees (almost) zero
        let cst = Tensor::from_vec(
            vec![1, 4, 8, 8],
            (0..256).map(|i| (i / 64) as f64 * 0.2).collect(),
        );
        let c1 = s.g.constant(cst.clone());
        let c2 = s.g.constant(cst.map(|v| 1.0 - v));
        let o = lia.forward_full(&mut s, c1, c2).unwrap();
        let zero = s.g.constant(Tensor::zeros(vec![1, 8]));
        let h = lia.fc1.forward(&mut s, zero);
        let h = s.g.leaky_relu(h, cfg.leaky_slope);
        let mlp0 = lia.fc2.forward(&mut s, h);
        assert!(s.g.value(o.std_branch).max_abs_diff(s.g.value(mlp0)) < 1e-5);
        let sum = s.g.add(o.avg_branch, o.std_branch);
        assert!(s.g.value(o.att).max_abs_diff(s.g.value(sum)) < 1e-15);
        let bad = s.g.constant(Tensor::zeros(vec![1, 4, 8, 9]));
        assert!(lia.forward(&mut s, a, bad).is_err());
    }
    fill(&mut store, lia.alpha, 0.0);
    fill(&mut store, lia.beta, 0.0);
    let mut s = Session::frozen(&store);
    let (a, b) = (s.g.constant(f1), s.g.constant(f2));
    let out = lia.forward(&mut s, a, b).unwrap();
    let cat = s.g.concat(&[a, b], 1);
    let half = s.g.scale(cat, 0.5);
    let want = lia.conv.forward(&mut s, half);
    assert!(s.g.value(out).max_abs_diff(s.g.value(want)) < 1e-15);
}

#[test]
fn lia_gradcheck() {
    let mut store = ParamStore::new();
    let mut r = rng(45);
    let lia = Lia::new(
        &mut Scope::new(&mut store, &mut r, Group::Ilgfn),
        "lia",
        &small_cfg(),
        3,
    );
    let inputs = [
        rand_tensor(&[1, 4, 8, 8], 46),
        rand_tensor(&[1, 4, 8, 8], 47),
    ];
    let rep = gradcheck_block("lia", &store, &inputs, |s, v| {
        lia.forward(s, v[0], v[1]).unwrap()
    });
    assert_gradcheck(&rep);
}

#[test]
fn gn_lr_normalizes_groups() {
    let mut store = ParamStore::new();
    let mut r = rng(48);
    let gn = GroupNormLr::new(
        &mut Scope::new(&mut store, &mut r, Group::Ddon),
        "gn",
        4,
        2,
        0.2,
    );
    let mut s = Session::frozen(&store);
    let mut t = rand_tensor(&[1, 4, 5, 5], 49).map(|v| 2.0 * v + 3.0);
    // second group constant
    for v in &mut t.data_mut()[50..] {
        *v = 0.7;
    }
    let x = s.g.constant(t);
    let y = gn.normalize(&mut s, x);
    let d = s.g.value(y).data();
    let m0: f64 = d[..50].iter().sum::<f64>() / 50.0;
    let v0: f64 = d[..50].iter().map(|v| (v - m0).powi(2)).sum::<f64>() / 50.0;
    assert!(m0.abs() < 1e-12);
    assert!((v0 - 1.0).abs() < 1e-4);
    assert!(d[50..].iter().all(|&v| v.abs() < 1e-10));
}

#[test]
fn gn_lr_gradcheck() {
    let mut store = ParamStore::new();
    let mut r = rng(50);
    let gn = GroupNormLr::new(
        &mut Scope::new(&mut store, &mut r, Group::Ddon),
        "gn",
        4,
        2,
        0.2,
    );
    store.set(gn.gamma, rand_tensor(&[4], 51));
    store.set(gn.beta, rand_tensor(&[4], 52));
    let rep = gradcheck_block(
        "gn_lr",
        &store,
        &[rand_tensor(&[1, 4, 8, 8], 53)],
        |s, v| gn.forward(s, v[0]),
    );
    assert_gradcheck(&rep);
}

#[test]
fn config_validation() {
    assert!(BlockConfig::default().validate().is_ok());
    let bad = [
        BlockConfig {
            heads: 3,
            ..Default::default()
        },
        BlockConfig {
            gn_groups: 5,
            ..Default::default()
        },
        BlockConfig {
            msconv_kernels: vec![1, 2, 3, 5],
            ..Default::default()
        },
        BlockConfig {
            channels: 18,
            heads: 2,
            gn_groups: 2,
            ..Default::default()
        },
    ];
    for b in bad {
        assert!(
            matches!(b.validate(), Err(crate::Error::Config(_))),
            "{b:?}"
        );
    }
}
