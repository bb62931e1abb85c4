use super::*;

fn t(rows: &[&[f64]]) -> Tensor<f64> {
    Tensor::from_rows(rows).unwrap()
}

fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
}

#[test]
fn tensor_rejects_inconsistent_shape() {
    assert!(Tensor::<f32>::new(vec![2, 3], vec![0.0; 5]).is_err());
    assert!(Tensor::<f32>::new(vec![0, 3], vec![]).is_err());
}

#[test]
fn matmul_identity_and_hand_case() {
    let mut tape = Tape::new();
    let i2 = tape.constant(Tensor::identity(2));
    let m = tape.constant(t(&[&[0.5, -2.0], &[3.0, 7.25]]));
    let out = tape.matmul(i2, m).unwrap();
    assert_eq!(tape.value(out).data(), tape.value(m).data());

    let a = tape.constant(t(&[&[1.0, 2.0], &[3.0, 4.0]]));
    let b = tape.constant(t(&[&[5.0], &[6.0]]));
    let c = tape.matmul(a, b).unwrap();
    assert_eq!(tape.value(c).data(), &[17.0, 39.0]);
    assert_eq!(tape.shape(c), &[2, 1]);
}

#[test]
fn matmul_zero_and_mismatch() {
    let mut tape = Tape::<f32>::new();
    let z = tape.constant(Tensor::zeros(&[3, 4]));
    let b = tape.constant(Tensor::full(&[4, 2], 1.5));
    let c = tape.matmul(z, b).unwrap();
    assert!(tape.value(c).data().iter().all(|&x| x == 0.0));
    assert_eq!(tape.shape(c), &[3, 2]);

    let err = tape.matmul(b, b).unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("[4, 2]"), "{msg}");
}

#[test]
fn matmul_transposed_variants_agree() {
    let mut tape = Tape::<f64>::new();
    let a = tape.constant(t(&[&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]]));
    let b = tape.constant(t(&[&[1.0, 0.0, -1.0], &[2.0, 1.0, 0.5]]));
    let abt = tape.matmul_t(a, b).unwrap();
    assert_eq!(tape.value(abt).data(), &[-2.0, 5.5, -2.0, 16.0]);
    let atb = tape.matmul_ex(a, b, true, false).unwrap();
    assert_eq!(tape.shape(atb), &[3, 3]);
    assert_eq!(tape.value(atb).get(0, 0), 1.0 * 1.0 + 4.0 * 2.0);
}

#[test]
fn softmax_examples() {
    let mut tape = Tape::<f64>::new();
    let z = tape.constant(Tensor::zeros(&[1, 4]));
    let s = tape.softmax_rows(z).unwrap();
    assert_eq!(tape.value(s).data(), &[0.25; 4]);

    let big = tape.constant(t(&[&[1000.0, 1000.0]]));
    let s = tape.softmax_rows(big).unwrap();
    assert_eq!(tape.value(s).data(), &[0.5, 0.5]);

    let x = tape.constant(t(&[&[0.0, 3f64.ln()]]));
    let s = tape.softmax_rows(x).unwrap();
    assert!(close(tape.value(s).data(), &[0.25, 0.75], 1e-12));
}

#[test]
fn softmax_big_f32_does_not_overflow() {
    let mut tape = Tape::<f32>::new();
    let big = tape.constant(Tensor::from_rows(&[&[1000.0, 1000.0]]).unwrap());
    let s = tape.softmax_rows(big).unwrap();
    assert_eq!(tape.value(s).data(), &[0.5f32, 0.5]);
}

#[test]
fn softmax_nan_is_numeric_error() {
    let mut tape = Tape::<f32>::new();
    let x = tape.constant(Tensor::matrix(1, 2, vec![f32::NAN, 0.0]).unwrap());
    assert!(matches!(tape.softmax_rows(x), Err(crate::Error::Numeric(_))));
}

#[test]
fn layer_norm_examples() {
    let mut tape = Tape::<f64>::new();
    let g = tape.constant(Tensor::full(&[2], 1.0));
    let b = tape.constant(Tensor::zeros(&[2]));
    let x = tape.constant(t(&[&[1.0, -1.0]]));
    let y = tape.layer_norm_rows(x, g, b, 0.0).unwrap();
    assert_eq!(tape.value(y).data(), &[1.0, -1.0]);

    let g3 = tape.constant(Tensor::full(&[3], 1.0));
    let b3 = tape.constant(Tensor::zeros(&[3]));
    let c = tape.constant(t(&[&[4.0, 4.0, 4.0]]));
    let y = tape.layer_norm_rows(c, g3, b3, 1e-5).unwrap();
    assert_eq!(tape.value(y).data(), &[0.0; 3]);

    let g0 = tape.constant(Tensor::zeros(&[3]));
    let bias = tape.constant(Tensor::from_rows(&[&[0.5, -1.0, 2.0]]).unwrap());
    let x = tape.constant(t(&[&[3.0, -7.0, 0.1], &[1.0, 2.0, 3.0]]));
    let y = tape.layer_norm_rows(x, g0, bias, 1e-5).unwrap();
    assert_eq!(tape.value(y).data(), &[0.5, -1.0, 2.0, 0.5, -1.0, 2.0]);
}

#[test]
fn layer_norm_needs_two_columns() {
    let mut tape = Tape::<f64>::new();
    let g = tape.constant(Tensor::full(&[1], 1.0));
    let b = tape.constant(Tensor::zeros(&[1]));
    let x = tape.constant(t(&[&[1.0]]));
    assert!(tape.layer_norm_rows(x, g, b, 1e-5).is_err());
}

#[test]
fn maxpool_examples() {
    let mut tape = Tape::<f64>::new();
    let v = tape.constant(t(&[&[1.0, -3.0, 2.5]]));
    let single = tape.maxpool_over_set(&[v]).unwrap();
    assert_eq!(tape.value(single).data(), tape.value(v).data());
    let dup = tape.maxpool_over_set(&[v, v]).unwrap();
    assert_eq!(tape.value(dup).data(), tape.value(v).data());

    let a = tape.constant(t(&[&[1.0, 5.0]]));
    let b = tape.constant(t(&[&[3.0, 2.0]]));
    let m = tape.maxpool_over_set(&[a, b]).unwrap();
    assert_eq!(tape.value(m).data(), &[3.0, 5.0]);

    assert!(matches!(tape.maxpool_over_set(&[]), Err(crate::Error::Precondition(_))));
}

#[test]
fn maxpool_tie_routes_gradient_to_first() {
    let mut tape = Tape::<f64>::new();
    let a = tape.param(t(&[&[2.0, 1.0]]));
    let b = tape.param(t(&[&[2.0, 4.0]]));
    let m = tape.maxpool_over_set(&[a, b]).unwrap();
    let s = tape.sum(m);
    tape.backward(s).unwrap();
    assert_eq!(tape.grad(a).unwrap(), &[1.0, 0.0]);
    assert_eq!(tape.grad(b).unwrap(), &[0.0, 1.0]);
}

fn attention_weights(tape: &mut Tape<f64>, e: usize, seed: u64) -> AttentionWeights {
    let mut s = seed;
    let mut next = move || {
        s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        ((s >> 11) as f64 / (1u64 << 53) as f64) - 0.5
    };
    let mut mat = |tape: &mut Tape<f64>| {
        let data = (0..e * e).map(|_| next()).collect();
        tape.param(Tensor::matrix(e, e, data).unwrap())
    };
    AttentionWeights {
        wq: mat(tape),
        wk: mat(tape),
        wv: mat(tape),
        wo: mat(tape),
    }
}

#[test]
fn attention_single_token_is_value_projection() {
    for heads in [1, 2, 4] {
        let mut tape = Tape::<f64>::new();
        let w = attention_weights(&mut tape, 4, 7);
        let x = tape.constant(t(&[&[0.3, -0.2, 1.0, 0.5]]));
        let out = tape.masked_attention(x, x, None, heads, &w).unwrap();
        let v = tape.matmul(x, w.wv).unwrap();
        let vo = tape.matmul(v, w.wo).unwrap();
        assert!(close(tape.value(out).data(), tape.value(vo).data(), 1e-12));
    }
}

#[test]
fn attention_identity_mask_attends_to_self() {
    let mut tape = Tape::<f64>::new();
    let w = attention_weights(&mut tape, 4, 11);
    let x = tape.constant(t(&[&[0.3, -0.2, 1.0, 0.5], &[1.0, 2.0, -1.0, 0.0], &[0.0, 0.1, 0.2, 0.3]]));
    let mask: Vec<bool> = (0..9).map(|i| i / 3 == i % 3).collect();
    let out = tape.masked_attention(x, x, Some(&mask), 2, &w).unwrap();
    let v = tape.matmul(x, w.wv).unwrap();
    let vo = tape.matmul(v, w.wo).unwrap();
    assert!(close(tape.value(out).data(), tape.value(vo).data(), 1e-12));
}

#[test]
fn attention_causal_hand_oracle() {
    // e=2, one head, identity projections except a fixed value map.
    let mut tape = Tape::<f64>::new();
    let w = AttentionWeights {
        wq: tape.constant(Tensor::identity(2)),
        wk: tape.constant(Tensor::identity(2)),
        wv: tape.constant(t(&[&[1.0, 2.0], &[0.0, 1.0]])),
        wo: tape.constant(Tensor::identity(2)),
    };
    let x = tape.constant(t(&[&[1.0, 0.0], &[0.0, 2.0]]));
    let mask = [true, false, true, true];
    let out = tape.masked_attention(x, x, Some(&mask), 1, &w).unwrap();
    // Row 0 sees itself only: v0 = [1, 2].
    // Row 1 logits: q1·k0 / sqrt2 = 0, q1·k1 / sqrt2 = 4/sqrt2.
    let a1 = (4.0 / 2f64.sqrt()).exp();
    let w0 = 1.0 / (1.0 + a1);
    let w1 = a1 / (1.0 + a1);
    let v0 = [1.0, 2.0];
    let v1 = [0.0, 2.0];
    let expect = [1.0, 2.0, w0 * v0[0] + w1 * v1[0], w0 * v0[1] + w1 * v1[1]];
    assert!(close(tape.value(out).data(), &expect, 1e-12), "{:?}", tape.value(out).data());
}

#[test]
fn attention_rejects_fully_masked_row_and_bad_heads() {
    let mut tape = Tape::<f64>::new();
    let w = attention_weights(&mut tape, 4, 3);
    let x = tape.constant(Tensor::zeros(&[2, 4]));
    let mask = [true, false, false, false];
    assert!(matches!(
        tape.masked_attention(x, x, Some(&mask), 1, &w),
        Err(crate::Error::Precondition(_))
    ));
    assert!(tape.masked_attention(x, x, None, 3, &w).is_err());
}

#[test]
fn backward_sum_gives_ones() {
    let mut tape = Tape::<f32>::new();
    let w = tape.param(Tensor::full(&[3, 2], 0.7));
    let s = tape.sum(w);
    tape.backward(s).unwrap();
    assert_eq!(tape.grad(w).unwrap(), &[1.0; 6]);
}

#[test]
fn backward_rejects_non_scalar() {
    let mut tape = Tape::<f32>::new();
    let w = tape.param(Tensor::zeros(&[2, 2]));
    assert!(matches!(tape.backward(w), Err(crate::Error::Contract(_))));
}

#[test]
fn repeated_backward_accumulates_exactly() {
    let mut tape = Tape::<f64>::new();
    let a = tape.param(t(&[&[1.0, 2.0], &[3.0, 4.0]]));
    let b = tape.param(t(&[&[0.5, -1.0], &[2.0, 0.25]]));
    let c = tape.matmul(a, b).unwrap();
    let s = tape.sum(c);
    tape.backward(s).unwrap();
    let once = tape.grad(a).unwrap().to_vec();
    tape.backward(s).unwrap();
    let twice = tape.grad(a).unwrap();
    assert!(once.iter().zip(twice).all(|(x, y)| 2.0 * x == *y));
    tape.zero_grad();
    assert!(tape.grad(a).is_none());
}

#[test]
fn constants_receive_no_gradient() {
    let mut tape = Tape::<f64>::new();
    let a = tape.param(t(&[&[1.0, 2.0]]));
    let k = tape.constant(t(&[&[3.0, 4.0]]));
    let p = tape.mul(a, k).unwrap();
    let s = tape.sum(p);
    tape.backward(s).unwrap();
    assert_eq!(tape.grad(a).unwrap(), &[3.0, 4.0]);
    assert!(tape.grad(k).is_none());
}

#[test]
fn cross_entropy_values() {
    let mut tape = Tape::<f64>::new();
    let p = tape.constant(Tensor::full(&[2, 4], 0.25));
    let y = t(&[&[1.0, 0.0, 0.0, 0.0], &[0.0, 0.0, 1.0, 0.0]]);
    let l = tape.cross_entropy(p, &y, None, 1e-12).unwrap();
    assert!((tape.value(l).item() - 4f64.ln()).abs() < 1e-12);

    let q = tape.constant(y.clone());
    let l = tape.cross_entropy(q, &y, None, 1e-12).unwrap();
    assert_eq!(tape.value(l).item(), 0.0);

    let none = [false, false];
    assert!(tape.cross_entropy(p, &y, Some(&none), 1e-12).is_err());
}

#[test]
fn im2col_matches_direct_convolution() {
    // 3x3 single-channel image, 2x2 kernel, stride 1, no padding.
    let mut tape = Tape::<f64>::new();
    let img = tape.constant(Tensor::matrix(9, 1, (1..=9).map(f64::from).collect()).unwrap());
    let cols = tape.im2col(img, (3, 3), 2, 1, 0).unwrap();
    assert_eq!(tape.shape(cols), &[4, 4]);
    let k = tape.constant(Tensor::matrix(4, 1, vec![1.0, 0.0, 0.0, -1.0]).unwrap());
    let conv = tape.matmul(cols, k).unwrap();
    // x[y][x] - x[y+1][x+1] = -4 everywhere.
    assert_eq!(tape.value(conv).data(), &[-4.0; 4]);
}
