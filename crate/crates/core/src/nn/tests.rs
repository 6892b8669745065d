use super::*;

fn t(v: &[f64], s: &[usize]) -> Tensor<f64> {
    Tensor::from_f64s(v, s).unwrap()
}

fn ramp(shape: &[usize]) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    t(&(0..n).map(|v| v as f64).collect::<Vec<_>>(), shape)
}

#[test]
fn conv_counts_taps() {
    let x = Tensor::<f64>::ones(&[1, 3, 3, 1]);
    let w = Tensor::<f64>::ones(&[3, 3, 1, 1]);
    let y = conv2d(&x, &w, None, 1).unwrap().to_vec();
    assert_eq!(y, vec![4., 6., 4., 6., 9., 6., 4., 6., 4.]);
}

#[test]
fn conv_delta_kernel_is_identity() {
    let x = ramp(&[1, 4, 5, 2]);
    let mut w = vec![0.0; 3 * 3 * 2 * 2];
    // center tap, channel c -> c
    for c in 0..2 {
        w[((3 + 1) * 2 + c) * 2 + c] = 1.0;
    }
    let y = conv2d(&x, &t(&w, &[3, 3, 2, 2]), None, 1).unwrap();
    assert_eq!(y.to_vec(), x.to_vec());
}

#[test]
fn conv_rejects_channel_mismatch() {
    let x = Tensor::<f64>::ones(&[1, 3, 3, 2]);
    let w = Tensor::<f64>::ones(&[3, 3, 1, 1]);
    assert!(conv2d(&x, &w, None, 1).is_err());
}

#[test]
fn pixel_shuffle_2x2() {
    let x = t(&[1., 2., 3., 4.], &[1, 1, 1, 4]);
    let y = pixel_shuffle(&x, 2).unwrap();
    assert_eq!(y.shape(), &[1, 2, 2, 1]);
    assert_eq!(y.to_vec(), vec![1., 2., 3., 4.]);
    assert_eq!(pixel_shuffle(&x, 1).unwrap().to_vec(), x.to_vec());
    assert!(pixel_shuffle(&t(&[1., 2., 3.], &[1, 1, 1, 3]), 2).is_err());
}

#[test]
fn pixel_shuffle_index_map() {
    let (s, c) = (3, 2);
    let x = ramp(&[1, 2, 2, c * s * s]);
    let y = pixel_shuffle(&x, s).unwrap();
    let yv = y.to_vec();
    let xv = x.to_vec();
    for h in 0..2 {
        for w in 0..2 {
            for ch in 0..c {
                for dy in 0..s {
                    for dx in 0..s {
                        let src = (h * 2 + w) * c * s * s + ch * s * s + dy * s + dx;
                        let dst = ((s * h + dy) * 2 * s + s * w + dx) * c + ch;
                        assert_eq!(yv[dst], xv[src]);
                    }
                }
            }
        }
    }
}

#[test]
fn window_partition_top_left() {
    let x = ramp(&[1, 4, 4, 1]);
    let win = window_partition(&x, 2).unwrap();
    assert_eq!(win.shape(), &[4, 4, 1]);
    // positions (0,0),(0,1),(1,0),(1,1) of a 4-wide map
    assert_eq!(&win.to_vec()[..4], &[0., 1., 4., 5.]);
    assert_eq!(&win.to_vec()[4..8], &[2., 3., 6., 7.]);
    assert!(window_partition(&x, 3).is_err());
}

#[test]
fn patch_merge_shape_and_order() {
    let x = ramp(&[1, 4, 4, 8]);
    let g = Tensor::ones(&[32]);
    let b = Tensor::zeros(&[32]);
    let w = Tensor::full(&[32, 16], 0.01);
    assert_eq!(patch_merge(&x, &g, &b, &w).unwrap().shape(), &[1, 2, 2, 16]);

    // labeled 2×2 input, one channel
    let x = t(&[10., 20., 30., 40.], &[1, 2, 2, 1]);
    let gathered = patch_gather(&x).unwrap().to_vec();
    // top-left, bottom-left, top-right, bottom-right
    assert_eq!(gathered, vec![10., 30., 20., 40.]);
    assert!(patch_gather(&ramp(&[1, 3, 4, 1])).is_err());
}

#[test]
fn patch_merge_selector_weights() {
    // Input whose 4C gathered vector already has zero mean and unit variance
    // per position, so LayerNorm is (nearly) the identity.
    let c = 2;
    let pattern = [1., -1., 1., -1., 1., -1., 1., -1.];
    let x = t(&pattern, &[1, 2, 2, c]);
    let gathered = patch_gather(&x).unwrap().to_vec();
    let mut w = vec![0.0; 4 * c * 2 * c];
    for i in 0..2 * c {
        w[i * 2 * c + i] = 1.0; // [I; 0]
    }
    let y = patch_merge(&x, &Tensor::ones(&[8]), &Tensor::zeros(&[8]), &t(&w, &[8, 4])).unwrap();
    let scale = 1.0 / (1.0f64 + LN_EPS).sqrt();
    for (i, v) in y.to_vec().iter().enumerate() {
        assert!((v - gathered[i] * scale).abs() < 1e-12);
    }
}

#[test]
fn patch_expand_shape_and_linearity() {
    let x = ramp(&[1, 2, 2, 16]).mul_scalar(0.01);
    let w = ramp(&[16, 32]).mul_scalar(0.001);
    let y = patch_expand(&x, &w).unwrap();
    assert_eq!(y.shape(), &[1, 4, 4, 8]);
    let y2 = patch_expand(&x.mul_scalar(2.5), &w).unwrap();
    for (a, b) in y.to_vec().iter().zip(y2.to_vec()) {
        assert!((2.5 * a - b).abs() < 1e-12);
    }
    assert!(patch_expand(&ramp(&[1, 2, 2, 3]), &ramp(&[3, 6])).is_err());
}

#[test]
fn merge_then_expand_preserves_shape() {
    for (h, w, c) in [(2, 2, 2), (4, 6, 4), (8, 8, 6)] {
        let x = ramp(&[1, h, w, c]).mul_scalar(0.01);
        let merged = patch_merge(
            &x,
            &Tensor::ones(&[4 * c]),
            &Tensor::zeros(&[4 * c]),
            &Tensor::full(&[4 * c, 2 * c], 0.1),
        )
        .unwrap();
        let back = patch_expand(&merged, &Tensor::full(&[2 * c, 4 * c], 0.1)).unwrap();
        assert_eq!(back.shape(), x.shape());
    }
}

#[test]
fn layer_norm_examples() {
    let g = Tensor::ones(&[3]);
    let b = Tensor::zeros(&[3]);
    let y = layer_norm(&t(&[2., 2., 2.], &[1, 3]), &g, &b, LN_EPS).unwrap();
    assert!(y.to_vec().iter().all(|v| *v == 0.0));

    let y = layer_norm(&t(&[1., -1.], &[1, 2]), &Tensor::ones(&[2]), &Tensor::zeros(&[2]), LN_EPS)
        .unwrap()
        .to_vec();
    let expect = 1.0 / (1.0f64 + 1e-5).sqrt();
    assert!((y[0] - expect).abs() < 1e-12 && (y[1] + expect).abs() < 1e-12);
}

#[test]
fn l1_examples() {
    let a = Tensor::<f64>::zeros(&[1, 2, 2, 3]);
    let b = Tensor::<f64>::ones(&[1, 2, 2, 3]);
    assert_eq!(l1_loss(&a, &a).unwrap().item(), 0.0);
    assert_eq!(l1_loss(&a, &b).unwrap().item(), 1.0);
    assert!(l1_loss(&a, &Tensor::ones(&[1, 2, 2, 1])).is_err());
}

#[test]
fn bce_at_zero_logit() {
    let z = Tensor::<f64>::zeros(&[4]);
    let ln2 = 2f64.ln();
    assert!((bce_with_logits(&z, 1.0).item() - ln2).abs() < 1e-15);
    assert!((bce_with_logits(&z, 0.0).item() - ln2).abs() < 1e-15);
}

#[test]
fn bicubic_constant_and_ramp() {
    let x = Tensor::<f64>::full(&[1, 8, 8, 3], 0.3);
    for (oh, ow) in [(32, 32), (2, 2), (5, 11)] {
        let y = bicubic_resize(&x, oh, ow).unwrap();
        assert!(y.to_vec().iter().all(|v| (v - 0.3).abs() < 1e-12));
    }
    // horizontal ramp, ×2 upscale stays linear away from the clamped border
    let w = 16;
    let ramp: Vec<f64> = (0..8 * w).map(|i| (i % w) as f64 / w as f64).collect();
    let x = t(&ramp, &[1, 8, w, 1]);
    let y = bicubic_resize(&x, 16, 2 * w).unwrap().to_vec();
    for row in 0..16 {
        for j in 4..2 * w - 4 {
            let src = (j as f64 + 0.5) / 2.0 - 0.5;
            assert!((y[row * 2 * w + j] - src / w as f64).abs() < 1e-12);
        }
    }
}
