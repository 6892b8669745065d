mod common;

use std::collections::BTreeSet;
use std::fs;

use common::*;
use proptest::prelude::*;
use srlite_core::data::{
    decode_image, degrade_pair, encode_png, encode_ppm, parse_manifest, psnr, psnr_from_mse, read_image, ssim, write_image,
    Dataset, DatasetSpec, Image,
};

fn image_from(seed: u64, w: usize, h: usize) -> Image {
    Image::new(w, h, 3, uniform(&mut rng(seed), w * h * 3, 0.0, 1.0).into_iter().map(|v| v as f32).collect()).unwrap()
}

fn perturbed(img: &Image, noise: &[f64], amount: f64) -> Image {
    let data = img.data.iter().zip(noise).map(|(&v, n)| (v as f64 + amount * n) as f32).collect();
    Image::new(img.width, img.height, img.channels, data).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn psnr_follows_mean_squared_error(w in 1usize..9, h in 1usize..9, seed in 0u64..1000) {
        let (a, b) = (image_from(seed, w, h), image_from(seed + 1, w, h));
        let mse: f64 = a.data.iter().zip(&b.data).map(|(&x, &y)| (x as f64 - y as f64).powi(2)).sum::<f64>() / a.data.len() as f64;
        let want = 10.0 * (1.0 / mse).log10();
        prop_assert!((psnr(&a, &b, 1.0).unwrap() - want).abs() < 1e-9);
        prop_assert_eq!(psnr(&a, &b, 1.0).unwrap(), psnr(&b, &a, 1.0).unwrap());
        // doubling the peak adds 20·log10(2)
        prop_assert!((psnr(&a, &b, 2.0).unwrap() - want - 20.0 * 2f64.log10()).abs() < 1e-9);
    }

    #[test]
    fn ssim_matches_reference_on_random_sizes(w in 11usize..20, h in 11usize..20, seed in 0u64..1000) {
        let (a, b) = (image_from(seed, w, h), image_from(seed + 7, w, h));
        let s = ssim(&a, &b).unwrap();
        prop_assert!((s - ssim_reference(&a, &b)).abs() <= 1e-9);
        prop_assert!((s - ssim(&b, &a).unwrap()).abs() <= 1e-12);
        prop_assert!(s <= 1.0);
    }

    #[test]
    fn degrade_sizes(w in 2usize..40, h in 2usize..40, scale in 2usize..5, k in 1usize..6) {
        let hr_size = scale * k;
        let pair = degrade_pair(&image_from(3, w, h), hr_size, scale).unwrap();
        prop_assert_eq!((pair.hr.width, pair.hr.height), (hr_size, hr_size));
        prop_assert_eq!((pair.lr.width, pair.lr.height), (k, k));
    }

    #[test]
    fn constant_images_stay_constant(w in 2usize..30, h in 2usize..30, v in 0.0f32..1.0) {
        let pair = degrade_pair(&Image::filled(w, h, 3, v), 8, 2).unwrap();
        prop_assert!(pair.hr.data.iter().chain(&pair.lr.data).all(|&o| (o - v).abs() < 1e-6));
    }
}

#[test]
fn psnr_edge_cases() {
    let a = gradient_noise_image(1);
    assert_eq!(psnr(&a, &a, 1.0).unwrap(), f64::INFINITY);
    let (zeros, ones) = (Image::filled(4, 4, 3, 0.0), Image::filled(4, 4, 3, 1.0));
    assert_eq!(psnr(&zeros, &ones, 1.0).unwrap(), 0.0);
    assert!((psnr_from_mse(0.01, 1.0) - 20.0).abs() < 1e-12);
    assert!(psnr(&zeros, &Image::filled(4, 5, 3, 0.0), 1.0).is_err());
}

#[test]
fn ssim_of_two_constants_is_the_luminance_term() {
    let (a, b) = (0.3f64, 0.6f64);
    let c1 = 0.01f64.powi(2);
    let want = (2.0 * a * b + c1) / (a * a + b * b + c1);
    let got = ssim(&Image::filled(12, 14, 3, a as f32), &Image::filled(12, 14, 3, b as f32)).unwrap();
    assert!((got - want).abs() < 1e-6, "{got} vs {want}");
}

#[test]
fn ssim_falls_as_noise_grows() {
    let a = gradient_noise_image(4);
    let noise = uniform(&mut rng(99), a.data.len(), -1.0, 1.0);
    let scores: Vec<f64> = [0.0, 0.02, 0.05, 0.1, 0.2].iter().map(|&k| ssim(&a, &perturbed(&a, &noise, k)).unwrap()).collect();
    assert_eq!(scores[0], 1.0);
    assert!(scores.windows(2).all(|w| w[0] > w[1]), "{scores:?}");
    assert!(ssim(&Image::filled(10, 20, 3, 0.0), &Image::filled(10, 20, 3, 0.0)).is_err());
}

#[test]
fn center_crop_keeps_the_middle() {
    // a 6x4 image whose columns are numbered; the crop keeps columns 1..5
    let data: Vec<f32> = (0..4).flat_map(|_| (0..6).map(|x| x as f32 / 10.0)).collect();
    let img = Image::new(6, 4, 1, data).unwrap();
    let sq = img.center_crop_square();
    assert_eq!((sq.width, sq.height), (4, 4));
    assert_eq!(&sq.data[..4], &[0.1, 0.2, 0.3, 0.4]);
    let tall = Image::new(2, 5, 1, (0..10).map(|i| i as f32).collect()).unwrap().center_crop_square();
    assert_eq!(tall.data, vec![2.0, 3.0, 4.0, 5.0]);
}

#[test]
fn degrade_rejects_bad_requests() {
    let img = image_from(1, 10, 10);
    assert!(degrade_pair(&img, 10, 4).is_err());
    assert!(degrade_pair(&img, 8, 0).is_err());
    assert!(degrade_pair(&Image::filled(1, 5, 3, 0.5), 4, 2).is_err());
}

#[test]
fn synthetic_data_is_seeded_and_in_range() {
    let a = Dataset::synthetic(3, 5, 16, 4).unwrap();
    let b = Dataset::synthetic(3, 5, 16, 4).unwrap();
    let c = Dataset::synthetic(4, 5, 16, 4).unwrap();
    assert_eq!(a.samples, b.samples);
    assert_ne!(a.samples, c.samples);
    for s in &a.samples {
        assert_eq!((s.hr.width, s.lr.width), (16, 4));
        assert!(s.hr.data.iter().chain(&s.lr.data).all(|v| (0.0..=1.0).contains(v)));
    }
    let distinct: BTreeSet<Vec<u8>> = a.samples.iter().map(|s| s.hr.to_u8()).collect();
    assert_eq!(distinct.len(), 5);
    let (lr, hr) = a.batch::<f32>(&[4, 0]).unwrap();
    assert_eq!((lr.shape(), hr.shape()), (&[2, 4, 4, 3][..], &[2, 16, 16, 3][..]));
    assert_eq!(&hr.to_vec()[..16 * 16 * 3], &a.samples[4].hr.data[..]);
}

#[test]
fn split_is_disjoint_and_seeded() {
    let all = Dataset::synthetic(1, 50, 8, 2).unwrap();
    let key = |d: &Dataset| d.samples.iter().map(|s| s.hr.to_u8()).collect::<Vec<_>>();
    let (train, val) = all.clone().split(7, 10).unwrap();
    assert_eq!((train.len(), val.len()), (40, 10));
    let (tk, vk): (BTreeSet<_>, BTreeSet<_>) = (key(&train).into_iter().collect(), key(&val).into_iter().collect());
    assert!(tk.is_disjoint(&vk));
    assert_eq!(tk.len() + vk.len(), 50);
    let (_, again) = all.clone().split(7, 10).unwrap();
    assert_eq!(key(&again), key(&val));
    let (_, other) = all.clone().split(8, 10).unwrap();
    assert_ne!(key(&other), key(&val));
    assert_eq!(all.clone().split(0, 0).unwrap().1.len(), 0);
    assert!(all.split(0, 50).is_err());
}

#[test]
fn codecs_round_trip_quantized_images() {
    let img = Image::from_u8(5, 3, 3, &image_from(2, 5, 3).to_u8()).unwrap();
    for bytes in [encode_ppm(&img), encode_png(&img).unwrap()] {
        let back = decode_image(&bytes).unwrap();
        assert_eq!((back.width, back.height, back.channels), (5, 3, 3));
        assert_eq!(back.to_u8(), img.to_u8());
    }
    assert!(decode_image(b"GIF89a").is_err());
    assert!(decode_image(b"P6\n4 4\n255\n\x00").is_err());
}

#[test]
fn comment_lines_in_ppm_headers_are_skipped() {
    let mut bytes = b"P6\n# made by hand\n2 1\n255\n".to_vec();
    bytes.extend_from_slice(&[255, 0, 0, 0, 0, 255]);
    let img = decode_image(&bytes).unwrap();
    assert_eq!(img.to_u8(), vec![255, 0, 0, 0, 0, 255]);
}

#[test]
fn directory_and_manifest_loading() {
    let dir = tempfile::tempdir().unwrap();
    for (i, name) in ["a.png", "b.ppm", "c.png"].iter().enumerate() {
        write_image(&dir.path().join(name), &image_from(i as u64, 9 + i, 7)).unwrap();
    }
    fs::write(dir.path().join("notes.txt"), "not an image").unwrap();
    let back = read_image(&dir.path().join("b.ppm")).unwrap();
    assert_eq!((back.width, back.height), (10, 7));

    let spec = DatasetSpec { dir: Some(dir.path().to_path_buf()), hr_size: 8, val_count: 1, ..Default::default() };
    let (train, val) = Dataset::load(&spec, 2, 0).unwrap();
    assert_eq!((train.len(), val.len()), (2, 1));

    fs::write(dir.path().join("list.txt"), "# subset\n\nc.png\n a.png \n").unwrap();
    assert_eq!(parse_manifest("# x\n\nc.png\n a.png \n").len(), 2);
    let spec = DatasetSpec { manifest: Some("list.txt".into()), val_count: 0, ..spec };
    let (train, _) = Dataset::load(&spec, 2, 0).unwrap();
    assert_eq!(train.len(), 2);

    let missing = DatasetSpec { manifest: Some("absent.txt".into()), ..spec };
    assert!(Dataset::load(&missing, 2, 0).is_err());
}
