use crgan::augment::*;
use crgan::tensor::Tensor;
use crgan::Rng;
use proptest::prelude::*;

fn images(n: usize, c: usize, side: usize, seed: u64) -> Tensor {
    let mut rng = Rng::new(seed, "imgs");
    let v = (0..n * c * side * side).map(|_| rng.uniform() * 2.0 - 1.0).collect();
    Tensor::new(vec![n, c, side, side], v).unwrap()
}

#[test]
fn identity_and_zero_noise_are_exact() {
    let x = images(4, 3, 8, 0);
    let mut rng = Rng::new(0, "a");
    for spec in [AugmentSpec::Identity, AugmentSpec::GaussianNoise { sigma: 0.0 }, "identity+noise:0".parse().unwrap()] {
        let y = augment(&spec, &x, &mut rng).unwrap();
        let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&x), bits(&y));
    }
}

#[test]
fn shift_output_pixels_come_from_shifted_rows() {
    let side = 32;
    let x = images(6, 1, side, 1);
    let y = augment(&AugmentSpec::shift_flip(4), &x, &mut Rng::new(1, "shift")).unwrap();
    for i in 0..6 {
        let src = &x.data()[i * side * side..(i + 1) * side * side];
        let dst = &y.data()[i * side * side..(i + 1) * side * side];
        for r in 0..side {
            for c in 0..side {
                let v = dst[r * side + c];
                if v == 0.0 {
                    continue;
                }
                let found = (r.saturating_sub(4)..(r + 5).min(side)).any(|sr| src[sr * side..(sr + 1) * side].contains(&v));
                assert!(found, "pixel ({r},{c}) not from a row within 4");
            }
        }
    }
}

#[test]
fn forced_flip_twice_is_identity() {
    let x = images(1, 2, 8, 2);
    let shape = x.shape().to_vec();
    let mut img = x.to_vec();
    shift_flip_image(&mut img, &shape, true, 0, 0, 0.0);
    assert_ne!(img, x.to_vec());
    shift_flip_image(&mut img, &shape, true, 0, 0, 0.0);
    assert_eq!(img, x.to_vec());
    shift_flip_image(&mut img, &shape, false, 0, 0, 0.0);
    assert_eq!(img, x.to_vec());
}

#[test]
fn cutout_size_zero_is_identity_and_size_masks_square() {
    let x = images(1, 1, 8, 3);
    let shape = x.shape().to_vec();
    let mut img = x.to_vec();
    cutout_image(&mut img, &shape, 4, 4, 0, 0.0);
    assert_eq!(img, x.to_vec());
    cutout_image(&mut img, &shape, 4, 4, 4, 0.0);
    assert_eq!(img.iter().filter(|&&v| v == 0.0).count(), 16);
    let mut corner = x.to_vec();
    cutout_image(&mut corner, &shape, 0, 0, 4, 0.0);
    assert_eq!(corner.iter().filter(|&&v| v == 0.0).count(), 4);
}

#[test]
fn image_kinds_reject_points() {
    let pts = Tensor::zeros(&[4, 2]);
    let mut rng = Rng::new(0, "a");
    assert!(augment(&AugmentSpec::shift_flip(1), &pts, &mut rng).is_err());
    assert!(augment(&AugmentSpec::cutout(1), &pts, &mut rng).is_err());
    assert!(augment(&AugmentSpec::GaussianNoise { sigma: 0.1 }, &pts, &mut rng).is_ok());
}

#[test]
fn defaults() {
    assert_eq!(default_augmentation(&[3, 32, 32], 1.0).unwrap(), AugmentSpec::shift_flip(4));
    assert_eq!(default_augmentation(&[1, 16, 16], 1.0).unwrap(), AugmentSpec::shift_flip(2));
    assert_eq!(default_augmentation(&[1, 8, 8], 1.0).unwrap(), AugmentSpec::shift_flip(1));
    assert_eq!(default_augmentation(&[2], 2.0).unwrap(), AugmentSpec::GaussianNoise { sigma: 0.1 });
    assert!(default_augmentation(&[2, 2], 1.0).is_err());
}

#[test]
fn input_is_not_mutated_and_streams_replay() {
    let x = images(3, 1, 8, 4);
    let before = x.to_vec();
    let spec: AugmentSpec = "shiftflip:2+cutout:4".parse().unwrap();
    let a = augment(&spec, &x, &mut Rng::new(9, "aug")).unwrap();
    let b = augment(&spec, &x, &mut Rng::new(9, "aug")).unwrap();
    assert_eq!(x.to_vec(), before);
    assert_eq!(a.to_vec(), b.to_vec());
    assert_ne!(a.to_vec(), before);
}

proptest! {
    #[test]
    fn shape_and_range_preserved(seed in 0u64..1000, shift in 0usize..8, size in 0usize..=8, pad in -1.0f64..1.0) {
        let x = images(2, 2, 8, seed);
        let spec = AugmentSpec::Compose(vec![
            AugmentSpec::ShiftFlip { shift_px: shift, pad_value: pad },
            AugmentSpec::Cutout { size_px: size, fill_value: pad },
        ]);
        let y = augment(&spec, &x, &mut Rng::new(seed, "p")).unwrap();
        prop_assert_eq!(y.shape(), x.shape());
        let lo = x.data().iter().cloned().fold(pad, f64::min);
        let hi = x.data().iter().cloned().fold(pad, f64::max);
        prop_assert!(y.data().iter().all(|&v| v >= lo && v <= hi));
    }

    #[test]
    fn zero_shift_without_flip_is_identity(seed in 0u64..100) {
        let x = images(1, 3, 8, seed);
        let mut img = x.to_vec();
        shift_flip_image(&mut img, x.shape(), false, 0, 0, 0.0);
        prop_assert_eq!(img, x.to_vec());
    }
}
