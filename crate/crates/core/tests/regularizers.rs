use crgan::augment::AugmentSpec;
use crgan::regularizers::*;
use crgan::tensor::{self as t, finite_diff_check, Tape, Tensor};
use crgan::Rng;
use proptest::prelude::*;

fn rows(n: usize, d: usize, v: Vec<f64>) -> Tensor {
    Tensor::new(vec![n, d], v).unwrap()
}

fn tape_of(x: &Tensor) -> Tape {
    x.tape().cloned().unwrap_or_default()
}

fn linear(w: &Tensor) -> impl Fn(&Tensor) -> crgan::Result<Tensor> + '_ {
    move |x: &Tensor| t::matmul(x, &t::reshape(w, &[w.numel(), 1])?)
}

fn batch(rng: &mut Rng, n: usize, d: usize) -> Tensor {
    rows(n, d, rng.normal_vec(n * d, 1.0))
}

#[test]
fn consistency_examples() {
    let a = vec![rows(1, 2, vec![1.0, 2.0])];
    let b = vec![rows(1, 2, vec![1.0, 4.0])];
    assert_eq!(consistency_loss(&a, &b, &LayerRule::Final).unwrap().item(), 4.0);
    assert_eq!(consistency_loss(&a, &a, &LayerRule::Final).unwrap().item(), 0.0);
    assert!(consistency_loss(&a, &[], &LayerRule::Final).is_err());
}

#[test]
fn layer_weighting_matches_direct_sum() {
    let mut rng = Rng::new(2, "layers");
    let (n, dims) = (3, [4usize, 2]);
    let x: Vec<Tensor> = dims.iter().map(|&d| batch(&mut rng, n, d)).collect();
    let tx: Vec<Tensor> = dims.iter().map(|&d| batch(&mut rng, n, d)).collect();
    let sq = |j: usize| -> f64 {
        let d = dims[j];
        (0..n)
            .map(|i| (0..d).map(|k| (x[j].data()[i * d + k] - tx[j].data()[i * d + k]).powi(2)).sum::<f64>())
            .sum::<f64>()
            / n as f64
    };
    let equal = consistency_loss(&x, &tx, &"range:1:2:equal".parse().unwrap()).unwrap().item();
    let inv = consistency_loss(&x, &tx, &"range:1:2:invdim".parse().unwrap()).unwrap().item();
    assert!((equal - (sq(0) + sq(1))).abs() < 1e-12);
    assert!((inv - (sq(0) / 4.0 + sq(1) / 2.0)).abs() < 1e-12);
    let second = consistency_loss(&x, &tx, &"range:2:2:equal".parse().unwrap()).unwrap().item();
    assert_eq!(second, consistency_loss(&x, &tx, &LayerRule::Final).unwrap().item());
    assert!(consistency_loss(&x, &tx, &"range:1:3:equal".parse().unwrap()).is_err());
}

#[test]
fn cr_pairs_modes() {
    let mut rng = Rng::new(0, "pairs");
    let real = Tensor::full(&[64, 2], 1.0);
    let fake = Tensor::full(&[64, 2], -1.0);
    let aug = AugmentSpec::GaussianNoise { sigma: 0.1 };
    let r = cr_pairs(CrMode::Real, &real, &fake, &aug, &mut rng).unwrap();
    assert_eq!(r.len(), 1);
    assert_eq!(r[0].x.shape(), &[64, 2]);
    assert_eq!(r[0].source, Source::Real);
    assert_eq!(cr_pairs(CrMode::All, &real, &fake, &aug, &mut rng).unwrap().len(), 2);
    for p in cr_pairs(CrMode::Fake, &real, &fake, &aug, &mut rng).unwrap() {
        assert_eq!(p.source, Source::Fake);
        assert!(p.x.data().iter().all(|&v| v == -1.0));
    }
    assert!(cr_pairs(CrMode::Real, &Tensor::zeros(&[0, 2]), &fake, &aug, &mut rng).is_err());
}

#[test]
fn gp_examples() {
    let mut rng = Rng::new(1, "gp");
    let (real, fake) = (batch(&mut rng, 8, 2), batch(&mut rng, 8, 2));
    let unit = Tensor::new(vec![2], vec![0.6, 0.8]).unwrap();
    let tape = Tape::new();
    let p = gradient_penalty(&linear(&unit), &tape, &real, &fake, &mut rng).unwrap().item();
    assert!(p.abs() < 1e-20, "{p}");
    let w = Tensor::new(vec![2], vec![3.0, 4.0]).unwrap();
    let p = gradient_penalty(&linear(&w), &tape, &real, &fake, &mut rng).unwrap().item();
    assert!((p - 16.0).abs() < 1e-9);
}

#[test]
fn linear_closed_forms_on_random_weights() {
    let mut rng = Rng::new(3, "closed-forms");
    let mut spec = RegSpec::new(RegKind::Dr);
    spec.dr_noise_scale = 0.0;
    for _ in 0..100 {
        let d = 1 + rng.below(6) as usize;
        let w = Tensor::new(vec![d], rng.normal_vec(d, 2.0)).unwrap();
        let norm = w.data().iter().map(|v| v * v).sum::<f64>().sqrt();
        let (real, fake) = (batch(&mut rng, 5, d), batch(&mut rng, 5, d));
        let tape = Tape::new();
        let gp = gradient_penalty(&linear(&w), &tape, &real, &fake, &mut rng).unwrap().item();
        let jsr = jsr_penalty(&linear(&w), &tape, &real, &fake).unwrap().item();
        let dr = dragan_penalty(&linear(&w), &tape, &real, &mut rng, &spec).unwrap().item();
        assert!((gp - (norm - 1.0).powi(2)).abs() < 1e-9);
        assert!((jsr - 2.0 * norm * norm).abs() < 1e-9);
        assert!((dr - (norm - 1.0).powi(2)).abs() < 1e-9);
    }
}

#[test]
fn gp_gradient_wrt_weights_matches_finite_differences() {
    let mut rng = Rng::new(5, "gp-fd");
    let (real, fake) = (batch(&mut rng, 4, 3), batch(&mut rng, 4, 3));
    let w0 = Tensor::new(vec![3], vec![0.7, -1.2, 2.0]).unwrap();
    let seed = 9;
    let e = finite_diff_check(
        |w| {
            let mut r = Rng::new(seed, "eps");
            gradient_penalty(&linear(w), &tape_of(w), &real, &fake, &mut r)
        },
        &w0,
        1e-6,
    )
    .unwrap();
    assert!(e < 1e-5, "{e}");

    // Nonlinear critic: second-order path through tanh.
    let w1 = Tensor::new(vec![3, 4], rng.normal_vec(12, 0.8)).unwrap();
    let e = finite_diff_check(
        |v| {
            let d = |x: &Tensor| t::matmul(&t::tanh(&t::matmul(x, &w1)?)?, &t::reshape(v, &[4, 1])?);
            let mut r = Rng::new(seed, "eps");
            gradient_penalty(&d, &tape_of(v), &real, &fake, &mut r)
        },
        &Tensor::new(vec![4], vec![0.5, -0.3, 0.9, 1.1]).unwrap(),
        1e-6,
    )
    .unwrap();
    assert!(e < 1e-5, "{e}");
}

#[test]
fn dragan_examples() {
    let mut rng = Rng::new(6, "dr");
    let real = batch(&mut rng, 16, 2);
    let unit = Tensor::new(vec![2], vec![0.6, 0.8]).unwrap();
    let tape = Tape::new();
    let spec = RegSpec::new(RegKind::Dr);
    assert!(dragan_penalty(&linear(&unit), &tape, &real, &mut rng, &spec).unwrap().item() < 1e-20);

    let quad = |x: &Tensor| t::l2_norm_sq(x);
    let mut s0 = spec.clone();
    s0.dr_noise_scale = 0.0;
    let at = rows(1, 2, vec![1.0, 0.0]);
    let p = dragan_penalty(&quad, &tape, &at, &mut rng, &s0).unwrap().item();
    assert!((p - 1.0).abs() < 1e-9);
    // A constant batch has zero spread, so the perturbation vanishes.
    let flat = rows(2, 2, vec![0.5; 4]);
    let p = dragan_penalty(&quad, &tape, &flat, &mut rng, &spec).unwrap().item();
    assert!((p - (2f64.sqrt() - 1.0).powi(2)).abs() < 1e-9);
}

#[test]
fn jsr_examples() {
    let mut rng = Rng::new(7, "jsr");
    let (real, fake) = (batch(&mut rng, 6, 2), batch(&mut rng, 6, 2));
    let tape = Tape::new();
    let w = Tensor::new(vec![2], vec![3.0, 4.0]).unwrap();
    assert!((jsr_penalty(&linear(&w), &tape, &real, &fake).unwrap().item() - 50.0).abs() < 1e-9);
    let constant = |x: &Tensor| Ok(Tensor::full(&[x.shape()[0], 1], 3.0));
    assert_eq!(jsr_penalty(&constant, &tape, &real, &fake).unwrap().item(), 0.0);
    let biased = |x: &Tensor| t::add_scalar(&linear(&w)(x)?, 7.5);
    assert_eq!(
        jsr_penalty(&biased, &tape, &real, &fake).unwrap().item(),
        jsr_penalty(&linear(&w), &tape, &real, &fake).unwrap().item()
    );
}

#[test]
fn total_disc_loss_examples() {
    let (l, r) = (Tensor::scalar(1.0), Tensor::scalar(0.5));
    assert_eq!(total_disc_loss(&l, &r, 10.0).unwrap().item(), 6.0);
    assert_eq!(total_disc_loss(&l, &r, 0.0).unwrap().item(), 1.0);
    assert!(total_disc_loss(&l, &r, -1.0).is_err());
    assert_eq!(RegKind::Jsr.default_lambda(), 0.1);
}

fn taps_strategy() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (1usize..12).prop_flat_map(|n| (proptest::collection::vec(-5.0f64..5.0, n), proptest::collection::vec(-5.0f64..5.0, n)))
}

proptest! {
    #[test]
    fn consistency_is_nonnegative_and_symmetric((a, b) in taps_strategy()) {
        let n = a.len();
        let x = vec![rows(n, 1, a.clone())];
        let y = vec![rows(n, 1, b.clone())];
        let ab = consistency_loss(&x, &y, &LayerRule::Final).unwrap().item();
        let ba = consistency_loss(&y, &x, &LayerRule::Final).unwrap().item();
        prop_assert!(ab >= 0.0);
        prop_assert_eq!(ab, ba);
        prop_assert_eq!(ab == 0.0, a == b);
    }
}
