use mergelab::{merge_pair, merge_soup, Checkpoint, IntTensorPolicy, MergePolicy, Tensor};
use num_bigint::BigInt;
use num_rational::BigRational;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_shape(rng: &mut impl Rng) -> Vec<usize> {
    (0..rng.random_range(1..=3))
        .map(|_| rng.random_range(1..=6))
        .collect()
}

fn random_pair_f32(rng: &mut impl Rng, tensors: usize) -> (Checkpoint, Checkpoint) {
    let mut a = Checkpoint::new();
    let mut b = Checkpoint::new();
    for i in 0..tensors {
        let shape = random_shape(rng);
        let n: usize = shape.iter().product();
        let va: Vec<f32> = (0..n).map(|_| rng.random_range(-10.0..10.0)).collect();
        let vb: Vec<f32> = (0..n).map(|_| rng.random_range(-10.0..10.0)).collect();
        a.insert(
            format!("t{i}"),
            Tensor::from_f32(shape.clone(), &va).unwrap(),
        )
        .unwrap();
        b.insert(format!("t{i}"), Tensor::from_f32(shape, &vb).unwrap())
            .unwrap();
    }
    (a, b)
}

/// Values spanning several orders of magnitude.
fn wide_f64(rng: &mut impl Rng) -> f64 {
    rng.random_range(-1.0..1.0) * 10f64.powi(rng.random_range(-3..4))
}

fn random_pair_f64(rng: &mut impl Rng, tensors: usize) -> (Checkpoint, Checkpoint) {
    let mut a = Checkpoint::new();
    let mut b = Checkpoint::new();
    for i in 0..tensors {
        let shape = random_shape(rng);
        let n: usize = shape.iter().product();
        let va: Vec<f64> = (0..n).map(|_| wide_f64(rng)).collect();
        let vb: Vec<f64> = (0..n).map(|_| wide_f64(rng)).collect();
        a.insert(
            format!("t{i}"),
            Tensor::from_f64(shape.clone(), &va).unwrap(),
        )
        .unwrap();
        b.insert(format!("t{i}"), Tensor::from_f64(shape, &vb).unwrap())
            .unwrap();
    }
    (a, b)
}

fn f32_ulp(x: f32) -> f64 {
    let x = x.abs();
    (x.next_up() - x) as f64
}

fn rational(x: f64) -> BigRational {
    BigRational::from_float(x).unwrap()
}

#[test]
fn f32_merge_matches_scalar_loop_within_one_ulp() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for case in 0..40 {
        let (a, b) = random_pair_f32(&mut rng, 10);
        let alpha = if case == 0 {
            0.3
        } else {
            rng.random_range(0.0..=1.0)
        };
        let m = merge_pair(&a, &b, &MergePolicy::new(alpha)).unwrap();
        for (name, t) in m.tensors() {
            let xa = a.tensor_values(name).unwrap();
            let xb = b.tensor_values(name).unwrap();
            let got = t.to_f64_vec();
            for i in 0..got.len() {
                let mut oracle = 0.0f64;
                oracle += (1.0 - alpha) * xa[i];
                oracle += alpha * xb[i];
                let err = (got[i] - oracle).abs();
                assert!(
                    err <= f32_ulp(got[i] as f32),
                    "{name}[{i}] alpha {alpha}: got {} oracle {oracle}",
                    got[i]
                );
            }
        }
    }
}

#[test]
fn f64_merge_brackets_exact_rational_value() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let one = BigRational::from_integer(BigInt::from(1));
    for _ in 0..30 {
        let (a, b) = random_pair_f64(&mut rng, 10);
        let alpha: f64 = rng.random_range(0.0..=1.0);
        let m = merge_pair(&a, &b, &MergePolicy::new(alpha)).unwrap();
        let ra = rational(alpha);
        for (name, t) in m.tensors() {
            let xa = a.tensor_values(name).unwrap();
            let xb = b.tensor_values(name).unwrap();
            for (i, got) in t.to_f64_vec().into_iter().enumerate() {
                let exact = (&one - &ra) * rational(xa[i]) + &ra * rational(xb[i]);
                assert!(
                    rational(got.next_down()) <= exact && exact <= rational(got.next_up()),
                    "{name}[{i}] alpha {alpha}: {got} not within one ulp of exact value"
                );
            }
        }
    }
}

#[test]
fn soup_of_two_is_midpoint_merge() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for _ in 0..20 {
        let (a, b) = random_pair_f64(&mut rng, 5);
        let soup = merge_soup(&[a.clone(), b.clone()], IntTensorPolicy::RequireEqual).unwrap();
        let mid = merge_pair(&a, &b, &MergePolicy::new(0.5)).unwrap();
        for (name, t) in soup.tensors() {
            let s = t.to_f64_vec();
            let m = mid.tensor_values(name).unwrap();
            for (x, y) in s.iter().zip(&m) {
                assert!(
                    x.next_down() <= *y && *y <= x.next_up(),
                    "{name}: soup {x} vs midpoint {y}"
                );
            }
        }
    }
}

#[test]
fn soup_of_three_scalars_is_exact_mean() {
    let models: Vec<Checkpoint> = [0.0, 3.0, 6.0]
        .iter()
        .map(|&v| {
            let mut cp = Checkpoint::new();
            cp.insert("w", Tensor::from_f32(vec![1], &[v]).unwrap())
                .unwrap();
            cp
        })
        .collect();
    let soup = merge_soup(&models, IntTensorPolicy::RequireEqual).unwrap();
    assert_eq!(soup.tensor_values("w").unwrap(), vec![3.0]);
}
