use proptest::prelude::*;
use qkd_core::rng::{Domain, StreamRng};
use qkd_core::toeplitz::{toeplitz_hash, ToeplitzSpec};

fn naive(bits: &[u8], spec: &ToeplitzSpec) -> Vec<u8> {
    let n = spec.input_length;
    (0..spec.output_length)
        .map(|i| {
            let mut acc = 0u8;
            for (j, &b) in bits.iter().enumerate() {
                acc ^= spec.diagonal_seed[i + n - 1 - j] & b;
            }
            acc
        })
        .collect()
}

fn random_bits(rng: &mut StreamRng, n: usize) -> Vec<u8> {
    (0..n).map(|_| rng.bit()).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn packed_equals_naive(n in 1usize..2000, frac in 0.0f64..=1.0, seed in any::<u64>()) {
        let m = ((n as f64) * frac) as usize;
        let spec = ToeplitzSpec::random(n, m, seed).unwrap();
        let mut rng = StreamRng::new(seed, Domain::Test, 1);
        let x = random_bits(&mut rng, n);
        prop_assert_eq!(toeplitz_hash(&x, &spec).unwrap(), naive(&x, &spec));
    }

    #[test]
    fn linear_over_gf2(n in 1usize..700, seed in any::<u64>()) {
        let m = n / 2;
        let spec = ToeplitzSpec::random(n, m, seed).unwrap();
        let mut rng = StreamRng::new(seed, Domain::Test, 2);
        let a = random_bits(&mut rng, n);
        let b = random_bits(&mut rng, n);
        let ab: Vec<u8> = a.iter().zip(&b).map(|(x, y)| x ^ y).collect();
        let ta = toeplitz_hash(&a, &spec).unwrap();
        let tb = toeplitz_hash(&b, &spec).unwrap();
        let sum: Vec<u8> = ta.iter().zip(&tb).map(|(x, y)| x ^ y).collect();
        prop_assert_eq!(toeplitz_hash(&ab, &spec).unwrap(), sum);
    }
}

#[test]
fn packed_equals_naive_at_ten_thousand_bits() {
    for (n, m) in [(10_000, 37), (10_000, 640), (9_999, 1)] {
        let spec = ToeplitzSpec::random(n, m, n as u64 + m as u64).unwrap();
        let mut rng = StreamRng::new(5, Domain::Test, n as u64);
        let x = random_bits(&mut rng, n);
        assert_eq!(toeplitz_hash(&x, &spec).unwrap(), naive(&x, &spec));
    }
}

#[test]
fn collision_rate_is_two_to_minus_m() {
    let (n, m) = (64, 6);
    let mut rng = StreamRng::new(11, Domain::Test, 3);
    let x = random_bits(&mut rng, n);
    let mut y = x.clone();
    y[17] ^= 1;
    y[40] ^= 1;
    let trials = 10_000u32;
    let collisions = (0..trials)
        .filter(|&t| {
            let spec = ToeplitzSpec::random(n, m, 1000 + u64::from(t)).unwrap();
            toeplitz_hash(&x, &spec).unwrap() == toeplitz_hash(&y, &spec).unwrap()
        })
        .count() as f64;
    let p = 0.5f64.powi(m as i32);
    let mean = p * f64::from(trials);
    let sd = (f64::from(trials) * p * (1.0 - p)).sqrt();
    assert!(
        (collisions - mean).abs() <= 5.0 * sd,
        "{collisions} collisions, expected {mean} +- {sd}"
    );
}
