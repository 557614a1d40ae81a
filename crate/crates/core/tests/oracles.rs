mod common;

use bellcert::certification::tsirelson_bound;
use bellcert::entropy::{certified_min_entropy, certified_shannon_min, OutcomeBounds};
use bellcert::scenario::classical_bound;
use bellcert::Level;
use common::{alpha, min_entropy_oracle, qubit_bell_value, random_box, shannon_min_oracle, TABLE};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn qubit_oracle_reaches_chsh_bound() {
    let chsh = alpha("1,1;1,-1");
    let q = qubit_bell_value(&chsh, 10, 1);
    assert!((q - 2.0 * 2f64.sqrt()).abs() < 1e-6, "{q}");
    let b: f64 = tsirelson_bound(&chsh, Level::One).unwrap();
    assert!((q - b).abs() < 1e-4);
}

#[test]
fn qubit_value_never_exceeds_relaxation() {
    for (name, a, _) in TABLE {
        let a = alpha(a);
        let b: f64 = tsirelson_bound(&a, Level::OnePlusAB).unwrap();
        let q = qubit_bell_value(&a, 40, 7);
        assert!(q <= b + 1e-6, "row {name}: qubit {q} above bound {b}");
        assert!(q >= classical_bound(&a) as f64 - 1e-9, "row {name}: qubit {q} below classical");
    }
}

#[test]
fn oracles_agree_on_known_boxes() {
    let b = OutcomeBounds::new([0.2; 4], [0.4; 4]).unwrap();
    let h = shannon_min_oracle(&b, 40);
    assert!((h - 1.921928).abs() < 1e-6, "{h}");
    assert!((min_entropy_oracle(&b, 40) - (-(0.4f64).log2())).abs() < 1e-9);
}

#[test]
fn certified_entropies_match_oracles() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..200 {
        let b = random_box(&mut rng);
        let (h, _) = certified_shannon_min(&b).unwrap();
        let hmin = certified_min_entropy(&b).unwrap();
        let ho = shannon_min_oracle(&b, 20);
        let hmo = min_entropy_oracle(&b, 20);
        assert!((h - ho).abs() < 1e-6, "{b:?}: {h} vs oracle {ho}");
        assert!((hmin - hmo).abs() < 1e-6, "{b:?}: {hmin} vs oracle {hmo}");
    }
}
