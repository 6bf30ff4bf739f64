use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sidmask::kernel::log_softmax;
use sidmask::LogitBlock;

/// Two-sum accumulation so the normalizer carries ~106 bits.
fn compensated_log_sum_exp(x: &[f64]) -> f64 {
    let m = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let (mut hi, mut lo) = (0.0f64, 0.0f64);
    for &xi in x {
        let term = (xi - m).exp();
        let s = hi + term;
        let bp = s - hi;
        lo += (hi - (s - bp)) + (term - bp);
        hi = s;
    }
    m + (hi + lo).ln()
}

#[test]
fn matches_compensated_reference_on_wide_rows() {
    let v = 2048;
    let mut rng = ChaCha8Rng::seed_from_u64(2048);
    for scale in [1.0, 8.0, 300.0] {
        let values: Vec<f64> = (0..4 * v).map(|_| rng.random_range(-scale..scale)).collect();
        let block = LogitBlock { rows: 4, vocab_size: v, values };
        let lp = log_softmax(&block).unwrap();
        for r in 0..4 {
            let x = block.row(r);
            let lse = compensated_log_sum_exp(x);
            for (i, &xi) in x.iter().enumerate() {
                let want = xi - lse;
                let got = lp[r * v + i];
                assert!((got - want).abs() <= 1e-6 * want.abs().max(1.0), "row {r} col {i}: {got} vs {want}");
            }
            let total: f64 = lp[r * v..(r + 1) * v].iter().map(|l| l.exp()).sum();
            assert!((total - 1.0).abs() < 1e-6);
        }
    }
}

#[test]
fn rows_are_independent_of_batch_layout() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let values: Vec<f64> = (0..3 * 17).map(|_| rng.random_range(-5.0..5.0)).collect();
    let all = log_softmax(&LogitBlock { rows: 3, vocab_size: 17, values: values.clone() }).unwrap();
    for r in 0..3 {
        let one = log_softmax(&LogitBlock { rows: 1, vocab_size: 17, values: values[r * 17..(r + 1) * 17].to_vec() })
            .unwrap();
        assert_eq!(&all[r * 17..(r + 1) * 17], &one[..]);
    }
}
