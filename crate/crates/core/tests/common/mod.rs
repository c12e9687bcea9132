#![allow(dead_code)]

use std::io::Write;

use scanb::kernel::KernelSpec;
use scanb::mmd::h_statistic;
use scanb::Sample;

/// Exact finite-pool `Var[Z_B]`: both moments averaged over every ordered
/// 6-tuple of distinct indices.
pub fn exhaustive_variance(pool: &[Sample], kernel: &KernelSpec, block_size: usize, n_blocks: usize) -> f64 {
    let n = pool.len();
    let (mut count, mut s1, mut s2, mut s11, mut s22, mut s12) = (0f64, 0f64, 0f64, 0f64, 0f64, 0f64);
    let idx: Vec<usize> = (0..n).collect();
    for &a in &idx {
        for &b in &idx {
            for &c in &idx {
                for &d in &idx {
                    for &e in &idx {
                        for &f in &idx {
                            let t = [a, b, c, d, e, f];
                            if (0..6).any(|i| (i + 1..6).any(|j| t[i] == t[j])) {
                                continue;
                            }
                            let h1 = h_statistic(kernel, &pool[a], &pool[b], &pool[e], &pool[f]).unwrap();
                            let h2 = h_statistic(kernel, &pool[c], &pool[d], &pool[e], &pool[f]).unwrap();
                            count += 1.0;
                            s1 += h1;
                            s2 += h2;
                            s11 += h1 * h1;
                            s22 += h2 * h2;
                            s12 += h1 * h2;
                        }
                    }
                }
            }
        }
    }
    let e_h2 = 0.5 * (s11 + s22) / count;
    let cov = s12 / count - (s1 / count) * (s2 / count);
    let pairs = (block_size * (block_size - 1) / 2) as f64;
    let nb = n_blocks as f64;
    (e_h2 / nb + (nb - 1.0) / nb * cov) / pairs
}

/// One visible result line, written past the test harness's capture.
pub fn report(criterion: u32, pass: bool, detail: &str) {
    let line = format!(
        "criterion {criterion}: {} - {detail}\n",
        if pass { "PASS" } else { "FAIL" }
    );
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(line.as_bytes());
    let _ = out.flush();
}
