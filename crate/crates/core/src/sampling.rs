//! Deterministic sample grids: a scrambled-start Halton sequence in a box.

pub const DEFAULT_SAMPLES: usize = 128;

const PRIMES: [u64; 12] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37];

fn radical_inverse(mut i: u64, base: u64) -> f64 {
    let inv = 1.0 / base as f64;
    let mut f = inv;
    let mut r = 0.0;
    while i > 0 {
        r += f * (i % base) as f64;
        i /= base;
        f *= inv;
    }
    r
}

/// `count` points of the Halton sequence mapped into `bounds`, starting at
/// index `seed + 1` (index 0 is the origin corner and is skipped).
pub fn halton_box(bounds: &[(f64, f64)], count: usize, seed: u64) -> Vec<Vec<f64>> {
    assert!(bounds.len() <= PRIMES.len(), "at most 12 dimensions supported");
    (0..count as u64)
        .map(|k| {
            let idx = seed.wrapping_mul(7919) + k + 1;
            bounds
                .iter()
                .zip(PRIMES.iter())
                .map(|(&(lo, hi), &p)| lo + (hi - lo) * radical_inverse(idx, p))
                .collect()
        })
        .collect()
}

/// Symmetric box `[-a, a]^n`.
pub fn cube(n: usize, a: f64) -> Vec<(f64, f64)> {
    vec![(-a, a); n]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn points_stay_in_box_and_are_deterministic() {
        let b = cube(3, 1.0);
        let p = halton_box(&b, 128, 0);
        let q = halton_box(&b, 128, 0);
        assert_eq!(p, q);
        assert!(p.iter().flatten().all(|x| (-1.0..=1.0).contains(x)));
        assert_ne!(halton_box(&b, 4, 1), halton_box(&b, 4, 0));
    }
}
