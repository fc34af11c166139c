#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Reference bout finder: greedy left to right, and for each admissible
/// start the longest interval whose every full 10-minute window holds at
/// most 2 sub-moderate minutes and whose last two minutes are moderate.
/// Windows are counted from scratch for every candidate interval.
pub fn brute_force_bouts(mets: &[f64]) -> Vec<(usize, usize, f64)> {
    let n = mets.len();
    let active = |i: usize| mets[i] >= 3.0;
    let inactive_in = |a: usize, b: usize| (a..=b).filter(|&i| !active(i)).count();
    let windows_ok = |s: usize, e: usize| (s..=e + 1 - 10).all(|k| inactive_in(k, k + 9) <= 2);
    let mut out = Vec::new();
    let mut pos = 0;
    while pos + 10 <= n {
        let Some(s) = (pos..=n - 10).find(|&s| active(s) && inactive_in(s, s + 9) <= 2) else {
            break;
        };
        let mut best = None;
        let mut e = s + 9;
        while e < n && windows_ok(s, e) {
            if active(e) && active(e - 1) {
                best = Some(e);
            }
            e += 1;
        }
        match best {
            Some(e) if e + 1 - s >= 10 => {
                out.push((s, e, mets[s..=e].iter().sum()));
                pos = e + 1;
            }
            _ => pos = s + 1,
        }
    }
    out
}

/// Random day with roughly `density` of its minutes active, drawn in runs so
/// that both long bouts and near-miss patterns occur.
pub fn random_day(density: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut mets = Vec::with_capacity(1440);
    let mut active = rng.random_bool(density);
    while mets.len() < 1440 {
        let run = rng.random_range(1..=if active { 14 } else { 6 });
        for _ in 0..run.min(1440 - mets.len()) {
            let v = if active ^ rng.random_bool(0.15) { rng.random_range(3.0..8.0) } else { rng.random_range(0.9..2.99) };
            mets.push(v);
        }
        active = rng.random_bool(density);
    }
    mets
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
