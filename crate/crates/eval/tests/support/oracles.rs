//! Brute-force recomputations of the metrics and random inputs for them.
//!
//! Shared by the eval integration tests and the acceptance target.

use rand::Rng;

const POOL: &[&str] = &[
    "/3/search/person",
    "/3/search/movie",
    "/3/person/{person_id}",
    "/3/person/{person_id}/movie_credits",
    "/3/movie/{movie_id}",
    "/3/movie/{movie_id}/credits",
    "/3/tv/{tv_id}",
    "/3/genre/movie/list",
];

/// Random called paths (duplicates allowed) and a non-empty ground truth.
pub fn path_instance<R: Rng>(rng: &mut R) -> (Vec<String>, Vec<String>) {
    let pick = |rng: &mut R, n: usize| -> Vec<String> {
        (0..n).map(|_| POOL[rng.gen_range(0..POOL.len())].to_string()).collect()
    };
    let called_len = rng.gen_range(0..10);
    let gt_len = rng.gen_range(1..6);
    (pick(rng, called_len), pick(rng, gt_len))
}

/// |distinct(gt) ∩ called| / |distinct(gt)| by linear scans.
pub fn brute_path_rate(called: &[String], gt: &[String]) -> f64 {
    let mut distinct: Vec<&String> = Vec::new();
    for g in gt {
        if !distinct.contains(&g) {
            distinct.push(g);
        }
    }
    let hit = distinct.iter().filter(|g| called.iter().any(|c| c == **g)).count();
    hit as f64 / distinct.len() as f64
}

/// Per-scenario success and optional accuracy for a suite of 1..=60.
pub fn suite_instance<R: Rng>(rng: &mut R) -> (Vec<bool>, Vec<Option<bool>>) {
    let n = rng.gen_range(1..=60);
    let success = (0..n).map(|_| rng.gen_bool(0.6)).collect();
    let accuracy = (0..n).map(|_| rng.gen_bool(0.7).then(|| rng.gen_bool(0.5))).collect();
    (success, accuracy)
}

/// Prefix averages at each decile, the prefix being the smallest count
/// covering that fraction of the suite.
pub fn prefix_series(success: &[bool], accuracy: &[Option<bool>]) -> Vec<(f64, f64, Option<f64>)> {
    let n = success.len();
    (1..=10)
        .map(|d| {
            let mut k = 0;
            while 10 * k < d * n {
                k += 1;
            }
            let mut ok = 0;
            for s in &success[..k] {
                if *s {
                    ok += 1;
                }
            }
            let (mut scored, mut right) = (0, 0);
            for a in accuracy[..k].iter().flatten() {
                scored += 1;
                if *a {
                    right += 1;
                }
            }
            let acc = if scored == 0 { None } else { Some(right as f64 / scored as f64) };
            (d as f64 / 10.0, ok as f64 / k as f64, acc)
        })
        .collect()
}
