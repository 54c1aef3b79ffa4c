#[path = "support/oracles.rs"]
mod oracles;

use rand::rngs::StdRng;
use rand::SeedableRng;
use toolcoder_eval::{accuracy, cumulative_series, path_rate};

#[test]
fn path_rate_matches_brute_force() {
    let mut rng = StdRng::seed_from_u64(17);
    for _ in 0..1000 {
        let (called, gt) = oracles::path_instance(&mut rng);
        assert_eq!(path_rate(&called, &gt).unwrap(), oracles::brute_path_rate(&called, &gt), "{called:?} {gt:?}");
    }
}

#[test]
fn cumulative_series_matches_prefix_averages() {
    let mut rng = StdRng::seed_from_u64(23);
    for _ in 0..100 {
        let (success, acc) = oracles::suite_instance(&mut rng);
        let got: Vec<_> = cumulative_series(&success, &acc)
            .into_iter()
            .map(|p| (p.proportion, p.cum_success, p.cum_accuracy))
            .collect();
        assert_eq!(got, oracles::prefix_series(&success, &acc));
    }
}

#[test]
fn final_point_is_the_overall_rate() {
    let success = [true, false, true, true, false, false, true];
    let acc = [Some(true), None, Some(false), None, None, None, Some(true)];
    let last = cumulative_series(&success, &acc).pop().unwrap();
    assert_eq!(last.cum_success, 4.0 / 7.0);
    assert_eq!(last.cum_accuracy, Some(2.0 / 3.0));
}

#[test]
fn trailing_number_answers() {
    for (answer, gt, expected) in [
        ("Number of movies directed by Sofia Coppola: 8", "8", true),
        ("Number of movies directed by Sofia Coppola: 9", "8", false),
        ("8 movies, rating 7.5", "7.5", true),
        ("none", "8", false),
        ("Lost in Translation", "lost in translation", true),
    ] {
        assert_eq!(accuracy(Some(answer), gt, true), expected, "{answer} vs {gt}");
    }
}
