mod common;

use common::Surface;
use mpar_core::search::{search, SearchConfig, Strategy};

fn hits(strategy: Strategy, seeds: std::ops::Range<u64>) -> usize {
    seeds
        .filter(|&seed| {
            let surface = Surface::new(1000 + seed);
            let grid = surface.brute_force();
            let cutoff = grid[grid.len() / 20 - 1];
            let cfg = SearchConfig::new(50, strategy, seed);
            let res = search(&Surface::space(), &surface, &cfg, 1, None).unwrap();
            res.best.unwrap().val_accuracy >= cutoff
        })
        .count()
}

#[test]
fn guided_search_beats_random_on_surfaces() {
    let random = hits(Strategy::Random, 0..100);
    let guided = hits(Strategy::SurrogateGuided, 0..100);
    println!("top-5% hits over 100 surfaces: random {random}, guided {guided}");
    assert!(guided > random);
    assert!(guided >= 95);
}

#[test]
fn staged_search_narrows_every_stage() {
    for seed in 0..10 {
        let surface = Surface::new(seed);
        let mut cfg = SearchConfig::new(60, Strategy::SurrogateGuided, seed);
        cfg.stages = 3;
        let res = search(&Surface::space(), &surface, &cfg, 2, None).unwrap();
        assert_eq!(res.trials.len(), 60);
        for pair in res.stage_spaces.windows(2) {
            assert!(pair[1].is_subset_of(&pair[0], &[]));
            for name in pair[0].frozen() {
                assert_eq!(pair[1].get(name), pair[0].get(name));
            }
        }
        for t in &res.trials {
            assert!(res.stage_spaces[t.stage].contains(&t.config));
        }
    }
}

#[test]
fn search_is_reproducible() {
    let surface = Surface::new(42);
    let cfg = SearchConfig::new(25, Strategy::SurrogateGuided, 7);
    let run = |jobs| {
        let res = search(&Surface::space(), &surface, &cfg, jobs, None).unwrap();
        res.trials.into_iter().map(|t| (t.config, t.val_accuracy)).collect::<Vec<_>>()
    };
    assert_eq!(run(1), run(3));
}
