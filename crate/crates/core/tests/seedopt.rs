use silverforge::lab::{median, NoisyCurves};
use silverforge::seedharness::{early_stop_correlation, seed_optimize, SeedRunConfig, SeedSource};

const FRACTIONS: [f64; 6] = [0.1, 0.2, 0.3, 0.5, 0.7, 0.9];

#[test]
fn median_correlation_grows_with_the_checkpoint() {
    let seeds: Vec<u64> = (0..10).collect();
    let mut per_fraction = vec![Vec::new(); FRACTIONS.len()];
    for trial in 0..50 {
        let points = early_stop_correlation(&NoisyCurves::new(trial), &seeds, &FRACTIONS).unwrap();
        for (slot, p) in per_fraction.iter_mut().zip(&points) {
            slot.push(p.spearman.unwrap());
        }
    }
    let medians: Vec<f64> = per_fraction.iter().map(|v| median(v)).collect();
    assert!(medians.windows(2).all(|w| w[0] <= w[1]), "{medians:?}");
    assert!(*medians.last().unwrap() > medians[0]);
}

#[test]
fn outcome_rows_cover_every_seed_and_mark_one_winner() {
    let curves = NoisyCurves::new(3);
    let cfg = SeedRunConfig {
        num_seeds: 4,
        early_stop_fraction: 0.3,
        seeds: SeedSource::Explicit(vec![9, 2, 7, 4]),
    };
    let out = seed_optimize(&curves, &cfg).unwrap();
    assert_eq!(
        out.rows.iter().map(|r| r.seed).collect::<Vec<_>>(),
        vec![9, 2, 7, 4]
    );
    let winners: Vec<_> = out.rows.iter().filter(|r| r.winner).collect();
    assert_eq!(winners.len(), 1);
    assert_eq!(winners[0].seed, out.best_seed);
    assert_eq!(winners[0].final_dev, Some(out.final_dev));
    assert!(out
        .rows
        .iter()
        .filter(|r| !r.winner)
        .all(|r| r.final_dev.is_none()));
    let best_partial = out
        .rows
        .iter()
        .map(|r| r.partial_dev)
        .fold(f64::MIN, f64::max);
    assert_eq!(winners[0].partial_dev, best_partial);
}

#[test]
fn results_do_not_depend_on_the_thread_count() {
    let curves = NoisyCurves::new(11);
    let cfg = SeedRunConfig::default();
    let one = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .unwrap();
    let four = rayon::ThreadPoolBuilder::new()
        .num_threads(4)
        .build()
        .unwrap();
    let a = one.install(|| seed_optimize(&curves, &cfg).unwrap());
    let b = four.install(|| seed_optimize(&curves, &cfg).unwrap());
    assert_eq!(a, b);
}
