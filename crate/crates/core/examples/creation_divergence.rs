//! Account-creation histograms of user groups ranked by divergence from a baseline.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stancekit::analysis::{creation_histogram, divergence_ranking, UserSet, YearMonth, KL_EPSILON};

/// Users whose creation months cluster around `peak` with the given spread.
fn group(name: &str, n: usize, peak: YearMonth, spread: i32, rng: &mut ChaCha8Rng) -> stancekit::Result<UserSet> {
    let mut months = Vec::with_capacity(n);
    for _ in 0..n {
        let offset = rng.random_range(-spread..=spread);
        let total = peak.year * 12 + peak.month as i32 - 1 + offset;
        months.push(YearMonth::new(total.div_euclid(12), total.rem_euclid(12) as u32 + 1)?);
    }
    Ok(UserSet::new(name, months))
}

fn main() -> stancekit::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let baseline = group("random_sample", 3000, YearMonth::new(2015, 6)?, 70, &mut rng)?;
    let sets = vec![
        group("early_adopters", 800, YearMonth::new(2010, 1)?, 24, &mut rng)?,
        group("broad", 1500, YearMonth::new(2015, 1)?, 60, &mut rng)?,
        group("recent_wave", 900, YearMonth::new(2022, 10)?, 3, &mut rng)?,
    ];

    let hist = creation_histogram(&sets[2])?;
    println!("recent_wave spans {} months", hist.bins.len());

    let table = divergence_ranking(&sets, &baseline, false, KL_EPSILON)?;
    println!("{:<16} {:>6} {:>10} {:>10} {:>4} {:>4}", "set", "users", "KL", "BD", "kl#", "bd#");
    for r in &table.rows {
        println!(
            "{:<16} {:>6} {:>10.4} {:>10.4} {:>4} {:>4}",
            r.name, r.users, r.kl, r.bhattacharyya, r.kl_rank, r.bhattacharyya_rank
        );
    }
    println!("rankings agree: {}", table.rankings_agree);
    Ok(())
}
