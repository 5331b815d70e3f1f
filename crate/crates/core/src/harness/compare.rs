use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

use super::eval::RegionMetrics;
use super::train::{pretrain_base, train_adapter, write_run};
use super::{HarnessError, RunConfig};

/// Final held-out metrics of one strategy across seeds.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StrategyRow {
    pub label: String,
    pub per_seed: Vec<RegionMetrics>,
    /// Median over seeds of `l_face + l_hand`.
    pub median_regional: f64,
    pub median_global: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Comparison {
    pub seeds: Vec<u64>,
    pub rows: Vec<StrategyRow>,
    /// `wins[a][b]`: seeds on which row `a` has strictly lower
    /// `l_face + l_hand` than row `b`.
    pub wins: Vec<Vec<usize>>,
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Fine-tunes every config from the same pretrained backbone for each seed
/// and tabulates final held-out metrics.
///
/// The configs may differ only in strategy (and output directory); their
/// own seeds are replaced by `seeds`. With `out`, each run is written to
/// `out/seed-<s>/<index>-<strategy>`.
pub fn compare_strategies(cfgs: &[RunConfig], seeds: &[u64], out: Option<&Path>) -> Result<Comparison, HarnessError> {
    let first = cfgs.first().ok_or_else(|| HarnessError::Config("no configs to compare".into()))?;
    if seeds.is_empty() {
        return Err(HarnessError::Config("no seeds to compare over".into()));
    }
    for (i, c) in cfgs.iter().enumerate() {
        c.validate()?;
        if !first.same_experiment(c) {
            return Err(HarnessError::Mismatch(format!(
                "config {i} differs from config 0 in more than the strategy"
            )));
        }
    }
    let mut per: Vec<Vec<RegionMetrics>> = vec![Vec::new(); cfgs.len()];
    for &seed in seeds {
        let seeded = RunConfig {
            seed,
            ..first.clone()
        };
        let (base, base_params) = pretrain_base(&seeded)?;
        for (i, c) in cfgs.iter().enumerate() {
            let cfg = RunConfig { seed, ..c.clone() };
            let record = train_adapter(&cfg, &base, &base_params)?;
            if let Some(dir) = out {
                let label = cfg.strategy.label().replace(|ch: char| !ch.is_ascii_alphanumeric() && ch != '-', "_");
                write_run(&record, &dir.join(format!("seed-{seed}")).join(format!("{i}-{label}")))?;
            }
            per[i].push(*record.final_eval().expect("evaluated at step 0"));
        }
    }
    let rows: Vec<StrategyRow> = cfgs
        .iter()
        .zip(per)
        .map(|(c, per_seed)| StrategyRow {
            label: c.strategy.label(),
            median_regional: median(&per_seed.iter().map(RegionMetrics::regional).collect::<Vec<_>>()),
            median_global: median(&per_seed.iter().map(|m| m.l_global).collect::<Vec<_>>()),
            per_seed,
        })
        .collect();
    let wins = rows
        .iter()
        .map(|a| {
            rows.iter()
                .map(|b| {
                    a.per_seed
                        .iter()
                        .zip(&b.per_seed)
                        .filter(|(x, y)| x.regional() < y.regional())
                        .count()
                })
                .collect()
        })
        .collect();
    Ok(Comparison {
        seeds: seeds.to_vec(),
        rows,
        wins,
    })
}

impl Comparison {
    /// Plain-text table: medians per strategy, then pairwise wins on
    /// `l_face + l_hand`.
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "seeds: {:?}", self.seeds);
        let _ = writeln!(s, "{:<24} {:>14} {:>14}", "strategy", "median face+hand", "median global");
        for r in &self.rows {
            let _ = writeln!(s, "{:<24} {:>16.6e} {:>14.6e}", r.label, r.median_regional, r.median_global);
        }
        let _ = writeln!(s, "wins on face+hand (row beats column):");
        for (i, r) in self.rows.iter().enumerate() {
            let cells: Vec<String> = self.wins[i].iter().map(|w| w.to_string()).collect();
            let _ = writeln!(s, "{:<24} {}", r.label, cells.join(" "));
        }
        s
    }
}
