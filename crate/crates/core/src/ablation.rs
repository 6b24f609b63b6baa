//! Edge-type ablation: train and evaluate every non-empty subset of
//! {I, II, III} plus a no-graph baseline over several seeds.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{Gnn, ModelConfig, TrainConfig};
use crate::corpus::{Report, Vocabulary};
use crate::error::{CoreError, Result};
use crate::inference::{evaluate, render_table, DecodeMode};
use crate::model::Model;
use crate::training::{train, Outputs};
use crate::wordgraph::EdgeTypeSet;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    /// Edge subset, or `None` for the no-graph baseline.
    pub edges: Option<EdgeTypeSet>,
    /// Validation ROUGE-1 F1 per seed, in seed order.
    pub rouge1: Vec<f64>,
    pub median: f64,
}

impl AblationRow {
    pub fn label(&self) -> String {
        match self.edges {
            Some(e) => e.to_string(),
            None => "no graph".to_string(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub seeds: Vec<u64>,
    /// One row per non-empty edge subset, singletons first.
    pub rows: Vec<AblationRow>,
    pub baseline: AblationRow,
}

pub fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// Validation ROUGE-1 of one configuration trained with `seed` (used for
/// both initialization and batching), at its best validation epoch.
pub fn run_once(
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    train_set: &[Report],
    valid_set: &[Report],
    seed: u64,
) -> Result<f64> {
    let vocab = Vocabulary::build(train_set, train_cfg.min_count)?;
    let mut model = Model::new(model_cfg.clone(), vocab, seed)?;
    let cfg = TrainConfig {
        seed,
        threads: 1,
        ..train_cfg.clone()
    };
    let outcome = train(&mut model, train_set, valid_set, &cfg, &Outputs::default(), |_, _| true)?;
    model.params = outcome.best_params;
    let (report, _) = evaluate(&model, valid_set, cfg.max_decode_len, DecodeMode::Greedy, 1)?;
    Ok(report.overall.rouge1)
}

/// Runs are independent; with `threads > 1` they execute concurrently and
/// the report is identical to a sequential run.
pub fn ablate_edges(
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    train_set: &[Report],
    valid_set: &[Report],
    seeds: &[u64],
    threads: usize,
) -> Result<AblationReport> {
    if seeds.is_empty() {
        return Err(CoreError::Config("ablation needs at least one seed".into()));
    }
    if valid_set.is_empty() {
        return Err(CoreError::Data("ablation needs a validation set".into()));
    }
    let gnn = if model_cfg.gnn == Gnn::Off { Gnn::Gat } else { model_cfg.gnn };
    let mut settings: Vec<Option<EdgeTypeSet>> = EdgeTypeSet::nonempty_subsets().into_iter().map(Some).collect();
    settings.push(None);
    let jobs: Vec<(usize, u64)> = (0..settings.len())
        .flat_map(|i| seeds.iter().map(move |&s| (i, s)))
        .collect();
    let job = |&(i, seed): &(usize, u64)| -> Result<f64> {
        let cfg = match settings[i] {
            Some(edges) => ModelConfig {
                gnn,
                edge_types: edges,
                ..model_cfg.clone()
            },
            None => ModelConfig {
                gnn: Gnn::Off,
                ..model_cfg.clone()
            },
        };
        run_once(&cfg, train_cfg, train_set, valid_set, seed)
    };
    let scores: Vec<f64> = if threads <= 1 {
        jobs.iter().map(job).collect::<Result<_>>()?
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| CoreError::Config(format!("thread pool: {e}")))?;
        pool.install(|| jobs.par_iter().map(job).collect::<Result<_>>())?
    };
    let mut rows: Vec<AblationRow> = scores
        .chunks(seeds.len())
        .zip(&settings)
        .map(|(r, &edges)| AblationRow {
            edges,
            rouge1: r.to_vec(),
            median: median(r),
        })
        .collect();
    let baseline = rows.pop().expect("baseline row");
    Ok(AblationReport {
        seeds: seeds.to_vec(),
        rows,
        baseline,
    })
}

impl AblationReport {
    pub fn all_edges(&self) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.edges == Some(EdgeTypeSet::all()))
    }

    /// Whether the all-edges median R-1 is at least the baseline's.
    pub fn all_edges_beat_baseline(&self) -> bool {
        self.all_edges().is_some_and(|r| r.median >= self.baseline.median)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    /// Seven subset rows, then the baseline; R-1 x 100.
    pub fn to_table(&self) -> String {
        let seeds = self.seeds.iter().map(u64::to_string).collect::<Vec<_>>().join("/");
        let mut rows = vec![[
            "edges".to_string(),
            format!("R-1 per seed ({seeds})"),
            "median R-1".to_string(),
            "vs no graph".to_string(),
        ]];
        for r in self.rows.iter().chain(std::iter::once(&self.baseline)) {
            let per_seed = r.rouge1.iter().map(|x| format!("{:.2}", 100.0 * x)).collect::<Vec<_>>().join(" / ");
            let delta = if r.edges.is_some() {
                format!("{:+.2}", 100.0 * (r.median - self.baseline.median))
            } else {
                "-".to_string()
            };
            rows.push([r.label(), per_seed, format!("{:.2}", 100.0 * r.median), delta]);
        }
        render_table(&rows)
    }
}
