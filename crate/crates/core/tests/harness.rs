use std::collections::HashMap;
use std::path::Path;

use fairmoo::diffusion::{Denoise, Normalization};
use fairmoo::fair_moo::{mpd_weights_closed, GramMatrix, SolverConfig, Strategy};
use fairmoo::harness::train::{GramLine, METRICS_HEADER};
use fairmoo::harness::{
    cli, compare_strategies, data, evaluate, pretrain_base, run_training, train_adapter, EvalSet, HarnessError,
    RunConfig,
};
use fairmoo::numerics::{NodeId, NumericsError, ParamNodes, SymMatrix, Tape, Tensor};

fn tiny(strategy: Strategy, out: &Path) -> RunConfig {
    let mut cfg = RunConfig {
        strategy,
        image_size: 8,
        hidden: vec![16, 16],
        steps: 12,
        batch_size: 4,
        eval_every: 5,
        eval_count: 4,
        probe_count: 4,
        out_dir: out.to_path_buf(),
        ..Default::default()
    };
    cfg.pretrain.steps = 20;
    cfg.adapter.rank = 2;
    cfg
}

/// Predicts `ε` exactly by looking up the noisy input it was built from.
struct Perfect {
    io: usize,
    table: HashMap<Vec<u64>, Vec<f64>>,
}

/// Predicts zero everywhere.
struct Zero {
    io: usize,
}

fn row_key(row: &[f64]) -> Vec<u64> {
    row.iter().map(|x| x.to_bits()).collect()
}

impl Denoise for Perfect {
    fn io_dim(&self) -> usize {
        self.io
    }

    fn record(&self, tape: &mut Tape, _: &ParamNodes, input: NodeId) -> Result<NodeId, NumericsError> {
        let x = tape.value(input).clone();
        let (b, w) = x.dims2()?;
        let mut out = Vec::with_capacity(b * self.io);
        for r in 0..b {
            out.extend_from_slice(&self.table[&row_key(&x.data()[r * w..r * w + self.io])]);
        }
        Ok(tape.constant(Tensor::new(vec![b, self.io], out)?))
    }
}

impl Denoise for Zero {
    fn io_dim(&self) -> usize {
        self.io
    }

    fn record(&self, tape: &mut Tape, _: &ParamNodes, input: NodeId) -> Result<NodeId, NumericsError> {
        let (b, _) = tape.value(input).dims2()?;
        Ok(tape.constant(Tensor::zeros(&[b, self.io])))
    }
}

#[test]
fn evaluation_of_known_predictors() {
    let cfg = RunConfig {
        image_size: 16,
        eval_count: 16,
        ..Default::default()
    };
    let schedule = data::schedule(&cfg).unwrap();
    let set = EvalSet::held_out(&cfg, &schedule).unwrap();
    let io = cfg.latent_size() * cfg.latent_size();
    let mut table = HashMap::new();
    let mut count = 0;
    for s in &set.samples {
        for r in 0..s.len() {
            let zt = &s.zt().data()[r * io..(r + 1) * io];
            table.insert(row_key(zt), s.eps.data()[r * io..(r + 1) * io].to_vec());
            count += io;
        }
    }
    let theta = fairmoo::ParamVector::from_flat("unused", vec![0.0]);
    let perfect = evaluate(&Perfect { io, table }, &theta, &set, Normalization::FullCount).unwrap();
    assert_eq!(perfect.as_array(), [0.0; 3]);

    // Zero prediction scores the mean of ε², which is 1 up to sampling error.
    let zero = evaluate(&Zero { io }, &theta, &set, Normalization::FullCount).unwrap();
    let sigma = (2.0 / count as f64).sqrt();
    assert!((zero.l_global - 1.0).abs() <= 3.0 * sigma, "{zero:?}");
    assert!(zero.l_face > 0.0 && zero.l_face < zero.l_global);
    assert!(zero.l_hand > 0.0 && zero.l_hand < zero.l_global);
}

#[test]
fn zero_steps_leave_the_adapter_inert() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny(Strategy::Mpd, dir.path());
    cfg.steps = 0;
    let record = run_training(&cfg).unwrap();
    assert!(record.metrics.is_empty());
    assert_eq!(record.initial_probe, record.final_probe);
    assert_eq!(record.evals.len(), 1);
    let csv = std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    assert_eq!(csv.trim_end(), METRICS_HEADER.join(","));
    let fresh = record.model().unwrap();
    let input = Tensor::from_fn(&[3, record.base.input_dim()], |i| (i as f64 * 0.37).sin());
    assert_eq!(
        fresh.predict(&record.adapter.params, &input).unwrap(),
        record.base.predict(&record.base_params, &input).unwrap()
    );
}

#[test]
fn runs_are_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let ra = run_training(&tiny(Strategy::Mpd, a.path())).unwrap();
    let rb = run_training(&tiny(Strategy::Mpd, b.path())).unwrap();
    assert_eq!(ra.adapter.params, rb.adapter.params);
    for name in ["metrics.csv", "eval.csv", "gram.jsonl", "checkpoint/adapter.json"] {
        let (x, y) = (a.path().join(name), b.path().join(name));
        if x.exists() {
            assert_eq!(std::fs::read(&x).unwrap(), std::fs::read(&y).unwrap(), "{name}");
        }
    }
    assert_eq!(ra.metrics.len(), 12);
    assert_eq!(ra.evals.iter().map(|e| e.step).collect::<Vec<_>>(), vec![0, 5, 10, 12]);
}

#[test]
fn global_only_is_least_squares_on_the_first_objective() {
    let dir = tempfile::tempdir().unwrap();
    let go = tiny(Strategy::GlobalOnly, dir.path());
    let (base, theta) = pretrain_base(&go).unwrap();
    let a = train_adapter(&go, &base, &theta).unwrap();
    let ls = RunConfig {
        strategy: Strategy::Ls {
            weights: Some(vec![1.0, 0.0, 0.0]),
        },
        ..go.clone()
    };
    let b = train_adapter(&ls, &base, &theta).unwrap();
    assert_eq!(a.adapter.params, b.adapter.params);
    assert_eq!(a.final_probe, b.final_probe);
    for m in &a.metrics {
        assert_eq!(m.weights.w, vec![1.0, 0.0, 0.0]);
    }
}

#[test]
fn logged_mpd_weights_match_an_offline_solve() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(Strategy::Mpd, dir.path());
    run_training(&cfg).unwrap();
    let text = std::fs::read_to_string(dir.path().join("gram.jsonl")).unwrap();
    let lines: Vec<GramLine> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), cfg.steps);
    for line in lines {
        assert_eq!(line.k, 3);
        let k = GramMatrix::from_sym(SymMatrix::from_rows(&line.entries).unwrap());
        let w = mpd_weights_closed(&k, &SolverConfig::default()).unwrap();
        for (a, b) in w.w.iter().zip(&line.w) {
            assert!((a - b).abs() <= 1e-10 * a.abs(), "step {}: {a} vs {b}", line.step);
            assert!(*b > 0.0);
        }
        assert_eq!(w.floor_applied, line.floor_applied);
    }
}

#[test]
fn comparisons_share_backbones() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(Strategy::Mpd, dir.path());
    let single = compare_strategies(std::slice::from_ref(&cfg), &[3], None).unwrap();
    assert_eq!(single.rows.len(), 1);
    assert_eq!(single.rows[0].per_seed.len(), 1);

    let twice = compare_strategies(&[cfg.clone(), cfg.clone()], &[3, 4], Some(dir.path())).unwrap();
    assert_eq!(twice.rows[0].per_seed, twice.rows[1].per_seed);
    assert_eq!(twice.rows[0].per_seed[0], single.rows[0].per_seed[0]);
    assert_eq!(twice.wins, vec![vec![0, 0], vec![0, 0]]);
    assert!(dir.path().join("seed-4").is_dir());

    let other = RunConfig {
        lr: 2e-3,
        ..cfg.clone()
    };
    assert!(matches!(
        compare_strategies(&[cfg, other], &[0], None),
        Err(HarnessError::Mismatch(_))
    ));
}

#[test]
fn invalid_configs_are_rejected() {
    let good = RunConfig::default().to_json();
    assert_eq!(RunConfig::from_json(&good).unwrap(), RunConfig::default());
    for (from, to) in [
        ("\"image_size\": 32", "\"image_size\": 2"),
        ("\"latent_factor\": 1", "\"latent_factor\": 3"),
        ("\"lr\": 0.001", "\"lr\": -1.0"),
        ("\"batch_size\": 16", "\"batch_size\": 0"),
        ("\"seed\": 0", "\"seed\": 0, \"unknown\": 1"),
    ] {
        assert!(good.contains(from), "{from}");
        let bad = good.replacen(from, to, 1);
        assert!(matches!(RunConfig::from_json(&bad), Err(HarnessError::Config(_))), "{to}");
    }
}

#[test]
fn checkpoints_evaluate_like_the_trained_model() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(Strategy::Si, &dir.path().join("run"));
    let record = run_training(&cfg).unwrap();
    let config = dir.path().join("config.json");
    std::fs::write(&config, cfg.to_json()).unwrap();
    let text = cli::eval(&dir.path().join("run/checkpoint"), &config).unwrap();
    let metrics: fairmoo::harness::RegionMetrics = serde_json::from_str(&text).unwrap();
    assert_eq!(&metrics, record.final_eval().unwrap());
}
