use convtts::dsp::{ToyCorpus, ToySpec};
use convtts::model::{LossWeights, Model, ModelConfig};
use convtts::textfront::SymbolTable;
use convtts::train::{Dataset, MetricsLog, Trainer, METRICS_HEADER};
use convtts::Error;

fn config() -> ModelConfig {
    ModelConfig {
        batch_size: 4,
        checkpoint_interval: 20,
        ..ModelConfig::tiny()
    }
}

fn data(cfg: &ModelConfig) -> (Dataset, SymbolTable) {
    let spec = ToySpec {
        utterances: 12,
        max_symbols: 6,
        ..ToySpec::default()
    };
    let corpus = ToyCorpus::generate(&spec, 4).unwrap();
    let vocab = SymbolTable::with_characters(&corpus.spec.alphabet);
    (Dataset::from_toy(&corpus, cfg, &vocab).unwrap(), vocab)
}

fn trainer(cfg: ModelConfig, seed: u64) -> Trainer {
    let (d, vocab) = data(&cfg);
    let model = Model::new(cfg, vocab, d.stats.clone(), seed).unwrap();
    Trainer::new(model, d, seed).unwrap()
}

#[test]
fn same_seed_same_trajectory() {
    let mut a = trainer(config(), 3);
    let mut b = trainer(config(), 3);
    let ra = a.run(100, None, None).unwrap();
    let rb = b.run(100, None, None).unwrap();
    assert_eq!(ra, rb);
    assert_eq!(a.model.store, b.model.store);

    let mut c = trainer(config(), 4);
    let rc = c.run(3, None, None).unwrap();
    assert_ne!(rc[2].loss, ra[2].loss);
}

#[test]
fn resume_continues_bit_for_bit() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("model.ckpt");
    let mut straight = trainer(config(), 8);
    let all = straight.run(100, None, None).unwrap();

    let mut first = trainer(config(), 8);
    first.run(50, None, Some(&ckpt)).unwrap();
    let (d, _) = data(&config());
    let mut resumed = Trainer::resume(&ckpt, d).unwrap();
    assert_eq!(resumed.step_count(), 50);
    let rest = resumed.run(50, None, None).unwrap();
    assert_eq!(&all[50..], &rest[..]);
    assert_eq!(straight.model.store, resumed.model.store);
    assert_eq!(straight.opt.m, resumed.opt.m);
    assert_eq!(straight.opt.v, resumed.opt.v);
}

#[test]
fn zero_learning_rate_freezes_parameters() {
    let cfg = ModelConfig {
        learning_rate: 0.0,
        ..config()
    };
    let mut t = trainer(cfg, 2);
    let before = t.model.store.clone();
    let reports = t.run(5, None, None).unwrap();
    assert_eq!(t.model.store, before);
    assert!(reports.iter().all(|r| r.lr == 0.0 && r.grad_norm > 0.0));
}

#[test]
fn reported_total_is_the_weighted_sum() {
    let cfg = ModelConfig {
        world_head: true,
        ..config()
    };
    let w = LossWeights::from_config(&cfg);
    let mut t = trainer(cfg, 5);
    for r in t.run(10, None, None).unwrap() {
        let l = r.loss;
        assert!((l.weighted_sum(&w) - l.total).abs() < 1e-10, "{l:?}");
        assert!(l.mel > 0.0 && l.linear > 0.0 && l.done > 0.0 && l.f0 > 0.0);
    }
}

#[test]
fn loss_decreases_on_toy_corpus() {
    let mut t = trainer(config(), 1);
    let reports = t.run(150, None, None).unwrap();
    let head: f64 = reports[..10].iter().map(|r| r.loss.total).sum::<f64>() / 10.0;
    let tail: f64 = reports[140..].iter().map(|r| r.loss.total).sum::<f64>() / 10.0;
    assert!(tail < 0.8 * head, "{head} -> {tail}");
}

#[test]
fn metrics_csv_has_header_and_one_row_per_step() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("metrics.csv");
    let mut t = trainer(config(), 6);
    {
        let mut log = MetricsLog::open(&path).unwrap();
        t.run(4, Some(&mut log), None).unwrap();
    }
    {
        // Reopening appends without a second header.
        let mut log = MetricsLog::open(&path).unwrap();
        t.run(2, Some(&mut log), None).unwrap();
    }
    let text = std::fs::read_to_string(&path).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], METRICS_HEADER);
    assert_eq!(lines.len(), 7);
    let width = METRICS_HEADER.split(',').count();
    for (i, line) in lines[1..].iter().enumerate() {
        let fields: Vec<&str> = line.split(',').collect();
        assert_eq!(fields.len(), width);
        assert_eq!(fields[0], (i + 1).to_string());
        assert!(fields.iter().all(|f| f.parse::<f64>().is_ok()));
    }
}

#[test]
fn non_finite_loss_keeps_last_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("model.ckpt");
    let mut t = trainer(config(), 9);
    t.run(3, None, Some(&ckpt)).unwrap();
    let saved = std::fs::read(&ckpt).unwrap();

    let bias = t.model.net.decoder.mel.bias;
    t.model.store.get_mut(bias).data_mut()[0] = f64::NAN;
    let err = t.run(5, None, Some(&ckpt)).unwrap_err();
    match err {
        Error::NonFiniteLoss { step, .. } => assert_eq!(step, 4),
        e => panic!("unexpected {e}"),
    }
    assert_eq!(std::fs::read(&ckpt).unwrap(), saved);
    let (d, _) = data(&config());
    assert_eq!(Trainer::resume(&ckpt, d).unwrap().step_count(), 3);
}

#[test]
fn batches_follow_length_buckets() {
    let t = trainer(config(), 2);
    let buckets = t.data.length_buckets(4);
    let n = buckets.len() as u64;
    for epoch in 0..3 {
        let mut seen: Vec<Vec<usize>> = (0..n).map(|s| t.batch_indices(epoch * n + s).to_vec()).collect();
        seen.sort();
        let mut expect = buckets.clone();
        expect.sort();
        assert_eq!(seen, expect);
    }
}
