use rpu_lstm::checkpoint::{from_bytes, load_checkpoint, save_checkpoint, to_bytes};
use rpu_lstm::train::{evaluate, train, MetricsRow};
use rpu_lstm::{Corpus, LstmNetwork, LstmShape, RpuConfig, TileMode, TrainConfig, TrainerState};

fn corpus() -> Corpus {
    let text = "it was the best of times, it was the worst of times, it was the age of wisdom. ".repeat(12);
    Corpus::from_text(&text, 200).unwrap()
}

fn setup(mode: TileMode, epochs: usize) -> (Corpus, TrainConfig, LstmNetwork) {
    let corpus = corpus();
    let cfg = TrainConfig {
        lr: if mode == TileMode::Fp { 0.1 } else { 0.01 },
        dropout_p: 0.1,
        bptt: 20,
        epochs,
        seed: 5,
        mode,
        wall_clock: false,
        ..TrainConfig::default()
    };
    let shape = LstmShape::char_model(corpus.vocab_size(), 6, 2);
    let net = LstmNetwork::new(shape, cfg.network_options(), &RpuConfig::baseline(), cfg.seed).unwrap();
    (corpus, cfg, net)
}

fn run(net: &mut LstmNetwork, corpus: &Corpus, cfg: &TrainConfig, state: &mut TrainerState) -> Vec<MetricsRow> {
    let mut rows = Vec::new();
    train(net, corpus, cfg, state, &mut rows, |_, _, _| Ok(())).unwrap();
    rows
}

#[test]
fn resumed_training_continues_metric_stream() {
    for mode in [TileMode::Analog, TileMode::Fp] {
        let (corpus, cfg, net) = setup(mode, 3);
        let mut straight = net.clone();
        let full = run(&mut straight, &corpus, &cfg, &mut TrainerState::default());

        let mut first = net;
        let mut state = TrainerState::default();
        let one = TrainConfig { epochs: 1, ..cfg.clone() };
        let mut rows = run(&mut first, &corpus, &one, &mut state);
        let bytes = to_bytes(&first, &one, &state, corpus.vocab()).unwrap();
        let ck = from_bytes(&bytes).unwrap();
        let mut resumed = ck.network;
        let mut state = ck.state;
        rows.extend(run(&mut resumed, &corpus, &cfg, &mut state));

        assert_eq!(rows, full, "{mode:?}");
        assert_eq!(
            to_bytes(&resumed, &cfg, &state, corpus.vocab()).unwrap(),
            to_bytes(&straight, &cfg, &state, corpus.vocab()).unwrap()
        );
    }
}

#[test]
fn evaluation_survives_save_and_load() {
    let (corpus, cfg, mut net) = setup(TileMode::Analog, 1);
    let mut state = TrainerState::default();
    run(&mut net, &corpus, &cfg, &mut state);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.ckpt");
    save_checkpoint(&path, &net, &cfg, &state, corpus.vocab()).unwrap();
    let back = load_checkpoint(&path).unwrap();
    assert_eq!(evaluate(&back.network, &corpus, &cfg).unwrap(), evaluate(&net, &corpus, &cfg).unwrap());
    assert_eq!(back.state, state);
    assert_eq!(back.training, cfg);
    let again = dir.path().join("again.ckpt");
    save_checkpoint(&again, &back.network, &back.training, &back.state, &back.vocab).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&again).unwrap());
}

#[test]
fn seeded_runs_are_identical() {
    for mode in [TileMode::Analog, TileMode::Fp] {
        let (corpus, cfg, net) = setup(mode, 2);
        let a = run(&mut net.clone(), &corpus, &cfg, &mut TrainerState::default());
        let b = run(&mut net.clone(), &corpus, &cfg, &mut TrainerState::default());
        assert_eq!(a, b);
        let (_, _, rebuilt) = setup(mode, 2);
        let c = run(&mut rebuilt.clone(), &corpus, &cfg, &mut TrainerState::default());
        assert_eq!(a, c);
    }
}

#[test]
fn different_seeds_differ() {
    let (corpus, cfg, _) = setup(TileMode::Analog, 1);
    let shape = LstmShape::char_model(corpus.vocab_size(), 6, 2);
    let mut a = LstmNetwork::new(shape, cfg.network_options(), &RpuConfig::baseline(), 1).unwrap();
    let mut b = LstmNetwork::new(shape, cfg.network_options(), &RpuConfig::baseline(), 2).unwrap();
    let ra = run(&mut a, &corpus, &cfg, &mut TrainerState::default());
    let rb = run(&mut b, &corpus, &cfg, &mut TrainerState::default());
    assert_ne!(ra, rb);
}

#[test]
fn full_size_topology_in_checkpoint() {
    let shape = LstmShape::char_model(87, 512, 2);
    let cfg = TrainConfig {
        mode: TileMode::Fp,
        ..TrainConfig::default()
    };
    let net = LstmNetwork::new(shape, cfg.network_options(), &RpuConfig::baseline(), 0).unwrap();
    let vocab: Vec<char> = (0..87u8).map(|k| (b'!' + k) as char).collect();
    let bytes = to_bytes(&net, &cfg, &TrainerState::default(), &vocab).unwrap();
    let ck = from_bytes(&bytes).unwrap();
    let shapes: Vec<(usize, usize)> = ck.network.tiles().iter().map(|t| (t.rows(), t.cols())).collect();
    assert_eq!(shapes, vec![(2048, 600), (2048, 1025), (87, 513)]);
}
