use proptest::prelude::*;

use rpu_lstm::checkpoint::{from_bytes, to_bytes};
use rpu_lstm::device::{sample_device_array, states_stats};
use rpu_lstm::perf::{count_devices, throughput};
use rpu_lstm::rng::stream;
use rpu_lstm::tile::quantize::quantize_vector;
use rpu_lstm::{
    Corpus, HeadInit, HiddenState, LstmNetwork, LstmShape, NetworkOptions, Rounding, RpuConfig, TileMode,
    TrainConfig, TrainerState,
};

fn shape_strategy() -> impl Strategy<Value = LstmShape> {
    (1usize..6, 1usize..6, 1usize..4, 1usize..6).prop_map(|(n, m, d, v)| LstmShape {
        input: n,
        hidden: m,
        depth: d,
        vocab: v,
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn tile_shapes_follow_formula(s in shape_strategy()) {
        let shapes = s.tile_shapes();
        prop_assert_eq!(shapes.len(), s.depth + 1);
        prop_assert_eq!(shapes[0], (4 * s.hidden, s.input + s.hidden + 1));
        for &sh in &shapes[1..s.depth] {
            prop_assert_eq!(sh, (4 * s.hidden, 2 * s.hidden + 1));
        }
        prop_assert_eq!(shapes[s.depth], (s.vocab, s.hidden + 1));
        let total: u64 = shapes.iter().map(|&(r, c)| (r * c) as u64).sum();
        prop_assert_eq!(count_devices(&s), total);
    }

    #[test]
    fn throughput_is_linear(devices in 1u64..1_000_000_000, t in 1e-9f64..1e-3) {
        prop_assert_eq!(throughput(devices, t), 2.0 * devices as f64 / t);
        prop_assert_eq!(throughput(2 * devices, t), 2.0 * throughput(devices, t));
        prop_assert_eq!(throughput(devices, t / 2.0), 2.0 * throughput(devices, t));
    }

    #[test]
    fn hidden_state_stays_bounded(
        seed in any::<u64>(),
        depth in 1usize..3,
        tokens in prop::collection::vec(0usize..4, 1..20),
    ) {
        let opts = NetworkOptions { mode: TileMode::Fp, head_init: HeadInit::Uniform, ..NetworkOptions::default() };
        let shape = LstmShape::char_model(4, 5, depth);
        let mut net = LstmNetwork::new(shape, opts, &RpuConfig::baseline(), seed).unwrap();
        let targets: Vec<usize> = tokens.iter().map(|t| (t + 1) % 4).collect();
        let out = net.window_pass(&tokens, &targets, &HiddenState::zeros(&shape), false, 0.0).unwrap();
        prop_assert!(out.loss_sum.is_finite() && out.loss_sum > 0.0);
        for v in out.hidden.h.iter().flatten() {
            prop_assert!(v.abs() < 1.0);
        }
    }

    #[test]
    fn analog_training_keeps_weights_in_bounds(seed in any::<u64>(), lr in 1e-3f64..0.5) {
        let opts = NetworkOptions { mode: TileMode::Analog, dropout_p: 0.3, ..NetworkOptions::default() };
        let shape = LstmShape::char_model(3, 4, 2);
        let mut net = LstmNetwork::new(shape, opts, &RpuConfig::baseline(), seed).unwrap();
        let x = [0, 1, 2, 1, 0, 2, 2, 1];
        let y = [1, 2, 1, 0, 2, 2, 1, 0];
        let mut h = HiddenState::zeros(&shape);
        for _ in 0..3 {
            h = net.window_pass(&x, &y, &h, true, lr).unwrap().hidden;
        }
        for t in net.tiles() {
            let d = t.devices().unwrap();
            for k in 0..t.weights().len() {
                let w = t.weights().as_slice()[k];
                prop_assert!(w >= d.w_min.as_slice()[k] && w <= d.w_max.as_slice()[k]);
            }
        }
    }

    #[test]
    fn evaluation_leaves_network_untouched(seed in any::<u64>()) {
        let opts = NetworkOptions { mode: TileMode::Analog, dropout_p: 0.2, ..NetworkOptions::default() };
        let shape = LstmShape::char_model(3, 4, 1);
        let mut net = LstmNetwork::new(shape, opts, &RpuConfig::baseline(), seed).unwrap();
        let before = to_bytes(&net, &TrainConfig::default(), &TrainerState::default(), &['a', 'b', 'c']).unwrap();
        let corpus = Corpus::from_text(&"abcacb".repeat(30), 60).unwrap();
        let cfg = TrainConfig { bptt: 7, ..TrainConfig::default() };
        let a = rpu_lstm::evaluate(&net, &corpus, &cfg).unwrap();
        let b = rpu_lstm::evaluate(&net, &corpus, &cfg).unwrap();
        prop_assert_eq!(a, b);
        let after = to_bytes(&net, &TrainConfig::default(), &TrainerState::default(), &['a', 'b', 'c']).unwrap();
        prop_assert_eq!(before, after);
        // a read-only window with the training streams also leaves weights alone
        let w0: Vec<_> = net.tiles().iter().map(|t| t.weights().clone()).collect();
        net.window_pass(&[0, 1], &[1, 2], &HiddenState::zeros(&shape), false, 0.1).unwrap();
        let w1: Vec<_> = net.tiles().iter().map(|t| t.weights().clone()).collect();
        prop_assert_eq!(w0, w1);
    }

    #[test]
    fn checkpoint_round_trip(seed in any::<u64>(), s in shape_strategy(), analog in any::<bool>()) {
        let mode = if analog { TileMode::Analog } else { TileMode::Fp };
        let s = LstmShape::char_model(s.vocab, s.hidden, s.depth);
        let opts = NetworkOptions { mode, ..NetworkOptions::default() };
        let net = LstmNetwork::new(s, opts, &RpuConfig::baseline(), seed).unwrap();
        let vocab: Vec<char> = ('a'..).take(s.vocab).collect();
        let cfg = TrainConfig { seed, mode, ..TrainConfig::default() };
        let state = TrainerState { epoch: 3, windows_seen: seed % 1000, wall_seconds: 0.1 + 0.2 };
        let bytes = to_bytes(&net, &cfg, &state, &vocab).unwrap();
        let ck = from_bytes(&bytes).unwrap();
        prop_assert_eq!(&ck.state, &state);
        prop_assert_eq!(&ck.training, &cfg);
        prop_assert_eq!(to_bytes(&ck.network, &ck.training, &ck.state, &ck.vocab).unwrap(), bytes);
    }

    #[test]
    fn windows_tile_the_range(len in 2usize..400, bptt in 1usize..50) {
        let text: String = (0..len).map(|k| char::from(b'a' + (k * 7 % 11) as u8)).collect();
        let c = Corpus::from_text(&text, 0).unwrap();
        let windows: Vec<_> = c.windows(c.train_range(), bptt).unwrap().collect();
        prop_assert_eq!(windows.len(), (len - 1) / bptt);
        for (k, (x, y)) in windows.iter().enumerate() {
            prop_assert_eq!(*x, &c.tokens()[k * bptt..(k + 1) * bptt]);
            prop_assert_eq!(*y, &c.tokens()[k * bptt + 1..(k + 1) * bptt + 1]);
        }
    }

    #[test]
    fn device_sampling_is_pure_and_valid(rows in 1usize..20, cols in 1usize..20, seed in any::<u64>(), dtod in 0.0f64..2.0) {
        let cfg = RpuConfig { dw_min_dtod: dtod, w_bound_dtod: dtod, asym_dtod: dtod, ..RpuConfig::baseline() };
        let a = sample_device_array(rows, cols, &cfg, seed).unwrap();
        prop_assert_eq!(&a, &sample_device_array(rows, cols, &cfg, seed).unwrap());
        for k in 0..rows * cols {
            let (p, m) = (a.dw_plus.as_slice()[k], a.dw_minus.as_slice()[k]);
            prop_assert!(m >= 0.1 * cfg.dw_min - 1e-18);
            prop_assert!(p / m >= 0.5 - 1e-12 && p / m <= 2.0 + 1e-12);
            prop_assert!(a.w_max.as_slice()[k] >= 0.1 * cfg.w_bound);
            prop_assert!(a.w_min.as_slice()[k] <= -0.1 * cfg.w_bound);
        }
        let s = states_stats(&a);
        prop_assert!(s.min > 0.0 && s.min <= s.mean && s.mean <= s.max && s.max.is_finite());
    }

    #[test]
    fn quantizers_stay_on_grid(v in prop::collection::vec(-1.0f64..=1.0, 1..40), bits in 2u32..10, seed in any::<u64>()) {
        let levels = ((1u32 << (bits - 1)) - 1) as f64;
        let mut rng = stream(seed, 0);
        let near = quantize_vector(&v, bits, Rounding::Nearest, &mut rng).unwrap();
        let sto = quantize_vector(&v, bits, Rounding::Stochastic, &mut rng).unwrap();
        for ((x, a), b) in v.iter().zip(&near).zip(&sto) {
            prop_assert!((x - a).abs() <= 0.5 / levels + 1e-12);
            prop_assert!((x - b).abs() < 1.0 / levels + 1e-12);
            for q in [a, b] {
                prop_assert!(q.abs() <= 1.0);
                prop_assert!(((q * levels).round() - q * levels).abs() < 1e-9);
            }
        }
    }
}
