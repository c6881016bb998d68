//! Round trips and robustness of the three external input formats: the
//! experiment config, network checkpoints and noise-path CSV files.

use mfglab::cli::config::parse_config;
use mfglab::neural::mlp::Mlp;
use mfglab::neural::{Checkpoint, InputEncoding};
use mfglab::noise::{read_paths_csv, write_paths_csv, CommonNoisePath};
use proptest::prelude::*;

fn path_strategy() -> impl Strategy<Value = Vec<CommonNoisePath>> {
    (1usize..12).prop_flat_map(|len| {
        prop::collection::vec(
            ("[a-z][a-z0-9_ ,]{0,10}", prop::collection::vec(-1e6f64..1e6, len)),
            1..6,
        )
        .prop_map(|rows| {
            rows.into_iter()
                .map(|(label, values)| CommonNoisePath::new(label, values).unwrap())
                .collect()
        })
    })
}

proptest! {
    #[test]
    fn noise_paths_round_trip(paths in path_strategy()) {
        let mut buf = Vec::new();
        write_paths_csv(&paths, &mut buf).unwrap();
        let back = read_paths_csv(buf.as_slice()).unwrap();
        prop_assert_eq!(back, paths);
    }

    #[test]
    fn noise_reader_never_panics(bytes in prop::collection::vec(any::<u8>(), 0..256)) {
        let _ = read_paths_csv(bytes.as_slice());
    }

    #[test]
    fn checkpoint_round_trip(
        horizon in 1usize..6,
        states in 1usize..8,
        population in any::<bool>(),
        hidden in prop::collection::vec(1usize..6, 0..3),
        actions in 1usize..5,
        tau in 1e-3f64..100.0,
        seed in any::<u64>(),
    ) {
        use rand::SeedableRng;
        let encoding = InputEncoding { horizon, num_states: states, population, noise: false };
        let mut sizes = vec![encoding.len()];
        sizes.extend(hidden);
        sizes.push(actions);
        let net = Mlp::glorot(&sizes, &mut rand_chacha::ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let cp = Checkpoint { net, tau, encoding };
        prop_assert_eq!(Checkpoint::decode(&cp.encode()).unwrap(), cp);
    }

    #[test]
    fn checkpoint_decoder_never_panics(bytes in prop::collection::vec(any::<u8>(), 0..512)) {
        let _ = Checkpoint::decode(&bytes);
    }

    #[test]
    fn checkpoint_with_valid_header_and_noise_never_panics(tail in prop::collection::vec(any::<u8>(), 0..256)) {
        let mut bytes = b"MFGQNET1".to_vec();
        bytes.extend_from_slice(&tail);
        let _ = Checkpoint::decode(&bytes);
    }

    #[test]
    fn config_parser_never_panics(text in "\\PC{0,200}") {
        let _ = parse_config(&text);
    }

    #[test]
    fn config_parser_handles_shuffled_keys(
        horizon in 1i64..20,
        iterations in 1i64..50,
        tau in 0.01f64..100.0,
        count in 1i64..4,
    ) {
        let text = format!(
            "[solver]\ntau = {tau}\niterations = {iterations}\n[env]\nhorizon = {horizon}\nname = \"exploration\"\n[train]\ncount = {count}\n"
        );
        let cfg = parse_config(&text).unwrap();
        prop_assert_eq!(cfg.env.horizon as i64, horizon);
        let again = parse_config(&cfg.canonical()).unwrap();
        prop_assert_eq!(again.canonical(), cfg.canonical());
        prop_assert_eq!(again, cfg);
    }
}

#[test]
fn ragged_noise_rows_are_rejected() {
    let err = read_paths_csv("a,1,2\nb,1\n".as_bytes()).unwrap_err();
    assert!(err.to_string().contains("horizon"), "{err}");
    assert!(read_paths_csv("a,1,x\n".as_bytes()).is_err());
    assert!(read_paths_csv("a,1,inf\n".as_bytes()).is_err());
    assert!(read_paths_csv("".as_bytes()).is_err());
}
