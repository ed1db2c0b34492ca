use std::sync::Arc;

use proptest::prelude::*;
use ttd_core::corpus::generate;
use ttd_core::guest::Program;
use ttd_core::host::Scenario;
use ttd_core::record::tracefile::decode_trace;
use ttd_core::record::{record, RecordOptions};
use ttd_core::replay::verify;
use ttd_core::ttd::DebugSession;

proptest! {
    #![proptest_config(ProptestConfig { cases: 48, ..ProptestConfig::default() })]

    #[test]
    fn generated_programs_replay(seed in 1000u64..1_000_000) {
        let g = generate(seed);
        let program = Arc::new(Program::from_sources(g.sources).unwrap());
        let opts = RecordOptions { checkpoint_interval: Some(300), ..RecordOptions::default() };
        let trace = Arc::new(record(program, &g.scenario, &opts));
        let report = verify(&trace, true);
        prop_assert!(report.is_ok(), "{:?}", report.err());
    }

    #[test]
    fn forward_then_back_returns(seed in 0u64..10_000, steps in 1usize..40) {
        let g = generate(seed);
        let program = Arc::new(Program::from_sources(g.sources).unwrap());
        let trace = Arc::new(record(program, &g.scenario, &RecordOptions::default()));
        let mut s = DebugSession::open(trace).unwrap();
        let mut path = vec![s.pause().unwrap()];
        for _ in 0..steps {
            match s.step_forward() {
                Ok(p) if p.event >= path[0].event => path.push(p),
                _ => break,
            }
        }
        for want in path.iter().rev().skip(1) {
            let got = s.step_back().unwrap();
            prop_assert_eq!((got.event, got.stmt, got.time), (want.event, want.stmt, want.time));
        }
    }

    #[test]
    fn parser_rejects_garbage_without_panicking(text in "\\PC{0,200}") {
        let _ = Program::from_source("x.tts", &text);
    }

    #[test]
    fn parser_handles_token_soup(words in prop::collection::vec(
        prop::sample::select(vec!["let", "x", "=", "1", ";", "{", "}", "(", ")", "while", "if", "else",
            "function", "return", "+", "\"s\"", ",", "[", "]", "f", "true", "\n", ".", "break"]),
        0..60,
    )) {
        let _ = Program::from_source("x.tts", &words.join(" "));
    }

    #[test]
    fn trace_decoder_rejects_garbage(bytes in prop::collection::vec(any::<u8>(), 0..512)) {
        let _ = decode_trace(&bytes);
    }

    #[test]
    fn corrupted_trace_files_fail_cleanly(pos in any::<prop::sample::Index>(), flip in 1u8..=255, compress in any::<bool>()) {
        let g = generate(7);
        let program = Arc::new(Program::from_sources(g.sources).unwrap());
        let trace = record(program, &g.scenario, &RecordOptions::default());
        let mut bytes = ttd_core::record::tracefile::encode_trace(&trace, compress).0;
        let i = pos.index(bytes.len());
        bytes[i] ^= flip;
        prop_assert!(decode_trace(&bytes).is_err());
    }

    #[test]
    fn scenario_parser_rejects_garbage(text in "\\PC{0,120}") {
        let _ = Scenario::from_json(&text);
    }
}
