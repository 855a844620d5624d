//! Shared fixtures for the criterion benchmarks.

use wavebound_core::data::{split_and_standardize, synth_series, windowize, SplitSpec};
use wavebound_core::trainer::WindowSets;

/// Windows of the noisy synthetic sine series used throughout the benches.
pub fn synthetic_windows(length: usize, input_len: usize, output_len: usize) -> WindowSets {
    let ds = synth_series(length, 0.5, 1).expect("valid length");
    let s = split_and_standardize(&ds, SplitSpec::standard()).expect("non-empty split");
    WindowSets {
        train: windowize(&s.train, input_len, output_len),
        val: windowize(&s.val, input_len, output_len),
        test: windowize(&s.test, input_len, output_len),
    }
}
