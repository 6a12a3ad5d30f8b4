#![no_main]

use libfuzzer_sys::fuzz_target;
use powersmooth::trace::{synth_training_trace, SynthTrainingParams};

fuzz_target!(|data: &[u8]| {
    let Ok(p) = serde_json::from_slice::<SynthTrainingParams>(data) else { return };
    if p.validate().is_err() || p.sample_count() > 1 << 16 {
        return;
    }
    if let Ok(t) = synth_training_trace(&p) {
        assert_eq!(t.len(), p.sample_count());
    }
});
