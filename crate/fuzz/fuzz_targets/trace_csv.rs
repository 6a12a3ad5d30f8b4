#![no_main]

use libfuzzer_sys::fuzz_target;
use powersmooth::compliance::{check_compliance, GridSpec};
use powersmooth::trace::parse_trace_csv;

fuzz_target!(|data: &[u8]| {
    if let Ok(trace) = parse_trace_csv(data, 1e6) {
        assert!(trace.samples().iter().all(|p| (0.0..=1e6).contains(p)));
        if trace.len() <= 1 << 14 {
            let _ = check_compliance(&trace, &GridSpec::default());
        }
    }
});
