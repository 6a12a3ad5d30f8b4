#![no_main]

use libfuzzer_sys::fuzz_target;
use powersmooth::filter::{discretize, frequency_response, FilterParams};

fuzz_target!(|data: &[u8]| {
    let Ok(p) = serde_json::from_slice::<FilterParams>(data) else { return };
    let _ = frequency_response(&p, &[0.0, p.f_f(), 10.0 * p.f_f()]);
    let _ = discretize(&p, 1.0 / (20.0 * p.f_f()));
});
