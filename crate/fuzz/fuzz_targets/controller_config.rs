#![no_main]

use libfuzzer_sys::fuzz_target;
use powersmooth::soc::{plan_correction, BatteryParams, BatteryState, ControllerConfig};

fuzz_target!(|data: &[u8]| {
    let Ok(cfg) = serde_json::from_slice::<ControllerConfig>(data) else { return };
    if cfg.horizon_h > 48 {
        return;
    }
    let state = BatteryState { soc: 0.6, timestamp: 0.0 };
    let _ = plan_correction(&state, cfg.s_mid, &cfg, &BatteryParams::default(), 0.0);
});
