#![no_main]

use libfuzzer_sys::fuzz_target;
use powersmooth::burn::{check_floor, raw_job_trace, schedule_burn, BurnSchedule, DutyPowerModel};

fuzz_target!(|data: &[u8]| {
    let Ok(s) = serde_json::from_slice::<BurnSchedule>(data) else { return };
    if s.validate().is_err() || s.total_duration() > 2000.0 || s.total_duration() / s.t_win > 1e4 {
        return;
    }
    let model = DutyPowerModel::new(150.0, 50.0, 50.0).unwrap();
    let dt = s.t_win.min(0.1);
    if let (Ok(burn), Ok(raw)) = (schedule_burn(&s, &model, dt), raw_job_trace(&s, &model, dt)) {
        check_floor(&burn, &raw).unwrap();
    }
});
