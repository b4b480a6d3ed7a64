#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(cost) = hfpd_ot::io::parse_cost_matrix_csv(text) {
            assert!(cost.costs().iter().all(|c| c.is_finite() && *c >= 0.0));
        }
    }
});
