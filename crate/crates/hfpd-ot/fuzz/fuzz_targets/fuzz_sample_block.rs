#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(block) = hfpd_ot::io::decode_sample_block(data) {
        // A decoded block must round-trip and stay in bounds.
        for i in 0..block.count() {
            let _ = block.plan(i);
        }
        let encoded = hfpd_ot::io::encode_sample_block(&block);
        assert_eq!(hfpd_ot::io::decode_sample_block(&encoded).unwrap(), block);
    }
});
