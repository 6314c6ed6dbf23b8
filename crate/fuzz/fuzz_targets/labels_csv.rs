#![no_main]
use charrnet::dataset::parse_labels;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(labels) = parse_labels(data) {
        for (i, l) in labels.iter().enumerate() {
            assert_eq!(l.record_index, i);
        }
    }
});
