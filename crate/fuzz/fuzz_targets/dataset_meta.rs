#![no_main]
use charrnet::dataset::DatasetMeta;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let _ = DatasetMeta::from_json(data);
});
