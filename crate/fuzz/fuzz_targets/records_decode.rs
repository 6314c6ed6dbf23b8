#![no_main]
use charrnet::dataset::decode_records;
use libfuzzer_sys::fuzz_target;

// The first two bytes pick the burst length.
fuzz_target!(|data: &[u8]| {
    if data.len() < 2 {
        return;
    }
    let burst_len = u16::from_le_bytes([data[0], data[1]]) as usize;
    if let Ok(bursts) = decode_records(&data[2..], burst_len) {
        assert!(bursts.iter().all(|b| b.len() == burst_len));
        assert_eq!(bursts.len() * burst_len * 8, data.len() - 2);
    }
});
