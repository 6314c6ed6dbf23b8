#![no_main]
use charrnet::fingerprint::ChannelTag;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &str| {
    if let Ok(tag) = data.parse::<ChannelTag>() {
        assert_eq!(tag.to_string().parse::<ChannelTag>().ok(), Some(tag));
    }
});
