#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(clip) = lart::clip_format::parse_clip(text) {
        let again = lart::clip_format::parse_clip(&lart::clip_format::write_clip(&clip)).expect("written clip parses");
        assert_eq!(again.clip_id, clip.clip_id);
        assert_eq!(again.tracklets.len(), clip.tracklets.len());
    }
});
