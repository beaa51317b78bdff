#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(s) = lart_cli::config::Settings::parse(text) {
        let _ = lart_cli::keys::dataset(&s);
        let _ = lart_cli::keys::model(&s, 12, None);
        let _ = lart_cli::keys::train(&s, lart::train::Stage::Finetune);
        let _ = s.finish();
    }
    if let Ok(cfg) = lart::checkpoint::config_from_text(text) {
        let text = lart::checkpoint::config_to_text(&cfg);
        let back = lart::checkpoint::config_from_text(&text).expect("config text round trips");
        assert_eq!(lart::checkpoint::config_to_text(&back), text);
    }
});
