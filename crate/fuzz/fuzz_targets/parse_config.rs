#![no_main]

use libfuzzer_sys::fuzz_target;
use qloc_cli::{parse_config, ConfigSource};

fuzz_target!(|data: &str| {
    let Ok(src) = parse_config(data) else { return };
    let cfg = match src {
        ConfigSource::Plain(c) => c,
        ConfigSource::Manifest(m) => m.config,
    };
    if cfg.validate().is_empty() {
        let _ = cfg.resolved().content_hash();
    }
});
