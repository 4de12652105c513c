#![no_main]

use hfbm::mc::McStudyConfig;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(cfg) = McStudyConfig::from_json(text) else { return };
    let cells = cfg.cells();
    assert!(!cells.is_empty());
    for (i, c) in cells.iter().enumerate() {
        assert_eq!(c.index, i);
        assert!(c.j1 < c.j2);
    }
});
