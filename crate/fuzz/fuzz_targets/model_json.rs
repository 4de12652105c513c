#![no_main]

use hfbm::{delta_of, validate_model, HfBmModel};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(model) = HfBmModel::from_json(text) else { return };
    // structurally valid models survive a round trip and can be checked
    let again = HfBmModel::from_json(&model.to_json()).expect("own output parses");
    assert_eq!(again.m, model.m);
    if validate_model(&model).is_ok() {
        let d = delta_of(&model);
        for i in 0..model.m {
            assert!(d.get(i, i).abs() < 1e-12);
        }
    }
});
