#![no_main]

use hfbm::io::{read_csv, write_csv};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(path) = read_csv(data) else { return };
    let mut out = Vec::new();
    write_csv(&path, &mut out).expect("writing to memory");
    let back = read_csv(&out[..]).expect("own output parses");
    assert_eq!((back.m, back.n), (path.m, path.n));
    for (a, b) in back.data.iter().zip(&path.data) {
        assert!(a.to_bits() == b.to_bits() || (a.is_nan() && b.is_nan()));
    }
});
