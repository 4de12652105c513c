#![no_main]

use hfbm::io::{decode_binary, encode_binary, read_path_bytes};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(path) = decode_binary(data) {
        assert_eq!(encode_binary(&path), data);
    }
    let _ = read_path_bytes(data);
});
