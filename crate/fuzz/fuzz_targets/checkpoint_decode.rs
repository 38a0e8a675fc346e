#![no_main]

use dsl_cli::checkpoint::{decode, encode};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(ck) = decode(data) {
        let again = encode(&ck).unwrap();
        assert_eq!(decode(&again).unwrap(), ck);
    }
});
