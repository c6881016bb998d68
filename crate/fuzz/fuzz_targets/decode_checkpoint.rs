#![no_main]

use libfuzzer_sys::fuzz_target;
use mfglab::neural::Checkpoint;

fuzz_target!(|data: &[u8]| {
    if let Ok(cp) = Checkpoint::decode(data) {
        assert_eq!(cp.encode(), data);
    }
});
