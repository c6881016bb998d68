#![no_main]

use libfuzzer_sys::fuzz_target;
use mfglab::noise::{read_paths_csv, write_paths_csv, NoiseTree};

fuzz_target!(|data: &[u8]| {
    if let Ok(paths) = read_paths_csv(data) {
        let mut out = Vec::new();
        write_paths_csv(&paths, &mut out).expect("write");
        assert_eq!(read_paths_csv(out.as_slice()).expect("reparse"), paths);
        let _ = NoiseTree::new(&paths);
    }
});
