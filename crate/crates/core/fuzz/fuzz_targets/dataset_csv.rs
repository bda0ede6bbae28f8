#![no_main]

use dpselft::data::{parse_dataset, write_dataset};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(ds) = parse_dataset(data, None) {
        let mut buf = Vec::new();
        write_dataset(&mut buf, &ds).expect("parsed dataset writes");
        assert_eq!(
            parse_dataset(&buf[..], Some(ds.num_classes)).expect("written dataset parses"),
            ds
        );
    }
    let _ = parse_dataset(data, Some(3));
});
