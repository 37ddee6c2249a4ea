#![no_main]

use libfuzzer_sys::fuzz_target;
use polopt::data::{load_dataset, write_dataset};
use polopt::ColumnSchema;

fuzz_target!(|data: &[u8]| {
    let Some((&selector, body)) = data.split_first() else {
        return;
    };
    let delimiter = [b',', b';', b'\t'][usize::from(selector % 3)];
    let schema = ColumnSchema::new("y", "t", ["x1", "x2"]).with_id("id");
    if let Ok(ds) = load_dataset(body, &schema, delimiter) {
        let mut buf = Vec::new();
        write_dataset(&ds, &mut buf, delimiter).unwrap();
        assert_eq!(load_dataset(buf.as_slice(), &schema, delimiter).unwrap(), ds);
    }
});
