#![no_main]

use libfuzzer_sys::fuzz_target;
use oqr::data::{read_csv, CsvSchema};

fuzz_target!(|data: &[u8]| {
    let mut schema = CsvSchema::new("y");
    schema.group = Some("g".into());
    if let Ok(d) = read_csv(data, &schema, "fuzz") {
        assert_eq!(d.x.nrows(), d.y.len());
        assert_eq!(d.x.ncols(), d.feature_names.len());
        assert!(d.y.iter().chain(d.x.iter()).all(|v| v.is_finite()));
    }
});
