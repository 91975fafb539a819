#![no_main]

use autoreparam_cli::record::ResultRecord;
use libfuzzer_sys::fuzz_target;

// Anything that parses must serialise and parse back to the same record.
fuzz_target!(|input: &[u8]| {
    let Ok(text) = std::str::from_utf8(input) else {
        return;
    };
    if let Ok(record) = ResultRecord::parse(text) {
        let json = record.to_json().expect("parsed records serialise");
        assert_eq!(ResultRecord::parse(&json).unwrap(), record);
    }
});
