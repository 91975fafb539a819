#![no_main]

use autoreparam::data::{parse_dataset, DATASETS};
use autoreparam::Error;
use libfuzzer_sys::fuzz_target;

// First byte picks the schema, the rest is the file body.
fuzz_target!(|input: &[u8]| {
    let Some((&pick, body)) = input.split_first() else {
        return;
    };
    let name = DATASETS[pick as usize % DATASETS.len()];
    match parse_dataset(name, body) {
        Ok(bundle) => {
            for column in bundle.columns.values() {
                assert_eq!(column.len(), bundle.rows());
                assert!(column.iter().all(|v| v.is_finite()));
            }
        }
        Err(e) => assert!(matches!(e, Error::SchemaError(_)), "{e:?}"),
    }
});
