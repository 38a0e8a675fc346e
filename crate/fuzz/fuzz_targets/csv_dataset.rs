#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(d) = dsl_cli::dataset::parse_csv(data, "label") {
        assert!(!d.is_empty());
        assert!(d.features.iter().all(|r| r.len() == d.feature_names.len()));
        assert!(d.features.iter().flatten().all(|v| v.is_finite()));
        if let Some(l) = &d.labels {
            assert_eq!(l.len(), d.len());
        }
    }
});
