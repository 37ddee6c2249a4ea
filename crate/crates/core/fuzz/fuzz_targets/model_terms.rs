#![no_main]

use libfuzzer_sys::fuzz_target;
use polopt::cate::Term;
use polopt::config::split_list;
use polopt::{GridSource, ModelSpec, Objective};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(spec) = ModelSpec::parse(split_list(text)) {
        for term in spec.terms() {
            assert_eq!(term.to_string().parse::<Term>().as_ref(), Ok(term));
        }
    }
    if let Ok(grid) = text.parse::<GridSource>() {
        assert_eq!(grid.to_string().parse::<GridSource>(), Ok(grid));
    }
    let _ = text.parse::<Objective>();
});
