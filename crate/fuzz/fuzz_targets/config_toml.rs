#![no_main]
use libfuzzer_sys::fuzz_target;
use selfadj::cli::ProblemConfig;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(cfg) = ProblemConfig::from_toml(text) else { return };
    // canonical form is a fixed point
    let canonical = cfg.to_toml();
    let again = ProblemConfig::from_toml(&canonical).expect("canonical form parses");
    assert_eq!(again.to_toml(), canonical);
    let _ = cfg.interval();
});
