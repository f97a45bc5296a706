#![no_main]
use libfuzzer_sys::fuzz_target;
use selfadj::bcalg::{validate, BoundaryCondition};

fuzz_target!(|data: &[u8]| {
    let Ok(bc) = serde_json::from_slice::<BoundaryCondition>(data) else { return };
    for n in 1..=4 {
        let _ = validate(&bc, n);
    }
    let text = serde_json::to_string(&bc).expect("serializable");
    let back: BoundaryCondition = serde_json::from_str(&text).expect("own output parses");
    assert_eq!(serde_json::to_string(&back).unwrap(), text);
});
