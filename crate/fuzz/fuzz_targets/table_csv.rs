#![no_main]
use libfuzzer_sys::fuzz_target;
use selfadj::expr::Table;

fuzz_target!(|data: &[u8]| {
    let Ok(table) = Table::from_csv_bytes(data) else { return };
    let (lo, hi) = table.range();
    for i in 0..=8 {
        let x = lo + (hi - lo) * i as f64 / 8.0;
        for k in 0..=2 {
            let _ = table.eval(x, k);
        }
    }
});
