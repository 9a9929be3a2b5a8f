mod support;

use support::gradcheck::{check_recipe, random_recipe};

#[test]
fn autodiff_matches_central_differences() {
    let mut checked = 0;
    let mut skipped = 0;
    for seed in 0..30 {
        let s = check_recipe(&random_recipe(seed));
        eprintln!("seed {seed}: {s:?}");
        assert!(s.max_rel_err_f64 < 1e-6, "seed {seed}: {s:?}");
        assert!(s.max_rel_err_f32 < 1e-3, "seed {seed}: {s:?}");
        checked += s.checked;
        skipped += s.skipped;
    }
    assert!(skipped * 50 < checked, "{skipped} skipped of {checked}");
}
