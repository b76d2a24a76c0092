//! Standard depth errors on a prediction that is off by a factor of two,
//! before and after median scaling.

use dmk::engine::ScalarField;
use dmk::fit::scale_align;
use dmk::metrics::{depth_metrics, DEFAULT_CUTOFF};

fn main() {
    let gt = ScalarField::from_fn(24, 32, |r, c| 2.0 + 0.2 * r as f64 + 0.05 * c as f64);
    let pred = gt.map(|d| 2.0 * d);
    let mask = ScalarField::filled(24, 32, 1.0);

    let raw = depth_metrics(&pred, &gt, &mask, DEFAULT_CUTOFF).unwrap();
    println!("raw:    {raw:?}");
    let (scaled, s) = scale_align(&pred, &gt, &mask).unwrap();
    let aligned = depth_metrics(&scaled, &gt, &mask, DEFAULT_CUTOFF).unwrap();
    println!("scale {s}: {aligned:?}");
}
