//! The L1/2 sparsity penalty prefers one large motion over the same total
//! motion spread thinly, and it scales linearly with the field.

use dmk::engine::{ScalarField, Tape, VectorField3};
use dmk::geometry::Var3;
use dmk::losses::{group_smoothness, sparsity_l_half};

fn main() {
    let tape = Tape::new();
    let zero = || ScalarField::zeros(4, 4);
    let field = |x: ScalarField| Var3::constant_field(&tape, &VectorField3::new(x, zero(), zero()).unwrap());

    let uniform = field(ScalarField::filled(4, 4, 1.0));
    let mut one = zero();
    one.set(1, 2, 16.0);
    let spike = field(one);

    for (name, t) in [("uniform", &uniform), ("single pixel", &spike)] {
        println!(
            "{name:<13} sparsity {:.4}  group smoothness {:.4}",
            sparsity_l_half(t, 1e-6).scalar(),
            group_smoothness(t).scalar()
        );
    }

    let doubled = field(ScalarField::filled(4, 4, 2.0));
    println!(
        "doubling the uniform field: {:.4} -> {:.4}",
        sparsity_l_half(&uniform, 1e-6).scalar(),
        sparsity_l_half(&doubled, 1e-6).scalar()
    );
}
