//! Warps one pixel under a pure forward translation and checks it against
//! unproject / move / project done by hand.

use dmk::engine::{ScalarField, Tape};
use dmk::geometry::{warp, Intrinsics, Rotation, Var3};
use nalgebra::Vector3;

fn main() {
    let k = Intrinsics::new(100.0, 100.0, 64.0, 48.0);
    let (row, col, z) = (48, 164, 2.0);

    let tape = Tape::new();
    let w = warp(
        tape.constant(ScalarField::filled(96, 200, z)),
        &k.constants(&tape),
        &Rotation::identity(&tape),
        &Var3::constant_vec(&tape, [0.0, 0.0, 1.0]),
    );
    let (u, v, zp) = (w.u.field().get(row, col), w.v.field().get(row, col), w.z.field().get(row, col));

    let p = k.unproject(col as f64, row as f64, z) + Vector3::new(0.0, 0.0, 1.0);
    let (ou, ov) = k.project(&p);
    println!("warp:   u'={u:.4} v'={v:.4} z'={zp:.4}");
    println!("oracle: u'={ou:.4} v'={ov:.4} z'={:.4}", p.z);
}
