use crate::engine::{ScalarField, Tape, Var};

/// RGB image as three planes with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub channels: [ScalarField; 3],
}

impl Frame {
    /// `passes` rounds of 3x3 box filtering per channel.
    pub fn blurred(&self, passes: usize) -> Frame {
        let mut out = self.clone();
        for _ in 0..passes {
            out.channels = out.channels.map(|c| c.box3());
        }
        out
    }

    pub fn new(r: ScalarField, g: ScalarField, b: ScalarField) -> Self {
        assert!(
            r.dims() == g.dims() && r.dims() == b.dims(),
            "frame channels must agree"
        );
        Self {
            channels: [r, g, b],
        }
    }

    pub fn uniform(height: usize, width: usize, rgb: [f64; 3]) -> Self {
        Self::new(
            ScalarField::filled(height, width, rgb[0]),
            ScalarField::filled(height, width, rgb[1]),
            ScalarField::filled(height, width, rgb[2]),
        )
    }

    pub fn from_fn(height: usize, width: usize, f: impl Fn(usize, usize) -> [f64; 3]) -> Self {
        Self::new(
            ScalarField::from_fn(height, width, |r, c| f(r, c)[0]),
            ScalarField::from_fn(height, width, |r, c| f(r, c)[1]),
            ScalarField::from_fn(height, width, |r, c| f(r, c)[2]),
        )
    }

    pub fn dims(&self) -> (usize, usize) {
        self.channels[0].dims()
    }

    pub fn get(&self, row: usize, col: usize) -> [f64; 3] {
        [
            self.channels[0].get(row, col),
            self.channels[1].get(row, col),
            self.channels[2].get(row, col),
        ]
    }

    pub fn constants<'t>(&self, tape: &'t Tape) -> [Var<'t>; 3] {
        [
            tape.constant(self.channels[0].clone()),
            tape.constant(self.channels[1].clone()),
            tape.constant(self.channels[2].clone()),
        ]
    }
}
