use rand::Rng;

use crate::error::{contract, Result};
use crate::math::Matrix;
use crate::rng::StreamRng;

/// The four matrices of one learner.
///
/// `w_subject`, `w_object`: d_ctx × d_ctx projections of the subject and
/// object contexts. `w_fuse`: d_feat × 2·d_ctx map of the concatenated
/// projections. `w_relation`: K × d_feat class weights, K = |R| or |R'|.
#[derive(Debug, Clone, PartialEq)]
pub struct LearnerParameters {
    pub w_subject: Matrix,
    pub w_object: Matrix,
    pub w_fuse: Matrix,
    pub w_relation: Matrix,
}

/// Checkpoint names of the matrices, in [`LearnerParameters::matrices`] order.
pub const MATRIX_NAMES: [&str; 4] = ["W_s", "W_o", "W_c", "W"];

impl LearnerParameters {
    pub fn zeros(d_ctx: usize, d_feat: usize, classes: usize) -> Self {
        Self {
            w_subject: Matrix::zeros(d_ctx, d_ctx),
            w_object: Matrix::zeros(d_ctx, d_ctx),
            w_fuse: Matrix::zeros(d_feat, 2 * d_ctx),
            w_relation: Matrix::zeros(classes, d_feat),
        }
    }

    /// Entries i.i.d. uniform on [−a, a] with a = 1/√fan_in.
    pub fn init(d_ctx: usize, d_feat: usize, classes: usize, rng: &mut StreamRng) -> Self {
        let mut uniform = |rows: usize, cols: usize| {
            let a = 1.0 / (cols as f64).sqrt();
            Matrix::from_fn(rows, cols, |_, _| rng.random_range(-a..=a))
        };
        Self {
            w_subject: uniform(d_ctx, d_ctx),
            w_object: uniform(d_ctx, d_ctx),
            w_fuse: uniform(d_feat, 2 * d_ctx),
            w_relation: uniform(classes, d_feat),
        }
    }

    pub fn zeros_like(&self) -> Self {
        let z = |m: &Matrix| Matrix::zeros(m.rows(), m.cols());
        Self {
            w_subject: z(&self.w_subject),
            w_object: z(&self.w_object),
            w_fuse: z(&self.w_fuse),
            w_relation: z(&self.w_relation),
        }
    }

    pub fn d_ctx(&self) -> usize {
        self.w_subject.rows()
    }

    pub fn d_feat(&self) -> usize {
        self.w_fuse.rows()
    }

    pub fn classes(&self) -> usize {
        self.w_relation.rows()
    }

    pub fn matrices(&self) -> [&Matrix; 4] {
        [&self.w_subject, &self.w_object, &self.w_fuse, &self.w_relation]
    }

    pub fn matrices_mut(&mut self) -> [&mut Matrix; 4] {
        [
            &mut self.w_subject,
            &mut self.w_object,
            &mut self.w_fuse,
            &mut self.w_relation,
        ]
    }

    pub fn from_matrices([w_subject, w_object, w_fuse, w_relation]: [Matrix; 4]) -> Result<Self> {
        let p = Self {
            w_subject,
            w_object,
            w_fuse,
            w_relation,
        };
        p.check_shapes(p.d_ctx(), p.d_feat(), p.classes())?;
        Ok(p)
    }

    pub fn check_shapes(&self, d_ctx: usize, d_feat: usize, classes: usize) -> Result<()> {
        let expected = [
            (d_ctx, d_ctx),
            (d_ctx, d_ctx),
            (d_feat, 2 * d_ctx),
            (classes, d_feat),
        ];
        for ((name, m), want) in MATRIX_NAMES.iter().zip(self.matrices()).zip(expected) {
            if m.shape() != want {
                return Err(contract(format!(
                    "{name} is {:?}, expected {want:?}",
                    m.shape()
                )));
            }
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.matrices().iter().all(|m| m.is_finite())
    }

    pub fn axpy(&mut self, scale: f64, other: &Self) {
        for (a, b) in self.matrices_mut().into_iter().zip(other.matrices()) {
            a.axpy(scale, b);
        }
    }
}

/// Gradients of the combined loss for both learners.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    pub f: LearnerParameters,
    pub g: LearnerParameters,
}

impl GradientSet {
    pub fn zeros_like(f: &LearnerParameters, g: &LearnerParameters) -> Self {
        Self {
            f: f.zeros_like(),
            g: g.zeros_like(),
        }
    }

    /// `(name, matrix)` for all eight matrices, F first.
    pub fn named(&self) -> Vec<(String, &Matrix)> {
        named("F", &self.f).into_iter().chain(named("G", &self.g)).collect()
    }
}

pub fn named<'a>(learner: &str, p: &'a LearnerParameters) -> Vec<(String, &'a Matrix)> {
    MATRIX_NAMES
        .iter()
        .zip(p.matrices())
        .map(|(n, m)| (format!("{learner}.{n}"), m))
        .collect()
}
