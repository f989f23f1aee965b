use super::ModelParams;

/// Exponential moving average of the student's parameters. The teacher never
/// receives gradients; [`Teacher::update`] is its only mutation.
#[derive(Debug, Clone, PartialEq)]
pub struct Teacher {
    params: ModelParams,
}

impl Teacher {
    /// Starts as an exact copy of the (initial) student.
    pub fn from_student(student: &ModelParams) -> Self {
        Self {
            params: student.clone(),
        }
    }

    pub(crate) fn from_params(params: ModelParams) -> Self {
        Self { params }
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    /// `p* <- alpha * p* + (1 - alpha) * p` for every parameter.
    pub fn update(&mut self, student: &ModelParams, alpha: f64) {
        assert!(self.params.same_shape(student), "teacher/student shape mismatch");
        assert!((0.0..=1.0).contains(&alpha), "alpha must lie in [0, 1]");
        for (t, s) in self.params.values_mut().zip(student.values()) {
            *t = alpha * *t + (1.0 - alpha) * s;
        }
    }
}
