//! The three-headed descriptor network: a shared convolutional trunk
//! feeding the place vector `q` and orientation vector `w`, a yaw-regression
//! MLP over `w` pairs, and a three-way environment classifier over `q`.

mod loss;
mod sampler;
mod train;

pub use loss::{
    combined_loss, cross_entropy_smoothed, hinge_loss, orientation_loss, smooth_labels,
    triplet_loss,
};
pub use sampler::{sample_triplets, MiningStage, SampleError, Triplet, TripletSampler};
pub use train::{classifier_recall, train, EpochLog, TrainError, TrainParams, TrainReport};

use crate::descriptor::{DescriptorPair, DESCRIPTOR_DIM};
use crate::projection::RangeImage;
use crate::tensor::{
    load_checkpoint, relu, relu_backward, save_checkpoint, softmax, tanh, tanh_backward,
    CheckpointError, Conv2d, Dense, MaxPool2, Param, ShapeError, Tensor,
};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

/// Environment classes. Index order is the tie-breaking order everywhere.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassLabel {
    Straight = 0,
    Junction = 1,
    Turn = 2,
}

impl ClassLabel {
    pub const ALL: [ClassLabel; 3] = [ClassLabel::Straight, ClassLabel::Junction, ClassLabel::Turn];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            ClassLabel::Straight => "straight",
            ClassLabel::Junction => "junction",
            ClassLabel::Turn => "turn",
        }
    }
}

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Shape(#[from] ShapeError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("image size {got_h}x{got_w} does not match the network input {want_h}x{want_w}")]
    InputSize { want_h: usize, want_w: usize, got_h: usize, got_w: usize },
}

/// Width of the shared fully connected trunk layer.
const TRUNK_WIDTH: usize = 256;
/// Hidden width of the yaw-regression MLP.
const ORIENT_HIDDEN: usize = 128;
/// Hidden width of the classifier MLP.
const CLASS_HIDDEN: usize = 64;

/// Spatial extent after the three conv+pool stages.
fn pooled_extent(mut v: usize) -> usize {
    for _ in 0..3 {
        v = v.div_ceil(2);
    }
    v
}

/// All trainable parameters plus the input geometry they were built for.
/// Conv trunk: 64 5x5 filters, then two 32-filter 3x3 layers, each followed
/// by 2x2 max pooling.
#[derive(Debug, Clone)]
pub struct ModelWeights {
    pub input_height: usize,
    pub input_width: usize,
    flat_len: usize,
    conv1: Conv2d,
    conv2: Conv2d,
    conv3: Conv2d,
    fc_trunk: Dense,
    q_head: Dense,
    w_head: Dense,
    orient1: Dense,
    orient2: Dense,
    class1: Dense,
    class2: Dense,
}

impl ModelWeights {
    /// Architecture for `height x width` range images, zero-valued weights.
    pub fn zeroed(input_height: usize, input_width: usize) -> Self {
        let flat_len = 32 * pooled_extent(input_height) * pooled_extent(input_width);
        Self {
            input_height,
            input_width,
            flat_len,
            conv1: Conv2d::new(64, 1, 5, 5),
            conv2: Conv2d::new(32, 64, 3, 3),
            conv3: Conv2d::new(32, 32, 3, 3),
            fc_trunk: Dense::new(TRUNK_WIDTH, flat_len),
            q_head: Dense::new(DESCRIPTOR_DIM, TRUNK_WIDTH),
            w_head: Dense::new(DESCRIPTOR_DIM, TRUNK_WIDTH),
            orient1: Dense::new(ORIENT_HIDDEN, 2 * DESCRIPTOR_DIM),
            orient2: Dense::new(2, ORIENT_HIDDEN),
            class1: Dense::new(CLASS_HIDDEN, DESCRIPTOR_DIM),
            class2: Dense::new(3, CLASS_HIDDEN),
        }
    }

    /// He-style initialization, deterministic for a given rng state.
    pub fn init(input_height: usize, input_width: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut model = Self::zeroed(input_height, input_width);
        let fans: Vec<(usize, usize)> = {
            let named = model.named_params();
            named
                .iter()
                .enumerate()
                .filter(|(_, (name, _))| name.ends_with("weight"))
                .map(|(i, (_, p))| {
                    // fan-in: everything but the leading output dimension.
                    (i, p.shape[1..].iter().product::<usize>())
                })
                .collect()
        };
        let mut named = model.named_params();
        for (i, fan_in) in fans {
            let scale = (2.0 / fan_in as f64).sqrt();
            for v in &mut named[i].1.value {
                // Box-Muller normal sample from two uniforms.
                let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
                let u2: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
                *v = scale * (-2.0 * u1.ln()).sqrt() * u2.cos();
            }
        }
        drop(named);
        model
    }

    /// Every parameter block with its checkpoint name.
    pub(crate) fn named_params(&mut self) -> Vec<(&'static str, &mut Param)> {
        vec![
            ("conv1.weight", &mut self.conv1.weight),
            ("conv1.bias", &mut self.conv1.bias),
            ("conv2.weight", &mut self.conv2.weight),
            ("conv2.bias", &mut self.conv2.bias),
            ("conv3.weight", &mut self.conv3.weight),
            ("conv3.bias", &mut self.conv3.bias),
            ("fc_trunk.weight", &mut self.fc_trunk.weight),
            ("fc_trunk.bias", &mut self.fc_trunk.bias),
            ("q_head.weight", &mut self.q_head.weight),
            ("q_head.bias", &mut self.q_head.bias),
            ("w_head.weight", &mut self.w_head.weight),
            ("w_head.bias", &mut self.w_head.bias),
            ("orient1.weight", &mut self.orient1.weight),
            ("orient1.bias", &mut self.orient1.bias),
            ("orient2.weight", &mut self.orient2.weight),
            ("orient2.bias", &mut self.orient2.bias),
            ("class1.weight", &mut self.class1.weight),
            ("class1.bias", &mut self.class1.bias),
            ("class2.weight", &mut self.class2.weight),
            ("class2.bias", &mut self.class2.bias),
        ]
    }

    fn image_tensor(&self, img: &RangeImage) -> Result<Tensor, ModelError> {
        if img.height() != self.input_height || img.width() != self.input_width {
            return Err(ModelError::InputSize {
                want_h: self.input_height,
                want_w: self.input_width,
                got_h: img.height(),
                got_w: img.width(),
            });
        }
        Ok(Tensor::from_vec(&[1, self.input_height, self.input_width], img.pixels().to_vec()))
    }

    /// Inference-only descriptor extraction; deterministic and read-only.
    pub fn forward_descriptor(&self, img: &RangeImage) -> Result<DescriptorPair, ModelError> {
        Ok(self.forward_descriptor_trace(img)?.into_pair())
    }

    /// Train-time forward, keeping every intermediate the backward needs.
    pub(crate) fn forward_descriptor_trace(
        &self,
        img: &RangeImage,
    ) -> Result<DescriptorTrace, ModelError> {
        let x = self.image_tensor(img)?;
        let u1 = self.conv1.forward(&x)?;
        let (p1, arg1) = MaxPool2.forward(&relu(&u1));
        let u2 = self.conv2.forward(&p1)?;
        let (p2, arg2) = MaxPool2.forward(&relu(&u2));
        let u3 = self.conv3.forward(&p2)?;
        let (p3, arg3) = MaxPool2.forward(&relu(&u3));
        let p3_shape = p3.shape().to_vec();
        let flat = Tensor::from_vec(&[self.flat_len], p3.data);
        let ut = self.fc_trunk.forward(&flat)?;
        let t = relu(&ut);
        let q = self.q_head.forward(&t)?;
        let w = self.w_head.forward(&t)?;
        Ok(DescriptorTrace { x, u1, arg1, p1, u2, arg2, p2, u3, arg3, p3_shape, flat, ut, t, q, w })
    }

    /// Backpropagate descriptor-head gradients through the trunk,
    /// accumulating parameter gradients.
    pub(crate) fn backward_descriptor(
        &mut self,
        trace: &DescriptorTrace,
        grad_q: &[f64],
        grad_w: &[f64],
    ) -> Result<(), ModelError> {
        let gq = Tensor::from_vec(&[DESCRIPTOR_DIM], grad_q.to_vec());
        let gw = Tensor::from_vec(&[DESCRIPTOR_DIM], grad_w.to_vec());
        let gt_q = self.q_head.backward(&trace.t, &gq)?;
        let gt_w = self.w_head.backward(&trace.t, &gw)?;
        let gt = Tensor::from_vec(
            &[TRUNK_WIDTH],
            gt_q.data.iter().zip(&gt_w.data).map(|(a, b)| a + b).collect(),
        );
        let gut = relu_backward(&trace.ut, &gt);
        let gflat = self.fc_trunk.backward(&trace.flat, &gut)?;
        let gp3 = Tensor::from_vec(&trace.p3_shape, gflat.data);
        let ga3 = MaxPool2.backward(trace.u3.shape(), &trace.arg3, &gp3);
        let gu3 = relu_backward(&trace.u3, &ga3);
        let gp2 = self.conv3.backward(&trace.p2, &gu3)?;
        let ga2 = MaxPool2.backward(trace.u2.shape(), &trace.arg2, &gp2);
        let gu2 = relu_backward(&trace.u2, &ga2);
        let gp1 = self.conv2.backward(&trace.p1, &gu2)?;
        let ga1 = MaxPool2.backward(trace.u1.shape(), &trace.arg1, &gp1);
        let gu1 = relu_backward(&trace.u1, &ga1);
        let _gx = self.conv1.backward(&trace.x, &gu1)?;
        Ok(())
    }

    /// Yaw head forward for a `(w_a, w_b)` pair.
    pub(crate) fn orientation_forward(
        &self,
        w_a: &[f64],
        w_b: &[f64],
    ) -> Result<OrientationTrace, ModelError> {
        let mut joined = Vec::with_capacity(2 * DESCRIPTOR_DIM);
        joined.extend_from_slice(w_a);
        joined.extend_from_slice(w_b);
        let input = Tensor::from_vec(&[2 * DESCRIPTOR_DIM], joined);
        let uh = self.orient1.forward(&input)?;
        let h = relu(&uh);
        let uy = self.orient2.forward(&h)?;
        let y = tanh(&uy);
        Ok(OrientationTrace { input, uh, h, y })
    }

    /// Backprop the yaw head; returns gradients for `(w_a, w_b)`.
    pub(crate) fn orientation_backward(
        &mut self,
        trace: &OrientationTrace,
        grad_y: &[f64; 2],
    ) -> Result<(Vec<f64>, Vec<f64>), ModelError> {
        let gy = Tensor::from_vec(&[2], grad_y.to_vec());
        let guy = tanh_backward(&trace.y, &gy);
        let gh = self.orient2.backward(&trace.h, &guy)?;
        let guh = relu_backward(&trace.uh, &gh);
        let ginput = self.orient1.backward(&trace.input, &guh)?;
        let (a, b) = ginput.data.split_at(DESCRIPTOR_DIM);
        Ok((a.to_vec(), b.to_vec()))
    }

    /// Estimated yaw of the scan behind `w_a` relative to the scan behind
    /// `w_b`, decoded as `atan2(y1, y0)`, in `(-pi, pi]`.
    pub fn estimate_yaw(&self, w_a: &[f64], w_b: &[f64]) -> Result<f64, ModelError> {
        let trace = self.orientation_forward(w_a, w_b)?;
        Ok(trace.y.data[1].atan2(trace.y.data[0]))
    }

    /// Classifier trace with pre-softmax scores.
    pub(crate) fn class_scores(&self, q: &[f64]) -> Result<ClassTrace, ModelError> {
        let input = Tensor::from_vec(&[DESCRIPTOR_DIM], q.to_vec());
        let uh = self.class1.forward(&input)?;
        let h = relu(&uh);
        let s = self.class2.forward(&h)?;
        Ok(ClassTrace { input, uh, h, s })
    }

    pub(crate) fn class_backward(
        &mut self,
        trace: &ClassTrace,
        grad_s: &[f64; 3],
    ) -> Result<Vec<f64>, ModelError> {
        let gs = Tensor::from_vec(&[3], grad_s.to_vec());
        let gh = self.class2.backward(&trace.h, &gs)?;
        let guh = relu_backward(&trace.uh, &gh);
        let ginput = self.class1.backward(&trace.input, &guh)?;
        Ok(ginput.data)
    }

    /// Class probabilities: softmax over the classifier scores.
    pub fn classify(&self, q: &[f64]) -> Result<[f64; 3], ModelError> {
        let trace = self.class_scores(q)?;
        let p = softmax(&trace.s.data);
        Ok([p[0], p[1], p[2]])
    }

    pub fn zero_grads(&mut self) {
        for (_, p) in self.named_params() {
            p.zero_grad();
        }
    }

    pub fn save(&mut self, path: &Path) -> Result<(), ModelError> {
        let meta =
            Param::from_values(&[2], vec![self.input_height as f64, self.input_width as f64]);
        let named = self.named_params();
        let mut refs: Vec<(&str, &Param)> = vec![("meta.input_shape", &meta)];
        for (n, p) in &named {
            refs.push((n, &**p));
        }
        save_checkpoint(path, &refs)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        let entries = load_checkpoint(path)?;
        let find = |name: &str| {
            entries
                .iter()
                .find(|(n, _, _)| n == name)
                .ok_or_else(|| CheckpointError::Missing(name.to_string()))
        };
        let (_, _, meta) = find("meta.input_shape")?;
        let mut model = Self::zeroed(meta[0] as usize, meta[1] as usize);
        for (name, param) in model.named_params() {
            let (_, shape, values) = find(name)?;
            if *shape != param.shape {
                return Err(CheckpointError::ShapeMismatch {
                    name: name.to_string(),
                    expected: param.shape.clone(),
                    got: shape.clone(),
                }
                .into());
            }
            param.value = values.clone();
        }
        Ok(model)
    }
}

/// Every intermediate of a descriptor forward pass.
pub(crate) struct DescriptorTrace {
    x: Tensor,
    u1: Tensor,
    arg1: Vec<u32>,
    p1: Tensor,
    u2: Tensor,
    arg2: Vec<u32>,
    p2: Tensor,
    u3: Tensor,
    arg3: Vec<u32>,
    p3_shape: Vec<usize>,
    flat: Tensor,
    ut: Tensor,
    t: Tensor,
    pub q: Tensor,
    pub w: Tensor,
}

impl DescriptorTrace {
    pub fn into_pair(self) -> DescriptorPair {
        DescriptorPair::new(self.q.data, self.w.data)
    }

}

pub(crate) struct OrientationTrace {
    input: Tensor,
    uh: Tensor,
    h: Tensor,
    pub y: Tensor,
}

pub(crate) struct ClassTrace {
    input: Tensor,
    uh: Tensor,
    h: Tensor,
    pub s: Tensor,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::projection::ProjectionParams;
    use crate::tensor::gradcheck;
    use rand::SeedableRng;

    fn tiny_params() -> ProjectionParams {
        ProjectionParams { height: 8, width: 64, ..ProjectionParams::default() }
    }

    fn tiny_model(seed: u64) -> ModelWeights {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ModelWeights::init(8, 64, &mut rng)
    }

    fn random_image(seed: u64) -> RangeImage {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = tiny_params();
        let pixels = (0..p.height * p.width).map(|_| rng.gen_range(0.0..1.0)).collect();
        RangeImage::from_pixels(p, pixels)
    }

    #[test]
    fn descriptor_is_deterministic_and_seed_pinned() {
        let model = tiny_model(9);
        let zero = RangeImage::from_pixels(tiny_params(), vec![0.0; 8 * 64]);
        let a = model.forward_descriptor(&zero).unwrap();
        let b = model.forward_descriptor(&zero).unwrap();
        assert_eq!(a, b);
        assert!(a.q.iter().chain(&a.w).all(|v| v.is_finite()));
        // Same seed, fresh weights: bit-identical output.
        let again = tiny_model(9).forward_descriptor(&zero).unwrap();
        assert_eq!(a, again);
        // A different input changes the pair.
        let other = model.forward_descriptor(&random_image(4)).unwrap();
        assert_ne!(a, other);
    }

    #[test]
    fn descriptor_dims_are_contractual() {
        let model = tiny_model(1);
        let pair = model.forward_descriptor(&random_image(2)).unwrap();
        assert_eq!(pair.q.len(), DESCRIPTOR_DIM);
        assert_eq!(pair.w.len(), DESCRIPTOR_DIM);
    }

    #[test]
    fn wrong_input_size_rejected() {
        let model = tiny_model(1);
        let img = RangeImage::from_pixels(
            ProjectionParams { height: 16, width: 64, ..ProjectionParams::default() },
            vec![0.0; 16 * 64],
        );
        assert!(matches!(
            model.forward_descriptor(&img),
            Err(ModelError::InputSize { .. })
        ));
    }

    #[test]
    fn classify_returns_a_distribution() {
        use rand::Rng;
        let model = tiny_model(3);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let q: Vec<f64> = (0..DESCRIPTOR_DIM).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let p = model.classify(&q).unwrap();
        assert!(p.iter().all(|&v| v >= 0.0));
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert_eq!(model.classify(&q).unwrap(), p);
    }

    #[test]
    fn atan2_decode_of_unit_x_is_zero() {
        assert_eq!(0.0f64.atan2(1.0), 0.0);
    }

    #[test]
    fn checkpoint_round_trip_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.ckpt");
        let mut model = tiny_model(12);
        model.save(&path).unwrap();
        let mut back = ModelWeights::load(&path).unwrap();
        let img = random_image(6);
        assert_eq!(
            model.forward_descriptor(&img).unwrap(),
            back.forward_descriptor(&img).unwrap()
        );
        let a = model.named_params();
        let b = back.named_params();
        for ((n1, p1), (_, p2)) in a.iter().zip(b.iter()) {
            for (x, y) in p1.value.iter().zip(&p2.value) {
                assert_eq!(x.to_bits(), y.to_bits(), "{n1}");
            }
        }
    }

    #[test]
    fn trunk_gradients_match_finite_differences() {
        // End-to-end check through conv/pool/relu/dense: loss = r . [q; w].
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        // A small input keeps the finite-difference sweep cheap; width 12
        // still leaves conv3 a 3-wide input after two pools.
        let mut model = ModelWeights::init(4, 12, &mut rng);
        let p = ProjectionParams { height: 4, width: 12, ..ProjectionParams::default() };
        let img = RangeImage::from_pixels(p, (0..48).map(|_| rng.gen_range(0.0..1.0)).collect());
        let rq: Vec<f64> = (0..DESCRIPTOR_DIM).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let rw: Vec<f64> = (0..DESCRIPTOR_DIM).map(|_| rng.gen_range(-1.0..1.0)).collect();

        let loss_of = |m: &ModelWeights| -> f64 {
            let pair = m.forward_descriptor(&img).unwrap();
            pair.q.iter().zip(&rq).map(|(a, b)| a * b).sum::<f64>()
                + pair.w.iter().zip(&rw).map(|(a, b)| a * b).sum::<f64>()
        };

        let trace = model.forward_descriptor_trace(&img).unwrap();
        model.zero_grads();
        model.backward_descriptor(&trace, &rq, &rw).unwrap();

        let analytic: Vec<(String, Vec<f64>)> = model
            .named_params()
            .into_iter()
            .map(|(n, p)| (n.to_string(), p.grad.clone()))
            .collect();

        // Spot-check first/middle/last element of every parameter block.
        let mut probe = model.clone();
        for (pi, (name, grads)) in analytic.iter().enumerate() {
            let len = grads.len();
            for &i in &[0usize, len / 2, len - 1] {
                let mut eval = |value: f64| -> f64 {
                    probe.named_params()[pi].1.value[i] = value;
                    loss_of(&probe)
                };
                let base = model.named_params()[pi].1.value[i];
                let plus = eval(base + gradcheck::STEP);
                let minus = eval(base - gradcheck::STEP);
                eval(base);
                let numeric = (plus - minus) / (2.0 * gradcheck::STEP);
                assert!(
                    gradcheck::close(grads[i], numeric),
                    "{name}[{i}]: analytic {} vs numeric {numeric}",
                    grads[i]
                );
            }
        }
    }
}
