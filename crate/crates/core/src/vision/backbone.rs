//! Image backbones.
//!
//! Only `tiny-cnn` (trainable) and `stub-color` (parameter-free, for service
//! fixtures) run in this build. The other registry entries describe the
//! full-size architectures the toolkit is meant to wrap; requesting them
//! returns [`Error::ModelUnavailable`].

use candle_core::{Device, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::augment::images_to_tensor;
use super::freeze::{plan_freeze, FreezePlan, GroupRole};
use crate::error::{Error, Result};
use crate::nn::{self, ParamGroup};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BackboneConfig {
    pub architecture: String,
    pub pretrained: bool,
    pub freeze_fraction: f64,
    pub num_classes: usize,
}

impl BackboneConfig {
    pub fn new(architecture: &str, num_classes: usize) -> Self {
        BackboneConfig {
            architecture: architecture.to_string(),
            pretrained: false,
            freeze_fraction: 0.0,
            num_classes,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.freeze_fraction) {
            return Err(Error::InvalidConfig(format!(
                "freeze fraction {} not in [0, 1]",
                self.freeze_fraction
            )));
        }
        if self.num_classes < 2 {
            return Err(Error::InvalidConfig("at least two classes are required".into()));
        }
        lookup_backbone(&self.architecture)?;
        Ok(())
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub struct BackboneSpec {
    pub id: &'static str,
    pub description: &'static str,
    pub runnable: bool,
}

pub const BACKBONES: &[BackboneSpec] = &[
    BackboneSpec { id: "tiny-cnn", description: "4-block CNN for CPU tests and demos", runnable: true },
    BackboneSpec { id: "stub-color", description: "parameter-free mean-color scorer for fixtures", runnable: true },
    BackboneSpec { id: "resnet18", description: "ResNet-18", runnable: false },
    BackboneSpec { id: "resnet50", description: "ResNet-50", runnable: false },
    BackboneSpec { id: "resnet152", description: "ResNet-152", runnable: false },
    BackboneSpec { id: "efficientnet-b0", description: "EfficientNet-B0", runnable: false },
    BackboneSpec { id: "efficientnet-b3", description: "EfficientNet-B3", runnable: false },
    BackboneSpec { id: "efficientnet-b6", description: "EfficientNet-B6", runnable: false },
    BackboneSpec { id: "vgg11", description: "VGG-11", runnable: false },
    BackboneSpec { id: "vgg16", description: "VGG-16", runnable: false },
    BackboneSpec { id: "vit-b16", description: "ViT-B/16", runnable: false },
];

pub fn lookup_backbone(id: &str) -> Result<&'static BackboneSpec> {
    BACKBONES.iter().find(|b| b.id == id).ok_or_else(|| {
        Error::InvalidConfig(format!(
            "unknown backbone {id:?}; known: {}",
            BACKBONES.iter().map(|b| b.id).collect::<Vec<_>>().join(", ")
        ))
    })
}

const TINY_CHANNELS: [usize; 5] = [3, 8, 16, 32, 32];

/// Four 3x3 conv blocks (max-pooled after the first three), global average
/// pooling and a linear head.
#[derive(Clone, Debug)]
pub struct TinyCnn {
    groups: Vec<ParamGroup>,
}

impl TinyCnn {
    pub fn new(num_classes: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut groups = Vec::new();
        for i in 0..4 {
            let (cin, cout) = (TINY_CHANNELS[i], TINY_CHANNELS[i + 1]);
            let fan_in = cin * 9;
            let bound = (6.0 / fan_in as f32).sqrt();
            groups.push(ParamGroup::new(
                &format!("conv{}", i + 1),
                GroupRole::FeatureExtractor,
                vec![
                    ("weight", nn::uniform(&mut rng, &[cout, cin, 3, 3], bound)?),
                    ("bias", nn::zeros(&[cout])?),
                ],
            )?);
        }
        let hidden = TINY_CHANNELS[4];
        let bound = 1.0 / (hidden as f32).sqrt();
        groups.push(ParamGroup::new(
            "head",
            GroupRole::Head,
            vec![
                ("weight", nn::uniform(&mut rng, &[num_classes, hidden], bound)?),
                ("bias", nn::zeros(&[num_classes])?),
            ],
        )?);
        Ok(TinyCnn { groups })
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut h = x.clone();
        for (i, g) in self.groups[..4].iter().enumerate() {
            let w = g.tensor(0);
            let b = g.tensor(1);
            let c = b.dims()[0];
            h = h
                .conv2d(&w, 1, 1, 1, 1)?
                .broadcast_add(&b.reshape((1, c, 1, 1))?)?
                .relu()?;
            if i < 3 {
                h = h.max_pool2d(2)?;
            }
        }
        let pooled = h.mean((2, 3))?;
        let head = &self.groups[4];
        Ok(pooled
            .matmul(&head.tensor(0).t()?)?
            .broadcast_add(&head.tensor(1))?)
    }
}

/// Scores classes by the distance between an image's mean color and a
/// per-class hue on the color wheel.
#[derive(Clone, Debug)]
pub struct StubColor {
    prototypes: Tensor,
}

fn hue_to_rgb(h: f32) -> [u8; 3] {
    let (s, v) = (0.8f32, 0.85f32);
    let i = (h * 6.0).floor();
    let f = h * 6.0 - i;
    let (p, q, t) = (v * (1.0 - s), v * (1.0 - f * s), v * (1.0 - (1.0 - f) * s));
    let (r, g, b) = match i as i32 % 6 {
        0 => (v, t, p),
        1 => (q, v, p),
        2 => (p, v, t),
        3 => (p, q, v),
        4 => (t, p, v),
        _ => (v, p, q),
    };
    [r, g, b].map(|c| (c * 255.0).round() as u8)
}

impl StubColor {
    pub fn new(num_classes: usize) -> Result<Self> {
        let imgs: Vec<image::RgbImage> = (0..num_classes)
            .map(|c| image::RgbImage::from_pixel(1, 1, image::Rgb(hue_to_rgb(c as f32 / num_classes as f32))))
            .collect();
        let prototypes = images_to_tensor(&imgs, &Device::Cpu)?.reshape((num_classes, 3))?;
        Ok(StubColor { prototypes })
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let means = x.mean((2, 3))?.unsqueeze(1)?;
        let d = means
            .broadcast_sub(&self.prototypes.unsqueeze(0)?)?
            .sqr()?
            .sum(2)?;
        Ok((d * -4.0)?)
    }
}

#[derive(Clone, Debug)]
pub enum VisionNet {
    TinyCnn(TinyCnn),
    StubColor(StubColor),
}

impl VisionNet {
    /// Fresh, seeded weights for a runnable backbone.
    pub fn build(config: &BackboneConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let spec = lookup_backbone(&config.architecture)?;
        if !spec.runnable {
            return Err(Error::ModelUnavailable {
                id: spec.id.to_string(),
                instructions: format!(
                    "{} is not bundled in this build; use tiny-cnn or add a backbone implementation",
                    spec.description
                ),
            });
        }
        match spec.id {
            "tiny-cnn" => Ok(VisionNet::TinyCnn(TinyCnn::new(config.num_classes, seed)?)),
            "stub-color" => Ok(VisionNet::StubColor(StubColor::new(config.num_classes)?)),
            other => unreachable!("runnable backbone {other} without constructor"),
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        match self {
            VisionNet::TinyCnn(m) => m.forward(x),
            VisionNet::StubColor(m) => m.forward(x),
        }
    }

    pub fn groups(&self) -> &[ParamGroup] {
        match self {
            VisionNet::TinyCnn(m) => &m.groups,
            VisionNet::StubColor(_) => &[],
        }
    }

    pub fn groups_mut(&mut self) -> &mut [ParamGroup] {
        match self {
            VisionNet::TinyCnn(m) => &mut m.groups,
            VisionNet::StubColor(_) => &mut [],
        }
    }

    pub fn param_count(&self) -> usize {
        self.groups().iter().map(ParamGroup::param_count).sum()
    }
}

/// Freezes the leading `freeze_fraction` of feature-extractor parameters.
pub fn freeze_parameters(net: &mut VisionNet, freeze_fraction: f64) -> Result<FreezePlan> {
    let plan = plan_freeze(&nn::group_infos(net.groups()), freeze_fraction)?;
    nn::apply_plan(net.groups_mut(), &plan)?;
    Ok(plan)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tiny_cnn_group_sizes() {
        let net = VisionNet::build(&BackboneConfig::new("tiny-cnn", 4), 0).unwrap();
        let sizes: Vec<usize> = net.groups().iter().map(ParamGroup::param_count).collect();
        assert_eq!(sizes, vec![224, 1168, 4640, 9248, 132]);
    }

    #[test]
    fn forward_shapes() {
        let x = Tensor::zeros((2, 3, 16, 16), candle_core::DType::F32, &Device::Cpu).unwrap();
        for arch in ["tiny-cnn", "stub-color"] {
            let net = VisionNet::build(&BackboneConfig::new(arch, 5), 1).unwrap();
            assert_eq!(net.forward(&x).unwrap().dims(), &[2, 5]);
        }
    }

    #[test]
    fn unavailable_backbone_reports_instructions() {
        let err = VisionNet::build(&BackboneConfig::new("resnet50", 26), 0).unwrap_err();
        assert!(matches!(err, Error::ModelUnavailable { .. }));
        assert!(VisionNet::build(&BackboneConfig::new("nope", 26), 0).is_err());
    }

    #[test]
    fn freeze_extremes_on_tiny_cnn() {
        let mut net = VisionNet::build(&BackboneConfig::new("tiny-cnn", 4), 0).unwrap();
        let plan = freeze_parameters(&mut net, 1.0).unwrap();
        assert_eq!(plan.trainable_params(), 132);
        assert_eq!(nn::trainable_vars(net.groups()).len(), 2);
        let plan = freeze_parameters(&mut net, 0.0).unwrap();
        assert_eq!(plan.trainable_params(), net.param_count());
    }

    #[test]
    fn stub_has_no_head_to_freeze() {
        let mut net = VisionNet::build(&BackboneConfig::new("stub-color", 4), 0).unwrap();
        assert!(freeze_parameters(&mut net, 0.5).is_err());
    }
}
