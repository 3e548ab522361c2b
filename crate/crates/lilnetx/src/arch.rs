//! Architecture registry: descriptors that can be serialized into the model
//! container and rebuilt into networks deterministically.

use crate::layers::{BatchNorm, ConvSpec, Layer};
use crate::net::{Block, Network};
use crate::scalar::Scalar;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArchKind {
    /// Two dense layers with a relu between them.
    Mlp,
    /// Four 3×3 conv + batchnorm + relu stages, global average pool, dense.
    MiniConv,
    /// ResNet-20 layout with option-A shortcuts: a 3×3 stem plus three
    /// stages of three basic blocks, global average pool, dense.
    ResNet20,
}

impl ArchKind {
    pub fn id(&self) -> u8 {
        match self {
            ArchKind::Mlp => 0,
            ArchKind::MiniConv => 1,
            ArchKind::ResNet20 => 2,
        }
    }

    pub fn from_id(id: u8) -> Result<Self> {
        match id {
            0 => Ok(ArchKind::Mlp),
            1 => Ok(ArchKind::MiniConv),
            2 => Ok(ArchKind::ResNet20),
            other => Err(Error::Codec(format!("unknown architecture id {other}"))),
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "mlp" => Ok(ArchKind::Mlp),
            "miniconv" => Ok(ArchKind::MiniConv),
            "resnet20" => Ok(ArchKind::ResNet20),
            other => Err(Error::Config(format!(
                "unknown architecture '{other}' (expected mlp, miniconv, or resnet20)"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ArchKind::Mlp => "mlp",
            ArchKind::MiniConv => "miniconv",
            ArchKind::ResNet20 => "resnet20",
        }
    }
}

/// Everything needed to rebuild a network skeleton bit-for-bit.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArchDescriptor {
    pub kind: ArchKind,
    /// Input (channels, height, width).
    pub input: (usize, usize, usize),
    pub num_classes: usize,
    /// Stage widths; meaning depends on the kind. Mlp: hidden sizes,
    /// MiniConv: the four conv widths, ResNet20: the three stage widths.
    pub widths: Vec<usize>,
}

impl ArchDescriptor {
    pub fn mlp(input: (usize, usize, usize), num_classes: usize, hidden: usize) -> Self {
        Self { kind: ArchKind::Mlp, input, num_classes, widths: vec![hidden] }
    }

    pub fn miniconv(input: (usize, usize, usize), num_classes: usize, widths: [usize; 4]) -> Self {
        Self { kind: ArchKind::MiniConv, input, num_classes, widths: widths.to_vec() }
    }

    pub fn resnet20(input: (usize, usize, usize), num_classes: usize, widths: [usize; 3]) -> Self {
        Self { kind: ArchKind::ResNet20, input, num_classes, widths: widths.to_vec() }
    }

    pub fn build<T: Scalar>(&self) -> Result<Network<T>> {
        let net = match self.kind {
            ArchKind::Mlp => self.build_mlp()?,
            ArchKind::MiniConv => self.build_miniconv()?,
            ArchKind::ResNet20 => self.build_resnet20()?,
        };
        net.check_shapes()?;
        Ok(net)
    }

    fn build_mlp<T: Scalar>(&self) -> Result<Network<T>> {
        let [hidden] = self.widths[..] else {
            return Err(Error::Config("mlp expects one hidden width".into()));
        };
        let (c, h, w) = self.input;
        let features = c * h * w;
        let layers = vec![
            Layer::Dense { c_in: features, c_out: hidden, bias: vec![T::zero(); hidden] },
            Layer::Relu,
            Layer::Dense { c_in: hidden, c_out: self.num_classes, bias: vec![T::zero(); self.num_classes] },
        ];
        Ok(Network {
            layers,
            blocks: vec![Block::Plain(vec![0, 1, 2])],
            num_classes: self.num_classes,
            input_shape: self.input,
        })
    }

    fn build_miniconv<T: Scalar>(&self) -> Result<Network<T>> {
        let [c1, c2, c3, c4] = self.widths[..] else {
            return Err(Error::Config("miniconv expects four conv widths".into()));
        };
        let (c_in, _, _) = self.input;
        let mut layers: Vec<Layer<T>> = Vec::new();
        let mut chain = Vec::new();
        // strides 1,2,2,1: 28x28 -> 28 -> 14 -> 7 -> 7
        let stages = [(c_in, c1, 1usize), (c1, c2, 2), (c2, c3, 2), (c3, c4, 1)];
        for (cin, cout, stride) in stages {
            chain.push(layers.len());
            layers.push(Layer::Conv(ConvSpec { c_in: cin, c_out: cout, k: 3, stride, padding: 1 }));
            chain.push(layers.len());
            layers.push(Layer::BatchNorm(BatchNorm::new(cout)));
            chain.push(layers.len());
            layers.push(Layer::Relu);
        }
        chain.push(layers.len());
        layers.push(Layer::GlobalAvgPool);
        chain.push(layers.len());
        layers.push(Layer::Dense {
            c_in: c4,
            c_out: self.num_classes,
            bias: vec![T::zero(); self.num_classes],
        });
        Ok(Network {
            layers,
            blocks: vec![Block::Plain(chain)],
            num_classes: self.num_classes,
            input_shape: self.input,
        })
    }

    fn build_resnet20<T: Scalar>(&self) -> Result<Network<T>> {
        let [w1, w2, w3] = self.widths[..] else {
            return Err(Error::Config("resnet20 expects three stage widths".into()));
        };
        let (c_in, _, _) = self.input;
        let mut layers: Vec<Layer<T>> = Vec::new();
        let mut blocks = Vec::new();
        layers.push(Layer::Conv(ConvSpec { c_in, c_out: w1, k: 3, stride: 1, padding: 1 }));
        layers.push(Layer::BatchNorm(BatchNorm::new(w1)));
        layers.push(Layer::Relu);
        blocks.push(Block::Plain(vec![0, 1, 2]));
        let mut prev = w1;
        for (stage, &width) in [w1, w2, w3].iter().enumerate() {
            for block in 0..3 {
                let stride = if stage > 0 && block == 0 { 2 } else { 1 };
                let conv1 = layers.len();
                layers.push(Layer::Conv(ConvSpec {
                    c_in: prev,
                    c_out: width,
                    k: 3,
                    stride,
                    padding: 1,
                }));
                let bn1 = layers.len();
                layers.push(Layer::BatchNorm(BatchNorm::new(width)));
                let relu1 = layers.len();
                layers.push(Layer::Relu);
                let conv2 = layers.len();
                layers.push(Layer::Conv(ConvSpec {
                    c_in: width,
                    c_out: width,
                    k: 3,
                    stride: 1,
                    padding: 1,
                }));
                let bn2 = layers.len();
                layers.push(Layer::BatchNorm(BatchNorm::new(width)));
                let relu2 = layers.len();
                layers.push(Layer::Relu);
                blocks.push(Block::ResBasic { conv1, bn1, relu1, conv2, bn2, relu2 });
                prev = width;
            }
        }
        let gap = layers.len();
        layers.push(Layer::GlobalAvgPool);
        let dense = layers.len();
        layers.push(Layer::Dense {
            c_in: w3,
            c_out: self.num_classes,
            bias: vec![T::zero(); self.num_classes],
        });
        blocks.push(Block::Plain(vec![gap, dense]));
        Ok(Network {
            layers,
            blocks,
            num_classes: self.num_classes,
            input_shape: self.input,
        })
    }

    /// Number of 32-bit values a plain dense dump of this network needs:
    /// weights, biases, batchnorm affine parameters and running statistics.
    pub fn dense_param_count<T: Scalar>(net: &Network<T>) -> usize {
        let mut count = 0;
        for layer in &net.layers {
            match layer {
                Layer::Conv(spec) => count += spec.weight_len(),
                Layer::Dense { c_in, c_out, bias } => count += c_in * c_out + bias.len(),
                Layer::BatchNorm(bn) => count += 4 * bn.c,
                Layer::Relu | Layer::GlobalAvgPool => {}
            }
        }
        count
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn descriptors_build_and_shape_check() {
        ArchDescriptor::mlp((1, 28, 28), 10, 64).build::<f32>().unwrap();
        ArchDescriptor::miniconv((1, 28, 28), 10, [8, 16, 32, 32]).build::<f32>().unwrap();
        ArchDescriptor::resnet20((3, 32, 32), 10, [8, 16, 32]).build::<f32>().unwrap();
    }

    #[test]
    fn resnet20_has_twenty_weighted_layers() {
        let net = ArchDescriptor::resnet20((3, 32, 32), 10, [8, 16, 32]).build::<f32>().unwrap();
        let weighted = net
            .layers
            .iter()
            .filter(|l| matches!(l, Layer::Conv(_) | Layer::Dense { .. }))
            .count();
        assert_eq!(weighted, 20);
    }

    #[test]
    fn miniconv_spatial_flow() {
        // 28 -> 28 -> 14 -> 7 -> 7 -> GAP -> classes
        let net = ArchDescriptor::miniconv((1, 28, 28), 10, [8, 16, 32, 32]).build::<f64>().unwrap();
        net.check_shapes().unwrap();
    }
}
