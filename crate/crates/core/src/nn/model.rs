use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use super::layer::Layer;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Layer stack plus the input/output contract of a model family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub id: String,
    pub input_shape: Vec<usize>,
    pub classes: usize,
    pub layers: Vec<Layer>,
}

impl Architecture {
    /// Shape of every layer output, validating the whole stack.
    pub fn layer_shapes(&self) -> Result<Vec<Vec<usize>>> {
        let mut shape = self.input_shape.clone();
        let mut shapes = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            shape = layer.output_shape(i, &shape)?;
            shapes.push(shape.clone());
        }
        match shapes.last() {
            Some(last) if *last == [self.classes] => Ok(shapes),
            Some(last) => Err(Error::Shape(format!(
                "architecture {} ends in {last:?}, expected [{}] logits",
                self.id, self.classes
            ))),
            None => Err(Error::Shape(format!("architecture {} has no layers", self.id))),
        }
    }

    /// `conv -> relu -> avgpool` stages followed by a dense head.
    pub fn small_cnn(input_shape: [usize; 3], channels: &[usize], classes: usize) -> Self {
        let [mut c, mut h, mut w] = input_shape;
        let mut layers = Vec::new();
        for &out in channels {
            layers.push(Layer::Conv2d {
                in_channels: c,
                out_channels: out,
                kernel: 3,
                padding: 1,
            });
            layers.push(Layer::Relu);
            layers.push(Layer::AvgPool2d { size: 2 });
            c = out;
            h /= 2;
            w /= 2;
        }
        layers.push(Layer::Flatten);
        layers.push(Layer::Dense {
            inputs: c * h * w,
            outputs: classes,
        });
        let tag: Vec<String> = channels.iter().map(|c| c.to_string()).collect();
        Architecture {
            id: format!("small_cnn-{}", tag.join("-")),
            input_shape: input_shape.to_vec(),
            classes,
            layers,
        }
    }

    /// Dense hidden layers with the given activation, then a dense head.
    pub fn mlp(input_shape: &[usize], hidden: &[usize], activation: Layer, classes: usize) -> Self {
        let mut layers = vec![Layer::Flatten];
        let mut width: usize = input_shape.iter().product();
        for &h in hidden {
            layers.push(Layer::Dense {
                inputs: width,
                outputs: h,
            });
            layers.push(activation.clone());
            width = h;
        }
        layers.push(Layer::Dense {
            inputs: width,
            outputs: classes,
        });
        Architecture {
            id: format!("mlp-{}", hidden.len()),
            input_shape: input_shape.to_vec(),
            classes,
            layers,
        }
    }

    /// A single dense map from the flattened input to the logits.
    pub fn linear(input_shape: &[usize], classes: usize) -> Self {
        Architecture {
            id: "linear".into(),
            input_shape: input_shape.to_vec(),
            classes,
            layers: vec![
                Layer::Flatten,
                Layer::Dense {
                    inputs: input_shape.iter().product(),
                    outputs: classes,
                },
            ],
        }
    }
}

/// Every per-layer activation from one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub input: Tensor,
    /// `activations[i]` is the output of layer `i`.
    pub activations: Vec<Tensor>,
}

impl ForwardTrace {
    pub fn logits(&self) -> &Tensor {
        self.activations.last().expect("validated models have layers")
    }

    pub fn predicted_class(&self) -> usize {
        self.logits().argmax()
    }

    fn layer_input(&self, index: usize) -> &Tensor {
        if index == 0 {
            &self.input
        } else {
            &self.activations[index - 1]
        }
    }
}

/// Per-layer parameter buffers, `[weights, bias]` for parameterized layers.
pub type ParamSet = Vec<Vec<Vec<f64>>>;

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    arch: Architecture,
    shapes: Vec<Vec<usize>>,
    params: ParamSet,
    seed: u64,
}

impl Model {
    /// Glorot-uniform weights, zero biases, drawn from `seed`.
    pub fn new(arch: Architecture, seed: u64) -> Result<Self> {
        let shapes = arch.layer_shapes()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = arch
            .layers
            .iter()
            .map(|layer| {
                let shapes = layer.param_shapes();
                if shapes.is_empty() {
                    return Vec::new();
                }
                let (fan_in, fan_out) = layer.fans();
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let nw: usize = shapes[0].iter().product();
                let nb: usize = shapes[1].iter().product();
                let w = (0..nw).map(|_| rng.random_range(-limit..limit)).collect();
                vec![w, vec![0.0; nb]]
            })
            .collect();
        Ok(Model {
            arch,
            shapes,
            params,
            seed,
        })
    }

    pub fn from_params(arch: Architecture, params: ParamSet, seed: u64) -> Result<Self> {
        let shapes = arch.layer_shapes()?;
        if params.len() != arch.layers.len() {
            return Err(Error::Shape(format!(
                "{} parameter groups for {} layers",
                params.len(),
                arch.layers.len()
            )));
        }
        for (i, (layer, group)) in arch.layers.iter().zip(&params).enumerate() {
            let expected = layer.param_shapes();
            if group.len() != expected.len()
                || group
                    .iter()
                    .zip(&expected)
                    .any(|(p, s)| p.len() != s.iter().product::<usize>())
            {
                return Err(Error::Shape(format!(
                    "layer {i}: parameter sizes do not match {expected:?}"
                )));
            }
            if group.iter().flatten().any(|v| !v.is_finite()) {
                return Err(Error::InvalidArgument(format!("layer {i}: non-finite parameter")));
            }
        }
        Ok(Model {
            arch,
            shapes,
            params,
            seed,
        })
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn layers(&self) -> &[Layer] {
        &self.arch.layers
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn classes(&self) -> usize {
        self.arch.classes
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.arch.input_shape
    }

    /// Output shape of layer `index`.
    pub fn layer_shape(&self, index: usize) -> &[usize] {
        &self.shapes[index]
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub(crate) fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn param_layer_indices(&self) -> Vec<usize> {
        (0..self.arch.layers.len())
            .filter(|&i| self.arch.layers[i].has_params())
            .collect()
    }

    pub fn last_conv_index(&self) -> Option<usize> {
        self.arch.layers.iter().rposition(Layer::is_conv)
    }

    pub fn zero_grads(&self) -> ParamSet {
        self.params
            .iter()
            .map(|g| g.iter().map(|p| vec![0.0; p.len()]).collect())
            .collect()
    }

    pub fn forward(&self, x: &Tensor) -> Result<ForwardTrace> {
        if x.shape() != self.arch.input_shape.as_slice() {
            return Err(Error::Shape(format!(
                "layer 0 ({:?}): model input is {:?}, got {:?}",
                self.arch.layers[0],
                self.arch.input_shape,
                x.shape()
            )));
        }
        let mut activations: Vec<Tensor> = Vec::with_capacity(self.arch.layers.len());
        for (i, layer) in self.arch.layers.iter().enumerate() {
            let (input, in_shape) = match i {
                0 => (x.data(), x.shape()),
                _ => (activations[i - 1].data(), self.shapes[i - 1].as_slice()),
            };
            let out = layer.forward(input, in_shape, &self.params[i]);
            activations.push(Tensor::new(self.shapes[i].clone(), out)?);
        }
        Ok(ForwardTrace {
            input: x.clone(),
            activations,
        })
    }

    pub fn logits(&self, x: &Tensor) -> Result<Tensor> {
        let mut trace = self.forward(x)?;
        Ok(trace.activations.pop().expect("non-empty"))
    }

    pub fn predict(&self, x: &Tensor) -> Result<usize> {
        Ok(self.logits(x)?.argmax())
    }

    /// Reverse pass. `grad_top` is the gradient w.r.t. the output of layer
    /// `top`; layers `top, top-1, ..., stop` are traversed and the gradient
    /// w.r.t. the input of layer `stop` is returned.
    pub(crate) fn backprop(
        &self,
        trace: &ForwardTrace,
        top: usize,
        stop: usize,
        grad_top: Vec<f64>,
        mut param_grads: Option<&mut ParamSet>,
    ) -> Vec<f64> {
        let mut grad = grad_top;
        for i in (stop..=top).rev() {
            let in_shape = if i == 0 {
                self.arch.input_shape.as_slice()
            } else {
                self.shapes[i - 1].as_slice()
            };
            let pg = param_grads.as_deref_mut().map(|g| g[i].as_mut_slice());
            grad = self.arch.layers[i].backward(
                trace.layer_input(i).data(),
                in_shape,
                &self.params[i],
                &grad,
                pg,
            );
        }
        grad
    }

    fn one_hot(&self, class_index: usize) -> Result<Vec<f64>> {
        if class_index >= self.arch.classes {
            return Err(Error::InvalidArgument(format!(
                "class index {class_index} out of range for {} classes",
                self.arch.classes
            )));
        }
        let mut g = vec![0.0; self.arch.classes];
        g[class_index] = 1.0;
        Ok(g)
    }

    /// Gradient of the pre-softmax logit `class_index` w.r.t. the input.
    pub fn grad_wrt_input(&self, x: &Tensor, class_index: usize) -> Result<Tensor> {
        let trace = self.forward(x)?;
        self.grad_wrt_input_traced(&trace, class_index)
    }

    pub fn grad_wrt_input_traced(&self, trace: &ForwardTrace, class_index: usize) -> Result<Tensor> {
        let seed = self.one_hot(class_index)?;
        let top = self.arch.layers.len() - 1;
        let g = self.backprop(trace, top, 0, seed, None);
        Tensor::new(self.arch.input_shape.clone(), g)
    }

    /// Gradient of logit `class_index` w.r.t. the output of layer
    /// `layer_index`, which must be a convolution or the output layer.
    pub fn grad_wrt_activation(
        &self,
        x: &Tensor,
        layer_index: usize,
        class_index: usize,
    ) -> Result<Tensor> {
        let last = self.arch.layers.len() - 1;
        match self.arch.layers.get(layer_index) {
            Some(l) if l.is_conv() || layer_index == last => {}
            Some(l) => {
                return Err(Error::InvalidArgument(format!(
                    "layer {layer_index} is {l:?}, not a convolution"
                )))
            }
            None => {
                return Err(Error::InvalidArgument(format!(
                    "layer {layer_index} does not exist ({} layers)",
                    self.arch.layers.len()
                )))
            }
        }
        let trace = self.forward(x)?;
        self.grad_wrt_layer_output(&trace, layer_index, class_index)
    }

    /// Gradient of logit `class_index` w.r.t. the output of any layer.
    pub(crate) fn grad_wrt_layer_output(
        &self,
        trace: &ForwardTrace,
        layer_index: usize,
        class_index: usize,
    ) -> Result<Tensor> {
        let seed = self.one_hot(class_index)?;
        let last = self.arch.layers.len() - 1;
        let g = if layer_index == last {
            seed
        } else {
            self.backprop(trace, last, layer_index + 1, seed, None)
        };
        Tensor::new(self.shapes[layer_index].clone(), g)
    }

    /// Logits obtained by replacing the output of `layer_index` with
    /// `activation` and running the remaining layers.
    pub fn forward_from(&self, layer_index: usize, activation: &Tensor) -> Result<Tensor> {
        if activation.shape() != self.shapes[layer_index].as_slice() {
            return Err(Error::Shape(format!(
                "layer {layer_index}: activation is {:?}, expected {:?}",
                activation.shape(),
                self.shapes[layer_index]
            )));
        }
        let mut cur = activation.data().to_vec();
        for i in layer_index + 1..self.arch.layers.len() {
            cur = self.arch.layers[i].forward(&cur, &self.shapes[i - 1], &self.params[i]);
        }
        Tensor::new(vec![self.arch.classes], cur)
    }
}
