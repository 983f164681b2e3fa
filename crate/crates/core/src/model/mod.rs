//! Parameter containers and the layer-wise forward pass.

pub(crate) mod forward;
mod params;

pub use forward::{
    forward, init_leaves, neural_sum_layer, plain_sum_layer, product_layer, quotient_sum_layer,
    root_input, Prepared, Stage, Trace,
};
pub use params::{group_of, HiddenParams, Parameters, SumParams, Tensor};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{PncError, Result};
use crate::numerics::DEFAULT_INPUT_FLOOR;
use crate::structure::{CircuitStructure, LayerKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LeafMode {
    /// One categorical distribution per (variable, leaf component).
    Categorical,
    /// Parameter-free leaves with the two inputs `v` and `1 - v`, `v = pixel / 255`.
    TwoInput,
}

impl LeafMode {
    pub fn as_str(self) -> &'static str {
        match self {
            LeafMode::Categorical => "categorical",
            LeafMode::TwoInput => "two_input",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "categorical" => Some(LeafMode::Categorical),
            "two_input" | "two_input_continuous" => Some(LeafMode::TwoInput),
            _ => None,
        }
    }
}

/// Architecture settings that are not part of the partition structure.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelOptions {
    pub leaf_mode: LeafMode,
    pub num_categories: usize,
    pub num_classes: usize,
    /// 1 or 2 masked layers in each weight network.
    pub net_depth: usize,
    /// Hidden channels of a depth-2 weight network.
    pub net_hidden: usize,
    pub input_floor: f64,
}

impl Default for ModelOptions {
    fn default() -> Self {
        ModelOptions {
            leaf_mode: LeafMode::Categorical,
            num_categories: 256,
            num_classes: 1,
            net_depth: 1,
            net_hidden: 0,
            input_floor: DEFAULT_INPUT_FLOOR,
        }
    }
}

impl ModelOptions {
    pub fn binary() -> Self {
        ModelOptions {
            num_categories: 2,
            ..Default::default()
        }
    }

    pub fn with_classes(mut self, num_classes: usize) -> Self {
        self.num_classes = num_classes;
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub structure: CircuitStructure,
    pub options: ModelOptions,
    pub params: Parameters,
    bypass_normalization: bool,
}

/// How freshly created parameters are drawn.
#[derive(Debug, Clone, Copy)]
enum InitScheme {
    /// Near-uniform training start.
    Training,
    /// Every logit and kernel weight uniform in `(-scale, scale)`.
    Random(f64),
}

impl Model {
    /// Fresh model with the training initialization: leaf logits in
    /// `(-0.01, 0.01)`, sum-weight logits and biases in `(-0.5, 0.5)`.
    /// Single-layer weight networks start from identity taps; a depth-2
    /// network draws taps and head from `(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
    pub fn new(structure: CircuitStructure, options: ModelOptions, seed: u64) -> Result<Self> {
        Self::build(structure, options, seed, InitScheme::Training)
    }

    /// Model with every parameter drawn from `(-scale, scale)`, used to get
    /// non-degenerate circuits for oracle checks.
    pub fn randomized(
        structure: CircuitStructure,
        options: ModelOptions,
        seed: u64,
        scale: f64,
    ) -> Result<Self> {
        Self::build(structure, options, seed, InitScheme::Random(scale))
    }

    /// Wraps existing parameters after checking their shapes.
    pub fn from_parameters(
        structure: CircuitStructure,
        options: ModelOptions,
        params: Parameters,
    ) -> Result<Self> {
        let template = Self::build(structure, options, 0, InitScheme::Random(0.0))?;
        let expected = template.params.named();
        let found = params.named();
        if expected.len() != found.len() {
            return Err(PncError::Input(format!(
                "expected {} parameter tensors, found {}",
                expected.len(),
                found.len()
            )));
        }
        for ((en, et), (fnm, ft)) in expected.iter().zip(&found) {
            if en != fnm || et.shape != ft.shape || ft.data.len() != et.data.len() {
                return Err(PncError::Input(format!(
                    "parameter {fnm} {:?} does not match expected {en} {:?}",
                    ft.shape, et.shape
                )));
            }
        }
        Ok(Model {
            params,
            ..template
        })
    }

    fn build(
        structure: CircuitStructure,
        options: ModelOptions,
        seed: u64,
        scheme: InitScheme,
    ) -> Result<Self> {
        validate_options(&structure, &options)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let classes = options.num_classes;
        let v = structure.num_variables;
        let nc = structure.num_components;
        let nd = structure.num_leaf_components;
        let k = match options.leaf_mode {
            LeafMode::Categorical => options.num_categories,
            LeafMode::TwoInput => 0,
        };
        let (leaf_bound, weight_bound) = match scheme {
            // symmetric sum weights never break symmetry, so they start random
            InitScheme::Training => (0.01, 0.5),
            InitScheme::Random(s) => (s, s),
        };
        let leaf_logits = Tensor::uniform(&[classes, v, nd, k], leaf_bound, &mut rng);
        let leaf_weights = Tensor::uniform(&[classes, v, nc, nd], weight_bound, &mut rng);
        let mut layers = Vec::new();
        for l in structure.internal_layers() {
            let layout = &structure.layers[l];
            let p = layout.num_partitions();
            let layer = match structure.layer_kind {
                LayerKind::PlainSum => SumParams::Plain {
                    logits: Tensor::uniform(&[p, nc, nc], weight_bound, &mut rng),
                },
                LayerKind::Quotient => SumParams::Quotient {
                    logits: Tensor::uniform(&[p, nc, nc], weight_bound, &mut rng),
                },
                LayerKind::Neural => {
                    let t = layout.num_taps;
                    let tap_bound = |fan_in: usize| match scheme {
                        InitScheme::Training if fan_in > 0 => 1.0 / (fan_in as f64).sqrt(),
                        InitScheme::Training => 0.0,
                        InitScheme::Random(s) => s,
                    };
                    if options.net_depth == 1 {
                        let taps = match scheme {
                            InitScheme::Training => identity_taps(t, nc),
                            InitScheme::Random(s) => Tensor::uniform(&[t, nc * nc, nc], s, &mut rng),
                        };
                        SumParams::Neural {
                            taps,
                            bias: Tensor::uniform(&[p, nc * nc], weight_bound, &mut rng),
                            hidden: None,
                        }
                    } else {
                        let h = options.net_hidden;
                        let taps = Tensor::uniform(&[t, h, nc], tap_bound(t * nc), &mut rng);
                        let hidden_bias = Tensor::uniform(&[p, h], weight_bound, &mut rng);
                        let head = Tensor::uniform(&[nc * nc, h], tap_bound(h), &mut rng);
                        let bias = Tensor::uniform(&[p, nc * nc], weight_bound, &mut rng);
                        SumParams::Neural {
                            taps,
                            bias,
                            hidden: Some(HiddenParams { hidden_bias, head }),
                        }
                    }
                }
            };
            layers.push(layer);
        }
        let root_weights = Tensor::uniform(&[classes, nc], weight_bound, &mut rng);
        Ok(Model {
            structure,
            options,
            params: Parameters {
                leaf_logits,
                leaf_weights,
                layers,
                root_weights,
            },
            bypass_normalization: false,
        })
    }

    pub fn num_variables(&self) -> usize {
        self.structure.num_variables
    }

    pub fn num_classes(&self) -> usize {
        self.options.num_classes
    }

    /// Per-batch cache of normalized weight tables.
    pub fn prepare(&self) -> Prepared<'_> {
        Prepared::new(self)
    }

    /// Test hook: uses raw weight logits as log-weights (skipping the
    /// softmax) so that normalization checks have a negative control.
    #[doc(hidden)]
    pub fn bypass_normalization_for_testing(&mut self) {
        self.bypass_normalization = true;
    }

    pub(crate) fn normalization_bypassed(&self) -> bool {
        self.bypass_normalization
    }

    /// Checks that `values` is a well-formed assignment for this model.
    pub fn check_assignment(&self, values: &[u8]) -> Result<()> {
        if values.len() != self.num_variables() {
            return Err(PncError::Input(format!(
                "assignment has {} values, model has {} variables",
                values.len(),
                self.num_variables()
            )));
        }
        if self.options.leaf_mode == LeafMode::Categorical {
            if let Some((v, &x)) = values
                .iter()
                .enumerate()
                .find(|(_, &x)| x as usize >= self.options.num_categories)
            {
                return Err(PncError::Input(format!(
                    "value {x} of variable {v} outside 0..{}",
                    self.options.num_categories
                )));
            }
        }
        Ok(())
    }
}

/// Every tap copies the child component onto the weight logit it feeds, so
/// at init each weight row is a softmax of the (summed) child values.
fn identity_taps(taps: usize, nc: usize) -> Tensor {
    let mut t = Tensor::zeros(&[taps, nc * nc, nc]);
    for tap in 0..taps {
        for out in 0..nc * nc {
            t.data[(tap * nc * nc + out) * nc + out % nc] = 1.0;
        }
    }
    t
}

fn validate_options(structure: &CircuitStructure, options: &ModelOptions) -> Result<()> {
    let bad = |m: String| Err(PncError::Input(m));
    if options.num_classes == 0 {
        return bad("num_classes must be >= 1".into());
    }
    match options.leaf_mode {
        LeafMode::Categorical if !(1..=256).contains(&options.num_categories) => {
            return bad(format!(
                "num_categories must lie in 1..=256, got {}",
                options.num_categories
            ))
        }
        LeafMode::TwoInput if structure.num_leaf_components != 2 => {
            return bad(format!(
                "two-input leaves need exactly 2 leaf components, got {}",
                structure.num_leaf_components
            ))
        }
        _ => {}
    }
    if !(1..=2).contains(&options.net_depth) {
        return bad(format!("weight network depth must be 1 or 2, got {}", options.net_depth));
    }
    if options.net_depth == 2 && options.net_hidden == 0 {
        return bad("a depth-2 weight network needs hidden channels".into());
    }
    if !options.input_floor.is_finite() {
        return bad("input floor must be finite".into());
    }
    Ok(())
}
