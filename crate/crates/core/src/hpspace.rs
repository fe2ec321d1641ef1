//! Block-structured hyperparameter space.
//!
//! A [`Point`] is made of a convolution block (header `n1` followed by `n1`
//! groups of five values), a fully connected block (header `n2` followed by
//! `n2` layer sizes), the batch size, an optimizer block (header followed by
//! four reals), the dropout rate and the activation function. The flat
//! encoding used for caching, file output and the external protocol follows
//! exactly that order and has `5 * n1 + n2 + 10` entries.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

/// Number of hyperparameter keywords that describe a point.
pub const NUM_KEYWORDS: usize = 16;

/// Scalar type of a hyperparameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum HyperparameterKind {
    Categorical,
    Integer,
    Real,
    Boolean,
}

impl HyperparameterKind {
    pub fn is_integral(self) -> bool {
        !matches!(self, HyperparameterKind::Real)
    }
}

/// Hyperparameter keywords as spelled in parameter files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Keyword {
    NumConLayers,
    OutputChannels,
    Kernels,
    Strides,
    Paddings,
    DoPools,
    NumFcLayers,
    SizeFcLayer,
    BatchSize,
    OptimizerChoice,
    OptParam1,
    OptParam2,
    OptParam3,
    OptParam4,
    DropoutRate,
    ActivationFunction,
}

impl Keyword {
    pub const ALL: [Keyword; NUM_KEYWORDS] = [
        Keyword::NumConLayers,
        Keyword::OutputChannels,
        Keyword::Kernels,
        Keyword::Strides,
        Keyword::Paddings,
        Keyword::DoPools,
        Keyword::NumFcLayers,
        Keyword::SizeFcLayer,
        Keyword::BatchSize,
        Keyword::OptimizerChoice,
        Keyword::OptParam1,
        Keyword::OptParam2,
        Keyword::OptParam3,
        Keyword::OptParam4,
        Keyword::DropoutRate,
        Keyword::ActivationFunction,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Keyword::NumConLayers => "NUM_CON_LAYERS",
            Keyword::OutputChannels => "OUTPUT_CHANNELS",
            Keyword::Kernels => "KERNELS",
            Keyword::Strides => "STRIDES",
            Keyword::Paddings => "PADDINGS",
            Keyword::DoPools => "DO_POOLS",
            Keyword::NumFcLayers => "NUM_FC_LAYERS",
            Keyword::SizeFcLayer => "SIZE_FC_LAYER",
            Keyword::BatchSize => "BATCH_SIZE",
            Keyword::OptimizerChoice => "OPTIMIZER_CHOICE",
            Keyword::OptParam1 => "OPT_PARAM_1",
            Keyword::OptParam2 => "OPT_PARAM_2",
            Keyword::OptParam3 => "OPT_PARAM_3",
            Keyword::OptParam4 => "OPT_PARAM_4",
            Keyword::DropoutRate => "DROPOUT_RATE",
            Keyword::ActivationFunction => "ACTIVATION_FUNCTION",
        }
    }

    pub fn kind(self) -> HyperparameterKind {
        use HyperparameterKind::*;
        match self {
            Keyword::NumConLayers | Keyword::NumFcLayers | Keyword::OptimizerChoice => Categorical,
            Keyword::DoPools => Boolean,
            Keyword::OptParam1
            | Keyword::OptParam2
            | Keyword::OptParam3
            | Keyword::OptParam4
            | Keyword::DropoutRate => Real,
            _ => Integer,
        }
    }

    /// Default value, lower bound and upper bound of the reference keyword table.
    pub fn table_default(self) -> (f64, f64, f64) {
        match self {
            Keyword::NumConLayers => (2.0, 0.0, 100.0),
            Keyword::OutputChannels => (6.0, 1.0, 100.0),
            Keyword::Kernels => (5.0, 1.0, 20.0),
            Keyword::Strides => (1.0, 1.0, 3.0),
            Keyword::Paddings => (0.0, 0.0, 2.0),
            Keyword::DoPools => (0.0, 0.0, 1.0),
            Keyword::NumFcLayers => (2.0, 0.0, 500.0),
            Keyword::SizeFcLayer => (128.0, 1.0, 1000.0),
            Keyword::BatchSize => (128.0, 1.0, 400.0),
            Keyword::OptimizerChoice => (3.0, 1.0, 4.0),
            Keyword::OptParam1 => (0.1, 0.0, 1.0),
            Keyword::OptParam2 => (0.9, 0.0, 1.0),
            Keyword::OptParam3 => (0.005, 0.0, 1.0),
            Keyword::OptParam4 => (0.0, 0.0, 1.0),
            Keyword::DropoutRate => (0.5, 0.0, 0.95),
            Keyword::ActivationFunction => (1.0, 1.0, 3.0),
        }
    }

    /// Widest range a user may set bounds to. Values outside cannot be
    /// interpreted by the network builder (e.g. a zero stride).
    pub fn domain(self) -> (f64, f64) {
        match self {
            Keyword::NumConLayers | Keyword::NumFcLayers | Keyword::Paddings => (0.0, f64::INFINITY),
            Keyword::OutputChannels
            | Keyword::Kernels
            | Keyword::Strides
            | Keyword::SizeFcLayer
            | Keyword::BatchSize => (1.0, f64::INFINITY),
            Keyword::DoPools => (0.0, 1.0),
            Keyword::OptimizerChoice => (1.0, 4.0),
            Keyword::OptParam1 | Keyword::OptParam2 | Keyword::OptParam3 | Keyword::OptParam4 => (0.0, f64::INFINITY),
            // A rate of 1 drops every unit.
            Keyword::DropoutRate => (0.0, 0.99),
            Keyword::ActivationFunction => (1.0, 3.0),
        }
    }

    /// Keywords whose single value is replicated over every layer of a block.
    pub fn is_per_layer(self) -> bool {
        matches!(
            self,
            Keyword::OutputChannels
                | Keyword::Kernels
                | Keyword::Strides
                | Keyword::Paddings
                | Keyword::DoPools
                | Keyword::SizeFcLayer
        )
    }

    fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Keyword {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown keyword `{0}`")]
pub struct UnknownKeyword(pub String);

impl FromStr for Keyword {
    type Err = UnknownKeyword;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Keyword::ALL
            .iter()
            .copied()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| UnknownKeyword(s.to_string()))
    }
}

/// Definition of one hyperparameter: kind, initial value, bounds and whether
/// it is pinned for the whole run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HyperparameterDef {
    pub keyword: Keyword,
    pub kind: HyperparameterKind,
    pub default: f64,
    pub lower: f64,
    pub upper: f64,
    pub fixed: bool,
}

impl HyperparameterDef {
    pub fn table(keyword: Keyword) -> Self {
        let (default, lower, upper) = keyword.table_default();
        HyperparameterDef {
            keyword,
            kind: keyword.kind(),
            default,
            lower,
            upper,
            fixed: false,
        }
    }

    pub fn contains(&self, value: f64) -> bool {
        value >= self.lower && value <= self.upper
    }

    /// Whether the poll step may move this coordinate.
    pub fn is_free(&self) -> bool {
        !self.fixed && self.upper > self.lower
    }
}

/// Hyperparameter definitions plus the input geometry used by the
/// feasibility check.
#[derive(Debug, Clone, PartialEq)]
pub struct SpaceSpec {
    defs: [HyperparameterDef; NUM_KEYWORDS],
    pub input_image_size: usize,
    pub input_channels: usize,
}

impl Default for SpaceSpec {
    fn default() -> Self {
        SpaceSpec::new(28, 1)
    }
}

impl SpaceSpec {
    /// Reference defaults for every keyword.
    pub fn new(input_image_size: usize, input_channels: usize) -> Self {
        SpaceSpec {
            defs: Keyword::ALL.map(HyperparameterDef::table),
            input_image_size,
            input_channels,
        }
    }

    pub fn def(&self, keyword: Keyword) -> &HyperparameterDef {
        &self.defs[keyword.index()]
    }

    pub fn def_mut(&mut self, keyword: Keyword) -> &mut HyperparameterDef {
        &mut self.defs[keyword.index()]
    }

    pub fn defs(&self) -> impl Iterator<Item = &HyperparameterDef> {
        self.defs.iter()
    }

    pub fn with_default(mut self, keyword: Keyword, value: f64) -> Self {
        self.def_mut(keyword).default = value;
        self
    }

    pub fn with_bounds(mut self, keyword: Keyword, lower: f64, upper: f64) -> Self {
        let def = self.def_mut(keyword);
        def.lower = lower;
        def.upper = upper;
        self
    }

    pub fn with_fixed(mut self, keyword: Keyword, fixed: bool) -> Self {
        self.def_mut(keyword).fixed = fixed;
        self
    }

    /// Pin every keyword to its default.
    pub fn all_fixed(mut self) -> Self {
        for def in &mut self.defs {
            def.fixed = true;
        }
        self
    }

    pub fn def_for(&self, slot: Slot) -> &HyperparameterDef {
        self.def(slot.keyword())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Activation {
    Relu = 1,
    Sigmoid = 2,
    Tanh = 3,
}

impl Activation {
    pub fn from_code(code: i64) -> Option<Self> {
        match code {
            1 => Some(Activation::Relu),
            2 => Some(Activation::Sigmoid),
            3 => Some(Activation::Tanh),
            _ => None,
        }
    }

    pub fn code(self) -> u32 {
        self as u32
    }
}

/// Training algorithm selected by the optimizer block header.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OptimizerKind {
    Sgd = 1,
    Adam = 2,
    Adagrad = 3,
    RmsProp = 4,
}

impl OptimizerKind {
    pub fn from_code(code: i64) -> Option<Self> {
        match code {
            1 => Some(OptimizerKind::Sgd),
            2 => Some(OptimizerKind::Adam),
            3 => Some(OptimizerKind::Adagrad),
            4 => Some(OptimizerKind::RmsProp),
            _ => None,
        }
    }

    pub fn code(self) -> u32 {
        self as u32
    }

    pub fn name(self) -> &'static str {
        match self {
            OptimizerKind::Sgd => "SGD",
            OptimizerKind::Adam => "Adam",
            OptimizerKind::Adagrad => "Adagrad",
            OptimizerKind::RmsProp => "RMSProp",
        }
    }
}

/// One convolutional layer: a group of five associated variables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ConvLayer {
    pub out_channels: u32,
    pub kernel: u32,
    pub stride: u32,
    pub padding: u32,
    pub do_pool: bool,
}

impl ConvLayer {
    pub fn new(out_channels: u32, kernel: u32, stride: u32, padding: u32, do_pool: bool) -> Self {
        ConvLayer {
            out_channels,
            kernel,
            stride,
            padding,
            do_pool,
        }
    }

    fn field(&self, field: ConvField) -> f64 {
        match field {
            ConvField::OutChannels => self.out_channels as f64,
            ConvField::Kernel => self.kernel as f64,
            ConvField::Stride => self.stride as f64,
            ConvField::Padding => self.padding as f64,
            ConvField::DoPool => f64::from(u8::from(self.do_pool)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimizerBlock {
    pub kind: OptimizerKind,
    pub params: [f64; 4],
}

/// Field of a convolutional group, in encoding order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ConvField {
    OutChannels,
    Kernel,
    Stride,
    Padding,
    DoPool,
}

impl ConvField {
    pub const ALL: [ConvField; 5] = [
        ConvField::OutChannels,
        ConvField::Kernel,
        ConvField::Stride,
        ConvField::Padding,
        ConvField::DoPool,
    ];

    pub fn keyword(self) -> Keyword {
        match self {
            ConvField::OutChannels => Keyword::OutputChannels,
            ConvField::Kernel => Keyword::Kernels,
            ConvField::Stride => Keyword::Strides,
            ConvField::Padding => Keyword::Paddings,
            ConvField::DoPool => Keyword::DoPools,
        }
    }
}

/// Role of one coordinate of the flat encoding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Slot {
    ConvHeader,
    Conv { layer: usize, field: ConvField },
    FcHeader,
    Fc { layer: usize },
    BatchSize,
    OptimizerHeader,
    OptParam(usize),
    Dropout,
    Activation,
}

impl Slot {
    pub fn keyword(self) -> Keyword {
        match self {
            Slot::ConvHeader => Keyword::NumConLayers,
            Slot::Conv { field, .. } => field.keyword(),
            Slot::FcHeader => Keyword::NumFcLayers,
            Slot::Fc { .. } => Keyword::SizeFcLayer,
            Slot::BatchSize => Keyword::BatchSize,
            Slot::OptimizerHeader => Keyword::OptimizerChoice,
            Slot::OptParam(0) => Keyword::OptParam1,
            Slot::OptParam(1) => Keyword::OptParam2,
            Slot::OptParam(2) => Keyword::OptParam3,
            Slot::OptParam(_) => Keyword::OptParam4,
            Slot::Dropout => Keyword::DropoutRate,
            Slot::Activation => Keyword::ActivationFunction,
        }
    }

    pub fn is_categorical(self) -> bool {
        matches!(self, Slot::ConvHeader | Slot::FcHeader | Slot::OptimizerHeader)
    }

    /// Layer index for per-layer slots.
    pub fn layer(self) -> Option<usize> {
        match self {
            Slot::Conv { layer, .. } | Slot::Fc { layer } => Some(layer),
            _ => None,
        }
    }
}

/// Flat dimension of a point with `n1` convolutional and `n2` fully connected layers.
pub fn dimension(n1: usize, n2: usize) -> usize {
    5 * n1 + n2 + 10
}

/// Slot of every flat coordinate, in encoding order.
pub fn layout(n1: usize, n2: usize) -> Vec<Slot> {
    let mut slots = Vec::with_capacity(dimension(n1, n2));
    slots.push(Slot::ConvHeader);
    for layer in 0..n1 {
        slots.extend(ConvField::ALL.iter().map(|&field| Slot::Conv { layer, field }));
    }
    slots.push(Slot::FcHeader);
    slots.extend((0..n2).map(|layer| Slot::Fc { layer }));
    slots.push(Slot::BatchSize);
    slots.push(Slot::OptimizerHeader);
    slots.extend((0..4).map(Slot::OptParam));
    slots.push(Slot::Dropout);
    slots.push(Slot::Activation);
    slots
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StructureError {
    #[error("flat vector has {found} entries, expected {expected}")]
    LengthMismatch { expected: usize, found: usize },
    #[error("{keyword} header is {found}, expected {expected}")]
    HeaderMismatch {
        keyword: Keyword,
        expected: usize,
        found: f64,
    },
    #[error("entry {index} ({keyword}) must be an integer, got {value}")]
    NotInteger { index: usize, keyword: Keyword, value: f64 },
    #[error("entry {index} ({keyword}) has uninterpretable value {value}")]
    OutOfDomain { index: usize, keyword: Keyword, value: f64 },
}

/// A block-structured mixed-variable point.
#[derive(Debug, Clone, PartialEq)]
pub struct Point {
    pub conv: Vec<ConvLayer>,
    pub fc: Vec<u32>,
    pub batch_size: u32,
    pub optimizer: OptimizerBlock,
    pub dropout_rate: f64,
    pub activation: Activation,
}

impl Point {
    pub fn n_conv(&self) -> usize {
        self.conv.len()
    }

    pub fn n_fc(&self) -> usize {
        self.fc.len()
    }

    pub fn dimension(&self) -> usize {
        dimension(self.n_conv(), self.n_fc())
    }

    pub fn layout(&self) -> Vec<Slot> {
        layout(self.n_conv(), self.n_fc())
    }

    pub fn get(&self, slot: Slot) -> f64 {
        match slot {
            Slot::ConvHeader => self.n_conv() as f64,
            Slot::Conv { layer, field } => self.conv[layer].field(field),
            Slot::FcHeader => self.n_fc() as f64,
            Slot::Fc { layer } => self.fc[layer] as f64,
            Slot::BatchSize => self.batch_size as f64,
            Slot::OptimizerHeader => self.optimizer.kind.code() as f64,
            Slot::OptParam(i) => self.optimizer.params[i],
            Slot::Dropout => self.dropout_rate,
            Slot::Activation => self.activation.code() as f64,
        }
    }

    /// Flat encoding in canonical block order.
    pub fn encode(&self) -> Vec<f64> {
        self.layout().into_iter().map(|slot| self.get(slot)).collect()
    }

    /// Inverse of [`Point::encode`] for a known pair of block sizes.
    pub fn decode(values: &[f64], n1: usize, n2: usize) -> Result<Point, StructureError> {
        let expected = dimension(n1, n2);
        if values.len() != expected {
            return Err(StructureError::LengthMismatch {
                expected,
                found: values.len(),
            });
        }
        let slots = layout(n1, n2);
        let mut conv = vec![ConvLayer::new(0, 0, 0, 0, false); n1];
        let mut fc = vec![0u32; n2];
        let mut batch_size = 0;
        let mut kind = OptimizerKind::Sgd;
        let mut params = [0.0; 4];
        let mut dropout_rate = 0.0;
        let mut activation = Activation::Relu;

        for (index, (&value, &slot)) in values.iter().zip(&slots).enumerate() {
            let keyword = slot.keyword();
            let out_of_domain = || StructureError::OutOfDomain { index, keyword, value };
            if !value.is_finite() {
                return Err(out_of_domain());
            }
            if keyword.kind().is_integral() && value.fract() != 0.0 {
                return Err(StructureError::NotInteger { index, keyword, value });
            }
            let as_count = || -> Result<u32, StructureError> {
                if value < 0.0 || value > u32::MAX as f64 {
                    Err(out_of_domain())
                } else {
                    Ok(value as u32)
                }
            };
            match slot {
                Slot::ConvHeader | Slot::FcHeader => {
                    let expected = if slot == Slot::ConvHeader { n1 } else { n2 };
                    if value != expected as f64 {
                        return Err(StructureError::HeaderMismatch {
                            keyword,
                            expected,
                            found: value,
                        });
                    }
                }
                Slot::Conv { layer, field } => {
                    let group = &mut conv[layer];
                    match field {
                        ConvField::OutChannels => group.out_channels = as_count()?,
                        ConvField::Kernel => group.kernel = as_count()?,
                        ConvField::Stride => group.stride = as_count()?,
                        ConvField::Padding => group.padding = as_count()?,
                        ConvField::DoPool => {
                            group.do_pool = match as_count()? {
                                0 => false,
                                1 => true,
                                _ => return Err(out_of_domain()),
                            }
                        }
                    }
                }
                Slot::Fc { layer } => fc[layer] = as_count()?,
                Slot::BatchSize => batch_size = as_count()?,
                Slot::OptimizerHeader => kind = OptimizerKind::from_code(value as i64).ok_or_else(out_of_domain)?,
                Slot::OptParam(i) => params[i] = value,
                Slot::Dropout => dropout_rate = value,
                Slot::Activation => activation = Activation::from_code(value as i64).ok_or_else(out_of_domain)?,
            }
        }

        Ok(Point {
            conv,
            fc,
            batch_size,
            optimizer: OptimizerBlock { kind, params },
            dropout_rate,
            activation,
        })
    }

    /// Decode a self-describing flat vector, reading the block sizes from its
    /// headers.
    pub fn from_flat(values: &[f64]) -> Result<Point, StructureError> {
        let header = |index: usize, keyword: Keyword| -> Result<usize, StructureError> {
            let value = *values.get(index).ok_or(StructureError::LengthMismatch {
                expected: index + 1,
                found: values.len(),
            })?;
            if value.fract() != 0.0 || !(0.0..=1e6).contains(&value) {
                return Err(StructureError::OutOfDomain { index, keyword, value });
            }
            Ok(value as usize)
        };
        let n1 = header(0, Keyword::NumConLayers)?;
        let n2 = header(1 + 5 * n1, Keyword::NumFcLayers)?;
        Point::decode(values, n1, n2)
    }
}

impl fmt::Display for Point {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write_flat(f, &self.encode())
    }
}

/// Space-separated decimal rendering used by every text interface.
pub fn format_flat(values: &[f64]) -> String {
    let mut out = String::new();
    for (i, v) in values.iter().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        out.push_str(&v.to_string());
    }
    out
}

fn write_flat(f: &mut fmt::Formatter<'_>, values: &[f64]) -> fmt::Result {
    f.write_str(&format_flat(values))
}

/// Point built from each keyword's default (initial) value, replicating
/// per-layer values over every layer.
pub fn default_point(spec: &SpaceSpec) -> Point {
    let value = |k: Keyword| spec.def(k).default;
    let count = |k: Keyword| value(k).round().max(0.0) as u32;
    let group = ConvLayer::new(
        count(Keyword::OutputChannels),
        count(Keyword::Kernels),
        count(Keyword::Strides),
        count(Keyword::Paddings),
        count(Keyword::DoPools) != 0,
    );
    Point {
        conv: vec![group; count(Keyword::NumConLayers) as usize],
        fc: vec![count(Keyword::SizeFcLayer); count(Keyword::NumFcLayers) as usize],
        batch_size: count(Keyword::BatchSize),
        optimizer: default_optimizer_block(spec, count(Keyword::OptimizerChoice) as i64),
        dropout_rate: value(Keyword::DropoutRate),
        activation: Activation::from_code(count(Keyword::ActivationFunction) as i64).unwrap_or(Activation::Relu),
    }
}

/// Optimizer block with the given header and the four default associated values.
pub fn default_optimizer_block(spec: &SpaceSpec, code: i64) -> OptimizerBlock {
    OptimizerBlock {
        kind: OptimizerKind::from_code(code).unwrap_or(OptimizerKind::Adagrad),
        params: [
            spec.def(Keyword::OptParam1).default,
            spec.def(Keyword::OptParam2).default,
            spec.def(Keyword::OptParam3).default,
            spec.def(Keyword::OptParam4).default,
        ],
    }
}

/// Convolutional group made of the per-layer defaults.
pub fn default_conv_layer(spec: &SpaceSpec) -> ConvLayer {
    let count = |k: Keyword| spec.def(k).default.round().max(0.0) as u32;
    ConvLayer::new(
        count(Keyword::OutputChannels),
        count(Keyword::Kernels),
        count(Keyword::Strides),
        count(Keyword::Paddings),
        count(Keyword::DoPools) != 0,
    )
}

#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    OutOfBounds {
        keyword: Keyword,
        layer: Option<usize>,
        value: f64,
        lower: f64,
        upper: f64,
    },
    FixedDeviation {
        keyword: Keyword,
        layer: Option<usize>,
        value: f64,
        pinned: f64,
    },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let at = |layer: &Option<usize>| layer.map(|l| format!(" (layer {})", l + 1)).unwrap_or_default();
        match self {
            Violation::OutOfBounds {
                keyword,
                layer,
                value,
                lower,
                upper,
            } => write!(f, "{keyword}{} = {value} outside [{lower}; {upper}]", at(layer)),
            Violation::FixedDeviation {
                keyword,
                layer,
                value,
                pinned,
            } => write!(f, "{keyword}{} = {value} but is fixed to {pinned}", at(layer)),
        }
    }
}

/// Every bound violation and fixed-variable deviation of `p`. Integrality
/// is enforced by [`Point::decode`] since the point stores counts as integers.
pub fn validate(p: &Point, spec: &SpaceSpec) -> Vec<Violation> {
    let mut violations = Vec::new();
    for slot in p.layout() {
        let def = spec.def_for(slot);
        let value = p.get(slot);
        let layer = slot.layer();
        if !def.contains(value) {
            violations.push(Violation::OutOfBounds {
                keyword: def.keyword,
                layer,
                value,
                lower: def.lower,
                upper: def.upper,
            });
        }
        if def.fixed && value != def.default {
            violations.push(Violation::FixedDeviation {
                keyword: def.keyword,
                layer,
                value,
                pinned: def.default,
            });
        }
    }
    violations
}

/// Outcome of propagating the image side through the convolutional block.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Feasibility {
    pub feasible: bool,
    /// Side length after every convolution and after every pooling, in order.
    pub sizes: Vec<usize>,
    /// Index of the first layer that collapses the image.
    pub blocked_layer: Option<usize>,
}

impl Feasibility {
    /// Side length of the image leaving the convolutional block.
    pub fn output_side(&self, input_size: usize) -> usize {
        self.sizes.last().copied().unwrap_or(input_size)
    }
}

/// `floor((input + 2 * padding - kernel) / stride) + 1`, or `None` when the
/// kernel does not fit in the padded input.
pub fn conv_output_side(input: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = input + 2 * padding;
    if stride == 0 || kernel == 0 || kernel > padded {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

/// Side length after a 2x2 max pooling with stride 2.
pub fn pool_output_side(input: usize) -> usize {
    input / 2
}

pub fn architecture_feasible(p: &Point, input_size: usize) -> Feasibility {
    let mut sizes = Vec::with_capacity(2 * p.n_conv());
    let mut side = input_size;
    for (i, layer) in p.conv.iter().enumerate() {
        let out = conv_output_side(
            side,
            layer.kernel as usize,
            layer.stride as usize,
            layer.padding as usize,
        );
        match out {
            Some(out) if out > 0 => {
                sizes.push(out);
                side = out;
            }
            _ => {
                return Feasibility {
                    feasible: false,
                    sizes,
                    blocked_layer: Some(i),
                }
            }
        }
        if layer.do_pool {
            side = pool_output_side(side);
            if side == 0 {
                return Feasibility {
                    feasible: false,
                    sizes,
                    blocked_layer: Some(i),
                };
            }
            sizes.push(side);
        }
    }
    Feasibility {
        feasible: input_size > 0,
        sizes,
        blocked_layer: None,
    }
}
