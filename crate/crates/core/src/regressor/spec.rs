use serde::{Deserialize, Serialize};

use crate::error::{KeplerError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvSpec {
    pub const fn new(out_channels: usize, kernel: usize, stride: usize, padding: usize) -> Self {
        ConvSpec {
            out_channels,
            kernel,
            stride,
            padding,
        }
    }

    fn output_size(&self, n: usize) -> Option<usize> {
        let padded = n + 2 * self.padding;
        (self.stride > 0 && self.kernel > 0 && padded >= self.kernel)
            .then(|| (padded - self.kernel) / self.stride + 1)
    }
}

/// Side branch pooling an intermediate trunk activation down to the size of
/// the final trunk output.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BranchSpec {
    pub from_stage: usize,
    pub convs: Vec<ConvSpec>,
}

/// Layout of the reference network: a strided trunk, side branches from
/// alternate trunk stages, concatenation with the final trunk map, a 1x1
/// reduction and one fully connected head.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetSpec {
    pub input_channels: usize,
    pub input_height: usize,
    pub input_width: usize,
    pub trunk: Vec<ConvSpec>,
    pub branches: Vec<BranchSpec>,
    pub reduction_channels: usize,
    pub head_outputs: usize,
    /// Network-frame pixels per unit of correction output.
    pub correction_scale: f64,
    /// Degrees per unit of pose output.
    pub pose_scale: f64,
    /// Identity activations instead of PReLU (used by gradient checks).
    #[serde(default)]
    pub linear: bool,
}

/// One convolution (plus activation) with resolved shapes and parameter
/// offsets into the flat parameter vector.
#[derive(Clone, Debug)]
pub(crate) struct ConvLayer {
    pub in_c: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub out_c: usize,
    pub out_h: usize,
    pub out_w: usize,
    pub k: usize,
    pub s: usize,
    pub p: usize,
    pub weight: usize,
    pub bias: usize,
    pub slope: usize,
}

impl ConvLayer {
    pub fn in_len(&self) -> usize {
        self.in_c * self.in_h * self.in_w
    }
    pub fn out_len(&self) -> usize {
        self.out_c * self.out_h * self.out_w
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TensorSlot {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
    pub len: usize,
    pub trainable: bool,
}

/// Resolved network: every layer's geometry and where its parameters live.
#[derive(Clone, Debug)]
pub(crate) struct Plan {
    pub input_shift: usize,
    pub input_scale: usize,
    pub trunk: Vec<ConvLayer>,
    pub branches: Vec<(usize, Vec<ConvLayer>)>,
    pub reduce: ConvLayer,
    pub head_in: usize,
    pub head_out: usize,
    pub head_weight: usize,
    pub head_bias: usize,
    pub slots: Vec<TensorSlot>,
    pub total: usize,
}

struct SlotBuilder {
    slots: Vec<TensorSlot>,
    offset: usize,
}

impl SlotBuilder {
    fn push(&mut self, name: String, shape: Vec<usize>, trainable: bool) -> usize {
        let len = shape.iter().product();
        let offset = self.offset;
        self.slots.push(TensorSlot {
            name,
            shape,
            offset,
            len,
            trainable,
        });
        self.offset += len;
        offset
    }

    fn conv(
        &mut self,
        prefix: &str,
        spec: &ConvSpec,
        in_c: usize,
        in_h: usize,
        in_w: usize,
        linear: bool,
    ) -> Result<ConvLayer> {
        let (out_h, out_w) = match (spec.output_size(in_h), spec.output_size(in_w)) {
            (Some(h), Some(w)) => (h, w),
            _ => {
                return Err(KeplerError::InvalidNetSpec(format!(
                    "{prefix}: kernel {} stride {} does not fit a {in_h}x{in_w} input",
                    spec.kernel, spec.stride
                )))
            }
        };
        if spec.out_channels == 0 {
            return Err(KeplerError::InvalidNetSpec(format!("{prefix}: zero output channels")));
        }
        let k = spec.kernel;
        let weight = self.push(format!("{prefix}.weight"), vec![spec.out_channels, in_c, k, k], true);
        let bias = self.push(format!("{prefix}.bias"), vec![spec.out_channels], true);
        let slope = self.push(format!("{prefix}.slope"), vec![spec.out_channels], !linear);
        Ok(ConvLayer {
            in_c,
            in_h,
            in_w,
            out_c: spec.out_channels,
            out_h,
            out_w,
            k,
            s: spec.stride,
            p: spec.padding,
            weight,
            bias,
            slope,
        })
    }
}

impl NetSpec {
    /// Default layout for a square-ish input: four stride-2 3x3 trunk stages
    /// (the first optionally stride 1), branches from the first and third
    /// stages, 1x1 reduction to 32 channels.
    pub fn channeled(
        input_channels: usize,
        height: usize,
        width: usize,
        head_outputs: usize,
        first_stride: usize,
    ) -> Result<Self> {
        let widths = [12, 16, 24, 32];
        let trunk: Vec<ConvSpec> = widths
            .iter()
            .enumerate()
            .map(|(i, &c)| ConvSpec::new(c, 3, if i == 0 { first_stride } else { 2 }, 1))
            .collect();
        let mut sizes = Vec::new();
        let (mut h, mut w) = (height, width);
        for t in &trunk {
            h = t.output_size(h).unwrap_or(0);
            w = t.output_size(w).unwrap_or(0);
            sizes.push((h, w));
        }
        let (fh, fw) = *sizes.last().unwrap();
        let branch = |from: usize, channels: usize| -> Result<BranchSpec> {
            let (bh, bw) = sizes[from];
            if fh == 0 || bh % fh != 0 || bw % fw.max(1) != 0 || bh / fh != bw / fw {
                return Err(KeplerError::InvalidNetSpec(format!(
                    "input {height}x{width} does not reduce evenly for a branch from stage {from}"
                )));
            }
            let f = bh / fh;
            let convs = if f > 2 && f % 2 == 0 {
                vec![
                    ConvSpec::new(channels, f / 2, f / 2, 0),
                    ConvSpec::new(channels, 2, 2, 0),
                ]
            } else {
                vec![ConvSpec::new(channels, f, f, 0)]
            };
            Ok(BranchSpec { from_stage: from, convs })
        };
        let spec = NetSpec {
            input_channels,
            input_height: height,
            input_width: width,
            branches: vec![branch(0, 8)?, branch(2, 16)?],
            trunk,
            reduction_channels: 32,
            head_outputs,
            correction_scale: 8.0,
            pose_scale: 30.0,
            linear: false,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// A network small enough for exhaustive finite-difference checks.
    pub fn tiny(head_outputs: usize) -> Self {
        NetSpec {
            input_channels: 4,
            input_height: 8,
            input_width: 8,
            trunk: vec![
                ConvSpec::new(4, 3, 2, 1),
                ConvSpec::new(4, 3, 1, 1),
                ConvSpec::new(5, 3, 2, 1),
                ConvSpec::new(6, 3, 1, 1),
            ],
            branches: vec![
                BranchSpec {
                    from_stage: 0,
                    convs: vec![ConvSpec::new(3, 2, 2, 0)],
                },
                BranchSpec {
                    from_stage: 2,
                    convs: vec![ConvSpec::new(3, 1, 1, 0)],
                },
            ],
            reduction_channels: 6,
            head_outputs,
            correction_scale: 4.0,
            pose_scale: 30.0,
            linear: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.plan().map(|_| ())
    }

    pub fn parameter_count(&self) -> Result<usize> {
        Ok(self.plan()?.total)
    }

    pub fn slots(&self) -> Result<Vec<TensorSlot>> {
        Ok(self.plan()?.slots)
    }

    pub(crate) fn plan(&self) -> Result<Plan> {
        let err = |m: String| Err(KeplerError::InvalidNetSpec(m));
        if self.input_channels == 0 || self.input_height == 0 || self.input_width == 0 {
            return err("input dimensions must be positive".into());
        }
        if self.trunk.is_empty() {
            return err("trunk needs at least one stage".into());
        }
        if self.reduction_channels == 0 || self.head_outputs == 0 {
            return err("reduction and head widths must be positive".into());
        }
        if !(self.correction_scale > 0.0) || !(self.pose_scale > 0.0) {
            return err("output scales must be positive".into());
        }
        let last = self.trunk.len() - 1;
        for (i, a) in self.branches.iter().enumerate() {
            if a.from_stage >= last {
                return err(format!("branch {i} must pool from a stage before the last"));
            }
            if a.convs.is_empty() {
                return err(format!("branch {i} has no convolutions"));
            }
            for b in &self.branches[i + 1..] {
                let gap = a.from_stage.abs_diff(b.from_stage);
                if gap == 0 || gap % 2 != 0 {
                    return err("branches must pool from alternate trunk stages".into());
                }
            }
        }

        let mut sb = SlotBuilder {
            slots: Vec::new(),
            offset: 0,
        };
        let input_shift = sb.push("input.shift".into(), vec![self.input_channels], false);
        let input_scale = sb.push("input.scale".into(), vec![self.input_channels], false);
        let (mut c, mut h, mut w) = (self.input_channels, self.input_height, self.input_width);
        let mut trunk = Vec::with_capacity(self.trunk.len());
        for (i, t) in self.trunk.iter().enumerate() {
            let l = sb.conv(&format!("trunk{i}"), t, c, h, w, self.linear)?;
            (c, h, w) = (l.out_c, l.out_h, l.out_w);
            trunk.push(l);
        }
        let (fh, fw) = (h, w);
        let mut concat_c = c;
        let mut branches = Vec::new();
        for (bi, b) in self.branches.iter().enumerate() {
            let src = &trunk[b.from_stage];
            let (mut c, mut h, mut w) = (src.out_c, src.out_h, src.out_w);
            let mut layers = Vec::new();
            for (j, cs) in b.convs.iter().enumerate() {
                let l = sb.conv(&format!("branch{bi}.{j}"), cs, c, h, w, self.linear)?;
                (c, h, w) = (l.out_c, l.out_h, l.out_w);
                layers.push(l);
            }
            if (h, w) != (fh, fw) {
                return err(format!(
                    "branch {bi} ends at {h}x{w} but the trunk ends at {fh}x{fw}"
                ));
            }
            concat_c += c;
            branches.push((b.from_stage, layers));
        }
        let reduce = sb.conv(
            "reduce",
            &ConvSpec::new(self.reduction_channels, 1, 1, 0),
            concat_c,
            fh,
            fw,
            self.linear,
        )?;
        let head_in = reduce.out_len();
        let head_weight = sb.push("head.weight".into(), vec![self.head_outputs, head_in], true);
        let head_bias = sb.push("head.bias".into(), vec![self.head_outputs], true);
        Ok(Plan {
            input_shift,
            input_scale,
            trunk,
            branches,
            reduce,
            head_in,
            head_out: self.head_outputs,
            head_weight,
            head_bias,
            total: sb.offset,
            slots: sb.slots,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_layouts_resolve() {
        let g = NetSpec::channeled(24, 64, 64, 66, 2).unwrap();
        let plan = g.plan().unwrap();
        assert_eq!((plan.reduce.out_h, plan.reduce.out_w), (4, 4));
        let p = NetSpec::channeled(4, 16, 16, 63, 1).unwrap();
        assert_eq!(p.plan().unwrap().reduce.out_h, 2);
        let big = NetSpec::channeled(24, 224, 224, 66, 2).unwrap();
        assert_eq!(big.plan().unwrap().reduce.out_h, 14);
        assert!(NetSpec::tiny(66).parameter_count().unwrap() <= 10_000);
    }

    #[test]
    fn adjacent_branches_are_rejected() {
        let mut s = NetSpec::tiny(66);
        s.branches[1].from_stage = 1;
        assert!(matches!(s.validate(), Err(KeplerError::InvalidNetSpec(_))));
    }

    #[test]
    fn mismatched_branch_size_is_rejected() {
        let mut s = NetSpec::tiny(66);
        s.branches[0].convs[0] = ConvSpec::new(3, 1, 1, 0);
        assert!(s.validate().is_err());
    }

    #[test]
    fn branch_output_size_is_independent_of_enabled_branches() {
        let full = NetSpec::channeled(24, 64, 64, 66, 2).unwrap();
        for keep in [vec![], vec![0], vec![1], vec![0, 1]] {
            let mut s = full.clone();
            s.branches = keep.iter().map(|&i| full.branches[i].clone()).collect();
            let plan = s.plan().unwrap();
            assert_eq!((plan.reduce.in_h, plan.reduce.in_w), (4, 4));
        }
    }
}
