//! A two-group residual CNN.

use super::Pass;
use crate::error::{Error, Result};
use crate::nn::{global_avg_pool, BatchNorm2d, Bound, Conv2d, ConvGeometry, Linear, NormState, ParamStore};
use crate::regularizers::{Regularizer, RegularizerSpec};
use crate::rng::{site, RngStream};
use crate::tensor::{Tensor, Var};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TinyResNetConfig {
    pub in_channels: usize,
    pub image_size: usize,
    pub stem_channels: usize,
    /// `(blocks, channels)` per group; every group after the first halves
    /// the resolution in its first block.
    pub groups: Vec<(usize, usize)>,
    pub classes: usize,
    /// Indices into `groups` that carry a regularizer.
    pub regularize_groups: Vec<usize>,
    pub regularize_skip: bool,
}

impl Default for TinyResNetConfig {
    fn default() -> Self {
        Self {
            in_channels: 3,
            image_size: 32,
            stem_channels: 16,
            groups: vec![(2, 16), (2, 32)],
            classes: 4,
            regularize_groups: vec![1],
            regularize_skip: true,
        }
    }
}

impl TinyResNetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.image_size < 8 {
            return Err(Error::config("image_size", format!("{} is below 8", self.image_size)));
        }
        if self.in_channels == 0 || self.classes < 2 {
            return Err(Error::config("classes", "need at least one input channel and two classes"));
        }
        if self.stem_channels == 0 || !self.stem_channels.is_multiple_of(4) {
            return Err(Error::config(
                "stem_channels",
                format!("{} is not a positive multiple of 4", self.stem_channels),
            ));
        }
        if self.groups.is_empty() {
            return Err(Error::config("groups", "at least one group is required"));
        }
        for (i, &(blocks, ch)) in self.groups.iter().enumerate() {
            if blocks == 0 || ch == 0 || ch % 4 != 0 {
                return Err(Error::config(
                    "groups",
                    format!("group {i} = ({blocks}, {ch}) needs blocks > 0 and channels divisible by 4"),
                ));
            }
        }
        if let Some(&g) = self.regularize_groups.iter().find(|&&g| g >= self.groups.len()) {
            return Err(Error::config(
                "regularize_groups",
                format!("group {g} does not exist ({} groups)", self.groups.len()),
            ));
        }
        Ok(())
    }

    /// Side of the feature map produced by group `g`.
    pub fn group_size(&self, g: usize) -> usize {
        (0..g).fold(self.image_size, |s, _| s.div_ceil(2))
    }
}

#[derive(Clone, Debug)]
pub struct ResidualBlock {
    conv1: Conv2d,
    bn1: BatchNorm2d,
    conv2: Conv2d,
    bn2: BatchNorm2d,
    /// 1×1 projection when the shape changes.
    projection: Option<(Conv2d, BatchNorm2d)>,
    main_reg: Regularizer,
    skip_reg: Regularizer,
}

impl ResidualBlock {
    fn new(
        store: &mut ParamStore,
        name: &str,
        (cin, cout, stride, size): (usize, usize, usize, usize),
        reg: Option<(RegularizerSpec, bool)>,
        init: &RngStream,
    ) -> Result<Self> {
        let g3 = |stride| ConvGeometry { stride, padding: 1 };
        let conv = |store: &mut ParamStore, n: &str, i, o, k, g| {
            let full = format!("{name}.{n}");
            Conv2d::new(store, &full, i, o, k, g, &init.child_named(&full))
        };
        let conv1 = conv(store, "conv1", cin, cout, 3, g3(stride));
        let bn1 = BatchNorm2d::new(store, &format!("{name}.bn1"), cout);
        let conv2 = conv(store, "conv2", cout, cout, 3, g3(1));
        let bn2 = BatchNorm2d::new(store, &format!("{name}.bn2"), cout);
        let projection = (stride != 1 || cin != cout).then(|| {
            let c = conv(store, "proj", cin, cout, 1, ConvGeometry { stride, padding: 0 });
            (c, BatchNorm2d::new(store, &format!("{name}.proj_bn"), cout))
        });
        let site = |store: &mut ParamStore, n: &str, spec| {
            let full = format!("{name}.{n}");
            Regularizer::new(store, &full, spec, cout, (size, size), &init.child_named(&full))
        };
        let (main_reg, skip_reg) = match reg {
            Some((spec, skip)) => (
                site(store, "reg", spec)?,
                if skip { site(store, "skip_reg", spec)? } else { Regularizer::none() },
            ),
            None => (Regularizer::none(), Regularizer::none()),
        };
        Ok(Self {
            conv1,
            bn1,
            conv2,
            bn2,
            projection,
            main_reg,
            skip_reg,
        })
    }

    /// `relu(bn(conv(relu(bn(conv(x))))) + skip)`, then the block
    /// regularizer. The skip regularizer reuses the block's mask.
    fn forward<'t>(&mut self, x: &Var<'t>, p: &Bound<'t>, pass: &Pass) -> Result<Var<'t>> {
        let h = self.conv1.forward(x, p, pass.par)?;
        let h = self.bn1.forward(&h, p, pass.norm)?.relu();
        let h = self.conv2.forward(&h, p, pass.par)?;
        let h = self.bn2.forward(&h, p, pass.norm)?;
        let skip = match &mut self.projection {
            Some((c, bn)) => {
                let s = c.forward(x, p, pass.par)?;
                bn.forward(&s, p, pass.norm)?
            }
            None => *x,
        };
        if !self.main_reg.active(pass.reg) && !self.skip_reg.active(pass.reg) {
            return h.add(&skip).map(|y| y.relu());
        }
        let stream = &pass.stream;
        let mask = self.main_reg.sample_mask(&h, pass.progress, stream, pass.reg)?;
        let skip = self.skip_reg.forward(
            &skip,
            p,
            pass.progress,
            &stream.child(site::SKIP),
            pass.reg,
            mask.as_ref(),
        )?;
        let y = h.add(&skip)?.relu();
        self.main_reg.forward(&y, p, pass.progress, stream, pass.reg, mask.as_ref())
    }

    fn norms(&self) -> Vec<&BatchNorm2d> {
        let mut v = vec![&self.bn1, &self.bn2];
        if let Some((_, bn)) = &self.projection {
            v.push(bn);
        }
        v
    }

    fn norms_mut(&mut self) -> Vec<&mut BatchNorm2d> {
        let mut v = vec![&mut self.bn1, &mut self.bn2];
        if let Some((_, bn)) = &mut self.projection {
            v.push(bn);
        }
        v
    }
}

/// Stem conv, residual groups, global pooling, linear head.
///
/// Backbone weights are initialised from streams named after each layer, so
/// a regularized network and a regularizer-free one built from the same
/// seed share every backbone weight.
#[derive(Clone, Debug)]
pub struct TinyResNet {
    pub config: TinyResNetConfig,
    pub spec: RegularizerSpec,
    pub store: ParamStore,
    stem: Conv2d,
    stem_bn: BatchNorm2d,
    blocks: Vec<ResidualBlock>,
    head: Linear,
}

impl TinyResNet {
    pub fn new(config: TinyResNetConfig, spec: RegularizerSpec, init: &RngStream) -> Result<Self> {
        config.validate()?;
        let init = init.child(site::INIT);
        let mut store = ParamStore::new();
        let stem = Conv2d::new(
            &mut store,
            "stem",
            config.in_channels,
            config.stem_channels,
            3,
            ConvGeometry { stride: 1, padding: 1 },
            &init.child_named("stem"),
        );
        let stem_bn = BatchNorm2d::new(&mut store, "stem_bn", config.stem_channels);
        let mut blocks = Vec::new();
        let mut cin = config.stem_channels;
        for (g, &(count, cout)) in config.groups.iter().enumerate() {
            let size = config.group_size(g);
            let reg = (config.regularize_groups.contains(&g) && spec != RegularizerSpec::None)
                .then_some((spec, config.regularize_skip));
            for b in 0..count {
                let stride = if g > 0 && b == 0 { 2 } else { 1 };
                let name = format!("g{g}.b{b}");
                blocks.push(ResidualBlock::new(&mut store, &name, (cin, cout, stride, size), reg, &init)?);
                cin = cout;
            }
        }
        let head = Linear::new(&mut store, "head", cin, config.classes, &init.child_named("head"));
        Ok(Self {
            config,
            spec,
            store,
            stem,
            stem_bn,
            blocks,
            head,
        })
    }

    /// Logits `(N, classes)` for `x: (N, in_channels, S, S)`.
    pub fn forward<'t>(&mut self, x: &Var<'t>, p: &Bound<'t>, pass: &Pass) -> Result<Var<'t>> {
        let shape = x.shape();
        let (c, s) = (self.config.in_channels, self.config.image_size);
        if shape.len() != 4 || shape[1] != c || shape[2] != s || shape[3] != s {
            return Err(Error::shape("tiny_resnet", &[shape.first().copied().unwrap_or(0), c, s, s], &shape));
        }
        let h = self.stem.forward(x, p, pass.par)?;
        let mut h = self.stem_bn.forward(&h, p, pass.norm)?.relu();
        for (i, block) in self.blocks.iter_mut().enumerate() {
            let sub = Pass {
                stream: pass.stream.child(i as u64),
                ..pass.clone()
            };
            h = block.forward(&h, p, &sub)?;
        }
        self.head.forward(&global_avg_pool(&h)?, p)
    }

    /// Parameters plus norm running statistics, in a stable order.
    pub fn state_entries(&self) -> Vec<(String, Tensor)> {
        let mut out: Vec<(String, Tensor)> = self.store.iter().map(|p| (p.name.clone(), p.value.clone())).collect();
        for (name, st) in self.norm_states() {
            out.push((format!("{name}.running_mean"), st.running_mean.clone()));
            out.push((format!("{name}.running_var"), st.running_var.clone()));
        }
        out
    }

    /// Inverse of [`TinyResNet::state_entries`]. Extra entries (for example
    /// regularizer weights when loading into a plain network) are ignored.
    pub fn load_state(&mut self, entries: &[(String, Tensor)]) -> Result<()> {
        self.store.load(entries)?;
        let names: Vec<String> = self.norm_states().into_iter().map(|(n, _)| n).collect();
        for (name, bn) in names.iter().zip(self.norms_mut()) {
            for (suffix, slot) in [("running_mean", &mut bn.state.running_mean), ("running_var", &mut bn.state.running_var)] {
                let key = format!("{name}.{suffix}");
                let (_, t) = entries.iter().find(|(n, _)| *n == key).ok_or_else(|| Error::Format {
                    what: "checkpoint",
                    reason: format!("missing `{key}`"),
                })?;
                if t.shape() != slot.shape() {
                    return Err(Error::shape("load_state", slot.shape(), t.shape()));
                }
                *slot = t.clone();
            }
        }
        Ok(())
    }

    fn norm_states(&self) -> Vec<(String, &NormState)> {
        let mut out = vec![("stem_bn".to_string(), &self.stem_bn.state)];
        for (i, b) in self.blocks.iter().enumerate() {
            let name = self.block_name(i);
            let suffixes = ["bn1", "bn2", "proj_bn"];
            for (bn, suffix) in b.norms().into_iter().zip(suffixes) {
                out.push((format!("{name}.{suffix}"), &bn.state));
            }
        }
        out
    }

    fn norms_mut(&mut self) -> Vec<&mut BatchNorm2d> {
        let mut out = vec![&mut self.stem_bn];
        for b in &mut self.blocks {
            out.extend(b.norms_mut());
        }
        out
    }

    fn block_name(&self, index: usize) -> String {
        let mut i = index;
        for (g, &(count, _)) in self.config.groups.iter().enumerate() {
            if i < count {
                return format!("g{g}.b{i}");
            }
            i -= count;
        }
        unreachable!("block index in range")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::regularizers::{Mode, Progress, RegularizerConfig};
    use crate::tensor::Tape;
    use crate::nn::NormMode;

    fn closed_form_count(cfg: &TinyResNetConfig) -> usize {
        let conv = |i: usize, o: usize, k: usize| o * i * k * k + o;
        let bn = |c: usize| 2 * c;
        let mut n = conv(cfg.in_channels, cfg.stem_channels, 3) + bn(cfg.stem_channels);
        let mut cin = cfg.stem_channels;
        for (g, &(blocks, c)) in cfg.groups.iter().enumerate() {
            for b in 0..blocks {
                n += conv(cin, c, 3) + bn(c) + conv(c, c, 3) + bn(c);
                if (g > 0 && b == 0) || cin != c {
                    n += conv(cin, c, 1) + bn(c);
                }
                cin = c;
            }
        }
        n + cin * cfg.classes + cfg.classes
    }

    #[test]
    fn default_parameter_count_matches_closed_form() {
        let cfg = TinyResNetConfig::default();
        let net = TinyResNet::new(cfg.clone(), RegularizerSpec::None, &RngStream::new(0)).unwrap();
        assert_eq!(net.store.count(), closed_form_count(&cfg));
        // stem 480, group 0 2·4704, group 1 14624 + 18624, head 132
        assert_eq!(net.store.count(), 43_268);
    }

    #[test]
    fn rejects_bad_channel_counts_and_groups() {
        let cfg = TinyResNetConfig {
            groups: vec![(1, 10)],
            ..Default::default()
        };
        assert!(matches!(cfg.validate(), Err(Error::Config { field, .. }) if field == "groups"));
        let cfg = TinyResNetConfig {
            regularize_groups: vec![5],
            ..Default::default()
        };
        assert!(matches!(cfg.validate(), Err(Error::Config { field, .. }) if field == "regularize_groups"));
    }

    #[test]
    fn train_at_rho_zero_equals_plain_forward() {
        let cfg = TinyResNetConfig {
            image_size: 8,
            stem_channels: 4,
            groups: vec![(1, 4), (1, 8)],
            ..Default::default()
        };
        let spec = RegularizerSpec::DropGraph(RegularizerConfig::default());
        let mut net = TinyResNet::new(cfg, spec, &RngStream::new(3)).unwrap();
        let x = Tensor::from_fn(&[2, 3, 8, 8], |i| ((i * 31) % 17) as f64 / 8.0 - 1.0);
        let run = |net: &mut TinyResNet, reg: Mode| {
            let tape = Tape::new();
            let p = net.store.bind(&tape, false);
            let pass = Pass {
                norm: NormMode::Eval,
                reg,
                progress: Progress::start(),
                ..Pass::eval()
            };
            (*net.forward(&tape.constant(x.clone()), &p, &pass).unwrap().value()).clone()
        };
        let a = run(&mut net, Mode::Train);
        let b = run(&mut net, Mode::Eval);
        assert!(a.bit_eq(&b));
    }
}
