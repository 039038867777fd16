//! The full regularizer: block mask branch plus graph branch.

use super::adjacency::{build_adjacency, AdjacencyMode};
use super::apply::pool_expand_apply;
use super::generator::{distortion_generator_alt, GeneratorKind, GraphGeneratorParams};
use super::mask::{sample_block_masks, DropMask};
use super::schedule::{schedule_rho, SchedulerState};
use super::vertices::{gather_vertices, sample_positions};
use super::{Mode, RegularizerConfig};
use crate::error::Result;
use crate::nn::{Bound, ParamId, ParamStore};
use crate::rng::{site, RngStream};
use crate::tensor::{Tensor, Var};

/// One insertion point's parameters.
#[derive(Clone, Debug)]
pub struct DropGraph {
    pub config: RegularizerConfig,
    pub generator: Option<GraphGeneratorParams>,
    /// `k × k` matrix for [`AdjacencyMode::Learned`], `k = ⌈α·h·w⌉`.
    pub learned_adjacency: Option<ParamId>,
}

pub struct DropGraphOutput<'t> {
    pub output: Var<'t>,
    /// The mask that was applied (absent in eval mode).
    pub mask: Option<DropMask>,
}

impl DropGraph {
    /// Validates the config against the insertion point's `channels × h × w`
    /// and registers the generator weights.
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        config: RegularizerConfig,
        channels: usize,
        spatial: (usize, usize),
        init: &RngStream,
    ) -> Result<Self> {
        config.validate_at(channels, spatial.0, spatial.1)?;
        let generator = match config.generator_kind {
            GeneratorKind::Graph => Some(GraphGeneratorParams::new(store, name, channels, init)?),
            _ => None,
        };
        let learned_adjacency = (config.generator_kind == GeneratorKind::Graph
            && config.adjacency_mode == AdjacencyMode::Learned)
            .then(|| {
                let k = ((config.alpha * (spatial.0 * spatial.1) as f64).ceil() as usize).max(1);
                store.add(format!("{name}.adjacency"), Tensor::full(&[k, k], 1.0 / k as f64))
            });
        Ok(Self {
            config,
            generator,
            learned_adjacency,
        })
    }

    pub fn sample_mask(&self, batch: usize, h: usize, w: usize, rho: f64, stream: &RngStream) -> Result<DropMask> {
        sample_block_masks(batch, h, w, self.config.block_size, rho, &stream.child(site::MASK))
    }

    /// Train mode: draw (or reuse) the block mask, build a graph per batch
    /// item from sampled vertices, and write the pooled distortions into
    /// the dropped cells. Eval mode returns `x` untouched.
    pub fn forward<'t>(
        &self,
        x: &Var<'t>,
        p: &Bound<'t>,
        rho: f64,
        stream: &RngStream,
        mode: Mode,
        shared_mask: Option<&DropMask>,
    ) -> Result<DropGraphOutput<'t>> {
        if mode == Mode::Eval {
            return Ok(DropGraphOutput { output: *x, mask: None });
        }
        let [n, c, h, w] = x.value().dims4("dropgraph")?;
        let mask = match shared_mask {
            Some(m) => m.clone(),
            None => self.sample_mask(n, h, w, rho, stream)?,
        };
        if !mask.any_dropped() {
            return Ok(DropGraphOutput {
                output: *x,
                mask: Some(mask),
            });
        }
        let cfg = &self.config;
        let mut distortions = Vec::with_capacity(n);
        for b in 0..n {
            if cfg.generator_kind == GeneratorKind::None || !mask.item_has_drops(b) {
                distortions.push(None);
                continue;
            }
            let positions = sample_positions(h * w, cfg.alpha, &stream.child(site::VERTICES).child(b as u64))?;
            if positions.is_empty() {
                distortions.push(None);
                continue;
            }
            let v = gather_vertices(x, b, &positions)?;
            let d = match cfg.generator_kind {
                GeneratorKind::Graph => {
                    let learned = self.learned_adjacency.map(|id| p[id]);
                    let a = build_adjacency(&v, cfg.adjacency_mode, cfg.normalize_similarity, learned.as_ref())?;
                    let gen = self.generator.as_ref().expect("graph generator registered");
                    gen.forward(&v.values, &a.entries, p)?
                }
                kind => distortion_generator_alt(&v.values, kind, &stream.child(site::NOISE).child(b as u64))?,
            };
            debug_assert_eq!(d.shape(), [v.len(), c]);
            distortions.push(Some(d));
        }
        let output = pool_expand_apply(x, &mask, &distortions, &stream.child(site::MULTIPLIERS))?;
        Ok(DropGraphOutput {
            output,
            mask: Some(mask),
        })
    }

    /// [`DropGraph::forward`] with ρ read off the scheduler.
    pub fn forward_scheduled<'t>(
        &self,
        x: &Var<'t>,
        p: &Bound<'t>,
        sched: &SchedulerState,
        stream: &RngStream,
        mode: Mode,
    ) -> Result<Var<'t>> {
        if mode == Mode::Eval {
            return Ok(*x);
        }
        let rho = schedule_rho(sched)?;
        Ok(self.forward(x, p, rho, stream, mode, None)?.output)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::regularizers::SchedulerKind;
    use crate::tensor::Tape;

    fn setup(cfg: RegularizerConfig) -> (ParamStore, DropGraph) {
        let mut store = ParamStore::new();
        let dg = DropGraph::new(&mut store, "dg", cfg, 8, (8, 8), &RngStream::new(1)).unwrap();
        (store, dg)
    }

    fn input() -> Tensor {
        Tensor::from_fn(&[3, 8, 8, 8], |i| ((i * 2654435761usize) % 1000) as f64 / 500.0 - 1.0)
    }

    fn run(cfg: RegularizerConfig, mode: Mode, rho: f64) -> Tensor {
        let (store, dg) = setup(cfg);
        let tape = Tape::new();
        let p = store.bind(&tape, true);
        let x = tape.var(input());
        (*dg.forward(&x, &p, rho, &RngStream::new(5), mode, None).unwrap().output.value()).clone()
    }

    #[test]
    fn eval_is_bit_identity() {
        assert!(run(RegularizerConfig::default(), Mode::Eval, 0.3).bit_eq(&input()));
    }

    #[test]
    fn scheduler_start_is_identity() {
        let (store, dg) = setup(RegularizerConfig::default());
        let tape = Tape::new();
        let p = store.bind(&tape, true);
        let x = tape.var(input());
        let sched = SchedulerState {
            step: 0,
            total_steps: 100,
            kind: SchedulerKind::F1,
            rho_target: 0.1,
        };
        let y = dg.forward_scheduled(&x, &p, &sched, &RngStream::new(5), Mode::Train).unwrap();
        assert!(y.value().bit_eq(&input()));
    }

    #[test]
    fn zero_adjacency_degenerates_to_block_masking() {
        let zero = RegularizerConfig {
            adjacency_mode: AdjacencyMode::Zero,
            ..Default::default()
        };
        let none = RegularizerConfig {
            generator_kind: GeneratorKind::None,
            ..Default::default()
        };
        let a = run(zero, Mode::Train, 0.3);
        let b = run(none, Mode::Train, 0.3);
        assert!(a.bit_eq(&b));
        assert!(!a.bit_eq(&input()));
        let g = run(RegularizerConfig::default(), Mode::Train, 0.3);
        assert!(!g.bit_eq(&b));
    }

    #[test]
    fn every_generator_runs() {
        for kind in [GeneratorKind::RandomNoise, GeneratorKind::AvgPool] {
            let out = run(
                RegularizerConfig {
                    generator_kind: kind,
                    ..Default::default()
                },
                Mode::Train,
                0.2,
            );
            assert!(out.is_finite());
        }
        for mode in AdjacencyMode::ALL {
            let out = run(
                RegularizerConfig {
                    adjacency_mode: mode,
                    ..Default::default()
                },
                Mode::Train,
                0.2,
            );
            assert!(out.is_finite(), "{mode}");
        }
    }
}
