use std::collections::BTreeMap;

use crate::encoder::{EncoderWeights, GradScope};
use crate::error::{Error, Result};
use crate::peft::{adapter_init, cola_advance_stage, AdapterBundle, AdapterSpec, Method};

/// How one fine-tuning method builds and schedules its trainable state.
/// The training loop itself is shared.
pub trait FinetuneStrategy: Send + Sync {
    /// Registry key.
    fn name(&self) -> &str;

    fn method(&self) -> Method;

    /// Encoder gradients the method consumes.
    fn grad_scope(&self) -> GradScope;

    fn init(
        &self,
        task: &str,
        spec: &AdapterSpec,
        w0: &EncoderWeights,
        classes: usize,
        seed: u64,
    ) -> Result<AdapterBundle> {
        let spec = AdapterSpec {
            method: self.method(),
            ..spec.clone()
        };
        adapter_init(task, &spec, w0, classes, seed)
    }

    /// Runs before epoch `epoch` (1-based) of `epochs`. Returns `true` when
    /// the trainable set changed and optimiser state must start over.
    fn before_epoch(&self, _bundle: &mut AdapterBundle, _epoch: usize, _epochs: usize) -> Result<bool> {
        Ok(false)
    }
}

/// LoRA or DoRA: one factor pair per target, trained throughout.
pub struct LowRankStrategy(pub Method);

impl FinetuneStrategy for LowRankStrategy {
    fn name(&self) -> &str {
        self.0.name()
    }
    fn method(&self) -> Method {
        self.0
    }
    fn grad_scope(&self) -> GradScope {
        GradScope::Projections
    }
}

/// CoLA: the epochs are split evenly over the chain and each stage trains
/// only in its own share.
pub struct ColaStrategy;

impl FinetuneStrategy for ColaStrategy {
    fn name(&self) -> &str {
        "cola"
    }
    fn method(&self) -> Method {
        Method::Cola
    }
    fn grad_scope(&self) -> GradScope {
        GradScope::Projections
    }
    fn before_epoch(&self, bundle: &mut AdapterBundle, epoch: usize, epochs: usize) -> Result<bool> {
        let want = ((epoch - 1) * bundle.chain_length / epochs).min(bundle.chain_length - 1);
        let mut changed = false;
        while bundle.active_stage() < want {
            cola_advance_stage(bundle)?;
            changed = true;
        }
        Ok(changed)
    }
}

/// Every encoder weight trains; the bundle stores `ΔW = W − W0`.
pub struct FullStrategy;

impl FinetuneStrategy for FullStrategy {
    fn name(&self) -> &str {
        "full"
    }
    fn method(&self) -> Method {
        Method::Full
    }
    fn grad_scope(&self) -> GradScope {
        GradScope::All
    }
}

/// A fresh Xavier encoder per task; `W0` only supplies the shape.
pub struct ScratchStrategy;

impl FinetuneStrategy for ScratchStrategy {
    fn name(&self) -> &str {
        "scratch"
    }
    fn method(&self) -> Method {
        Method::Scratch
    }
    fn grad_scope(&self) -> GradScope {
        GradScope::All
    }
}

/// Fine-tuning methods by name.
pub struct StrategyRegistry {
    strategies: BTreeMap<String, Box<dyn FinetuneStrategy>>,
}

impl Default for StrategyRegistry {
    fn default() -> Self {
        let mut r = StrategyRegistry::empty();
        for s in [
            Box::new(LowRankStrategy(Method::Lora)) as Box<dyn FinetuneStrategy>,
            Box::new(LowRankStrategy(Method::Dora)),
            Box::new(ColaStrategy),
            Box::new(FullStrategy),
            Box::new(ScratchStrategy),
        ] {
            r.register(s).expect("built-in names are distinct");
        }
        r
    }
}

impl StrategyRegistry {
    pub fn empty() -> Self {
        StrategyRegistry {
            strategies: BTreeMap::new(),
        }
    }

    pub fn register(&mut self, strategy: Box<dyn FinetuneStrategy>) -> Result<()> {
        let name = strategy.name().to_string();
        if self.strategies.contains_key(&name) {
            return Err(Error::invalid(format!("strategy {name:?} is already registered")));
        }
        self.strategies.insert(name, strategy);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&dyn FinetuneStrategy> {
        self.strategies.get(name).map(Box::as_ref).ok_or_else(|| {
            Error::invalid(format!(
                "unknown method {name:?}; expected one of {}",
                self.names().join(", ")
            ))
        })
    }

    pub fn names(&self) -> Vec<&str> {
        self.strategies.keys().map(String::as_str).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::EncoderConfig;
    use crate::numerics::rng::seeded;

    #[test]
    fn defaults_cover_every_method() {
        let r = StrategyRegistry::default();
        assert_eq!(r.names(), vec!["cola", "dora", "full", "lora", "scratch"]);
        for m in Method::ALL {
            assert_eq!(r.get(m.name()).unwrap().method(), m);
        }
        assert!(r.get("adapter").is_err());
    }

    #[test]
    fn duplicates_rejected() {
        let mut r = StrategyRegistry::default();
        assert!(r.register(Box::new(FullStrategy)).is_err());
    }

    #[test]
    fn cola_schedule_is_even_thirds() {
        let cfg = EncoderConfig {
            hidden: 8,
            ffn: 16,
            ..EncoderConfig::default()
        };
        let w0 = EncoderWeights::xavier(cfg, false, &mut seeded(0)).unwrap();
        let spec = AdapterSpec {
            rank: 2,
            ..AdapterSpec::new(Method::Cola)
        };
        let mut b = ColaStrategy.init("t", &spec, &w0, 3, 1).unwrap();
        let mut starts = Vec::new();
        for e in 1..=300 {
            if ColaStrategy.before_epoch(&mut b, e, 300).unwrap() {
                starts.push(e);
            }
        }
        assert_eq!(starts, vec![101, 201]);
        assert_eq!(b.active_stage(), 2);
    }

    #[test]
    fn init_uses_strategy_method() {
        let cfg = EncoderConfig {
            hidden: 8,
            ffn: 16,
            ..EncoderConfig::default()
        };
        let w0 = EncoderWeights::xavier(cfg, false, &mut seeded(0)).unwrap();
        let spec = AdapterSpec {
            rank: 2,
            ..AdapterSpec::new(Method::Lora)
        };
        let b = LowRankStrategy(Method::Dora).init("t", &spec, &w0, 3, 1).unwrap();
        assert_eq!(b.method, Method::Dora);
        assert!(b.targets[0].magnitude.is_some());
    }
}
