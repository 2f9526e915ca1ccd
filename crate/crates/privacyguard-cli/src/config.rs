//! Run configuration: one JSON document covering every stage, with every
//! field overridable by a command-line flag. Unknown keys are rejected and
//! all seeds are explicit, so a run is exactly reproducible from the
//! resolved config written next to its outputs.

use privacyguard::augment::CposConfig;
use privacyguard::models::ModelDims;
use privacyguard::synthgen::{ContextRule, GenConfig};
use privacyguard::training::{Precision, TrainConfig};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Master seed; stage seeds default to values derived from it.
    pub seed: u64,
    pub threads: usize,
    pub precision: Precision,
    pub generate: GenerateSection,
    pub augment: AugmentSection,
    pub model: ModelSection,
    pub train: TrainSection,
    pub eval: EvalSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            threads: 1,
            precision: Precision::F64,
            generate: GenerateSection::default(),
            augment: AugmentSection::default(),
            model: ModelSection::default(),
            train: TrainSection::default(),
            eval: EvalSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenerateSection {
    pub n_graphs: usize,
    pub nodes_per_graph: (usize, usize),
    pub relations_per_graph: (usize, usize),
    pub positive_prior: f64,
    pub feature_noise: f64,
    /// Generator seed; when absent the master seed is used.
    pub seed: Option<u64>,
    pub rule: ContextRule,
}

impl Default for GenerateSection {
    fn default() -> Self {
        let g = GenConfig::default();
        GenerateSection {
            n_graphs: g.n_graphs,
            nodes_per_graph: g.nodes_per_graph,
            relations_per_graph: g.relations_per_graph,
            positive_prior: g.positive_prior,
            feature_noise: g.feature_noise,
            seed: None,
            rule: ContextRule::walking_on_street(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentSection {
    pub target_ratio: f64,
    pub keep_prob: f64,
    pub extra_edge_prob: f64,
    pub rewire_prob: f64,
    /// SMOTE neighbor count.
    pub k: usize,
    pub seed: Option<u64>,
}

impl Default for AugmentSection {
    fn default() -> Self {
        let c = CposConfig::default();
        AugmentSection {
            target_ratio: c.target_ratio,
            keep_prob: c.keep_prob,
            extra_edge_prob: c.extra_edge_prob,
            rewire_prob: c.rewire_prob,
            k: 5,
            seed: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub d_category: usize,
    pub d_relation: usize,
    pub hidden: usize,
    pub attn: usize,
    pub layers: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            d_category: 16,
            d_relation: 16,
            hidden: 16,
            attn: 16,
            layers: 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch: usize,
    pub pos_weight_cap: f64,
    pub early_stop_patience: usize,
    pub seed: Option<u64>,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        TrainSection {
            learning_rate: t.learning_rate,
            epochs: t.epochs,
            batch: t.batch,
            pos_weight_cap: t.pos_weight_cap,
            early_stop_patience: t.early_stop_patience,
            seed: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub threshold: f64,
    pub drop_prob: f64,
    pub drop_seed: u64,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            threshold: 0.5,
            drop_prob: 0.0,
            drop_seed: 0,
        }
    }
}

impl RunConfig {
    /// Materialize stage seeds from the master seed so the resolved config
    /// carries no implicit entropy.
    pub fn resolve_seeds(&mut self) {
        self.generate.seed.get_or_insert(self.seed);
        self.augment.seed.get_or_insert(self.seed);
        self.train.seed.get_or_insert(self.seed);
    }

    pub fn gen_config(&self) -> GenConfig {
        GenConfig {
            n_graphs: self.generate.n_graphs,
            nodes_per_graph: self.generate.nodes_per_graph,
            relations_per_graph: self.generate.relations_per_graph,
            positive_prior: self.generate.positive_prior,
            feature_noise: self.generate.feature_noise,
            seed: self.generate.seed.unwrap_or(self.seed),
            d_category: self.model.d_category,
            d_relation: self.model.d_relation,
        }
    }

    pub fn cpos_config(&self) -> CposConfig {
        CposConfig {
            target_ratio: self.augment.target_ratio,
            keep_prob: self.augment.keep_prob,
            extra_edge_prob: self.augment.extra_edge_prob,
            rewire_prob: self.augment.rewire_prob,
            seed: self.augment.seed.unwrap_or(self.seed),
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            learning_rate: self.train.learning_rate,
            epochs: self.train.epochs,
            batch: self.train.batch,
            pos_weight_cap: self.train.pos_weight_cap,
            early_stop_patience: self.train.early_stop_patience,
            seed: self.train.seed.unwrap_or(self.seed),
            precision: self.precision,
        }
    }

    pub fn model_dims(&self) -> ModelDims {
        ModelDims {
            d_category: self.model.d_category,
            d_relation: self.model.d_relation,
            hidden: self.model.hidden,
            attn: self.model.attn,
            layers: self.model.layers,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialization")
    }
}

/// Flag-level overrides applied on top of the config file.
#[derive(Debug, Default, Clone)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub dim: Option<usize>,
    pub hidden: Option<usize>,
    pub layers: Option<usize>,
    pub lr: Option<f64>,
    pub epochs: Option<usize>,
    pub threshold: Option<f64>,
    pub target_ratio: Option<f64>,
    pub keep_prob: Option<f64>,
    pub rewire_prob: Option<f64>,
    pub extra_edge_prob: Option<f64>,
    pub drop_prob: Option<f64>,
    pub threads: Option<usize>,
    pub precision: Option<u8>,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut RunConfig) -> Result<(), String> {
        if let Some(seed) = self.seed {
            cfg.seed = seed;
            cfg.generate.seed = None;
            cfg.augment.seed = None;
            cfg.train.seed = None;
        }
        if let Some(d) = self.dim {
            cfg.model.d_category = d;
            cfg.model.d_relation = d;
        }
        if let Some(h) = self.hidden {
            cfg.model.hidden = h;
            cfg.model.attn = h;
        }
        if let Some(l) = self.layers {
            cfg.model.layers = l;
        }
        if let Some(lr) = self.lr {
            cfg.train.learning_rate = lr;
        }
        if let Some(e) = self.epochs {
            cfg.train.epochs = e;
        }
        if let Some(t) = self.threshold {
            if !(t > 0.0 && t < 1.0) {
                return Err(format!(
                    "threshold must lie strictly inside (0, 1), got {t}"
                ));
            }
            cfg.eval.threshold = t;
        }
        if let Some(r) = self.target_ratio {
            cfg.augment.target_ratio = r;
        }
        if let Some(p) = self.keep_prob {
            cfg.augment.keep_prob = p;
        }
        if let Some(p) = self.rewire_prob {
            cfg.augment.rewire_prob = p;
        }
        if let Some(p) = self.extra_edge_prob {
            cfg.augment.extra_edge_prob = p;
        }
        if let Some(p) = self.drop_prob {
            if !(0.0..1.0).contains(&p) {
                return Err(format!("drop_prob must lie in [0, 1), got {p}"));
            }
            cfg.eval.drop_prob = p;
        }
        if let Some(t) = self.threads {
            cfg.threads = t;
        }
        if let Some(p) = self.precision {
            cfg.precision = match p {
                32 => Precision::F32,
                64 => Precision::F64,
                other => return Err(format!("precision must be 32 or 64, got {other}")),
            };
        }
        cfg.resolve_seeds();
        Ok(())
    }
}
