//! The learned components bundled with one parameter store: dataset
//! encoder, graph autoencoder, fusion MLP and GP hyperparameters.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dag::CellGraph;
use crate::diff::{Checkpoint, ParamStore};
use crate::error::{Error, Result};
use crate::graph_vae::{GraphLatent, GraphVae, GraphVaeConfig};
use crate::set_encoder::{DatasetEmbedding, SetEncoder, SetEncoderConfig, TaskSpec};
use crate::surrogate::{FusedRep, Fusion, FusionConfig, KernelHypers};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub set: SetEncoderConfig,
    pub graph: GraphVaeConfig,
    pub fusion: FusionConfig,
    pub samples_per_class: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::with_dims(56, 32)
    }
}

impl ModelConfig {
    /// Default widths with the given graph-latent and fused widths.
    pub fn with_dims(latent: usize, fused: usize) -> Self {
        let set = SetEncoderConfig::default();
        let graph = GraphVaeConfig {
            latent,
            ..GraphVaeConfig::default()
        };
        Self {
            set,
            graph,
            fusion: FusionConfig {
                d_dataset: set.width,
                d_graph: latent,
                d_fused: fused,
                ..FusionConfig::default()
            },
            samples_per_class: 10,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.fusion.d_dataset != self.set.width || self.fusion.d_graph != self.graph.latent {
            return Err(Error::InvalidArgument(
                "fusion input widths must match the encoder output widths".into(),
            ));
        }
        if self.samples_per_class == 0 {
            return Err(Error::InvalidArgument("samples_per_class must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    config: ModelConfig,
    checkpoint: Checkpoint,
}

#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamStore,
}

impl Model {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::new(seed);
        SetEncoder::new(config.set).init(&mut params)?;
        let vae = GraphVae::new(config.graph);
        vae.init_encoder(&mut params)?;
        vae.init_decoder(&mut params)?;
        Fusion::new(config.fusion).init(&mut params)?;
        KernelHypers::new(config.fusion.d_fused).init_params(&mut params)?;
        Ok(Self { config, params })
    }

    pub fn set_encoder(&self) -> SetEncoder {
        SetEncoder::new(self.config.set)
    }

    pub fn vae(&self) -> GraphVae {
        GraphVae::new(self.config.graph)
    }

    pub fn fusion(&self) -> Fusion {
        Fusion::new(self.config.fusion)
    }

    pub fn hypers(&self) -> Result<KernelHypers> {
        KernelHypers::from_params(&self.params)
    }

    pub fn embed_task(&self, task: &TaskSpec, seed: u64) -> Result<DatasetEmbedding> {
        self.set_encoder()
            .embed(&self.params, task, self.config.samples_per_class, seed)
    }

    pub fn encode_graph(&self, g: &CellGraph) -> Result<GraphLatent> {
        self.vae().encode(&self.params, g)
    }

    pub fn decode(&self, z: &GraphLatent) -> Result<CellGraph> {
        self.vae().decode(&self.params, z)
    }

    pub fn fuse(&self, xd: &DatasetEmbedding, xg: &GraphLatent) -> Result<FusedRep> {
        self.fusion().fuse(&self.params, xd, xg)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = ModelFile {
            config: self.config,
            checkpoint: self.params.to_checkpoint(),
        };
        std::fs::write(path, serde_json::to_string(&file)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        file.config.validate()?;
        Ok(Self {
            config: file.config,
            params: ParamStore::from_checkpoint(file.checkpoint)?,
        })
    }
}
