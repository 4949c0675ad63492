//! Fusion MLP mapping `[x^D ; x^G]` to the GP input space.

use serde::{Deserialize, Serialize};

use crate::diff::{nn, ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::graph_vae::GraphLatent;
use crate::set_encoder::DatasetEmbedding;

/// GP input `x`.
#[derive(Clone, Debug, PartialEq)]
pub struct FusedRep(pub Vec<f64>);

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FusionConfig {
    pub d_dataset: usize,
    pub d_graph: usize,
    pub hidden: usize,
    pub d_fused: usize,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            d_dataset: 56,
            d_graph: 56,
            hidden: 64,
            d_fused: 32,
        }
    }
}

/// Three affine layers with tanh after the first two. Parameters use the `fuse.` prefix.
#[derive(Clone, Copy, Debug)]
pub struct Fusion {
    pub config: FusionConfig,
}

impl Fusion {
    pub const PREFIX: &'static str = "fuse.";

    pub fn new(config: FusionConfig) -> Self {
        Self { config }
    }

    pub fn init(&self, store: &mut ParamStore) -> Result<()> {
        let c = self.config;
        nn::init_linear(store, "fuse.l1", c.d_dataset + c.d_graph, c.hidden)?;
        nn::init_linear(store, "fuse.l2", c.hidden, c.hidden)?;
        nn::init_linear(store, "fuse.l3", c.hidden, c.d_fused)
    }

    /// `xd` is `1 x d_dataset` (broadcast over rows), `xg` is `n x d_graph`.
    pub fn fuse_on_tape(&self, tape: &mut Tape, store: &ParamStore, xd: Var, xg: Var) -> Result<Var> {
        let (dr, dc) = tape.value(xd).shape();
        let (n, gc) = tape.value(xg).shape();
        if dr != 1 || dc != self.config.d_dataset || gc != self.config.d_graph {
            return Err(Error::Shape(format!(
                "fusion expects 1x{} and nx{}, got {dr}x{dc} and {n}x{gc}",
                self.config.d_dataset, self.config.d_graph
            )));
        }
        let xd = tape.select_rows(xd, &vec![0; n])?;
        let x = tape.concat_cols(&[xd, xg])?;
        let h = nn::linear(tape, store, "fuse.l1", x)?;
        let h = tape.tanh(h);
        let h = nn::linear(tape, store, "fuse.l2", h)?;
        let h = tape.tanh(h);
        nn::linear(tape, store, "fuse.l3", h)
    }

    pub fn fuse(&self, store: &ParamStore, xd: &DatasetEmbedding, xg: &GraphLatent) -> Result<FusedRep> {
        Ok(self.fuse_all(store, xd, std::slice::from_ref(xg))?.remove(0))
    }

    /// Fuses many graph latents with one dataset embedding in a single batch.
    pub fn fuse_all(
        &self,
        store: &ParamStore,
        xd: &DatasetEmbedding,
        latents: &[GraphLatent],
    ) -> Result<Vec<FusedRep>> {
        if latents.is_empty() {
            return Ok(Vec::new());
        }
        let rows: Vec<Vec<f64>> = latents.iter().map(|z| z.0.clone()).collect();
        let mut tape = Tape::new();
        let xdv = tape.constant(Tensor::row(&xd.0));
        let xgv = tape.constant(Tensor::from_rows(&rows)?);
        let out = self.fuse_on_tape(&mut tape, store, xdv, xgv)?;
        let out = tape.value(out);
        Ok((0..out.rows())
            .map(|r| FusedRep(out.row_slice(r).to_vec()))
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> Fusion {
        Fusion::new(FusionConfig {
            d_dataset: 3,
            d_graph: 4,
            hidden: 5,
            d_fused: 2,
        })
    }

    #[test]
    fn output_width_is_fused_dim() {
        let f = small();
        let mut store = ParamStore::new(1);
        f.init(&mut store).unwrap();
        let out = f
            .fuse(&store, &DatasetEmbedding(vec![0.1; 3]), &GraphLatent(vec![0.2; 4]))
            .unwrap();
        assert_eq!(out.0.len(), 2);
    }

    #[test]
    fn zero_weights_give_zero_output() {
        let f = small();
        let mut store = ParamStore::new(1);
        f.init(&mut store).unwrap();
        let names: Vec<String> = store.names().map(str::to_owned).collect();
        for name in names {
            let (r, c) = store.get(&name).unwrap().shape();
            store.set(&name, Tensor::zeros(r, c)).unwrap();
        }
        let out = f
            .fuse(&store, &DatasetEmbedding(vec![1.0; 3]), &GraphLatent(vec![-2.0; 4]))
            .unwrap();
        assert_eq!(out.0, vec![0.0, 0.0]);
    }

    #[test]
    fn width_mismatch_is_an_error() {
        let f = small();
        let mut store = ParamStore::new(1);
        f.init(&mut store).unwrap();
        assert!(f
            .fuse(&store, &DatasetEmbedding(vec![0.0; 2]), &GraphLatent(vec![0.0; 4]))
            .is_err());
    }

    #[test]
    fn batch_rows_match_single_fusions() {
        let f = small();
        let mut store = ParamStore::new(3);
        f.init(&mut store).unwrap();
        let xd = DatasetEmbedding(vec![0.3, -0.1, 0.5]);
        let zs = vec![GraphLatent(vec![0.1, 0.2, 0.3, 0.4]), GraphLatent(vec![-1.0, 0.0, 1.0, 2.0])];
        let batch = f.fuse_all(&store, &xd, &zs).unwrap();
        for (z, row) in zs.iter().zip(&batch) {
            assert_eq!(&f.fuse(&store, &xd, z).unwrap(), row);
        }
    }
}
