use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{F3Error, Result};

/// Rows of the ablation table that can be run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum VariantId {
    #[serde(rename = "B_majority")]
    Majority,
    #[serde(rename = "D_best_model")]
    BestModel,
    #[serde(rename = "E_mean_pool")]
    MeanPool,
    #[serde(rename = "G_concat")]
    Concat,
    #[serde(rename = "H_no_align")]
    NoAlign,
    #[serde(rename = "J_tied")]
    Tied,
    #[serde(rename = "K_align")]
    Align,
    #[serde(rename = "L_vfl_graph_align")]
    VflGraphAlign,
    #[serde(rename = "M_vfl_scratch")]
    VflScratch,
}

impl VariantId {
    pub const ALL: [VariantId; 9] = [
        VariantId::Majority,
        VariantId::BestModel,
        VariantId::MeanPool,
        VariantId::Concat,
        VariantId::NoAlign,
        VariantId::Tied,
        VariantId::Align,
        VariantId::VflGraphAlign,
        VariantId::VflScratch,
    ];

    pub fn name(self) -> &'static str {
        match self {
            VariantId::Majority => "B_majority",
            VariantId::BestModel => "D_best_model",
            VariantId::MeanPool => "E_mean_pool",
            VariantId::Concat => "G_concat",
            VariantId::NoAlign => "H_no_align",
            VariantId::Tied => "J_tied",
            VariantId::Align => "K_align",
            VariantId::VflGraphAlign => "L_vfl_graph_align",
            VariantId::VflScratch => "M_vfl_scratch",
        }
    }

    /// Whether the variant runs a GCN over a consensus graph.
    pub fn uses_graph(self) -> bool {
        matches!(
            self,
            VariantId::NoAlign | VariantId::Tied | VariantId::Align | VariantId::VflGraphAlign | VariantId::VflScratch
        )
    }

    /// Whether gradients flow back to the clients.
    pub fn is_vfl(self) -> bool {
        matches!(self, VariantId::VflGraphAlign | VariantId::VflScratch)
    }
}

impl fmt::Display for VariantId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GraphMode {
    /// `Â = I`.
    None,
    /// The planted graph, normalized.
    Given,
    /// κ-NN over projected latents.
    Knn,
    /// Learned with the inverse-CDF relaxation.
    Icdf,
    /// Learned with the Gumbel relaxation.
    Gumbel,
}

impl GraphMode {
    pub fn name(self) -> &'static str {
        match self {
            GraphMode::None => "none",
            GraphMode::Given => "given",
            GraphMode::Knn => "knn",
            GraphMode::Icdf => "icdf",
            GraphMode::Gumbel => "gumbel",
        }
    }
}

pub const DEFAULT_KAPPA: usize = 10;

fn default_kappa() -> usize {
    DEFAULT_KAPPA
}

/// One variant to run. `graph` defaults to `icdf` for graph variants and
/// `none` otherwise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VariantConfig {
    pub id: VariantId,
    #[serde(default)]
    pub graph: Option<GraphMode>,
    #[serde(default = "default_kappa")]
    pub kappa: usize,
}

impl VariantConfig {
    pub fn new(id: VariantId) -> Self {
        VariantConfig {
            id,
            graph: None,
            kappa: DEFAULT_KAPPA,
        }
    }

    pub fn with_graph(id: VariantId, graph: GraphMode) -> Self {
        VariantConfig {
            graph: Some(graph),
            ..Self::new(id)
        }
    }

    pub fn graph_mode(&self) -> GraphMode {
        self.graph.unwrap_or(if self.id.uses_graph() {
            GraphMode::Icdf
        } else {
            GraphMode::None
        })
    }

    pub fn validate(&self, clients: usize) -> Result<()> {
        let mode = self.graph_mode();
        if !self.id.uses_graph() && mode != GraphMode::None {
            return Err(F3Error::Config(format!(
                "{} takes no graph, got {}",
                self.id,
                mode.name()
            )));
        }
        if mode == GraphMode::Knn && self.kappa >= clients {
            return Err(F3Error::Config(format!(
                "{}: κ = {} must be below the client count {clients}",
                self.id, self.kappa
            )));
        }
        Ok(())
    }
}
