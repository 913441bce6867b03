//! The review-property recommendation model and its ablations.
//!
//! Each user and item is represented from its training reviews:
//!
//! 1. every review embedding is scaled by the review's score for each
//!    property, giving one channel per property;
//! 2. a shared convolution over the review sequence, followed by ReLU and
//!    max-pooling, turns each channel into an `m`-vector;
//! 3. the channel vectors are averaged with learned positive per-entity
//!    property weights `softplus(phi)`;
//! 4. the result is concatenated with an id embedding and the preference
//!    score is the dot product of the user and item vectors.
//!
//! `NoProp` skips steps 1 and 3 (one unscaled channel), `SingleProperty`
//! keeps a single channel, and `BprMf` is plain biased matrix factorization.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::corpus::{Dataset, SplitDataset};
use crate::encoder::EmbeddingStore;
use crate::error::{Error, Result};
use crate::numerics::{Checkpoint, ParamId, ParamStore, Tape, Tensor, Var};
use crate::props::{PropertyId, PropertyMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Full,
    NoProp,
    SingleProperty(PropertyId),
    BprMf,
}

impl Variant {
    /// Property channels used by the variant, empty when there are none.
    pub fn properties(self) -> Vec<PropertyId> {
        match self {
            Variant::Full => PropertyId::ALL.to_vec(),
            Variant::SingleProperty(p) => vec![p],
            Variant::NoProp | Variant::BprMf => Vec::new(),
        }
    }

    pub fn has_phi(self) -> bool {
        matches!(self, Variant::Full | Variant::SingleProperty(_))
    }

    pub fn uses_reviews(self) -> bool {
        !matches!(self, Variant::BprMf)
    }

    pub fn label(self) -> String {
        match self {
            Variant::Full => "full".into(),
            Variant::NoProp => "no_prop".into(),
            Variant::SingleProperty(p) => format!("single_property:{p}"),
            Variant::BprMf => "bpr_mf".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub variant: Variant,
    pub d_id: usize,
    /// Number of convolution filters `m`.
    pub filters: usize,
    pub window: usize,
    /// Reviews per entity, most recent kept.
    pub max_reviews: usize,
    pub init_std: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            variant: Variant::Full,
            d_id: 32,
            filters: 64,
            window: 3,
            max_reviews: 16,
            init_std: 0.01,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_id == 0 || self.max_reviews == 0 || self.init_std < 0.0 {
            return Err(Error::Config("d_id and max_reviews must be >= 1".into()));
        }
        if self.variant.uses_reviews() && (self.filters == 0 || self.window == 0) {
            return Err(Error::Config("filters and window must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    User,
    Item,
}

/// Everything the review towers read: per-entity review lists plus the
/// embedding store and the property columns the variant uses.
#[derive(Debug, Clone)]
pub struct ReviewInputs<'a> {
    pub embeds: &'a EmbeddingStore,
    /// Columns restricted to the variant's properties; `None` for NoProp.
    pub props: Option<PropertyMatrix>,
    pub user_reviews: Vec<Vec<u32>>,
    pub item_reviews: Vec<Vec<u32>>,
}

impl<'a> ReviewInputs<'a> {
    /// Review sets from training interactions only, truncated to the
    /// `max_reviews` most recent.
    pub fn from_split(
        ds: &Dataset,
        split: &SplitDataset,
        embeds: &'a EmbeddingStore,
        props: &PropertyMatrix,
        config: &ModelConfig,
    ) -> Result<Self> {
        let keep = |ids: &[u32]| ids[ids.len().saturating_sub(config.max_reviews)..].to_vec();
        let user_reviews = split.users.iter().map(|s| keep(&s.train)).collect();
        let item_reviews = split.train_reviews_per_item(ds).iter().map(|ids| keep(ids)).collect();
        Self::new(embeds, props, config.variant, user_reviews, item_reviews)
    }

    pub fn new(
        embeds: &'a EmbeddingStore,
        props: &PropertyMatrix,
        variant: Variant,
        user_reviews: Vec<Vec<u32>>,
        item_reviews: Vec<Vec<u32>>,
    ) -> Result<Self> {
        let selected = match variant {
            Variant::Full | Variant::SingleProperty(_) => Some(props.select(&variant.properties())?),
            Variant::NoProp | Variant::BprMf => None,
        };
        for &id in user_reviews.iter().chain(&item_reviews).flatten() {
            if embeds.get(id).is_none() {
                return Err(Error::Data(format!("no embedding for review {id}")));
            }
            if id as usize >= props.num_reviews() {
                return Err(Error::Data(format!("no property row for review {id}")));
            }
        }
        Ok(ReviewInputs {
            embeds,
            props: selected,
            user_reviews,
            item_reviews,
        })
    }

    pub fn reviews(&self, side: Side, idx: usize) -> &[u32] {
        match side {
            Side::User => &self.user_reviews[idx],
            Side::Item => &self.item_reviews[idx],
        }
    }
}

/// Builds the scaled review sequences of one entity: channel `t` holds
/// `X_r * p_{t,r}` for each review `r`. Without properties there is a single
/// unscaled channel. An empty review list yields one zero row.
pub fn encode_property_channels(
    reviews: &[u32],
    embeds: &EmbeddingStore,
    props: Option<&PropertyMatrix>,
) -> Result<Vec<Tensor>> {
    let d = embeds.dim();
    let k = props.map_or(1, PropertyMatrix::num_properties);
    let n = reviews.len().max(1);
    let mut channels = vec![vec![0.0; n * d]; k];
    for (pos, &id) in reviews.iter().enumerate() {
        let x = embeds
            .get(id)
            .ok_or_else(|| Error::Data(format!("no embedding for review {id}")))?;
        for (t, ch) in channels.iter_mut().enumerate() {
            let scale = match props {
                Some(p) if (id as usize) < p.num_reviews() => p.row(id)[t],
                Some(_) => return Err(Error::Data(format!("no property row for review {id}"))),
                None => 1.0,
            };
            for (dst, &v) in ch[pos * d..(pos + 1) * d].iter_mut().zip(x) {
                *dst = v * scale;
            }
        }
    }
    Ok(channels.into_iter().map(|c| Tensor::new(vec![n, d], c)).collect())
}

/// Convolution over the review axis, ReLU, then max-pooling per filter.
pub fn process_reviews(tape: &mut Tape, channel: Var, filters: Var, bias: Var) -> Var {
    let z = tape.conv1d(channel, filters, bias);
    let z = tape.relu(z);
    tape.maxpool(z)
}

/// `sum_t w_t * O_t / k` with `w = softplus(phi_row)`.
pub fn attend_properties(tape: &mut Tape, channels: &[Var], phi_row: Var) -> Result<Var> {
    let k = channels.len();
    if tape.shape(phi_row) != [k] {
        return Err(Error::Shape {
            op: "attend_properties",
            left: vec![k],
            right: tape.shape(phi_row).to_vec(),
        });
    }
    let weights = tape.softplus(phi_row);
    let stacked = tape.stack(channels);
    let mixed = tape.vecmat(weights, stacked);
    Ok(tape.scale(mixed, 1.0 / k as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Layout {
    Rprm {
        user_id: ParamId,
        item_id: ParamId,
        filters: ParamId,
        bias: ParamId,
        phi: Option<(ParamId, ParamId)>,
    },
    BprMf {
        user_factors: ParamId,
        item_factors: ParamId,
        user_bias: ParamId,
        item_bias: ParamId,
        global_bias: ParamId,
    },
}

/// Stored value whose softplus is 1, so attention starts uniform.
pub fn neutral_phi() -> f64 {
    (std::f64::consts::E - 1.0).ln()
}

#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub num_users: usize,
    pub num_items: usize,
    pub embed_dim: usize,
    pub params: ParamStore,
    layout: Layout,
}

fn gaussian<R: Rng>(rows: usize, cols: usize, std: f64, rng: &mut R) -> Tensor {
    let normal = Normal::new(0.0, std).expect("std is non-negative");
    let data = (0..rows * cols).map(|_| normal.sample(rng)).collect();
    Tensor::new(vec![rows, cols], data)
}

impl Model {
    pub fn new<R: Rng>(
        config: ModelConfig,
        num_users: usize,
        num_items: usize,
        embed_dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::new();
        let std = config.init_std;
        let layout = match config.variant {
            Variant::BprMf => Layout::BprMf {
                user_factors: params.add("user_factors", gaussian(num_users, config.d_id, std, rng)),
                item_factors: params.add("item_factors", gaussian(num_items, config.d_id, std, rng)),
                user_bias: params.add("user_bias", Tensor::zeros(vec![num_users, 1])),
                item_bias: params.add("item_bias", Tensor::zeros(vec![num_items, 1])),
                global_bias: params.add("global_bias", Tensor::zeros(vec![1])),
            },
            variant => {
                let user_id = params.add("user_id_embed", gaussian(num_users, config.d_id, std, rng));
                let item_id = params.add("item_id_embed", gaussian(num_items, config.d_id, std, rng));
                let k_filters = gaussian(config.filters, config.window * embed_dim, std, rng);
                let filters = params.add(
                    "conv_filters",
                    Tensor::new(vec![config.filters, config.window, embed_dim], k_filters.data),
                );
                let bias = params.add("conv_bias", Tensor::zeros(vec![config.filters]));
                let phi = variant.has_phi().then(|| {
                    let k = variant.properties().len();
                    let init = neutral_phi();
                    (
                        params.add("phi_user", Tensor::new(vec![num_users, k], vec![init; num_users * k])),
                        params.add("phi_item", Tensor::new(vec![num_items, k], vec![init; num_items * k])),
                    )
                });
                Layout::Rprm { user_id, item_id, filters, bias, phi }
            }
        };
        Ok(Model {
            config,
            num_users,
            num_items,
            embed_dim,
            params,
            layout,
        })
    }

    pub fn variant(&self) -> Variant {
        self.config.variant
    }

    /// Parameter holding the stored (pre-softplus) property weights.
    pub fn phi_param(&self, side: Side) -> Option<ParamId> {
        match self.layout {
            Layout::Rprm { phi: Some((u, i)), .. } => Some(match side {
                Side::User => u,
                Side::Item => i,
            }),
            _ => None,
        }
    }

    /// Pushes one entity's stored property weight row onto the tape.
    pub fn phi_row(&self, tape: &mut Tape, params: &ParamStore, side: Side, idx: usize) -> Result<Var> {
        let id = self.phi_param(side).ok_or_else(|| {
            Error::Config(format!("variant {} has no property weights", self.variant().label()))
        })?;
        Ok(tape.param_row(params, id, idx))
    }

    /// The entity's full latent vector; preference scores are dot products
    /// of a user vector and an item vector.
    pub fn entity_vector(
        &self,
        tape: &mut Tape,
        params: &ParamStore,
        side: Side,
        idx: usize,
        inputs: Option<&ReviewInputs>,
    ) -> Result<Var> {
        match self.layout {
            Layout::BprMf { user_factors, item_factors, user_bias, item_bias, global_bias } => {
                // [p_u, b_u, 1, g] . [q_i, 1, b_i, 1] = p.q + b_u + b_i + g
                let one = tape.constant(Tensor::scalar(1.0));
                Ok(match side {
                    Side::User => {
                        let f = tape.param_row(params, user_factors, idx);
                        let b = tape.param_row(params, user_bias, idx);
                        let g = tape.param(params, global_bias);
                        tape.concat(&[f, b, one, g])
                    }
                    Side::Item => {
                        let f = tape.param_row(params, item_factors, idx);
                        let b = tape.param_row(params, item_bias, idx);
                        tape.concat(&[f, one, b, one])
                    }
                })
            }
            Layout::Rprm { user_id, item_id, filters, bias, phi } => {
                let inputs = inputs.ok_or_else(|| Error::Config("review inputs required".into()))?;
                let channels =
                    encode_property_channels(inputs.reviews(side, idx), inputs.embeds, inputs.props.as_ref())?;
                if channels[0].shape[1] != self.embed_dim {
                    return Err(Error::Shape {
                        op: "entity_vector",
                        left: vec![self.embed_dim],
                        right: vec![channels[0].shape[1]],
                    });
                }
                let k_var = tape.param(params, filters);
                let b_var = tape.param(params, bias);
                let outs: Vec<Var> = channels
                    .into_iter()
                    .map(|c| {
                        let c = tape.constant(c);
                        process_reviews(tape, c, k_var, b_var)
                    })
                    .collect();
                let reviews_part = match phi {
                    Some(_) => {
                        let row = self.phi_row(tape, params, side, idx)?;
                        attend_properties(tape, &outs, row)?
                    }
                    None => outs[0],
                };
                let id_param = match side {
                    Side::User => user_id,
                    Side::Item => item_id,
                };
                let id_vec = tape.param_row(params, id_param, idx);
                Ok(tape.concat(&[reviews_part, id_vec]))
            }
        }
    }

    pub fn score(&self, tape: &mut Tape, user: Var, item: Var) -> Result<Var> {
        if tape.shape(user) != tape.shape(item) {
            return Err(Error::Shape {
                op: "predict",
                left: tape.shape(user).to_vec(),
                right: tape.shape(item).to_vec(),
            });
        }
        Ok(tape.dot(user, item))
    }

    pub fn predict(&self, user: usize, item: usize, inputs: Option<&ReviewInputs>) -> Result<f64> {
        let mut tape = Tape::new();
        let u = self.entity_vector(&mut tape, &self.params, Side::User, user, inputs)?;
        let i = self.entity_vector(&mut tape, &self.params, Side::Item, item, inputs)?;
        let s = self.score(&mut tape, u, i)?;
        Ok(tape.scalar(s))
    }

    /// Forward-only entity vectors for every user and item.
    pub fn all_entity_vectors(&self, inputs: Option<&ReviewInputs>) -> Result<EntityVectors> {
        use rayon::prelude::*;
        let side_vectors = |side: Side, n: usize| -> Result<Vec<Vec<f64>>> {
            (0..n)
                .into_par_iter()
                .map(|idx| {
                    let mut tape = Tape::new();
                    let v = self.entity_vector(&mut tape, &self.params, side, idx, inputs)?;
                    Ok(tape.value(v).to_vec())
                })
                .collect()
        };
        Ok(EntityVectors {
            users: side_vectors(Side::User, self.num_users)?,
            items: side_vectors(Side::Item, self.num_items)?,
        })
    }

    /// Effective property weights `softplus(phi)` of one entity.
    pub fn phi_weights(&self, side: Side, idx: usize) -> Option<Vec<f64>> {
        let id = self.phi_param(side)?;
        Some(self.params.row(id, idx).iter().map(|&x| crate::numerics::softplus(x)).collect())
    }

    pub fn metadata(&self) -> serde_json::Value {
        serde_json::json!({
            "variant": self.variant().label(),
            "model_config": self.config,
            "num_users": self.num_users,
            "num_items": self.num_items,
            "embed_dim": self.embed_dim,
        })
    }

    /// Checkpoint with model metadata merged into `extra`.
    pub fn to_checkpoint(&self, extra: serde_json::Value) -> Checkpoint {
        let mut meta = self.metadata();
        if let (Some(m), serde_json::Value::Object(e)) = (meta.as_object_mut(), extra) {
            m.extend(e);
        }
        Checkpoint {
            metadata: meta,
            params: self.params.clone(),
        }
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let meta = &ckpt.metadata;
        let field = |name: &str| {
            meta.get(name)
                .ok_or_else(|| Error::Data(format!("checkpoint metadata lacks `{name}`")))
        };
        let config: ModelConfig = serde_json::from_value(field("model_config")?.clone())?;
        let count = |name: &str| -> Result<usize> {
            field(name)?
                .as_u64()
                .map(|v| v as usize)
                .ok_or_else(|| Error::Data(format!("checkpoint `{name}` is not a count")))
        };
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
        let mut model = Model::new(config, count("num_users")?, count("num_items")?, count("embed_dim")?, &mut rng)?;
        for p in model.params.clone().iter() {
            let id = ckpt
                .params
                .id(&p.name)
                .ok_or_else(|| Error::Data(format!("checkpoint lacks tensor `{}`", p.name)))?;
            let stored = &ckpt.params.get(id).value;
            if stored.shape != p.value.shape {
                return Err(Error::Shape {
                    op: "checkpoint",
                    left: p.value.shape.clone(),
                    right: stored.shape.clone(),
                });
            }
            let own = model.params.id(&p.name).expect("same layout");
            model.params.get_mut(own).value = stored.clone();
        }
        Ok(model)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EntityVectors {
    pub users: Vec<Vec<f64>>,
    pub items: Vec<Vec<f64>>,
}

impl EntityVectors {
    pub fn score(&self, user: usize, item: usize) -> f64 {
        self.users[user].iter().zip(&self.items[item]).map(|(a, b)| a * b).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::EmbeddingSource;
    use crate::numerics::softplus;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn store(rows: &[Vec<f64>]) -> EmbeddingStore {
        let mut s = EmbeddingStore::new(rows[0].len(), EmbeddingSource::Memory);
        for (i, r) in rows.iter().enumerate() {
            s.insert(i as u32, r).unwrap();
        }
        s
    }

    #[test]
    fn neutral_phi_has_unit_weight() {
        assert!((softplus(neutral_phi()) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn channels_scale_reviews() {
        let embeds = store(&[vec![2.0, 4.0], vec![8.0, -4.0]]);
        let ones = PropertyMatrix::new(vec![PropertyId::Age], vec![1.0, 1.0]).unwrap();
        let ch = encode_property_channels(&[0, 1], &embeds, Some(&ones)).unwrap();
        assert_eq!(ch[0].data, vec![2.0, 4.0, 8.0, -4.0]);

        let mixed = PropertyMatrix::new(vec![PropertyId::Age, PropertyId::Length], vec![0.5, 0.0, 0.25, 1.0]).unwrap();
        let ch = encode_property_channels(&[0, 1], &embeds, Some(&mixed)).unwrap();
        assert_eq!(ch[0].data, vec![1.0, 2.0, 2.0, -1.0]);
        assert_eq!(ch[1].data, vec![0.0, 0.0, 8.0, -4.0]);

        let empty = encode_property_channels(&[], &embeds, None).unwrap();
        assert_eq!(empty[0].shape, vec![1, 2]);
        assert!(empty[0].data.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn process_single_review_with_delta_filter() {
        // Filter j picks coordinate j at the centre tap.
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::new(vec![1, 3], vec![0.7, -0.2, 1.5]));
        let mut k = vec![0.0; 3 * 3 * 3];
        for j in 0..3 {
            k[(j * 3 + 1) * 3 + j] = 1.0;
        }
        let k = tape.constant(Tensor::new(vec![3, 3, 3], k));
        let b = tape.constant(Tensor::zeros(vec![3]));
        let o = process_reviews(&mut tape, x, k, b);
        assert_eq!(tape.value(o), &[0.7, 0.0, 1.5]);

        let zero = tape.constant(Tensor::zeros(vec![4, 3]));
        let o = process_reviews(&mut tape, zero, k, b);
        assert_eq!(tape.value(o), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn window_one_is_permutation_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let rows: Vec<Vec<f64>> = (0..3).map(|_| (0..4).map(|_| normal.sample(&mut rng)).collect()).collect();
        let k = gaussian(5, 4, 1.0, &mut rng).data;
        let run = |order: &[usize], window: usize, k: &[f64]| {
            let mut tape = Tape::new();
            let data: Vec<f64> = order.iter().flat_map(|&i| rows[i].clone()).collect();
            let x = tape.constant(Tensor::new(vec![3, 4], data));
            let kv = tape.constant(Tensor::new(vec![5, window, 4], k.to_vec()));
            let b = tape.constant(Tensor::vector(vec![0.1; 5]));
            let o = process_reviews(&mut tape, x, kv, b);
            tape.value(o).to_vec()
        };
        let perms = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
        let base = run(&perms[0], 1, &k);
        for p in &perms[1..] {
            assert_eq!(run(p, 1, &k), base);
        }
        // Window 3 mixes neighbours, so order can matter.
        let k3 = gaussian(5, 12, 1.0, &mut rng).data;
        let outs: Vec<Vec<f64>> = perms.iter().map(|p| run(p, 3, &k3)).collect();
        assert!(outs.iter().any(|o| o != &outs[0]));
    }

    #[test]
    fn attention_arithmetic() {
        let mut tape = Tape::new();
        let v = tape.constant(Tensor::vector(vec![1.0, -2.0, 3.0]));
        let chans = vec![v; 6];
        let row = tape.constant(Tensor::vector(vec![neutral_phi(); 6]));
        let out = attend_properties(&mut tape, &chans, row).unwrap();
        for (a, b) in tape.value(out).iter().zip([1.0, -2.0, 3.0]) {
            assert!((a - b).abs() < 1e-12);
        }

        // softplus(-40) is ~4e-18, effectively zero.
        let mut stored = vec![-40.0; 6];
        stored[0] = (2f64.exp() - 1.0).ln();
        let distinct: Vec<Var> = (0..6)
            .map(|t| tape.constant(Tensor::vector(vec![t as f64 + 1.0; 3])))
            .collect();
        let row = tape.constant(Tensor::vector(stored));
        let out = attend_properties(&mut tape, &distinct, row).unwrap();
        for a in tape.value(out) {
            assert!((a - 1.0 / 3.0).abs() < 1e-12);
        }

        let bad = tape.constant(Tensor::vector(vec![0.0; 5]));
        assert!(attend_properties(&mut tape, &distinct, bad).is_err());
    }

    #[test]
    fn attention_is_linear_in_weights() {
        let mut tape = Tape::new();
        let chans: Vec<Var> = (0..3)
            .map(|t| tape.constant(Tensor::vector(vec![t as f64, 1.0 - t as f64])))
            .collect();
        let w = [0.3, 1.7, 0.9];
        let inv = |y: f64| (y.exp() - 1.0).ln();
        let row = tape.constant(Tensor::vector(w.iter().map(|&x| inv(x)).collect()));
        let row2 = tape.constant(Tensor::vector(w.iter().map(|&x| inv(2.0 * x)).collect()));
        let a = attend_properties(&mut tape, &chans, row).unwrap();
        let b = attend_properties(&mut tape, &chans, row2).unwrap();
        for (x, y) in tape.value(a).iter().zip(tape.value(b)) {
            assert!((2.0 * x - y).abs() < 1e-12);
        }
    }

    fn toy_model(variant: Variant, seed: u64) -> (Model, EmbeddingStore, PropertyMatrix) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let rows: Vec<Vec<f64>> = (0..4).map(|_| (0..8).map(|_| normal.sample(&mut rng)).collect()).collect();
        let embeds = store(&rows);
        let scores: Vec<f64> = (0..24).map(|_| rng.random::<f64>()).collect();
        let props = PropertyMatrix::new(PropertyId::ALL.to_vec(), scores).unwrap();
        let config = ModelConfig {
            variant,
            d_id: 4,
            filters: 5,
            window: 3,
            max_reviews: 16,
            init_std: 0.5,
        };
        let model = Model::new(config, 2, 3, 8, &mut rng).unwrap();
        (model, embeds, props)
    }

    fn toy_inputs<'a>(embeds: &'a EmbeddingStore, props: &PropertyMatrix, variant: Variant) -> ReviewInputs<'a> {
        ReviewInputs::new(
            embeds,
            props,
            variant,
            vec![vec![0, 1], vec![2, 3]],
            vec![vec![0, 2], vec![1], vec![3]],
        )
        .unwrap()
    }

    #[test]
    fn predict_is_dot_of_concatenations() {
        let (model, embeds, props) = toy_model(Variant::Full, 1);
        let inputs = toy_inputs(&embeds, &props, Variant::Full);
        let vecs = model.all_entity_vectors(Some(&inputs)).unwrap();
        for u in 0..2 {
            for i in 0..3 {
                let p = model.predict(u, i, Some(&inputs)).unwrap();
                assert!((p - vecs.score(u, i)).abs() < 1e-12);
            }
        }
        assert_eq!(vecs.users[0].len(), 5 + 4);
    }

    #[test]
    fn score_examples() {
        let (model, ..) = toy_model(Variant::BprMf, 0);
        let mut tape = Tape::new();
        let v = tape.constant(Tensor::vector(vec![1.0, 2.0, -2.0]));
        let s = model.score(&mut tape, v, v).unwrap();
        assert_eq!(tape.scalar(s), 9.0);
        let a = tape.constant(Tensor::vector(vec![1.0, 0.0, 0.0]));
        let b = tape.constant(Tensor::vector(vec![0.0, 3.0, 0.0]));
        let s = model.score(&mut tape, a, b).unwrap();
        assert_eq!(tape.scalar(s), 0.0);
        let z = tape.constant(Tensor::zeros(vec![3]));
        let s = model.score(&mut tape, v, z).unwrap();
        assert_eq!(tape.scalar(s), 0.0);
        let short = tape.constant(Tensor::zeros(vec![2]));
        assert!(model.score(&mut tape, v, short).is_err());
    }

    #[test]
    fn bprmf_examples() {
        let (mut model, ..) = toy_model(Variant::BprMf, 0);
        for p in 0..model.params.len() {
            model.params.get_mut(p).value.data.iter_mut().for_each(|x| *x = 0.0);
        }
        assert_eq!(model.predict(0, 0, None).unwrap(), 0.0);
        let uf = model.params.id("user_factors").unwrap();
        let itf = model.params.id("item_factors").unwrap();
        model.params.get_mut(uf).value.data[0] = 1.0;
        model.params.get_mut(itf).value.data[0] = 1.0;
        let ub = model.params.id("user_bias").unwrap();
        let ib = model.params.id("item_bias").unwrap();
        let gb = model.params.id("global_bias").unwrap();
        model.params.get_mut(ub).value.data[0] = 0.25;
        model.params.get_mut(ib).value.data[0] = -0.5;
        model.params.get_mut(gb).value.data[0] = 2.0;
        assert!((model.predict(0, 0, None).unwrap() - (1.0 + 0.25 - 0.5 + 2.0)).abs() < 1e-15);
    }

    fn rotate(data: &mut [f64], rows: usize, d: usize, q: &[f64]) {
        for r in 0..rows {
            let v = data[r * d..(r + 1) * d].to_vec();
            for i in 0..d {
                data[r * d + i] = (0..d).map(|j| q[i * d + j] * v[j]).sum();
            }
        }
    }

    #[test]
    fn bprmf_invariant_under_rotation() {
        let (mut model, ..) = toy_model(Variant::BprMf, 9);
        let d = model.config.d_id;
        // Random orthogonal matrix by Gram-Schmidt.
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let mut q: Vec<f64> = (0..d * d).map(|_| normal.sample(&mut rng)).collect();
        for i in 0..d {
            for j in 0..i {
                let dotp: f64 = (0..d).map(|c| q[i * d + c] * q[j * d + c]).sum();
                for c in 0..d {
                    q[i * d + c] -= dotp * q[j * d + c];
                }
            }
            let norm = (0..d).map(|c| q[i * d + c].powi(2)).sum::<f64>().sqrt();
            (0..d).for_each(|c| q[i * d + c] /= norm);
        }
        let before: Vec<f64> = (0..2).flat_map(|u| (0..3).map(move |i| (u, i))).map(|(u, i)| model.predict(u, i, None).unwrap()).collect();
        for name in ["user_factors", "item_factors"] {
            let id = model.params.id(name).unwrap();
            let rows = model.params.get(id).value.shape[0];
            rotate(&mut model.params.get_mut(id).value.data, rows, d, &q);
        }
        let after: Vec<f64> = (0..2).flat_map(|u| (0..3).map(move |i| (u, i))).map(|(u, i)| model.predict(u, i, None).unwrap()).collect();
        for (a, b) in before.iter().zip(&after) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn noprop_matches_full_with_unit_scores_and_neutral_phi() {
        let (full, embeds, _) = toy_model(Variant::Full, 5);
        let ones = PropertyMatrix::new(PropertyId::ALL.to_vec(), vec![1.0; 24]).unwrap();
        let mut noprop = Model::new(
            ModelConfig { variant: Variant::NoProp, ..full.config.clone() },
            2,
            3,
            8,
            &mut ChaCha8Rng::seed_from_u64(0),
        )
        .unwrap();
        for p in noprop.params.clone().iter() {
            let src = full.params.id(&p.name).unwrap();
            let dst = noprop.params.id(&p.name).unwrap();
            noprop.params.get_mut(dst).value = full.params.get(src).value.clone();
        }
        let fi = toy_inputs(&embeds, &ones, Variant::Full);
        let ni = toy_inputs(&embeds, &ones, Variant::NoProp);
        for u in 0..2 {
            for i in 0..3 {
                let a = full.predict(u, i, Some(&fi)).unwrap();
                let b = noprop.predict(u, i, Some(&ni)).unwrap();
                assert!((a - b).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn single_property_ignores_other_columns() {
        let variant = Variant::SingleProperty(PropertyId::Rating);
        let (model, embeds, props) = toy_model(variant, 2);
        let mut scrambled = Vec::new();
        for r in 0..4 {
            let row = props.row(r);
            for (t, &s) in row.iter().enumerate() {
                scrambled.push(if t == PropertyId::Rating.ordinal() { s } else { 1.0 - s });
            }
        }
        let other = PropertyMatrix::new(PropertyId::ALL.to_vec(), scrambled).unwrap();
        let a = toy_inputs(&embeds, &props, variant);
        let b = toy_inputs(&embeds, &other, variant);
        assert_eq!(
            model.all_entity_vectors(Some(&a)).unwrap(),
            model.all_entity_vectors(Some(&b)).unwrap()
        );
    }

    #[test]
    fn checkpoint_round_trip_restores_model() {
        let (model, embeds, props) = toy_model(Variant::Full, 4);
        let inputs = toy_inputs(&embeds, &props, Variant::Full);
        let ckpt = model.to_checkpoint(serde_json::json!({"dataset_hash": "abc"}));
        assert_eq!(ckpt.metadata["variant"], "full");
        assert_eq!(ckpt.metadata["dataset_hash"], "abc");
        let restored = Model::from_checkpoint(&ckpt).unwrap();
        assert_eq!(restored.predict(1, 2, Some(&inputs)).unwrap(), model.predict(1, 2, Some(&inputs)).unwrap());
    }
}
