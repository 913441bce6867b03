use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Model, ReviewInputs, Side};
use crate::numerics::{softplus, ParamStore, Tape, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Similarity {
    Cosine,
    /// `1 / (1 + KL(p || q))`, KL in nats.
    InverseKl,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PropLossKind {
    #[default]
    None,
    /// User against the negative item.
    Uu,
    /// Positive item against the negative item.
    Ui,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub prop: PropLossKind,
    pub similarity: Similarity,
    pub alpha: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            prop: PropLossKind::None,
            similarity: Similarity::InverseKl,
            alpha: 1.0,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Config(format!("alpha must lie in [0, 1], got {}", self.alpha)));
        }
        Ok(())
    }

    /// Weight on the BPR term; 1 when no property loss is configured.
    pub fn bpr_weight(&self) -> f64 {
        match self.prop {
            PropLossKind::None => 1.0,
            _ => self.alpha,
        }
    }
}

/// Softplus of the stored weights, normalized to sum to 1.
pub fn phi_distribution(stored: &[f64]) -> Vec<f64> {
    let w: Vec<f64> = stored.iter().map(|&x| softplus(x)).collect();
    let total: f64 = w.iter().sum();
    w.into_iter().map(|x| x / total).collect()
}

pub fn kl_divergence(p: &[f64], q: &[f64]) -> f64 {
    p.iter().zip(q).map(|(&a, &b)| if a > 0.0 { a * (a / b).ln() } else { 0.0 }).sum()
}

pub fn sim(p: &[f64], q: &[f64], kind: Similarity) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::Shape { op: "sim", left: vec![p.len()], right: vec![q.len()] });
    }
    Ok(match kind {
        Similarity::Cosine => {
            let dot: f64 = p.iter().zip(q).map(|(a, b)| a * b).sum();
            let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
            dot / (norm(p) * norm(q))
        }
        Similarity::InverseKl => 1.0 / (1.0 + kl_divergence(p, q)),
    })
}

/// `-ln sigmoid(pos - neg)`, stable for large differences.
pub fn bpr_loss(score_pos: f64, score_neg: f64) -> f64 {
    softplus(score_neg - score_pos)
}

pub fn proploss_uu(phi_u: &[f64], phi_pos: &[f64], phi_neg: &[f64], kind: Similarity) -> Result<f64> {
    Ok(sim(phi_u, phi_neg, kind)? - sim(phi_u, phi_pos, kind)?)
}

pub fn proploss_ui(phi_u: &[f64], phi_pos: &[f64], phi_neg: &[f64], kind: Similarity) -> Result<f64> {
    Ok(sim(phi_pos, phi_neg, kind)? - sim(phi_u, phi_pos, kind)?)
}

pub fn combined_loss(bpr: f64, prop: f64, cfg: &LossConfig) -> f64 {
    match cfg.prop {
        PropLossKind::None => bpr,
        _ => cfg.alpha * bpr + (1.0 - cfg.alpha) * prop,
    }
}

/// Distribution node for a stored weight row.
pub fn tape_phi_distribution(tape: &mut Tape, stored: Var) -> Var {
    let w = tape.softplus(stored);
    tape.sum_normalize(w)
}

pub fn tape_sim(tape: &mut Tape, p: Var, q: Var, kind: Similarity) -> Var {
    match kind {
        Similarity::Cosine => {
            let pq = tape.dot(p, q);
            let pp = tape.dot(p, p);
            let qq = tape.dot(q, q);
            let np = tape.sqrt(pp);
            let nq = tape.sqrt(qq);
            let denom = tape.mul(np, nq);
            let inv = tape.recip(denom);
            tape.mul(pq, inv)
        }
        Similarity::InverseKl => {
            let lp = tape.log(p);
            let lq = tape.log(q);
            let diff = tape.sub(lp, lq);
            let kl = tape.dot(p, diff);
            let one_plus = tape.offset(kl, 1.0);
            tape.recip(one_plus)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Triplet {
    pub user: u32,
    pub pos: u32,
    pub neg: u32,
}

/// Entity vectors pushed once per tape and reused across triplets.
#[derive(Debug, Default)]
pub struct EntityCache {
    vectors: std::collections::HashMap<(bool, usize), Var>,
    phis: std::collections::HashMap<(bool, usize), Var>,
}

impl EntityCache {
    fn side_key(side: Side, idx: usize) -> (bool, usize) {
        (side == Side::User, idx)
    }

    pub fn vector(
        &mut self,
        tape: &mut Tape,
        model: &Model,
        params: &ParamStore,
        side: Side,
        idx: usize,
        inputs: Option<&ReviewInputs>,
    ) -> Result<Var> {
        let key = Self::side_key(side, idx);
        if let Some(&v) = self.vectors.get(&key) {
            return Ok(v);
        }
        let v = model.entity_vector(tape, params, side, idx, inputs)?;
        self.vectors.insert(key, v);
        Ok(v)
    }

    pub fn phi(&mut self, tape: &mut Tape, model: &Model, params: &ParamStore, side: Side, idx: usize) -> Result<Var> {
        let key = Self::side_key(side, idx);
        if let Some(&v) = self.phis.get(&key) {
            return Ok(v);
        }
        let row = model.phi_row(tape, params, side, idx)?;
        let v = tape_phi_distribution(tape, row);
        self.phis.insert(key, v);
        Ok(v)
    }
}

/// Combined loss of one triplet on the tape.
pub fn triplet_loss(
    tape: &mut Tape,
    cache: &mut EntityCache,
    model: &Model,
    params: &ParamStore,
    inputs: Option<&ReviewInputs>,
    t: Triplet,
    cfg: &LossConfig,
) -> Result<Var> {
    let (u, pos, neg) = (t.user as usize, t.pos as usize, t.neg as usize);
    let vu = cache.vector(tape, model, params, Side::User, u, inputs)?;
    let vp = cache.vector(tape, model, params, Side::Item, pos, inputs)?;
    let vn = cache.vector(tape, model, params, Side::Item, neg, inputs)?;
    let sp = model.score(tape, vu, vp)?;
    let sn = model.score(tape, vu, vn)?;
    let diff = tape.sub(sn, sp);
    let bpr = tape.softplus(diff);
    if cfg.prop == PropLossKind::None {
        return Ok(bpr);
    }
    let pu = cache.phi(tape, model, params, Side::User, u)?;
    let pp = cache.phi(tape, model, params, Side::Item, pos)?;
    let pn = cache.phi(tape, model, params, Side::Item, neg)?;
    let agree = tape_sim(tape, pu, pp, cfg.similarity);
    let other = match cfg.prop {
        PropLossKind::Uu => tape_sim(tape, pu, pn, cfg.similarity),
        _ => tape_sim(tape, pp, pn, cfg.similarity),
    };
    let prop = tape.sub(other, agree);
    let a = tape.scale(bpr, cfg.alpha);
    let b = tape.scale(prop, 1.0 - cfg.alpha);
    Ok(tape.add(a, b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Tensor;

    fn inv_softplus(y: f64) -> f64 {
        (y.exp() - 1.0).ln()
    }

    #[test]
    fn distribution_examples() {
        let d = phi_distribution(&[inv_softplus(1.0); 6]);
        assert!(d.iter().all(|x| (x - 1.0 / 6.0).abs() < 1e-15));
        let d = phi_distribution(&[inv_softplus(3.0), inv_softplus(1.0)]);
        assert!((d[0] - 0.75).abs() < 1e-12 && (d[1] - 0.25).abs() < 1e-12);
    }

    #[test]
    fn similarity_examples() {
        let p = [0.75, 0.25];
        let q = [0.5, 0.5];
        assert!((sim(&p, &p, Similarity::Cosine).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(sim(&p, &p, Similarity::InverseKl).unwrap(), 1.0);
        let kl = 0.75 * 1.5f64.ln() + 0.25 * 0.5f64.ln();
        assert!((sim(&p, &q, Similarity::InverseKl).unwrap() - 1.0 / (1.0 + kl)).abs() < 1e-15);
        assert!((sim(&p, &q, Similarity::InverseKl).unwrap() - 0.88432).abs() < 1e-5);
        assert_eq!(sim(&p, &q, Similarity::Cosine).unwrap(), sim(&q, &p, Similarity::Cosine).unwrap());
        assert_ne!(sim(&p, &q, Similarity::InverseKl).unwrap(), sim(&q, &p, Similarity::InverseKl).unwrap());
        assert!(sim(&p, &[1.0], Similarity::Cosine).is_err());
    }

    #[test]
    fn bpr_examples() {
        assert!((bpr_loss(0.4, 0.4) - 2f64.ln()).abs() < 1e-15);
        assert!((bpr_loss(0.0, 3f64.ln()) - 4f64.ln()).abs() < 1e-12);
        assert!(bpr_loss(1e6, 0.0) < 1e-300);
        assert!((bpr_loss(0.0, 1e6) - 1e6).abs() < 1e-6);
    }

    #[test]
    fn proploss_examples() {
        let uniform = [0.5, 0.5];
        let skew = [0.75, 0.25];
        for kind in [Similarity::Cosine, Similarity::InverseKl] {
            assert_eq!(proploss_uu(&skew, &skew, &skew, kind).unwrap(), 0.0);
            assert_eq!(proploss_ui(&skew, &skew, &skew, kind).unwrap(), 0.0);
            assert_eq!(proploss_uu(&uniform, &skew, &skew, kind).unwrap(), 0.0);
            let far = [0.999, 0.001];
            let near = [0.001, 0.999];
            assert!(proploss_uu(&near, &near, &far, kind).unwrap() < 0.0);
            assert!(proploss_ui(&near, &near, &far, kind).unwrap() < 0.0);
        }
        let kl = 0.75 * 1.5f64.ln() + 0.25 * 0.5f64.ln();
        let v = proploss_ui(&skew, &skew, &uniform, Similarity::InverseKl).unwrap();
        assert!((v - (1.0 / (1.0 + kl) - 1.0)).abs() < 1e-15);
    }

    #[test]
    fn combined_examples() {
        let bpr = bpr_loss(0.0, 0.0);
        let cfg = |alpha| LossConfig { prop: PropLossKind::Ui, similarity: Similarity::Cosine, alpha };
        assert_eq!(combined_loss(bpr, 0.3, &cfg(1.0)), bpr);
        assert_eq!(combined_loss(bpr, 0.3, &cfg(0.0)), 0.3);
        assert!((combined_loss(bpr, 0.0, &cfg(0.5)) - 0.346574).abs() < 1e-6);
        assert!(cfg(1.5).validate().is_err());
    }

    #[test]
    fn tape_similarity_matches_scalar() {
        let p = vec![0.2, 0.3, 0.5];
        let q = vec![0.6, 0.1, 0.3];
        for kind in [Similarity::Cosine, Similarity::InverseKl] {
            let mut tape = Tape::new();
            let a = tape.constant(Tensor::vector(p.clone()));
            let b = tape.constant(Tensor::vector(q.clone()));
            let s = tape_sim(&mut tape, a, b, kind);
            assert!((tape.scalar(s) - sim(&p, &q, kind).unwrap()).abs() < 1e-15);
        }
    }
}
