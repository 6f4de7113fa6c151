use crate::backend::{check_query, ConditionalBackend, JointTable};
use crate::dist::CondDistribution;
use crate::error::{Error, Result};
use crate::seq::{TokenId, Vocab};

pub const DEFAULT_MASK_MASS: f64 = 1e-4;

/// Conditionals read off an explicit joint by marginalization: content
/// tokens get the joint's conditional given the observed (non-mask)
/// positions, scaled by `1 - mask_mass`; the mask token gets `mask_mass`.
///
/// This is the loss minimizer of masked training on the joint, so it is
/// compatible and satisfies the conditional independence law exactly. The
/// token at the query position is ignored.
#[derive(Debug, Clone)]
pub struct ExactMarginalModel {
    joint: JointTable,
    vocab: Vocab,
    mask_mass: f64,
    log_mask: f64,
    log_content: f64,
    name: String,
}

impl ExactMarginalModel {
    pub fn new(joint: JointTable) -> Self {
        Self::with_mask_mass(joint, DEFAULT_MASK_MASS).expect("default mask mass is valid")
    }

    pub fn with_mask_mass(joint: JointTable, mask_mass: f64) -> Result<Self> {
        if !(mask_mass > 0.0 && mask_mass < 1.0) {
            return Err(Error::Config(format!("mask mass must lie in (0, 1), got {mask_mass}")));
        }
        let vocab = Vocab::synthetic(joint.alphabet());
        let name = format!("exact(A={}, n={})", joint.alphabet(), joint.len());
        Ok(Self {
            joint,
            vocab,
            mask_mass,
            log_mask: mask_mass.ln(),
            log_content: (-mask_mass).ln_1p(),
            name,
        })
    }

    pub fn joint(&self) -> &JointTable {
        &self.joint
    }

    pub fn mask_mass(&self) -> f64 {
        self.mask_mass
    }

    /// `log(1 - mask_mass)`, the per-query offset on every content token.
    pub fn log_content_mass(&self) -> f64 {
        self.log_content
    }

    fn pattern(&self, context: &[TokenId]) -> Result<Vec<Option<TokenId>>> {
        let mask = self.vocab.mask_id();
        context
            .iter()
            .map(|&t| {
                if t == mask {
                    Ok(None)
                } else if self.vocab.is_special(t) {
                    Err(Error::InvalidQuery(format!("special token {t} in context")))
                } else {
                    Ok(Some(t))
                }
            })
            .collect()
    }

    /// Content-only conditional (the `mask_mass -> 0` limit), normalized
    /// over the alphabet.
    pub fn content_conditional(&self, context: &[TokenId], position: usize) -> Result<Vec<f64>> {
        check_query(&self.vocab, Some(self.joint.len()), context, position)?;
        let pattern = self.pattern(context)?;
        self.joint.marginal_conditional(&pattern, position)
    }
}

impl ConditionalBackend for ExactMarginalModel {
    fn name(&self) -> &str {
        &self.name
    }

    fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    fn expected_len(&self) -> Option<usize> {
        Some(self.joint.len())
    }

    fn conditionals(&self, context: &[TokenId], position: usize) -> Result<CondDistribution> {
        let content = self.content_conditional(context, position)?;
        let mut logp: Vec<f64> = content.into_iter().map(|c| c + self.log_content).collect();
        logp.push(self.log_mask);
        CondDistribution::new(logp)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dist::logsumexp;
    use crate::rng::rng_for;

    #[test]
    fn uniform_joint_spreads_content_mass() {
        let m = ExactMarginalModel::new(JointTable::uniform(3, 4).unwrap());
        let d = m.conditionals(&[0, 3, 3, 1], 1).unwrap();
        let expect = ((1.0 - DEFAULT_MASK_MASS) / 3.0).ln();
        for v in 0..3 {
            assert!((d.get(v) - expect).abs() < 1e-12);
        }
        assert!((d.get(3) - DEFAULT_MASK_MASS.ln()).abs() < 1e-15);
    }

    #[test]
    fn fully_observed_context_matches_row_ratio() {
        let joint = JointTable::random(3, 4, 1.5, &mut rng_for(&[10])).unwrap();
        let m = ExactMarginalModel::new(joint.clone());
        let ctx = [2, 0, 3, 1];
        let d = m.conditionals(&ctx, 2).unwrap();
        // enumerate: p(x_2 = v | x_0=2, x_1=0, x_3=1) = p(2,0,v,1) / sum_u p(2,0,u,1)
        let row: Vec<f64> = (0..3).map(|v| joint.log_prob(&[2, 0, v, 1]).unwrap()).collect();
        let z = logsumexp(&row);
        for v in 0..3u32 {
            let expect = row[v as usize] - z + (1.0 - DEFAULT_MASK_MASS).ln();
            assert!((d.get(v) - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_bad_queries() {
        let m = ExactMarginalModel::new(JointTable::uniform(2, 3).unwrap());
        assert!(matches!(m.conditionals(&[0, 1], 0), Err(Error::InvalidQuery(_))));
        assert!(matches!(m.conditionals(&[0, 1, 0], 3), Err(Error::InvalidQuery(_))));
        assert!(matches!(m.conditionals(&[0, 5, 0], 0), Err(Error::InvalidToken { .. })));
        assert!(ExactMarginalModel::with_mask_mass(JointTable::uniform(2, 3).unwrap(), 0.0).is_err());
    }

    #[test]
    fn query_position_token_is_ignored() {
        let joint = JointTable::random(3, 3, 1.0, &mut rng_for(&[11])).unwrap();
        let m = ExactMarginalModel::new(joint);
        let a = m.conditionals(&[1, 3, 2], 1).unwrap();
        let b = m.conditionals(&[1, 0, 2], 1).unwrap();
        assert_eq!(a, b);
    }
}
