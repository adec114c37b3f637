//! Exact entropy and mutual-information computations on finite discrete
//! joints, used to property-test the identities behind the entropy penalty,
//! plus the closed-form Gaussian entropy upper bound.
//!
//! All entropies are in nats. The convention 0·log 0 = 0 applies throughout.

use crate::error::{CfError, Result};

/// A dense joint distribution over named discrete variables.
#[derive(Debug, Clone)]
pub struct DiscreteJoint {
    axes: Vec<String>,
    cardinalities: Vec<usize>,
    probs: Vec<f64>,
}

impl DiscreteJoint {
    pub fn new(axes: Vec<String>, cardinalities: Vec<usize>, probs: Vec<f64>) -> Result<Self> {
        if axes.len() != cardinalities.len() {
            return Err(CfError::Input(
                "axes and cardinalities lengths differ".into(),
            ));
        }
        if cardinalities.iter().any(|&c| c == 0) {
            return Err(CfError::Input("cardinalities must be positive".into()));
        }
        let expected: usize = cardinalities.iter().product();
        if probs.len() != expected {
            return Err(CfError::Input(format!(
                "table length {} does not match product of cardinalities {}",
                probs.len(),
                expected
            )));
        }
        if probs.iter().any(|&p| p < 0.0 || !p.is_finite()) {
            return Err(CfError::Input("probabilities must be finite and >= 0".into()));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(CfError::Input(format!("entries sum to {total}, not 1")));
        }
        Ok(Self {
            axes,
            cardinalities,
            probs,
        })
    }

    /// Normalizes an arbitrary non-negative table. Handy for randomized tests.
    pub fn from_weights(axes: Vec<String>, cards: Vec<usize>, weights: Vec<f64>) -> Result<Self> {
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(CfError::Input("weights must have a positive sum".into()));
        }
        let probs = weights.iter().map(|w| w / total).collect();
        Self::new(axes, cards, probs)
    }

    pub fn axes(&self) -> &[String] {
        &self.axes
    }

    fn axis_indices(&self, vars: &[&str]) -> Result<Vec<usize>> {
        if vars.is_empty() {
            return Err(CfError::Input("variable subset must be non-empty".into()));
        }
        vars.iter()
            .map(|v| {
                self.axes
                    .iter()
                    .position(|a| a == v)
                    .ok_or_else(|| CfError::Input(format!("unknown variable name: {v}")))
            })
            .collect()
    }

    /// Marginal probability table over the given axes (row-major in the order given).
    fn marginal(&self, idxs: &[usize]) -> Vec<f64> {
        let out_len: usize = idxs.iter().map(|&i| self.cardinalities[i]).product();
        let mut out = vec![0.0; out_len];
        // strides of the full table
        let n = self.cardinalities.len();
        let mut strides = vec![1usize; n];
        for i in (0..n.saturating_sub(1)).rev() {
            strides[i] = strides[i + 1] * self.cardinalities[i + 1];
        }
        for (flat, &p) in self.probs.iter().enumerate() {
            let mut key = 0usize;
            for &ax in idxs {
                let coord = (flat / strides[ax]) % self.cardinalities[ax];
                key = key * self.cardinalities[ax] + coord;
            }
            out[key] += p;
        }
        out
    }

    fn table_entropy(table: &[f64]) -> f64 {
        table
            .iter()
            .filter(|&&p| p > 0.0)
            .map(|&p| -p * p.ln())
            .sum()
    }
}

/// Shannon entropy (nats) of the marginal over `vars`.
pub fn entropy(j: &DiscreteJoint, vars: &[&str]) -> Result<f64> {
    let idxs = j.axis_indices(vars)?;
    Ok(DiscreteJoint::table_entropy(&j.marginal(&idxs)))
}

/// S(target | given) = S(target, given) - S(given).
pub fn conditional_entropy(j: &DiscreteJoint, target: &[&str], given: &[&str]) -> Result<f64> {
    check_disjoint(target, given)?;
    let joint: Vec<&str> = target.iter().chain(given.iter()).copied().collect();
    Ok(entropy(j, &joint)? - entropy(j, given)?)
}

/// I(a; b) = S(a) + S(b) - S(a, b).
pub fn mutual_information(j: &DiscreteJoint, a: &[&str], b: &[&str]) -> Result<f64> {
    check_disjoint(a, b)?;
    let joint: Vec<&str> = a.iter().chain(b.iter()).copied().collect();
    Ok(entropy(j, a)? + entropy(j, b)? - entropy(j, &joint)?)
}

fn check_disjoint(a: &[&str], b: &[&str]) -> Result<()> {
    for x in a {
        if b.contains(x) {
            return Err(CfError::Input(format!("subsets overlap on variable {x}")));
        }
    }
    Ok(())
}

/// Absolute residuals of the four entropy/MI identities.
#[derive(Debug, Clone)]
pub struct IdentityResiduals {
    /// S(X) = I(X;Y) + S(X|Y)
    pub decomposition: f64,
    /// S(X,Y) = S(X) + S(Y) - I(X;Y)
    pub joint_mi: f64,
    /// S(X,Y) = S(X) + S(Y|X)
    pub chain_rule: f64,
    /// S(X,Y|Z) = S(X|Z) + S(Y|X,Z); None when the joint has only two axes
    pub conditional_chain_rule: Option<f64>,
}

impl IdentityResiduals {
    pub fn max(&self) -> f64 {
        let base = self.decomposition.max(self.joint_mi).max(self.chain_rule);
        match self.conditional_chain_rule {
            Some(r) => base.max(r),
            None => base,
        }
    }
}

/// Evaluates both sides of the four identities on the first two (or three) axes.
pub fn verify_identities(j: &DiscreteJoint) -> Result<IdentityResiduals> {
    if j.axes.len() < 2 {
        return Err(CfError::Input("need at least two axes".into()));
    }
    let x = j.axes[0].as_str();
    let y = j.axes[1].as_str();
    let s_x = entropy(j, &[x])?;
    let s_y = entropy(j, &[y])?;
    let s_xy = entropy(j, &[x, y])?;
    let i_xy = mutual_information(j, &[x], &[y])?;
    let s_x_given_y = conditional_entropy(j, &[x], &[y])?;
    let s_y_given_x = conditional_entropy(j, &[y], &[x])?;

    let decomposition = (s_x - (i_xy + s_x_given_y)).abs();
    let joint_mi = (s_xy - (s_x + s_y - i_xy)).abs();
    let chain_rule = (s_xy - (s_x + s_y_given_x)).abs();

    let conditional_chain_rule = if j.axes.len() >= 3 {
        let z = j.axes[2].as_str();
        // S(X,Y|Z) = S(X,Y,Z) - S(Z)
        let lhs = entropy(j, &[x, y, z])? - entropy(j, &[z])?;
        let rhs = conditional_entropy(j, &[x], &[z])? + conditional_entropy(j, &[y], &[x, z])?;
        Some((lhs - rhs).abs())
    } else {
        None
    };

    Ok(IdentityResiduals {
        decomposition,
        joint_mi,
        chain_rule,
        conditional_chain_rule,
    })
}

/// The five-term breakdown of the latent entropy:
/// S(Z) = I(X;Z,C) + S(Z|C,X) + I(Z;C) + S(C|X) - S(C).
#[derive(Debug, Clone)]
pub struct LatentEntropyBreakdown {
    pub info_x_zc: f64,
    pub noise_z_given_cx: f64,
    pub info_z_c: f64,
    pub cond_c_given_x: f64,
    pub entropy_c: f64,
    pub entropy_z: f64,
}

impl LatentEntropyBreakdown {
    /// Residual of the reconstruction of S(Z) from the five terms.
    pub fn residual(&self) -> f64 {
        let recombined = self.info_x_zc + self.noise_z_given_cx + self.info_z_c
            + self.cond_c_given_x
            - self.entropy_c;
        (self.entropy_z - recombined).abs()
    }
}

/// Decomposes S(Z) on a joint with axes exactly {X, Z, C}.
pub fn decompose_latent_entropy(j: &DiscreteJoint) -> Result<LatentEntropyBreakdown> {
    let mut names: Vec<&str> = j.axes.iter().map(|s| s.as_str()).collect();
    names.sort_unstable();
    if names != ["C", "X", "Z"] {
        return Err(CfError::Input(format!(
            "expected axes {{X, Z, C}}, got {:?}",
            j.axes
        )));
    }
    let breakdown = LatentEntropyBreakdown {
        info_x_zc: mutual_information(j, &["X"], &["Z", "C"])?,
        noise_z_given_cx: conditional_entropy(j, &["Z"], &["C", "X"])?,
        info_z_c: mutual_information(j, &["Z"], &["C"])?,
        cond_c_given_x: conditional_entropy(j, &["C"], &["X"])?,
        entropy_c: entropy(j, &["C"])?,
        entropy_z: entropy(j, &["Z"])?,
    };
    Ok(breakdown)
}

/// Per-dimension standard deviations of a continuous latent.
#[derive(Debug, Clone)]
pub struct LatentSpread {
    pub sigmas: Vec<f64>,
}

impl LatentSpread {
    pub fn new(sigmas: Vec<f64>) -> Result<Self> {
        if sigmas.iter().any(|&s| s < 0.0 || !s.is_finite()) {
            return Err(CfError::Input("sigmas must be finite and >= 0".into()));
        }
        Ok(Self { sigmas })
    }

    pub fn n_dims(&self) -> usize {
        self.sigmas.len()
    }
}

/// Gaussian entropy upper bound S_UB = N·ln√(2πe) + Σ ln σᵢ.
///
/// Returns -inf when any sigma is zero (degenerate spread).
pub fn entropy_upper_bound(s: &LatentSpread) -> f64 {
    if s.sigmas.iter().any(|&x| x == 0.0) {
        return f64::NEG_INFINITY;
    }
    let n = s.n_dims() as f64;
    let per_dim = (2.0 * std::f64::consts::PI * std::f64::consts::E).sqrt().ln();
    n * per_dim + s.sigmas.iter().map(|x| x.ln()).sum::<f64>()
}

/// Differential entropy of U(a, b) with variance sigma^2: ln(sigma·√12).
pub fn uniform_entropy_at_variance(sigma: f64) -> f64 {
    (sigma * 12f64.sqrt()).ln()
}

/// Differential entropy of a Laplace with variance sigma^2: 1 + ln(sigma·√2).
pub fn laplace_entropy_at_variance(sigma: f64) -> f64 {
    1.0 + (sigma * 2f64.sqrt()).ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn coin(p: f64) -> DiscreteJoint {
        DiscreteJoint::new(vec!["X".into()], vec![2], vec![p, 1.0 - p]).unwrap()
    }

    #[test]
    fn entropy_examples() {
        assert!((entropy(&coin(0.5), &["X"]).unwrap() - 2f64.ln()).abs() < 1e-12);
        assert_eq!(entropy(&coin(1.0), &["X"]).unwrap(), 0.0);
        // direct evaluation of -sum p ln p for (0.25, 0.75)
        let expected = -(0.25f64 * 0.25f64.ln() + 0.75 * 0.75f64.ln());
        assert!((entropy(&coin(0.25), &["X"]).unwrap() - expected).abs() < 1e-12);
        assert!((expected - 0.562335).abs() < 1e-6);
    }

    #[test]
    fn unknown_variable_is_input_error() {
        assert!(entropy(&coin(0.5), &["Q"]).is_err());
    }

    fn independent_coins() -> DiscreteJoint {
        DiscreteJoint::new(
            vec!["X".into(), "Y".into()],
            vec![2, 2],
            vec![0.25, 0.25, 0.25, 0.25],
        )
        .unwrap()
    }

    fn copied_coins() -> DiscreteJoint {
        DiscreteJoint::new(
            vec!["X".into(), "Y".into()],
            vec![2, 2],
            vec![0.5, 0.0, 0.0, 0.5],
        )
        .unwrap()
    }

    #[test]
    fn conditional_entropy_examples() {
        let ln2 = 2f64.ln();
        let j = independent_coins();
        assert!((conditional_entropy(&j, &["X"], &["Y"]).unwrap() - ln2).abs() < 1e-12);
        let j = copied_coins();
        assert!(conditional_entropy(&j, &["X"], &["Y"]).unwrap().abs() < 1e-12);
        assert!(conditional_entropy(&j, &["X"], &["X"]).is_err());
    }

    #[test]
    fn conditional_entropy_matches_brute_force_double_sum() {
        // random 3x2 joint; oracle: -sum_{x,y} p(x,y) ln p(x|y)
        let mut rng = crate::rng::stream(11, "it-test", 0);
        let weights: Vec<f64> = (0..6).map(|_| rng.gen::<f64>() + 0.01).collect();
        let j = DiscreteJoint::from_weights(vec!["X".into(), "Y".into()], vec![3, 2], weights)
            .unwrap();
        let px_y = j.marginal(&[0, 1]);
        let py = j.marginal(&[1]);
        let mut oracle = 0.0;
        for x in 0..3 {
            for y in 0..2 {
                let pxy = px_y[x * 2 + y];
                if pxy > 0.0 {
                    oracle -= pxy * (pxy / py[y]).ln();
                }
            }
        }
        let got = conditional_entropy(&j, &["X"], &["Y"]).unwrap();
        assert!((got - oracle).abs() < 1e-12);
        assert!(got >= 0.0);
    }

    #[test]
    fn mutual_information_examples() {
        assert!(mutual_information(&independent_coins(), &["X"], &["Y"])
            .unwrap()
            .abs()
            < 1e-12);
        let got = mutual_information(&copied_coins(), &["X"], &["Y"]).unwrap();
        assert!((got - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn mutual_information_matches_brute_force_kl() {
        // random 2x2x2 joint, I(X; (Y,Z)) as direct KL of joint vs product
        let mut rng = crate::rng::stream(13, "it-test", 1);
        let weights: Vec<f64> = (0..8).map(|_| rng.gen::<f64>() + 0.01).collect();
        let j = DiscreteJoint::from_weights(
            vec!["X".into(), "Y".into(), "Z".into()],
            vec![2, 2, 2],
            weights,
        )
        .unwrap();
        let full = j.marginal(&[0, 1, 2]);
        let px = j.marginal(&[0]);
        let pyz = j.marginal(&[1, 2]);
        let mut kl = 0.0;
        for x in 0..2 {
            for yz in 0..4 {
                let p = full[x * 4 + yz];
                if p > 0.0 {
                    kl += p * (p / (px[x] * pyz[yz])).ln();
                }
            }
        }
        let got = mutual_information(&j, &["X"], &["Y", "Z"]).unwrap();
        assert!((got - kl).abs() < 1e-12);
    }

    #[test]
    fn identities_hold_on_random_joints() {
        let mut rng = crate::rng::stream(17, "it-test", 2);
        for i in 0..100 {
            let cards = vec![2 + (i % 2), 2, 3];
            let len: usize = cards.iter().product();
            let weights: Vec<f64> = (0..len).map(|_| rng.gen::<f64>() + 1e-3).collect();
            let j = DiscreteJoint::from_weights(
                vec!["X".into(), "Y".into(), "Z".into()],
                cards,
                weights,
            )
            .unwrap();
            let res = verify_identities(&j).unwrap();
            assert!(res.max() <= 1e-9, "residuals {res:?}");
        }
    }

    #[test]
    fn identities_on_deterministic_joint() {
        // delta table: all entropies vanish
        let j = DiscreteJoint::new(
            vec!["X".into(), "Y".into()],
            vec![2, 2],
            vec![1.0, 0.0, 0.0, 0.0],
        )
        .unwrap();
        let res = verify_identities(&j).unwrap();
        assert_eq!(res.max(), 0.0);
    }

    #[test]
    fn too_few_axes_is_input_error() {
        assert!(verify_identities(&coin(0.5)).is_err());
    }

    #[test]
    fn latent_decomposition_independent_z() {
        // Z independent of (X, C): I(Z;C) = 0
        let mut probs = vec![0.0; 8];
        // p(x,z,c) = p(x,c) * p(z), with p(z) fair and p(x,c) arbitrary
        let pxc = [0.1, 0.2, 0.3, 0.4];
        for x in 0..2 {
            for z in 0..2 {
                for c in 0..2 {
                    probs[x * 4 + z * 2 + c] = pxc[x * 2 + c] * 0.5;
                }
            }
        }
        let j = DiscreteJoint::new(vec!["X".into(), "Z".into(), "C".into()], vec![2, 2, 2], probs)
            .unwrap();
        let b = decompose_latent_entropy(&j).unwrap();
        assert!(b.info_z_c.abs() < 1e-12);
        assert!(b.residual() <= 1e-9);
    }

    #[test]
    fn latent_decomposition_copied_c() {
        // Z = copy of C: I(Z;C) = S(C)
        let mut probs = vec![0.0; 8];
        let px = [0.3, 0.7];
        let pc = [0.4, 0.6];
        for x in 0..2 {
            for c in 0..2 {
                probs[x * 4 + c * 2 + c] = px[x] * pc[c];
            }
        }
        let j = DiscreteJoint::new(vec!["X".into(), "Z".into(), "C".into()], vec![2, 2, 2], probs)
            .unwrap();
        let b = decompose_latent_entropy(&j).unwrap();
        assert!((b.info_z_c - b.entropy_c).abs() < 1e-12);
        assert!(b.residual() <= 1e-9);
    }

    #[test]
    fn latent_decomposition_random_joints() {
        let mut rng = crate::rng::stream(19, "it-test", 3);
        for _ in 0..100 {
            let weights: Vec<f64> = (0..8).map(|_| rng.gen::<f64>() + 1e-3).collect();
            let j = DiscreteJoint::from_weights(
                vec!["X".into(), "Z".into(), "C".into()],
                vec![2, 2, 2],
                weights,
            )
            .unwrap();
            assert!(decompose_latent_entropy(&j).unwrap().residual() <= 1e-9);
        }
    }

    #[test]
    fn wrong_axis_set_is_input_error() {
        let j = independent_coins();
        assert!(decompose_latent_entropy(&j).is_err());
    }

    #[test]
    fn upper_bound_examples() {
        let one = LatentSpread::new(vec![1.0]).unwrap();
        let expected = 0.5 * (2.0 * std::f64::consts::PI * std::f64::consts::E).ln();
        assert!((entropy_upper_bound(&one) - expected).abs() < 1e-12);
        assert!((expected - 1.418939).abs() < 1e-6);

        let two = LatentSpread::new(vec![1.0, 1.0]).unwrap();
        assert!((entropy_upper_bound(&two) - 2.0 * expected).abs() < 1e-12);

        let degenerate = LatentSpread::new(vec![1.0, 0.0]).unwrap();
        assert_eq!(entropy_upper_bound(&degenerate), f64::NEG_INFINITY);
    }

    #[test]
    fn bound_dominates_uniform_at_matched_variance() {
        for sigma in [0.1, 0.5, 1.0, 3.0, 10.0] {
            let s = LatentSpread::new(vec![sigma]).unwrap();
            let bound = entropy_upper_bound(&s);
            assert!(uniform_entropy_at_variance(sigma) < bound);
            assert!(laplace_entropy_at_variance(sigma) < bound);
        }
        assert!((uniform_entropy_at_variance(1.0) - 12f64.sqrt().ln()).abs() < 1e-12);
        assert!((12f64.sqrt().ln() - 1.2425).abs() < 1e-4);
    }
}
