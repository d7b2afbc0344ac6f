use serde::{Deserialize, Serialize};

use crate::channel::{path_loss_gain, ChannelRealization, EffectiveChannels, Link, ScenarioConfig};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Multipliers applied to the direct and cascaded blocks of every feature
/// vector so that both blocks enter the network at order-one magnitude.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureScaling {
    pub direct: f64,
    pub cascaded: f64,
}

impl FeatureScaling {
    pub fn unit() -> Self {
        Self {
            direct: 1.0,
            cascaded: 1.0,
        }
    }

    /// Inverse RMS amplitude of Bob's direct and cascaded channels.
    pub fn for_scenario(cfg: &ScenarioConfig) -> Result<Self> {
        let direct = path_loss_gain(cfg.d_ab, cfg)?;
        let cascaded = path_loss_gain(cfg.d_as, cfg)? * path_loss_gain(cfg.d_sb, cfg)?;
        Ok(Self {
            direct: 1.0 / direct.sqrt(),
            cascaded: 1.0 / cascaded.sqrt(),
        })
    }
}

/// Node features and adjacency of one channel realization.
///
/// Row 0 is the surface node (mean of all user features), row 1 is Bob and
/// rows `2..K+2` are the eavesdroppers in index order.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphInput {
    pub x: Tensor,
    pub a: Tensor,
    pub a_norm: Tensor,
}

impl GraphInput {
    pub fn k(&self) -> usize {
        self.x.rows() - 2
    }

    pub fn feature_width(&self) -> usize {
        self.x.cols()
    }
}

pub fn feature_width(n: usize, l: usize) -> usize {
    2 * n + 2 * n * l
}

fn link_features(link: &Link, s: FeatureScaling) -> Vec<f64> {
    let mut x = Vec::with_capacity(2 * link.direct.len() + 2 * link.cascaded.len());
    x.extend(link.direct.re().data().iter().map(|v| v * s.direct));
    x.extend(link.direct.im().data().iter().map(|v| v * s.direct));
    x.extend(link.cascaded.re().data().iter().map(|v| v * s.cascaded));
    x.extend(link.cascaded.im().data().iter().map(|v| v * s.cascaded));
    x
}

/// `[Re h; Im h; Re d; Im d]` per user with `d` the row-major vectorized
/// cascaded channel, plus the mean row on top.
pub fn build_features(ch: &ChannelRealization, scaling: FeatureScaling) -> Result<Tensor> {
    build_features_effective(&ch.effective()?, scaling)
}

pub fn build_features_effective(ch: &EffectiveChannels, scaling: FeatureScaling) -> Result<Tensor> {
    if ch.eves.is_empty() {
        return Err(Error::Usage("graph needs at least one eavesdropper".into()));
    }
    let users: Vec<Vec<f64>> = std::iter::once(&ch.bob)
        .chain(&ch.eves)
        .map(|l| link_features(l, scaling))
        .collect();
    let width = users[0].len();
    let mut mean = vec![0.0; width];
    for u in &users {
        for (m, v) in mean.iter_mut().zip(u) {
            *m += v;
        }
    }
    let count = users.len() as f64;
    mean.iter_mut().for_each(|m| *m /= count);
    let mut rows = Vec::with_capacity(users.len() + 1);
    rows.push(mean);
    rows.extend(users);
    Tensor::from_rows(&rows)
}

/// Surface and Bob linked to each other; every Eve points at both.
pub fn build_adjacency(k: usize) -> Result<Tensor> {
    if k == 0 {
        return Err(Error::Usage("adjacency needs K >= 1".into()));
    }
    let n = k + 2;
    let mut a = Tensor::zeros(n, n);
    a.set(0, 1, 1.0);
    a.set(1, 0, 1.0);
    for r in 2..n {
        a.set(r, 0, 1.0);
        a.set(r, 1, 1.0);
    }
    Ok(a)
}

/// Elementwise `max(A, Aᵀ)`.
pub fn symmetrize(a: &Tensor) -> Result<Tensor> {
    let t = a.transpose()?;
    Tensor::new(
        a.shape().to_vec(),
        a.data()
            .iter()
            .zip(t.data())
            .map(|(x, y)| x.max(*y))
            .collect(),
    )
}

/// `D^{-1/2} (A + I) D^{-1/2}` with `D` the row-degree matrix of `A + I`.
pub fn normalize_adjacency(a: &Tensor) -> Result<Tensor> {
    let (n, m) = a.dims()?;
    if n != m {
        return Err(Error::Shape(format!(
            "adjacency must be square, got {n}x{m}"
        )));
    }
    let mut ai = a.clone();
    for i in 0..n {
        ai.set(i, i, a.get(i, i) + 1.0);
    }
    let deg: Vec<f64> = (0..n).map(|i| ai.row_slice(i).iter().sum()).collect();
    if let Some(i) = deg.iter().position(|d| *d <= 0.0) {
        return Err(Error::Domain(format!("node {i} has degree {}", deg[i])));
    }
    let mut out = Tensor::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            out.set(i, j, ai.get(i, j) / (deg[i] * deg[j]).sqrt());
        }
    }
    Ok(out)
}

/// Features, adjacency and normalized adjacency in one go.
pub fn build_graph(
    ch: &EffectiveChannels,
    scaling: FeatureScaling,
    symmetric: bool,
) -> Result<GraphInput> {
    let x = build_features_effective(ch, scaling)?;
    let mut a = build_adjacency(ch.k())?;
    if symmetric {
        a = symmetrize(&a)?;
    }
    let a_norm = normalize_adjacency(&a)?;
    Ok(GraphInput { x, a, a_norm })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::sample_realization;
    use crate::tensor::ComplexMatrix;
    use num_complex::Complex64;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn adjacency_pattern() {
        let a = build_adjacency(2).unwrap();
        let expect = [
            [0., 1., 0., 0.],
            [1., 0., 0., 0.],
            [1., 1., 0., 0.],
            [1., 1., 0., 0.],
        ];
        assert_eq!(a.data(), expect.concat().as_slice());
        let a1 = build_adjacency(1).unwrap();
        assert_eq!(a1.data(), &[0., 1., 0., 1., 0., 0., 1., 1., 0.]);
        for k in 1..6 {
            let a = build_adjacency(k).unwrap();
            for c in 2..k + 2 {
                assert_eq!((0..k + 2).map(|r| a.get(r, c)).sum::<f64>(), 0.0);
            }
        }
        assert!(build_adjacency(0).is_err());
    }

    #[test]
    fn normalization_small_cases() {
        let one = normalize_adjacency(&Tensor::zeros(1, 1)).unwrap();
        assert_eq!(one.data(), &[1.0]);
        let two = normalize_adjacency(&Tensor::from_rows(&[vec![0., 1.], vec![1., 0.]]).unwrap())
            .unwrap();
        assert_eq!(two.data(), &[0.5; 4]);
        assert!(normalize_adjacency(&Tensor::zeros(2, 3)).is_err());
        let neg = Tensor::from_rows(&[vec![-1.0]]).unwrap();
        assert!(matches!(normalize_adjacency(&neg), Err(Error::Domain(_))));
    }

    #[test]
    fn normalization_matches_dense_oracle() {
        let a = build_adjacency(2).unwrap();
        let ai = Tensor::from_rows(&[
            vec![1., 1., 0., 0.],
            vec![1., 1., 0., 0.],
            vec![1., 1., 1., 0.],
            vec![1., 1., 0., 1.],
        ])
        .unwrap();
        let d_inv_sqrt = Tensor::from_rows(&[
            vec![1. / 2f64.sqrt(), 0., 0., 0.],
            vec![0., 1. / 2f64.sqrt(), 0., 0.],
            vec![0., 0., 1. / 3f64.sqrt(), 0.],
            vec![0., 0., 0., 1. / 3f64.sqrt()],
        ])
        .unwrap();
        let oracle = d_inv_sqrt.matmul(&ai).unwrap().matmul(&d_inv_sqrt).unwrap();
        assert!(normalize_adjacency(&a).unwrap().max_abs_diff(&oracle) < 1e-12);
    }

    #[test]
    fn mean_row_over_identical_users() {
        let mut ch = sample_realization(&ScenarioConfig::desk(), &mut ChaCha8Rng::seed_from_u64(1))
            .unwrap()
            .truncate_eves(1)
            .unwrap();
        ch.h_k[0] = ch.h_b.clone();
        ch.f_k[0] = ch.f_b.clone();
        let x = build_features(&ch, FeatureScaling::unit()).unwrap();
        assert_eq!(x.row_slice(0), x.row_slice(1));
        assert_eq!(x.row_slice(1), x.row_slice(2));
    }

    #[test]
    fn scalar_feature_layout() {
        let one = |z: Complex64| ComplexMatrix::column(&[z]);
        let c = Complex64::new(0.3, -0.7);
        let link = Link {
            direct: one(Complex64::new(1.0, 2.0)),
            cascaded: one(c),
            direct_gain: 1.0,
            cascaded_gain: 1.0,
        };
        let ch = EffectiveChannels {
            bob: link.clone(),
            eves: vec![link],
            sigma2_b: 1.0,
            sigma2_k: vec![1.0],
        };
        let x = build_features_effective(&ch, FeatureScaling::unit()).unwrap();
        assert_eq!(x.row_slice(1), &[1.0, 2.0, 0.3, -0.7]);
    }

    #[test]
    fn mean_row_and_width() {
        for (n, l) in [(1, 1), (4, 16), (3, 5)] {
            let mut cfg = ScenarioConfig::desk();
            cfg.n = n;
            cfg.l = l;
            cfg.k = 3;
            let ch = sample_realization(&cfg, &mut ChaCha8Rng::seed_from_u64(n as u64)).unwrap();
            let x = build_features(&ch, FeatureScaling::for_scenario(&cfg).unwrap()).unwrap();
            assert_eq!(x.cols(), feature_width(n, l));
            assert_eq!(x.rows(), 5);
            for j in 0..x.cols() {
                let m = (1..5).map(|r| x.get(r, j)).sum::<f64>() / 4.0;
                assert!((x.get(0, j) - m).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn scaling_brings_features_to_unit_order() {
        let cfg = ScenarioConfig::desk();
        let ch = sample_realization(&cfg, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let x = build_features(&ch, FeatureScaling::for_scenario(&cfg).unwrap()).unwrap();
        let bob = x.row_slice(1);
        let rms = (bob.iter().map(|v| v * v).sum::<f64>() / bob.len() as f64).sqrt();
        assert!(rms > 0.1 && rms < 10.0, "{rms}");
    }

    #[test]
    fn symmetrized_adjacency() {
        let s = symmetrize(&build_adjacency(2).unwrap()).unwrap();
        assert_eq!(s, s.transpose().unwrap());
        assert_eq!(s.get(0, 2), 1.0);
    }
}
