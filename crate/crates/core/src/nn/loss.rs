//! Training objectives and their analytic gradients.
//!
//! Every `*_grad` function returns the loss value together with the
//! gradient with respect to its vector inputs; the plain variants return the
//! value only.

use super::matrix::DenseMatrix;
use super::vector::{euclidean_distance, log_sum_exp, softmax_unchecked, squared_distance, sum};
use crate::error::{ensure_dims, Error, Result};

/// Number of coarse viewpoint classes (front, side, rear).
pub const VIEWPOINT_CLASSES: usize = 3;

pub const DEFAULT_TRIPLET_MARGIN: f64 = 0.3;

/// Weight of the entropy terms in the contrastive objective.
pub const DEFAULT_CONTRASTIVE_ALPHA: f64 = 9.0;

/// Mean softmax cross-entropy over the rows of `logits` together with its
/// gradient `(softmax − onehot) / N`.
pub fn cross_entropy_grad(logits: &DenseMatrix, labels: &[usize]) -> Result<(f64, DenseMatrix)> {
    ensure_dims(logits.rows(), labels.len(), "cross-entropy labels")?;
    let classes = logits.cols();
    let n = labels.len() as f64;
    let mut grad = DenseMatrix::zeros(logits.rows(), classes);
    let mut terms = Vec::with_capacity(labels.len());
    for (r, &label) in labels.iter().enumerate() {
        if label >= classes {
            return Err(Error::invalid(format!(
                "label {label} out of range for {classes} classes"
            )));
        }
        let row = logits.row(r);
        terms.push(log_sum_exp(row) - row[label]);
        let p = softmax_unchecked(row);
        for (c, pc) in p.iter().enumerate() {
            let target = if c == label { 1.0 } else { 0.0 };
            grad.set(r, c, (pc - target) / n);
        }
    }
    Ok((sum(&terms) / n, grad))
}

pub fn cross_entropy(logits: &DenseMatrix, labels: &[usize]) -> Result<f64> {
    cross_entropy_grad(logits, labels).map(|(l, _)| l)
}

/// Viewpoint cross-entropy over the three coarse viewpoint classes.
pub fn loss_view(logits: &DenseMatrix, labels: &[usize]) -> Result<f64> {
    loss_view_grad(logits, labels).map(|(l, _)| l)
}

pub fn loss_view_grad(logits: &DenseMatrix, labels: &[usize]) -> Result<(f64, DenseMatrix)> {
    ensure_dims(VIEWPOINT_CLASSES, logits.cols(), "viewpoint logits")?;
    cross_entropy_grad(logits, labels)
}

/// Index triple into a batch of features.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Triplet {
    pub anchor: usize,
    pub positive: usize,
    pub negative: usize,
}

/// Batch-hard mining: for every anchor that has both a positive and a
/// negative in the batch, select the farthest positive and the nearest
/// negative. Ties go to the smaller index.
pub fn batch_hard_triplets(features: &[Vec<f64>], labels: &[usize]) -> Result<Vec<Triplet>> {
    ensure_dims(features.len(), labels.len(), "triplet labels")?;
    let n = features.len();
    let mut dist = vec![0.0; n * n];
    for i in 0..n {
        for j in (i + 1)..n {
            let d = euclidean_distance(&features[i], &features[j]);
            dist[i * n + j] = d;
            dist[j * n + i] = d;
        }
    }
    let mut out = Vec::new();
    for a in 0..n {
        let mut hardest_pos: Option<(usize, f64)> = None;
        let mut hardest_neg: Option<(usize, f64)> = None;
        for j in 0..n {
            if j == a {
                continue;
            }
            let d = dist[a * n + j];
            if labels[j] == labels[a] {
                if hardest_pos.is_none_or(|(_, best)| d > best) {
                    hardest_pos = Some((j, d));
                }
            } else if hardest_neg.is_none_or(|(_, best)| d < best) {
                hardest_neg = Some((j, d));
            }
        }
        if let (Some((p, _)), Some((ng, _))) = (hardest_pos, hardest_neg) {
            out.push(Triplet {
                anchor: a,
                positive: p,
                negative: ng,
            });
        }
    }
    Ok(out)
}

/// Mean hinge triplet loss `max(0, m + d(a,p) − d(a,n))` over aligned
/// anchor/positive/negative batches, with Euclidean `d`.
pub fn loss_triplet(
    anchors: &[Vec<f64>],
    positives: &[Vec<f64>],
    negatives: &[Vec<f64>],
    margin: f64,
) -> Result<f64> {
    ensure_dims(anchors.len(), positives.len(), "triplet batch")?;
    ensure_dims(anchors.len(), negatives.len(), "triplet batch")?;
    if anchors.is_empty() {
        return Err(Error::invalid("empty triplet batch"));
    }
    let mut features = Vec::with_capacity(3 * anchors.len());
    let mut triplets = Vec::with_capacity(anchors.len());
    for i in 0..anchors.len() {
        triplets.push(Triplet {
            anchor: features.len(),
            positive: features.len() + 1,
            negative: features.len() + 2,
        });
        features.push(anchors[i].clone());
        features.push(positives[i].clone());
        features.push(negatives[i].clone());
    }
    triplet_grad(&features, &triplets, margin).map(|(l, _)| l)
}

/// Mean hinge triplet loss over index triples into `features`, with the
/// gradient for each feature.
pub fn triplet_grad(
    features: &[Vec<f64>],
    triplets: &[Triplet],
    margin: f64,
) -> Result<(f64, Vec<Vec<f64>>)> {
    if !(margin >= 0.0) {
        return Err(Error::invalid("triplet margin must be non-negative"));
    }
    let dim = features.first().map_or(0, Vec::len);
    for f in features {
        ensure_dims(dim, f.len(), "triplet feature")?;
    }
    let mut grads = vec![vec![0.0; dim]; features.len()];
    if triplets.is_empty() {
        return Ok((0.0, grads));
    }
    let n = triplets.len() as f64;
    let mut terms = Vec::with_capacity(triplets.len());
    for t in triplets {
        let (a, p, ng) = (&features[t.anchor], &features[t.positive], &features[t.negative]);
        let dap = euclidean_distance(a, p);
        let dan = euclidean_distance(a, ng);
        let value = margin + dap - dan;
        if value <= 0.0 {
            terms.push(0.0);
            continue;
        }
        terms.push(value);
        // d/da ||a - p|| = (a - p)/||a - p||
        if dap > 0.0 {
            for k in 0..dim {
                let g = (a[k] - p[k]) / dap / n;
                grads[t.anchor][k] += g;
                grads[t.positive][k] -= g;
            }
        }
        if dan > 0.0 {
            for k in 0..dim {
                let g = (a[k] - ng[k]) / dan / n;
                grads[t.anchor][k] -= g;
                grads[t.negative][k] += g;
            }
        }
    }
    Ok((sum(&terms) / n, grads))
}

/// Identity cross-entropy plus triplet loss.
pub fn loss_appearance(
    logits: &DenseMatrix,
    labels: &[usize],
    features: &[Vec<f64>],
    triplets: &[Triplet],
    margin: f64,
) -> Result<f64> {
    let ce = cross_entropy(logits, labels)?;
    let (tri, _) = triplet_grad(features, triplets, margin)?;
    Ok(ce + tri)
}

/// Unweighted sum of the viewpoint and appearance objectives.
pub fn loss_vcc(view_loss: f64, appearance_loss: f64) -> f64 {
    view_loss + appearance_loss
}

/// `Σ ||x − x'||²` over aligned batches, with the gradient with respect to
/// the reconstructions (the gradient for the originals is its negation).
pub fn squared_error_grad(
    originals: &[Vec<f64>],
    reconstructions: &[Vec<f64>],
) -> Result<(f64, Vec<Vec<f64>>)> {
    ensure_dims(originals.len(), reconstructions.len(), "reconstruction batch")?;
    let mut terms = Vec::with_capacity(originals.len());
    let mut grads = Vec::with_capacity(originals.len());
    for (x, r) in originals.iter().zip(reconstructions) {
        ensure_dims(x.len(), r.len(), "reconstruction vector")?;
        terms.push(squared_distance(x, r));
        grads.push(r.iter().zip(x).map(|(a, b)| 2.0 * (a - b)).collect());
    }
    Ok((sum(&terms), grads))
}

/// Reconstruction loss: summed squared error over every view and sample.
pub fn loss_recon(originals: &[Vec<f64>], reconstructions: &[Vec<f64>]) -> Result<f64> {
    squared_error_grad(originals, reconstructions).map(|(l, _)| l)
}

/// Dual-prediction loss between predicted and target latents. Same form as
/// [`loss_recon`].
pub fn loss_prediction(predicted: &[Vec<f64>], targets: &[Vec<f64>]) -> Result<f64> {
    squared_error_grad(targets, predicted).map(|(l, _)| l)
}

/// Information terms of a batch joint distribution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JointInformation {
    pub mutual_information: f64,
    pub entropy_1: f64,
    pub entropy_2: f64,
}

/// Symmetrized batch joint over latent dimensions:
/// `P = sym((1/m) Σ_t softmax(z1_t) softmax(z2_t)ᵀ)`.
fn joint_distribution(s1: &[Vec<f64>], s2: &[Vec<f64>]) -> Vec<f64> {
    let k = s1[0].len();
    let m = s1.len() as f64;
    let mut joint = vec![0.0; k * k];
    for (a, b) in s1.iter().zip(s2) {
        for i in 0..k {
            for j in 0..k {
                joint[i * k + j] += a[i] * b[j];
            }
        }
    }
    let mut sym = vec![0.0; k * k];
    for i in 0..k {
        for j in 0..k {
            sym[i * k + j] = (joint[i * k + j] + joint[j * k + i]) / (2.0 * m);
        }
    }
    sym
}

fn marginals(p: &[f64], k: usize) -> (Vec<f64>, Vec<f64>) {
    let mut row = vec![0.0; k];
    let mut col = vec![0.0; k];
    for i in 0..k {
        for j in 0..k {
            row[i] += p[i * k + j];
            col[j] += p[i * k + j];
        }
    }
    (row, col)
}

fn plogp(p: f64) -> f64 {
    if p > 0.0 {
        p * p.ln()
    } else {
        0.0
    }
}

fn check_latent_batches(z1: &[Vec<f64>], z2: &[Vec<f64>]) -> Result<usize> {
    ensure_dims(z1.len(), z2.len(), "contrastive batch size")?;
    if z1.len() < 2 {
        return Err(Error::invalid("contrastive loss needs a batch of at least 2"));
    }
    let k = z1[0].len();
    if k < 2 {
        return Err(Error::invalid("latent dimension must be at least 2"));
    }
    for z in z1.iter().chain(z2) {
        ensure_dims(k, z.len(), "latent vector")?;
    }
    Ok(k)
}

/// Mutual information and marginal entropies (nats) of the batch joint.
pub fn joint_information(z1: &[Vec<f64>], z2: &[Vec<f64>]) -> Result<JointInformation> {
    let k = check_latent_batches(z1, z2)?;
    let s1: Vec<Vec<f64>> = z1.iter().map(|z| softmax_unchecked(z)).collect();
    let s2: Vec<Vec<f64>> = z2.iter().map(|z| softmax_unchecked(z)).collect();
    let p = joint_distribution(&s1, &s2);
    let (row, col) = marginals(&p, k);
    let mut mi = Vec::with_capacity(k * k);
    for i in 0..k {
        for j in 0..k {
            let pij = p[i * k + j];
            if pij > 0.0 {
                mi.push(pij * (pij.ln() - row[i].ln() - col[j].ln()));
            }
        }
    }
    let h1: Vec<f64> = row.iter().map(|v| -plogp(*v)).collect();
    let h2: Vec<f64> = col.iter().map(|v| -plogp(*v)).collect();
    Ok(JointInformation {
        mutual_information: sum(&mi),
        entropy_1: sum(&h1),
        entropy_2: sum(&h2),
    })
}

/// Contrastive objective `−(I(Z1;Z2) + α(H(Z1) + H(Z2)))` on the batch joint
/// distribution of the softmaxed latents.
pub fn loss_contrastive(z1: &[Vec<f64>], z2: &[Vec<f64>], alpha: f64) -> Result<f64> {
    let info = joint_information(z1, z2)?;
    Ok(-(info.mutual_information + alpha * (info.entropy_1 + info.entropy_2)))
}

/// [`loss_contrastive`] with gradients with respect to `z1` and `z2`.
pub fn contrastive_grad(
    z1: &[Vec<f64>],
    z2: &[Vec<f64>],
    alpha: f64,
) -> Result<(f64, Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    if !(alpha >= 0.0) {
        return Err(Error::invalid("alpha must be non-negative"));
    }
    let k = check_latent_batches(z1, z2)?;
    let m = z1.len() as f64;
    let s1: Vec<Vec<f64>> = z1.iter().map(|z| softmax_unchecked(z)).collect();
    let s2: Vec<Vec<f64>> = z2.iter().map(|z| softmax_unchecked(z)).collect();
    let p = joint_distribution(&s1, &s2);
    let (row, col) = marginals(&p, k);
    let floor = f64::MIN_POSITIVE;

    // L = −Σ_ij P_ij (ln P_ij − (α+1)(ln r_i + ln c_j)), which equals
    // −(I + α(H_r + H_c)).
    let a1 = alpha + 1.0;
    let mut terms = Vec::with_capacity(k * k);
    let mut dp = vec![0.0; k * k];
    for i in 0..k {
        for j in 0..k {
            let pij = p[i * k + j].max(floor);
            let lr = row[i].max(floor).ln();
            let lc = col[j].max(floor).ln();
            terms.push(-p[i * k + j] * (pij.ln() - a1 * (lr + lc)));
            dp[i * k + j] = -pij.ln() - 1.0 + a1 * (lr + lc) + 2.0 * a1;
        }
    }
    let loss = sum(&terms);

    // P = (J + Jᵀ)/(2m) with J = Σ_t a_t b_tᵀ, so dL/dJ = (G + Gᵀ)/(2m).
    let mut dj = vec![0.0; k * k];
    for i in 0..k {
        for j in 0..k {
            dj[i * k + j] = (dp[i * k + j] + dp[j * k + i]) / (2.0 * m);
        }
    }
    let softmax_back = |s: &[f64], ds: &[f64]| -> Vec<f64> {
        let inner: f64 = s.iter().zip(ds).map(|(a, b)| a * b).sum();
        s.iter().zip(ds).map(|(a, d)| a * (d - inner)).collect()
    };
    let mut g1 = Vec::with_capacity(z1.len());
    let mut g2 = Vec::with_capacity(z2.len());
    for (a, b) in s1.iter().zip(&s2) {
        let mut da = vec![0.0; k];
        let mut db = vec![0.0; k];
        for i in 0..k {
            for j in 0..k {
                da[i] += dj[i * k + j] * b[j];
                db[j] += dj[i * k + j] * a[i];
            }
        }
        g1.push(softmax_back(a, &da));
        g2.push(softmax_back(b, &db));
    }
    Ok((loss, g1, g2))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::check_gradient;
    use crate::nn::rng::SeededRng;

    fn mat(rows: &[Vec<f64>]) -> DenseMatrix {
        DenseMatrix::from_rows(rows).unwrap()
    }

    #[test]
    fn view_loss_examples() {
        let uniform = mat(&[vec![0.0; 3], vec![2.0; 3]]);
        assert!((loss_view(&uniform, &[0, 2]).unwrap() - 3f64.ln()).abs() < 1e-12);

        let sharp = mat(&[vec![1000.0, 0.0, 0.0]]);
        assert!(loss_view(&sharp, &[0]).unwrap() < 1e-12);

        let one = mat(&[vec![1.0, 0.0, 0.0]]);
        assert!((loss_view(&one, &[0]).unwrap() - 0.5514).abs() < 1e-3);

        assert!(loss_view(&one, &[3]).is_err());
        assert!(loss_view(&mat(&[vec![0.0; 4]]), &[0]).is_err());
    }

    #[test]
    fn triplet_examples() {
        let a = vec![vec![0.0, 0.0]];
        // d(a,p) == d(a,n)
        let l = loss_triplet(&a, &[vec![1.0, 0.0]], &[vec![0.0, 1.0]], 0.3).unwrap();
        assert!((l - 0.3).abs() < 1e-15);
        // hinge inactive
        let l = loss_triplet(&a, &[vec![1.0, 0.0]], &[vec![0.0, 2.0]], 0.3).unwrap();
        assert_eq!(l, 0.0);
        assert!(loss_triplet(&a, &[vec![1.0]], &[vec![0.0, 2.0]], 0.3).is_err());
    }

    #[test]
    fn batch_hard_selects_extremes() {
        let mut rng = SeededRng::new(3);
        let feats: Vec<Vec<f64>> = (0..12).map(|_| rng.normal_vec(4, 1.0)).collect();
        let labels: Vec<usize> = (0..12).map(|i| i / 4).collect();
        let trips = batch_hard_triplets(&feats, &labels).unwrap();
        assert_eq!(trips.len(), 12);
        for t in trips {
            let dp = euclidean_distance(&feats[t.anchor], &feats[t.positive]);
            let dn = euclidean_distance(&feats[t.anchor], &feats[t.negative]);
            for j in 0..12 {
                if j == t.anchor {
                    continue;
                }
                let d = euclidean_distance(&feats[t.anchor], &feats[j]);
                if labels[j] == labels[t.anchor] {
                    assert!(d <= dp);
                } else {
                    assert!(d >= dn);
                }
            }
        }
    }

    #[test]
    fn appearance_is_sum_and_duplication_invariant() {
        let mut rng = SeededRng::new(12);
        let logits = mat(&(0..6).map(|_| rng.normal_vec(4, 1.0)).collect::<Vec<_>>());
        let labels = vec![0, 0, 1, 1, 2, 3];
        let feats: Vec<Vec<f64>> = (0..6).map(|_| rng.normal_vec(3, 0.2)).collect();
        let trips = batch_hard_triplets(&feats, &labels).unwrap();
        let total = loss_appearance(&logits, &labels, &feats, &trips, 0.3).unwrap();
        let ce = cross_entropy(&logits, &labels).unwrap();
        let (tri, _) = triplet_grad(&feats, &trips, 0.3).unwrap();
        assert!((total - (ce + tri)).abs() < 1e-12);

        let mut rows: Vec<Vec<f64>> = (0..6).map(|r| logits.row(r).to_vec()).collect();
        rows.extend(rows.clone());
        let labels2: Vec<usize> = labels.iter().chain(&labels).copied().collect();
        let feats2: Vec<Vec<f64>> = feats.iter().chain(&feats).cloned().collect();
        let trips2: Vec<Triplet> = trips
            .iter()
            .chain(trips.iter())
            .enumerate()
            .map(|(i, t)| {
                let off = if i < trips.len() { 0 } else { 6 };
                Triplet {
                    anchor: t.anchor + off,
                    positive: t.positive + off,
                    negative: t.negative + off,
                }
            })
            .collect();
        let doubled = loss_appearance(&mat(&rows), &labels2, &feats2, &trips2, 0.3).unwrap();
        assert!((doubled - total).abs() < 1e-12);

        let perfect = mat(&[vec![1000.0, 0.0], vec![0.0, 1000.0]]);
        let far = vec![vec![0.0], vec![10.0]];
        let none = loss_appearance(&perfect, &[0, 1], &far, &[], 0.3).unwrap();
        assert!(none < 1e-12);
    }

    #[test]
    fn vcc_sum() {
        assert_eq!(loss_vcc(0.0, 0.0), 0.0);
        assert!((loss_vcc(1.0986, 0.3) - 1.3986).abs() < 1e-12);
    }

    #[test]
    fn recon_examples() {
        let x = vec![vec![1.0, 0.0]];
        assert_eq!(loss_recon(&x, &x).unwrap(), 0.0);
        assert_eq!(loss_recon(&x, &[vec![0.0, 0.0]]).unwrap(), 1.0);
        assert!(loss_recon(&x, &[vec![0.0]]).is_err());
        assert_eq!(
            loss_prediction(&[vec![1.0, 1.0]], &[vec![0.0, 1.0]]).unwrap(),
            1.0
        );
    }

    #[test]
    fn recon_matches_elementwise_oracle() {
        let mut rng = SeededRng::new(30);
        let a: Vec<Vec<f64>> = (0..7).map(|_| rng.normal_vec(5, 1.0)).collect();
        let b: Vec<Vec<f64>> = (0..7).map(|_| rng.normal_vec(5, 1.0)).collect();
        let mut oracle = 0.0;
        for i in 0..7 {
            for k in 0..5 {
                oracle += (a[i][k] - b[i][k]).powi(2);
            }
        }
        assert!((loss_recon(&a, &b).unwrap() - oracle).abs() < 1e-12);
        assert_eq!(loss_prediction(&b, &a).unwrap(), loss_recon(&a, &b).unwrap());
    }

    #[test]
    fn contrastive_aligned_one_hot_reaches_ln_k() {
        let k = 4;
        let z: Vec<Vec<f64>> = (0..k)
            .map(|i| (0..k).map(|j| if i == j { 50.0 } else { 0.0 }).collect())
            .collect();
        let info = joint_information(&z, &z).unwrap();
        let ln_k = (k as f64).ln();
        assert!((info.mutual_information - ln_k).abs() < 1e-6);
        assert!((info.entropy_1 - ln_k).abs() < 1e-6);
        assert!((info.entropy_2 - ln_k).abs() < 1e-6);
        let l = loss_contrastive(&z, &z, 9.0).unwrap();
        assert!((l + 19.0 * ln_k).abs() < 1e-5);
    }

    #[test]
    fn contrastive_uniform_has_zero_information() {
        let z = vec![vec![0.5; 5]; 3];
        let info = joint_information(&z, &z).unwrap();
        assert!(info.mutual_information.abs() < 1e-12);
        assert!((info.entropy_1 - 5f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn contrastive_independent_batches_near_zero_mi() {
        let mut rng = SeededRng::new(77);
        let z1: Vec<Vec<f64>> = (0..4000).map(|_| rng.normal_vec(4, 2.0)).collect();
        let z2: Vec<Vec<f64>> = (0..4000).map(|_| rng.normal_vec(4, 2.0)).collect();
        let info = joint_information(&z1, &z2).unwrap();
        assert!(info.mutual_information.abs() < 0.05);
    }

    #[test]
    fn contrastive_self_information_equals_entropy() {
        let mut rng = SeededRng::new(78);
        let z: Vec<Vec<f64>> = (0..9).map(|_| rng.normal_vec(5, 3.0)).collect();
        let info = joint_information(&z, &z).unwrap();
        // I(Z;Z) under the soft joint is bounded by H(Z) and is positive.
        assert!(info.mutual_information > 0.0);
        assert!(info.mutual_information <= info.entropy_1 + 1e-12);
        assert!(loss_contrastive(&z[..1], &z[..1], 9.0).is_err());
    }

    #[test]
    fn contrastive_gradients_check() {
        let mut rng = SeededRng::new(5);
        for trial in 0..20 {
            let m = 2 + trial % 4;
            let k = 2 + trial % 5;
            let z1: Vec<Vec<f64>> = (0..m).map(|_| rng.normal_vec(k, 1.5)).collect();
            let z2: Vec<Vec<f64>> = (0..m).map(|_| rng.normal_vec(k, 1.5)).collect();
            let (_, g1, g2) = contrastive_grad(&z1, &z2, 9.0).unwrap();
            let flat: Vec<f64> = z1.iter().chain(&z2).flatten().copied().collect();
            let analytic: Vec<f64> = g1.iter().chain(&g2).flatten().copied().collect();
            let f = |v: &[f64]| {
                let a: Vec<Vec<f64>> = v[..m * k].chunks(k).map(<[f64]>::to_vec).collect();
                let b: Vec<Vec<f64>> = v[m * k..].chunks(k).map(<[f64]>::to_vec).collect();
                loss_contrastive(&a, &b, 9.0)
            };
            let err = check_gradient(&flat, &analytic, flat.len(), 1e-6, &mut rng, f).unwrap();
            assert!(err < 1e-4, "trial {trial}: {err}");
        }
    }
}
