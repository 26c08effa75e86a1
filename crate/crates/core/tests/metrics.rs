use nalgebra::DMatrix;
use ndarray::Array2;
use proptest::prelude::*;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use sidda_core::metrics::{
    accuracy, brier, confusion, ece, isomap, js_bound_report, js_distance, silhouette, write_embedding_csv, Domain,
    PredictionSet,
};
use sidda_core::{rng, Error, Tensor};

fn preds(rows: &[&[f32]], labels: &[u16]) -> PredictionSet {
    let c = rows[0].len();
    let data = rows.iter().flat_map(|r| r.iter().copied()).collect();
    PredictionSet::new(Tensor::new(vec![rows.len(), c], data).unwrap(), labels.to_vec()).unwrap()
}

#[test]
pub fn ece_hand_cases() {
    let p = preds(&[&[1.0, 0.0], &[0.0, 1.0]], &[0, 1]);
    assert_eq!(ece(&p, 10).unwrap(), 0.0);
    let p = preds(&[&[0.6, 0.4], &[0.6, 0.4]], &[0, 1]);
    assert!((ece(&p, 10).unwrap() - 0.1).abs() < 1e-7);
    assert!(ece(&p, 0).is_err());
}

#[test]
fn ece_of_calibrated_predictions_is_small() {
    let mut r = rng::from_seed(3);
    let w = 40_000;
    let mut data = Vec::with_capacity(2 * w);
    let mut labels = Vec::with_capacity(w);
    for _ in 0..w {
        let c: f32 = r.random_range(0.5..1.0);
        data.extend([c, 1.0 - c]);
        labels.push(if r.random::<f32>() < c { 0 } else { 1 });
    }
    let p = PredictionSet::new(Tensor::new(vec![w, 2], data).unwrap(), labels).unwrap();
    let v = 10;
    let e = ece(&p, v).unwrap();
    // Binning bound plus three standard errors of a Bernoulli mean.
    let bound = 1.0 / (2.0 * v as f64) + 3.0 * (0.25 / w as f64).sqrt();
    assert!(e <= bound, "ece {e} > {bound}");
}

#[test]
fn ece_bins_are_closed_on_the_right() {
    // Confidence 0.5 lands in (0.4, 0.5], confidence 0.51 in (0.5, 0.6].
    let p = preds(&[&[0.5, 0.5], &[0.51, 0.49]], &[1, 0]);
    // First row predicts class 0 (first on ties) and is wrong.
    let want = 0.5 * (0.0f64 - 0.5).abs() + 0.5 * (1.0f64 - 0.51).abs();
    assert!((ece(&p, 10).unwrap() - want).abs() < 1e-6);
}

#[test]
pub fn brier_hand_cases() {
    assert_eq!(brier(&preds(&[&[0.0, 1.0, 0.0]], &[1])), 0.0);
    assert!((brier(&preds(&[&[0.5, 0.5]], &[0])) - 0.25).abs() < 1e-12);
    assert!((brier(&preds(&[&[0.0, 1.0]], &[0])) - 1.0).abs() < 1e-12);
}

#[test]
fn accuracy_and_confusion() {
    let p = preds(&[&[0.9, 0.1], &[0.2, 0.8], &[0.7, 0.3]], &[0, 0, 1]);
    assert!((accuracy(&p) - 1.0 / 3.0).abs() < 1e-12);
    assert_eq!(confusion(&p), vec![vec![1, 1], vec![1, 0]]);
}

#[test]
fn prediction_set_validates_rows() {
    let t = Tensor::new(vec![1, 2], vec![0.7, 0.7]).unwrap();
    assert!(PredictionSet::new(t, vec![0]).is_err());
    let t = Tensor::new(vec![1, 2], vec![0.5, 0.5]).unwrap();
    assert!(PredictionSet::new(t, vec![2]).is_err());
}

fn gaussian_points(r: &mut rng::Rng, n: usize, d: usize, center: &[f64], spread: f64) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| (0..d).map(|k| center[k] + spread * { let v: f64 = StandardNormal.sample(&mut *r); v }).collect::<Vec<f64>>())
        .collect()
}

fn array(rows: &[Vec<f64>]) -> Array2<f64> {
    Array2::from_shape_fn((rows.len(), rows[0].len()), |(i, j)| rows[i][j])
}

/// Straight from the definition with a full distance matrix.
fn silhouette_reference(x: &[Vec<f64>], labels: &[usize]) -> f64 {
    let n = x.len();
    let dist = |i: usize, j: usize| x[i].iter().zip(&x[j]).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let clusters: std::collections::BTreeSet<usize> = labels.iter().copied().collect();
    let mut total = 0.0;
    for i in 0..n {
        let mean_to = |c: usize| {
            let members: Vec<usize> = (0..n).filter(|&j| j != i && labels[j] == c).collect();
            (members.iter().map(|&j| dist(i, j)).sum::<f64>() / members.len() as f64, members.len())
        };
        let (a, own) = mean_to(labels[i]);
        if own == 0 {
            continue;
        }
        let b = clusters
            .iter()
            .filter(|&&c| c != labels[i])
            .map(|&c| mean_to(c).0)
            .fold(f64::INFINITY, f64::min);
        total += (b - a) / a.max(b);
    }
    total / n as f64
}

#[test]
pub fn silhouette_limits() {
    let mut r = rng::from_seed(1);
    let mut pts = gaussian_points(&mut r, 50, 3, &[0.0; 3], 0.01);
    pts.extend(gaussian_points(&mut r, 50, 3, &[100.0, 0.0, 0.0], 0.01));
    let labels: Vec<usize> = (0..100).map(|i| i / 50).collect();
    assert!(silhouette(&array(&pts), &labels).unwrap() >= 0.99);
    let swapped: Vec<usize> = (0..100).map(|i| (i / 50 + i % 2) % 2).collect();
    assert!(silhouette(&array(&pts), &swapped).unwrap() < 0.0);
    assert!(matches!(silhouette(&array(&pts), &[3; 100]), Err(Error::Config(_))));
}

#[test]
fn silhouette_random_split_is_near_zero() {
    let mut r = rng::from_seed(2);
    let pts = gaussian_points(&mut r, 500, 4, &[0.0; 4], 1.0);
    let labels: Vec<usize> = (0..500).map(|_| r.random_range(0..2)).collect();
    let s = silhouette(&array(&pts), &labels).unwrap();
    assert!(s.abs() <= 0.1, "silhouette {s}");
}

#[test]
pub fn silhouette_matches_definition() {
    let mut r = rng::from_seed(5);
    let pts = gaussian_points(&mut r, 40, 2, &[0.0; 2], 1.0);
    // Include a singleton cluster.
    let labels: Vec<usize> = (0..40).map(|i| if i == 0 { 9 } else { r.random_range(0..3) }).collect();
    let got = silhouette(&array(&pts), &labels).unwrap();
    assert!((got - silhouette_reference(&pts, &labels)).abs() < 1e-12);
}

#[test]
pub fn js_identical_and_disjoint() {
    let mut r = rng::from_seed(3);
    let a = array(&gaussian_points(&mut r, 200, 5, &[0.0; 5], 1.0));
    let same = js_distance(&a, &a, 64).unwrap();
    assert!(same.value <= 1e-9);
    let b = a.mapv(|v| v + 1000.0);
    let far = js_distance(&a, &b, 64).unwrap();
    assert!((far.value - std::f64::consts::LN_2).abs() < 1e-9, "{}", far.value);
    assert!((far.distance - far.value.sqrt()).abs() < 1e-15);
    assert_eq!((far.bins, far.dimensions), (64, 5));
    assert!(js_distance(&Array2::zeros((0, 5)), &a, 64).is_err());
}

/// JS divergence of N(0,1) and N(1,1) by trapezoidal quadrature.
fn gaussian_js_quadrature() -> f64 {
    let pdf = |x: f64, m: f64| (-(x - m).powi(2) / 2.0).exp() / (2.0 * std::f64::consts::PI).sqrt();
    let (lo, hi, n) = (-12.0, 13.0, 200_000);
    let h = (hi - lo) / n as f64;
    (0..=n)
        .map(|i| {
            let x = lo + i as f64 * h;
            let (p, q) = (pdf(x, 0.0), pdf(x, 1.0));
            let m = 0.5 * (p + q);
            let f = 0.5 * p * (p / m).ln() + 0.5 * q * (q / m).ln();
            if i == 0 || i == n {
                0.5 * f * h
            } else {
                f * h
            }
        })
        .sum()
}

#[test]
pub fn js_of_shifted_gaussians_matches_quadrature() {
    let mut r = rng::from_seed(8);
    let n = 100_000;
    let a = Array2::from_shape_fn((n, 1), |_| StandardNormal.sample(&mut r));
    let b = Array2::from_shape_fn((n, 1), |_| { let v: f64 = StandardNormal.sample(&mut r); 1.0 + v });
    let est = js_distance(&a, &b, 64).unwrap().value;
    let truth = gaussian_js_quadrature();
    assert!((est - truth).abs() <= 0.05 * truth, "estimate {est}, quadrature {truth}");
}

#[test]
fn bound_report_fields() {
    let mut r = rng::from_seed(4);
    let a = array(&gaussian_points(&mut r, 30, 2, &[0.0; 2], 1.0));
    let js = js_distance(&a, &a, 16).unwrap();
    let rep = js_bound_report(0.7, Some(0.9), &js);
    assert!((rep.bound - 0.7).abs() < 1e-4);
    assert_eq!(rep.holds, Some(true));
    let b = a.mapv(|v| v + 50.0);
    let rep = js_bound_report(0.7, None, &js_distance(&a, &b, 16).unwrap());
    assert!((rep.bound - (0.7 - std::f64::consts::LN_2.sqrt())).abs() < 1e-8);
    assert_eq!(rep.holds, None);
}

/// Relative Frobenius error after the best rotation/reflection.
fn procrustes_error(x: &Array2<f64>, y: &Array2<f64>) -> f64 {
    let center = |m: &Array2<f64>| {
        let mean = m.mean_axis(ndarray::Axis(0)).unwrap();
        DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| m[[i, j]] - mean[j])
    };
    let (x, y) = (center(x), center(y));
    let svd = (x.transpose() * &y).svd(true, true);
    let rot = svd.u.unwrap() * svd.v_t.unwrap();
    (x * rot - &y).norm() / y.norm()
}

#[test]
pub fn isomap_recovers_planar_points() {
    let mut r = rng::from_seed(6);
    let pts: Vec<Vec<f64>> = (0..40).map(|_| vec![r.random_range(-3.0..3.0), r.random_range(-1.0..1.0)]).collect();
    let x = array(&pts);
    let emb = isomap(&x, 39, 2).unwrap();
    assert!(procrustes_error(&emb.coordinates, &x) <= 1e-3);
    assert!(emb.residual_variance < 1e-9);
    for c in 0..2 {
        assert!(emb.coordinates.column(c).sum().abs() < 1e-9);
    }
}

#[test]
fn isomap_three_points_exact() {
    let x = array(&[vec![0.0, 0.0, 1.0], vec![3.0, 0.0, 1.0], vec![0.0, 4.0, 2.0]]);
    let emb = isomap(&x, 2, 2).unwrap();
    let c = &emb.coordinates;
    for i in 0..3 {
        for j in 0..3 {
            let de = ((c[[i, 0]] - c[[j, 0]]).powi(2) + (c[[i, 1]] - c[[j, 1]]).powi(2)).sqrt();
            let dx: f64 = (0..3).map(|k| (x[[i, k]] - x[[j, k]]).powi(2)).sum::<f64>().sqrt();
            assert!((de - dx).abs() < 1e-9);
        }
    }
}

#[test]
fn isomap_unrolls_an_arc() {
    let n = 60;
    let angles: Vec<f64> = (0..n).map(|i| 1.5 * std::f64::consts::PI * i as f64 / (n - 1) as f64).collect();
    // Shuffle input order; embedding order must follow arc length.
    let mut perm: Vec<usize> = (0..n).collect();
    rand::seq::SliceRandom::shuffle(perm.as_mut_slice(), &mut rng::from_seed(9));
    let pts: Vec<Vec<f64>> = perm.iter().map(|&i| vec![angles[i].cos(), angles[i].sin()]).collect();
    let emb = isomap(&array(&pts), 4, 1).unwrap();
    let mut by_arc: Vec<(usize, f64)> = perm.iter().enumerate().map(|(row, &i)| (i, emb.coordinates[[row, 0]])).collect();
    by_arc.sort_by_key(|p| p.0);
    let inc = by_arc.windows(2).all(|w| w[1].1 > w[0].1);
    let dec = by_arc.windows(2).all(|w| w[1].1 < w[0].1);
    assert!(inc || dec);
}

#[test]
fn isomap_reports_disconnected_graph() {
    let mut r = rng::from_seed(7);
    let mut pts = gaussian_points(&mut r, 10, 2, &[0.0, 0.0], 0.1);
    pts.extend(gaussian_points(&mut r, 6, 2, &[50.0, 0.0], 0.1));
    match isomap(&array(&pts), 3, 2) {
        Err(Error::Disconnected { components, sizes }) => {
            assert_eq!(components, 2);
            assert_eq!(sizes, vec![10, 6]);
        }
        other => panic!("expected disconnected error, got {other:?}"),
    }
    assert!(matches!(isomap(&array(&pts), 16, 2), Err(Error::Config(_))));
    assert!(matches!(isomap(&array(&pts), 2, 2), Err(Error::Config(_))));
}

#[test]
fn isomap_is_permutation_consistent() {
    let mut r = rng::from_seed(10);
    let pts = gaussian_points(&mut r, 30, 3, &[0.0; 3], 1.0);
    let mut perm: Vec<usize> = (0..30).collect();
    rand::seq::SliceRandom::shuffle(perm.as_mut_slice(), &mut r);
    let permuted: Vec<Vec<f64>> = perm.iter().map(|&i| pts[i].clone()).collect();
    let a = isomap(&array(&pts), 8, 2).unwrap();
    let b = isomap(&array(&permuted), 8, 2).unwrap();
    let d = |c: &Array2<f64>, i: usize, j: usize| ((c[[i, 0]] - c[[j, 0]]).powi(2) + (c[[i, 1]] - c[[j, 1]]).powi(2)).sqrt();
    for i in 0..30 {
        for j in 0..30 {
            assert!((d(&b.coordinates, i, j) - d(&a.coordinates, perm[i], perm[j])).abs() < 1e-6);
        }
    }
}

#[test]
fn embedding_csv_layout() {
    let c = array(&[vec![0.5, -1.0], vec![2.0, 3.25]]);
    let mut out = Vec::new();
    write_embedding_csv(&mut out, &c, &[1, 2], &[Domain::Source, Domain::Target]).unwrap();
    assert_eq!(String::from_utf8(out).unwrap(), "x,y,label,domain\n0.5,-1,1,source\n2,3.25,2,target\n");
    assert!(write_embedding_csv(Vec::new(), &c, &[1], &[Domain::Source]).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn js_is_symmetric_and_bounded(seed in any::<u64>(), shift in -3.0f64..3.0, bins in 1usize..40) {
        let mut r = rng::from_seed(seed);
        let a = Array2::from_shape_fn((25, 3), |_| StandardNormal.sample(&mut r));
        let b = Array2::from_shape_fn((17, 3), |_| { let v: f64 = StandardNormal.sample(&mut r); shift + v });
        let ab = js_distance(&a, &b, bins).unwrap().value;
        let ba = js_distance(&b, &a, bins).unwrap().value;
        prop_assert!((ab - ba).abs() <= 1e-12);
        prop_assert!((0.0..=std::f64::consts::LN_2 + 1e-9).contains(&ab));
    }

    #[test]
    fn scores_stay_in_range(seed in any::<u64>(), n in 4usize..30, c in 2usize..5) {
        let mut r = rng::from_seed(seed);
        let mut data = Vec::new();
        for _ in 0..n {
            let raw: Vec<f32> = (0..c).map(|_| r.random::<f32>() + 1e-3).collect();
            let s: f32 = raw.iter().sum();
            data.extend(raw.iter().map(|v| v / s));
        }
        let labels: Vec<u16> = (0..n).map(|_| r.random_range(0..c as u16)).collect();
        let p = PredictionSet::new(Tensor::new(vec![n, c], data).unwrap(), labels.clone()).unwrap();
        let e = ece(&p, 10).unwrap();
        let b = brier(&p);
        prop_assert!((0.0..=1.0).contains(&e) && (0.0..=1.0).contains(&b));
        let pts = Array2::from_shape_fn((n, 2), |_| StandardNormal.sample(&mut r));
        let cl: Vec<usize> = (0..n).map(|i| i % 2).collect();
        let s = silhouette(&pts, &cl).unwrap();
        prop_assert!((-1.0..=1.0).contains(&s));
    }
}
