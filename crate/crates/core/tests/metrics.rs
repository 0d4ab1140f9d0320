mod common;

use handfit::metrics::{aligned_distances_mm, joint_error};

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[test]
fn displacement_outside_the_similarity_tangent_space_is_kept() {
    let model = common::model();
    let gt = common::samples(&model, 1, "clean", 4)[0].ground_truth.clone().unwrap().joints;
    let n = gt.len();
    let centroid: [f64; 3] = std::array::from_fn(|c| gt.iter().map(|p| p[c]).sum::<f64>() / n as f64);
    let g: Vec<[f64; 3]> = gt.iter().map(|p| std::array::from_fn(|c| p[c] - centroid[c])).collect();

    // translations, scale and infinitesimal rotations at the ground truth
    let mut basis: Vec<Vec<f64>> = Vec::new();
    for c in 0..3 {
        basis.push((0..n).flat_map(|_| std::array::from_fn::<f64, 3, _>(|k| f64::from(k == c))).collect());
    }
    basis.push(g.iter().flatten().copied().collect());
    for w in [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]] {
        basis.push(
            g.iter()
                .flat_map(|p| [w[1] * p[2] - w[2] * p[1], w[2] * p[0] - w[0] * p[2], w[0] * p[1] - w[1] * p[0]])
                .collect(),
        );
    }
    let mut ortho: Vec<Vec<f64>> = Vec::new();
    for mut b in basis {
        for o in &ortho {
            let k = dot(&b, o);
            b.iter_mut().zip(o).for_each(|(x, y)| *x -= k * y);
        }
        let norm = dot(&b, &b).sqrt();
        ortho.push(b.into_iter().map(|x| x / norm).collect());
    }

    let k = 12;
    let mut d = vec![0.0; 3 * n];
    d[3 * k] = 0.6;
    d[3 * k + 1] = -0.3;
    d[3 * k + 2] = 0.2;
    for o in &ortho {
        let c = dot(&d, o);
        d.iter_mut().zip(o).for_each(|(x, y)| *x -= c * y);
    }
    let len_k = dot(&d[3 * k..3 * k + 3], &d[3 * k..3 * k + 3]).sqrt();
    d.iter_mut().for_each(|x| *x *= 0.021 / len_k);

    let pred: Vec<[f64; 3]> = (0..n).map(|i| std::array::from_fn(|c| gt[i][c] + d[3 * i + c])).collect();

    // the optimal rotation is the identity, so only the closed-form scale remains
    let gg: f64 = g.iter().map(|p| dot(p, p)).sum();
    let dd = dot(&d, &d);
    let s = gg / (gg + dd);
    let oracle: Vec<f64> = (0..n)
        .map(|i| {
            let e: [f64; 3] = std::array::from_fn(|c| (s - 1.0) * g[i][c] + s * d[3 * i + c]);
            1000.0 * dot(&e, &e).sqrt()
        })
        .collect();
    let dist = aligned_distances_mm(&pred, &gt).unwrap();
    for i in 0..n {
        assert!((dist[i] - oracle[i]).abs() < 1e-6, "{i}: {} vs {}", dist[i], oracle[i]);
    }
    let mean: f64 = oracle.iter().sum::<f64>() / n as f64;
    assert!((joint_error(&pred, &gt).unwrap() - mean).abs() < 1e-6);
    let contribution = dist[k] / n as f64;
    assert!((contribution - 1.0).abs() < 0.05, "{contribution}");
}
