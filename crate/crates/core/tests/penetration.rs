mod common;

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use common::parity;
use handfit::dual::Dual;
use handfit::metrics::penetration_rate;
use handfit::penetration::*;
use handfit::hand_model::Theta;
use handfit::{forward_kinematics, HandShapeModel, NUM_POSE_JOINTS};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

const INDEX_NODES: [usize; 3] = [4, 5, 6];
const THUMB_NODES: [usize; 3] = [1, 2, 3];

fn zero_theta() -> Theta<f64> {
    [[0.0; 3]; NUM_POSE_JOINTS]
}

/// Index finger curled past its limits so the tip passes into the palm.
fn pierce_theta() -> Theta<f64> {
    let mut t = zero_theta();
    t[3][0] = 120f64.to_radians();
    t[4][0] = 120f64.to_radians();
    t[5][0] = 90f64.to_radians();
    t
}

/// Middle finger splayed into the ring finger until the skins just meet.
fn contact_theta() -> Theta<f64> {
    let mut t = zero_theta();
    t[3][1] = 10f64.to_radians();
    t[6][1] = -10f64.to_radians();
    t
}

fn posed(model: &HandShapeModel<f64>, theta: &Theta<f64>) -> Vec<[f64; 3]> {
    forward_kinematics(model, theta, &[0.0; 10]).vertices
}

fn dominant_node(model: &HandShapeModel<f64>, v: u32) -> usize {
    let w = &model.skinning_weights()[v as usize];
    (0..w.len()).max_by(|&a, &b| w[a].total_cmp(&w[b])).unwrap()
}

#[test]
fn winding_matches_ray_parity_on_posed_meshes() {
    let model = common::model();
    let faces = model.faces();
    let mut rng = StdRng::seed_from_u64(3);
    let (mut compared, mut agree) = (0usize, 0usize);
    for rec in common::samples(&model, 2, "clean", 11) {
        let verts = rec.ground_truth.unwrap().vertices;
        let (lo, hi) = bounds(&verts);
        let queries: Vec<[f64; 3]> = (0..500)
            .map(|i| {
                if i % 2 == 0 {
                    std::array::from_fn(|c| rng.random_range(lo[c] - 0.01..hi[c] + 0.01))
                } else {
                    let p = verts[rng.random_range(0..verts.len())];
                    std::array::from_fn(|c| p[c] + rng.random_range(-0.006..0.006))
                }
            })
            .collect();
        let w = winding_numbers(&verts, faces, &queries);
        for (q, w) in queries.iter().zip(w) {
            if (w - INSIDE_THRESHOLD).abs() < parity::SURFACE_BAND {
                continue;
            }
            compared += 1;
            agree += usize::from((w > INSIDE_THRESHOLD) == parity::inside(&verts, faces, *q));
        }
    }
    assert!(compared > 900, "{compared}");
    assert!(agree as f64 >= 0.999 * compared as f64, "{agree}/{compared}");
}

fn bounds(verts: &[[f64; 3]]) -> ([f64; 3], [f64; 3]) {
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for p in verts {
        for c in 0..3 {
            lo[c] = lo[c].min(p[c]);
            hi[c] = hi[c].max(p[c]);
        }
    }
    (lo, hi)
}

/// Geodesic distances from `src` over the rest-pose edge graph.
fn dijkstra(model: &HandShapeModel<f64>, src: usize) -> Vec<f64> {
    let verts = model.template_vertices();
    let mut adj = vec![Vec::new(); verts.len()];
    for f in model.faces() {
        for k in 0..3 {
            let (a, b) = (f[k] as usize, f[(k + 1) % 3] as usize);
            let w = (0..3).map(|c| (verts[a][c] - verts[b][c]).powi(2)).sum::<f64>().sqrt();
            adj[a].push((b, w));
            adj[b].push((a, w));
        }
    }
    let mut dist = vec![f64::INFINITY; verts.len()];
    dist[src] = 0.0;
    let mut heap = BinaryHeap::from([Reverse((0u64, src))]);
    while let Some(Reverse((bits, v))) = heap.pop() {
        let d = f64::from_bits(bits);
        if d > dist[v] {
            continue;
        }
        for &(u, w) in &adj[v] {
            if d + w < dist[u] {
                dist[u] = d + w;
                heap.push(Reverse(((d + w).to_bits(), u)));
            }
        }
    }
    dist
}

#[test]
fn mask_matches_exhaustive_dijkstra() {
    let model = common::model();
    let mask = build_neighbor_mask(&model, DEFAULT_RADIUS);
    let thumb: Vec<u32> = (0..model.num_vertices() as u32)
        .filter(|&v| THUMB_NODES.contains(&dominant_node(&model, v)))
        .collect();
    let index: Vec<u32> = (0..model.num_vertices() as u32)
        .filter(|&v| INDEX_NODES.contains(&dominant_node(&model, v)))
        .collect();
    let mut rng = StdRng::seed_from_u64(5);
    for _ in 0..5 {
        let v = thumb[rng.random_range(0..thumb.len())] as usize;
        let dist = dijkstra(&model, v);
        for (u, &d) in dist.iter().enumerate() {
            // skip distances within rounding of the radius
            if (d - DEFAULT_RADIUS).abs() > 1e-9 {
                assert_eq!(mask.contains(v, u), d < DEFAULT_RADIUS, "{v} {u} {d}");
            }
        }
        for &u in &index {
            assert!(dist[u as usize] > DEFAULT_RADIUS);
            assert!(!mask.contains(v, u as usize));
        }
    }
}

#[test]
fn pierce_pose_has_deep_fingertip_members() {
    let model = common::model();
    let mask = build_neighbor_mask(&model, DEFAULT_RADIUS);
    let faces = model.faces();
    let verts = posed(&model, &pierce_theta());
    let set = interior_vertices(&verts, faces, &mask);
    assert!(!set.is_empty());
    assert!(set.members.iter().any(|m| dominant_node(&model, m.vertex) == INDEX_NODES[2]));
    assert!(set.max_depth() > DEFAULT_D_TOL, "{}", set.max_depth());
    assert!(penetration_depth(&verts, faces, &mask) > DEFAULT_D_TOL);
    assert!(non_penetration_loss(&set, DEFAULT_D_TOL) > 0.0);

    // fingertip members lie inside the surface formed by the faces outside their masks
    let mut tips = 0;
    for m in set.members.iter().filter(|m| dominant_node(&model, m.vertex) == INDEX_NODES[2]) {
        let v = m.vertex as usize;
        let others: Vec<[u32; 3]> =
            faces.iter().copied().filter(|f| f.iter().all(|&u| !mask.contains(v, u as usize))).collect();
        assert!(parity::inside(&verts, &others, verts[v]), "vertex {v} winding {}", m.winding);
        tips += 1;
    }
    assert!(tips > 0);
}

#[test]
fn contact_pose_stays_within_tolerance() {
    let model = common::model();
    let mask = build_neighbor_mask(&model, DEFAULT_RADIUS);
    let verts = posed(&model, &contact_theta());
    let set = interior_vertices(&verts, model.faces(), &mask);
    assert!(!set.is_empty(), "pose should touch");
    for m in &set.members {
        assert!(m.depth <= DEFAULT_D_TOL, "{m:?}");
    }
    assert_eq!(non_penetration_loss(&set, DEFAULT_D_TOL), 0.0);
    assert!(penetration_depth(&verts, model.faces(), &mask) <= DEFAULT_D_TOL);
}

#[test]
fn segment_broad_phase_is_a_subset() {
    let model = common::model();
    let index = PenetrationIndex::new(&model, DEFAULT_RADIUS, DEFAULT_WINDING_THRESHOLD);
    for theta in [zero_theta(), pierce_theta(), contact_theta()] {
        let (verts, art) = posed_for_contact(&model, &theta, &[0.0; 10]);
        let fast = index.interior(&verts, &art, BroadPhase::Segments);
        let full = index.interior(&verts, &art, BroadPhase::Exhaustive);
        assert_eq!(full.vertices(), interior_vertices(&verts, index.faces(), index.mask()).vertices());
        assert!(fast.members.iter().all(|m| full.members.contains(m)));
        if theta == pierce_theta() {
            // the fingertip is not adjacent to the palm, so its depth is still found
            assert!(fast.max_depth() > DEFAULT_D_TOL);
        } else {
            assert_eq!(fast, full);
        }
    }
}

#[test]
fn loss_gradient_pulls_deep_vertices_out() {
    let model = common::model();
    let mask = build_neighbor_mask(&model, DEFAULT_RADIUS);
    let verts = posed(&model, &pierce_theta());
    let set = interior_vertices(&verts, model.faces(), &mask);
    let deep = set.members.iter().filter(|m| m.depth > DEFAULT_D_TOL + 1e-3);
    let mut checked = 0;
    for m in deep {
        let v = m.vertex;
        let loss = |p: [f64; 3]| {
            non_penetration_loss_at(&set, DEFAULT_D_TOL, |u| if u == v { p } else { verts[u as usize] })
        };
        let h = 1e-7;
        let fd: [f64; 3] = std::array::from_fn(|c| {
            let (mut a, mut b) = (verts[v as usize], verts[v as usize]);
            a[c] += h;
            b[c] -= h;
            (loss(a) - loss(b)) / (2.0 * h)
        });
        let dual = non_penetration_loss_at(&set, DEFAULT_D_TOL, |u| {
            let p = verts[u as usize];
            if u == v {
                std::array::from_fn(|c| Dual::<f64, 3>::variable(p[c], c))
            } else {
                p.map(Dual::constant)
            }
        });
        for c in 0..3 {
            assert!((dual.gradient()[c] - fd[c]).abs() < 1e-6, "{c} {} {}", dual.gradient()[c], fd[c]);
        }
        // descent moves the vertex toward the nearest surface point outside its mask
        let to_surface: [f64; 3] = std::array::from_fn(|c| verts[m.partner as usize][c] - verts[v as usize][c]);
        let norm = |x: [f64; 3]| x.iter().map(|a| a * a).sum::<f64>().sqrt();
        let cos = -(0..3).map(|c| fd[c] * to_surface[c]).sum::<f64>() / (norm(fd) * norm(to_surface));
        assert!(cos > 0.99, "{cos}");
        checked += 1;
    }
    assert!(checked > 0);
}

#[test]
fn hinge_is_continuous_with_one_sided_derivatives() {
    let set = InteriorSet {
        members: vec![InteriorVertex { vertex: 0, winding: 1.0, depth: DEFAULT_D_TOL, partner: 1 }],
    };
    let partner = [0.0, 0.0, 0.0];
    let at = |r: f64| non_penetration_loss_at(&set, DEFAULT_D_TOL, |u| if u == 0 { [r, 0.0, 0.0] } else { partner });
    let dual_at = |r: f64| {
        non_penetration_loss_at(&set, DEFAULT_D_TOL, |u| {
            if u == 0 {
                [Dual::<f64, 1>::variable(r, 0), Dual::constant(0.0), Dual::constant(0.0)]
            } else {
                partner.map(Dual::constant)
            }
        })
        .gradient()[0]
    };
    let h = 1e-7;
    assert_eq!(at(DEFAULT_D_TOL), 0.0);
    assert!(at(DEFAULT_D_TOL + h) < 2.0 * h);
    let right = (at(DEFAULT_D_TOL + h) - at(DEFAULT_D_TOL)) / h;
    let left = (at(DEFAULT_D_TOL) - at(DEFAULT_D_TOL - h)) / h;
    assert!((right - 1.0).abs() < 1e-6, "{right}");
    assert!(left.abs() < 1e-12, "{left}");
    assert!((dual_at(DEFAULT_D_TOL + 1e-4) - right).abs() < 1e-6);
    assert!((dual_at(DEFAULT_D_TOL - 1e-4) - left).abs() < 1e-12);
    let kink = dual_at(DEFAULT_D_TOL);
    assert!(kink == 0.0 || kink == 1.0, "{kink}");
}

#[test]
fn one_pierce_in_four_gives_a_quarter() {
    let model = common::model();
    let mask = build_neighbor_mask(&model, DEFAULT_RADIUS);
    let mut small = zero_theta();
    small[6][0] = 0.4;
    let meshes = vec![
        posed(&model, &pierce_theta()),
        posed(&model, &zero_theta()),
        posed(&model, &contact_theta()),
        posed(&model, &small),
    ];
    let rate = |d_tol| penetration_rate(&meshes, model.faces(), &mask, DEFAULT_WINDING_THRESHOLD, d_tol);
    assert_eq!(rate(DEFAULT_D_TOL), 25.0);
    assert_eq!(rate(f64::INFINITY), 0.0);
}
