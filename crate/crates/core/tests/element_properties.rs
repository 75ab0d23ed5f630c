use fehmm::fem::{
    affine_field, assemble, element_energy, element_internal_force, element_tangent, Kinematics,
};
use fehmm::material::{LameParams, MaterialLaw, MaterialMap};
use fehmm::mesh::{generate_structured, ElementKind, Mesh};
use nalgebra::Matrix2;
use proptest::prelude::*;

fn distorted(kind: ElementKind, jitter: &[f64]) -> Mesh {
    let (nodes, conn) = match kind {
        ElementKind::Quad4 => (
            vec![[0.0, 0.0], [2.0, 0.1], [2.2, 1.7], [-0.1, 1.5]],
            vec![0, 1, 2, 3],
        ),
        ElementKind::Tri3 => (vec![[0.0, 0.0], [2.0, 0.3], [0.4, 1.6]], vec![0, 1, 2]),
    };
    let nodes = nodes
        .iter()
        .enumerate()
        .map(|(i, x)| [x[0] + 0.2 * jitter[2 * i], x[1] + 0.2 * jitter[2 * i + 1]])
        .collect();
    let n = conn.len() / kind.nodes_per_element();
    Mesh::new(kind, nodes, conn, vec![1; n]).unwrap()
}

fn material(law: MaterialLaw) -> MaterialMap {
    MaterialMap::homogeneous(law, LameParams { lambda: 27777.78, mu: 41666.67 })
}

fn cases() -> impl Strategy<Value = (ElementKind, MaterialLaw, Kinematics, Vec<f64>, Vec<f64>)> {
    (
        prop_oneof![Just(ElementKind::Quad4), Just(ElementKind::Tri3)],
        prop_oneof![Just(MaterialLaw::NeoHookean), Just(MaterialLaw::LinearElastic)],
        prop_oneof![Just(Kinematics::Nonlinear), Just(Kinematics::Linear)],
        proptest::collection::vec(-1.0..1.0f64, 8),
        proptest::collection::vec(-0.15..0.15f64, 8),
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn tangent_matches_internal_force_derivative((kind, law, kin, jitter, d) in cases()) {
        let mesh = distorted(kind, &jitter);
        let mat = material(law);
        let d = &d[..2 * kind.nodes_per_element()];
        let Ok(k) = element_tangent(&mesh, 0, d, &mat, kin) else { return Ok(()) };
        let h = 1e-6;
        let mut worst: f64 = 0.0;
        for j in 0..d.len() {
            let mut dp = d.to_vec();
            let mut dm = d.to_vec();
            dp[j] += h;
            dm[j] -= h;
            let fp = element_internal_force(&mesh, 0, &dp, &mat, kin).unwrap();
            let fm = element_internal_force(&mesh, 0, &dm, &mat, kin).unwrap();
            for i in 0..d.len() {
                worst = worst.max(((fp[i] - fm[i]) / (2.0 * h) - k[(i, j)]).abs());
            }
        }
        prop_assert!(worst <= 1e-5 * k.norm(), "FD mismatch {worst:e} vs |k| {:e}", k.norm());
    }

    #[test]
    fn tangent_is_symmetric((kind, law, kin, jitter, d) in cases()) {
        let mesh = distorted(kind, &jitter);
        let d = &d[..2 * kind.nodes_per_element()];
        let Ok(k) = element_tangent(&mesh, 0, d, &material(law), kin) else { return Ok(()) };
        prop_assert!((&k - k.transpose()).norm() <= 1e-12 * k.norm());
    }

    #[test]
    fn internal_force_is_energy_gradient((kind, law, _kin, jitter, d) in cases()) {
        let mesh = distorted(kind, &jitter);
        let mat = material(law);
        let d = &d[..2 * kind.nodes_per_element()];
        let kin = Kinematics::Nonlinear;
        let Ok(f) = element_internal_force(&mesh, 0, d, &mat, kin) else { return Ok(()) };
        let h = 1e-6;
        for j in 0..d.len() {
            let mut dp = d.to_vec();
            let mut dm = d.to_vec();
            dp[j] += h;
            dm[j] -= h;
            let fd = (element_energy(&mesh, 0, &dp, &mat, kin).unwrap() - element_energy(&mesh, 0, &dm, &mat, kin).unwrap()) / (2.0 * h);
            let scale = f.iter().map(|v| v.abs()).fold(0.0, f64::max).max(1.0);
            prop_assert!((fd - f[j]).abs() <= 1e-5 * scale);
        }
    }

    #[test]
    fn rigid_motion_is_stress_free(kind in prop_oneof![Just(ElementKind::Quad4), Just(ElementKind::Tri3)], angle in -3.0..3.0f64, t in proptest::collection::vec(-5.0..5.0f64, 2), jitter in proptest::collection::vec(-1.0..1.0f64, 8)) {
        let mesh = distorted(kind, &jitter);
        let (c, s) = (angle.cos(), angle.sin());
        let d: Vec<f64> = mesh.nodes.iter().flat_map(|x| [c * x[0] - s * x[1] - x[0] + t[0], s * x[0] + c * x[1] - x[1] + t[1]]).collect();
        for law in [MaterialLaw::NeoHookean, MaterialLaw::LinearElastic] {
            let f = element_internal_force(&mesh, 0, &d, &material(law), Kinematics::Nonlinear).unwrap();
            prop_assert!(f.iter().all(|v| v.abs() < 1e-9 * 41666.67));
        }
    }
}

#[test]
fn patch_test_affine_field_balances_interior_nodes() {
    for kind in [ElementKind::Quad4, ElementKind::Tri3] {
        let mut mesh = generate_structured(3.0, 2.0, 3, 2, kind).unwrap();
        // move the interior nodes to make the patch irregular
        for (i, x) in mesh.nodes.iter_mut().enumerate() {
            if x[0] > 0.0 && x[0] < 3.0 && x[1] > 0.0 && x[1] < 2.0 {
                x[0] += 0.13 * (i as f64).sin();
                x[1] -= 0.11 * (i as f64).cos();
            }
        }
        let mesh = Mesh::new(kind, mesh.nodes.clone(), mesh.elements().flatten().copied().collect(), mesh.phases.clone()).unwrap();
        let a = Matrix2::new(0.02, -0.01, 0.015, -0.03);
        let d = affine_field(&mesh, [0.1, 0.2], &a, [0.0, 0.0]);
        for (law, kin) in [
            (MaterialLaw::NeoHookean, Kinematics::Nonlinear),
            (MaterialLaw::LinearElastic, Kinematics::Linear),
        ] {
            let sys = assemble(&mesh, &d, &material(law), kin, None).unwrap();
            let boundary = mesh.boundary_nodes();
            for n in 0..mesh.num_nodes() {
                if !boundary.contains(&n) {
                    assert!(sys.f_int[2 * n].abs() < 1e-9 * sys.force_scale, "{kind} node {n}");
                    assert!(sys.f_int[2 * n + 1].abs() < 1e-9 * sys.force_scale);
                }
            }
        }
    }
}

#[test]
fn assembled_tangent_is_symmetric_and_singular_by_rigid_modes() {
    let mesh = generate_structured(2.0, 1.0, 4, 2, ElementKind::Quad4).unwrap();
    let d: Vec<f64> = (0..mesh.ndof()).map(|i| 0.01 * ((i * 7 % 11) as f64 - 5.0)).collect();
    let sys = assemble(&mesh, &d, &material(MaterialLaw::NeoHookean), Kinematics::Nonlinear, None).unwrap();
    let k = sys.k.to_dense();
    assert!((&k - k.transpose()).norm() <= 1e-12 * k.norm());
    for dir in 0..2 {
        let t: Vec<f64> = (0..mesh.ndof()).map(|i| if i % 2 == dir { 1.0 } else { 0.0 }).collect();
        let kt = sys.k.mul_vec(&t);
        assert!(kt.iter().all(|v| v.abs() < 1e-9 * k.norm()));
    }
}
