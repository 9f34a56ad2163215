use cos3d::geometry::{
    frustum_status, project_box, truncation_estimate, visibility_estimate, wrap_angle, Box3D, CameraIntrinsics, FrustumStatus,
    NormBox, Occupant, Rect, Rotation,
};
use cos3d::iou3d::iou3d_exact;
use cos3d::linalg::Vec3;
use proptest::prelude::*;
use std::f64::consts::PI;

fn cam() -> CameraIntrinsics<f64> {
    CameraIntrinsics::new(720.0, 720.0, 620.0, 190.0, 1242, 375).unwrap()
}

fn angles() -> impl Strategy<Value = [f64; 3]> {
    [-PI..PI, -PI..PI, -PI..PI]
}

fn boxes() -> impl Strategy<Value = Box3D<f64>> {
    ([-30.0..30.0, -5.0..5.0, -10.0..60.0], [0.1..8.0, 0.1..4.0, 0.1..12.0], angles())
        .prop_map(|(c, d, a)| Box3D::new(Vec3(c), Vec3(d), Rotation::from_euler_zyx(a).unwrap()))
}

proptest! {
    #[test]
    fn euler_views_rebuild_the_matrix(a in angles()) {
        let r = Rotation::from_euler_zyx(a).unwrap();
        let from_euler = Rotation::from_euler_zyx(r.euler_zyx()).unwrap();
        let from_unit = Rotation::from_euler_unit(r.euler_unit()).unwrap();
        let from_sincos = Rotation::from_sin_cos_unit(r.sin_cos_unit()).unwrap();
        for other in [from_euler, from_unit, from_sincos] {
            prop_assert!(r.matrix().max_abs_diff(other.matrix()) < 1e-9);
        }
        prop_assert!(r.euler_unit().iter().all(|u| (0.0..1.0).contains(u)));
    }

    #[test]
    fn yaw_round_trips(theta in -PI..PI) {
        let r = Rotation::about_up(theta);
        let back = r.yaw_about_up().unwrap();
        prop_assert!(wrap_angle(back - theta).abs() < 1e-9);
    }

    #[test]
    fn f32_tracks_f64(b in boxes(), c in boxes()) {
        let wide = iou3d_exact(&b, &c).unwrap_or(0.0);
        let narrow = iou3d_exact(&b.cast::<f32>(), &c.cast::<f32>()).unwrap_or(0.0);
        prop_assert!((wide - f64::from(narrow)).abs() < 1e-3, "{wide} vs {narrow}");
    }

    #[test]
    fn projections_and_estimates_stay_in_range(b in boxes()) {
        let cam = cam();
        let status = frustum_status(&b, &cam);
        let t = truncation_estimate(&b, &cam);
        prop_assert!((0.0..=1.0).contains(&t));
        match project_box(&b, &cam) {
            Ok(p) => {
                prop_assert!(status != FrustumStatus::BehindCamera);
                prop_assert!(cam.image_rect().contains_rect(&p.clipped.pixel) || p.clipped.pixel.area() == 0.0);
                prop_assert!(p.clipped.norm.is_valid());
                if status == FrustumStatus::Inside {
                    prop_assert_eq!(t, 0.0);
                }
            }
            Err(_) => prop_assert_eq!(status, FrustumStatus::BehindCamera),
        }
    }

    #[test]
    fn visibility_is_a_fraction(rects in prop::collection::vec(([0.0..1000.0, 0.0..300.0], [1.0..400.0, 1.0..200.0], 1.0..50.0), 1..8)) {
        let occ: Vec<Occupant<f64>> = rects
            .iter()
            .map(|([x, y], [w, h], d)| Occupant { depth: *d, rect: Rect::new(*x, *y, x + w, y + h) })
            .collect();
        for (i, target) in occ.iter().enumerate() {
            let others: Vec<_> = occ.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, o)| *o).collect();
            let v = visibility_estimate(target, &others);
            prop_assert!((0.0..=1.0).contains(&v));
            let nearest = occ.iter().all(|o| o.depth >= target.depth);
            if nearest {
                prop_assert_eq!(v, 1.0);
            }
        }
    }

    #[test]
    fn normalized_boxes_are_within_half_a_grid_step(x in 0.0f64..1242.0, y in 0.0f64..375.0, w in 0.0f64..600.0, h in 0.0f64..200.0) {
        let cam = cam();
        let r = Rect::new(x, y, (x + w).min(1242.0), (y + h).min(375.0));
        let back = NormBox::quantize(&r, &cam).dequantize(&cam);
        let (sx, sy) = (1242.0 / 2000.0 + 1e-9, 375.0 / 2000.0 + 1e-9);
        prop_assert!((back.xmin - r.xmin).abs() <= sx && (back.xmax - r.xmax).abs() <= sx);
        prop_assert!((back.ymin - r.ymin).abs() <= sy && (back.ymax - r.ymax).abs() <= sy);
    }
}
