use std::path::Path;

use proptest::prelude::*;

use patternnet::geometry::io::{decode_native, encode_native, parse_ply, parse_xyz, write_ply, write_xyz};
use patternnet::geometry::PointCloud;

/// Minimal reader for the exact layout `write_ply` emits, written without the
/// library's header machinery.
fn oracle_ply(text: &str) -> (Vec<[f64; 3]>, Option<Vec<usize>>) {
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("ply"));
    let mut count = 0;
    let mut has_part = false;
    for line in lines.by_ref() {
        if let Some(n) = line.strip_prefix("element vertex ") {
            count = n.parse().unwrap();
        }
        has_part |= line == "property int part";
        if line == "end_header" {
            break;
        }
    }
    let mut pts = Vec::new();
    let mut parts = Vec::new();
    for line in lines.take(count) {
        let v: Vec<&str> = line.split(' ').collect();
        pts.push([v[0].parse().unwrap(), v[1].parse().unwrap(), v[2].parse().unwrap()]);
        if has_part {
            parts.push(v[3].parse().unwrap());
        }
    }
    (pts, has_part.then_some(parts))
}

fn coords() -> impl Strategy<Value = Vec<[f64; 3]>> {
    prop::collection::vec(prop::array::uniform3(-1e3f64..1e3), 1..64)
}

proptest! {
    #[test]
    fn ply_matches_independent_reader(points in coords(), with_parts in any::<bool>()) {
        let mut cloud = PointCloud::new(points).unwrap();
        if with_parts {
            let parts = (0..cloud.len()).map(|i| i % 5).collect();
            cloud = cloud.with_parts(parts).unwrap();
        }
        let text = write_ply(&cloud);
        let (pts, parts) = oracle_ply(&text);
        let parsed: PointCloud<f64> = parse_ply(&text, Path::new("t.ply")).unwrap();
        prop_assert_eq!(&parsed.points, &pts);
        prop_assert_eq!(&parsed.part_labels, &parts);
        prop_assert_eq!(&parsed.points, &cloud.points);
    }

    #[test]
    fn xyz_round_trip_is_exact(points in coords()) {
        let cloud = PointCloud::new(points).unwrap();
        let back: PointCloud<f64> = parse_xyz(&write_xyz(&cloud), Path::new("t.xyz")).unwrap();
        prop_assert_eq!(back.points, cloud.points);
    }

    #[test]
    fn native_round_trip_keeps_f32_values(points in coords(), class in prop::option::of(0usize..40)) {
        let mut cloud = PointCloud::new(points).unwrap().cast::<f32>();
        cloud.class_label = class;
        let bytes = encode_native(&cloud).unwrap();
        let back: PointCloud<f32> = decode_native(&bytes, Path::new("t.pnpc")).unwrap();
        prop_assert_eq!(&back.points, &cloud.points);
        prop_assert_eq!(back.class_label, class);
        prop_assert_eq!(encode_native(&back).unwrap(), bytes);
    }
}

#[test]
fn ply_with_extra_elements_and_properties() {
    let text = "ply\nformat ascii 1.0\ncomment made by hand\nelement vertex 2\nproperty float nx\nproperty float x\n\
                property float y\nproperty float z\nelement face 1\nproperty list uchar int vertex_indices\nend_header\n\
                9 1 2 3\n9 4 5 6\n3 0 1 1\n";
    let c: PointCloud<f64> = parse_ply(text, Path::new("f.ply")).unwrap();
    assert_eq!(c.points, vec![[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]]);
}

#[test]
fn malformed_inputs_are_rejected() {
    assert!(parse_xyz::<f64>("1 2\n", Path::new("a.xyz")).is_err());
    assert!(parse_xyz::<f64>("1 2 x\n", Path::new("a.xyz")).is_err());
    assert!(parse_xyz::<f64>("# only a comment\n", Path::new("a.xyz")).is_err());
    assert!(parse_ply::<f64>("ply\nformat binary_little_endian 1.0\nend_header\n", Path::new("a.ply")).is_err());
    assert!(parse_ply::<f64>("ply\nformat ascii 1.0\nelement vertex 3\nproperty float x\nproperty float y\nproperty float z\nend_header\n0 0 0\n", Path::new("a.ply")).is_err());
    assert!(decode_native::<f32>(b"PNPC\x09\0\0\0", Path::new("a.pnpc")).is_err());
}
