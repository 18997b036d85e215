use bga_core::data::{encode_pfm, parse_pfm, read_kitti_png, read_pfm, write_kitti_png, write_pfm, DisparityMap, ValidMask};
use bga_core::error::{Error, FormatError};
use image::{ImageBuffer, Luma, Rgb};
use proptest::prelude::*;

#[test]
fn big_endian_two_by_one_fixture() {
    let mut bytes = b"Pf\n2 1\n1.0\n".to_vec();
    bytes.extend_from_slice(&[0x3F, 0xC0, 0x00, 0x00]); // 1.5
    bytes.extend_from_slice(&[0x42, 0x28, 0x00, 0x00]); // 42.0
    let pfm = parse_pfm(&bytes).unwrap();
    assert_eq!((pfm.map.height, pfm.map.width), (1, 2));
    assert_eq!(pfm.map.data, vec![1.5, 42.0]);
    assert_eq!(pfm.scale, 1.0);
}

#[test]
fn little_endian_rows_are_stored_bottom_up() {
    let mut bytes = b"Pf\n2 2\n-1.0\n".to_vec();
    for v in [3.0f32, 4.0, 1.0, 2.0] {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    let pfm = parse_pfm(&bytes).unwrap();
    assert_eq!(pfm.map.data, vec![1.0, 2.0, 3.0, 4.0]);
    assert_eq!(encode_pfm(&pfm.map), bytes);
}

#[test]
fn malformed_files_raise_distinct_errors() {
    let mut color = b"PF\n1 1\n-1.0\n".to_vec();
    color.extend_from_slice(&[0; 12]);
    assert!(matches!(parse_pfm(&color), Err(FormatError::PfmColor)));
    assert!(matches!(parse_pfm(b"P5\n1 1\n255\n\0"), Err(FormatError::PfmHeader(_))));
    assert!(matches!(parse_pfm(b"Pf\n0 1\n-1.0\n"), Err(FormatError::PfmHeader(_))));
    assert!(matches!(parse_pfm(b"Pf\n1 1\n0.0\n\0\0\0\0"), Err(FormatError::PfmHeader(_))));
    assert!(matches!(parse_pfm(b"Pf\n3"), Err(FormatError::PfmHeader(_))));
    assert!(matches!(
        parse_pfm(b"Pf\n3 1\n-1.0\n\0\0\0\0\0\0"),
        Err(FormatError::PfmTruncated { expected: 12, found: 6 })
    ));
}

#[test]
fn missing_file_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(read_pfm(dir.path().join("absent.pfm")), Err(Error::Io { .. })));
}

#[test]
fn pfm_file_round_trip_keeps_infinities() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.pfm");
    let map = DisparityMap::from_vec(2, 3, vec![0.0, 1.25, f32::INFINITY, -3.5, 1e-7, 300.0]).unwrap();
    write_pfm(&path, &map).unwrap();
    let back = read_pfm(&path).unwrap();
    assert_eq!(back.map, map);
    assert_eq!(back.scale, -1.0);
}

#[test]
fn kitti_fixture_decodes_raw_values() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("disp.png");
    let buf: ImageBuffer<Luma<u16>, Vec<u16>> = ImageBuffer::from_raw(3, 1, vec![256, 0, 12800]).unwrap();
    buf.save(&path).unwrap();
    let (map, mask) = read_kitti_png(&path).unwrap();
    assert_eq!(map.data, vec![1.0, 0.0, 50.0]);
    assert_eq!(mask.data, vec![true, false, true]);
}

#[test]
fn kitti_rejects_eight_bit_and_colour_pngs() {
    let dir = tempfile::tempdir().unwrap();
    let gray = dir.path().join("gray8.png");
    let g: ImageBuffer<Luma<u8>, Vec<u8>> = ImageBuffer::from_raw(2, 1, vec![1, 2]).unwrap();
    g.save(&gray).unwrap();
    assert!(matches!(read_kitti_png(&gray), Err(Error::Format(FormatError::KittiPng(_)))));
    let rgb = dir.path().join("rgb.png");
    let c: ImageBuffer<Rgb<u8>, Vec<u8>> = ImageBuffer::from_raw(1, 1, vec![1, 2, 3]).unwrap();
    c.save(&rgb).unwrap();
    assert!(matches!(read_kitti_png(&rgb), Err(Error::Format(FormatError::KittiPng(_)))));
}

#[test]
fn kitti_write_marks_invalid_as_zero() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("out.png");
    let map = DisparityMap::from_vec(1, 4, vec![1.0, 7.0, 0.001, f32::NAN]).unwrap();
    let mut mask = ValidMask::all(1, 4, true);
    mask.data[1] = false;
    write_kitti_png(&path, &map, &mask).unwrap();
    let (back, m) = read_kitti_png(&path).unwrap();
    assert_eq!(m.data, vec![true, false, true, false]);
    assert_eq!(back.data[0], 1.0);
    // Tiny valid values are kept valid at the smallest code.
    assert_eq!(back.data[2], 1.0 / 256.0);
}

proptest! {
    #[test]
    fn pfm_bytes_round_trip(h in 1usize..6, w in 1usize..6, seed in prop::collection::vec(-1e4f32..1e4, 36)) {
        let map = DisparityMap::from_vec(h, w, seed[..h * w].to_vec()).unwrap();
        let back = parse_pfm(&encode_pfm(&map)).unwrap();
        prop_assert_eq!(back.map, map);
    }

    #[test]
    fn kitti_quantisation_error_is_at_most_half_a_code(v in prop::collection::vec(0.01f32..250.0, 1..12)) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("q.png");
        let n = v.len();
        let map = DisparityMap::from_vec(1, n, v.clone()).unwrap();
        write_kitti_png(&path, &map, &ValidMask::all(1, n, true)).unwrap();
        let (back, mask) = read_kitti_png(&path).unwrap();
        prop_assert_eq!(mask.count(), n);
        for (a, b) in back.data.iter().zip(&v) {
            prop_assert!((a - b).abs() <= 0.5 / 256.0 + 1e-6);
        }
    }
}
