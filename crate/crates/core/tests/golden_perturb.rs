//! Golden pins for the distortion outputs: fixed input, fixed seeds, frozen
//! SHA-256 of the serialized PPM. Any change to the sampling stream, kernel
//! layout, warp, or byte mapping shows up here.

use leica_core::perturb::{distort_image, DistortKind, DistortionSpec};
use leica_core::ImageTensor;
use sha2::{Digest, Sha256};

fn fixture_image() -> ImageTensor {
    ImageTensor::from_fn(24, 24, |y, x| {
        [
            (y as f32 * 10.0 % 255.0) / 255.0,
            (x as f32 * 17.0 % 255.0) / 255.0,
            ((x * y) as f32 % 255.0) / 255.0,
        ]
    })
    .unwrap()
}

fn ppm_sha(img: &ImageTensor) -> String {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("img.ppm");
    img.write_ppm(&path).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    hex(&hasher.finalize())
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[test]
fn distortion_outputs_match_frozen_hashes() {
    let img = fixture_image();
    let cases: [(DistortKind, f64); 7] = [
        (DistortKind::Gn, 0.05),
        (DistortKind::Gb, 1.5),
        (DistortKind::Spn, 0.25),
        (DistortKind::Mirror, 3.0),
        (DistortKind::GnPlus, 0.05),
        (DistortKind::GbPlus, 1.5),
        (DistortKind::SpnPlus, 0.25),
    ];
    let expected: [&str; 7] = [
        "6f51804d692026463d7c0f066d34c0584d98c580cf6fd8693eaff50ceb1f4128",
        "a2989e67b9ccee041305d23d8c7450c0a9090c0fcf35abf1d1ef6e5cb1a3ca06",
        "53730539002d5c086791ea5209197860c3c92e73d81c56c9e4823e2bfb906ec3",
        "80702ee3f42f06b7935af1cd80ddd2e0ae8e739f95a40c2dfac69eeed13da044",
        "359172ed123b5df59a35f5fa5f2975affdcd802526fbae7a3ed6aeae78bbc394",
        "286a1306e457c930cdcb3b71a384d29662869e9c61c9cb61daf603c3fa78f1cd",
        "23ea3ce9a96f2bbec2359ceef4a25cb127a61675871a988282b4a5683a0bfd9e",
    ];
    for ((kind, degree), want) in cases.iter().zip(&expected) {
        let out = distort_image(&img, &DistortionSpec { kind: *kind, degree: *degree, seed: 2024 }).unwrap();
        let got = ppm_sha(&out);
        assert_eq!(&got, want, "kind {} degree {degree}", kind.name());
    }
}
