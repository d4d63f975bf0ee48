//! HFMF binary feature files and CSV import.
//!
//!     cargo run --example feature_files

use std::fmt::Write as _;

use hfm::data::{
    encode_feature_file, feature_file_size, generate_synthetic, read_csv_dataset, read_feature_file,
    write_feature_file, SyntheticConfig,
};

fn main() -> hfm::Result<()> {
    let dir = std::env::temp_dir().join("hfm-features");
    std::fs::create_dir_all(&dir)?;

    let ds = generate_synthetic(&SyntheticConfig {
        num_classes: 3,
        dim: 4,
        samples_per_class: 5,
        ..Default::default()
    })?;
    let path = dir.join("toy.hfmf");
    write_feature_file(&path, &ds)?;
    let back = read_feature_file(&path)?;
    println!(
        "{}: {} bytes (expected {}), roundtrip exact: {}",
        path.display(),
        std::fs::metadata(&path)?.len(),
        feature_file_size(ds.dim(), ds.num_classes(), ds.len()),
        back.features() == ds.features() && back.labels() == ds.labels() && back.prototypes() == ds.prototypes()
    );
    let bytes = encode_feature_file(&ds)?;
    println!("header bytes: {:02x?}", &bytes[..16]);

    // the same data as two CSVs: samples and prototypes, both `label,f0,..`
    let csv = |rows: &[Vec<f64>], labels: &mut dyn Iterator<Item = usize>| {
        let mut s = String::from("label");
        for i in 0..ds.dim() {
            let _ = write!(s, ",f{i}");
        }
        s.push('\n');
        for (row, l) in rows.iter().zip(labels) {
            let _ = write!(s, "{l}");
            for v in row {
                let _ = write!(s, ",{v}");
            }
            s.push('\n');
        }
        s
    };
    let samples = dir.join("samples.csv");
    let prototypes = dir.join("prototypes.csv");
    std::fs::write(&samples, csv(ds.features(), &mut ds.labels().iter().copied()))?;
    std::fs::write(&prototypes, csv(ds.prototypes(), &mut (0..ds.num_classes())))?;
    let imported = read_csv_dataset(&samples, &prototypes)?;
    println!(
        "csv import: {} samples, {} classes, features equal: {}",
        imported.len(),
        imported.num_classes(),
        imported.features() == ds.features()
    );

    std::fs::write(&path, &bytes[..bytes.len() - 3])?;
    match read_feature_file(&path) {
        Err(e) => println!("truncated file rejected: {e} (exit code {})", e.exit_code()),
        Ok(_) => println!("truncated file unexpectedly accepted"),
    }
    Ok(())
}
