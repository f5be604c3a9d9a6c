//! Generates the default synthetic archive, writes it as NWQ1, and prints
//! intensity statistics plus the split sizes after filtering.
//!
//!     cargo run --example synthetic_archive -- [n_frames] [seed]

use mqnowcast::data::{read_archive, to_rate, write_archive, Dataset, DatasetManifest};

fn main() -> mqnowcast::Result<()> {
    let mut args = std::env::args().skip(1);
    let mut manifest = DatasetManifest::default();
    if let Some(n) = args.next() {
        manifest.n_frames = n.parse().expect("n_frames");
    }
    if let Some(s) = args.next() {
        manifest.seed = s.parse().expect("seed");
    }
    let archive = manifest.archive()?;
    let sph = archive.steps_per_hour();
    let values = archive.values();
    let zeros = values.iter().filter(|&&v| v == 0.0).count();
    let wet: Vec<f64> = values.iter().filter(|&&v| v > 0.0).map(|&v| to_rate(v as f64, sph)).collect();
    let dry_frames = (0..archive.n_frames()).filter(|&t| archive.frame(t).iter().all(|&v| v == 0.0)).count();
    println!("frames            {}", archive.n_frames());
    println!("fully dry frames  {:.3}", dry_frames as f64 / archive.n_frames() as f64);
    println!("zero pixels       {:.3}", zeros as f64 / values.len() as f64);
    for thr in [0.5, 10.0, 20.0] {
        let n = wet.iter().filter(|&&r| r >= thr).count();
        println!("wet >= {thr:>4} mm/h  {:.4}", n as f64 / wet.len().max(1) as f64);
    }

    let dataset = Dataset::from_archive(&manifest, &archive)?;
    let c = dataset.splits.counts();
    println!("train/val/test    {}/{}/{}", c.train, c.val, c.test);
    println!("train max         {:.3} mm/h", to_rate(dataset.stats.train_max as f64, sph));
    let test_zero = dataset.splits.test.iter().flat_map(|s| s.targets.values()).filter(|&&v| v == 0.0).count();
    let test_px: usize = dataset.splits.test.iter().map(|s| s.targets.len()).sum();
    println!("test target zeros {:.3}", test_zero as f64 / test_px as f64);

    let dir = std::env::temp_dir().join("mqnowcast-synthetic-archive");
    std::fs::create_dir_all(&dir).map_err(|e| mqnowcast::Error::Io { path: dir.clone(), source: e })?;
    let path = dir.join("archive.nwq1");
    write_archive(&archive, &path)?;
    assert_eq!(read_archive(&path)?, archive);
    dataset.manifest.save(dir.join("manifest.json"))?;
    println!("wrote             {}", path.display());
    Ok(())
}
