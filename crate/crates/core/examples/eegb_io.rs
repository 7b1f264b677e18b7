//! Write and read EEGB v1 recordings, and import a CSV fixture.

use ega::signal::io;
use ega::signal::Recording;

fn main() -> ega::Result<()> {
    let dir = std::env::temp_dir().join("ega_io_demo");
    std::fs::create_dir_all(&dir).unwrap();

    let rec = Recording::new(
        vec!["Fp1".into(), "Cz".into(), "O2".into()],
        256.0,
        vec![vec![0.25; 512], vec![-1.5; 512], vec![3.0; 512]],
        Some(0),
        "subject-7",
    )?;
    let path = dir.join("subject-7.eegb");
    io::write_eegb(&path, &rec)?;
    let back = io::read_eegb(&path)?;
    println!("{}: {} bytes, round trip equal: {}", path.display(), std::fs::metadata(&path).unwrap().len(), back == rec);

    let csv = dir.join("fixture.csv");
    std::fs::write(&csv, "time,Fp1,Cz\n0.000,1.0,2.0\n0.004,1.5,2.5\n0.008,2.0,3.0\n").unwrap();
    let r = io::read_csv(&csv, 250.0, Some(1), "fixture")?;
    println!("csv: channels {:?}, {} samples, Cz = {:?}", r.channel_names, r.len(), r.samples[1]);
    Ok(())
}
