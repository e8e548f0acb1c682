//! Writes and streams back an embedding file record by record.

use std::fs::File;
use std::io::BufWriter;

use nvdp::embedding_io::{generate_synthetic, read_embeddings, RecordWriter, SyntheticConfig};

fn main() -> nvdp::Result<()> {
    let records = generate_synthetic(&SyntheticConfig { n_examples: 4, d: 3, n_classes: 3, ..Default::default() })?;
    let path = std::env::temp_dir().join("nvdp-formats-example.emb");
    let mut writer = RecordWriter::embeddings(BufWriter::new(File::create(&path)?), 3)?;
    for r in &records {
        writer.write_embedding(r)?;
    }
    writer.finish()?;
    let reader = read_embeddings(&path)?;
    println!("d = {}", reader.dim());
    for r in reader {
        let r = r?;
        println!("{}: label {:?}, n = {}", r.id, r.label, r.n());
    }
    Ok(())
}
