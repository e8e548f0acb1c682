//! Projects embedding sequences to posteriors and writes one released
//! sample per record.

use nvdp::embedding_io::{generate_synthetic, load_sanitized, write_sanitized, SyntheticConfig};
use nvdp::network::{ModelParams, STREAM_INIT};
use nvdp::pipeline::sanitize_records;
use nvdp::posterior::PriorParams;
use nvdp::sampling::RngState;

fn main() -> nvdp::Result<()> {
    let records = generate_synthetic(&SyntheticConfig { n_examples: 5, ..Default::default() })?;
    let params = ModelParams::init(8, 2, 2, &mut RngState::new(0, STREAM_INIT))?;
    let released = sanitize_records(&records, &params, &PriorParams::standard(8), 42)?;
    let dir = std::env::temp_dir().join("nvdp-sanitize-example");
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("released.nvs");
    write_sanitized(&path, 8, &released)?;
    for r in load_sanitized(&path)?.1 {
        let weights: Vec<String> = r.sample.pi.iter().map(|p| format!("{p:.3}")).collect();
        println!("{}: m = {}, π = [{}]", r.id, r.sample.m(), weights.join(", "));
    }
    Ok(())
}
