use gtsp_core::training::{train, TrainConfig};

fn main() {
    let seed: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(7);
    let variant = std::env::args().nth(2).unwrap_or_else(|| "full".into());
    let mut config = TrainConfig::desk(seed);
    match variant.as_str() {
        "full" => {}
        "nofusion" => config.policy.disable_fusion = true,
        "noimage" => config.policy.disable_image = true,
        other => panic!("unknown variant {other}"),
    }
    let outcome = train(&config).unwrap();
    let last = outcome.log.records.last().unwrap();
    println!("{variant} seed {seed}: final val {:.6}", last.val_cost);
}
