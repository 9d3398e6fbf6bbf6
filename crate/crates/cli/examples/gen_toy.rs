//! Regenerate the bundled synthetic task under configs/toy/.
//!
//! Usage: cargo run -p promptcl-cli --example gen_toy [dir] [n_per_class]

use promptcl::data::{synth, write_tsv};

fn main() {
    let mut args = std::env::args().skip(1);
    let dir = args.next().unwrap_or_else(|| "configs/toy".to_string());
    let n: usize = args
        .next()
        .map(|s| s.parse().expect("n_per_class must be an integer"))
        .unwrap_or(120);

    std::fs::create_dir_all(&dir).expect("create output dir");
    let train = synth::linearly_separable(n, 1);
    let test = synth::linearly_separable(n / 4, 2);
    write_tsv(&train, format!("{dir}/train.tsv")).expect("write train.tsv");
    write_tsv(&test, format!("{dir}/test.tsv")).expect("write test.tsv");
    std::fs::write(format!("{dir}/templates.tsv"), synth::toy_templates())
        .expect("write templates");
    std::fs::write(format!("{dir}/verbalizer.tsv"), synth::toy_verbalizer())
        .expect("write verbalizer");
    println!(
        "wrote {} train and {} test examples plus templates/verbalizer to {dir}",
        train.len(),
        test.len()
    );
}
