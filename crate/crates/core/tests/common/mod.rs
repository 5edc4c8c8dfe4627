//! Shared fixture: a small two-task CSV corpus and a run config, written
//! into a test-owned directory.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const POSITIVE_CUES: [&str; 5] = ["great", "lovely", "wonderful", "happy", "nice"];
pub const NEGATIVE_CUES: [&str; 5] = ["awful", "terrible", "sad", "angry", "bad"];

/// Write `rows` two-class CSV rows where a cue word decides the label.
pub fn write_csv(path: &Path, labels: [&str; 2], rows: usize, seed: u64) {
    let filler = ["the", "day", "was", "really", "so", "very", "quite", "show"];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = String::from("text,label\n");
    for i in 0..rows {
        let label = labels[i % 2];
        let pool = if i % 2 == 0 { &POSITIVE_CUES } else { &NEGATIVE_CUES };
        let mut words = vec![pool[rng.gen_range(0..pool.len())]];
        for _ in 0..3 {
            words.push(filler[rng.gen_range(0..filler.len())]);
        }
        out.push_str(&format!("{},{label}\n", words.join(" ")));
    }
    fs::write(path, out).unwrap();
}

/// Lay out sentiment + emotion CSVs and a config under `dir`; returns the
/// config path. `output_dir` is relative to the config file.
pub fn write_fixture(dir: &Path, mode: &str, epochs: usize, output_dir: &str) -> PathBuf {
    write_csv(&dir.join("sentiment.csv"), ["positive", "negative"], 60, 7);
    write_csv(&dir.join("emotion.csv"), ["joy", "anger"], 60, 8);
    let config = format!(
        r#"
output_dir = "{output_dir}"

[encoder]
d_model = 16
n_heads = 2
d_ff = 32
n_layers = 1
max_seq_len = 8
dropout = 0.0

[training]
mode = "{mode}"
epochs = {epochs}
batch_size = 8
learning_rate = 0.001
seed = 11

[[tasks]]
name = "sentiment"
role = "main"
label_names = ["positive", "negative"]
data = "sentiment.csv"

[[tasks]]
name = "emotion"
role = "auxiliary"
label_names = ["joy", "anger"]
data = "emotion.csv"
"#
    );
    let config_path = dir.join(format!("run_{mode}.toml"));
    fs::write(&config_path, config).unwrap();
    config_path
}
