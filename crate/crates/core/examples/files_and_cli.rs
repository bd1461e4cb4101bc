//! Dataset and checkpoint files, driven through the command-line entry point.
//!
//! `cargo run --release --example files_and_cli`

use proprio::cli::{read_dataset, run_command, Checkpoint};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::temp_dir().join("proprio-files-example");
    let path = |name: &str| dir.join(name).to_string_lossy().into_owned();
    let config = path("run.toml");
    std::fs::create_dir_all(&dir)?;
    std::fs::write(&config, "seed = 3\n[env]\nepisode_length = 30\n[model]\ncore_hidden_size = 16\ntrain_steps = 20\nbatch_size = 4\novershoot_length = 4\n")?;

    let runs: [&[&str]; 4] = [
        &["collect-passive", "--episodes", "12", "--out", &path("passive.ndjson")],
        &["collect-random", "--kind", "cor", "--episodes", "12", "--out", &path("cor.ndjson")],
        &["train", "--data", &path("passive.ndjson"), "--data", &path("cor.ndjson"), "--out", &path("model.json"), "--losses", &path("train.csv")],
        &["probe", "--task", "shape", "--model", "preco", "--ckpt", &path("model.json"), "--data", &path("passive.ndjson"), "--out", &path("preco.csv")],
    ];
    for args in runs {
        let argv = std::iter::once("proprio").chain(args.iter().copied()).chain(["--config", &config]);
        let code = run_command(argv);
        println!("proprio {} -> exit {code}", args[0]);
    }
    println!("unknown flag -> exit {}", run_command(["proprio", "gradcheck", "--fast"]));

    let data = read_dataset(dir.join("passive.ndjson").as_path())?;
    println!("read {} episodes of length {}", data.episodes.len(), data.env.episode_length);
    let header = std::fs::read_to_string(dir.join("passive.ndjson"))?.lines().next().unwrap_or_default().chars().take(120).collect::<String>();
    println!("header: {header}...");
    let ck = Checkpoint::read(dir.join("model.json").as_path())?;
    println!("checkpoint: {} arrays, {} scalars, env hash {}", ck.params.len(), ck.params.num_scalars(), &ck.env_hash[..12]);
    Ok(())
}
