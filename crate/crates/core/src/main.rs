use std::io::{self, Write};
use std::process;

fn main() {
    let env_seed = std::env::var(lexforge::cli::SEED_ENV).ok();
    let stdout = io::stdout();
    let stderr = io::stderr();
    let mut out = stdout.lock();
    let code = lexforge::cli::run(std::env::args_os(), env_seed.as_deref(), &mut out, &mut stderr.lock());
    let _ = out.flush();
    process::exit(code);
}
