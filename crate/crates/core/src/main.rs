// SPDX-License-Identifier: MIT OR Apache-2.0

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    std::process::exit(molsae::cli::run(std::env::args_os()));
}
