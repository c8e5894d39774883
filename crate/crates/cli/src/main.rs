// SPDX-License-Identifier: Apache-2.0

use std::process::ExitCode;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("AFDXNOC_LOG", "warn")).init();
    let code = afdxnoc_cli::main_with_args(std::env::args_os());
    ExitCode::from(code as u8)
}
